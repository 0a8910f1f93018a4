"""Scientific diagnostics: ensemble moment convergence, Lie-algebra
controllability rank, parameter-count bounds, perturbation robustness,
and runtime scaling.

Moment estimation streams independent sample pairs in fixed-size batches
from spawned RNG substreams; the reduction uses compensated summation so
the result is independent of how batches are grouped or ordered.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels as kernels
from . import tolerances as tol
from .errors import (ConstraintViolation, DimensionTooLarge, OrderUnsupported,
                     UnsupportedSequence)
from .fom import FigureOfMerit
from .hamiltonians import ControlSystem, random_ising
from .optimizers import OptimizerConfig, quasi_newton
from .pulses import PropagatorCache, PulseSequence
from .qcore import basis_state, ghz_state, haar_unitaries, hs_norm

# moment convergence ----------------------------------------------------


@dataclass(frozen=True)
class MomentEstimate:
    """Monte-Carlo estimate of the order-t frame potential."""

    t: int
    value: float
    delta: float
    n_pairs: int
    sigma_t: float
    plateau: float

    def csv_row(self) -> dict:
        return {"t": self.t, "value": self.value, "delta": self.delta,
                "n_pairs": self.n_pairs, "sigma_t": self.sigma_t,
                "plateau": self.plateau}


def haar_sampler(dim: int) -> Callable:
    """Batched Haar sampler: f(rng, size) -> (size, dim, dim)."""

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return haar_unitaries(dim, size, rng)

    return sample


def constant_sampler(matrix: np.ndarray) -> Callable:
    """Degenerate ensemble that always returns the given matrix."""
    matrix = np.asarray(matrix, dtype=complex)

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.broadcast_to(matrix, (size,) + matrix.shape)

    return sample


def rally_t_sampler(sys: ControlSystem, n_layers: int, layer_size: int,
                    duration_range: Tuple[float, float] = (0.0, 10.0)
                    ) -> Callable:
    """Random-layer ensemble: fresh amplitude draws from the system domain
    and layer durations uniform over duration_range for every sample."""
    lo, hi = duration_range

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        k = n_layers * layer_size
        u = sys.amplitude_domain.sample(rng, (size, k))
        taus = rng.uniform(lo, hi, (size, n_layers))
        s = np.repeat(taus / layer_size, layer_size, axis=1)
        return kernels.chain_fresh_batch(sys.drift, sys.control, u, s)

    return sample


def fixed_amplitude_sampler(sys: ControlSystem, seq_template: PulseSequence,
                            duration_range: Tuple[float, float] = (0.0, 10.0)
                            ) -> Callable:
    """Ensemble with the template's frozen amplitudes; only layer durations
    are sampled. Eigendecompositions are done once up front."""
    if seq_template.kind != "rally_t":
        raise UnsupportedSequence("fixed-amplitude ensemble needs rally_t")
    lo, hi = duration_range
    cache = PropagatorCache(sys)
    vs, lams = cache.stack(seq_template.pulse_amplitudes())
    n_layers, layer_size = seq_template.n_layers, seq_template.layer_size

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        taus = rng.uniform(lo, hi, (size, n_layers))
        s = np.repeat(taus / layer_size, layer_size, axis=1)
        return kernels.chain_cached_batch(vs, lams, s)

    return sample


def _check_order(t: int, dim: Optional[int] = None):
    if not 1 <= t <= 4:
        raise OrderUnsupported(
            f"order {t} outside 1..4 (variance table ends at 4)")
    if dim is not None and t > dim:
        raise OrderUnsupported(
            f"order {t} exceeds dimension {dim}; the Haar value t! needs "
            "t <= dim")


def moment_gaps(sampler: Callable, orders: Sequence[int], n_pairs: int,
                seed: int = 0, batch_size: int = 2000
                ) -> List[MomentEstimate]:
    """Estimates for several orders from one shared pair stream."""
    for t in orders:
        _check_order(t)
    if n_pairs < 1000:
        raise ConstraintViolation("need at least 1000 sample pairs")
    n_batches = math.ceil(n_pairs / batch_size)
    children = np.random.SeedSequence(seed).spawn(n_batches)
    partials = {t: [] for t in orders}
    dim = None
    for i, child in enumerate(children):
        b = min(batch_size, n_pairs - i * batch_size)
        rng = np.random.default_rng(child)
        u = sampler(rng, b)
        v = sampler(rng, b)
        if dim is None:
            dim = u.shape[-1]
            for t in orders:
                _check_order(t, dim)
        x = np.abs(np.einsum("bij,bij->b", u.conj(), v)) ** 2
        for t in orders:
            partials[t].append(float(np.sum(x ** t)))
    out = []
    for t in orders:
        value = math.fsum(partials[t]) / n_pairs
        target = float(math.factorial(t))
        sigma = math.sqrt(tol.HAAR_SIGMA_SQ[t])
        out.append(MomentEstimate(t, value, abs(value - target), n_pairs,
                                  sigma, sigma / math.sqrt(n_pairs)))
    return out


def moment_gap(sampler: Callable, t: int, n_pairs: int, seed: int = 0,
               batch_size: int = 2000) -> MomentEstimate:
    """Gap |F_t - t!| of the ensemble's frame potential from the Haar
    value, with the Monte-Carlo plateau sigma_t / sqrt(M)."""
    return moment_gaps(sampler, [t], n_pairs, seed, batch_size)[0]


def moment_gap_fixed_amplitudes(sys: ControlSystem,
                                seq_template: PulseSequence, t: int,
                                n_pairs: int, seed: int = 0,
                                duration_range: Tuple[float, float] = (0.0, 10.0),
                                batch_size: int = 2000) -> MomentEstimate:
    """moment_gap over the template's frozen amplitudes, sampling only the
    layer durations uniformly from duration_range."""
    sampler = fixed_amplitude_sampler(sys, seq_template, duration_range)
    return moment_gap(sampler, t, n_pairs, seed, batch_size)


def decay_fit(products: Sequence[float], deltas: Sequence[float],
              plateau: float, floor_factor: float = 10.0
              ) -> Tuple[float, float, int]:
    """Least-squares slope and R^2 of log(delta) vs N_L * N_P, excluding
    points already at the noise floor (delta < floor_factor * plateau).

    The default floor keeps a 10x margin above the Monte-Carlo
    uncertainty; reduced-sample runs whose decay sinks into the floor
    early can pass floor_factor=1.0 to fit every point that still sits
    above the statistical uncertainty itself.

    Returns (slope, r_squared, n_used).
    """
    x, y = [], []
    for p, d in zip(products, deltas):
        if d >= floor_factor * plateau:
            x.append(float(p))
            y.append(math.log(d))
    if len(x) < 2:
        return 0.0, 0.0, len(x)
    x = np.asarray(x)
    y = np.asarray(y)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), r2, len(x)


# controllability -------------------------------------------------------


@dataclass(frozen=True)
class DlaReport:
    dim_found: int
    dim_full: int
    controllable: bool
    basis_residuals: float

    def csv_row(self) -> dict:
        return {"dim_found": self.dim_found, "dim_full": self.dim_full,
                "controllable": self.controllable,
                "basis_residuals": self.basis_residuals}


def dla_rank(sys: ControlSystem) -> DlaReport:
    """Dimension of the real Lie closure of {i H0, i Hc} (traceless parts)
    under Gram-Schmidt with the Hilbert-Schmidt inner product.

    Closure stops once the full traceless dimension N^2 - 1 is reached.
    Routine use is dims <= 16; a hard guard rejects dims above 64.
    """
    n = sys.dim
    if n > 64:
        raise DimensionTooLarge(f"dla_rank limited to dim <= 64, got {n}")
    eye = np.eye(n)

    def traceless(a):
        return a - (np.trace(a) / n) * eye

    basis: List[np.ndarray] = []
    flat: List[np.ndarray] = []

    def add(candidate: np.ndarray) -> bool:
        norm0 = hs_norm(candidate)
        if norm0 < 1e-14:
            return False
        vec = candidate.ravel()
        for _ in range(2):
            if flat:
                mat = np.asarray(flat)
                coef = mat.conj() @ vec
                vec = vec - coef @ mat
        norm = float(np.linalg.norm(vec))
        if norm <= 1e-10 * max(1.0, norm0):
            return False
        vec = vec / norm
        flat.append(vec)
        basis.append(vec.reshape(n, n))
        return True

    for g in (1j * traceless(sys.drift), 1j * traceless(sys.control)):
        add(g)
    dim_full = n * n - 1
    new_idx = list(range(len(basis)))
    while new_idx and len(basis) < dim_full:
        round_start = len(basis)
        for i in new_idx:
            for j in range(round_start):
                if len(basis) >= dim_full:
                    break
                a, b = basis[i], basis[j]
                add(a @ b - b @ a)
        new_idx = list(range(round_start, len(basis)))

    residual = 0.0
    if flat:
        mat = np.asarray(flat)
        gram = mat.conj() @ mat.T
        residual = float(np.max(np.abs(gram - np.eye(len(flat)))))
    found = len(basis)
    return DlaReport(found, dim_full, found == dim_full, residual)


def parameter_bound(task: str, n: int) -> int:
    """Minimum real parameter count: 2N-2 for state transfer, N^2-1 for
    unitary synthesis."""
    if n < 2:
        raise ConstraintViolation("dimension must be at least 2")
    if task == "state_transfer":
        return 2 * n - 2
    if task == "unitary_synthesis":
        return n * n - 1
    raise ValueError(f"unknown task {task!r}")


# robustness ------------------------------------------------------------


@dataclass(frozen=True)
class RobustnessReport:
    sigma_u: float
    sigma_tau: float
    mean_delta_j: float
    bound: float
    samples: int

    def csv_row(self) -> dict:
        return {"sigma_u": self.sigma_u, "sigma_tau": self.sigma_tau,
                "mean_delta_j": self.mean_delta_j, "bound": self.bound,
                "samples": self.samples}


def perturbation_bound(sys: ControlSystem, seq: PulseSequence,
                       sigma_u: float, sigma_tau: float) -> float:
    """First-order figure-of-merit bound
    2 sqrt(2/pi) [ (sigma_tau / N_P) sum_lp ||H^(l,p)||_HS
                   + sigma_u ||Hc||_HS sum_l tau_l ]."""
    u = seq.pulse_amplitudes()
    h_norms = math.fsum(hs_norm(sys.hamiltonian(x)) for x in u)
    total = seq.total_duration()
    return 2.0 * math.sqrt(2.0 / math.pi) * (
        (sigma_tau / seq.layer_size) * h_norms
        + sigma_u * hs_norm(sys.control) * total)


def robustness_study(sys: ControlSystem, optimized_seq: PulseSequence,
                     fom: FigureOfMerit, sigma_u: float, sigma_tau: float,
                     n_samples: int, rng: np.random.Generator
                     ) -> RobustnessReport:
    """Mean |Delta J| under independent Gaussian noise on every pulse:
    amplitude shifts N(0, sigma_u) and duration shifts N(0, sigma_tau),
    against the first-order norm bound.

    Supports rally_t (without bandwidth insertion) and grape sequences;
    the caller should pass a converged sequence so Delta J is not
    dominated by the unperturbed residual.
    """
    if optimized_seq.kind not in ("rally_t", "grape"):
        raise UnsupportedSequence(
            f"robustness study supports rally_t and grape, "
            f"got {optimized_seq.kind}")
    if optimized_seq.bandwidth is not None:
        raise UnsupportedSequence("bandwidth rises not supported here")
    u0 = optimized_seq.pulse_amplitudes()
    s0 = optimized_seq.pulse_durations()
    j0 = fom.value(kernels.chain_fresh(sys.drift, sys.control, u0, s0))
    deltas = []
    for _ in range(n_samples):
        du = rng.normal(0.0, sigma_u, u0.size) if sigma_u > 0 else 0.0
        ds = rng.normal(0.0, sigma_tau, s0.size) if sigma_tau > 0 else 0.0
        s = np.clip(s0 + ds, 0.0, None)
        total = kernels.chain_fresh(sys.drift, sys.control, u0 + du, s)
        deltas.append(abs(fom.value(total) - j0))
    return RobustnessReport(sigma_u, sigma_tau,
                            float(np.mean(deltas)) if deltas else 0.0,
                            perturbation_bound(sys, optimized_seq,
                                               sigma_u, sigma_tau),
                            n_samples)


# runtime scaling -------------------------------------------------------


@dataclass(frozen=True)
class ScalingPoint:
    dimension: int
    median_seconds: Optional[float]
    median_preprocess_seconds: float
    median_evaluations: Optional[float]
    n_success: int
    n_seeds: int

    def csv_row(self) -> dict:
        return {"dimension": self.dimension,
                "median_seconds": self.median_seconds,
                "median_preprocess_seconds": self.median_preprocess_seconds,
                "median_evaluations": self.median_evaluations,
                "n_success": self.n_success, "n_seeds": self.n_seeds}


@dataclass(frozen=True)
class ScalingResult:
    method: str
    points: Tuple[ScalingPoint, ...]
    exponent: Optional[float]


def ising_ghz_family(n_qubits: int, field_seed: int
                     ) -> Tuple[ControlSystem, FigureOfMerit]:
    """Seeded random Ising chain with the |0...0> -> GHZ transfer target."""
    sys = random_ising(n_qubits, np.random.default_rng(field_seed))
    dim = sys.dim
    fom = FigureOfMerit("state_infidelity", ghz_state(n_qubits),
                        psi0=basis_state(dim, 0))
    return sys, fom


def scaling_run(sys, fom, method, n_params, target_j, budget_seconds,
                 seed) -> Tuple[bool, float, float, int]:
    """One seeded optimization; returns (reached, preprocess_s, total_s,
    evaluations)."""
    from . import gradients as gr

    config = OptimizerConfig(max_evaluations=10 ** 6, target_fom=target_j,
                             fatol=1e-15, gtol=1e-12,
                             max_seconds=budget_seconds)
    if method == "rally_t":
        seq = PulseSequence.rally_t(sys, n_params, 1, seed)
        t0 = time.perf_counter()
        cache = PropagatorCache(sys)
        cache.stack(seq.pulse_amplitudes())
        pre = time.perf_counter() - t0

        def objective(p):
            r = gr.rally_t_gradient(sys, seq.with_parameters(p), fom, cache)
            return r.value, r.gradient

        run = quasi_newton(objective, seq.parameters, config,
                           bounds=[(0.0, None)] * n_params)
    elif method == "grape":
        rng = np.random.default_rng(seed)
        x0 = sys.amplitude_domain.sample(rng, n_params)
        dom = (sys.amplitude_domain.lower, sys.amplitude_domain.upper)
        pre = 0.0

        def objective(p):
            r = gr.grape_gradient(sys, p, 0.5, fom)
            return r.value, r.gradient

        run = quasi_newton(objective, x0, config, bounds=[dom] * n_params)
    else:
        raise UnsupportedSequence(f"scaling supports rally_t and grape, "
                                  f"got {method}")
    reached = run.best_fom <= target_j
    return reached, pre, pre + run.wall_time, run.fom_evaluations


def scaling_study(method: str, qubit_counts: Sequence[int], target_j: float,
                  budget_seconds: float, n_seeds: int = 3, base_seed: int = 0,
                  family: Callable = ising_ghz_family,
                  param_margin: float = 1.3) -> ScalingResult:
    """Median wall time (pre-processing plus optimization) to reach the
    target state-transfer infidelity, per Hilbert-space dimension, with a
    log-log exponent fitted over the largest four dimensions.

    Parameter counts scale with the information bound: ceil(margin*(2N-2)).
    """
    if budget_seconds <= 0:
        raise ConstraintViolation("budget must be positive")
    points = []
    for n_qubits in qubit_counts:
        sys, fom = family(n_qubits, base_seed + n_qubits)
        n_params = math.ceil(param_margin * (2 * sys.dim - 2))
        totals, pres, evals = [], [], []
        n_success = 0
        for s in range(n_seeds):
            reached, pre, total, n_evals = scaling_run(
                sys, fom, method, n_params, target_j, budget_seconds,
                base_seed + 1000 * n_qubits + s)
            pres.append(pre)
            if reached:
                n_success += 1
                totals.append(total)
                evals.append(n_evals)
        points.append(ScalingPoint(
            sys.dim,
            float(np.median(totals)) if totals else None,
            float(np.median(pres)),
            float(np.median(evals)) if evals else None,
            n_success, n_seeds))
    usable = [p for p in points if p.median_seconds is not None]
    exponent = None
    if len(usable) >= 2:
        tail = usable[-4:]
        x = np.log([p.dimension for p in tail])
        y = np.log([p.median_seconds for p in tail])
        exponent = float(np.polyfit(x, y, 1)[0])
    return ScalingResult(method, tuple(points), exponent)
