"""Layered pulse sequences and their total propagators.

Time-ordering convention: layer 1 acts first on the state, and pulse 1
within a layer acts first, so the total matrix is U_K ... U_2 U_1 over
chronological pulses. Chains are evaluated by the `_kernels` backend.
"""

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from . import tolerances as tol
from . import _kernels as kernels
from .errors import ConstraintViolation, DimensionMismatch, UnsupportedSequence
from .hamiltonians import ControlSystem
from .qcore import EigenSystem, eigh

KINDS = ("rally_t", "rally_a", "grape", "dcrab")


@dataclass(frozen=True)
class RiseProfile:
    """Sigmoid interpolation profile between adjacent pulse amplitudes."""

    tau_rise: float = tol.RISE_TAU_DEFAULT
    n_int: int = tol.RISE_N_INT_DEFAULT
    epsilon: float = tol.RISE_EPSILON_DEFAULT

    def __post_init__(self):
        if self.n_int < 1:
            raise ConstraintViolation("n_int must be >= 1")
        if not 0 < self.epsilon < 0.5:
            raise ConstraintViolation("epsilon must lie in (0, 0.5)")
        if self.tau_rise <= 0:
            raise ConstraintViolation("tau_rise must be positive")

    def steepness(self) -> float:
        return (2.0 / self.tau_rise) * math.log((1 - self.epsilon) / self.epsilon)

    def field(self, u_from: float, u_to: float) -> np.ndarray:
        """Midpoint-sampled interpolated amplitudes, shape (n_int,)."""
        dt = self.tau_rise / self.n_int
        t = (np.arange(self.n_int) + 0.5) * dt
        s = 0.5 * (1 + np.tanh(0.5 * self.steepness() * (t - self.tau_rise / 2)))
        return u_from + (u_to - u_from) * s


@dataclass(frozen=True)
class PulseSequence:
    """A control schedule of one of the four kinds.

    parameters holds the optimization variables: layer durations tau
    (rally_t), layer scale factors xi (rally_a), step amplitudes (grape),
    or basis coefficients (dcrab). amplitudes holds the frozen random
    u^(l,p) draws for the rally kinds.
    """

    kind: str
    n_layers: int
    layer_size: int
    parameters: np.ndarray
    amplitudes: Optional[np.ndarray] = None
    dt: Optional[float] = None
    bandwidth: Optional[RiseProfile] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedSequence(f"unknown kind {self.kind!r}")
        object.__setattr__(self, "parameters",
                           np.asarray(self.parameters, dtype=float))
        if self.amplitudes is not None:
            amps = np.asarray(self.amplitudes, dtype=float)
            if amps.shape != (self.n_layers, self.layer_size):
                raise DimensionMismatch(
                    f"amplitudes shape {amps.shape} != "
                    f"({self.n_layers}, {self.layer_size})")
            object.__setattr__(self, "amplitudes", amps)
        if self.kind in ("rally_t", "rally_a"):
            if self.amplitudes is None:
                raise DimensionMismatch(f"{self.kind} requires amplitudes")
            if self.parameters.shape != (self.n_layers,):
                raise DimensionMismatch(
                    f"{self.kind} parameters must have length n_layers")
        if self.kind in ("rally_a", "grape") and (self.dt is None or self.dt <= 0):
            raise ConstraintViolation(f"{self.kind} requires dt > 0")

    @property
    def n_pulses(self) -> int:
        if self.kind == "grape":
            return len(self.parameters)
        return self.n_layers * self.layer_size

    def with_parameters(self, parameters) -> "PulseSequence":
        return replace(self, parameters=np.asarray(parameters, dtype=float))

    def total_duration(self) -> float:
        """Sum of layer durations (rally_t) or n_pulses * dt (others)."""
        if self.kind == "rally_t":
            return float(np.sum(self.parameters))
        return self.n_pulses * float(self.dt)

    def physical_duration(self) -> float:
        """Total evolution time including inserted rise segments."""
        base = self.total_duration()
        if self.kind == "rally_t" and self.bandwidth is not None:
            base += (self.n_pulses - 1) * self.bandwidth.tau_rise
        return base

    # construction -----------------------------------------------------

    @classmethod
    def rally_t(cls, sys: ControlSystem, n_layers: int, layer_size: int,
                seed: int, durations=None, bandwidth: RiseProfile = None,
                duration_scale: float = 1.0,
                total_duration: float = None) -> "PulseSequence":
        """Draw frozen amplitudes from the system domain and initial layer
        durations uniformly from [0, 1] us, scaled by duration_scale or
        rescaled so they sum to total_duration, floored at the system's
        minimum sub-pulse duration."""
        rng = np.random.default_rng(seed)
        amps = sys.amplitude_domain.sample(rng, (n_layers, layer_size))
        if durations is None:
            durations = rng.uniform(0.0, 1.0, n_layers) * duration_scale
            if total_duration is not None:
                durations = durations * (total_duration / durations.sum())
            if sys.min_pulse_duration > 0:
                durations = np.maximum(durations,
                                       layer_size * sys.min_pulse_duration)
        return cls("rally_t", n_layers, layer_size, durations, amps,
                   bandwidth=bandwidth, seed=seed)

    @classmethod
    def rally_a(cls, sys: ControlSystem, n_layers: int, layer_size: int,
                dt: float, seed: int, scales=None) -> "PulseSequence":
        """Draw frozen amplitudes and initial scale factors xi in [0, 1]."""
        rng = np.random.default_rng(seed)
        amps = sys.amplitude_domain.sample(rng, (n_layers, layer_size))
        if scales is None:
            scales = rng.uniform(0.0, 1.0, n_layers)
        return cls("rally_a", n_layers, layer_size, scales, amps, dt=dt,
                   seed=seed)

    @classmethod
    def grape(cls, n_steps: int, dt: float, amplitudes=None,
              seed: int = None) -> "PulseSequence":
        if amplitudes is None:
            amplitudes = np.zeros(n_steps)
        return cls("grape", n_steps, 1, amplitudes, dt=dt, seed=seed)

    # pulse-level views ------------------------------------------------

    def pulse_amplitudes(self) -> np.ndarray:
        """Chronological per-pulse control amplitudes, shape (n_pulses,)."""
        if self.kind == "rally_t":
            return self.amplitudes.ravel()
        if self.kind == "rally_a":
            return (self.parameters[:, None] * self.amplitudes).ravel()
        if self.kind == "grape":
            return self.parameters.copy()
        raise UnsupportedSequence("dcrab sequences have no fixed pulse grid")

    def pulse_durations(self) -> np.ndarray:
        """Chronological per-pulse durations, shape (n_pulses,)."""
        if self.kind == "rally_t":
            return np.repeat(self.parameters / self.layer_size, self.layer_size)
        return np.full(self.n_pulses, float(self.dt))

    # serialization ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "seed": self.seed,
            "n_layers": self.n_layers,
            "layer_size": self.layer_size,
            "parameters": self.parameters.tolist(),
            "amplitudes": None if self.amplitudes is None
            else self.amplitudes.tolist(),
            "dt": self.dt,
            "bandwidth": None if self.bandwidth is None else {
                "tau_rise": self.bandwidth.tau_rise,
                "n_int": self.bandwidth.n_int,
                "epsilon": self.bandwidth.epsilon,
            },
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PulseSequence":
        doc = json.loads(text)
        bandwidth = doc.get("bandwidth")
        if bandwidth is not None:
            bandwidth = RiseProfile(**bandwidth)
        return cls(doc["kind"], doc["n_layers"], doc["layer_size"],
                   np.asarray(doc["parameters"], dtype=float),
                   None if doc.get("amplitudes") is None
                   else np.asarray(doc["amplitudes"], dtype=float),
                   dt=doc.get("dt"), bandwidth=bandwidth, seed=doc.get("seed"))


class PropagatorCache:
    """Eigendecompositions of H0 + u Hc keyed by exact amplitude value,
    plus rise propagators keyed by (u_from, u_to, profile).

    Population is single-writer; lookups after a build phase are safe for
    concurrent readers.
    """

    def __init__(self, sys: ControlSystem):
        self.sys = sys
        self._eigs = {}
        self._rises = {}

    def eigensystem(self, u: float) -> EigenSystem:
        key = float(u)
        found = self._eigs.get(key)
        if found is None:
            found = eigh(self.sys.hamiltonian(key))
            self._eigs[key] = found
        return found

    def stack(self, amplitudes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Contiguous (K, N, N) eigenvector and (K, N) eigenvalue stacks for
        a chronological amplitude list."""
        systems = [self.eigensystem(u) for u in amplitudes]
        vs = np.ascontiguousarray([sy.eigenvectors for sy in systems])
        lams = np.ascontiguousarray([sy.eigenvalues for sy in systems])
        return vs, lams

    def rise(self, u_from: float, u_to: float,
             profile: RiseProfile) -> np.ndarray:
        key = (float(u_from), float(u_to), profile)
        found = self._rises.get(key)
        if found is None:
            found = rise_propagator(self.sys, u_from, u_to, profile)
            self._rises[key] = found
        return found

    @property
    def n_eigensystems(self) -> int:
        return len(self._eigs)

    @property
    def n_rises(self) -> int:
        return len(self._rises)


def _check_rally_t(sys: ControlSystem, seq: PulseSequence):
    if seq.kind != "rally_t":
        raise UnsupportedSequence(f"expected rally_t, got {seq.kind}")
    if np.any(seq.parameters < 0):
        raise ConstraintViolation("negative layer duration")
    if sys.min_pulse_duration > 0:
        sub = seq.parameters / seq.layer_size
        if np.any(sub < sys.min_pulse_duration - 1e-12):
            raise ConstraintViolation(
                f"sub-pulse below minimum duration {sys.min_pulse_duration}")


def rally_t_propagator(sys: ControlSystem, seq: PulseSequence,
                       cache: PropagatorCache = None) -> np.ndarray:
    """Total propagator of a rally_t sequence (no bandwidth insertion)."""
    _check_rally_t(sys, seq)
    u = seq.pulse_amplitudes()
    s = seq.pulse_durations()
    if cache is None:
        return kernels.chain_fresh(sys.drift, sys.control, u, s)
    vs, lams = cache.stack(u)
    return kernels.chain_cached(vs, lams, s)


def rally_a_propagator(sys: ControlSystem, seq: PulseSequence) -> np.ndarray:
    """Total propagator of a rally_a sequence."""
    if seq.kind != "rally_a":
        raise UnsupportedSequence(f"expected rally_a, got {seq.kind}")
    xi = seq.parameters
    if np.any(xi < -1e-12) or np.any(xi > 1 + 1e-12):
        raise ConstraintViolation("scale factors must lie in [0, 1]")
    u = seq.pulse_amplitudes()
    dom = sys.amplitude_domain
    if np.any(u < dom.lower - 1e-9) or np.any(u > dom.upper + 1e-9):
        raise ConstraintViolation("scaled amplitude exits the domain")
    s = seq.pulse_durations()
    return kernels.chain_fresh(sys.drift, sys.control, u, s)


def grape_propagator(sys: ControlSystem, amplitudes, dt: float) -> np.ndarray:
    """U(T) = U_M ... U_1 with U_j = exp(-i dt (H0 + u[j] Hc))."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    if dt <= 0:
        raise ConstraintViolation("dt must be positive")
    if amplitudes.size == 0:
        return np.eye(sys.dim, dtype=complex)
    dom = sys.amplitude_domain
    if np.any(amplitudes < dom.lower - 1e-9) or np.any(amplitudes > dom.upper + 1e-9):
        raise ConstraintViolation("amplitude exits the domain")
    s = np.full(amplitudes.size, float(dt))
    return kernels.chain_fresh(sys.drift, sys.control, amplitudes, s)


@dataclass(frozen=True)
class DcrabBasis:
    """Randomized truncated Fourier basis on a piecewise-constant grid."""

    frequencies: Tuple[float, ...]
    total_time: float
    n_steps: int

    @classmethod
    def random(cls, n_frequencies: int, delta_omega: float, total_time: float,
               n_steps: int, rng: np.random.Generator) -> "DcrabBasis":
        """Frequencies drawn uniformly from (0, delta_omega]."""
        freqs = delta_omega * (1.0 - rng.random(n_frequencies))
        return cls(tuple(float(f) for f in freqs), total_time, n_steps)

    @property
    def dt(self) -> float:
        return self.total_time / self.n_steps

    def grid(self) -> np.ndarray:
        """Bin midpoints of the piecewise-constant field."""
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def functions(self) -> np.ndarray:
        """Sampled basis functions {cos(w_i t), sin(w_i t)} as rows,
        shape (2 * n_frequencies, n_steps)."""
        t = self.grid()
        rows = []
        for w in self.frequencies:
            rows.append(np.cos(w * t))
            rows.append(np.sin(w * t))
        return np.array(rows)

    @property
    def n_coefficients(self) -> int:
        """Coefficient-vector length: c0 (dressing) + one per basis row."""
        return 1 + 2 * len(self.frequencies)


def dcrab_field(coeffs, basis: DcrabBasis, previous_field=None,
                domain=None) -> np.ndarray:
    """Dressed field c0 * previous + sum_i c_i basis_i, sampled on the grid
    and hard-clipped to the amplitude domain."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.n_coefficients,):
        raise DimensionMismatch(
            f"expected {basis.n_coefficients} coefficients, got {coeffs.shape}")
    field = coeffs[1:] @ basis.functions()
    if previous_field is not None:
        field = field + coeffs[0] * np.asarray(previous_field, dtype=float)
    if domain is not None:
        field = np.clip(field, domain.lower, domain.upper)
    return field


def rise_propagator(sys: ControlSystem, u_from: float, u_to: float,
                    profile: RiseProfile) -> np.ndarray:
    """Propagator of the sigmoid interpolation from u_from to u_to over
    tau_rise, as a product of n_int midpoint-sampled constant steps."""
    u = profile.field(u_from, u_to)
    s = np.full(profile.n_int, profile.tau_rise / profile.n_int)
    return kernels.chain_fresh(sys.drift, sys.control, u, s)


def bandwidth_durations(u: np.ndarray, s: np.ndarray,
                        profile: RiseProfile) -> np.ndarray:
    """Per-pulse durations with each equal-amplitude boundary folded into
    the preceding constant segment as an extra tau_rise."""
    s = np.asarray(s, dtype=float).copy()
    for k in range(len(u) - 1):
        if u[k] == u[k + 1]:
            s[k] += profile.tau_rise
    return s


def rally_t_with_bandwidth(sys: ControlSystem, seq: PulseSequence,
                           profile: RiseProfile = None,
                           cache: PropagatorCache = None) -> np.ndarray:
    """rally_t propagator with a rise propagator inserted at every adjacent
    pulse boundary; rise durations add to the optimized layer durations.
    Boundaries between equal amplitudes extend the constant segment by
    tau_rise instead of consulting the rise cache."""
    profile = profile or seq.bandwidth
    if profile is None:
        return rally_t_propagator(sys, seq, cache)
    _check_rally_t(sys, seq)
    cache = cache or PropagatorCache(sys)
    u = seq.pulse_amplitudes()
    s = bandwidth_durations(u, seq.pulse_durations(), profile)
    out = np.eye(sys.dim, dtype=complex)
    for k in range(seq.n_pulses):
        w, v = cache.eigensystem(u[k])
        out = (v * np.exp(-1j * s[k] * w)) @ (v.conj().T @ out)
        if k + 1 < seq.n_pulses and u[k] != u[k + 1]:
            out = cache.rise(u[k], u[k + 1], profile) @ out
    return out
