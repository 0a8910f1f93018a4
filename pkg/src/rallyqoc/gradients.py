"""Analytic gradients of figures of merit over pulse chains.

The chain is walked once forward (prefix states or matrices) and once
backward (adjoint rows), so cost stays linear in the number of pulses.
Functionals that depend on U only through U|psi0> use matrix-vector
sweeps; unitary infidelity uses matrix-matrix sweeps.

Amplitude derivatives support two modes: "exact" uses the closed-form
directional derivative of the matrix exponential in the step's eigenbasis,
"first_order" uses the commutator-free small-step approximation
-i dt Hc U_j.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels as kernels
from .errors import ConstraintViolation, UnsupportedSequence
from .fom import FigureOfMerit
from .hamiltonians import ControlSystem
from .pulses import (PropagatorCache, PulseSequence, _check_rally_t,
                     bandwidth_durations)
from .qcore import eigh

MODES = ("exact", "first_order")


METHODS = ("analytic_exact", "analytic_first_order", "finite_difference")


@dataclass(frozen=True)
class GradientResult:
    value: float
    gradient: np.ndarray
    method: str = "analytic_exact"


def _apply(v, w, s, x):
    """exp(-i s H) x in the eigenbasis (v, w); x may be a matrix."""
    phases = np.exp(-1j * s * w)
    y = v.conj().T @ x
    if x.ndim == 2:
        return v @ (phases[:, None] * y)
    return v @ (phases * y)


def _apply_dag(v, w, s, x):
    """exp(+i s H) x."""
    phases = np.exp(1j * s * w)
    y = v.conj().T @ x
    if x.ndim == 2:
        return v @ (phases[:, None] * y)
    return v @ (phases * y)


def _frechet_core(w, v, dt, hc):
    """C with dU/du = V C V^dag for U = exp(-i dt (H0 + u Hc)).

    C = (-i dt V^dag Hc V) * Gamma, Gamma_ab the divided difference of
    exp(-i dt .) at (lambda_a, lambda_b) with the confluent limit on the
    diagonal and for near-degenerate pairs.
    """
    hct = v.conj().T @ hc @ v
    phases = np.exp(-1j * dt * w)
    dl = w[:, None] - w[None, :]
    cutoff = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    small = np.abs(dl) < cutoff
    denom = -1j * dt * np.where(small, 1.0, dl)
    gamma = np.where(small, np.broadcast_to(phases[:, None], dl.shape),
                     (phases[:, None] - phases[None, :]) / denom)
    return (-1j * dt * hct) * gamma


def finite_difference(f: Callable[[np.ndarray], float], params,
                      step: float = 1e-6) -> "GradientResult":
    """Central finite differences with per-coordinate step
    step * max(1, |param_i|)."""
    if step <= 0:
        raise ConstraintViolation("finite-difference step must be positive")
    params = np.asarray(params, dtype=float)
    grad = np.empty(params.size)
    for i in range(params.size):
        h = step * max(1.0, abs(params[i]))
        hi = params.copy()
        lo = params.copy()
        hi[i] += h
        lo[i] -= h
        grad[i] = (f(hi) - f(lo)) / (2 * h)
    return GradientResult(float(f(params)), grad, "finite_difference")


# rally_t ---------------------------------------------------------------


def _rally_t_ops(sys, seq, cache):
    """Chronological op list [("p", k) | ("r", matrix)] plus per-pulse
    eigensystems, amplitudes, and effective durations (equal-amplitude
    boundaries extend the constant segment rather than inserting a rise)."""
    u = seq.pulse_amplitudes()
    systems = [cache.eigensystem(x) for x in u]
    s = seq.pulse_durations()
    if seq.bandwidth is not None:
        s = bandwidth_durations(u, s, seq.bandwidth)
    ops = []
    for k in range(seq.n_pulses):
        ops.append(("p", k))
        if (seq.bandwidth is not None and k + 1 < seq.n_pulses
                and u[k] != u[k + 1]):
            ops.append(("r", cache.rise(u[k], u[k + 1], seq.bandwidth)))
    return ops, systems, u, s


def rally_t_gradient(sys: ControlSystem, seq: PulseSequence,
                     fom: FigureOfMerit,
                     cache: PropagatorCache = None) -> GradientResult:
    """Value and d/d tau_l, including bandwidth rises (constants in tau)
    and the composite duration penalty when the functional carries one."""
    _check_rally_t(sys, seq)
    cache = cache or PropagatorCache(sys)
    ops, systems, u, s = _rally_t_ops(sys, seq, cache)
    n_p = seq.layer_size
    grad = np.zeros(seq.n_layers)

    if fom.uses_vector_path:
        states = [fom.psi0.astype(complex)]
        for op in ops:
            if op[0] == "p":
                w, v = systems[op[1]]
                states.append(_apply(v, w, s[op[1]], states[-1]))
            else:
                states.append(op[1] @ states[-1])
        value = fom.value_from_state(states[-1])
        b = fom.backward_vector(states[-1])
        for i in range(len(ops) - 1, -1, -1):
            kind, payload = ops[i]
            if kind == "p":
                k = payload
                w, v = systems[k]
                hf = sys.drift @ states[i + 1] + u[k] * (sys.control @ states[i + 1])
                grad[k // n_p] += (2.0 / n_p) * np.real(-1j * np.vdot(b, hf))
                b = _apply_dag(v, w, s[k], b)
            else:
                b = payload.conj().T @ b
    else:
        prefixes = [np.eye(sys.dim, dtype=complex)]
        for op in ops:
            if op[0] == "p":
                w, v = systems[op[1]]
                prefixes.append(_apply(v, w, s[op[1]], prefixes[-1]))
            else:
                prefixes.append(op[1] @ prefixes[-1])
        total = prefixes[-1]
        value = fom.value(total)
        r = fom.cogradient_matrix(total).conj().T
        for i in range(len(ops) - 1, -1, -1):
            kind, payload = ops[i]
            if kind == "p":
                k = payload
                w, v = systems[k]
                h = sys.hamiltonian(u[k])
                grad[k // n_p] += (2.0 / n_p) * np.real(
                    -1j * np.sum((r @ h) * prefixes[i + 1].T))
                r = r @ _step_matrix(v, w, s[k])
            else:
                r = r @ payload

    if fom.is_composite:
        value += fom.penalty_weight * float(np.sum(seq.parameters)) ** 2
        grad += fom.penalty_gradient(seq.parameters)
    return GradientResult(float(value), grad, "analytic_exact")


def _step_matrix(v, w, s):
    return (v * np.exp(-1j * s * w)) @ v.conj().T


# grape and rally_a -----------------------------------------------------


def _amplitude_chain_gradient(sys, amplitudes, dt, fom, mode):
    """Per-step amplitude gradient for a piecewise-constant chain."""
    if mode not in MODES:
        raise UnsupportedSequence(f"unknown gradient mode {mode!r}")
    amplitudes = np.asarray(amplitudes, dtype=float)
    m = amplitudes.size
    systems = [eigh(sys.hamiltonian(a)) for a in amplitudes]
    grad = np.zeros(m)

    if fom.uses_vector_path:
        states = [fom.psi0.astype(complex)]
        for j in range(m):
            w, v = systems[j]
            states.append(_apply(v, w, dt, states[-1]))
        value = fom.value_from_state(states[-1])
        b = fom.backward_vector(states[-1])
        for j in range(m - 1, -1, -1):
            w, v = systems[j]
            if mode == "exact":
                core = _frechet_core(w, v, dt, sys.control)
                dx = v @ (core @ (v.conj().T @ states[j]))
                grad[j] = 2.0 * np.real(np.vdot(b, dx))
            else:
                hcf = sys.control @ states[j + 1]
                grad[j] = 2.0 * dt * np.real(-1j * np.vdot(b, hcf))
            b = _apply_dag(v, w, dt, b)
    else:
        prefixes = [np.eye(sys.dim, dtype=complex)]
        for j in range(m):
            w, v = systems[j]
            prefixes.append(_apply(v, w, dt, prefixes[-1]))
        value = fom.value(prefixes[-1])
        r = fom.cogradient_matrix(prefixes[-1]).conj().T
        for j in range(m - 1, -1, -1):
            w, v = systems[j]
            if mode == "exact":
                core = _frechet_core(w, v, dt, sys.control)
                d = v @ core @ v.conj().T
                grad[j] = 2.0 * np.real(np.sum((r @ d) * prefixes[j].T))
            else:
                grad[j] = 2.0 * dt * np.real(
                    -1j * np.sum((r @ sys.control) * prefixes[j + 1].T))
            r = r @ _step_matrix(v, w, dt)

    return float(value), grad


def grape_gradient(sys: ControlSystem, amplitudes, dt: float,
                   fom: FigureOfMerit, mode: str = "exact") -> GradientResult:
    """Value and d/d u_j for a piecewise-constant amplitude schedule."""
    value, grad = _amplitude_chain_gradient(sys, amplitudes, dt, fom, mode)
    method = "analytic_exact" if mode == "exact" else "analytic_first_order"
    return GradientResult(value, grad, method)


def rally_a_gradient(sys: ControlSystem, seq: PulseSequence,
                     fom: FigureOfMerit,
                     mode: str = "exact") -> GradientResult:
    """Value and d/d xi_l: the chain rule folds the frozen pulse amplitude
    into each per-pulse derivative, summed over the layer."""
    if seq.kind != "rally_a":
        raise UnsupportedSequence(f"expected rally_a, got {seq.kind}")
    effective = seq.pulse_amplitudes()
    value, per_pulse = _amplitude_chain_gradient(sys, effective, seq.dt,
                                                 fom, mode)
    weighted = per_pulse * seq.amplitudes.ravel()
    grad = weighted.reshape(seq.n_layers, seq.layer_size).sum(axis=1)
    method = "analytic_exact" if mode == "exact" else "analytic_first_order"
    return GradientResult(value, grad, method)


# dispatch --------------------------------------------------------------


def fom_value(sys: ControlSystem, seq: PulseSequence, fom: FigureOfMerit,
              cache: Optional[PropagatorCache] = None) -> float:
    """Figure-of-merit value only, via the cheapest available path."""
    from . import pulses

    if seq.kind == "rally_t":
        _check_rally_t(sys, seq)
        if fom.uses_vector_path and seq.bandwidth is None:
            cache = cache or PropagatorCache(sys)
            vs, lams = cache.stack(seq.pulse_amplitudes())
            psi = kernels.chain_cached_apply(vs, lams, seq.pulse_durations(),
                                             fom.psi0.astype(complex))
            value = fom.value_from_state(psi)
        else:
            u = pulses.rally_t_with_bandwidth(sys, seq, cache=cache) \
                if seq.bandwidth is not None \
                else pulses.rally_t_propagator(sys, seq, cache)
            value = fom.value(u)
        if fom.is_composite:
            value += fom.penalty_weight * float(np.sum(seq.parameters)) ** 2
        return float(value)
    if seq.kind == "rally_a":
        return fom.value(pulses.rally_a_propagator(sys, seq))
    if seq.kind == "grape":
        return fom.value(pulses.grape_propagator(sys, seq.parameters, seq.dt))
    raise UnsupportedSequence(f"cannot evaluate kind {seq.kind}")


def fom_value_and_gradient(sys: ControlSystem, seq: PulseSequence,
                           fom: FigureOfMerit,
                           cache: Optional[PropagatorCache] = None,
                           mode: str = "exact") -> GradientResult:
    """Dispatch to the kind-specific gradient."""
    if seq.kind == "rally_t":
        return rally_t_gradient(sys, seq, fom, cache)
    if seq.kind == "rally_a":
        return rally_a_gradient(sys, seq, fom, mode)
    if seq.kind == "grape":
        return grape_gradient(sys, seq.parameters, seq.dt, fom, mode)
    raise UnsupportedSequence(f"no analytic gradient for kind {seq.kind}")
