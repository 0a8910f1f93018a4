"""Figures of merit on final propagators, with adjoint seeds for gradients.

Every kind exposes its differential through dJ = 2 Re tr(G(U)^dag dU); the
rank-one kinds additionally expose the backward vector y with
dJ = 2 Re <y| dU |psi0>, which is what the vector-path gradient engine uses.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, UnsupportedSequence
from .qcore import check_hermitian, check_state, is_unitary

KINDS = ("unitary_infidelity", "state_infidelity", "energy")


def unitary_infidelity(u: np.ndarray, target: np.ndarray) -> float:
    """1 - |tr(target^dag u)|^2 / d^2; invariant under global phases."""
    u = np.asarray(u)
    target = np.asarray(target)
    if u.shape != target.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatch(
            f"propagator shapes differ: {u.shape} vs {target.shape}")
    d = u.shape[0]
    z = np.trace(target.conj().T @ u)
    return float(1.0 - (abs(z) / d) ** 2)


def state_infidelity(psi0: np.ndarray, u: np.ndarray,
                     target: np.ndarray) -> float:
    """1 - |<target| u |psi0>|^2."""
    psi0 = check_state(np.asarray(psi0, dtype=complex))
    target = check_state(np.asarray(target, dtype=complex))
    if u.shape != (psi0.size, psi0.size) or target.size != psi0.size:
        raise DimensionMismatch("state and propagator dimensions differ")
    a = np.vdot(target, u @ psi0)
    return float(1.0 - abs(a) ** 2)


def energy(psi0: np.ndarray, u: np.ndarray, h_target: np.ndarray) -> float:
    """<psi0| u^dag h_target u |psi0>."""
    psi0 = check_state(np.asarray(psi0, dtype=complex))
    if u.shape != (psi0.size, psi0.size) or h_target.shape != u.shape:
        raise DimensionMismatch("state and operator dimensions differ")
    psi = u @ psi0
    return float(np.real(np.vdot(psi, h_target @ psi)))


def composite(base_value: float, durations: np.ndarray,
              weight: float) -> float:
    """Base figure of merit plus weight * (total duration)^2."""
    return float(base_value + weight * np.sum(durations) ** 2)


@dataclass(frozen=True)
class FigureOfMerit:
    """A target functional to minimize.

    kind is one of {"unitary_infidelity", "state_infidelity", "energy"}.
    A positive penalty_weight turns the functional into the composite kind
    that additionally charges weight * (total duration)^2 on rally_t
    sequences.
    """

    kind: str
    target: np.ndarray
    psi0: Optional[np.ndarray] = None
    penalty_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedSequence(f"unknown figure of merit {self.kind!r}")
        target = np.asarray(self.target, dtype=complex)
        object.__setattr__(self, "target", target)
        if self.kind == "unitary_infidelity":
            if not is_unitary(target):
                raise DimensionMismatch("target propagator is not unitary")
        elif self.kind == "state_infidelity":
            check_state(target)
        else:
            check_hermitian(target)
        if self.kind != "unitary_infidelity":
            if self.psi0 is None:
                raise DimensionMismatch(f"{self.kind} requires psi0")
            psi0 = np.asarray(self.psi0, dtype=complex)
            check_state(psi0)
            object.__setattr__(self, "psi0", psi0)
        if self.penalty_weight < 0:
            raise DimensionMismatch("penalty_weight must be non-negative")

    @property
    def is_composite(self) -> bool:
        return self.penalty_weight > 0

    @property
    def uses_vector_path(self) -> bool:
        """True when the functional depends on U only through U |psi0>."""
        return self.kind in ("state_infidelity", "energy")

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    def value(self, u: np.ndarray) -> float:
        if self.kind == "unitary_infidelity":
            return unitary_infidelity(u, self.target)
        if self.kind == "state_infidelity":
            return state_infidelity(self.psi0, u, self.target)
        return energy(self.psi0, u, self.target)

    def value_from_state(self, psi: np.ndarray) -> float:
        """Value from the propagated state psi = U |psi0>."""
        if self.kind == "state_infidelity":
            return float(1.0 - abs(np.vdot(self.target, psi)) ** 2)
        if self.kind == "energy":
            return float(np.real(np.vdot(psi, self.target @ psi)))
        raise UnsupportedSequence(f"{self.kind} needs the full propagator")

    def backward_vector(self, psi: np.ndarray) -> np.ndarray:
        """y with dJ = 2 Re <y| dU |psi0>, given psi = U |psi0>."""
        if self.kind == "state_infidelity":
            a = np.vdot(self.target, psi)
            return -a * self.target
        if self.kind == "energy":
            return self.target @ psi
        raise UnsupportedSequence(f"{self.kind} needs the full propagator")

    def cogradient_matrix(self, u: np.ndarray) -> np.ndarray:
        """G with dJ = 2 Re tr(G^dag dU)."""
        if self.kind == "unitary_infidelity":
            d = u.shape[0]
            z = np.trace(self.target.conj().T @ u)
            return (-z / d ** 2) * self.target
        y = self.backward_vector(u @ self.psi0)
        return np.outer(y, self.psi0.conj())

    def sequence_value(self, u: np.ndarray, seq=None) -> float:
        """Value including the duration penalty for rally_t sequences."""
        base = self.value(u)
        if self.is_composite and seq is not None and seq.kind == "rally_t":
            base = composite(base, seq.parameters, self.penalty_weight)
        return base

    def penalty_gradient(self, durations: np.ndarray) -> np.ndarray:
        """d/d tau_l of weight * (sum tau)^2: a constant vector."""
        total = float(np.sum(durations))
        return np.full(len(durations), 2.0 * self.penalty_weight * total)
