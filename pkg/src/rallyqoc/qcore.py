"""Dense complex linear algebra and quantum primitives.

Operators are plain complex numpy arrays of shape (N, N); states are
complex arrays of shape (N,). Site/qubit index 0 is the leftmost Kronecker
factor (most significant bit of the computational-basis index). All
Hamiltonian exponentials go through the Hermitian eigendecomposition so
eigensystems can be precomputed and reused across durations.
"""

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from . import tolerances as tol
from .errors import DimensionMismatch, IndexOutOfRange, NonHermitianInput

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class EigenSystem(NamedTuple):
    """Eigendecomposition A = V diag(eigenvalues) V^dag, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def check_hermitian(a: np.ndarray) -> np.ndarray:
    """Validate Hermitian symmetry and return the input as a complex array."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    asym = np.max(np.abs(a - a.conj().T))
    if asym > tol.HERMITIAN_ATOL * max(1.0, np.max(np.abs(a))):
        raise NonHermitianInput(f"max asymmetry {asym:.3e}")
    return a


def is_unitary(u: np.ndarray, atol: float = tol.UNITARY_ATOL) -> bool:
    u = np.asarray(u)
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= atol)


def eigh(a: np.ndarray) -> EigenSystem:
    """Hermitian eigendecomposition with ascending eigenvalues.

    Raises NonHermitianInput if the symmetry check fails.
    """
    a = check_hermitian(a)
    w, v = np.linalg.eigh(a)
    return EigenSystem(w, v)


def expm_i(a: np.ndarray, t: float, system: EigenSystem = None) -> np.ndarray:
    """exp(-i t a) for Hermitian a, via V exp(-i t lambda) V^dag.

    A precomputed EigenSystem of a may be supplied to skip the
    diagonalization.
    """
    if system is None:
        system = eigh(a)
    w, v = system
    phases = np.exp(-1j * t * w)
    return (v * phases) @ v.conj().T


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """One Haar-distributed unitary: QR of a complex Ginibre matrix with
    the R diagonal phase corrected."""
    return haar_unitaries(dim, 1, rng)[0]


def haar_unitaries(dim: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Batch of `size` independent Haar unitaries, shape (size, dim, dim)."""
    if dim < 1:
        raise DimensionMismatch("dim must be >= 1")
    z = rng.standard_normal((size, dim, dim)) + 1j * rng.standard_normal((size, dim, dim))
    q, r = np.linalg.qr(z)
    d = np.einsum("...ii->...i", r)
    q *= (d / np.abs(d))[:, None, :]
    return q


@dataclass(frozen=True)
class PauliString:
    """One weighted Pauli product: coefficient * prod_site sigma_axis(site).

    factors is a tuple of (site, axis) with axis in {"x", "y", "z", "i"};
    an empty factors tuple denotes the identity term.
    """

    coefficient: float
    factors: Tuple[Tuple[int, str], ...] = ()

    def __post_init__(self):
        sites = [s for s, _ in self.factors]
        if len(set(sites)) != len(sites):
            raise IndexOutOfRange(f"duplicate site in {self.factors}")
        for site, axis in self.factors:
            if site < 0:
                raise IndexOutOfRange(f"negative site index {site}")
            if axis not in ("x", "y", "z", "i", "identity"):
                raise IndexOutOfRange(f"unknown axis {axis!r}")


def pauli_expand(terms: Sequence[PauliString], n: int) -> np.ndarray:
    """Expand a list of PauliStrings into a dense 2^n x 2^n Hermitian matrix."""
    dim = 2 ** n
    out = np.zeros((dim, dim), dtype=complex)
    for term in terms:
        axes = ["i"] * n
        for site, axis in term.factors:
            if site >= n:
                raise IndexOutOfRange(f"site {site} >= n = {n}")
            axes[site] = "i" if axis == "identity" else axis
        factor = np.array([[term.coefficient]], dtype=complex)
        for axis in axes:
            factor = np.kron(factor, PAULI[axis])
        out += factor
    return out


def basis_state(dim: int, index: int) -> np.ndarray:
    state = np.zeros(dim, dtype=complex)
    state[index] = 1.0
    return state


def zero_state(n: int) -> np.ndarray:
    """|0...0> on n qubits."""
    return basis_state(2 ** n, 0)


def ghz_state(n: int) -> np.ndarray:
    """(|0...0> + |1...1>)/sqrt(2) on n qubits."""
    state = np.zeros(2 ** n, dtype=complex)
    state[0] = state[-1] = 1 / np.sqrt(2)
    return state


def check_state(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {psi.shape}")
    if abs(np.linalg.norm(psi) - 1.0) > tol.STATE_NORM_ATOL * 10:
        raise DimensionMismatch(f"state norm {np.linalg.norm(psi):.12f} != 1")
    return psi


def reduced_density(psi: np.ndarray, n: int, site: int) -> np.ndarray:
    """Single-site 2x2 reduced density matrix of an n-qubit pure state."""
    if psi.shape[0] != 2 ** n:
        raise DimensionMismatch(f"state dim {psi.shape[0]} != 2^{n}")
    if not 0 <= site < n:
        raise IndexOutOfRange(f"site {site} outside 0..{n - 1}")
    tensor = psi.reshape((2,) * n)
    tensor = np.moveaxis(tensor, site, 0).reshape(2, -1)
    return tensor @ tensor.conj().T


def entanglement_entropy(psi: np.ndarray, n: int) -> float:
    """Average single-qubit von Neumann entropy in bits (base-2 log):
    -(1/n) sum_i Tr[rho_i log2 rho_i]. A maximally entangled qubit
    contributes exactly 1."""
    psi = check_state(psi)
    if psi.shape[0] != 2 ** n:
        raise DimensionMismatch(f"state dim {psi.shape[0]} != 2^{n}")
    total = 0.0
    for site in range(n):
        probs = np.linalg.eigvalsh(reduced_density(psi, n, site))
        probs = probs[probs > 1e-15]
        total += float(-np.sum(probs * np.log2(probs)))
    return total / n


def hs_norm(a: np.ndarray) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.linalg.norm(a))
