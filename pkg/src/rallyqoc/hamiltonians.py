"""Control-system constructors: Ising chain, globally driven Rydberg array,
and molecular target Hamiltonians from Pauli-string files.

Unit convention: durations in microseconds; Hamiltonian entries in rad/us,
numerically equal to quoted MHz figures (so Rabi frequency 1 MHz enters as
1.0 and a detuning bound of 10 MHz as 10.0).
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from . import tolerances as tol
from .errors import (DimensionMismatch, GeometryViolation, LengthMismatch,
                     ParseError)
from .qcore import PauliString, check_hermitian, pauli_expand


@dataclass(frozen=True)
class AmplitudeDomain:
    """Allowed control-amplitude values: a continuous interval or a finite set.

    For discrete sets, `values` holds the set and lower/upper its hull, so
    bound-based checks remain meaningful.
    """

    lower: float
    upper: float
    values: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.lower > self.upper:
            raise DimensionMismatch("amplitude domain lower > upper")
        if self.values is not None:
            if len(self.values) == 0:
                raise DimensionMismatch("amplitude domain empty")
            if min(self.values) < self.lower or max(self.values) > self.upper:
                raise DimensionMismatch("discrete values exit the declared bound")

    @classmethod
    def interval(cls, lower: float, upper: float) -> "AmplitudeDomain":
        return cls(float(lower), float(upper))

    @classmethod
    def discrete(cls, *values: float) -> "AmplitudeDomain":
        vals = tuple(float(v) for v in values)
        return cls(min(vals), max(vals), vals)

    @property
    def is_discrete(self) -> bool:
        return self.values is not None

    def contains(self, u: float, atol: float = 1e-12) -> bool:
        return self.lower - atol <= u <= self.upper + atol

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Uniform draw over the set (discrete) or the interval (continuous)."""
        if self.is_discrete:
            return rng.choice(np.array(self.values), size=size)
        return rng.uniform(self.lower, self.upper, size=size)


@dataclass(frozen=True)
class ControlSystem:
    """The (H0, Hc, amplitude constraint) triple all pulse sequences act on."""

    drift: np.ndarray
    control: np.ndarray
    amplitude_domain: AmplitudeDomain
    min_pulse_duration: float = 0.0
    unit_note: str = "rad/us; durations in us"

    def __post_init__(self):
        drift = check_hermitian(self.drift)
        control = check_hermitian(self.control)
        if drift.shape != control.shape:
            raise DimensionMismatch(
                f"drift {drift.shape} vs control {control.shape}")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "control", control)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    def hamiltonian(self, u: float) -> np.ndarray:
        """H0 + u * Hc."""
        return self.drift + u * self.control


def build_ising(n: int, hx: Sequence[float], hz: Sequence[float],
                amplitude_domain: AmplitudeDomain = None) -> ControlSystem:
    """Open-boundary spin chain: drift sum_i (hx_i sx_i + hz_i sz_i),
    control sum_{i<n-1} sx_i sx_{i+1}.

    The amplitude domain defaults to the continuous interval [-1, 1];
    pass AmplitudeDomain.discrete(1.0, -1.0) for the two-level drive.
    """
    hx = np.asarray(hx, dtype=float)
    hz = np.asarray(hz, dtype=float)
    if hx.shape != (n,) or hz.shape != (n,):
        raise LengthMismatch(f"field arrays must have length {n}")
    terms = [PauliString(hx[i], ((i, "x"),)) for i in range(n)]
    terms += [PauliString(hz[i], ((i, "z"),)) for i in range(n)]
    drift = pauli_expand(terms, n)
    bonds = [PauliString(1.0, ((i, "x"), (i + 1, "x"))) for i in range(n - 1)]
    control = pauli_expand(bonds, n)
    if amplitude_domain is None:
        amplitude_domain = AmplitudeDomain.interval(-1.0, 1.0)
    return ControlSystem(drift, control, amplitude_domain)


def random_ising(n: int, rng: np.random.Generator,
                 amplitude_domain: AmplitudeDomain = None) -> ControlSystem:
    """Ising chain with hx, hz drawn uniformly from [0.5, 1], which avoids
    accidental symmetries and yields full controllability."""
    hx = rng.uniform(0.5, 1.0, n)
    hz = rng.uniform(0.5, 1.0, n)
    return build_ising(n, hx, hz, amplitude_domain)


@dataclass(frozen=True)
class RydbergGeometry:
    """2-D atom positions (um) with fixed global Rabi frequency (MHz) and
    van der Waals coefficient C6 (GHz um^6)."""

    positions: Tuple[Tuple[float, float], ...]
    rabi_frequency: float = tol.RYDBERG_RABI_MHZ
    c6: float = tol.RYDBERG_C6 / 1e3  # GHz um^6

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positions)
        object.__setattr__(self, "positions", pos)
        n = len(pos)
        for i in range(n):
            for j in range(i + 1, n):
                if self.distance(i, j) < tol.MIN_ATOM_DISTANCE_UM - 1e-12:
                    raise GeometryViolation(
                        f"atoms {i},{j} closer than {tol.MIN_ATOM_DISTANCE_UM} um")

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    def distance(self, i: int, j: int) -> float:
        (xi, yi), (xj, yj) = self.positions[i], self.positions[j]
        return math.hypot(xi - xj, yi - yj)

    def coupling(self, i: int, j: int) -> float:
        """J_ij = C6 / r_ij^6 in MHz (C6 converted from GHz um^6)."""
        return self.c6 * 1e3 / self.distance(i, j) ** 6


def build_rydberg(geometry: RydbergGeometry) -> ControlSystem:
    """Globally driven Rydberg array.

    drift = sum_{i<j} J_ij n_i n_j + Omega sum_i sx_i with n = (1 - sz)/2;
    control = -sum_i sz_i (detuning term). Amplitude domain [-10, 10] MHz,
    minimum pulse duration 4 ns.
    """
    n = geometry.n_atoms
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            j_ij = geometry.coupling(i, j)
            # n_i n_j = (1 - sz_i)(1 - sz_j)/4
            terms.append(PauliString(j_ij / 4))
            terms.append(PauliString(-j_ij / 4, ((i, "z"),)))
            terms.append(PauliString(-j_ij / 4, ((j, "z"),)))
            terms.append(PauliString(j_ij / 4, ((i, "z"), (j, "z"))))
    terms += [PauliString(geometry.rabi_frequency, ((i, "x"),)) for i in range(n)]
    drift = pauli_expand(terms, n)
    control = pauli_expand([PauliString(-1.0, ((i, "z"),)) for i in range(n)], n)
    bound = tol.RYDBERG_DETUNING_BOUND_MHZ
    return ControlSystem(drift, control,
                         AmplitudeDomain.interval(-bound, bound),
                         min_pulse_duration=tol.MIN_PULSE_DURATION_US,
                         unit_note="MHz as rad/us; positions um; durations us")


def parse_pauli_terms(text: str):
    """Parse the Pauli-string Hamiltonian format.

    One term per line: `<coeff> <axis><site> [<axis><site> ...]`, identity as
    `<coeff> I`, `#` comments. Returns (terms, n) with n inferred from the
    largest site index (at least 1).
    """
    terms = []
    max_site = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            coeff = float(parts[0])
        except ValueError:
            raise ParseError(f"bad coefficient {parts[0]!r}", lineno)
        factors = []
        for token in parts[1:]:
            if token in ("I", "i", "1"):
                continue
            axis = token[0].lower()
            if axis not in ("x", "y", "z"):
                raise ParseError(f"bad factor {token!r}", lineno)
            try:
                site = int(token[1:])
            except ValueError:
                raise ParseError(f"bad site index in {token!r}", lineno)
            if site < 0:
                raise ParseError(f"negative site index in {token!r}", lineno)
            factors.append((site, axis))
            max_site = max(max_site, site)
        sites = [s for s, _ in factors]
        if len(set(sites)) != len(sites):
            raise ParseError("duplicate site in term", lineno)
        terms.append(PauliString(coeff, tuple(factors)))
    if not terms:
        raise ParseError("no terms found", None)
    return terms, max_site + 1


def load_molecular_hamiltonian(path) -> np.ndarray:
    """Load a molecular target Hamiltonian from a Pauli-string file."""
    text = Path(path).read_text()
    terms, n = parse_pauli_terms(text)
    return pauli_expand(terms, n)


def load_geometry(path) -> RydbergGeometry:
    """Load an atom geometry CSV: `x_um,y_um` rows, with optional header
    comments `# omega_mhz: <v>` and `# c6_ghz_um6: <v>`."""
    omega = tol.RYDBERG_RABI_MHZ
    c6 = tol.RYDBERG_C6 / 1e3
    positions = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if ":" in body:
                key, value = (s.strip() for s in body.split(":", 1))
                if key == "omega_mhz":
                    omega = float(value)
                elif key == "c6_ghz_um6":
                    c6 = float(value)
            continue
        if not line or line.startswith("x_um"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected `x_um,y_um`, got {line!r}", lineno)
        try:
            positions.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ParseError(f"bad coordinate in {line!r}", lineno)
    if not positions:
        raise ParseError("no atom positions found", None)
    return RydbergGeometry(tuple(positions), rabi_frequency=omega, c6=c6)


def data_path(name: str) -> Path:
    """Path to a data file shipped with the package."""
    return Path(__file__).parent / "data" / name
