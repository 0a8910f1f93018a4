import numpy as np
import pytest

import oracles
from rallyqoc import qcore
from rallyqoc.errors import DimensionMismatch, UnsupportedSequence
from rallyqoc.fom import (FigureOfMerit, composite, energy, state_infidelity,
                          unitary_infidelity)
from rallyqoc.hamiltonians import data_path, load_molecular_hamiltonian
from rallyqoc.qcore import basis_state, expm_i, ghz_state, haar_unitary

from test_qcore import H2_GROUND_ENERGY


def h2_path() -> str:
    return str(data_path("h2_hamiltonian.txt"))


class TestUnitaryInfidelity:
    def test_self_overlap_zero(self, rng):
        u = haar_unitary(8, rng)
        assert unitary_infidelity(u, u) == pytest.approx(0.0, abs=1e-12)

    def test_global_phase_zero(self):
        for phi in (0.0, 0.3, np.pi, -2.2):
            v = np.exp(1j * phi) * np.eye(4)
            assert unitary_infidelity(np.eye(4), v) <= 1e-12

    def test_traceless_target_is_one(self):
        assert unitary_infidelity(oracles.SX, np.eye(2)) == \
            pytest.approx(1.0, abs=1e-12)

    def test_symmetric_in_arguments(self, rng):
        u, v = haar_unitary(4, rng), haar_unitary(4, rng)
        assert unitary_infidelity(u, v) == pytest.approx(
            unitary_infidelity(v, u), abs=1e-12)

    def test_range_and_phase_invariance(self, rng):
        for _ in range(20):
            u, v = haar_unitary(8, rng), haar_unitary(8, rng)
            j = unitary_infidelity(u, v)
            assert -1e-12 <= j <= 1 + 1e-12
            phi = rng.uniform(0, 2 * np.pi)
            assert unitary_infidelity(np.exp(1j * phi) * u, v) == \
                pytest.approx(j, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            unitary_infidelity(np.eye(2), np.eye(4))


class TestStateInfidelity:
    def test_identity_on_target_zero(self, rng):
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        assert state_infidelity(psi, np.eye(4), psi) <= 1e-12

    def test_ghz_overlap_half(self):
        for n in (1, 2, 3, 5):
            psi0 = basis_state(2 ** n, 0)
            j = state_infidelity(psi0, np.eye(2 ** n), ghz_state(n))
            assert j == pytest.approx(0.5, abs=1e-12)

    def test_single_qubit_rotation_closed_form(self):
        theta = np.pi / 4
        u = expm_i(np.array([[0, -1j], [1j, 0]]), theta)
        psi0 = basis_state(2, 0)
        target = basis_state(2, 1)
        got = state_infidelity(psi0, u, target)
        amp = (u @ psi0)[1]
        assert got == pytest.approx(1 - abs(amp) ** 2, abs=1e-12)
        assert got == pytest.approx(1 - np.sin(theta) ** 2, abs=1e-12)

    def test_phase_invariance_and_range(self, rng):
        psi0 = basis_state(8, 0)
        target = ghz_state(3)
        for _ in range(20):
            u = haar_unitary(8, rng)
            j = state_infidelity(psi0, u, target)
            assert -1e-12 <= j <= 1 + 1e-12
            phi = rng.uniform(0, 2 * np.pi)
            assert state_infidelity(psi0, np.exp(1j * phi) * u, target) == \
                pytest.approx(j, abs=1e-12)

    def test_unnormalized_state_rejected(self):
        with pytest.raises(DimensionMismatch):
            state_infidelity(np.array([1.0, 1.0]), np.eye(2),
                             basis_state(2, 0))


class TestEnergy:
    def test_identity_observable(self, rng):
        psi0 = basis_state(4, 2)
        assert energy(psi0, haar_unitary(4, rng), np.eye(4)) == \
            pytest.approx(1.0, abs=1e-12)

    def test_ground_rotation_reaches_ground_energy(self, rng):
        h = oracles.random_hermitian(8, rng)
        w, v = np.linalg.eigh(h)
        psi0 = basis_state(8, 0)
        # the eigenvector matrix is unitary and maps |0> to the ground state
        assert energy(psi0, v, h) == pytest.approx(w[0], abs=1e-10)

    def test_h2_reference_diagonal(self):
        h = load_molecular_hamiltonian(h2_path())
        psi0 = basis_state(16, 0)
        assert energy(psi0, np.eye(16), h) == pytest.approx(
            float(h[0, 0].real), abs=1e-12)

    def test_variational_bound(self, rng):
        h = load_molecular_hamiltonian(h2_path())
        psi0 = basis_state(16, 0)
        for _ in range(20):
            u = haar_unitary(16, rng)
            assert energy(psi0, u, h) >= H2_GROUND_ENERGY - 1e-10

    def test_spectrum_range(self, rng):
        h = oracles.random_hermitian(4, rng)
        w = np.linalg.eigvalsh(h)
        psi0 = basis_state(4, 0)
        for _ in range(20):
            e = energy(psi0, haar_unitary(4, rng), h)
            assert w[0] - 1e-12 <= e <= w[-1] + 1e-12


class TestComposite:
    def test_zero_weight_unchanged(self):
        assert composite(0.37, np.array([1.0, 2.0, 3.0]), 0.0) == 0.37

    def test_weighted_penalty(self):
        durations = np.full(10, 5.5)
        assert composite(0.1, durations, 1e-4) == \
            pytest.approx(0.1 + 0.3025, abs=1e-15)

    def test_zero_durations(self):
        assert composite(0.42, np.zeros(6), 1e-3) == 0.42

    def test_negative_weight_rejected(self):
        with pytest.raises(DimensionMismatch):
            FigureOfMerit("unitary_infidelity", np.eye(2),
                          penalty_weight=-1.0)


class TestFigureOfMerit:
    def test_unknown_kind(self):
        with pytest.raises(UnsupportedSequence):
            FigureOfMerit("maximize_vibes", np.eye(2))

    def test_nonunitary_target_rejected(self):
        with pytest.raises(DimensionMismatch):
            FigureOfMerit("unitary_infidelity", np.ones((2, 2)))

    def test_state_kinds_require_psi0(self):
        with pytest.raises(DimensionMismatch):
            FigureOfMerit("state_infidelity", ghz_state(2))
        with pytest.raises(DimensionMismatch):
            FigureOfMerit("energy", np.eye(4))

    def test_value_matches_free_functions(self, rng):
        u = haar_unitary(4, rng)
        target = haar_unitary(4, rng)
        f = FigureOfMerit("unitary_infidelity", target)
        assert f.value(u) == unitary_infidelity(u, target)
        psi0 = basis_state(4, 0)
        f2 = FigureOfMerit("state_infidelity", ghz_state(2), psi0=psi0)
        assert f2.value(u) == state_infidelity(psi0, u, ghz_state(2))
        h = oracles.random_hermitian(4, rng)
        f3 = FigureOfMerit("energy", h, psi0=psi0)
        assert f3.value(u) == energy(psi0, u, h)

    def test_composite_sequence_value(self, ising2):
        from rallyqoc.pulses import PulseSequence
        seq = PulseSequence.rally_t(ising2, 3, 1, seed=0,
                                    durations=[1.0, 2.0, 3.0])
        f = FigureOfMerit("unitary_infidelity", np.eye(4),
                          penalty_weight=0.01)
        u = np.eye(4)
        assert f.sequence_value(u, seq) == pytest.approx(
            f.value(u) + 0.01 * 36.0, abs=1e-12)
