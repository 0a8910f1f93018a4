import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rallyqoc import pulses, qcore
from rallyqoc.errors import ConstraintViolation, DimensionMismatch
from rallyqoc.hamiltonians import AmplitudeDomain, build_ising
from rallyqoc.pulses import (DcrabBasis, PropagatorCache, PulseSequence,
                             RiseProfile, dcrab_field, grape_propagator,
                             rally_a_propagator, rally_t_propagator,
                             rally_t_with_bandwidth, rise_propagator)

import dataclasses


def discrete_ising2():
    sys = build_ising(2, [0.8, 0.7], [0.6, 0.5])
    return dataclasses.replace(
        sys, amplitude_domain=AmplitudeDomain.discrete(1.0, -1.0))


class TestRallyT:
    def test_zero_durations_identity(self, ising2):
        seq = PulseSequence.rally_t(ising2, 3, 2, seed=0,
                                    durations=np.zeros(3))
        u = rally_t_propagator(ising2, seq)
        assert np.max(np.abs(u - np.eye(4))) <= 1e-12

    def test_single_drift_pulse(self, ising2):
        seq = PulseSequence("rally_t", 1, 1, [0.9], np.array([[0.0]]))
        u = rally_t_propagator(ising2, seq)
        assert np.max(np.abs(u - qcore.expm_i(ising2.drift, 0.9))) <= 1e-12

    def test_two_by_two_matches_bruteforce(self):
        sys = build_ising(1, [0.7], [0.4])
        seq = PulseSequence.rally_t(sys, 2, 2, seed=3)
        got = rally_t_propagator(sys, seq)
        want = oracles.brute_chain(sys.drift, sys.control,
                                   seq.pulse_amplitudes(),
                                   seq.pulse_durations())
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_cache_transparency(self, ising2):
        seq = PulseSequence.rally_t(ising2, 4, 3, seed=5)
        cache = PropagatorCache(ising2)
        cache.stack(seq.pulse_amplitudes())
        with_cache = rally_t_propagator(ising2, seq, cache)
        without = rally_t_propagator(ising2, seq)
        assert np.max(np.abs(with_cache - without)) <= 1e-12

    def test_negative_duration_rejected(self, ising2):
        seq = PulseSequence.rally_t(ising2, 2, 1, seed=0,
                                    durations=[0.5, -0.1])
        with pytest.raises(ConstraintViolation):
            rally_t_propagator(ising2, seq)

    def test_min_pulse_duration_enforced(self):
        sys = dataclasses.replace(build_ising(2, [1, 1], [1, 1]),
                                  min_pulse_duration=0.1)
        seq = PulseSequence.rally_t(sys, 1, 2, seed=0, durations=[0.15])
        # 0.15 / 2 sub-pulse < 0.1 minimum
        with pytest.raises(ConstraintViolation):
            rally_t_propagator(sys, seq)

    def test_layer_ordering_convention(self, ising2):
        """Layer 1 acts first: the total equals U_L ... U_1, and the
        reversed, conjugate-transposed layer product gives the adjoint."""
        seq = PulseSequence.rally_t(ising2, 3, 2, seed=8)
        layer_ops = []
        for layer in range(3):
            sub = PulseSequence("rally_t", 1, 2,
                                seq.parameters[layer:layer + 1],
                                seq.amplitudes[layer:layer + 1])
            layer_ops.append(rally_t_propagator(ising2, sub))
        total = rally_t_propagator(ising2, seq)
        assert np.max(np.abs(
            total - layer_ops[2] @ layer_ops[1] @ layer_ops[0])) <= 1e-12
        reversed_dagger = (layer_ops[0].conj().T @ layer_ops[1].conj().T
                           @ layer_ops[2].conj().T)
        assert np.max(np.abs(reversed_dagger - total.conj().T)) <= 1e-12

    def test_duration_continuity_bound(self, ising2):
        seq = PulseSequence.rally_t(ising2, 3, 2, seed=2)
        base = rally_t_propagator(ising2, seq)
        delta = 1e-6
        bumped = np.array(seq.parameters, dtype=float)
        bumped[1] += delta
        shifted = rally_t_propagator(ising2, seq.with_parameters(bumped))
        layer_norm = max(
            np.linalg.norm(ising2.hamiltonian(a), 2)
            for a in seq.amplitudes[1])
        assert np.linalg.norm(shifted - base, 2) <= \
            layer_norm * delta * (1 + 1e-6)

    def test_total_duration_accessor(self, ising2):
        seq = PulseSequence.rally_t(ising2, 4, 2, seed=1)
        assert seq.total_duration() == float(np.sum(seq.parameters))

    def test_initial_durations_uniform_unit_interval(self, ising2):
        seq = PulseSequence.rally_t(ising2, 200, 1, seed=42)
        assert np.all((seq.parameters >= 0) & (seq.parameters <= 1))
        assert 0.3 <= seq.parameters.mean() <= 0.7

    def test_total_duration_rescale(self, ising2):
        seq = PulseSequence.rally_t(ising2, 10, 2, seed=4,
                                    total_duration=55.0)
        assert seq.total_duration() == pytest.approx(55.0)

    def test_amplitudes_frozen_in_domain(self):
        sys = discrete_ising2()
        seq = PulseSequence.rally_t(sys, 6, 4, seed=9)
        assert set(np.unique(seq.amplitudes)) <= {-1.0, 1.0}


class TestRallyA:
    def test_zero_scales_pure_drift(self, ising2):
        seq = PulseSequence.rally_a(ising2, 3, 2, dt=0.4, seed=0,
                                    scales=np.zeros(3))
        got = rally_a_propagator(ising2, seq)
        want = qcore.expm_i(ising2.drift, 3 * 2 * 0.4)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_single_pulse_layers_equal_grape(self, ising2):
        seq = PulseSequence.rally_a(ising2, 5, 1, dt=0.3, seed=7)
        effective = seq.parameters * seq.amplitudes.ravel()
        got = rally_a_propagator(ising2, seq)
        want = grape_propagator(ising2, effective, 0.3)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_two_by_two_matches_bruteforce(self):
        sys = build_ising(1, [0.5], [0.9])
        seq = PulseSequence.rally_a(sys, 2, 2, dt=0.6, seed=1)
        got = rally_a_propagator(sys, seq)
        scaled = (seq.parameters[:, None] * seq.amplitudes).ravel()
        want = oracles.brute_chain(sys.drift, sys.control, scaled,
                                   np.full(4, 0.6))
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_scale_range_enforced(self, ising2):
        seq = PulseSequence.rally_a(ising2, 2, 1, dt=0.5, seed=0,
                                    scales=[0.5, 1.2])
        with pytest.raises(ConstraintViolation):
            rally_a_propagator(ising2, seq)

    def test_total_duration_accessor(self, ising2):
        seq = PulseSequence.rally_a(ising2, 4, 3, dt=0.25, seed=2)
        assert seq.total_duration() == 4 * 3 * 0.25


class TestGrape:
    def test_empty_sequence_identity(self, ising2):
        assert np.array_equal(grape_propagator(ising2, [], 0.5), np.eye(4))

    def test_single_step(self, ising2):
        got = grape_propagator(ising2, [0.3], 0.5)
        want = qcore.expm_i(ising2.hamiltonian(0.3), 0.5)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_constant_amplitude_semigroup(self, ising2):
        got = grape_propagator(ising2, np.full(7, 0.4), 0.3)
        want = qcore.expm_i(ising2.hamiltonian(0.4), 7 * 0.3)
        assert np.max(np.abs(got - want)) <= 1e-10

    def test_domain_enforced(self, ising2):
        with pytest.raises(ConstraintViolation):
            grape_propagator(ising2, [0.2, 1.5], 0.5)

    def test_nonpositive_dt_rejected(self, ising2):
        with pytest.raises(ConstraintViolation):
            grape_propagator(ising2, [0.2], 0.0)


class TestDcrab:
    def test_zero_coefficients_zero_field(self):
        basis = DcrabBasis((0.8, 1.7), total_time=10.0, n_steps=16)
        field = dcrab_field(np.zeros(basis.n_coefficients), basis)
        assert np.array_equal(field, np.zeros(16))

    def test_single_cosine(self):
        basis = DcrabBasis((0.9,), total_time=10.0, n_steps=32)
        coeffs = np.array([0.0, 1.0, 0.0])
        field = dcrab_field(coeffs, basis)
        assert np.allclose(field, np.cos(0.9 * basis.grid()), atol=1e-12)

    def test_dressing_identity(self):
        basis = DcrabBasis((0.5, 1.1), total_time=8.0, n_steps=20)
        rng = np.random.default_rng(0)
        previous = rng.uniform(-1, 1, 20)
        coeffs = np.zeros(basis.n_coefficients)
        coeffs[0] = 1.0
        assert np.array_equal(dcrab_field(coeffs, basis, previous), previous)

    def test_clipping_to_domain(self):
        basis = DcrabBasis((0.4,), total_time=5.0, n_steps=10)
        domain = AmplitudeDomain.interval(-0.5, 0.5)
        field = dcrab_field([0.0, 3.0, 0.0], basis, domain=domain)
        assert np.all(np.abs(field) <= 0.5)

    def test_random_frequencies_in_range(self):
        rng = np.random.default_rng(3)
        basis = DcrabBasis.random(4, 2.5, 10.0, 16, rng)
        freqs = np.array(basis.frequencies)
        assert np.all((freqs > 0) & (freqs <= 2.5))
        assert basis.n_coefficients == 9

    def test_coefficient_count_checked(self):
        basis = DcrabBasis((0.4,), total_time=5.0, n_steps=10)
        with pytest.raises(DimensionMismatch):
            dcrab_field([1.0, 2.0], basis)


class TestRiseProfile:
    def test_constant_field_rise(self, ising2):
        profile = RiseProfile(tau_rise=0.8, n_int=64, epsilon=1e-10)
        got = rise_propagator(ising2, 0.3, 0.3, profile)
        want = qcore.expm_i(ising2.hamiltonian(0.3), 0.8)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_half_epsilon_single_midpoint(self, ising2):
        profile = RiseProfile(tau_rise=0.5, n_int=1, epsilon=0.499999)
        got = rise_propagator(ising2, -1.0, 1.0, profile)
        want = qcore.expm_i(ising2.hamiltonian(0.0), 0.5)
        assert np.max(np.abs(got - want)) <= 1e-5

    def test_default_profile_converged(self):
        sys = build_ising(1, [0.9], [0.5])
        base = RiseProfile()
        assert (base.tau_rise, base.n_int, base.epsilon) == (10.0, 100, 1e-10)
        fine = RiseProfile(tau_rise=10.0, n_int=200, epsilon=1e-10)
        a = rise_propagator(sys, -1.0, 1.0, base)
        b = rise_propagator(sys, -1.0, 1.0, fine)
        assert np.max(np.abs(a - b)) < 1e-6

    def test_epsilon_range_validated(self):
        with pytest.raises(ConstraintViolation):
            RiseProfile(epsilon=0.5)
        with pytest.raises(ConstraintViolation):
            RiseProfile(n_int=0)

    def test_sigmoid_endpoints(self):
        profile = RiseProfile(tau_rise=2.0, n_int=1000, epsilon=1e-10)
        field = profile.field(-1.0, 1.0)
        assert abs(field[0] - (-1.0)) < 1e-2
        assert abs(field[-1] - 1.0) < 1e-2
        assert np.all(np.diff(field) >= 0)


class TestBandwidth:
    def test_equal_amplitudes_collapse_to_constant_field(self):
        sys = discrete_ising2()
        profile = RiseProfile(tau_rise=0.3, n_int=50, epsilon=1e-10)
        durations = [0.7, 0.4]
        seq = PulseSequence("rally_t", 2, 2, durations,
                            np.ones((2, 2)), bandwidth=profile)
        got = rally_t_with_bandwidth(sys, seq)
        n_boundaries = seq.n_pulses - 1
        total = sum(durations) + n_boundaries * 0.3
        want = qcore.expm_i(sys.hamiltonian(1.0), total)
        assert np.max(np.abs(got - want)) <= 1e-10
        assert seq.physical_duration() == pytest.approx(total)

    def test_two_pulse_segment_oracle(self):
        sys = build_ising(1, [0.6], [0.8])
        profile = RiseProfile(tau_rise=0.2, n_int=40, epsilon=1e-8)
        seq = PulseSequence("rally_t", 2, 1, [0.5, 0.9],
                            np.array([[1.0], [-1.0]]), bandwidth=profile)
        got = rally_t_with_bandwidth(sys, seq)
        h0, hc = sys.drift, sys.control
        segments = oracles.brute_step(h0, hc, 1.0, 0.5)
        for u_mid in profile.field(1.0, -1.0):
            segments = oracles.brute_step(h0, hc, u_mid, 0.2 / 40) @ segments
        segments = oracles.brute_step(h0, hc, -1.0, 0.9) @ segments
        assert np.max(np.abs(got - segments)) <= 1e-12

    def test_discrete_set_caches_at_most_two_rises(self):
        sys = discrete_ising2()
        profile = RiseProfile(tau_rise=0.1, n_int=20, epsilon=1e-8)
        seq = PulseSequence.rally_t(sys, 8, 4, seed=11, bandwidth=profile)
        cache = PropagatorCache(sys)
        rally_t_with_bandwidth(sys, seq, cache=cache)
        assert cache.n_rises <= 2


class TestPropagatorCache:
    def test_eigensystems_reconstruct(self, ising2):
        cache = PropagatorCache(ising2)
        for u in (-1.0, 0.0, 0.5):
            w, v = cache.eigensystem(u)
            h = ising2.hamiltonian(u)
            assert np.max(np.abs((v * w) @ v.conj().T - h)) <= \
                1e-10 * (1 + np.max(np.abs(h)))

    def test_discrete_amplitudes_deduplicate(self):
        sys = discrete_ising2()
        cache = PropagatorCache(sys)
        seq = PulseSequence.rally_t(sys, 20, 5, seed=0)
        cache.stack(seq.pulse_amplitudes())
        assert cache.n_eigensystems <= 2


class TestSerialization:
    @pytest.mark.parametrize("kind", ["rally_t", "rally_a", "grape"])
    def test_round_trip_reproduces_propagator(self, ising2, kind):
        if kind == "rally_t":
            seq = PulseSequence.rally_t(
                ising2, 3, 2, seed=5,
                bandwidth=RiseProfile(tau_rise=0.2, n_int=10, epsilon=1e-6))
            back = PulseSequence.from_json(seq.to_json())
            a = rally_t_with_bandwidth(ising2, seq)
            b = rally_t_with_bandwidth(ising2, back)
        elif kind == "rally_a":
            seq = PulseSequence.rally_a(ising2, 3, 2, dt=0.4, seed=5)
            back = PulseSequence.from_json(seq.to_json())
            a = rally_a_propagator(ising2, seq)
            b = rally_a_propagator(ising2, back)
        else:
            seq = PulseSequence.grape(4, 0.3,
                                      np.array([0.1, -0.2, 0.4, 0.0]))
            back = PulseSequence.from_json(seq.to_json())
            a = grape_propagator(ising2, seq.parameters, seq.dt)
            b = grape_propagator(ising2, back.parameters, back.dt)
        assert np.array_equal(back.parameters, seq.parameters)
        assert np.array_equal(back.amplitudes, seq.amplitudes)
        assert np.array_equal(a, b)


@settings(deadline=None, max_examples=20)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_rally_t_matches_bruteforce_any_shape(n_layers, layer_size, seed):
    sys = build_ising(2, [0.8, 0.7], [0.6, 0.5])
    seq = PulseSequence.rally_t(sys, n_layers, layer_size, seed)
    got = rally_t_propagator(sys, seq)
    want = oracles.brute_chain(sys.drift, sys.control,
                               seq.pulse_amplitudes(), seq.pulse_durations())
    assert np.max(np.abs(got - want)) <= 1e-12
    assert qcore.is_unitary(got)
