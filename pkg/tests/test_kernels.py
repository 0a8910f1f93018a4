import subprocess
import sys

import numpy as np
import pytest

import oracles
from rallyqoc import _kernels
from rallyqoc._kernels import chain_numpy
from rallyqoc.qcore import eigh, is_unitary


def _random_inputs(rng, dim=4, pulses=6, batch=3):
    h0 = oracles.random_hermitian(dim, rng)
    hc = oracles.random_hermitian(dim, rng)
    u = rng.uniform(-1, 1, (batch, pulses))
    s = rng.uniform(0, 2, (batch, pulses))
    return h0, hc, u, s


def _cached_inputs(rng, dim=4, pulses=5, batch=3):
    vs = np.stack([eigh(oracles.random_hermitian(dim, rng)).eigenvectors
                   for _ in range(pulses)])
    lams = rng.normal(size=(pulses, dim))
    s = rng.uniform(0, 2, (batch, pulses))
    return vs, lams, s


class TestNumpyKernelsAgainstOracle:
    def test_chain_fresh_matches_scipy_expm(self, rng):
        h0, hc, u, s = _random_inputs(rng)
        got = chain_numpy.chain_fresh(h0, hc, u[0], s[0])
        want = oracles.brute_chain(h0, hc, u[0], s[0])
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_first_pulse_acts_first(self, rng):
        h0, hc, u, s = _random_inputs(rng, pulses=2)
        got = chain_numpy.chain_fresh(h0, hc, u[0], s[0])
        step0 = oracles.brute_step(h0, hc, u[0][0], s[0][0])
        step1 = oracles.brute_step(h0, hc, u[0][1], s[0][1])
        assert np.max(np.abs(got - step1 @ step0)) <= 1e-12

    def test_batch_rows_independent(self, rng):
        h0, hc, u, s = _random_inputs(rng)
        batch = chain_numpy.chain_fresh_batch(h0, hc, u, s)
        for b in range(u.shape[0]):
            single = chain_numpy.chain_fresh(h0, hc, u[b], s[b])
            assert np.max(np.abs(batch[b] - single)) <= 1e-13

    def test_cached_consistent_with_fresh(self, rng):
        h0, hc, u, s = _random_inputs(rng, batch=1)
        systems = [eigh(h0 + x * hc) for x in u[0]]
        vs = np.stack([sy.eigenvectors for sy in systems])
        lams = np.stack([sy.eigenvalues for sy in systems])
        got = chain_numpy.chain_cached(vs, lams, s[0])
        want = chain_numpy.chain_fresh(h0, hc, u[0], s[0])
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_cached_apply_matches_matrix_action(self, rng):
        vs, lams, s = _cached_inputs(rng, batch=1)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        got = chain_numpy.chain_cached_apply(vs, lams, s[0], psi)
        want = chain_numpy.chain_cached(vs, lams, s[0]) @ psi
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_outputs_unitary(self, rng):
        h0, hc, u, s = _random_inputs(rng)
        for m in chain_numpy.chain_fresh_batch(h0, hc, u, s):
            assert is_unitary(m)


@pytest.mark.skipif(_kernels.IMPLEMENTATION != "compiled",
                    reason="compiled kernels unavailable")
class TestCompiledMatchesNumpy:
    def test_chain_fresh_batch(self, rng):
        h0, hc, u, s = _random_inputs(rng, dim=6, pulses=8, batch=4)
        a = _kernels.chain_fresh_batch(h0, hc, u, s)
        b = chain_numpy.chain_fresh_batch(h0, hc, u, s)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_chain_fresh(self, rng):
        h0, hc, u, s = _random_inputs(rng, batch=1)
        a = _kernels.chain_fresh(h0, hc, u[0], s[0])
        b = chain_numpy.chain_fresh(h0, hc, u[0], s[0])
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_chain_cached_batch(self, rng):
        vs, lams, s = _cached_inputs(rng, dim=5, pulses=7, batch=4)
        a = _kernels.chain_cached_batch(vs, lams, s)
        b = chain_numpy.chain_cached_batch(vs, lams, s)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_chain_cached(self, rng):
        vs, lams, s = _cached_inputs(rng, batch=1)
        a = _kernels.chain_cached(vs, lams, s[0])
        b = chain_numpy.chain_cached(vs, lams, s[0])
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_chain_cached_apply(self, rng):
        vs, lams, s = _cached_inputs(rng, batch=1)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        a = _kernels.chain_cached_apply(vs, lams, s[0], psi)
        b = chain_numpy.chain_cached_apply(vs, lams, s[0], psi)
        assert np.max(np.abs(a - b)) <= 1e-12


def test_pure_python_env_switch():
    """RALLYQOC_PURE=1 forces the numpy implementation at import time."""
    code = ("from rallyqoc import _kernels; "
            "print(_kernels.IMPLEMENTATION)")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"RALLYQOC_PURE": "1", "PATH": "/usr/bin:/bin"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
