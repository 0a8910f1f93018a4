"""Pure-numpy propagator-chain kernels (fallback for the compiled module).

All chains use the convention that pulse index 0 acts first on the state,
so the returned matrix is U_{K-1} ... U_1 U_0. Batched variants vectorize
over the leading axis with one python-level loop over pulses.
"""

import numpy as np

IMPLEMENTATION = "numpy"


def chain_fresh_batch(h0, hc, u, s):
    """Product of exp(-i s[b,k] (h0 + u[b,k] hc)) over k, for each batch row b.

    h0, hc: (N, N) Hermitian; u, s: (B, K) reals. Returns (B, N, N).
    """
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    B, K = u.shape
    N = h0.shape[0]
    out = np.broadcast_to(np.eye(N, dtype=complex), (B, N, N)).copy()
    for k in range(K):
        h = h0[None, :, :] + u[:, k, None, None] * hc[None, :, :]
        w, v = np.linalg.eigh(h)
        phases = np.exp(-1j * s[:, k, None] * w)
        step = (v * phases[:, None, :]) @ np.conjugate(np.swapaxes(v, 1, 2))
        out = step @ out
    return out


def chain_fresh(h0, hc, u, s):
    """Single chain: u, s are (K,) arrays. Returns (N, N)."""
    return chain_fresh_batch(h0, hc, np.asarray(u)[None, :], np.asarray(s)[None, :])[0]


def chain_cached_batch(vs, lams, s):
    """Chains built from per-pulse precomputed eigensystems.

    vs: (K, N, N) eigenvector matrices; lams: (K, N) eigenvalues;
    s: (B, K) per-pulse durations. Returns (B, N, N).
    """
    s = np.asarray(s, dtype=float)
    B, K = s.shape
    N = vs.shape[1]
    out = np.broadcast_to(np.eye(N, dtype=complex), (B, N, N)).copy()
    for k in range(K):
        v = vs[k]
        phases = np.exp(-1j * np.outer(s[:, k], lams[k]))
        step = (v[None, :, :] * phases[:, None, :]) @ v.conj().T[None, :, :]
        out = step @ out
    return out


def chain_cached(vs, lams, s):
    """Single cached chain: s is (K,). Returns (N, N)."""
    return chain_cached_batch(vs, lams, np.asarray(s)[None, :])[0]


def chain_cached_apply(vs, lams, s, psi):
    """Apply a cached chain to a state vector without forming matrices.

    Returns U_{K-1} ... U_0 |psi> as an (N,) array.
    """
    out = np.asarray(psi, dtype=complex).copy()
    K = len(s)
    for k in range(K):
        v = vs[k]
        out = v @ (np.exp(-1j * s[k] * lams[k]) * (v.conj().T @ out))
    return out
