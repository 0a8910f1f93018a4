# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled propagator-chain kernels.

Same contracts as chain_numpy: pulse 0 acts first, returned matrix is
U_{K-1} ... U_0. Matrices are C-contiguous complex128; LAPACK/BLAS calls
account for the implied transpose (a C-order Hermitian buffer is the
conjugate of its Fortran view, so zheevd leaves V^dag in the buffer when
read back in C order).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport zgemm, zgemv
from scipy.linalg.cython_lapack cimport zheevd

cnp.import_array()

IMPLEMENTATION = "compiled"

ctypedef double complex zdouble


cdef struct Workspace:
    zdouble *a          # N*N eigenvector / scratch buffer
    zdouble *step       # N*N single-pulse propagator
    zdouble *acc        # N*N accumulated product
    zdouble *tmp        # N*N scratch for products
    double *w           # N eigenvalues
    zdouble *work
    double *rwork
    int *iwork
    int lwork
    int lrwork
    int liwork


cdef int ws_alloc(Workspace *ws, int n) nogil:
    ws.lwork = 2 * n + n * n
    ws.lrwork = 1 + 5 * n + 2 * n * n
    ws.liwork = 3 + 5 * n
    ws.a = <zdouble *> malloc(n * n * sizeof(zdouble))
    ws.step = <zdouble *> malloc(n * n * sizeof(zdouble))
    ws.acc = <zdouble *> malloc(n * n * sizeof(zdouble))
    ws.tmp = <zdouble *> malloc(n * n * sizeof(zdouble))
    ws.w = <double *> malloc(n * sizeof(double))
    ws.work = <zdouble *> malloc(ws.lwork * sizeof(zdouble))
    ws.rwork = <double *> malloc(ws.lrwork * sizeof(double))
    ws.iwork = <int *> malloc(ws.liwork * sizeof(int))
    if (ws.a == NULL or ws.step == NULL or ws.acc == NULL or ws.tmp == NULL
            or ws.w == NULL or ws.work == NULL or ws.rwork == NULL
            or ws.iwork == NULL):
        return -1
    return 0


cdef void ws_free(Workspace *ws) nogil:
    free(ws.a); free(ws.step); free(ws.acc); free(ws.tmp)
    free(ws.w); free(ws.work); free(ws.rwork); free(ws.iwork)


cdef void set_identity(zdouble *m, int n) nogil:
    cdef int i, j
    for i in range(n):
        for j in range(n):
            m[i * n + j] = 0
        m[i * n + i] = 1


cdef int pulse_step_fresh(Workspace *ws, const zdouble *h0, const zdouble *hc,
                          double u, double s, int n) nogil:
    """Build exp(-i s (h0 + u hc)) into ws.step via zheevd."""
    cdef int i, j, info
    cdef double ph
    cdef zdouble phase
    cdef char jobz = b'V', uplo = b'L'
    cdef zdouble one = 1, zero = 0
    for i in range(n * n):
        ws.a[i] = h0[i] + u * hc[i]
    zheevd(&jobz, &uplo, &n, ws.a, &n, ws.w, ws.work, &ws.lwork,
           ws.rwork, &ws.lrwork, ws.iwork, &ws.liwork, &info)
    if info != 0:
        return info
    # ws.a now holds V^dag in C order; tmp = diag(exp(-i s w)) @ V^dag
    for j in range(n):
        ph = -s * ws.w[j]
        phase = cos(ph) + 1j * sin(ph)
        for i in range(n):
            ws.tmp[j * n + i] = phase * ws.a[j * n + i]
    # step_C = V @ tmp = a^H @ tmp; in Fortran view: step_F = tmp_F @ a_F^H
    zgemm(b'N', b'C', &n, &n, &n, &one, ws.tmp, &n, ws.a, &n, &zero,
          ws.step, &n)
    return 0


cdef void pulse_step_cached(Workspace *ws, const zdouble *v,
                            const double *lam, double s, int n) nogil:
    """Build V diag(exp(-i s lam)) V^dag into ws.step from a cached
    eigensystem (v is the C-order eigenvector matrix)."""
    cdef int i, j
    cdef double ph
    cdef zdouble phase
    cdef zdouble one = 1, zero = 0
    # tmp = V with column j scaled by exp(-i s lam_j)
    for j in range(n):
        ph = -s * lam[j]
        phase = cos(ph) + 1j * sin(ph)
        for i in range(n):
            ws.tmp[i * n + j] = phase * v[i * n + j]
    # step_C = tmp @ V^H; Fortran view: step_F = V_F^H @ tmp_F
    zgemm(b'C', b'N', &n, &n, &n, &one, v, &n, ws.tmp, &n, &zero,
          ws.step, &n)


cdef void compose(Workspace *ws, int n) nogil:
    """acc <- step @ acc (C order); Fortran view: acc_F <- acc_F @ step_F."""
    cdef zdouble one = 1, zero = 0
    zgemm(b'N', b'N', &n, &n, &n, &one, ws.acc, &n, ws.step, &n, &zero,
          ws.tmp, &n)
    cdef zdouble *swap = ws.acc
    ws.acc = ws.tmp
    ws.tmp = swap


def chain_fresh_batch(zdouble[:, ::1] h0, zdouble[:, ::1] hc,
                      double[:, ::1] u, double[:, ::1] s):
    """Batched product of exp(-i s[b,k] (h0 + u[b,k] hc)); returns (B, N, N)."""
    cdef int B = u.shape[0], K = u.shape[1], n = h0.shape[0]
    cdef cnp.ndarray out_arr = np.empty((B, n, n), dtype=np.complex128)
    cdef zdouble[:, :, ::1] out = out_arr
    cdef Workspace ws
    cdef int b, k, info = 0, i
    with nogil:
        if ws_alloc(&ws, n) != 0:
            info = -1
        else:
            for b in range(B):
                set_identity(ws.acc, n)
                for k in range(K):
                    info = pulse_step_fresh(&ws, &h0[0, 0], &hc[0, 0],
                                            u[b, k], s[b, k], n)
                    if info != 0:
                        break
                    compose(&ws, n)
                if info != 0:
                    break
                for i in range(n * n):
                    out[b, 0, 0 + i] = ws.acc[i]
            ws_free(&ws)
    if info != 0:
        raise np.linalg.LinAlgError(f"zheevd failed (info={info})")
    return out_arr


def chain_fresh(h0, hc, u, s):
    u = np.ascontiguousarray(u, dtype=float)[None, :]
    s = np.ascontiguousarray(s, dtype=float)[None, :]
    return chain_fresh_batch(np.ascontiguousarray(h0, dtype=complex),
                             np.ascontiguousarray(hc, dtype=complex), u, s)[0]


def chain_cached_batch(zdouble[:, :, ::1] vs, double[:, ::1] lams,
                       double[:, ::1] s):
    """Batched chains from per-pulse cached eigensystems; returns (B, N, N)."""
    cdef int B = s.shape[0], K = s.shape[1], n = vs.shape[1]
    cdef cnp.ndarray out_arr = np.empty((B, n, n), dtype=np.complex128)
    cdef zdouble[:, :, ::1] out = out_arr
    cdef Workspace ws
    cdef int b, k, i, fail = 0
    with nogil:
        if ws_alloc(&ws, n) != 0:
            fail = 1
        else:
            for b in range(B):
                set_identity(ws.acc, n)
                for k in range(K):
                    pulse_step_cached(&ws, &vs[k, 0, 0], &lams[k, 0],
                                      s[b, k], n)
                    compose(&ws, n)
                for i in range(n * n):
                    out[b, 0, 0 + i] = ws.acc[i]
            ws_free(&ws)
    if fail:
        raise MemoryError("workspace allocation failed")
    return out_arr


def chain_cached(vs, lams, s):
    s = np.ascontiguousarray(s, dtype=float)[None, :]
    return chain_cached_batch(np.ascontiguousarray(vs, dtype=complex),
                              np.ascontiguousarray(lams, dtype=float), s)[0]


def chain_cached_apply(zdouble[:, :, ::1] vs, double[:, ::1] lams,
                       double[::1] s, zdouble[::1] psi):
    """Apply a cached chain to a state vector; returns (N,)."""
    cdef int K = s.shape[0], n = vs.shape[1]
    cdef cnp.ndarray out_arr = np.array(psi, dtype=np.complex128, copy=True)
    cdef zdouble[::1] out = out_arr
    cdef zdouble *x = <zdouble *> malloc(n * sizeof(zdouble))
    cdef zdouble *y = <zdouble *> malloc(n * sizeof(zdouble))
    cdef int k, i, incx = 1
    cdef double ph
    cdef zdouble one = 1, zero = 0
    if x == NULL or y == NULL:
        free(x); free(y)
        raise MemoryError
    with nogil:
        for k in range(K):
            # y = V^H psi: conj(V_F) psi computed as conj(V_F @ conj(psi))
            for i in range(n):
                x[i] = out[i].real - 1j * out[i].imag
            zgemv(b'N', &n, &n, &one, &vs[k, 0, 0], &n, x, &incx, &zero,
                  y, &incx)
            for i in range(n):
                ph = -s[k] * lams[k, i]
                y[i] = (cos(ph) + 1j * sin(ph)) * (y[i].real - 1j * y[i].imag)
            # out = V y: V_C = V_F^T
            zgemv(b'T', &n, &n, &one, &vs[k, 0, 0], &n, y, &incx, &zero,
                  &out[0], &incx)
    free(x); free(y)
    return out_arr
