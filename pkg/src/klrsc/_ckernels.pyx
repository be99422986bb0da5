# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched solver kernels.

Same signatures and semantics as ``_kernels_py``.  Each problem in a batch
is solved independently with direct BLAS/LAPACK calls on per-problem
scratch buffers.  A row-major (K, M) block is handed to Fortran routines as
its column-major (M, K) transpose, which is why most calls below are
written in terms of transposed shapes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, NAN
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm, dsyrk, dsymm, dsymv
from scipy.linalg.cython_lapack cimport dsyev, dsyevd

cnp.import_array()


cdef inline double _shrink(double x, double t) noexcept nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


cdef int _eig_work(int n):
    """Optimal dsyev workspace for an ``n x n`` problem."""
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef int lwork = -1, info = 0, lda = n if n > 0 else 1
    cdef double a = 0.0, w = 0.0, q = 0.0
    dsyev(&jobz, &uplo, &n, &a, &lda, &w, &q, &lwork, &info)
    return max(<int>q, 3 * n)


cdef int _eigh(double* a, double* w, int n, double* work, int lwork) noexcept nogil:
    """In-place symmetric eigendecomposition; eigenvectors in the columns of ``a``."""
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef int info = 0
    dsyev(&jobz, &uplo, &n, a, &n, w, work, &lwork, &info)
    return info


cdef int _eigd_work(int n, int* liwork):
    """Optimal dsyevd workspace sizes for an ``n x n`` problem."""
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef int lwork = -1, info = 0, lda = n if n > 0 else 1, iq = 0
    cdef double a = 0.0, w = 0.0, q = 0.0
    liwork[0] = -1
    dsyevd(&jobz, &uplo, &n, &a, &lda, &w, &q, &lwork, &iq, liwork, &info)
    liwork[0] = max(iq, 3 + 5 * n)
    return max(<int>q, 1 + 6 * n + 2 * n * n)


cdef int _eigh_d(double* a, double* w, int n, double* work, int lwork, int* iwork,
                 int liwork) noexcept nogil:
    """Divide-and-conquer variant of :func:`_eigh`; faster on the larger blocks."""
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef int info = 0
    dsyevd(&jobz, &uplo, &n, a, &n, w, work, &lwork, iwork, &liwork, &info)
    return info


cdef double _power_lmax(const double* g, int k, int n_iter, double* v, double* w) noexcept nogil:
    cdef char uplo = b'L'
    cdef int one = 1, i, t
    cdef double alpha = 1.0, beta = 0.0, nrm, lam
    for i in range(k):
        v[i] = 1.0 / sqrt(<double>k)
    for t in range(n_iter):
        dsymv(&uplo, &k, &alpha, <double*>g, &k, v, &one, &beta, w, &one)
        nrm = 0.0
        for i in range(k):
            nrm += w[i] * w[i]
        nrm = sqrt(nrm)
        if nrm <= 0:
            nrm = 1.0
        for i in range(k):
            v[i] = w[i] / nrm
    dsymv(&uplo, &k, &alpha, <double*>g, &k, v, &one, &beta, w, &one)
    lam = 0.0
    for i in range(k):
        lam += v[i] * w[i]
    lam = lam * (1.0 + 1e-6)
    return lam if lam > 1e-12 else 1e-12


def lipschitz_batch(gram, int n_iter=50):
    """Largest eigenvalue of each PSD ``gram[i]`` by power iteration."""
    cdef const double[:, :, ::1] g = np.ascontiguousarray(gram, dtype=np.float64)
    cdef Py_ssize_t b = g.shape[0], i
    cdef int k = <int>g.shape[1]
    out = np.empty(b)
    cdef double[::1] o = out
    cdef double[::1] v = np.empty(max(k, 1))
    cdef double[::1] w = np.empty(max(k, 1))
    if k == 0:
        out[:] = 1e-12
        return out
    with nogil:
        for i in range(b):
            o[i] = _power_lmax(&g[i, 0, 0], k, n_iter, &v[0], &w[0])
    return out


def ista_batch(gram, rhs, double lam, int n_iter, lipschitz=None):
    """Iterative shrinkage for ``min 0.5||y - D w||^2 + lam ||w||_1`` per column."""
    cdef const double[:, :, ::1] g = np.ascontiguousarray(gram, dtype=np.float64)
    cdef const double[:, :, ::1] r = np.ascontiguousarray(rhs, dtype=np.float64)
    if lipschitz is None:
        lipschitz = lipschitz_batch(gram)
    cdef const double[::1] lip = np.ascontiguousarray(lipschitz, dtype=np.float64)
    cdef Py_ssize_t b = r.shape[0], i
    cdef int k = <int>r.shape[1], m = <int>r.shape[2], km = k * m, t, j
    out = np.zeros((b, k, m))
    if b == 0 or km == 0:
        return out
    cdef double[:, :, ::1] w = out
    cdef double[::1] q = np.empty(km)
    cdef char nn = b'N'
    cdef double one = 1.0, zero = 0.0, step, thr
    cdef double* wp
    cdef const double* rp
    with nogil:
        for i in range(b):
            step = 1.0 / lip[i]
            thr = lam * step
            wp = &w[i, 0, 0]
            rp = &r[i, 0, 0]
            for t in range(n_iter):
                # q^T = w^T G  (G symmetric)
                dgemm(&nn, &nn, &m, &k, &k, &one, wp, &m, <double*>&g[i, 0, 0], &k, &zero, &q[0], &m)
                for j in range(km):
                    wp[j] = _shrink(wp[j] - step * (q[j] - rp[j]), thr)
    return out


cdef int _svt(double* a, double* out, int m, int k, double tau, double* c, double* e,
              double* vs, double* work, int lwork) noexcept nogil:
    """Singular value thresholding of the (M, K) column-major block ``a``.

    Uses the eigendecomposition of the smaller Gram matrix; components
    whose singular value falls below ``tau`` are dropped.
    """
    cdef char lo = b'L', nn = b'N', tt = b'T', side
    cdef int n, j, l, r, info
    cdef double one = 1.0, zero = 0.0, s, f
    if m <= k:
        n = m
        dsyrk(&lo, &nn, &n, &k, &one, a, &m, &zero, c, &n)
    else:
        n = k
        dsyrk(&lo, &tt, &n, &m, &one, a, &m, &zero, c, &n)
    info = _eigh(c, e, n, work, lwork)
    if info != 0:
        return info
    r = 0
    for j in range(n):
        s = sqrt(e[j]) if e[j] > 0 else 0.0
        if s > tau:
            f = sqrt((s - tau) / s)
            for l in range(n):
                vs[r * n + l] = c[j * n + l] * f
            r += 1
    if r == 0:
        for j in range(m * k):
            out[j] = 0.0
        return 0
    # P = Vs Vs^T, then out = P a (left) or a P (right)
    dsyrk(&lo, &nn, &n, &r, &one, vs, &n, &zero, c, &n)
    if m <= k:
        side = b'L'
    else:
        side = b'R'
    dsymm(&side, &lo, &m, &k, &one, c, &n, a, &m, &zero, out, &m)
    return 0


cdef double _spectral_norm(const double* a, int m, int k, double* c, double* e,
                           double* work, int lwork) noexcept nogil:
    cdef char lo = b'L', nn = b'N', tt = b'T'
    cdef int n
    cdef double one = 1.0, zero = 0.0
    if m <= k:
        n = m
        dsyrk(&lo, &nn, &n, &k, &one, <double*>a, &m, &zero, c, &n)
    else:
        n = k
        dsyrk(&lo, &tt, &n, &m, &one, <double*>a, &m, &zero, c, &n)
    if _eigh(c, e, n, work, lwork) != 0:
        return NAN
    return sqrt(e[n - 1]) if e[n - 1] > 0 else 0.0


def ialm_batch(kdd, kda, z0, double lam1, double lam2, double rho, double tol,
               int max_iter, double u_floor):
    """Inexact ALM for the relaxed low-rank sparse coding problem.

    Returns ``(W3, iters, feas, feas1)`` exactly as the numpy backend does;
    a problem whose eigendecomposition fails comes back as NaN codes.
    """
    cdef const double[:, :, ::1] kd = np.ascontiguousarray(kdd, dtype=np.float64)
    cdef const double[:, :, ::1] ka = np.ascontiguousarray(kda, dtype=np.float64)
    out = np.array(z0, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t b = out.shape[0], i
    cdef int k = <int>out.shape[1], m = <int>out.shape[2], km = k * m
    iters_a = np.zeros(b, dtype=np.int64)
    feas_a = np.full(b, np.inf)
    feas1_a = np.full(b, np.inf)
    if b == 0 or km == 0:
        return out, iters_a, feas_a, feas1_a
    cdef double[:, :, ::1] w3v = out
    cdef long long[::1] iters = iters_a
    cdef double[::1] feas = feas_a
    cdef double[::1] feas1 = feas1_a

    cdef int n_small = m if m < k else k
    cdef int liwork = 0
    cdef int lwork = max(max(_eig_work(k), _eig_work(n_small)), _eigd_work(k, &liwork))
    cdef int* iwork = <int*>malloc(sizeof(int) * liwork)
    if iwork == NULL:
        raise MemoryError()
    cdef double* buf = <double*>malloc(sizeof(double) * (
        k * k + k + 8 * km + 2 * n_small * n_small + n_small + lwork))
    if buf == NULL:
        free(iwork)
        raise MemoryError()
    cdef double* V = buf
    cdef double* ev = V + k * k
    cdef double* w1 = ev + k
    cdef double* w2 = w1 + km
    cdef double* l1 = w2 + km
    cdef double* l2 = l1 + km
    cdef double* z = l2 + km
    cdef double* t1 = z + km
    cdef double* tmp = t1 + km
    cdef double* w3s = tmp + km
    cdef double* c = w3s + km
    cdef double* vs = c + n_small * n_small
    cdef double* e = vs + n_small * n_small
    cdef double* work = e + n_small

    cdef char nn = b'N', tt = b'T'
    cdef double one = 1.0, zero = 0.0
    cdef double u1, u2, smax, amax, x, d1, d2, n1, n2, n3, f, th1
    cdef int j, col, it, info
    cdef double* w3
    cdef const double* a_p

    try:
        with nogil:
            for i in range(b):
                w3 = &w3v[i, 0, 0]
                a_p = &ka[i, 0, 0]
                smax = _spectral_norm(w3, m, k, c, e, work, lwork)
                amax = 0.0
                for j in range(km):
                    if fabs(w3[j]) > amax:
                        amax = fabs(w3[j])
                u1 = 1.0 / smax if smax > 0 else u_floor
                u2 = 1.0 / amax if amax > 0 else u_floor
                a_p = &kd[i, 0, 0]
                for j in range(k * k):
                    V[j] = a_p[j]
                a_p = &ka[i, 0, 0]
                info = _eigh_d(V, ev, k, work, lwork, iwork, liwork)
                if info != 0 or smax != smax:
                    for j in range(km):
                        w3[j] = NAN
                    continue
                for j in range(km):
                    l1[j] = 0.0
                    l2[j] = 0.0
                for it in range(1, max_iter + 1):
                    th1 = lam1 / u1
                    for j in range(km):
                        w1[j] = _shrink(w3[j] + l1[j] / u1, th1)
                        tmp[j] = w3[j] + l2[j] / u2
                    info = _svt(tmp, w2, m, k, lam2 / u2, c, e, vs, work, lwork)
                    if info != 0:
                        for j in range(km):
                            w3[j] = NAN
                        break
                    for j in range(km):
                        z[j] = a_p[j] + u1 * w1[j] - l1[j] + u2 * w2[j] - l2[j]
                    # W3 = V diag(1/(ev + u1 + u2)) V^T z, in transposed form
                    dgemm(&nn, &nn, &m, &k, &k, &one, z, &m, V, &k, &zero, t1, &m)
                    for col in range(k):
                        x = 1.0 / (ev[col] + (u1 + u2))
                        for j in range(m):
                            t1[col * m + j] *= x
                    dgemm(&nn, &tt, &m, &k, &k, &one, t1, &m, V, &k, &zero, w3s, &m)
                    n1 = 0.0
                    n2 = 0.0
                    n3 = 0.0
                    for j in range(km):
                        d1 = w3s[j] - w1[j]
                        d2 = w3s[j] - w2[j]
                        l1[j] = l1[j] + u1 * d1
                        l2[j] = l2[j] + u2 * d2
                        n1 += d1 * d1
                        n2 += d2 * d2
                        n3 += w3s[j] * w3s[j]
                        w3[j] = w3s[j]
                    u1 *= rho
                    u2 *= rho
                    n1 = sqrt(n1)
                    n2 = sqrt(n2)
                    n3 = sqrt(n3)
                    f = (n1 if n1 > n2 else n2) / (n3 if n3 > 1.0 else 1.0)
                    feas[i] = f
                    iters[i] = it
                    if it == 1:
                        feas1[i] = f
                    if f < tol:
                        break
    finally:
        free(buf)
        free(iwork)
    return out, iters_a, feas_a, feas1_a
