# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: one-sided Jacobi sweeps and the mini-batch SGD step.

Every function here has a numpy twin in ``_fallback`` with the same signature.
"""
import numpy as np

from libc.math cimport sqrt, fabs, hypot, copysign


def jacobi_sweeps(double[:, ::1] w, double tol, int max_sweeps):
    """Orthogonalise the rows of ``w`` in place by cyclic Jacobi rotations.

    Rows of ``w`` are the columns of the matrix being decomposed. Returns
    ``(sweeps, converged)``.
    """
    cdef Py_ssize_t k = w.shape[0], m = w.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double alpha, beta, gamma, zeta, t, c, s, wi, wj
    cdef double floor2 = 0.0
    cdef int sweep = 0, rotated
    cdef bint converged = False
    with nogil:
        # columns below tol * ||w||_F are rounding noise; rotating them never settles
        for i in range(k):
            for l in range(m):
                floor2 = floor2 + w[i, l] * w[i, l]
        floor2 = floor2 * tol * tol
        while sweep < max_sweeps:
            sweep += 1
            rotated = 0
            for i in range(k - 1):
                for j in range(i + 1, k):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for l in range(m):
                        alpha = alpha + w[i, l] * w[i, l]
                        beta = beta + w[j, l] * w[j, l]
                        gamma = gamma + w[i, l] * w[j, l]
                    if gamma == 0.0 or alpha <= floor2 or beta <= floor2:
                        continue
                    if fabs(gamma) <= tol * sqrt(alpha) * sqrt(beta):
                        continue
                    zeta = (beta - alpha) / (2.0 * gamma)
                    t = copysign(1.0, zeta) / (fabs(zeta) + hypot(1.0, zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    for l in range(m):
                        wi = w[i, l]
                        wj = w[j, l]
                        w[i, l] = c * wi - s * wj
                        w[j, l] = s * wi + c * wj
                    rotated += 1
            if rotated == 0:
                converged = True
                break
    return sweep, bool(converged)


cdef void _accumulate(double[::1] u, double[:, ::1] v, double[::1] b,
                      double[:, ::1] x, double[::1] y, long[::1] rows,
                      Py_ssize_t start, Py_ssize_t count,
                      double[:, ::1] z, double[::1] r, double[::1] du, double[:, ::1] dv,
                      double[::1] db) noexcept nogil:
    # Sums residual-weighted per-sample gradients over rows[start:start+count].
    # Loops run hidden unit outermost so a row of v / dv stays in cache while
    # the batch streams past it; every sum over samples is still in batch order.
    cdef Py_ssize_t m = v.shape[0], n = v.shape[1]
    cdef Py_ssize_t k, j, l, idx, n4 = n - n % 4
    cdef double phi, coef, zj, s0, s1, s2, s3
    cdef double* vr
    cdef double* xr
    cdef double* dvr
    for j in range(m):
        vr = &v[j, 0]
        for k in range(count):
            xr = &x[rows[start + k], 0]
            # four independent partial sums break the add dependency chain
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            for l in range(0, n4, 4):
                s0 = s0 + vr[l] * xr[l]
                s1 = s1 + vr[l + 1] * xr[l + 1]
                s2 = s2 + vr[l + 2] * xr[l + 2]
                s3 = s3 + vr[l + 3] * xr[l + 3]
            for l in range(n4, n):
                s0 = s0 + vr[l] * xr[l]
            z[k, j] = b[j] + ((s0 + s1) + (s2 + s3))
    for k in range(count):
        phi = 0.0
        for j in range(m):
            if z[k, j] > 0.0:
                phi = phi + u[j] * z[k, j]
        r[k] = phi - y[rows[start + k]]
    for j in range(m):
        du[j] = 0.0
        db[j] = 0.0
        dvr = &dv[j, 0]
        for l in range(n):
            dvr[l] = 0.0
        for k in range(count):
            zj = z[k, j]
            if zj > 0.0:
                xr = &x[rows[start + k], 0]
                coef = r[k] * u[j]
                du[j] = du[j] + r[k] * zj
                db[j] = db[j] + coef
                for l in range(n):
                    dvr[l] = dvr[l] + coef * xr[l]


def batch_gradient(double[::1] u, double[:, ::1] v, double[::1] b,
                   double[:, ::1] x, double[::1] y, double[::1] g,
                   double mu_u, double mu_b):
    """Regularised batch gradient over all rows of ``x``; returns (dU, dV, db)."""
    cdef Py_ssize_t m = v.shape[0], n = v.shape[1], bsz = x.shape[0]
    cdef Py_ssize_t j, l, k
    cdef double gbar = 0.0, inv = 1.0 / bsz
    rows_arr = np.arange(bsz, dtype=np.int_)
    z_arr = np.empty((bsz, m))
    r_arr = np.empty(bsz)
    du_arr = np.empty(m)
    db_arr = np.empty(m)
    dv_arr = np.empty((m, n))
    cdef long[::1] rows = rows_arr
    cdef double[:, ::1] z = z_arr
    cdef double[::1] r = r_arr, du = du_arr, db = db_arr
    cdef double[:, ::1] dv = dv_arr
    with nogil:
        for k in range(bsz):
            gbar = gbar + g[k]
        gbar = gbar * inv
        _accumulate(u, v, b, x, y, rows, 0, bsz, z, r, du, dv, db)
        for j in range(m):
            du[j] = du[j] * inv + mu_u * u[j]
            db[j] = db[j] * inv + mu_b * b[j]
            for l in range(n):
                dv[j, l] = dv[j, l] * inv + gbar * v[j, l]
    return du_arr, dv_arr, db_arr


def sgd_epoch(double[::1] u, double[:, ::1] v, double[::1] b,
              double[:, ::1] x, double[::1] y, double[::1] g,
              long[::1] order, Py_ssize_t batch_size, double lr,
              double mu_u, double mu_b):
    """Run one SGD step per consecutive ``batch_size`` slice of ``order``.

    Parameters are updated in place. Returns the Frobenius norm of the V
    gradient of every batch.
    """
    cdef Py_ssize_t m = v.shape[0], n = v.shape[1]
    cdef Py_ssize_t nb = order.shape[0] // batch_size
    cdef Py_ssize_t bi, j, l, k, start
    cdef double gbar, inv = 1.0 / batch_size, sq, d
    norms_arr = np.empty(nb)
    z_arr = np.empty((batch_size, m))
    r_arr = np.empty(batch_size)
    du_arr = np.empty(m)
    db_arr = np.empty(m)
    dv_arr = np.empty((m, n))
    cdef double[::1] norms = norms_arr
    cdef double[:, ::1] z = z_arr
    cdef double[::1] r = r_arr, du = du_arr, db = db_arr
    cdef double[:, ::1] dv = dv_arr
    with nogil:
        for bi in range(nb):
            start = bi * batch_size
            gbar = 0.0
            for k in range(batch_size):
                gbar = gbar + g[order[start + k]]
            gbar = gbar * inv
            _accumulate(u, v, b, x, y, order, start, batch_size, z, r, du, dv, db)
            sq = 0.0
            for j in range(m):
                du[j] = du[j] * inv + mu_u * u[j]
                db[j] = db[j] * inv + mu_b * b[j]
                for l in range(n):
                    d = dv[j, l] * inv + gbar * v[j, l]
                    dv[j, l] = d
                    sq = sq + d * d
            norms[bi] = sqrt(sq)
            for j in range(m):
                u[j] = u[j] - lr * du[j]
                b[j] = b[j] - lr * db[j]
                for l in range(n):
                    v[j, l] = v[j, l] - lr * dv[j, l]
    return norms_arr
