"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and in-place semantics match the compiled module exactly; results
agree to rounding (reduction order inside BLAS differs from the explicit
loops).
"""
import math

import numpy as np


def jacobi_sweeps(w, tol, max_sweeps):
    k = w.shape[0]
    floor2 = float(np.sum(w * w)) * tol * tol
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        rotated = 0
        for i in range(k - 1):
            wi = w[i]
            for j in range(i + 1, k):
                wj = w[j]
                alpha = float(wi @ wi)
                beta = float(wj @ wj)
                gamma = float(wi @ wj)
                if gamma == 0.0 or alpha <= floor2 or beta <= floor2:
                    continue
                if abs(gamma) <= tol * math.sqrt(alpha) * math.sqrt(beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * wi - s * wj
                w[j] = s * wi + c * wj
                w[i] = new_i
                rotated += 1
        if rotated == 0:
            return sweep, True
    return sweep, False


def batch_gradient(u, v, b, x, y, g, mu_u, mu_b):
    bsz = x.shape[0]
    z = x @ v.T + b
    active = z > 0.0
    hidden = np.where(active, z, 0.0)
    resid = hidden @ u - y
    coef = np.where(active, resid[:, None] * u[None, :], 0.0)
    du = (resid @ hidden) / bsz + mu_u * u
    dv = (coef.T @ x) / bsz + (g.sum() / bsz) * v
    db = coef.sum(axis=0) / bsz + mu_b * b
    return du, dv, db


def sgd_epoch(u, v, b, x, y, g, order, batch_size, lr, mu_u, mu_b):
    nb = order.shape[0] // batch_size
    norms = np.empty(nb)
    for bi in range(nb):
        rows = order[bi * batch_size:(bi + 1) * batch_size]
        du, dv, db = batch_gradient(u, v, b, x[rows], y[rows], g[rows], mu_u, mu_b)
        norms[bi] = math.sqrt(float(np.sum(dv * dv)))
        u -= lr * du
        v -= lr * dv
        b -= lr * db
    return norms
