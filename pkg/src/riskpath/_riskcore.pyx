# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled risk-kernel core: weighted rectangular higher-order Gaussians.

Semantics must stay in lockstep with kernels._eval_weighted_numpy; the test
suite cross-checks both backends.
"""

from libc.math cimport exp, pow


def eval_weighted(const double[::1] qx, const double[::1] qy,
                  const double[::1] px, const double[::1] py,
                  const double[::1] vx, const double[::1] vy,
                  const double[::1] sx, const double[::1] sy,
                  const double[::1] w,
                  double alpha, double beta, double skew,
                  double[::1] out):
    cdef Py_ssize_t nq = qx.shape[0]
    cdef Py_ssize_t nc = px.shape[0]
    cdef Py_ssize_t i, c
    cdef double dx, dy, tx, ty, z, acc
    with nogil:
        for i in range(nq):
            acc = 0.0
            for c in range(nc):
                dx = qx[i] - px[c]
                dy = qy[i] - py[c]
                tx = (dx * dx) / (sx[c] * sx[c])
                ty = (dy * dy) / (sy[c] * sy[c])
                z = skew * alpha * (vx[c] * dx + vy[c] * dy)
                if z > 700.0:
                    z = 700.0
                acc += w[c] * exp(-pow(tx, beta) - pow(ty, beta)) / (1.0 + exp(z))
            out[i] = acc
    return None
