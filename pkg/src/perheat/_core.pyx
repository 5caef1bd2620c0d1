# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled lattice-sum kernels (n = 2).

Mirrors perheat._pycore function for function; the pure-Python module is the
reference and the two are cross-checked in the test suite.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, cos, sin, fabs, M_PI, INFINITY

cnp.import_array()

cdef double EULER_GAMMA = 0.57721566490153286060651209
cdef double FPMIN = 1e-300
cdef double EPS = 1e-16


cdef inline double _e1(double x) noexcept nogil:
    cdef double total, term, b, c, d, h, delta, an
    cdef int k
    if x <= 0.0:
        return INFINITY
    if x > 745.0:
        return 0.0
    if x <= 1.0:
        total = 0.0
        term = 1.0
        for k in range(1, 80):
            term *= -x / k
            total += term / k
            if fabs(term / k) < EPS * fabs(total):
                break
        return -EULER_GAMMA - log(x) - total
    # modified Lentz on the continued fraction of e^x E1(x)
    b = x + 1.0
    c = 1.0 / FPMIN
    d = 1.0 / b
    h = d
    for k in range(1, 500):
        an = -(<double>k) * k
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if fabs(delta - 1.0) < EPS:
            break
    return h * exp(-x)


def e1(x):
    """Exponential integral E1 on a float64 array (any shape)."""
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[::1] xm = xv
    cdef double[::1] om = out
    with nogil:
        for i in range(n):
            om[i] = _e1(xm[i])
    return out.reshape(np.shape(x))


def slab_direct(double[::1] dx, double[::1] dy, double a, double b,
                double qx, double qy, int Z, bint skip_origin):
    """Image sum over |z|_inf <= Z of slab-integrated kernel moments.

    Returns (s0, gx0, gy0, s1, gx1, gy1): the integrals over [a, b] of
    S_2(s, d+qz) and its gradient (moment 0), and of s*S_2 and s*grad S_2
    (moment 1), summed over images. An exactly coincident image
    (d + qz = 0) contributes nothing when a == 0.
    """
    cdef Py_ssize_t n = dx.shape[0], p
    cdef int zx, zy
    cdef double rx, ry, r2, c, xb, xa, eb, ea, de
    cdef double s0, g0x, g0y, s1, g1x, g1y
    cdef double inv4pi = 1.0 / (4.0 * M_PI)
    cdef double inv2pi = 1.0 / (2.0 * M_PI)
    cdef double inv8pi = 1.0 / (8.0 * M_PI)
    cdef double lgba = 0.0
    cdef double dinv = 0.0
    out = np.zeros((6, n))
    cdef double[:, ::1] o = out
    if a > 0.0:
        lgba = log(b / a)
        dinv = 0.25 * (1.0 / a - 1.0 / b)
    with nogil:
        for p in range(n):
            s0 = 0.0
            g0x = 0.0
            g0y = 0.0
            s1 = 0.0
            g1x = 0.0
            g1y = 0.0
            for zx in range(-Z, Z + 1):
                rx = dx[p] + qx * zx
                for zy in range(-Z, Z + 1):
                    if skip_origin and zx == 0 and zy == 0:
                        continue
                    ry = dy[p] + qy * zy
                    r2 = rx * rx + ry * ry
                    xb = 0.25 * r2 / b
                    if xb > 745.0:
                        continue
                    if r2 == 0.0:
                        if a > 0.0:
                            s0 += lgba
                            s1 += b - a
                        continue
                    eb = exp(-xb)
                    if a > 0.0:
                        xa = 0.25 * r2 / a
                        ea = exp(-xa)
                        de = _e1(xb) - _e1(xa)
                        # e^{-r2/4b} - e^{-r2/4a} without cancellation or overflow
                        c = eb * expm1(-r2 * dinv) / r2
                        s1 += b * eb - a * ea - 0.25 * r2 * de
                    else:
                        de = _e1(xb)
                        c = -eb / r2
                        s1 += b * eb - 0.25 * r2 * de
                    s0 += de
                    g0x += rx * c
                    g0y += ry * c
                    g1x += rx * de
                    g1y += ry * de
            o[0, p] = s0 * inv4pi
            o[1, p] = g0x * inv2pi
            o[2, p] = g0y * inv2pi
            o[3, p] = s1 * inv4pi
            o[4, p] = -g1x * inv8pi
            o[5, p] = -g1y * inv8pi
    return out


def slab_spectral(double[::1] dx, double[::1] dy, double a, double b,
                  double qx, double qy, int K):
    """Dual (Poisson-summation) series of the slab moments, |k|_inf <= K.

    Requires a > 0. Returns the same six arrays as slab_direct.
    """
    cdef Py_ssize_t n = dx.shape[0], p
    cdef int kx, ky, m = 2 * K + 1
    cdef double vol = qx * qy
    cdef double lam, ea, eb, cx, sx, cy, sy, cc, ss, w0, w1
    cdef double s0, g0x, g0y, s1, g1x, g1y
    cdef double fx = 2.0 * M_PI / qx, fy = 2.0 * M_PI / qy
    weights = np.empty((2, m, m))
    cdef double[:, :, ::1] w = weights
    for kx in range(-K, K + 1):
        for ky in range(-K, K + 1):
            if kx == 0 and ky == 0:
                w[0, kx + K, ky + K] = (b - a) / vol
                w[1, kx + K, ky + K] = 0.5 * (b * b - a * a) / vol
            else:
                lam = (fx * kx) ** 2 + (fy * ky) ** 2
                ea = exp(-lam * a)
                eb = exp(-lam * b)
                w[0, kx + K, ky + K] = (ea - eb) / (lam * vol)
                w[1, kx + K, ky + K] = ((a + 1.0 / lam) * ea - (b + 1.0 / lam) * eb) / (lam * vol)
    out = np.zeros((6, n))
    cdef double[:, ::1] o = out
    cosx_a = np.empty(m)
    sinx_a = np.empty(m)
    cosy_a = np.empty(m)
    siny_a = np.empty(m)
    cdef double[::1] cosx = cosx_a
    cdef double[::1] sinx = sinx_a
    cdef double[::1] cosy = cosy_a
    cdef double[::1] siny = siny_a
    with nogil:
        for p in range(n):
            for kx in range(-K, K + 1):
                cosx[kx + K] = cos(fx * kx * dx[p])
                sinx[kx + K] = sin(fx * kx * dx[p])
                cosy[kx + K] = cos(fy * kx * dy[p])
                siny[kx + K] = sin(fy * kx * dy[p])
            s0 = 0.0
            g0x = 0.0
            g0y = 0.0
            s1 = 0.0
            g1x = 0.0
            g1y = 0.0
            for kx in range(m):
                cx = cosx[kx]
                sx = sinx[kx]
                for ky in range(m):
                    cy = cosy[ky]
                    sy = siny[ky]
                    cc = cx * cy - sx * sy
                    ss = sx * cy + cx * sy
                    w0 = w[0, kx, ky]
                    w1 = w[1, kx, ky]
                    s0 += w0 * cc
                    s1 += w1 * cc
                    g0x -= w0 * (kx - K) * ss
                    g0y -= w0 * (ky - K) * ss
                    g1x -= w1 * (kx - K) * ss
                    g1y -= w1 * (ky - K) * ss
            o[0, p] = s0
            o[1, p] = g0x * fx
            o[2, p] = g0y * fy
            o[3, p] = s1
            o[4, p] = g1x * fx
            o[5, p] = g1y * fy
    return out
