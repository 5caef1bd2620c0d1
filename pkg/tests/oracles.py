"""Independent reference values: high-precision sums and adaptive quadrature."""
import math

import mpmath as mp
import numpy as np
from scipy.integrate import quad

mp.mp.dps = 40


def mp_free(t, x):
    t = mp.mpf(t)
    r2 = sum(mp.mpf(v) ** 2 for v in x)
    n = len(x)
    return (4 * mp.pi * t) ** (-mp.mpf(n) / 2) * mp.exp(-r2 / (4 * t))


def mp_periodic(t, x, q, Z=None, skip_origin=False):
    """Direct image sum in 40-digit arithmetic over ``|z|_inf <= Z``.

    The default Z leaves images beyond distance ``sqrt(160 t)`` (Gaussian
    factor below e^-40) out of the sum.
    """
    n = len(x)
    if Z is None:
        Z = int(math.sqrt(160 * t) / min(q)) + 2
    total = mp.mpf(0)
    grids = np.stack(np.meshgrid(*([np.arange(-Z, Z + 1)] * n), indexing="ij"), -1).reshape(-1, n)
    for z in grids:
        if skip_origin and not np.any(z):
            continue
        y = [mp.mpf(x[j]) + mp.mpf(q[j]) * int(z[j]) for j in range(n)]
        total += mp_free(t, y)
    return total


def mp_e1(x):
    return mp.e1(mp.mpf(x))


def quad_slab(r, a, b):
    """Adaptive quadrature of the 2-D kernel and its gradient factor over [a, b]."""
    f = lambda s: math.exp(-r * r / (4 * s)) / (4 * math.pi * s) if s > 0 else 0.0
    g = lambda s: -math.exp(-r * r / (4 * s)) / (8 * math.pi * s * s) if s > 0 else 0.0
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=400)
    return quad(f, a, b, **opts)[0], quad(g, a, b, **opts)[0]


def quad_slab_moment(r, a, b):
    f = lambda s: s * math.exp(-r * r / (4 * s)) / (4 * math.pi * s) if s > 0 else 0.0
    g = lambda s: -s * math.exp(-r * r / (4 * s)) / (8 * math.pi * s * s) if s > 0 else 0.0
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=400)
    return quad(f, a, b, **opts)[0], quad(g, a, b, **opts)[0]


def central_difference(f, x, h):
    """Central-difference gradient of a scalar function of a 2-D point."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(2)
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        out[l] = (f(x + e) - f(x - e)) / (2 * h)
    return out
