"""Pure-Python (numpy) lattice-sum kernels.

Reference implementation of the functions compiled in ``perheat._core``;
selected automatically when the extension is unavailable.
"""
import numpy as np

EULER_GAMMA = 0.57721566490153286060651209


def e1(x):
    """Exponential integral E1 on a float64 array (any shape)."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    out = np.empty_like(flat)
    out[flat <= 0.0] = np.inf
    out[flat > 745.0] = 0.0

    small = (flat > 0.0) & (flat <= 1.0)
    if small.any():
        xs = flat[small]
        total = np.zeros_like(xs)
        term = np.ones_like(xs)
        for k in range(1, 80):
            term = term * (-xs / k)
            total += term / k
            if np.all(np.abs(term / k) < 1e-16 * np.abs(total)):
                break
        out[small] = -EULER_GAMMA - np.log(xs) - total

    large = (flat > 1.0) & (flat <= 745.0)
    if large.any():
        xl = flat[large]
        b = xl + 1.0
        c = np.full_like(xl, 1e300)
        d = 1.0 / b
        h = d.copy()
        done = np.zeros(xl.shape, dtype=bool)
        for k in range(1, 500):
            an = -float(k * k)
            b = b + 2.0
            d_new = 1.0 / (an * d + b)
            c_new = b + an / c
            delta = c_new * d_new
            # frozen entries keep their converged values
            d = np.where(done, d, d_new)
            c = np.where(done, c, c_new)
            h = np.where(done, h, h * delta)
            done |= np.abs(delta - 1.0) < 1e-16
            if done.all():
                break
        out[large] = h * np.exp(-xl)
    return out.reshape(x.shape)


def slab_direct(dx, dy, a, b, qx, qy, Z, skip_origin):
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    s0 = np.zeros_like(dx)
    g0x = np.zeros_like(dx)
    g0y = np.zeros_like(dx)
    s1 = np.zeros_like(dx)
    g1x = np.zeros_like(dx)
    g1y = np.zeros_like(dx)
    lgba = np.log(b / a) if a > 0 else 0.0
    dinv = 0.25 * (1.0 / a - 1.0 / b) if a > 0 else 0.0
    for zx in range(-Z, Z + 1):
        rx = dx + qx * zx
        for zy in range(-Z, Z + 1):
            if skip_origin and zx == 0 and zy == 0:
                continue
            ry = dy + qy * zy
            r2 = rx * rx + ry * ry
            xb = 0.25 * r2 / b
            live = (xb <= 745.0) & (r2 > 0.0)
            if a > 0:
                hit = r2 == 0.0
                s0[hit] += lgba
                s1[hit] += b - a
            if not live.any():
                continue
            r2l = r2[live]
            xbl = xb[live]
            eb = np.exp(-xbl)
            if a > 0:
                xa = 0.25 * r2l / a
                de = e1(xbl) - e1(xa)
                c = eb * np.expm1(-r2l * dinv) / r2l
                s1[live] += b * eb - a * np.exp(-xa) - 0.25 * r2l * de
            else:
                de = e1(xbl)
                c = -eb / r2l
                s1[live] += b * eb - 0.25 * r2l * de
            s0[live] += de
            g0x[live] += rx[live] * c
            g0y[live] += ry[live] * c
            g1x[live] += rx[live] * de
            g1y[live] += ry[live] * de
    return np.stack([s0 / (4.0 * np.pi), g0x / (2.0 * np.pi), g0y / (2.0 * np.pi),
                     s1 / (4.0 * np.pi), -g1x / (8.0 * np.pi), -g1y / (8.0 * np.pi)])


def slab_spectral(dx, dy, a, b, qx, qy, K):
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    vol = qx * qy
    fx = 2.0 * np.pi / qx
    fy = 2.0 * np.pi / qy
    ks = np.arange(-K, K + 1)
    kx, ky = np.meshgrid(ks, ks, indexing="ij")
    lam = (fx * kx) ** 2 + (fy * ky) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ea, eb = np.exp(-lam * a), np.exp(-lam * b)
        w0 = (ea - eb) / (lam * vol)
        w1 = ((a + 1.0 / lam) * ea - (b + 1.0 / lam) * eb) / (lam * vol)
    w0[K, K] = (b - a) / vol
    w1[K, K] = 0.5 * (b * b - a * a) / vol
    cx = np.cos(fx * np.multiply.outer(dx, ks))
    sx = np.sin(fx * np.multiply.outer(dx, ks))
    cy = np.cos(fy * np.multiply.outer(dy, ks))
    sy = np.sin(fy * np.multiply.outer(dy, ks))
    out = []
    for w in (w0, w1):
        # cos(A+B) and sin(A+B) summed against the separable weight table
        single = np.einsum("pi,ij,pj->p", cx, w, cy) - np.einsum("pi,ij,pj->p", sx, w, sy)
        wkx = w * kx
        wky = w * ky
        gx = -(np.einsum("pi,ij,pj->p", sx, wkx, cy) + np.einsum("pi,ij,pj->p", cx, wkx, sy))
        gy = -(np.einsum("pi,ij,pj->p", sx, wky, cy) + np.einsum("pi,ij,pj->p", cx, wky, sy))
        out += [single, gx * fx, gy * fy]
    return np.stack(out)
