"""Free-space and q-periodic heat kernels.

Point kernels work in dimension 2 or 3. The slab integrals (the kernel
integrated exactly over a time interval) are two-dimensional and feed operator
assembly; their lattice sums run in the backend selected by
:mod:`perheat._backend`.

Truncation of every lattice sum is adaptive: images are taken shell by shell
(``|z|_inf <= Z``) until an analytic Gaussian bound on the omitted tail drops
below ``LatticeSumConfig.tail_tol``. For long times the dual (Poisson
summation) series converges faster; ``representation="auto"`` switches at the
crossover time ``q_min * q_max / (4 pi)`` where both series decay alike.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import _backend
from .errors import LatticeSumError, SingularPointError

EULER_GAMMA = 0.57721566490153286060651209
_REPRESENTATIONS = ("direct", "spectral", "auto")


@dataclass(frozen=True)
class PeriodicityCell:
    """Box ``prod_j (0, q_jj)`` whose lattice translates tile space."""

    q_diag: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in self.q_diag)
        if len(q) not in (2, 3):
            raise ValueError(f"cell dimension must be 2 or 3, got {len(q)}")
        if any(not (v > 0 and math.isfinite(v)) for v in q):
            raise ValueError(f"cell lengths must be positive, got {q}")
        object.__setattr__(self, "q_diag", q)

    @property
    def dim(self):
        return len(self.q_diag)

    @property
    def q(self):
        return np.array(self.q_diag)

    @property
    def volume(self):
        return float(np.prod(self.q_diag))

    @property
    def q_min(self):
        return min(self.q_diag)

    @property
    def q_max(self):
        return max(self.q_diag)

    @property
    def crossover_time(self):
        return self.q_min * self.q_max / (4.0 * math.pi)

    def wrap(self, x):
        """Representative of ``x`` modulo the lattice in ``[-q/2, q/2]``."""
        q = self.q
        return x - q * np.round(x / q)

    def to_cell(self, x):
        """Representative of ``x`` modulo the lattice in ``[0, q)``."""
        return np.mod(x, self.q)


@dataclass(frozen=True)
class LatticeSumConfig:
    tail_tol: float = 1e-15
    max_shell: int = 64
    representation: str = "auto"

    def __post_init__(self):
        if not self.tail_tol > 0:
            raise ValueError("tail_tol must be positive")
        if self.max_shell < 1:
            raise ValueError("max_shell must be >= 1")
        if self.representation not in _REPRESENTATIONS:
            raise ValueError(f"representation must be one of {_REPRESENTATIONS}")


def e1(x):
    """Exponential integral ``E1(x) = int_x^inf e^{-u}/u du``."""
    arr = np.asarray(x, dtype=np.float64)
    out = _backend.core.e1(arr.reshape(-1)).reshape(arr.shape)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# truncation bounds

def _shell_counts(n, smax):
    s = np.arange(1, smax + 1)
    return s, (2 * s + 1) ** n - (2 * s - 1) ** n


def _pick_shell(tail_terms, tol, max_shell, what):
    # tail_terms[s-1] bounds the total contribution of shell s
    tails = np.cumsum(tail_terms[::-1])[::-1]  # tails[Z] = sum over shells > Z
    tails = np.append(tails, 0.0)
    ok = np.nonzero(tails[: max_shell + 1] < tol)[0]
    if ok.size == 0:
        raise LatticeSumError(
            f"{what}: tail bound {tails[max_shell]:.3e} still above "
            f"tail_tol={tol:.1e} at max_shell={max_shell}"
        )
    return int(ok[0])


def _direct_point_shells(t, D, cell, cfg):
    """Shells so the image tail of S and |grad S| at time t is below tol."""
    n = cell.dim
    s, counts = _shell_counts(n, cfg.max_shell + 40)
    dist = (s - D) * cell.q_min
    with np.errstate(divide="ignore", over="ignore"):
        gauss = np.where(dist > 0, np.exp(-dist**2 / (4 * t)), 1.0)
        far = (s + 1.0) * cell.q_max * math.sqrt(n)
        terms = counts * gauss * (4 * math.pi * t) ** (-n / 2) * np.maximum(1.0, far / (2 * t))
        terms[dist <= 0] = np.inf
    return _pick_shell(terms, cfg.tail_tol, cfg.max_shell, f"direct sum at t={t:g}")


def _spectral_point_modes(t, cell, cfg):
    n = cell.dim
    s, counts = _shell_counts(n, cfg.max_shell + 40)
    lam = 4 * math.pi**2 * (s / cell.q_max) ** 2
    grad = 1.0 + 2 * math.pi * math.sqrt(n) * s / cell.q_min
    terms = counts * np.exp(-lam * t) / cell.volume * grad
    return _pick_shell(terms, cfg.tail_tol, cfg.max_shell, f"spectral sum at t={t:g}")


def _direct_slab_shells(b, D, cell, cfg):
    s, counts = _shell_counts(2, cfg.max_shell + 40)
    dist = (s - D) * cell.q_min
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = dist**2 / (4 * b)
        single = e1(np.where(dist > 0, x, 1.0)) / (4 * math.pi)
        grad = np.exp(-x) / (2 * math.pi * np.where(dist > 0, dist, 1.0))
        terms = counts * np.maximum(single, grad) * (1.0 + b)
        terms[dist <= 0] = np.inf
    return _pick_shell(terms, cfg.tail_tol, cfg.max_shell, f"direct slab sum up to {b:g}")


def _spectral_slab_modes(a, b, cell, cfg):
    s, counts = _shell_counts(2, cfg.max_shell + 40)
    lam = 4 * math.pi**2 * (s / cell.q_max) ** 2
    grad = 1.0 + 2 * math.pi * math.sqrt(2) * s / cell.q_min
    terms = counts * np.exp(-lam * a) / (lam * cell.volume) * grad * (1.0 + b + 1.0 / lam)
    return _pick_shell(terms, cfg.tail_tol, cfg.max_shell, f"spectral slab sum from {a:g}")


def _image_offsets(Z, n, skip_origin=False):
    r = np.arange(-Z, Z + 1)
    grids = np.meshgrid(*([r] * n), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    if skip_origin:
        z = z[np.any(z != 0, axis=1)]
    return z


# --------------------------------------------------------------------------
# point kernels

def _prepare(t, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] not in (2, 3):
        raise ValueError("x must have a trailing dimension of 2 or 3")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape[:-1])
    return t, x


def free_kernel(t, x, n=None):
    """Free-space heat kernel ``(4 pi t)^{-n/2} exp(-|x|^2 / 4t)``, zero for t <= 0.

    ``x`` has a trailing axis of length n; ``t`` broadcasts against the
    leading axes. Returns a float for a single point.
    """
    t, x = _prepare(t, x)
    if n is not None and x.shape[-1] != n:
        raise ValueError(f"x has dimension {x.shape[-1]}, expected {n}")
    n = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    if np.any((t == 0) & (r2 == 0)):
        raise SingularPointError("free kernel is undefined at (t, x) = (0, 0)")
    pos = t > 0
    out = np.zeros(t.shape)
    tp = t[pos]
    out[pos] = (4 * math.pi * tp) ** (-n / 2) * np.exp(-r2[pos] / (4 * tp))
    return out if out.ndim else float(out)


def free_kernel_grad(t, x, n=None):
    """Spatial gradient ``-x/(2t) S_n(t, x)``; zero vector for t <= 0."""
    t, x = _prepare(t, x)
    s = np.asarray(free_kernel(t, x, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where((t > 0)[..., None], -x / (2 * t[..., None]) * s[..., None], 0.0)
    return g


def _periodic_point(t, x, cell, cfg, want_grad):
    t, x = _prepare(t, x)
    if x.shape[-1] != cell.dim:
        raise ValueError("point dimension does not match the cell")
    n = cell.dim
    xw = cell.wrap(x)
    if np.any((t == 0) & np.all(xw == 0, axis=-1)):
        raise SingularPointError("periodic kernel is undefined on {0} x qZ^n")
    shape = t.shape
    tf = t.reshape(-1)
    xf = xw.reshape(-1, n)
    val = np.zeros(tf.shape)
    grad = np.zeros((tf.size, n))
    tail = np.zeros(tf.shape)
    tstar = cell.crossover_time
    q = cell.q
    for tv in np.unique(tf[tf > 0]):
        sel = tf == tv
        xs = xf[sel]
        spectral = cfg.representation == "spectral" or (
            cfg.representation == "auto" and tv >= tstar)
        if spectral:
            K = _spectral_point_modes(tv, cell, cfg)
            k = _image_offsets(K, n)
            freq = 2 * math.pi * k / q
            w = np.exp(-np.sum(freq**2, axis=1) * tv) / cell.volume
            phase = xs @ freq.T
            val[sel] = np.cos(phase) @ w
            if want_grad:
                grad[sel] = -(np.sin(phase) * w) @ freq
            s, counts = _shell_counts(n, K + 40)
            lam = 4 * math.pi**2 * (s / cell.q_max) ** 2
            tail[sel] = np.sum((counts * np.exp(-lam * tv) / cell.volume)[K:])
        else:
            Z = _direct_point_shells(tv, 0.5, cell, cfg)
            z = _image_offsets(Z, n)
            y = xs[:, None, :] + (z * q)[None]
            g = (4 * math.pi * tv) ** (-n / 2) * np.exp(-np.sum(y * y, axis=-1) / (4 * tv))
            val[sel] = g.sum(axis=1)
            if want_grad:
                grad[sel] = -np.einsum("pi,pij->pj", g, y) / (2 * tv)
            s, counts = _shell_counts(n, Z + 40)
            dist = (s - 0.5) * cell.q_min
            tail[sel] = np.sum(
                (counts * (4 * math.pi * tv) ** (-n / 2) * np.exp(-dist**2 / (4 * tv)))[Z:])
    return val.reshape(shape), grad.reshape(shape + (n,)), tail.reshape(shape)


def periodic_kernel(t, x, cell, cfg=None, return_tail=False):
    """q-periodic heat kernel (lattice sum of free kernels); zero for t <= 0.

    With ``return_tail=True`` also returns the analytic bound on the
    omitted part of the series.
    """
    cfg = cfg or LatticeSumConfig()
    val, _, tail = _periodic_point(t, x, cell, cfg, want_grad=False)
    if val.ndim == 0:
        val, tail = float(val), float(tail)
    return (val, tail) if return_tail else val


def periodic_kernel_grad(t, x, cell, cfg=None):
    """Spatial gradient of :func:`periodic_kernel`, term by term."""
    cfg = cfg or LatticeSumConfig()
    _, grad, _ = _periodic_point(t, x, cell, cfg, want_grad=True)
    return grad


def remainder_kernel(t, x, cell, cfg=None):
    """Smooth remainder ``S_q - S`` near the origin, as the sum over z != 0.

    Only offered for ``|x| < min_j q_jj``; zero for t <= 0 (its continuous
    extension across t = 0).
    """
    cfg = cfg or LatticeSumConfig()
    t, x = _prepare(t, x)
    n = cell.dim
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r >= cell.q_min):
        raise ValueError("remainder_kernel requires |x| < min q_jj")
    q = cell.q
    D = float(np.max(np.abs(x) / q)) if x.size else 0.0
    shape = t.shape
    tf = t.reshape(-1)
    xf = x.reshape(-1, n)
    out = np.zeros(tf.shape)
    for tv in np.unique(tf[tf > 0]):
        sel = tf == tv
        Z = max(1, _direct_point_shells(tv, D, cell, cfg))
        z = _image_offsets(Z, n, skip_origin=True)
        y = xf[sel][:, None, :] + (z * q)[None]
        out[sel] = np.sum(np.exp(-np.sum(y * y, axis=-1) / (4 * tv)), axis=1) * (
            4 * math.pi * tv) ** (-n / 2)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# slab integrals (n = 2)

def _check_slab(a, b):
    if a < 0:
        raise ValueError(f"slab start must be >= 0, got {a}")
    if b < a:
        raise ValueError(f"slab end {b} precedes start {a}")


def slab_integrals(r, a, b):
    """Exact time integrals of the 2-D kernel over ``[a, b]`` at distance r.

    Returns ``(single, grad_factor)`` where ``single = int_a^b S_2(s, r) ds``
    and ``int_a^b grad S_2(s, d) ds = d * grad_factor(|d|)``. At r = 0 the
    analytic limits are used (``single`` is infinite and ``grad_factor`` is
    ``-inf`` when a = 0). A degenerate slab ``b == a`` gives zeros.
    """
    return _free_moments(r, a, b)[:2]


def slab_moment_integrals(r, a, b):
    """First time moments: ``int_a^b s S_2(s, r) ds`` and its gradient factor.

    ``int_a^b s grad S_2(s, d) ds = d * grad_factor``; the factor is
    ``-(E1(r^2/4b) - E1(r^2/4a)) / (8 pi)``, logarithmic as r -> 0 when a = 0.
    """
    return _free_moments(r, a, b)[2:]


def _free_moments(r, a, b):
    _check_slab(a, b)
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    scalar = r.ndim == 0
    r = r.reshape(-1)
    out = np.zeros((4, r.size))
    if b > a:
        r2 = r * r
        zero = r2 == 0
        nz = ~zero
        xb = r2[nz] / (4 * b)
        eb = np.exp(-xb)
        if a > 0:
            xa = r2[nz] / (4 * a)
            de = e1(xb) - e1(xa)
            out[1, nz] = eb * np.expm1(xb - xa) / (2 * math.pi * r2[nz])
            out[2, nz] = (b * eb - a * np.exp(-xa) - 0.25 * r2[nz] * de) / (4 * math.pi)
            out[:, zero] = np.array([[math.log(b / a) / (4 * math.pi)],
                                     [-(1.0 / a - 1.0 / b) / (8 * math.pi)],
                                     [(b - a) / (4 * math.pi)],
                                     [-math.log(b / a) / (8 * math.pi)]])
        else:
            de = e1(xb)
            out[1, nz] = -eb / (2 * math.pi * r2[nz])
            out[2, nz] = (b * eb - 0.25 * r2[nz] * de) / (4 * math.pi)
            out[:, zero] = np.array([[np.inf], [-np.inf], [b / (4 * math.pi)], [-np.inf]])
        out[0, nz] = de / (4 * math.pi)
        out[3, nz] = -de / (8 * math.pi)
    if scalar:
        return tuple(float(v) for v in out[:, 0])
    return tuple(out)


def _pack(parts, shape, moments):
    s0, gx0, gy0, s1, gx1, gy1 = parts
    res = (s0.reshape(shape), np.stack([gx0, gy0], axis=-1).reshape(shape + (2,)))
    if moments:
        res += (s1.reshape(shape), np.stack([gx1, gy1], axis=-1).reshape(shape + (2,)))
    return res


def free_slab(d, a, b, moments=False):
    """Free-space slab integrals at displacement vectors ``d`` (..., 2).

    Returns ``(single, grad)``, plus the first-moment pair ``(single1,
    grad1)`` when ``moments`` is set. An exactly zero displacement with
    a = 0 (the singular self term) yields zeros; callers add its analytic
    treatment.
    """
    _check_slab(a, b)
    d = np.asarray(d, dtype=np.float64)
    shape = d.shape[:-1]
    flat = d.reshape(-1, 2)
    r = np.sqrt(np.sum(flat * flat, axis=1))
    f0, c0, f1, c1 = (np.atleast_1d(v) for v in _free_moments(r, a, b))
    if a == 0:
        self_term = r == 0
        for v in (f0, c0, f1, c1):
            v[self_term] = 0.0
    parts = (f0, flat[:, 0] * c0, flat[:, 1] * c0, f1, flat[:, 0] * c1, flat[:, 1] * c1)
    return _pack(parts, shape, moments)


def _slab_parts(a, b, cell, cfg):
    tstar = cell.crossover_time
    if cfg.representation == "direct" or b <= tstar:
        return [("direct", a, b)]
    if a >= tstar:
        return [("spectral", a, b)]
    return [("direct", a, tstar), ("spectral", tstar, b)]


def periodic_slab_integrals(d, a, b, cell, cfg=None, moments=False):
    """Lattice-summed slab integrals of the periodic kernel and its gradient.

    ``d`` has shape (..., 2); returns ``(single, grad)`` and, with
    ``moments``, also the first time moments ``(single1, grad1)``. Slabs
    reaching below the crossover time always use direct images for that
    part (the dual series diverges as the slab start goes to 0), so
    ``"spectral"`` behaves like ``"auto"`` here.

    For a = 0 and d exactly on the lattice the returned values are regular
    parts ``lim (periodic - free)``, i.e. the remainder at the origin.
    """
    cfg = cfg or LatticeSumConfig()
    _check_slab(a, b)
    if cell.dim != 2:
        raise ValueError("slab integrals are two-dimensional")
    d = np.asarray(d, dtype=np.float64)
    shape = d.shape[:-1]
    flat = cell.wrap(d.reshape(-1, 2))
    dx = np.ascontiguousarray(flat[:, 0])
    dy = np.ascontiguousarray(flat[:, 1])
    acc = np.zeros((6, dx.size))
    if b > a:
        qx, qy = cell.q_diag
        core = _backend.core
        parts = _slab_parts(a, b, cell, cfg)
        for kind, lo, hi in parts:
            if kind == "direct":
                Z = _direct_slab_shells(hi, 0.5, cell, cfg)
                acc += core.slab_direct(dx, dy, lo, hi, qx, qy, Z, False)
            else:
                K = _spectral_slab_modes(lo, hi, cell, cfg)
                acc += core.slab_spectral(dx, dy, lo, hi, qx, qy, K)
        if a == 0 and len(parts) == 2:
            # the dual series carries the free self term over [t*, b]
            origin = (dx == 0) & (dy == 0)
            tstar = parts[0][2]
            acc[0, origin] -= math.log(b / tstar) / (4 * math.pi)
            acc[3, origin] -= (b - tstar) / (4 * math.pi)
    return _pack(acc, shape, moments)


def remainder_slab_integrals(d, a, b, cell, cfg=None, moments=False):
    """Slab integrals of ``S_q - S`` by direct summation over z != 0.

    Independent of ``cfg.representation``; valid for displacements inside
    one cell (``|d_j| < q_jj``), e.g. between two points of the same cell.
    """
    cfg = cfg or LatticeSumConfig()
    _check_slab(a, b)
    d = np.asarray(d, dtype=np.float64)
    shape = d.shape[:-1]
    flat = d.reshape(-1, 2)
    q = cell.q
    D = float(np.max(np.abs(flat) / q)) if flat.size else 0.0
    if D >= 1.0:
        raise ValueError("remainder slab integrals need displacements inside one cell")
    dx = np.ascontiguousarray(flat[:, 0])
    dy = np.ascontiguousarray(flat[:, 1])
    if b > a:
        Z = max(1, _direct_slab_shells(b, D, cell, cfg))
        acc = _backend.core.slab_direct(dx, dy, a, b, q[0], q[1], Z, True)
    else:
        acc = np.zeros((6, dx.size))
    return _pack(acc, shape, moments)
