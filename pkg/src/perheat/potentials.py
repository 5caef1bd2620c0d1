"""Layer heat potentials on a closed curve: assembly, evaluation, checks.

Time is discretized with continuous piecewise-linear densities (hat
functions at the step times, zero at t = 0) and exact integration of the
kernel and its first time moment over each slab; space with nodal
collocation on the uniform parameter grid. The logarithmic self-interaction
in block 0 is integrated with the Kress product rule (exact for
trigonometric densities), the Cauchy-type self-interaction of the
tangential-gradient kinds by subtracting the cotangent model and
integrating it spectrally. All other entries use the trapezoid rule.

Kinds: ``V, Vl, Wstar, W`` (free-space kernel), ``Vq, Vql, Wstar_q, Wq``
(periodic kernel) and ``R`` (single layer of the smooth remainder
``S_q - S``). Block ``m`` couples the value at ``t_k`` to the density
value at ``t_{k-m}``.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernel as _k
from .causal import CausalOperator, TimeGrid
from .errors import ExtrapolationError, NearBoundaryError
from .geometry import locate
from .kernel import EULER_GAMMA, LatticeSumConfig, PeriodicityCell

PERIODIC_KINDS = ("Vq", "Vql", "Wstar_q", "Wq")
FREE_KINDS = ("V", "Vl", "Wstar", "W")
KINDS = PERIODIC_KINDS + FREE_KINDS + ("R",)

_FAMILY = {"Vq": "periodic", "Vql": "periodic", "Wstar_q": "periodic", "Wq": "periodic",
           "V": "free", "Vl": "free", "Wstar": "free", "W": "free", "R": "remainder"}
_BASE = {"Vq": "V", "Vql": "Vl", "Wstar_q": "Wstar", "Wq": "W",
         "V": "V", "Vl": "Vl", "Wstar": "Wstar", "W": "W", "R": "R"}


def _slab(family, d, a, b, cell, cfg):
    if family == "periodic":
        return _k.periodic_slab_integrals(d, a, b, cell, cfg, moments=True)
    if family == "remainder":
        return _k.remainder_slab_integrals(d, a, b, cell, cfg, moments=True)
    return _k.free_slab(d, a, b, moments=True)


def hat_blocks(slab, M, dt):
    """Combine per-slab moments into hat-function blocks.

    ``slab(m)`` returns a tuple of zeroth and first moment arrays over
    ``[m dt, (m+1) dt]`` as ``(v0, v1)``; the result has one entry per
    block ``m = 0..M-1``. With ``J_m = v1_m - m dt v0_m`` the blocks are
    ``B_0 = v0_0 - J_0/dt`` and ``B_m = J_{m-1}/dt + v0_m - J_m/dt``.
    """
    out = []
    prev = None
    for m in range(M):
        v0, v1 = slab(m)
        J = (v1 - (m * dt) * v0) / dt
        B = v0 - J
        if prev is not None:
            B = B + prev
        out.append(B)
        prev = J
    return np.stack(out)


def kress_weights(N):
    """Weights R_j with ``int log(4 sin^2((s_i - s)/2)) f ds ~ sum_j R_{i-j} f_j``."""
    n = N // 2
    delta = 2 * math.pi * np.arange(N) / N
    m = np.arange(1, n)
    R = -(2 * math.pi / n) * (np.cos(np.multiply.outer(delta, m)) / m).sum(axis=1)
    R -= math.pi / n**2 * np.cos(n * delta)
    return R


def _circulant(v):
    N = v.size
    idx = (np.arange(N)[:, None] - np.arange(N)[None, :]) % N
    return v[idx]


def conjugate_weights(N):
    """Matrix C with ``PV int (1/2) cot((s_i - s)/2) f ds ~ C f`` (exact on trig polys)."""
    delta = 2 * math.pi * np.arange(N) / N
    k = np.arange(1, N // 2)
    c = (2 * math.pi / N) * np.sin(np.multiply.outer(delta, k)).sum(axis=1)
    return _circulant(c)


class _Assembler:
    """Computes slab integrals between boundary nodes once and serves kinds."""

    def __init__(self, grid, tg, cell, cfg):
        self.grid = grid
        self.tg = tg
        self.cell = cell or PeriodicityCell((1.0, 1.0))
        self.cfg = cfg or LatticeSumConfig()
        self._cache = {}
        p = grid.points
        self.d = p[:, None, :] - p[None, :, :]

    def slabs(self, family):
        """Hat-function blocks of the single-layer and gradient integrals."""
        if family not in self._cache:
            dt = self.tg.dt
            N = self.grid.N

            def slab(m):
                s0, g0, s1, g1 = _slab(family, self.d, m * dt, (m + 1) * dt, self.cell, self.cfg)
                return (np.concatenate([s0[..., None], g0], axis=-1),
                        np.concatenate([s1[..., None], g1], axis=-1))

            H = hat_blocks(slab, self.tg.M, dt)
            # first moment of slab 0 enters block 1 and needs its own correction
            J0 = (slab(0)[1] / dt) if family != "remainder" else None
            self._cache[family] = (H[..., 0], H[..., 1:], J0)
        return self._cache[family]

    def blocks(self, kind, l=0):
        if kind not in KINDS:
            raise ValueError(f"unknown operator kind {kind!r}; expected one of {KINDS}")
        g = self.grid
        family = _FAMILY[kind]
        base = _BASE[kind]
        single, grad, J0 = self.slabs(family)
        A = self._trapezoid(base, single, grad, l)
        if base == "R":
            return A
        A[0] = self._block0(base, single[0], grad[0], l)
        J0s, J0g = J0[..., 0], J0[..., 1:]
        A[1] += self._moment_block(base, J0s, J0g, l) - self._trapezoid(base, J0s[None], J0g[None], l)[0]
        return A

    def _trapezoid(self, base, single, grad, l):
        g = self.grid
        w = g.weights
        if base in ("V", "R"):
            return single * w
        if base == "Wstar":
            return np.einsum("mijc,ic->mij", grad, g.normals) * w
        if base == "W":
            return -np.einsum("mijc,jc->mij", grad, g.normals) * w
        return grad[..., l] * w

    def _geometry(self, base, l):
        """Log-split helpers shared by the block corrections."""
        g = self.grid
        N = g.N
        ii = np.arange(N)
        diff = g.s[:, None] - g.s[None, :]
        with np.errstate(divide="ignore"):
            logsin = np.log(4 * np.sin(diff / 2) ** 2)
        logsin[ii, ii] = 0.0
        if base == "Wstar":
            e = np.broadcast_to(g.normals[:, None, :], self.d.shape)
        elif base == "W":
            e = -np.broadcast_to(g.normals[None, :, :], self.d.shape)
        else:
            e = np.zeros_like(self.d)
            e[..., l] = 1.0
        ed = np.einsum("ijc,ijc->ij", e, self.d)
        return ii, diff, logsin, e, ed, _circulant(kress_weights(N))

    def _moment_block(self, base, J0s, J0g, l):
        """Slab-0 first moment over dt, with its r^2 log r (or d log r) part split off."""
        g = self.grid
        N = g.N
        dt = self.tg.dt
        speed = g.speed
        ii, diff, logsin, e, ed, R = self._geometry(base, l)
        if base == "V":
            k1 = np.sum(self.d * self.d, axis=-1) / (4 * dt) * speed[None, :] / (4 * math.pi)
            G = J0s * speed[None, :] - k1 * logsin
            G[ii, ii] = speed * (1.0 / (4 * math.pi) + J0s[ii, ii])
            return R * k1 + (2 * math.pi / N) * G
        k1 = ed * speed[None, :] / (8 * math.pi * dt)
        F = np.einsum("ijc,ijc->ij", e, J0g) * speed[None, :] - k1 * logsin
        F[ii, ii] = np.einsum("ic,ic->i", e[ii, ii], J0g[ii, ii]) * speed
        return R * k1 + (2 * math.pi / N) * F

    def _block0(self, base, single0, grad0, l):
        g = self.grid
        N = g.N
        dt = self.tg.dt
        speed = g.speed
        ii, diff, logsin, e, ed, R = self._geometry(base, l)
        off = ~np.eye(N, dtype=bool)
        r2 = np.sum(self.d * self.d, axis=-1)
        if base == "V":
            # (1 + r^2/4dt) log r^2 is the singular part of the hat self-block
            k1 = -(1.0 + r2 / (4 * dt)) * speed[None, :] / (4 * math.pi)
            G = single0 * speed[None, :] - k1 * logsin
            G[ii, ii] = speed * ((-EULER_GAMMA + math.log(4 * dt) - 2 * np.log(speed) - 1.0)
                                 / (4 * math.pi) + single0[ii, ii])
            return R * k1 + (2 * math.pi / N) * G
        # the first-moment part carries d log r^2 / (8 pi dt)
        k1 = -ed * speed[None, :] / (8 * math.pi * dt)
        F = np.einsum("ijc,ijc->ij", e, grad0) * speed[None, :] - k1 * logsin
        reg = np.einsum("ic,ic->i", e[ii, ii], grad0[ii, ii])
        if base in ("Wstar", "W"):
            F[ii, ii] = -g.curvature * speed / (4 * math.pi) + reg * speed
            return R * k1 + (2 * math.pi / N) * F
        # tangential-gradient kinds: subtract the cotangent model
        mu = -g.tangents[:, l] / (2 * math.pi)
        with np.errstate(divide="ignore", invalid="ignore"):
            model = mu[:, None] * 0.5 / np.tan(diff / 2)
        F[off] -= model[off]
        F[ii, ii] = g.d2[:, l] / (4 * math.pi * speed) + reg * speed
        return mu[:, None] * conjugate_weights(N) + R * k1 + (2 * math.pi / N) * F


def assemble(kind, grid, tg, cell=None, cfg=None, l=0):
    """Assemble the causal operator of the given kind on ``grid`` x ``tg``.

    ``l`` selects the gradient component for ``Vl``/``Vql``.
    """
    a = _Assembler(grid, tg, cell, cfg)
    return CausalOperator(kind if _BASE[kind] != "Vl" else f"{kind}{l}", a.blocks(kind, l))


def assemble_many(kinds, grid, tg, cell=None, cfg=None):
    """Several kinds sharing one pass of slab integrals; returns a dict."""
    a = _Assembler(grid, tg, cell, cfg)
    return {k: CausalOperator(k, a.blocks(k)) for k in kinds}


# --------------------------------------------------------------------------
# off-boundary evaluation

def interpolation_matrix(N, factor):
    """Trigonometric interpolation from N to ``factor * N`` uniform nodes."""
    if factor == 1:
        return np.eye(N)
    F = np.fft.fft(np.eye(N), axis=0)
    Nf = N * factor
    pad = np.zeros((Nf, N), dtype=complex)
    h = N // 2
    pad[:h] = F[:h]
    pad[Nf - h + 1:] = F[h + 1:]
    # split the Nyquist mode evenly so real data stay real
    pad[h] = 0.5 * F[h]
    pad[Nf - h] = 0.5 * F[h]
    return np.real(np.fft.ifft(pad, axis=0)) * factor


def _target_slab_values(kind, quad, points, normals, a, b, cell, cfg, periodic):
    """Zeroth and first time-moment quadrature matrices for a slab."""
    d = points[:, None, :] - quad.points[None, :, :]
    if periodic:
        parts = _k.periodic_slab_integrals(d, a, b, cell, cfg, moments=True)
    else:
        parts = _k.free_slab(d, a, b, moments=True)
    w = quad.weights
    out = []
    for single, grad in (parts[:2], parts[2:]):
        if kind == "single":
            out.append(single * w)
        elif kind == "double":
            out.append(-np.einsum("pjc,jc->pj", grad, quad.normals) * w)
        elif kind == "single_normal":
            out.append(np.einsum("pjc,pc->pj", grad, normals) * w)
        elif kind == "single_grad":
            out.append(grad * w[None, :, None])
        else:
            raise ValueError(f"unknown field kind {kind!r}")
    return out


def target_operator(kind, grid, tg, points, cell=None, cfg=None, normals=None, upsample=4,
                    fine_blocks=3, periodic=True):
    """Causal operator from boundary densities to field values at fixed points.

    Output row k is the field at time ``t_{k+1}``. Blocks below
    ``fine_blocks`` (whose kernels are sharp near the curve) integrate on a
    grid refined ``upsample`` times, with the density trigonometrically
    interpolated. ``kind`` is ``single``, ``double`` or ``single_normal``
    (normal derivative of the single layer along ``normals``).
    """
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if kind == "single_normal":
        normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    fine = grid.refine(upsample) if upsample > 1 else grid
    P = _interp_cache(grid.N, upsample)
    dt = tg.dt

    def slab(m):
        a, b = m * dt, (m + 1) * dt
        if m < fine_blocks and upsample > 1:
            return [v @ P for v in _target_slab_values(kind, fine, points, normals, a, b, cell, cfg,
                                                       periodic)]
        return _target_slab_values(kind, grid, points, normals, a, b, cell, cfg, periodic)

    return CausalOperator(f"target_{kind}", hat_blocks(slab, tg.M, dt))


_INTERP = {}


def _interp_cache(N, factor):
    key = (N, factor)
    if key not in _INTERP:
        _INTERP[key] = interpolation_matrix(N, factor)
    return _INTERP[key]


def _upsample_density(rho, factor):
    return rho @ _interp_cache(rho.shape[1], factor).T


def eval_field(kind, grid, tg, cell, cfg, rho, targets, upsample=4, safety=None, periodic=True):
    """Single- or double-layer potential of ``rho`` at arbitrary (t, x) targets.

    ``targets`` is a sequence of ``(t, (x, y))`` pairs or a tuple
    ``(t_array, x_array)``. Targets closer to the curve than ``safety``
    (default: two grid spacings) are refused with
    :class:`NearBoundaryError`.
    """
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    if kind not in ("single", "double"):
        raise ValueError("kind must be 'single' or 'double'")
    t, x = _split_targets(targets)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (tg.M, grid.N):
        raise ValueError(f"density shape {rho.shape} does not match {(tg.M, grid.N)}")
    fine = grid.refine(upsample) if upsample > 1 else grid
    if safety is None:
        safety = 2.0 * grid.spacing
    where = locate(x, grid, cell, safety=safety)
    bad = np.nonzero(where == "near_boundary")[0]
    if bad.size:
        raise NearBoundaryError(
            f"{bad.size} target(s) within {safety:.3e} of the boundary (first index {bad[0]})")
    if np.any(t > tg.T * (1 + 1e-12)):
        raise ValueError("target times must not exceed the final time")
    # nodal values mu(t_j), j = 0..M, with mu(0) = 0
    mu = np.vstack([np.zeros(grid.N), rho])
    mu_fine = _upsample_density(mu, upsample) if upsample > 1 else mu
    out = np.zeros(t.shape)
    dt = tg.dt
    tk = tg.t
    for tv in np.unique(t[t > 0]):
        sel = np.nonzero(t == tv)[0]
        acc = np.zeros(sel.size)
        for j in range(tg.M):
            if tk[j] >= tv:
                break
            a = max(0.0, tv - tk[j + 1])
            b = tv - tk[j]
            quad, dens = (fine, mu_fine) if a < 2 * dt else (grid, mu)
            v0, v1 = _target_slab_values(kind, quad, x[sel], None, a, b, cell, cfg, periodic)
            lin = ((tv - tk[j]) * v0 - v1) / dt
            acc += (v0 - lin) @ dens[j] + lin @ dens[j + 1]
        out[sel] = acc
    return out


def _split_targets(targets):
    if isinstance(targets, tuple) and len(targets) == 2 and np.ndim(targets[1]) == 2:
        t = np.asarray(targets[0], dtype=np.float64).ravel()
        x = np.asarray(targets[1], dtype=np.float64)
    else:
        t = np.array([float(tt) for tt, _ in targets])
        x = np.array([np.asarray(xx, dtype=np.float64) for _, xx in targets]).reshape(-1, 2)
    if x.shape != (t.size, 2):
        raise ValueError("targets must pair one time with one 2-D point")
    return t, x


# --------------------------------------------------------------------------
# checks

def splitting_check(grid, tg, cell=None, cfg=None):
    """Max entrywise block discrepancy between ``Vq`` and ``V + R``.

    ``Vq`` is assembled with the periodic kernel (using the configured
    representation); ``R`` always sums remainder images directly, so the
    comparison also cross-checks the lattice-sum representations.
    """
    a = _Assembler(grid, tg, cell, cfg)
    Vq = a.blocks("Vq")
    V = a.blocks("V")
    R = a.blocks("R")
    return float(np.max(np.abs(Vq - (V + R))))


@dataclass
class JumpReport:
    layer: str
    deltas: np.ndarray
    plus: np.ndarray        # interior-side limits, (M, N)
    minus: np.ndarray       # exterior-side limits, (M, N)
    predicted_plus: np.ndarray
    predicted_minus: np.ndarray
    jump: np.ndarray        # plus - minus
    expected_jump: np.ndarray
    monotone: bool
    residuals: list
    notes: list = field(default_factory=list)

    @property
    def jump_error(self):
        return np.abs(self.jump - self.expected_jump)

    @property
    def side_error(self):
        return np.maximum(np.abs(self.plus - self.predicted_plus),
                          np.abs(self.minus - self.predicted_minus))

    @property
    def max_error(self):
        return float(self.jump_error.max())

    @property
    def max_side_error(self):
        return float(self.side_error.max())

    def rows(self):
        """(k, i, error) rows of the jump error."""
        err = self.jump_error
        M, N = err.shape
        k, i = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
        return list(zip(k.ravel().tolist(), i.ravel().tolist(), err.ravel().tolist()))


_RICHARDSON = np.array([4.0, -6.0, 4.0, -1.0])
_LOWER_ORDER = (np.array([1.0]), np.array([2.0, -1.0]), np.array([3.0, -3.0, 1.0]))


def jump_check(layer, grid, tg, cell=None, cfg=None, rho=None, delta0=None, upsample=8, ops=None,
               strict=True):
    """Compare one-sided boundary limits of a layer potential with the jump relations.

    Limits are extrapolated from the points ``p_i -+ delta nu_i`` with
    ``delta = delta0 * (1, 2, 3, 4)`` (cubic extrapolation to delta = 0).
    The interior side is labelled ``plus``:

    * ``single_normal_derivative``: ``d_nu v^{+-} = +-rho/2 + Wstar_q rho``
    * ``double_trace``: ``w^{+-} = -+rho/2 + Wq rho``

    With ``strict`` an :class:`ExtrapolationError` is raised when the
    residuals of the order 0, 1, 2 extrapolants against the cubic one do not
    decrease.
    """
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    if layer not in ("single_normal_derivative", "double_trace"):
        raise ValueError(f"unknown layer {layer!r}")
    rho = np.asarray(rho, dtype=np.float64)
    if delta0 is None:
        delta0 = 0.5 * grid.spacing
    deltas = delta0 * np.arange(1, 5)
    N = grid.N
    p, nu = grid.points, grid.normals
    pts = []
    for sign in (-1.0, 1.0):   # interior first
        for dl in deltas:
            pts.append(p + sign * dl * nu)
    pts = np.concatenate(pts)
    nrm = np.tile(nu, (8, 1))
    if layer == "single_normal_derivative":
        T = target_operator("single_normal", grid, tg, pts, cell, cfg, normals=nrm, upsample=upsample)
        op = ops["Wstar_q"] if ops else assemble("Wstar_q", grid, tg, cell, cfg)
        bnd = op.apply(rho)
        pred_plus, pred_minus = bnd + 0.5 * rho, bnd - 0.5 * rho
        expected = rho
    else:
        T = target_operator("double", grid, tg, pts, cell, cfg, upsample=upsample)
        op = ops["Wq"] if ops else assemble("Wq", grid, tg, cell, cfg)
        bnd = op.apply(rho)
        pred_plus, pred_minus = bnd - 0.5 * rho, bnd + 0.5 * rho
        expected = -rho
    vals = T.apply(rho).reshape(tg.M, 2, 4, N)
    if not np.all(np.isfinite(vals)):
        raise ExtrapolationError("non-finite field values near the boundary")
    plus = np.einsum("d,kdi->ki", _RICHARDSON, vals[:, 0])
    minus = np.einsum("d,kdi->ki", _RICHARDSON, vals[:, 1])
    # extrapolants of order 0..2 must approach the cubic one monotonically
    resid = []
    for wts in _LOWER_ORDER:
        lo = np.einsum("d,ksdi->ksi", wts, vals[..., : len(wts), :])
        resid.append(float(np.max(np.abs(lo - np.stack([plus, minus], axis=1)))))
    monotone = all(r1 >= r2 for r1, r2 in zip(resid, resid[1:]))
    if not monotone and strict:
        raise ExtrapolationError(f"non-monotone extrapolation residuals {resid}")
    notes = [f"extrapolation: cubic in delta from {len(deltas)} offsets, delta0={delta0:.3e}, "
             f"quadrature refined x{upsample} in the three nearest slabs"]
    return JumpReport(layer, deltas, plus, minus, pred_plus, pred_minus, plus - minus, expected,
                      monotone, resid, notes)
