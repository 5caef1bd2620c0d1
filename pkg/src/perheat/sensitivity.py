"""Finite-difference witnesses of smooth dependence on the shape and the data.

Each probe evaluates a quantity at ``phi0 +- h psi`` (or at perturbed
transmission parameters) for a decreasing ladder of steps and forms central
quotients ``Q(h)``. Smooth dependence shows as ``Q(h) = Q(0) + C h^2 +
O(h^4)``, so consecutive differences ``|Q(h_m) - Q(h_{m+1})|`` shrink at
order 2. The probes act on one fixed density in a grid max-norm, which is a
weaker statement than smoothness in operator norm; reports say so.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .causal import TimeGrid
from .errors import NearBoundaryError
from .geometry import BoundaryMap, build_grid, locate, perturb
from .kernel import LatticeSumConfig, PeriodicityCell
from .potentials import assemble, eval_field, target_operator
from .transmission import TransmissionData, eval_solution, solve_full, solve_reduced

log = logging.getLogger(__name__)

DEFAULT_H = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
ORDER_MIN = 1.9
SCOPE_NOTE = ("probe acts on one fixed density in the grid max-norm; this is weaker than "
              "smoothness of the map in operator norm")


@dataclass
class ProbeReport:
    h: np.ndarray
    quotients: list
    quotient_norms: np.ndarray
    second_differences: np.ndarray
    orders: np.ndarray
    floor: float
    used: np.ndarray
    passed: bool
    extrapolated: np.ndarray
    notes: list = field(default_factory=list)

    @property
    def min_order(self):
        ok = self.orders[np.isfinite(self.orders)]
        return float(ok.min()) if ok.size else math.nan

    def rows(self):
        """(h, quotient_norm, second_difference, observed_order) rows."""
        out = []
        for m, h in enumerate(self.h):
            sd = self.second_differences[m] if m < len(self.second_differences) else math.nan
            order = self.orders[m - 1] if 1 <= m <= len(self.orders) else math.nan
            out.append((float(h), float(self.quotient_norms[m]), float(sd), float(order)))
        return out


def _check_ladder(h_list):
    h = np.asarray(h_list, dtype=np.float64)
    if h.ndim != 1 or h.size < 2 or np.any(h <= 0) or np.any(np.diff(h) >= 0):
        raise ValueError("h ladder must hold at least two strictly decreasing positive steps")
    return h


def make_report(h_list, evaluate, scale=None, order_min=ORDER_MIN):
    """Central-quotient report for ``evaluate(h_signed) -> array``.

    Differences below a roundoff floor (``100 eps |value| / h_min``) are
    excluded from the order estimates.
    """
    h = _check_ladder(h_list)
    quotients = []
    size = 0.0
    for hm in h:
        up, dn = evaluate(hm), evaluate(-hm)
        size = max(size, float(np.max(np.abs(up))), float(np.max(np.abs(dn))))
        quotients.append((up - dn) / (2.0 * hm))
    if scale is not None:
        size = max(size, scale)
    floor = 100.0 * np.finfo(float).eps * size / h[-1]
    qn = np.array([float(np.max(np.abs(q))) for q in quotients])
    sd = np.array([float(np.max(np.abs(a - b))) for a, b in zip(quotients, quotients[1:])])
    used = sd > floor
    orders = np.full(max(sd.size - 1, 0), np.nan)
    for m in range(sd.size - 1):
        if used[m] and used[m + 1]:
            orders[m] = math.log(sd[m] / sd[m + 1]) / math.log(h[m] / h[m + 1])
    notes = [SCOPE_NOTE]
    finite = orders[np.isfinite(orders)]
    if finite.size:
        passed = bool(np.all(finite >= order_min))
    else:
        # every difference is at roundoff: the quotient is h-independent
        passed = bool(not np.any(used))
        notes.append("all quotient differences below the roundoff floor")
    extrap = (4.0 * quotients[-1] - quotients[-2]) / 3.0 if np.allclose(h[-2], 2 * h[-1]) else quotients[-1]
    return ProbeReport(h, quotients, qn, sd, orders, floor, used, passed, extrap, notes)


def fd_operator_derivative(phi0, psi, mu, kind, shape, N, tg, cell=None, cfg=None,
                           h_list=DEFAULT_H, l=0):
    """Central quotients of ``Op[phi0 + h psi] mu`` for an operator kind."""
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    mu = np.asarray(mu, dtype=np.float64)

    def evaluate(h):
        phi = perturb(phi0, psi, h, shape, N, cell)
        grid = build_grid(shape, phi, N, cell)
        return assemble(kind, grid, tg, cell, cfg, l=l).apply(mu)

    return make_report(h_list, evaluate)


def translation_check(phi0, c, mu, shape, N, tg, targets, cell=None, cfg=None, h_list=DEFAULT_H,
                      upsample=4):
    """Rigid-translation oracle for the periodic single layer.

    Translating the whole curve by ``h c`` leaves the assembled boundary
    blocks unchanged (sources and targets move together); at fixed
    off-curve points the field derivative is ``-c . grad v_q``, assembled
    from the kernel gradient. ``targets`` are points; the field is compared
    at every step time. Returns a dict with the block invariance, the
    extrapolated quotient error and the probe report.
    """
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    c = np.asarray(c, dtype=np.float64)
    psi = BoundaryMap.constant(c)
    pts = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    grid0 = build_grid(shape, phi0, N, cell)
    V0 = assemble("Vq", grid0, tg, cell, cfg).blocks
    h0 = float(h_list[0])
    shifted = build_grid(shape, perturb(phi0, psi, h0, shape, N, cell), N, cell)
    invariance = float(np.max(np.abs(assemble("Vq", shifted, tg, cell, cfg).blocks - V0)))

    def evaluate(h):
        grid = build_grid(shape, perturb(phi0, psi, h, shape, N, cell), N, cell)
        return target_operator("single", grid, tg, pts, cell, cfg, upsample=upsample).apply(mu)

    rep = make_report(h_list, evaluate)
    normals = np.tile(c, (pts.shape[0], 1))
    exact = -target_operator("single_normal", grid0, tg, pts, cell, cfg, normals=normals,
                             upsample=upsample).apply(mu)
    err = float(np.max(np.abs(rep.extrapolated - exact)))
    raw = [float(np.max(np.abs(q - exact))) for q in rep.quotients]
    return {"block_invariance": invariance, "derivative_error": err, "raw_errors": raw,
            "report": rep, "exact": exact}


def _margin_check(targets, grids, cell, margin, want):
    for grid in grids:
        where = locate(targets, grid, cell, safety=margin)
        bad = np.nonzero(where != want)[0]
        if bad.size:
            raise NearBoundaryError(
                f"target {bad[0]} is {where[bad[0]]!r} for a perturbed interface "
                f"(margin {margin:.3e}, expected {want!r})")


def fd_solution_derivative(phi0, psi, shape, N, tg, data, targets, cell=None, cfg=None,
                           h_list=DEFAULT_H, side="plus", param="shape", margin=None,
                           method="reduced", upsample=4):
    """Central quotients of the transmission fields at fixed targets.

    ``param`` selects the direction: ``shape`` (``phi0 + h psi``),
    ``lambda_plus`` or ``lambda_minus`` (additive steps in the parameter).
    ``data`` holds densities on the reference parameter nodes and is kept
    fixed. ``targets`` are ``(t_array, x_array)`` and must stay at least
    ``margin`` away from every perturbed interface, on the requested side.
    """
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    if param not in ("shape", "lambda_plus", "lambda_minus"):
        raise ValueError(f"unknown probe direction {param!r}")
    solve = solve_reduced if method == "reduced" else solve_full
    t, x = np.asarray(targets[0], dtype=np.float64), np.atleast_2d(targets[1])
    want = "interior" if side == "plus" else "exterior"
    h = _check_ladder(h_list)
    if param == "shape":
        grids = {}
        for hm in h:
            for sgn in (1.0, -1.0):
                grids[sgn * hm] = build_grid(shape, perturb(phi0, psi, sgn * hm, shape, N, cell),
                                             N, cell)
        if margin is None:
            margin = 2.0 * max(g.spacing for g in grids.values())
        _margin_check(x, grids.values(), cell, margin, want)
    else:
        grid0 = build_grid(shape, phi0, N, cell)
        _margin_check(x, [grid0], cell, margin or 2.0 * grid0.spacing, want)

    def evaluate(hm):
        if param == "shape":
            grid, d = grids[hm], data
        else:
            grid = grid0
            lp = data.lam_plus + (hm if param == "lambda_plus" else 0.0)
            lm = data.lam_minus + (hm if param == "lambda_minus" else 0.0)
            d = TransmissionData(lp, lm, data.f, data.g)
        sol = solve(grid, tg, cell, cfg, d)
        return eval_solution(sol, side, (t, x), upsample=upsample)

    return make_report(h, evaluate)


def linearity_check(grid, tg, cell, cfg, data1, data2, alpha, beta, method="full", ops=None):
    """Superposition discrepancy of the transmission solve in the data (f, g)."""
    from .transmission import boundary_operators
    solve = solve_full if method == "full" else solve_reduced
    ops = ops if ops is not None else boundary_operators(grid, tg, cell, cfg)
    s1 = solve(grid, tg, cell, cfg, data1, ops)
    s2 = solve(grid, tg, cell, cfg, data2, ops)
    s = solve(grid, tg, cell, cfg, data1.combine(data2, alpha, beta), ops)
    err_p = np.abs(s.rho_plus - (alpha * s1.rho_plus + beta * s2.rho_plus))
    err_m = np.abs(s.rho_minus - (alpha * s1.rho_minus + beta * s2.rho_minus))
    return float(max(err_p.max(), err_m.max()))
