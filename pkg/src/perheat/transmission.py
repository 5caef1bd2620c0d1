"""Space-periodic heat transmission problem through single-layer densities.

The fields are represented as ``u+ = v_q[rho+]`` inside the inclusions and
``u- = v_q[rho-]`` outside. With the boundary traces of the single layer and
its normal derivative, the interface conditions become

    Vq rho+ - Vq rho- = f
    lam- (-rho-/2 + Wstar_q rho-) - lam+ (rho+/2 + Wstar_q rho+) = g

which :func:`solve_full` marches directly and :func:`solve_reduced` splits
into a first-kind solve ``Vq sigma = f`` followed by the second-kind
equation ``(I - 2 lam_c Wstar_q) rho- = rho0-`` and ``rho+ = rho- + sigma``.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .causal import CausalOperator, CausalSolver, TimeGrid
from .geometry import build_grid, locate
from .kernel import LatticeSumConfig, PeriodicityCell
from .potentials import _split_targets, assemble_many, eval_field

log = logging.getLogger(__name__)


def contrast(lam_plus, lam_minus):
    """Contrast ``(lam- - lam+) / (lam- + lam+)``, always in (-1, 1)."""
    if not (lam_plus > 0 and lam_minus > 0):
        raise ValueError(f"transmission parameters must be positive, got {lam_plus}, {lam_minus}")
    return (lam_minus - lam_plus) / (lam_minus + lam_plus)


@dataclass
class TransmissionData:
    lam_plus: float
    lam_minus: float
    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        contrast(self.lam_plus, self.lam_minus)
        self.f = np.asarray(self.f, dtype=np.float64)
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.f.shape != self.g.shape or self.f.ndim != 2:
            raise ValueError("f and g must be density grids of equal shape (M, N)")
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.g))):
            raise ValueError("data must be finite")

    @property
    def lam_c(self):
        return contrast(self.lam_plus, self.lam_minus)

    def combine(self, other, alpha, beta):
        """Data ``alpha * self + beta * other`` (same lambdas)."""
        if (self.lam_plus, self.lam_minus) != (other.lam_plus, other.lam_minus):
            raise ValueError("cannot combine data with different transmission parameters")
        return TransmissionData(self.lam_plus, self.lam_minus,
                                alpha * self.f + beta * other.f, alpha * self.g + beta * other.g)


@dataclass
class TransmissionSolution:
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    grid: object
    tg: TimeGrid
    cell: PeriodicityCell
    cfg: LatticeSumConfig
    ops: dict
    method: str
    condition: float
    info: dict = field(default_factory=dict)


def boundary_operators(grid, tg, cell=None, cfg=None):
    """The periodic single layer and normal-derivative operators on the boundary."""
    return assemble_many(("Vq", "Wstar_q"), grid, tg, cell, cfg)


def _ops(ops, grid, tg, cell, cfg):
    return ops if ops is not None else boundary_operators(grid, tg, cell, cfg)


def _check_shape(data, grid, tg):
    if data.f.shape != (tg.M, grid.N):
        raise ValueError(f"data shape {data.f.shape} does not match grid {(tg.M, grid.N)}")


def full_system(ops, lam_plus, lam_minus):
    """Block operator of the coupled system acting on stacked (rho+, rho-)."""
    V = ops["Vq"].blocks
    W = ops["Wstar_q"].blocks
    M, N, _ = V.shape
    half = np.zeros((M, N, N))
    half[0] = 0.5 * np.eye(N)
    top = np.concatenate([V, -V], axis=2)
    bottom = np.concatenate([-lam_plus * (half + W), lam_minus * (-half + W)], axis=2)
    return CausalOperator("transmission", np.concatenate([top, bottom], axis=1))


def solve_full(grid, tg, cell, cfg, data, ops=None):
    """Time-march the coupled 2N x 2N system with one factorization."""
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    _check_shape(data, grid, tg)
    ops = _ops(ops, grid, tg, cell, cfg)
    A = full_system(ops, data.lam_plus, data.lam_minus)
    solver = CausalSolver(A)
    log.info("full system diagonal block condition %.3e", solver.condition)
    x = solver.solve(np.concatenate([data.f, data.g], axis=1))
    N = grid.N
    return TransmissionSolution(x[:, :N], x[:, N:], grid, tg, cell, cfg, ops, "full",
                                solver.condition)


def resolvent(ops, gamma):
    """Causal operator ``I - 2 gamma Wstar_q``."""
    W = ops["Wstar_q"]
    M, N, _ = W.blocks.shape
    return CausalOperator.identity(M, N) - (2.0 * gamma) * W


def rho0_minus(ops, data, sigma):
    """Right-hand side of the second-kind equation for rho-."""
    W = ops["Wstar_q"]
    lp, lm = data.lam_plus, data.lam_minus
    return -2.0 / (lp + lm) * (lp * (0.5 * sigma + W.apply(sigma)) + data.g)


def solve_reduced(grid, tg, cell, cfg, data, ops=None):
    """First-kind solve for sigma, second-kind march for rho-, then rho+ = rho- + sigma."""
    cell = cell or PeriodicityCell((1.0, 1.0))
    cfg = cfg or LatticeSumConfig()
    _check_shape(data, grid, tg)
    ops = _ops(ops, grid, tg, cell, cfg)
    Vs = CausalSolver(ops["Vq"])
    log.info("single-layer diagonal block condition %.3e", Vs.condition)
    sigma = Vs.solve(data.f)
    r0 = rho0_minus(ops, data, sigma)
    lam_c = data.lam_c
    if lam_c == 0.0:
        rho_m = r0.copy()
        cond = 1.0
    else:
        Ks = CausalSolver(resolvent(ops, lam_c))
        rho_m = Ks.solve(r0)
        cond = Ks.condition
    sol = TransmissionSolution(rho_m + sigma, rho_m, grid, tg, cell, cfg, ops, "reduced",
                               max(Vs.condition, cond))
    sol.info.update(sigma=sigma, rho0_minus=r0, v_condition=Vs.condition, k_condition=cond)
    return sol


@dataclass
class GammaProbe:
    rho: np.ndarray
    gamma: float
    condition: float
    residual: float


def solve_gamma_probe(grid, tg, cell, cfg, gamma, rhs, ops=None):
    """Solve ``(I - 2 gamma Wstar_q) rho = rhs`` for gamma in [-1, 1].

    Reports the slab-0 condition estimate and the relative max-norm residual.
    """
    if not -1.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [-1, 1], got {gamma}")
    rhs = np.asarray(rhs, dtype=np.float64)
    if gamma == 0.0:
        return GammaProbe(rhs.copy(), 0.0, 1.0, 0.0)
    ops = _ops(ops, grid, tg, cell, cfg)
    K = resolvent(ops, gamma)
    solver = CausalSolver(K)
    rho = solver.solve(rhs)
    scale = max(float(np.max(np.abs(rhs))), np.finfo(float).tiny)
    res = float(np.max(np.abs(K.apply(rho) - rhs))) / scale
    return GammaProbe(rho, gamma, solver.condition, res)


def eval_solution(sol, side, targets, upsample=4):
    """Field u+ (interior, ``side='plus'``) or u- (exterior, ``'minus'``) at targets."""
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    t, x = _split_targets(targets)
    want = "interior" if side == "plus" else "exterior"
    where = locate(x, sol.grid, sol.cell)
    bad = np.nonzero(where != want)[0]
    if bad.size:
        raise ValueError(f"target {bad[0]} lies in region {where[bad[0]]!r}, not {want!r}")
    rho = sol.rho_plus if side == "plus" else sol.rho_minus
    return eval_field("single", sol.grid, sol.tg, sol.cell, sol.cfg, rho, (t, x), upsample=upsample)


@dataclass
class ResidualReport:
    trace: np.ndarray
    flux: np.ndarray
    trace_max: float
    flux_max: float
    trace_l2: float
    flux_l2: float

    def as_dict(self):
        return {"trace_max": self.trace_max, "flux_max": self.flux_max,
                "trace_l2": self.trace_l2, "flux_l2": self.flux_l2}


def residuals(sol, data, grid=None, tg=None, rho_plus=None, rho_minus=None):
    """Interface residuals from boundary traces and the jump relations.

    ``rho_plus``/``rho_minus`` override the solution densities (e.g. with
    truncated series approximations).
    """
    grid = grid or sol.grid
    tg = tg or sol.tg
    rp = sol.rho_plus if rho_plus is None else rho_plus
    rm = sol.rho_minus if rho_minus is None else rho_minus
    V, W = sol.ops["Vq"], sol.ops["Wstar_q"]
    trace = V.apply(rp) - V.apply(rm) - data.f
    flux = (data.lam_minus * (-0.5 * rm + W.apply(rm))
            - data.lam_plus * (0.5 * rp + W.apply(rp)) - data.g)
    wt = grid.weights[None, :] * tg.dt

    def l2(r):
        return float(math.sqrt(np.sum(wt * r * r)))

    return ResidualReport(trace, flux, float(np.max(np.abs(trace))), float(np.max(np.abs(flux))),
                          l2(trace), l2(flux))


def manufactured(grid, tg, cell, cfg, mu_plus, mu_minus, lam_plus, lam_minus, ops=None):
    """Data whose discrete solution is exactly ``(mu_plus, mu_minus)``."""
    ops = _ops(ops, grid, tg, cell, cfg)
    V, W = ops["Vq"], ops["Wstar_q"]
    mu_plus = np.asarray(mu_plus, dtype=np.float64)
    mu_minus = np.asarray(mu_minus, dtype=np.float64)
    f = V.apply(mu_plus) - V.apply(mu_minus)
    g = (lam_minus * (-0.5 * mu_minus + W.apply(mu_minus))
         - lam_plus * (0.5 * mu_plus + W.apply(mu_plus)))
    return TransmissionData(lam_plus, lam_minus, f, g)


def manufactured_reference(shape, phi, cell, cfg, mu_plus_fn, mu_minus_fn, lam_plus, lam_minus,
                           N, M, T, N_ref, M_ref):
    """Manufactured data computed on a finer reference grid, sampled on (N, M).

    ``mu_*_fn(t, s)`` are smooth densities vanishing at t = 0. ``N_ref`` and
    ``M_ref`` must be integer multiples of ``N`` and ``M``. Returns the coarse
    grid, time grid, data, and the exact densities at the coarse nodes, so
    that solving on the coarse grid measures the true discretization error.
    """
    if N_ref % N or M_ref % M:
        raise ValueError("reference grid must refine the coarse grid by integer factors")
    fine = build_grid(shape, phi, N_ref, cell)
    tgf = TimeGrid(T, M_ref)
    mp = mu_plus_fn(tgf.colloc[:, None], fine.s[None, :])
    mm = mu_minus_fn(tgf.colloc[:, None], fine.s[None, :])
    data_f = manufactured(fine, tgf, cell, cfg, mp, mm, lam_plus, lam_minus)
    rs, rt = N_ref // N, M_ref // M
    tsel = np.arange(1, M + 1) * rt - 1
    coarse = build_grid(shape, phi, N, cell)
    tg = TimeGrid(T, M)
    data = TransmissionData(lam_plus, lam_minus, data_f.f[tsel][:, ::rs], data_f.g[tsel][:, ::rs])
    exact_p = mu_plus_fn(tg.colloc[:, None], coarse.s[None, :])
    exact_m = mu_minus_fn(tg.colloc[:, None], coarse.s[None, :])
    return coarse, tg, data, exact_p, exact_m
