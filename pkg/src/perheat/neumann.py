"""Series expansion of the exterior density in the contrast parameter.

Around a base contrast ``lam_c0`` the second-kind operator factors as

    I - 2 lam_c Wstar_q = (I - 2 lam_c0 Wstar_q)(I - 2 (lam_c - lam_c0) R0 Wstar_q)

with ``R0 = (I - 2 lam_c0 Wstar_q)^{-1}``, so that

    rho- = sum_j (lam_c - lam_c0)^j K_j[R0 rho0-],   K_j = 2^j (R0 Wstar_q)^j.

``K_j`` is applied factor by factor (one operator product and one causal
solve per factor) and never formed.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .causal import CausalOperator, CausalSolver
from .transmission import (TransmissionData, _ops, contrast, resolvent, rho0_minus,
                           solve_reduced)

log = logging.getLogger(__name__)

NORM_KINDS = ("inf", "1")


@dataclass
class SeriesConfig:
    lam0_plus: float
    lam0_minus: float
    lam_plus: float
    lam_minus: float
    J: int = 12
    norm_kind: str = "inf"

    def __post_init__(self):
        contrast(self.lam0_plus, self.lam0_minus)
        contrast(self.lam_plus, self.lam_minus)
        if int(self.J) != self.J or self.J < 0:
            raise ValueError(f"J must be a non-negative integer, got {self.J}")
        self.J = int(self.J)
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}")

    @property
    def lam_c0(self):
        return contrast(self.lam0_plus, self.lam0_minus)

    @property
    def lam_c(self):
        return contrast(self.lam_plus, self.lam_minus)

    @property
    def delta(self):
        return self.lam_c - self.lam_c0


@dataclass
class SeriesResult:
    epsilon: float
    delta: float
    terms: list
    partial_sums: list
    term_norms: np.ndarray
    ratios: np.ndarray
    direct: np.ndarray = None
    partial_errors: np.ndarray = None
    inside_radius: bool = True
    notes: list = field(default_factory=list)


def _opnorm(op, kind):
    if kind == "inf":
        return op.norm_inf()
    # induced 1-norm: largest column sum; block column 0 sees every block
    return float(np.max(np.abs(op.blocks).sum(axis=(0, 1))))


def _max(x):
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def resolvent_product(W, lam_c0):
    """Causal operator ``(I - 2 lam_c0 W)^{-1} W`` formed block by block."""
    M, N, _ = W.blocks.shape
    if lam_c0 == 0.0:
        return CausalOperator("R0W", W.blocks.copy())
    K = (CausalOperator.identity(M, N) - (2.0 * lam_c0) * W).blocks
    solver = CausalSolver(CausalOperator("resolvent", K))
    X = np.empty_like(W.blocks)
    for m in range(M):
        rhs = W.blocks[m].copy()
        for l in range(1, m + 1):
            rhs -= K[l] @ X[m - l]
        X[m] = solver.solve_block(rhs)
    return CausalOperator("R0W", X)


def epsilon_estimate(grid, tg, cell, cfg, lam0_plus, lam0_minus, norm_kind="inf", ops=None):
    """Radius ``1 / (2 ||R0 Wstar_q||)`` in the induced norm of the causal matrix.

    ``ops`` may supply a prebuilt (or stub) ``Wstar_q``. A zero operator
    gives ``inf`` (unbounded radius).
    """
    if norm_kind not in NORM_KINDS:
        raise ValueError(f"norm_kind must be one of {NORM_KINDS}")
    lam_c0 = contrast(lam0_plus, lam0_minus)
    ops = _ops(ops, grid, tg, cell, cfg)
    X = resolvent_product(ops["Wstar_q"], lam_c0)
    nrm = _opnorm(X, norm_kind)
    if nrm == 0.0:
        log.info("Wstar_q vanishes: radius unbounded")
        return math.inf
    return 1.0 / (2.0 * nrm)


def apply_Kj(ops, lam0_plus, lam0_minus, j, rho):
    """Apply ``K_j = 2^j (R0 Wstar_q)^j`` with ``R0 = (I - 2 lam_c0 Wstar_q)^{-1}``."""
    if int(j) != j or j < 0:
        raise ValueError(f"j must be a non-negative integer, got {j}")
    rho = np.asarray(rho, dtype=np.float64)
    if j == 0:
        return rho.copy()
    lam_c0 = contrast(lam0_plus, lam0_minus)
    W = ops["Wstar_q"]
    solver = None if lam_c0 == 0.0 else CausalSolver(resolvent(ops, lam_c0))
    out = rho
    for _ in range(int(j)):
        out = 2.0 * W.apply(out)
        if solver is not None:
            out = solver.solve(out)
    return out


def series_solve(grid, tg, cell, cfg, data, sc, ops=None, compare=True):
    """Partial sums of the contrast series for rho- at the probe parameters.

    ``rho0-`` is built from ``data.f``, ``data.g`` with the probe values
    ``(sc.lam_plus, sc.lam_minus)``, the operators ``K_j`` with the base
    values. With ``compare`` the partial sums are measured against
    :func:`solve_reduced`. Runs outside the estimated radius proceed and
    are flagged.
    """
    ops = _ops(ops, grid, tg, cell, cfg)
    probe = TransmissionData(sc.lam_plus, sc.lam_minus, data.f, data.g)
    eps = epsilon_estimate(grid, tg, cell, cfg, sc.lam0_plus, sc.lam0_minus, sc.norm_kind, ops)
    delta = sc.delta
    inside = abs(delta) < eps
    notes = []
    if not inside:
        notes.append(f"outside guaranteed radius: |lam_c - lam_c0| = {abs(delta):.4g} >= {eps:.4g}")
        log.warning(notes[-1])
    sigma = CausalSolver(ops["Vq"]).solve(probe.f)
    r0 = rho0_minus(ops, probe, sigma)
    lam_c0 = sc.lam_c0
    w = r0 if lam_c0 == 0.0 else CausalSolver(resolvent(ops, lam_c0)).solve(r0)
    terms = [w]
    cur = w
    for _ in range(sc.J):
        if delta == 0.0:
            cur = np.zeros_like(w)
        else:
            cur = delta * apply_Kj(ops, sc.lam0_plus, sc.lam0_minus, 1, cur)
        terms.append(cur)
    partial = list(np.cumsum(np.stack(terms), axis=0))
    norms = np.array([_max(t) for t in terms])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(norms[:-1] > 0, norms[1:] / norms[:-1], 0.0)
    res = SeriesResult(eps, delta, terms, partial, norms, ratios, inside_radius=inside, notes=notes)
    if compare:
        direct = solve_reduced(grid, tg, cell, cfg, probe, ops).rho_minus
        res.direct = direct
        res.partial_errors = np.array([_max(S - direct) for S in partial])
    return res


def probe_at_fraction(lam0_plus, lam0_minus, eps, fraction=0.5):
    """Probe parameters with ``|lam_c - lam_c0| = fraction * eps``.

    ``lam_plus`` is kept; the step goes toward zero contrast so that the
    probe contrast stays inside (-1, 1).
    """
    lam_c0 = contrast(lam0_plus, lam0_minus)
    step = fraction * eps
    lam_c = lam_c0 - step if lam_c0 > 0 else lam_c0 + step
    if not -1.0 < lam_c < 1.0:
        raise ValueError(f"probe contrast {lam_c} leaves (-1, 1)")
    return lam0_plus, lam0_plus * (1.0 + lam_c) / (1.0 - lam_c)


def factorization_check(ops, lam0_plus, lam0_minus, lam_plus, lam_minus, probes):
    """Max discrepancy of the factorization of ``I - 2 lam_c Wstar_q`` over probes.

    ``probes`` is a list of density grids or an integer count of seeded
    random probes.
    """
    W = ops["Wstar_q"]
    M, N, _ = W.blocks.shape
    if isinstance(probes, (int, np.integer)):
        rng = np.random.default_rng(0)
        probes = [rng.standard_normal((M, N)) for _ in range(int(probes))]
    lam_c0 = contrast(lam0_plus, lam0_minus)
    lam_c = contrast(lam_plus, lam_minus)
    solver = None if lam_c0 == 0.0 else CausalSolver(resolvent(ops, lam_c0))
    worst = 0.0
    for rho in probes:
        lhs = rho - 2.0 * lam_c * W.apply(rho)
        inner = W.apply(rho)
        if solver is not None:
            inner = solver.solve(inner)
        y = rho - 2.0 * (lam_c - lam_c0) * inner
        rhs = y - 2.0 * lam_c0 * W.apply(y)
        worst = max(worst, _max(lhs - rhs))
    return worst
