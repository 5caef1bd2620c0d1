import math

import numpy as np
import pytest

from perheat.causal import CausalOperator, CausalSolver, sample_density
from perheat.neumann import (SeriesConfig, apply_Kj, epsilon_estimate, factorization_check,
                             probe_at_fraction, resolvent_product, series_solve)
from perheat.transmission import TransmissionData, boundary_operators, contrast, resolvent


@pytest.fixture(scope="module")
def setup(small, cell, cfg):
    g, tg = small
    ops = boundary_operators(g, tg, cell, cfg)
    f = sample_density(lambda t, s: t * (1 + np.cos(s)), g.s, tg)
    gg = sample_density(lambda t, s: t**2 * np.sin(2 * s) - t, g.s, tg)
    return g, tg, ops, f, gg


def test_series_config_validation():
    sc = SeriesConfig(1.0, 3.0, 1.0, 2.0)
    assert sc.delta == pytest.approx(contrast(1.0, 2.0) - 0.5)
    with pytest.raises(ValueError):
        SeriesConfig(1.0, 3.0, 1.0, 2.0, J=-1)
    with pytest.raises(ValueError):
        SeriesConfig(1.0, 3.0, 1.0, 2.0, norm_kind="2")
    with pytest.raises(ValueError):
        SeriesConfig(0.0, 3.0, 1.0, 2.0)


def test_zero_operator_gives_unbounded_radius(small, cell, cfg):
    g, tg = small
    ops = {"Wstar_q": CausalOperator("W", np.zeros((tg.M, g.N, g.N)))}
    assert epsilon_estimate(g, tg, cell, cfg, 1.0, 3.0, ops=ops) == math.inf


def test_radius_scales_inversely_with_operator(setup, cell, cfg):
    g, tg, ops, *_ = setup
    e1 = epsilon_estimate(g, tg, cell, cfg, 1.0, 1.0, ops=ops)
    e2 = epsilon_estimate(g, tg, cell, cfg, 1.0, 1.0, ops={"Wstar_q": 2.0 * ops["Wstar_q"]})
    assert e2 == pytest.approx(e1 / 2, rel=1e-14)
    assert e1 == pytest.approx(1 / (2 * ops["Wstar_q"].norm_inf()), rel=1e-14)
    e_one = epsilon_estimate(g, tg, cell, cfg, 1.0, 1.0, norm_kind="1", ops=ops)
    assert e_one > 0 and np.isfinite(e_one)


def test_resolvent_product_matches_solver(setup):
    g, tg, ops, *_ = setup
    X = resolvent_product(ops["Wstar_q"], 0.4)
    x = np.random.default_rng(3).standard_normal((tg.M, g.N))
    ref = CausalSolver(resolvent(ops, 0.4)).solve(ops["Wstar_q"].apply(x))
    assert np.max(np.abs(X.apply(x) - ref)) < 1e-12


def test_apply_Kj_identity_and_semigroup(setup, rng):
    g, tg, ops, *_ = setup
    x = rng.standard_normal((tg.M, g.N))
    assert np.array_equal(apply_Kj(ops, 1.0, 3.0, 0, x), x)
    two = apply_Kj(ops, 1.0, 3.0, 2, x)
    assert np.max(np.abs(two - apply_Kj(ops, 1.0, 3.0, 1, apply_Kj(ops, 1.0, 3.0, 1, x)))) < 1e-12
    with pytest.raises(ValueError):
        apply_Kj(ops, 1.0, 3.0, 1.5, x)


def test_zero_step_series_is_direct_solve(setup, cell, cfg):
    g, tg, ops, f, gg = setup
    sc = SeriesConfig(1.0, 3.0, 1.0, 3.0, J=4)
    r = series_solve(g, tg, cell, cfg, TransmissionData(1.0, 3.0, f, gg), sc, ops)
    assert r.delta == 0.0
    assert np.all(r.term_norms[1:] == 0.0)
    assert r.partial_errors[0] < 1e-12 * np.max(np.abs(r.direct))


def test_series_converges_inside_radius(setup, cell, cfg):
    g, tg, ops, f, gg = setup
    eps = epsilon_estimate(g, tg, cell, cfg, 1.0, 3.0, ops=ops)
    lp, lm = probe_at_fraction(1.0, 3.0, eps)
    sc = SeriesConfig(1.0, 3.0, lp, lm, J=10)
    assert abs(sc.delta) == pytest.approx(eps / 2, rel=1e-12)
    r = series_solve(g, tg, cell, cfg, TransmissionData(lp, lm, f, gg), sc, ops)
    assert r.inside_radius and not r.notes
    assert np.all(r.ratios <= 0.5 + 1e-12)
    assert np.all(np.diff(r.partial_errors) < 0)
    assert r.partial_errors[-1] < 1e-3 * r.partial_errors[0]


def test_series_outside_radius_is_flagged(setup, cell, cfg):
    g, tg, ops, f, gg = setup
    # a scaled operator shrinks the radius below the admissible contrast range
    ops = {"Vq": ops["Vq"], "Wstar_q": 20.0 * ops["Wstar_q"]}
    eps = epsilon_estimate(g, tg, cell, cfg, 1.0, 3.0, ops=ops)
    lp, lm = probe_at_fraction(1.0, 3.0, eps, fraction=1.2)
    r = series_solve(g, tg, cell, cfg, TransmissionData(lp, lm, f, gg),
                     SeriesConfig(1.0, 3.0, lp, lm, J=2), ops, compare=False)
    assert not r.inside_radius and "outside" in r.notes[0]
    assert r.direct is None


def test_probe_stays_in_contrast_range():
    lp, lm = probe_at_fraction(1.0, 3.0, 0.2)
    assert contrast(lp, lm) == pytest.approx(0.4)
    lp, lm = probe_at_fraction(3.0, 1.0, 0.2)
    assert contrast(lp, lm) == pytest.approx(-0.4)
    with pytest.raises(ValueError):
        probe_at_fraction(1.0, 1.0, 5.0)


def test_factorization(setup, rng):
    g, tg, ops, *_ = setup
    probes = [rng.standard_normal((tg.M, g.N)) for _ in range(2)]
    assert factorization_check(ops, 1.0, 3.0, 1.0, 2.0, probes) < 1e-12
    assert factorization_check(ops, 1.0, 1.0, 2.0, 1.0, 2) < 1e-12


def test_Kj_on_zero_density(setup):
    g, tg, ops, *_ = setup
    assert np.all(apply_Kj(ops, 1.0, 3.0, 1, np.zeros((tg.M, g.N))) == 0.0)


def test_term_ratio_bound(setup, cell, cfg):
    g, tg, ops, f, gg = setup
    eps = epsilon_estimate(g, tg, cell, cfg, 1.0, 3.0, ops=ops)
    lp, lm = probe_at_fraction(1.0, 3.0, eps)
    sc = SeriesConfig(1.0, 3.0, lp, lm, J=8)
    r = series_solve(g, tg, cell, cfg, TransmissionData(lp, lm, f, gg), sc, ops, compare=False)
    assert np.all(r.ratios <= abs(sc.delta) / eps + 1e-12)


def test_factorization_at_radius_and_at_base(setup, rng):
    g, tg, ops, *_ = setup
    ops = {"Wstar_q": 20.0 * ops["Wstar_q"]}
    eps = 1 / (2 * resolvent_product(ops["Wstar_q"], 0.5).norm_inf())
    lp, lm = probe_at_fraction(1.0, 3.0, eps, fraction=1.0)
    assert factorization_check(ops, 1.0, 3.0, lp, lm, 2) < 1e-12
    assert factorization_check(ops, 1.0, 3.0, 1.0, 3.0, 2) < 1e-13


def test_radius_stable_under_refinement(circle, cell, cfg):
    from perheat.causal import TimeGrid
    from perheat.geometry import build_grid
    vals = []
    for N, M in [(64, 32), (128, 64)]:
        g = build_grid(circle, None, N, cell)
        vals.append(epsilon_estimate(g, TimeGrid(0.5, M), cell, cfg, 1.0, 3.0))
    assert 0 < vals[0] < math.inf
    assert abs(vals[1] - vals[0]) < 0.05 * vals[0]
