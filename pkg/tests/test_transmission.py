import numpy as np
import pytest

from perheat.causal import sample_density
from perheat.transmission import (TransmissionData, boundary_operators, contrast, eval_solution,
                                  full_system, manufactured, residuals, solve_full,
                                  solve_gamma_probe, solve_reduced)


@pytest.fixture(scope="module")
def setup(small, cell, cfg):
    g, tg = small
    ops = boundary_operators(g, tg, cell, cfg)
    mp = sample_density(lambda t, s: t * (1 + 0.5 * np.cos(s) + 0.2 * np.sin(3 * s)), g.s, tg)
    mm = sample_density(lambda t, s: t**2 * (0.3 - np.sin(2 * s)), g.s, tg)
    return g, tg, ops, mp, mm


def test_contrast():
    assert contrast(1.0, 1.0) == 0.0
    assert contrast(1.0, 3.0) == pytest.approx(0.5)
    for bad in [(0.0, 1.0), (1.0, -2.0)]:
        with pytest.raises(ValueError):
            contrast(*bad)


def test_data_validation(setup):
    g, tg, *_ = setup
    z = np.zeros((tg.M, g.N))
    with pytest.raises(ValueError):
        TransmissionData(1.0, 0.0, z, z)
    with pytest.raises(ValueError):
        TransmissionData(1.0, 1.0, z, z[:, :-1])
    bad = z.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        TransmissionData(1.0, 1.0, bad, z)
    with pytest.raises(ValueError):
        TransmissionData(1.0, 1.0, z, z).combine(TransmissionData(1.0, 2.0, z, z), 1, 1)


@pytest.mark.parametrize("lams", [(1.0, 1.0), (1.0, 3.0), (2.0, 0.5)])
def test_manufactured_round_trip(setup, cell, cfg, lams):
    g, tg, ops, mp, mm = setup
    d = manufactured(g, tg, cell, cfg, mp, mm, *lams, ops=ops)
    for solve in (solve_full, solve_reduced):
        sol = solve(g, tg, cell, cfg, d, ops)
        assert np.max(np.abs(sol.rho_plus - mp)) < 1e-11
        assert np.max(np.abs(sol.rho_minus - mm)) < 1e-11
        r = residuals(sol, d)
        assert r.trace_max < 1e-12 and r.flux_max < 1e-12


def test_full_and_reduced_agree(setup, cell, cfg, rng):
    g, tg, ops, *_ = setup
    d = TransmissionData(1.5, 0.7, rng.standard_normal((tg.M, g.N)), rng.standard_normal((tg.M, g.N)))
    a = solve_full(g, tg, cell, cfg, d, ops)
    b = solve_reduced(g, tg, cell, cfg, d, ops)
    scale = np.max(np.abs(a.rho_plus))
    assert np.max(np.abs(a.rho_plus - b.rho_plus)) < 1e-10 * scale
    assert np.max(np.abs(a.rho_minus - b.rho_minus)) < 1e-10 * scale


def test_zero_data_gives_zero(setup, cell, cfg):
    g, tg, ops, *_ = setup
    z = np.zeros((tg.M, g.N))
    sol = solve_reduced(g, tg, cell, cfg, TransmissionData(1.0, 2.0, z, z), ops)
    assert np.all(sol.rho_plus == 0.0) and np.all(sol.rho_minus == 0.0)


def test_full_system_layout(setup):
    g, tg, ops, mp, mm = setup
    A = full_system(ops, 2.0, 3.0)
    x = np.concatenate([mp, mm], axis=1)
    y = A.apply(x)
    assert np.allclose(y[:, :g.N], ops["Vq"](mp) - ops["Vq"](mm), atol=1e-15)


def test_shape_mismatch(setup, cell, cfg):
    g, tg, ops, *_ = setup
    z = np.zeros((tg.M, g.N + 2))
    with pytest.raises(ValueError):
        solve_full(g, tg, cell, cfg, TransmissionData(1.0, 1.0, z, z), ops)


def test_gamma_probe_over_closed_interval(setup, cell, cfg):
    g, tg, ops, mp, _ = setup
    for gamma in (-1.0, -0.5, 0.0, 0.5, 1.0):
        r = solve_gamma_probe(g, tg, cell, cfg, gamma, mp, ops)
        assert np.isfinite(r.condition) and r.residual < 1e-13
    with pytest.raises(ValueError):
        solve_gamma_probe(g, tg, cell, cfg, 1.5, mp, ops)


def test_eval_solution_checks_region(setup, cell, cfg):
    g, tg, ops, mp, mm = setup
    d = manufactured(g, tg, cell, cfg, mp, mm, 1.0, 2.0, ops=ops)
    sol = solve_reduced(g, tg, cell, cfg, d, ops)
    inside, outside = np.array([[0.5, 0.5]]), np.array([[0.05, 0.05]])
    assert np.isfinite(eval_solution(sol, "plus", ([0.3], inside))[0])
    assert np.isfinite(eval_solution(sol, "minus", ([0.3], outside))[0])
    with pytest.raises(ValueError):
        eval_solution(sol, "plus", ([0.3], outside))
    with pytest.raises(ValueError):
        eval_solution(sol, "inside", ([0.3], inside))


def test_flux_condition_from_field_limits(setup, cell, cfg):
    # the interface conditions hold for the field limits, not only the boundary algebra
    from perheat.potentials import target_operator
    g, tg, ops, mp, mm = setup
    lp, lm = 1.0, 2.5
    d = manufactured(g, tg, cell, cfg, mp, mm, lp, lm, ops=ops)
    sol = solve_full(g, tg, cell, cfg, d, ops)
    delta = 0.5 * g.spacing * np.arange(1, 5)
    wts = np.array([4.0, -6.0, 4.0, -1.0])

    def limit(rho, sign):
        pts = np.concatenate([g.points + sign * dl * g.normals for dl in delta])
        nrm = np.tile(g.normals, (4, 1))
        T = target_operator("single_normal", g, tg, pts, cell, cfg, normals=nrm, upsample=8)
        return np.einsum("d,kdi->ki", wts, T.apply(rho).reshape(tg.M, 4, g.N))

    flux = lm * limit(sol.rho_minus, 1.0) - lp * limit(sol.rho_plus, -1.0)
    assert np.max(np.abs(flux - d.g)) < 1e-2 * np.max(np.abs(d.g))


def test_contrast_is_scale_invariant():
    assert contrast(2.0, 6.0) == contrast(1.0, 3.0) == 0.5


def test_reduced_special_cases(setup, cell, cfg, rng):
    g, tg, ops, mp, mm = setup
    z = np.zeros((tg.M, g.N))
    gg = rng.standard_normal((tg.M, g.N))
    sol = solve_reduced(g, tg, cell, cfg, TransmissionData(1.0, 2.0, z, gg), ops)
    assert np.all(sol.info["sigma"] == 0.0)
    assert np.array_equal(sol.rho_plus, sol.rho_minus)
    sol = solve_reduced(g, tg, cell, cfg, TransmissionData(2.0, 2.0, mp, gg), ops)
    assert np.array_equal(sol.rho_minus, sol.info["rho0_minus"])


def test_manufactured_equal_densities_cancel_trace(setup, cell, cfg):
    g, tg, ops, mp, _ = setup
    d = manufactured(g, tg, cell, cfg, mp, mp, 1.0, 3.0, ops=ops)
    assert np.all(d.f == 0.0)
    z = manufactured(g, tg, cell, cfg, 0 * mp, 0 * mp, 1.0, 3.0, ops=ops)
    assert np.all(z.f == 0.0) and np.all(z.g == 0.0)


def test_gamma_solution_continuous(setup, cell, cfg):
    g, tg, ops, mp, _ = setup
    base = solve_gamma_probe(g, tg, cell, cfg, 0.9, mp, ops).rho
    diffs = [np.max(np.abs(solve_gamma_probe(g, tg, cell, cfg, 0.9 + d, mp, ops).rho - base))
             for d in (1e-2, 1e-3, 1e-4)]
    assert diffs[0] > diffs[1] > diffs[2] and diffs[2] < 1e-2 * np.max(np.abs(base))


def test_field_periodic_and_zero_at_start(setup, cell, cfg):
    g, tg, ops, mp, mm = setup
    d = manufactured(g, tg, cell, cfg, mp, mm, 1.0, 2.0, ops=ops)
    sol = solve_full(g, tg, cell, cfg, d, ops)
    x = np.array([[0.52, 0.47]])
    a = eval_solution(sol, "plus", ([0.4], x))[0]
    b = eval_solution(sol, "plus", ([0.4], x + np.array([[-1.0, 3.0]])))[0]
    assert abs(a - b) < 1e-10
    assert eval_solution(sol, "plus", ([0.0], x))[0] == 0.0


def test_zero_data_residuals(setup, cell, cfg):
    g, tg, ops, *_ = setup
    z = np.zeros((tg.M, g.N))
    d = TransmissionData(1.0, 2.0, z, z)
    r = residuals(solve_full(g, tg, cell, cfg, d, ops), d)
    assert r.trace_max == 0.0 and r.flux_max == 0.0


def test_truncated_series_flux_residual_decays(setup, cell, cfg):
    from perheat.neumann import SeriesConfig, epsilon_estimate, probe_at_fraction, series_solve
    g, tg, ops, mp, mm = setup
    eps = epsilon_estimate(g, tg, cell, cfg, 1.0, 3.0, ops=ops)
    lp, lm = probe_at_fraction(1.0, 3.0, eps)
    d = TransmissionData(lp, lm, ops["Vq"](mp) - ops["Vq"](mm), mp)
    res = series_solve(g, tg, cell, cfg, d, SeriesConfig(1.0, 3.0, lp, lm, J=8), ops)
    sol = solve_reduced(g, tg, cell, cfg, d, ops)
    sigma = sol.info["sigma"]
    flux = [residuals(sol, d, rho_plus=S + sigma, rho_minus=S).flux_max for S in res.partial_sums]
    assert np.all(np.diff(flux) < 0)
    assert flux[-1] < 1e-3 * flux[0]
