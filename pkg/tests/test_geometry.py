import math

import numpy as np
import pytest

from perheat.errors import MapValidationError
from perheat.geometry import (BoundaryMap, ReferenceShape, build_grid, locate, perturb,
                              validate_map)
from perheat.kernel import PeriodicityCell


def test_circle_grid_geometry(circle, cell):
    g = build_grid(circle, None, 64, cell)
    assert g.length == pytest.approx(2 * math.pi * 0.25, rel=1e-14)
    assert np.allclose(g.normals, (g.points - 0.5) / 0.25, atol=1e-14)
    assert np.allclose(g.curvature, 4.0, rtol=1e-13)
    assert np.allclose(g.sigma, 1.0)
    assert np.allclose(np.sum(g.normals * g.tangents, axis=1), 0.0, atol=1e-15)


def test_ellipse_perimeter_against_quadrature(cell):
    from scipy.integrate import quad
    a, b = 0.3, 0.15
    g = build_grid(ReferenceShape.ellipse(a, b), None, 64, cell)
    ref = quad(lambda s: math.hypot(a * math.sin(s), b * math.cos(s)), 0, 2 * math.pi,
               epsabs=1e-14)[0]
    assert g.length == pytest.approx(ref, rel=1e-12)


def test_affine_map_area_density(circle, tilted, cell):
    g = build_grid(circle, tilted, 32, cell)
    # the enclosed area scales by det A
    area = 0.5 * np.sum(g.points[:, 0] * g.d1[:, 1] - g.points[:, 1] * g.d1[:, 0]) * 2 * math.pi / 32
    assert area == pytest.approx(math.pi * 0.25**2 * (1.1 * 0.9), rel=1e-13)
    assert np.all(g.sigma > 0)


def test_identity_map_round_trip(circle):
    phi = BoundaryMap.identity(circle)
    assert BoundaryMap.from_dict(phi.to_dict()) == phi
    assert ReferenceShape.from_dict(circle.to_dict()) == circle


def test_from_dict_rejects_bad_tables():
    with pytest.raises(ValueError):
        ReferenceShape.from_dict({"cos_x": [0.5, 0.2], "sin_x": [0, 0], "cos_y": [0.5]})
    with pytest.raises(ValueError):
        BoundaryMap.from_dict({"degree": 1, "cos_x": [0, 0, 1], "sin_x": [0], "cos_y": [0],
                               "sin_y": [0]})


def test_perturb_is_coefficientwise(circle):
    phi = BoundaryMap.identity(circle)
    psi = BoundaryMap.constant((0.1, -0.2))
    out = perturb(phi, psi, 0.5)
    s = np.linspace(0, 2 * math.pi, 7)
    assert np.allclose(out.evaluate(s), phi.evaluate(s) + 0.5 * np.array([0.1, -0.2]))


def test_validation_rejects_collapsed_map(circle, cell):
    flat = BoundaryMap.affine(circle, [[1.0, 0.0], [0.0, 0.0]], [0.0, 0.25])
    diag = validate_map(flat, circle, 32, cell)
    assert not diag.passed
    with pytest.raises(MapValidationError):
        build_grid(circle, flat, 32, cell)


def test_validation_rejects_orientation_reversal(circle, cell):
    mirror = BoundaryMap.affine(circle, [[-1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
    diag = validate_map(mirror, circle, 32, cell)
    assert any("counterclockwise" in r for r in diag.reasons)


def test_validation_rejects_self_intersection(circle, cell):
    # a strong third harmonic folds the curve
    fold = BoundaryMap([0.5, 0.2, 0.0, 0.25], [0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.2, 0, 0.25])
    assert not validate_map(fold, circle, 64, cell).passed


def test_validation_rejects_leaving_the_cell(circle, cell):
    shifted = BoundaryMap.affine(circle, np.eye(2), [0.4, 0.0])
    diag = validate_map(shifted, circle, 32, cell)
    assert diag.margin < 0 and not diag.passed


def test_validation_chord_ratio_of_circle(circle, cell):
    diag = validate_map(BoundaryMap.identity(circle), circle, 128, cell)
    assert diag.passed
    assert diag.chord_ratio == pytest.approx(2 / math.pi, rel=1e-3)


def test_perturb_validates_when_asked(circle, cell):
    phi = BoundaryMap.identity(circle)
    with pytest.raises(MapValidationError):
        perturb(phi, BoundaryMap.constant((1.0, 0.0)), 0.5, circle, 32, cell)


def test_grid_requires_even_size(circle, cell):
    with pytest.raises(ValueError):
        build_grid(circle, None, 31, cell)
    with pytest.raises(ValueError):
        build_grid(circle, None, 8, cell)


def test_refine_contains_original_nodes(small):
    g, _ = small
    f = g.refine(2)
    assert f.N == 2 * g.N
    assert np.allclose(f.points[::2], g.points, atol=1e-15)


def test_locate_classifies_modulo_lattice(circle, cell):
    g = build_grid(circle, None, 64, cell)
    pts = np.array([[0.5, 0.5], [0.05, 0.05], [1.5, -0.5], [0.75, 0.5], [0.5 + 0.26, 0.5],
                    [2.05, 3.95]])
    out = locate(pts, g, cell)
    assert list(out) == ["interior", "exterior", "interior", "near_boundary", "near_boundary",
                         "exterior"]
    assert locate((0.5, 0.5), g, cell) == "interior"


def test_locate_safety_band(circle, cell):
    g = build_grid(circle, None, 64, cell)
    assert locate((0.5, 0.5 + 0.22), g, cell, safety=0.01) == "interior"
    assert locate((0.5, 0.5 + 0.22), g, cell, safety=0.05) == "near_boundary"


def test_non_square_cell_margin(circle):
    cell = PeriodicityCell((1.0, 0.6))
    diag = validate_map(BoundaryMap.identity(circle), circle, 32, cell)
    # the top of the circle (y = 0.75) lies beyond the cell height 0.6
    assert diag.margin == pytest.approx(0.6 - 0.75, abs=1e-12)
    assert not diag.passed


def test_constant_map_fails_with_zero_differential(circle, cell):
    diag = validate_map(BoundaryMap.constant((0.5, 0.5)), circle, 32, cell)
    assert not diag.passed and diag.min_speed == 0.0


def test_circle_touching_cell_boundary_fails(cell):
    touching = ReferenceShape.circle(0.5)
    diag = validate_map(BoundaryMap.identity(touching), touching, 64, cell)
    assert diag.margin == pytest.approx(0.0, abs=1e-15) and not diag.passed


def test_perturb_arithmetic(circle, tilted):
    psi = BoundaryMap([0, 0, 0.05], [0, 0.03, 0], [0, 0.04, 0], [0, 0, 0.02])
    assert perturb(tilted, psi, 0.0) == tilted
    h = 0.25   # exact in binary, so the round trip is exact
    assert perturb(perturb(tilted, psi, h), psi, -h) == tilted
    diff = perturb(tilted, psi, 1e-3)._combine(tilted, -1.0)
    assert diff.coeff_norm() == pytest.approx(1e-3 * psi.coeff_norm(), rel=1e-10)


def test_locate_translation_consistent_and_node_is_near(circle, cell, rng):
    g = build_grid(circle, None, 64, cell)
    pts = rng.uniform(0, 1, (30, 2))
    base = locate(pts, g, cell)
    for z in [(1, 0), (-2, 3), (5, -1)]:
        assert list(locate(pts + np.array(z), g, cell)) == list(base)
    assert locate(g.points[0], g, cell) == "near_boundary"
    assert locate((0.0, 0.0), g, cell) == "exterior"


def test_weights_converge_rapidly(tilted, circle, cell):
    from scipy.integrate import quad
    A = np.array([[1.1, 0.1], [0.0, 0.9]])
    ref = quad(lambda s: 0.25 * np.linalg.norm(A @ [-np.sin(s), np.cos(s)]), 0, 2 * math.pi,
               epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    errs = [abs(build_grid(circle, tilted, N, cell).length - ref) for N in (16, 32, 64, 128)]
    assert errs[0] < 1e-4 and max(errs[2:]) < 1e-14
    assert errs[1] < 1e-3 * errs[0] or errs[1] < 1e-14
