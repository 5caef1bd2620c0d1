"""Reference interface, perturbing maps and discrete boundary data (n = 2).

Curves are truncated Fourier series in the parameter s in [0, 2 pi):

    x(s) = sum_k  cos_x[k] cos(ks) + sin_x[k] sin(ks)      (same for y)

A :class:`BoundaryMap` phi is stored through its composition with the
reference parametrization, ``phi(x(s))``, which keeps perturbations
``phi + h psi`` exactly linear in the coefficients.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import MapValidationError
from .kernel import PeriodicityCell

REGIONS = ("interior", "exterior", "near_boundary")


def _coeffs(v, degree):
    a = np.zeros(degree + 1)
    v = np.asarray(v, dtype=np.float64).ravel()
    a[: v.size] = v
    return a


class _FourierCurve:
    """Shared evaluation of a closed Fourier curve and its s-derivatives."""

    def __init__(self, cos_x, sin_x, cos_y, sin_y):
        degree = max(len(cos_x), len(sin_x), len(cos_y), len(sin_y), 1) - 1
        self.cos_x = _coeffs(cos_x, degree)
        self.sin_x = _coeffs(sin_x, degree)
        self.cos_y = _coeffs(cos_y, degree)
        self.sin_y = _coeffs(sin_y, degree)
        # sin(0 s) vanishes identically; keep the table canonical
        self.sin_x[0] = 0.0
        self.sin_y[0] = 0.0

    @property
    def degree(self):
        return self.cos_x.size - 1

    def evaluate(self, s, deriv=0):
        """Points (deriv=0) or s-derivatives of the curve at parameters s, shape (..., 2)."""
        s = np.asarray(s, dtype=np.float64)
        k = np.arange(self.degree + 1)
        ks = np.multiply.outer(s, k)
        # d^m/ds^m of cos(ks), sin(ks) cycle through (cos, -sin, -cos, sin)
        c, sn = np.cos(ks), np.sin(ks)
        kd = k.astype(float) ** deriv
        m = deriv % 4
        if m == 0:
            dc, ds = c, sn
        elif m == 1:
            dc, ds = -sn, c
        elif m == 2:
            dc, ds = -c, -sn
        else:
            dc, ds = sn, -c
        x = dc @ (kd * self.cos_x) + ds @ (kd * self.sin_x)
        y = dc @ (kd * self.cos_y) + ds @ (kd * self.sin_y)
        return np.stack([x, y], axis=-1)

    def coefficient_vector(self):
        return np.concatenate([self.cos_x, self.sin_x, self.cos_y, self.sin_y])

    def to_dict(self):
        return {
            "degree": self.degree,
            "cos_x": self.cos_x.tolist(),
            "sin_x": self.sin_x.tolist(),
            "cos_y": self.cos_y.tolist(),
            "sin_y": self.sin_y.tolist(),
        }

    @staticmethod
    def _check_dict(d):
        for key in ("cos_x", "sin_x", "cos_y", "sin_y"):
            if key not in d:
                raise ValueError(f"missing coefficient list '{key}'")
        degree = d.get("degree")
        if degree is not None:
            for key in ("cos_x", "sin_x", "cos_y", "sin_y"):
                if len(d[key]) > degree + 1:
                    raise ValueError(f"'{key}' has more than degree+1 entries")

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        n = max(self.degree, other.degree)
        a = np.zeros(4 * (n + 1))
        b = np.zeros(4 * (n + 1))
        for src, dst in ((self, a), (other, b)):
            for i, arr in enumerate((src.cos_x, src.sin_x, src.cos_y, src.sin_y)):
                dst[i * (n + 1): i * (n + 1) + arr.size] = arr
        return bool(np.array_equal(a, b))

    def __repr__(self):
        return f"{type(self).__name__}(degree={self.degree})"


class ReferenceShape(_FourierCurve):
    """Smooth closed counterclockwise reference curve x(s)."""

    @classmethod
    def circle(cls, r0=0.25, center=(0.5, 0.5)):
        return cls([center[0], r0], [0.0, 0.0], [center[1], 0.0], [0.0, r0])

    @classmethod
    def ellipse(cls, a, b, center=(0.5, 0.5)):
        return cls([center[0], a], [0.0, 0.0], [center[1], 0.0], [0.0, b])

    @classmethod
    def from_dict(cls, d):
        cls._check_dict(d)
        return cls(d["cos_x"], d["sin_x"], d["cos_y"], d["sin_y"])


class BoundaryMap(_FourierCurve):
    """Map phi on the reference curve, stored as the coefficients of phi(x(s))."""

    @classmethod
    def identity(cls, shape):
        return cls(shape.cos_x, shape.sin_x, shape.cos_y, shape.sin_y)

    @classmethod
    def affine(cls, shape, A, b=(0.0, 0.0)):
        """Restriction of ``x -> A x + b`` to the reference curve."""
        A = np.asarray(A, dtype=np.float64)
        cx = A[0, 0] * shape.cos_x + A[0, 1] * shape.cos_y
        sx = A[0, 0] * shape.sin_x + A[0, 1] * shape.sin_y
        cy = A[1, 0] * shape.cos_x + A[1, 1] * shape.cos_y
        sy = A[1, 0] * shape.sin_x + A[1, 1] * shape.sin_y
        cx[0] += b[0]
        cy[0] += b[1]
        return cls(cx, sx, cy, sy)

    @classmethod
    def constant(cls, c):
        """Rigid translation direction psi = c (a constant vector)."""
        return cls([c[0]], [0.0], [c[1]], [0.0])

    @classmethod
    def from_dict(cls, d):
        cls._check_dict(d)
        return cls(d["cos_x"], d["sin_x"], d["cos_y"], d["sin_y"])

    def _combine(self, other, h):
        n = max(self.degree, other.degree)
        parts = []
        for a, b in ((self.cos_x, other.cos_x), (self.sin_x, other.sin_x),
                     (self.cos_y, other.cos_y), (self.sin_y, other.sin_y)):
            parts.append(_coeffs(a, n) + h * _coeffs(b, n))
        return BoundaryMap(*parts)

    def coeff_norm(self):
        """Euclidean norm of the coefficient table."""
        return float(np.linalg.norm(self.coefficient_vector()))


def perturb(phi, psi, h, shape=None, N=None, cell=None):
    """Coefficientwise ``phi + h psi``.

    When ``shape`` and ``N`` are given the result is validated and a
    :class:`MapValidationError` raised on failure.
    """
    out = phi._combine(psi, float(h))
    if shape is not None and N is not None:
        diag = validate_map(out, shape, N, cell)
        if not diag.passed:
            raise MapValidationError(f"perturbed map invalid: {diag.reason}", diag)
    return out


# --------------------------------------------------------------------------
# validation

@dataclass
class MapDiagnostics:
    chord_ratio: float
    min_speed: float
    margin: float
    signed_area: float
    chord_tol: float
    speed_tol: float
    margin_tol: float
    reasons: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.reasons

    @property
    def reason(self):
        return "; ".join(self.reasons) if self.reasons else "ok"

    def as_dict(self):
        return {
            "chord_ratio": self.chord_ratio,
            "min_speed": self.min_speed,
            "margin": self.margin,
            "signed_area": self.signed_area,
            "passed": self.passed,
            "reason": self.reason,
        }


def _signed_area(p, dp, N):
    # trapezoid rule on (x y' - y x') / 2, spectrally accurate
    return float(np.sum(p[:, 0] * dp[:, 1] - p[:, 1] * dp[:, 0]) * math.pi / N)


def validate_map(phi, shape, N, cell=None, chord_tol=0.1, speed_tol=1e-8, margin_tol=1e-3):
    """Discrete admissibility diagnostics for ``phi`` on ``N`` nodes.

    ``chord_ratio`` is ``min_{i != j} |p_i - p_j| / (L_mean |s_i - s_j|_circ)``
    with ``L_mean`` the mean speed, so a uniformly parametrized circle gives
    ``2/pi``. ``margin`` is the least distance from a node to the cell
    boundary (negative outside the cell).
    """
    cell = cell or PeriodicityCell((1.0, 1.0))
    s = 2 * math.pi * np.arange(N) / N
    p = phi.evaluate(s)
    dp = phi.evaluate(s, 1)
    dx = shape.evaluate(s, 1)
    speed = np.linalg.norm(dp, axis=1)
    ref_speed = np.linalg.norm(dx, axis=1)
    reasons = []

    mean_speed = float(speed.mean())
    diff = np.abs(np.subtract.outer(s, s))
    circ = np.minimum(diff, 2 * math.pi - diff)
    dist = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    np.fill_diagonal(circ, 1.0)
    np.fill_diagonal(dist, np.inf)
    if mean_speed > 0:
        chord = float(np.min(dist / circ) / mean_speed)
    else:
        chord = 0.0
    min_speed = float(speed.min())
    q = cell.q
    margin = float(np.min(np.minimum(p, q - p)))
    area = _signed_area(p, dp, N)

    if np.min(ref_speed) <= 0:
        reasons.append("reference parametrization has a vanishing derivative")
    if min_speed <= speed_tol:
        reasons.append(f"differential vanishes (min speed {min_speed:.3e})")
    if not chord >= chord_tol:
        reasons.append(f"chord/arc ratio {chord:.3e} below {chord_tol}")
    if not margin >= margin_tol:
        reasons.append(f"cell margin {margin:.3e} below {margin_tol}")
    if not area > 0:
        reasons.append("curve is not counterclockwise (signed area <= 0)")
    return MapDiagnostics(chord, min_speed, margin, area, chord_tol, speed_tol, margin_tol, reasons)


# --------------------------------------------------------------------------
# boundary grid

@dataclass(frozen=True, eq=False)
class BoundaryGrid:
    """Uniform-parameter discretization of the image curve phi(x(s)).

    ``d1`` and ``d2`` are the first and second s-derivatives of the image
    parametrization; ``weights = speed * 2 pi / N`` realize arc length and
    ``sigma = speed / |x'|`` is the area-element density of phi.
    """

    shape: ReferenceShape
    map: BoundaryMap
    N: int
    s: np.ndarray
    points: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    speed: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    curvature: np.ndarray
    weights: np.ndarray
    sigma: np.ndarray

    @property
    def length(self):
        return float(self.weights.sum())

    @property
    def spacing(self):
        """Largest chord between consecutive nodes."""
        return float(np.max(np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)))

    def refine(self, factor):
        """Same curve on ``factor * N`` nodes (node set contains the original)."""
        return _make_grid(self.shape, self.map, self.N * int(factor))


def _make_grid(shape, phi, N):
    s = 2 * math.pi * np.arange(N) / N
    p = phi.evaluate(s)
    d1 = phi.evaluate(s, 1)
    d2 = phi.evaluate(s, 2)
    speed = np.linalg.norm(d1, axis=1)
    tau = d1 / speed[:, None]
    nu = np.stack([tau[:, 1], -tau[:, 0]], axis=1)
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    ref_speed = np.linalg.norm(shape.evaluate(s, 1), axis=1)
    w = speed * 2 * math.pi / N
    return BoundaryGrid(shape, phi, N, s, p, d1, d2, speed, nu, tau, kappa, w, speed / ref_speed)


def build_grid(shape, phi=None, N=64, cell=None, **tols):
    """Nodes, outward normals, weights and area densities of phi(boundary).

    Raises :class:`MapValidationError` when ``phi`` fails :func:`validate_map`.
    """
    if N < 16 or N % 2:
        raise ValueError(f"N must be even and >= 16, got {N}")
    phi = phi if phi is not None else BoundaryMap.identity(shape)
    diag = validate_map(phi, shape, N, cell, **tols)
    if not diag.passed:
        raise MapValidationError(f"map failed validation: {diag.reason}", diag)
    return _make_grid(shape, phi, N)


def locate(pt, grid, cell, safety=None):
    """Classify points as interior / exterior / near_boundary modulo the lattice.

    ``safety`` defaults to two node spacings. Accepts one point (returns a
    string) or an array of shape (P, 2) (returns an object array).
    """
    pts = np.asarray(pt, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    safety = 2.0 * grid.spacing if safety is None else safety
    y = cell.to_cell(pts)
    q = cell.q

    shifts = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]) * q
    img = y[:, None, None, :] + shifts[None, :, None, :] - grid.points[None, None, :, :]
    dist = np.sqrt(np.min(np.sum(img**2, axis=-1), axis=(1, 2)))

    # winding number of the closed polygon about each wrapped point
    rel = grid.points[None, :, :] - y[:, None, :]
    ang = np.arctan2(rel[..., 1], rel[..., 0])
    dang = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
    dang = (dang + math.pi) % (2 * math.pi) - math.pi
    winding = np.rint(dang.sum(axis=1) / (2 * math.pi)).astype(int)

    out = np.where(winding != 0, "interior", "exterior").astype(object)
    out[dist < safety] = "near_boundary"
    return out[0] if single else out
