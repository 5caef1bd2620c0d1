"""Command-line pipelines driven by JSON experiment configs.

Usage: ``perheat <subcommand> [--config FILE] [--out DIR] [--seed N]``.

Every CSV starts with a comment line carrying the SHA-256 of the resolved
config and the seed, followed by a header row. Numbers are written with
17 significant digits so reruns are byte-identical. Failures exit with 2
(invalid config) or 3 (numerical failure) and write ``error.json``.

Environment: ``PERHEAT_OUTPUT_DIR`` (default output directory) and
``PERHEAT_THREADS`` (BLAS thread count, applied before numpy loads).
"""
import os

if os.environ.get("PERHEAT_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["PERHEAT_THREADS"])

import argparse
from concurrent.futures import ThreadPoolExecutor
import copy
import hashlib
import json
import logging
import math
import sys

import jsonschema
import numpy as np

from .causal import TimeGrid, sample_density
from .errors import ConfigError, MapValidationError, PerheatError
from .geometry import BoundaryMap, ReferenceShape, build_grid, validate_map
from .kernel import LatticeSumConfig, PeriodicityCell, periodic_kernel
from .potentials import jump_check, splitting_check, _Assembler
from .transmission import (TransmissionData, boundary_operators, eval_solution,
                           manufactured_reference, residuals, solve_full, solve_reduced)

log = logging.getLogger("perheat")

SCHEMA_VERSION = 1
SUBCOMMANDS = ("kernel-eval", "split-check", "jump-check", "solve", "neumann",
               "shape-derivative", "converge")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_coeffs = {"type": "array", "items": _num}
_fourier = {
    "type": "object",
    "properties": {"kind": {"const": "fourier"}, "degree": {"type": "integer", "minimum": 0},
                   "cos_x": _coeffs, "sin_x": _coeffs, "cos_y": _coeffs, "sin_y": _coeffs},
    "required": ["cos_x", "sin_x", "cos_y", "sin_y"],
}
_map_spec = {
    "oneOf": [
        {"type": "null"},
        {"type": "object", "properties": {"kind": {"const": "identity"}}, "required": ["kind"],
         "additionalProperties": False},
        {"type": "object", "properties": {
            "kind": {"const": "affine"},
            "A": {"type": "array", "items": _vec2, "minItems": 2, "maxItems": 2},
            "b": _vec2}, "required": ["kind", "A"], "additionalProperties": False},
        {"type": "object", "properties": {"kind": {"const": "constant"}, "c": _vec2},
         "required": ["kind", "c"], "additionalProperties": False},
        _fourier,
    ]
}
_term = {
    "type": "object",
    "properties": {"coef": _num, "t_power": _pos, "trig": {"enum": ["one", "cos", "sin"]},
                   "k": {"type": "integer", "minimum": 0}},
    "required": ["coef", "t_power"],
    "additionalProperties": False,
}
_density = {
    "oneOf": [
        {"type": "array", "items": _term},
        {"type": "object", "properties": {"csv": {"type": "string"}}, "required": ["csv"],
         "additionalProperties": False},
    ]
}
_rung = {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "command": {"enum": list(SUBCOMMANDS)},
        "cell": {"type": "object", "properties": {
            "q": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 3}},
            "required": ["q"], "additionalProperties": False},
        "shape": {"oneOf": [
            {"type": "object", "properties": {"kind": {"const": "circle"}, "r0": _pos, "center": _vec2},
             "required": ["kind"], "additionalProperties": False},
            {"type": "object", "properties": {"kind": {"const": "ellipse"}, "a": _pos, "b": _pos,
                                              "center": _vec2},
             "required": ["kind", "a", "b"], "additionalProperties": False},
            _fourier,
        ]},
        "map": _map_spec,
        "N": {"type": "integer", "minimum": 16, "multipleOf": 2},
        "M": {"type": "integer", "minimum": 2},
        "T": _pos,
        "lattice": {"type": "object", "properties": {
            "tail_tol": _pos, "max_shell": {"type": "integer", "minimum": 1},
            "representation": {"enum": ["direct", "spectral", "auto"]}}, "additionalProperties": False},
        "lambda_plus": _pos,
        "lambda_minus": _pos,
        "lambda0_plus": _pos,
        "lambda0_minus": _pos,
        "method": {"enum": ["full", "reduced"]},
        "f_spec": _density,
        "g_spec": _density,
        "targets": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3,
                                               "maxItems": 3}},
        "points": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3,
                                              "maxItems": 3}},
        "random_points": {"type": "integer", "minimum": 0},
        "layer": {"enum": ["single_normal_derivative", "double_trace"]},
        "rho_spec": _density,
        "J": {"type": "integer", "minimum": 0},
        "ratio_target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "psi": _map_spec,
        "probe": {"enum": ["operator", "solution"]},
        "kind": {"enum": ["Vq", "Wstar_q", "Wq", "V", "Wstar", "W"]},
        "param": {"enum": ["shape", "lambda_plus", "lambda_minus"]},
        "side": {"enum": ["plus", "minus"]},
        "h_list": {"type": "array", "items": _pos, "minItems": 2},
        "pipeline": {"enum": ["split-check", "jump-check", "solve"]},
        "ladder": {"type": "array", "items": _rung, "minItems": 1},
        "reference": _rung,
        "mu_plus_spec": {"type": "array", "items": _term},
        "mu_minus_spec": {"type": "array", "items": _term},
        "tolerances": {"type": "object", "properties": {
            "split": _pos, "residual": _pos, "jump": _pos}, "additionalProperties": False},
        "output": {"type": "object", "properties": {"dir": {"type": "string"}},
                   "additionalProperties": False},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "cell": {"q": [1.0, 1.0]},
    "shape": {"kind": "circle", "r0": 0.25, "center": [0.5, 0.5]},
    "map": None,
    "N": 32,
    "M": 16,
    "T": 0.5,
    "lattice": {"tail_tol": 1e-15, "max_shell": 64, "representation": "auto"},
    "lambda_plus": 1.0,
    "lambda_minus": 3.0,
    "lambda0_plus": 1.0,
    "lambda0_minus": 3.0,
    "method": "full",
    "f_spec": [],
    "g_spec": [],
    "targets": [],
    "points": [],
    "random_points": 0,
    "layer": "single_normal_derivative",
    "rho_spec": [{"coef": 2.0, "t_power": 1}, {"coef": 1.0, "t_power": 1, "trig": "cos", "k": 1}],
    "J": 10,
    "ratio_target": 0.5,
    "psi": {"kind": "affine", "A": [[1.0, 0.0], [0.0, 1.0]], "b": [-0.5, -0.5]},
    "probe": "operator",
    "kind": "Vq",
    "param": "shape",
    "side": "plus",
    "h_list": [1e-2, 5e-3, 2.5e-3, 1.25e-3],
    "pipeline": "jump-check",
    "ladder": [[32, 16], [64, 32]],
    "mu_plus_spec": [{"coef": 1.0, "t_power": 1},
                     {"coef": 0.5, "t_power": 2, "trig": "cos", "k": 1},
                     {"coef": 0.2, "t_power": 1, "trig": "sin", "k": 3}],
    "mu_minus_spec": [{"coef": 0.3, "t_power": 2},
                      {"coef": -1.0, "t_power": 2, "trig": "sin", "k": 2},
                      {"coef": 1.0, "t_power": 1, "trig": "cos", "k": 1}],
    "tolerances": {"split": 1e-10, "residual": 1e-10, "jump": 1e-2},
    "output": {},
    "seed": 0,
}


# --------------------------------------------------------------------------
# config handling

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("shape", "map", "psi"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _field(err):
    path = list(err.absolute_path)
    if not path and err.validator == "additionalProperties":
        extra = set(err.instance) - set(err.schema.get("properties", {}))
        path = sorted(extra)[:1]
    return ".".join(str(p) for p in path) or "<root>"


def load_config(path=None, overrides=None):
    """Validate a user config and merge it over the defaults.

    Returns ``(config, base_dir)``; relative file references resolve
    against ``base_dir``.
    """
    user = {}
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path!r} not found", "config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", "config") from None
        base_dir = os.path.dirname(os.path.abspath(path))
    if overrides:
        user = _merge(user, overrides)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(user), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"invalid config at {_field(err)}: {err.message}", _field(err))
    cfg = _merge(DEFAULTS, user)
    if len(cfg["cell"]["q"]) != 2:
        raise ConfigError("the boundary solver is two-dimensional; cell.q needs two entries", "cell.q")
    return cfg, base_dir


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _shape(spec):
    kind = spec.get("kind", "fourier")
    if kind == "circle":
        return ReferenceShape.circle(spec.get("r0", 0.25), tuple(spec.get("center", (0.5, 0.5))))
    if kind == "ellipse":
        return ReferenceShape.ellipse(spec["a"], spec["b"], tuple(spec.get("center", (0.5, 0.5))))
    return ReferenceShape.from_dict({k: v for k, v in spec.items() if k != "kind"})


def _map(spec, shape):
    if spec is None or spec.get("kind") == "identity":
        return BoundaryMap.identity(shape)
    kind = spec.get("kind", "fourier")
    if kind == "affine":
        return BoundaryMap.affine(shape, spec["A"], spec.get("b", (0.0, 0.0)))
    if kind == "constant":
        return BoundaryMap.constant(spec["c"])
    return BoundaryMap.from_dict({k: v for k, v in spec.items() if k != "kind"})


def _catalog(terms):
    """Separable density ``sum coef t^p trig(k s)`` from catalog terms."""
    def fn(t, s):
        out = np.zeros(np.broadcast(t, s).shape)
        for term in terms:
            trig = term.get("trig", "one")
            k = term.get("k", 0)
            ang = np.ones_like(s) if trig == "one" else (np.cos(k * s) if trig == "cos" else np.sin(k * s))
            out = out + term["coef"] * t ** term["t_power"] * ang
        return out
    return fn


def _density(spec, grid, tg, base_dir, name):
    if isinstance(spec, dict):
        path = spec["csv"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.exists(path):
            raise ConfigError(f"density file {spec['csv']!r} not found", f"{name}.csv")
        arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if arr.shape != (tg.M, grid.N):
            raise ConfigError(f"density grid {arr.shape} does not match (M, N) = {(tg.M, grid.N)}",
                              f"{name}.csv")
        if name == "f_spec":
            # the trace datum should be smoother than the flux datum; raw grids cannot show it
            spec = np.abs(np.fft.rfft(arr, axis=1))
            tail = float(spec[:, spec.shape[1] // 2:].max() / max(spec.max(), np.finfo(float).tiny))
            log.warning("f_spec read from raw grid data: regularity is not verified "
                        "(upper-half Fourier tail %.2e of the peak)", tail)
        return arr
    return sample_density(_catalog(spec), grid.s, tg)


class _Setup:
    def __init__(self, cfg, N=None, M=None):
        self.cell = PeriodicityCell(tuple(cfg["cell"]["q"]))
        lat = cfg["lattice"]
        self.lat = LatticeSumConfig(lat["tail_tol"], lat["max_shell"], lat["representation"])
        self.shape = _shape(cfg["shape"])
        self.phi = _map(cfg["map"], self.shape)
        self.N = N or cfg["N"]
        self.M = M or cfg["M"]
        self.tg = TimeGrid(cfg["T"], self.M)
        diag = validate_map(self.phi, self.shape, self.N, self.cell)
        if not diag.passed:
            raise MapValidationError(f"boundary map invalid: {diag.reason}", diag)
        self.grid = build_grid(self.shape, self.phi, self.N, self.cell)


# --------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % (float(v) + 0.0)   # no negative zeros


class Output:
    def __init__(self, directory, chash, seed):
        self.dir = directory
        self.chash = chash
        self.seed = seed
        os.makedirs(directory, exist_ok=True)
        self.files = []

    def csv(self, name, header, rows):
        path = os.path.join(self.dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_sha256={self.chash} seed={self.seed}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        self.files.append(path)
        return path

    def json(self, name, obj):
        path = os.path.join(self.dir, name)
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        self.files.append(path)
        return path


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


# --------------------------------------------------------------------------
# pipelines

def run_kernel_eval(cfg, out, base_dir):
    cell = PeriodicityCell(tuple(cfg["cell"]["q"]))
    lat = cfg["lattice"]
    lc = LatticeSumConfig(lat["tail_tol"], lat["max_shell"], lat["representation"])
    pts = [tuple(p) for p in cfg["points"]]
    if cfg["random_points"]:
        rng = np.random.default_rng(cfg["seed"])
        q = np.asarray(cell.q_diag)
        for _ in range(cfg["random_points"]):
            t = float(rng.uniform(1e-3, 1.0))
            x = rng.uniform(0, 1, 2) * q
            pts.append((t, float(x[0]), float(x[1])))
    rows = []
    for t, x, y in pts:
        val, tail = periodic_kernel(t, (x, y), cell, lc, return_tail=True)
        rows.append((t, x, y, val, tail))
    out.csv("kernel_eval.csv", ["t", "x", "y", "value", "est_tail"], rows)
    return {"points": len(rows)}


def _max_rows(err):
    # err has shape (M, N, N): worst discrepancy per (block k, row i)
    worst = np.abs(err).max(axis=2)
    M, N = worst.shape
    return [(k, i, worst[k, i]) for k in range(M) for i in range(N)]


def run_split_check(cfg, out, base_dir, N=None, M=None):
    st = _Setup(cfg, N, M)
    a = _Assembler(st.grid, st.tg, st.cell, st.lat)
    err = a.blocks("Vq") - (a.blocks("V") + a.blocks("R"))
    rows = _max_rows(err)
    if out is not None:
        out.csv("split_check.csv", ["k", "i", "error"], rows)
    worst = float(np.abs(err).max())
    tol = cfg["tolerances"]["split"]
    res = {"max_discrepancy": worst, "tolerance": tol, "passed": worst < tol}
    if out is not None and not res["passed"]:
        raise NumericalFailure(f"splitting discrepancy {worst:.3e} exceeds {tol:.3e}", res)
    return res


def run_jump_check(cfg, out, base_dir, N=None, M=None):
    st = _Setup(cfg, N, M)
    rho = _density(cfg["rho_spec"], st.grid, st.tg, base_dir, "rho_spec")
    rep = jump_check(cfg["layer"], st.grid, st.tg, st.cell, st.lat, rho)
    if out is not None:
        out.csv("jump_check.csv", ["k", "i", "error"], rep.rows())
    res = {"layer": rep.layer, "max_error": rep.max_error, "max_side_error": rep.max_side_error,
           "monotone_extrapolation": rep.monotone, "residuals": rep.residuals, "notes": rep.notes}
    tol = cfg["tolerances"]["jump"]
    if out is not None and rep.max_error > tol:
        raise NumericalFailure(f"jump error {rep.max_error:.3e} exceeds {tol:.3e}", res)
    return res


def _data(cfg, st, base_dir):
    f = _density(cfg["f_spec"], st.grid, st.tg, base_dir, "f_spec")
    g = _density(cfg["g_spec"], st.grid, st.tg, base_dir, "g_spec")
    return TransmissionData(cfg["lambda_plus"], cfg["lambda_minus"], f, g)


def _solve(cfg, st, data, ops=None):
    fn = solve_full if cfg["method"] == "full" else solve_reduced
    sol = fn(st.grid, st.tg, st.cell, st.lat, data, ops)
    log.info("diagonal block condition estimate %.3e", sol.condition)
    return sol


def run_solve(cfg, out, base_dir):
    st = _Setup(cfg)
    data = _data(cfg, st, base_dir)
    sol = _solve(cfg, st, data)
    rep = residuals(sol, data)
    tk = st.tg.colloc
    rows = [(k, i, tk[k], st.grid.s[i], sol.rho_plus[k, i], sol.rho_minus[k, i])
            for k in range(st.tg.M) for i in range(st.grid.N)]
    out.csv("densities.csv", ["k", "i", "t", "s", "rho_plus", "rho_minus"], rows)
    frows = []
    if cfg["targets"]:
        from .geometry import locate
        tx = np.asarray(cfg["targets"], dtype=np.float64)
        where = locate(tx[:, 1:], st.grid, st.cell)
        for j, (t, x, y) in enumerate(tx):
            side = {"interior": "plus", "exterior": "minus"}.get(where[j])
            if side is None:
                raise NumericalFailure(f"target {j} lies too close to the interface",
                                       {"target": j, "region": str(where[j])})
            val = eval_solution(sol, side, ([t], [[x, y]]))[0]
            frows.append((j, t, x, y, side, val))
    out.csv("fields.csv", ["target", "t", "x", "y", "side", "value"], frows)
    summary = {"method": sol.method, "condition": sol.condition, "residuals": rep.as_dict()}
    out.csv("residuals.csv", ["quantity", "value"], sorted(rep.as_dict().items()))
    tol = cfg["tolerances"]["residual"]
    scale = max(1.0, float(np.max(np.abs(data.f))), float(np.max(np.abs(data.g))))
    if max(rep.trace_max, rep.flux_max) > tol * scale:
        raise NumericalFailure("interface residual above tolerance", summary)
    return summary


def run_neumann(cfg, out, base_dir):
    from .neumann import SeriesConfig, epsilon_estimate, probe_at_fraction, series_solve
    st = _Setup(cfg)
    ops = boundary_operators(st.grid, st.tg, st.cell, st.lat)
    l0p, l0m = cfg["lambda0_plus"], cfg["lambda0_minus"]
    eps = epsilon_estimate(st.grid, st.tg, st.cell, st.lat, l0p, l0m, ops=ops)
    if math.isinf(eps):
        lp, lm = cfg["lambda_plus"], cfg["lambda_minus"]
    else:
        lp, lm = probe_at_fraction(l0p, l0m, eps, cfg["ratio_target"])
    data = _data(cfg, st, base_dir)
    sc = SeriesConfig(l0p, l0m, lp, lm, J=cfg["J"])
    res = series_solve(st.grid, st.tg, st.cell, st.lat, data, sc, ops)
    rows = [(j, res.term_norms[j], res.partial_errors[j]) for j in range(len(res.terms))]
    out.csv("neumann.csv", ["j", "term_norm", "partial_error_vs_direct"], rows)
    return {"epsilon": eps, "lambda_plus": lp, "lambda_minus": lm, "delta": res.delta,
            "inside_radius": res.inside_radius, "max_ratio": float(np.max(res.ratios, initial=0.0)),
            "notes": res.notes}


def run_shape_derivative(cfg, out, base_dir):
    from .sensitivity import fd_operator_derivative, fd_solution_derivative
    st = _Setup(cfg)
    psi = _map(cfg["psi"], st.shape)
    h = cfg["h_list"]
    if cfg["probe"] == "operator":
        mu = _density(cfg["rho_spec"], st.grid, st.tg, base_dir, "rho_spec")
        rep = fd_operator_derivative(st.phi, psi, mu, cfg["kind"], st.shape, st.N, st.tg, st.cell,
                                     st.lat, h)
    else:
        if not cfg["targets"]:
            raise ConfigError("solution probes need targets", "targets")
        tx = np.asarray(cfg["targets"], dtype=np.float64)
        data = _data(cfg, st, base_dir)
        rep = fd_solution_derivative(st.phi, psi, st.shape, st.N, st.tg, data, (tx[:, 0], tx[:, 1:]),
                                     st.cell, st.lat, h, side=cfg["side"], param=cfg["param"],
                                     method=cfg["method"])
    out.csv("shape_derivative.csv", ["h", "quotient_norm", "second_difference", "observed_order"],
            rep.rows())
    return {"passed": rep.passed, "min_order": rep.min_order, "floor": rep.floor, "notes": rep.notes}


def _solve_error(cfg, N, M, ref):
    st = _Setup(cfg, N, M)
    mp, mm = _catalog(cfg["mu_plus_spec"]), _catalog(cfg["mu_minus_spec"])
    grid, tg, data, ep, em = manufactured_reference(
        st.shape, st.phi, st.cell, st.lat, mp, mm, cfg["lambda_plus"], cfg["lambda_minus"],
        N, M, cfg["T"], ref[0], ref[1])
    sol = solve_full(grid, tg, st.cell, st.lat, data)
    return max(float(np.max(np.abs(sol.rho_plus - ep))), float(np.max(np.abs(sol.rho_minus - em))))


def convergence_table(cfg, parallel=False):
    """Error per rung of ``cfg['ladder']`` and observed orders between rungs."""
    ladder = [tuple(r) for r in cfg["ladder"]]
    for (n0, m0), (n1, m1) in zip(ladder, ladder[1:]):
        if n1 < n0 or m1 < m0 or (n1, m1) == (n0, m0):
            raise ConfigError("ladder must strictly refine", "ladder")
    pipe = cfg["pipeline"]
    if pipe == "solve":
        ref = tuple(cfg.get("reference") or (2 * ladder[-1][0], 2 * ladder[-1][1]))
        for n, m in ladder:
            if ref[0] % n or ref[1] % m:
                raise ConfigError("reference grid must refine every rung by integer factors",
                                  "reference")

    def one(rung):
        N, M = rung
        if pipe == "split-check":
            return run_split_check(cfg, None, None, N, M)["max_discrepancy"]
        if pipe == "jump-check":
            return run_jump_check(cfg, None, None, N, M)["max_error"]
        return _solve_error(cfg, N, M, ref)

    if parallel and len(ladder) > 1:
        with ThreadPoolExecutor() as ex:
            errors = list(ex.map(one, ladder))
    else:
        errors = [one(r) for r in ladder]
    rows = []
    for r, ((N, M), e) in enumerate(zip(ladder, errors)):
        row = [N, M, e]
        if len(ladder) > 1:
            row.append(math.nan)
        if r:
            N0, M0 = ladder[r - 1]
            factor = M / M0 if M != M0 else N / N0
            e0 = errors[r - 1]
            row[3] = math.log(e0 / e) / math.log(factor) if e > 0 and e0 > 0 else math.nan
        rows.append(row)
    return rows


def run_converge(cfg, out, base_dir, parallel=False):
    rows = convergence_table(cfg, parallel)
    header = ["N", "M", "max_error"] + (["observed_order"] if len(rows) > 1 else [])
    out.csv("convergence.csv", header, rows)
    return {"pipeline": cfg["pipeline"], "rungs": len(rows)}


PIPELINES = {
    "kernel-eval": run_kernel_eval,
    "split-check": run_split_check,
    "jump-check": run_jump_check,
    "solve": run_solve,
    "neumann": run_neumann,
    "shape-derivative": run_shape_derivative,
    "converge": run_converge,
}


class NumericalFailure(PerheatError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


# --------------------------------------------------------------------------
# entry point

def run(command, config_path=None, out_dir=None, seed=None, parallel=False, overrides=None):
    """Run a pipeline; returns the exit status (0, 2 or 3)."""
    out_dir = out_dir or os.environ.get("PERHEAT_OUTPUT_DIR") or "perheat_out"
    os.makedirs(out_dir, exist_ok=True)
    try:
        if command not in PIPELINES:
            raise ConfigError(f"unknown subcommand {command!r}", "command")
        cfg, base_dir = load_config(config_path, overrides)
        if cfg.get("command", command) != command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}", "command")
        if seed is not None:
            cfg["seed"] = seed
        cfg["command"] = command
        out = Output(cfg["output"].get("dir", out_dir), config_hash(cfg), cfg["seed"])
        kwargs = {"parallel": parallel} if command == "converge" else {}
        summary = PIPELINES[command](cfg, out, base_dir, **kwargs)
        out.json("summary.json", {"command": command, "config_sha256": out.chash, "seed": cfg["seed"],
                                  "result": summary})
        return 0
    except ConfigError as exc:
        return _fail(out_dir, 2, exc, {"field": exc.field})
    except (NumericalFailure, MapValidationError) as exc:
        diag = exc.diagnostics
        if hasattr(diag, "as_dict"):
            diag = diag.as_dict()
        return _fail(out_dir, 3, exc, {"diagnostics": diag})
    except (PerheatError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(out_dir, 3, exc, {})


def _fail(out_dir, code, exc, extra):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable)
    with open(os.path.join(out_dir, "error.json"), "w") as fh:
        fh.write(text + "\n")
    print(text, file=sys.stderr)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="perheat", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
    parser.add_argument("--out", help="output directory (default $PERHEAT_OUTPUT_DIR or ./perheat_out)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--parallel", action="store_true", help="run independent rungs concurrently")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.seed, args.parallel)


if __name__ == "__main__":
    sys.exit(main())
