import json
import os
import subprocess
import sys

import numpy as np
import pytest

from perheat.cli import DEFAULTS, SUBCOMMANDS, config_hash, load_config, run
from perheat.errors import ConfigError

SMALL = {"N": 32, "M": 8}
CASES = {
    "kernel-eval": {"points": [[0.02, 0.5, 0.5], [0.3, 0.1, 0.2]], "random_points": 3},
    "split-check": SMALL,
    "jump-check": SMALL,
    "solve": dict(SMALL, f_spec=[{"coef": 1.0, "t_power": 1, "trig": "cos", "k": 1}],
                  g_spec=[{"coef": -1.0, "t_power": 2}], targets=[[0.3, 0.5, 0.5], [0.5, 0.05, 0.1]]),
    "neumann": dict(SMALL, f_spec=[{"coef": 1.0, "t_power": 1}], g_spec=[{"coef": 1.0, "t_power": 2}],
                    J=6),
    "shape-derivative": SMALL,
    "converge": {"pipeline": "solve", "ladder": [[32, 4], [32, 8]], "reference": [64, 16]},
}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def read_error(out):
    with open(os.path.join(out, "error.json")) as fh:
        return json.load(fh)


def csv_files(out):
    return sorted(f for f in os.listdir(out) if f.endswith(".csv"))


def test_defaults_validate():
    cfg, _ = load_config()
    assert cfg["N"] == DEFAULTS["N"]
    assert config_hash(cfg) == config_hash(json.loads(json.dumps(cfg)))


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_pipeline_runs_and_writes_csv(tmp_path, command):
    out = str(tmp_path / "out")
    assert run(command, write(tmp_path, CASES[command]), out) == 0
    files = csv_files(out)
    assert files
    for name in files:
        with open(os.path.join(out, name)) as fh:
            first, header = fh.readline(), fh.readline()
        assert first.startswith("# config_sha256=") and "seed=0" in first
        assert header.strip() and not header.startswith("#")
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["command"] == command


def test_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, CASES["kernel-eval"])
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run("kernel-eval", path, a) == 0 and run("kernel-eval", path, b) == 0
    for name in csv_files(a):
        assert open(os.path.join(a, name), "rb").read() == open(os.path.join(b, name), "rb").read()


def test_seed_changes_random_points(tmp_path):
    path = write(tmp_path, CASES["kernel-eval"])
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    run("kernel-eval", path, a, seed=1)
    run("kernel-eval", path, b, seed=2)
    ka = open(os.path.join(a, "kernel_eval.csv")).read()
    kb = open(os.path.join(b, "kernel_eval.csv")).read()
    assert ka != kb and "seed=1" in ka


@pytest.mark.parametrize("bad, field", [
    ({"N": 31}, "N"),
    ({"T": -1.0}, "T"),
    ({"lattice": {"representation": "ewald"}}, "lattice.representation"),
    ({"unknown_key": 1}, "unknown_key"),
    ({"cell": {"q": [1.0, 1.0, 1.0]}}, "cell.q"),
    ({"f_spec": {"csv": "missing.csv"}}, "f_spec.csv"),
])
def test_invalid_config_exits_2_with_field(tmp_path, bad, field):
    out = str(tmp_path / "out")
    assert run("solve", write(tmp_path, dict(SMALL, **bad)), out) == 2
    err = read_error(out)
    assert err["field"] == field and err["exit_code"] == 2


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    out = str(tmp_path / "out")
    assert run("solve", str(p), out) == 2 and read_error(out)["field"] == "config"
    assert run("solve", str(tmp_path / "none.json"), out) == 2


def test_command_mismatch(tmp_path):
    out = str(tmp_path / "out")
    assert run("solve", write(tmp_path, {"command": "neumann"}), out) == 2
    assert read_error(out)["field"] == "command"


def test_invalid_map_exits_3(tmp_path):
    out = str(tmp_path / "out")
    cfg = dict(SMALL, map={"kind": "affine", "A": [[1.0, 0.0], [0.0, 0.0]]})
    assert run("split-check", write(tmp_path, cfg), out) == 3
    err = read_error(out)
    assert err["exit_code"] == 3 and err["diagnostics"]["passed"] is False


def test_target_on_interface_exits_3(tmp_path):
    out = str(tmp_path / "out")
    cfg = dict(CASES["solve"], targets=[[0.3, 0.75, 0.5]])
    assert run("solve", write(tmp_path, cfg), out) == 3


def test_density_from_csv(tmp_path, caplog):
    f = np.outer(np.arange(1, 9) / 8, np.ones(32))
    np.savetxt(tmp_path / "f.csv", f, delimiter=",", header="f density", comments="# ")
    out = str(tmp_path / "out")
    cfg = dict(SMALL, f_spec={"csv": "f.csv"}, g_spec=[])
    assert run("solve", write(tmp_path, cfg), out) == 0
    assert any("raw grid data" in r.message for r in caplog.records)
    np.savetxt(tmp_path / "f.csv", f[:, :16], delimiter=",")
    assert run("solve", write(tmp_path, cfg), out) == 2
    assert read_error(out)["field"] == "f_spec.csv"


def test_environment_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PERHEAT_OUTPUT_DIR", str(tmp_path / "env"))
    assert run("kernel-eval", write(tmp_path, CASES["kernel-eval"])) == 0
    assert os.path.exists(tmp_path / "env" / "kernel_eval.csv")


def test_module_entry_point(tmp_path):
    out = str(tmp_path / "out")
    r = subprocess.run([sys.executable, "-m", "perheat", "kernel-eval", "--config",
                        write(tmp_path, CASES["kernel-eval"]), "--out", out],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "perheat", "solve", "--config",
                        write(tmp_path, {"M": 1}), "--out", out], capture_output=True, text=True)
    assert r.returncode == 2 and '"field": "M"' in r.stderr


def test_load_config_rejects_planar_only_cells():
    with pytest.raises(ConfigError):
        load_config(None, {"cell": {"q": [1.0, 1.0, 2.0]}})


def test_solve_zero_data(tmp_path):
    out = str(tmp_path / "out")
    assert run("solve", write(tmp_path, SMALL), out) == 0
    dens = np.loadtxt(os.path.join(out, "densities.csv"), delimiter=",", skiprows=2)
    assert np.all(dens[:, 4:] == 0.0)
    res = np.genfromtxt(os.path.join(out, "residuals.csv"), delimiter=",", skip_header=2,
                        usecols=1)
    assert np.all(res == 0.0)


def test_split_check_default_config(tmp_path):
    out = str(tmp_path / "out")
    assert run("split-check", None, out) == 0
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["result"]["passed"]


def test_negative_lambda_names_field(tmp_path):
    out = str(tmp_path / "out")
    assert run("solve", write(tmp_path, {"lambda_plus": -1.0}), out) == 2
    assert read_error(out)["field"] == "lambda_plus"


def test_single_rung_ladder_has_no_order_column(tmp_path):
    out = str(tmp_path / "out")
    cfg = {"pipeline": "split-check", "ladder": [[32, 4]]}
    assert run("converge", write(tmp_path, cfg), out) == 0
    lines = open(os.path.join(out, "convergence.csv")).read().splitlines()
    assert lines[1] == "N,M,max_error" and len(lines) == 3


def test_jump_ladder_decreases(tmp_path):
    from perheat.cli import convergence_table, load_config
    cfg, _ = load_config(None, {"pipeline": "jump-check", "ladder": [[32, 8], [64, 16]]})
    rows = convergence_table(cfg)
    assert rows[1][2] < rows[0][2]


def test_manufactured_ladder_orders(tmp_path):
    from perheat.cli import convergence_table, load_config
    cfg, _ = load_config(None, {"pipeline": "solve", "ladder": [[32, 8], [32, 16], [32, 32]],
                                "reference": [32, 256]})
    rows = convergence_table(cfg, parallel=True)
    assert all(r[3] >= 1 for r in rows[1:])


def test_ladder_must_refine(tmp_path):
    out = str(tmp_path / "out")
    cfg = {"pipeline": "split-check", "ladder": [[64, 8], [32, 8]]}
    assert run("converge", write(tmp_path, cfg), out) == 2
    assert read_error(out)["field"] == "ladder"
