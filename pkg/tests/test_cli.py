import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from polyrto import config
from polyrto.cli import RESULT_KEYS, main
from polyrto.mesh import load_mesh


def small_config(tmp_path, name="cantilever-u10", n=120, **changes):
    cfg = config.preset(name)
    cfg["mesh"].update(n_elements=n, lloyd_iterations=10)
    cfg["optimizer"]["max_iterations"] = 8
    for section, value in changes.items():
        if isinstance(value, dict):
            cfg[section].update(value)
        else:
            cfg[section] = value
    path = tmp_path / f"{name}.json"
    path.write_text(config.dumps(cfg))
    return path


def unit_square_config(tmp_path):
    cfg = {
        "schema": "polyrto/1", "name": "square",
        "domain": {"width": 1, "height": 1, "regions": [
            {"name": "left", "kind": "segment", "coords": [0, 0, 0, 1]},
            {"name": "tip", "kind": "point", "coords": [1, 1]}]},
        "mesh": {"n_elements": 1, "seed": 0, "lloyd_iterations": 0},
        "bcs": {"fixed": {"left": ["x", "y"]}},
        "load_model": {"kind": "random_magnitudes", "loads": [
            {"region": "tip", "direction": [0, -1],
             "distribution": {"kind": "uniform", "lo": 1, "hi": 1}}]},
        "volume_fraction": 1.0,
        "stochastic": {"p_pc": 1, "mode": "gpc"},
    }
    path = tmp_path / "square.json"
    path.write_text(json.dumps(cfg))
    return path


# --------------------------------------------------------------------------
# configs and presets

def test_preset_names_complete():
    names = set(config.preset_names())
    base = {"cantilever-u05", "cantilever-u10", "cantilever-u20", "michell-normal",
            "michell-uniform", "michell-gumbel", "bridge-full", "bridge-kl"}
    assert base | {n + "-small" for n in base} == names


@pytest.mark.parametrize("name", config.preset_names())
def test_preset_round_trip(name):
    text = config.dumps(config.preset(name))
    assert config.dumps(config.loads(text)) == text


def test_preset_contents():
    c = config.preset("cantilever-u10")
    assert all(l["distribution"] == {"kind": "uniform", "lo": 0.9, "hi": 1.1}
               for l in c["load_model"]["loads"])
    assert c["mesh"]["n_elements"] == 7200
    m = config.preset("michell-normal")
    assert all(l["distribution"] == {"kind": "normal", "mean": -90.0, "std": 10.0}
               for l in m["load_model"]["loads"])
    b = config.preset("bridge-kl")
    assert b["load_model"]["l_corr"] == 120.0 and b["load_model"]["nu_kl"] == 7
    small = config.preset("bridge-kl-small")
    assert small["mesh"]["n_elements"] == 2500
    assert small["stochastic"]["nodes_per_dim"] == 3


def test_unknown_preset():
    with pytest.raises(KeyError):
        config.preset("truss")


@pytest.mark.parametrize("mutate, path", [
    (lambda c: c.__setitem__("volume_fraction", 0.0), "$.volume_fraction"),
    (lambda c: c["mesh"].__setitem__("colour", "red"), "$.mesh"),
    (lambda c: c["domain"]["regions"][0].__setitem__("kind", "circle"),
     "$.domain.regions[0].kind"),
    (lambda c: c["stochastic"].__setitem__("mode", "sparse"), "$.stochastic.mode"),
])
def test_validation_reports_json_path(mutate, path):
    cfg = config.preset("cantilever-u05")
    mutate(cfg)
    with pytest.raises(config.ConfigError) as exc:
        config.validate(cfg)
    assert exc.value.path == path


def test_non_finite_rejected():
    cfg = config.preset("cantilever-u05")
    cfg["filter_radius"] = float("inf")
    with pytest.raises(config.ConfigError, match=r"\$\.filter_radius"):
        config.validate(cfg)


def test_malformed_json_reports_position():
    with pytest.raises(config.ConfigError, match="line 2 column"):
        config.loads('{\n  "schema": }')


# --------------------------------------------------------------------------
# commands

def test_presets_command(capsys, tmp_path):
    assert main(["presets"]) == 0
    assert "bridge-kl-small" in capsys.readouterr().out.split()
    assert main(["presets", "michell-gumbel"]) == 0
    out = capsys.readouterr().out
    assert out == config.dumps(config.preset("michell-gumbel"))
    assert main(["presets", "michell-gumbel", "--out", str(tmp_path / "m.json")]) == 0
    assert (tmp_path / "m.json").read_text() == out


def test_mesh_command_unit_square(capsys, tmp_path):
    cfg = unit_square_config(tmp_path)
    assert main(["mesh", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert re.search(r"elements\s+1\b", out)
    assert re.search(r"area\s+1\b", out)
    assert load_mesh(tmp_path / "o" / "mesh.txt").n_elements == 1
    assert (tmp_path / "o" / "mesh.vtk").read_text().startswith("# vtk DataFile")


def test_mesh_command_json(capsys, tmp_path):
    cfg = small_config(tmp_path)
    assert main(["mesh", "--config", str(cfg), "--out", str(tmp_path), "--json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["n_elements"] == 120 and rec["area"] == pytest.approx(1800.0)


def test_bad_config_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "polyrto/1",')
    assert main(["mesh", "--config", str(bad)]) == 1
    err = capsys.readouterr()
    assert err.out == "" and "malformed JSON" in err.err
    cfg = json.loads(small_config(tmp_path).read_text())
    cfg["volume_fraction"] = 0
    bad.write_text(json.dumps(cfg))
    assert main(["optimize", "--config", str(bad)]) == 1
    assert "$.volume_fraction" in capsys.readouterr().err
    assert main(["mesh", "--config", str(tmp_path / "missing.json")]) == 1


def test_threads_flag_validation(capsys, tmp_path):
    assert main(["optimize", "--config", str(small_config(tmp_path)), "--threads", "0"]) == 1


def test_optimize_outputs(capsys, tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "run"
    code = main(["optimize", "--config", str(cfg), "--out", str(out), "--json"])
    rec = json.loads(capsys.readouterr().out)
    assert code == (0 if rec["converged"] else 2)
    on_disk = json.loads((out / "result.json").read_text())
    assert tuple(on_disk) == RESULT_KEYS and on_disk == rec
    assert rec["mode"] == "rto-gpc" and rec["fe_solves"] == 36 * rec["iterations"]

    rows = list(csv.reader(open(out / "density.csv")))
    assert rows[0] == ["element", "density"]
    assert [int(r[0]) for r in rows[1:]] == list(range(120))
    rho = np.array([float(r[1]) for r in rows[1:]])
    assert np.all((rho >= 0) & (rho <= 1))

    svg = (out / "density.svg").read_text()
    fills = re.findall(r'<polygon [^>]*fill="rgb\((\d+),\1,\1\)"', svg)
    assert len(fills) == 120 == svg.count("<polygon")
    assert [int(f) for f in fills] == [round(255 * (1 - r)) for r in rho]
    assert "CELL_DATA 120" in (out / "density.vtk").read_text()
    hist = list(csv.reader(open(out / "history.csv")))
    assert hist[0] == ["iteration", "objective", "mu", "sigma", "volume", "max_change"]
    assert len(hist) == rec["iterations"] + 1


def test_optimize_exit_code_when_not_converged(capsys, tmp_path):
    cfg = small_config(tmp_path, optimizer={"max_iterations": 2})
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    assert json.loads((tmp_path / "r" / "result.json").read_text())["converged"] is False


def test_det_full_volume_is_solid(capsys, tmp_path):
    cfg = small_config(tmp_path, volume_fraction=1.0)
    assert main(["optimize", "--config", str(cfg), "--mode", "det", "--out",
                 str(tmp_path / "d")]) in (0, 2)
    rows = list(csv.reader(open(tmp_path / "d" / "density.csv")))[1:]
    assert all(float(r[1]) == 1.0 for r in rows)


@pytest.mark.parametrize("mode", ["rto-mc", "nonrobust-propagate"])
def test_other_modes(capsys, tmp_path, mode):
    cfg = small_config(tmp_path, stochastic={"n_mc": 200})
    main(["optimize", "--config", str(cfg), "--mode", mode, "--out", str(tmp_path / mode)])
    rec = json.loads((tmp_path / mode / "result.json").read_text())
    assert rec["mode"] == mode and rec["sigma_c"] > 0


def test_optimize_deterministic_bytes(capsys, tmp_path):
    cfg = small_config(tmp_path)
    for run in ("a", "b"):
        main(["optimize", "--config", str(cfg), "--out", str(tmp_path / run), "--no-timing"])
    for f in ("result.json", "density.csv", "history.csv", "density.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert json.loads((tmp_path / "a" / "result.json").read_text())["wall_seconds"] is None


def test_stats_command(capsys, tmp_path):
    for k, mu in enumerate((21.4, 23.6, 29.4)):
        d = tmp_path / f"case{k}"
        d.mkdir()
        rec = dict(zip(RESULT_KEYS, (mu, 1.2 + k, 1.0, "rto-gpc", 90, 3240, 12.5, True)))
        (d / "result.json").write_text(json.dumps(rec))
    files = [str(tmp_path / f"case{k}" / "result.json") for k in range(3)]
    assert main(["stats", files[0]]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[0].split() == ["case", "mode", "mu_C", "sigma_C",
                                                    "solves", "time_s"]
    assert main(["stats", *files]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4 and lines[3].split()[:3] == ["case2", "rto-gpc", "29.4"]
    assert main(["stats", "--json", *files]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["mu_c"] for r in rows] == [21.4, 23.6, 29.4]
    missing = str(tmp_path / "nope" / "result.json")
    assert main(["stats", missing]) == 1
    assert missing in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "polyrto.cli", "presets"], capture_output=True,
                         text=True, check=True)
    assert "cantilever-u05" in res.stdout
