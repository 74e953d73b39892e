"""JSON problem configs: schema, presets and conversion into an ``RtoProblem``."""
from __future__ import annotations

import copy
import json
import math

import jsonschema

from . import stochastic as st
from .fem import Material, SimpParams
from .mesh import Domain2D, Region, generate_cvt_mesh, load_mesh
from .rto import AngleLoads, FieldLoads, MagnitudeLoads, RtoProblem
from .topopt import OptimizerConfig

SCHEMA_ID = "polyrto/1"


class ConfigError(ValueError):
    """Invalid config; ``path`` is the JSON path of the offending entry."""

    def __init__(self, path, msg):
        self.path = path
        super().__init__(f"{path}: {msg}")


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_distribution = {"oneOf": [
    _obj({"kind": {"const": "uniform"}, "lo": _num, "hi": _num}, ["kind", "lo", "hi"]),
    _obj({"kind": {"enum": ["normal", "gumbel"]}, "mean": _num, "std": _pos},
         ["kind", "mean", "std"]),
]}

SCHEMA = _obj({
    "schema": {"const": SCHEMA_ID},
    "name": {"type": "string"},
    "domain": _obj({
        "width": _pos, "height": _pos,
        "regions": {"type": "array", "items": _obj({
            "name": {"type": "string"},
            "kind": {"enum": ["segment", "point"]},
            "coords": {"type": "array", "items": _num},
            "tol": _pos}, ["name", "kind", "coords"])},
    }, ["width", "height", "regions"]),
    "mesh": _obj({"n_elements": {"type": "integer", "minimum": 1},
                  "seed": _int,
                  "lloyd_iterations": {"type": "integer", "minimum": 0},
                  "file": {"type": "string"}}, ["n_elements", "seed", "lloyd_iterations"]),
    "material": _obj({"E0": _pos, "nu": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                      "Emin": _pos, "plane": {"enum": ["stress", "strain"]}}),
    "bcs": _obj({"fixed": {"type": "object", "minProperties": 1, "additionalProperties": {
        "type": "array", "items": {"enum": ["x", "y"]}, "minItems": 1}}}, ["fixed"]),
    "load_model": {"oneOf": [
        _obj({"kind": {"const": "random_magnitudes"},
              "loads": {"type": "array", "minItems": 1, "items": _obj({
                  "region": {"type": "string"}, "direction": _point,
                  "distribution": _distribution}, ["region", "direction", "distribution"])}},
             ["kind", "loads"]),
        _obj({"kind": {"const": "random_angles"},
              "loads": {"type": "array", "minItems": 1, "items": _obj({
                  "region": {"type": "string"}, "magnitude": _num,
                  "distribution": _distribution}, ["region", "magnitude", "distribution"])}},
             ["kind", "loads"]),
        _obj({"kind": {"const": "random_field"}, "region": {"type": "string"},
              "mean": _num, "std": _pos,
              "correlation": {"enum": ["constant", "exponential"]},
              "l_corr": _pos, "nu_kl": {"type": "integer", "minimum": 1},
              "tau": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
              "n_grid": {"type": "integer", "minimum": 2},
              "direction": _point,
              "scale": {"enum": ["variance", "std"]}},
             ["kind", "region", "mean", "std", "correlation"]),
    ]},
    "simp": _obj({"penal": {"type": "number", "minimum": 1},
                  "continuation": {"type": "array", "items": {
                      "type": "array", "items": _num, "minItems": 2, "maxItems": 2}}}),
    "filter_radius": {"type": "number", "minimum": 0},
    "volume_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "weight_w": {"type": "number", "minimum": 0},
    "stochastic": _obj({"p_pc": {"type": "integer", "minimum": 0},
                        "nodes_per_dim": {"type": "integer", "minimum": 1},
                        "mode": {"enum": ["gpc", "mc"]},
                        "n_mc": {"type": "integer", "minimum": 2},
                        "seed": _int}, ["p_pc", "mode"]),
    "optimizer": _obj({"kind": {"enum": ["OC", "MMA"]},
                       "move": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                       "max_iterations": {"type": "integer", "minimum": 1},
                       "tolerance": _pos, "asyinit": _pos, "asyincr": _pos, "asydecr": _pos}),
    "passive": _obj({"top_rows": {"type": "integer", "minimum": 0}}),
    "output": _obj({"dir": {"type": "string"}}),
}, ["schema", "domain", "mesh", "bcs", "load_model", "volume_fraction", "stochastic"])


def _json_path(err):
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate(cfg: dict) -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        # oneOf failures are vague; report the most specific sub-error
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_json_path(err), err.message)
    _check_finite(cfg, "$")
    return cfg


def _check_finite(node, path):
    if isinstance(node, dict):
        for k, v in node.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(node, list):
        for i, v in enumerate(node):
            _check_finite(v, f"{path}[{i}]")
    elif isinstance(node, float) and not math.isfinite(node):
        raise ConfigError(path, "value must be finite")


def loads(text: str) -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"malformed JSON at line {exc.lineno} column {exc.colno}: "
                               f"{exc.msg}") from None
    return validate(cfg)


def load(path) -> dict:
    with open(path) as fh:
        return loads(fh.read())


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Conversion

def _spec(d, meaning=""):
    if d["kind"] == "uniform":
        return st.RandomVariableSpec.uniform(d["lo"], d["hi"], meaning)
    return getattr(st.RandomVariableSpec, d["kind"])(d["mean"], d["std"], meaning)


def build_domain(cfg) -> Domain2D:
    dom = cfg["domain"]
    regions = [Region(r["name"], r["kind"], tuple(r["coords"]), r.get("tol"))
               for r in dom["regions"]]
    return Domain2D.rectangle(dom["width"], dom["height"], regions)


def build_mesh(cfg, domain=None):
    domain = domain or build_domain(cfg)
    m = cfg["mesh"]
    if "file" in m:
        from .mesh import tag_boundary
        return tag_boundary(load_mesh(m["file"]), domain)
    return generate_cvt_mesh(domain, m["n_elements"], m["seed"], m["lloyd_iterations"])


def build_load_model(cfg):
    lm = cfg["load_model"]
    if lm["kind"] == "random_magnitudes":
        return MagnitudeLoads(tuple(l["region"] for l in lm["loads"]),
                              tuple(tuple(l["direction"]) for l in lm["loads"]),
                              tuple(_spec(l["distribution"], "force") for l in lm["loads"]))
    if lm["kind"] == "random_angles":
        return AngleLoads(tuple(l["region"] for l in lm["loads"]),
                          tuple(float(l["magnitude"]) for l in lm["loads"]),
                          tuple(_spec(l["distribution"], "angle") for l in lm["loads"]))
    reg = next((r for r in cfg["domain"]["regions"] if r["name"] == lm["region"]), None)
    if reg is None or reg["kind"] != "segment":
        raise ConfigError("$.load_model.region", "random field needs a segment region")
    x0, _, x1, _ = reg["coords"]
    if lm["correlation"] == "exponential" and "l_corr" not in lm:
        raise ConfigError("$.load_model.l_corr", "exponential correlation needs l_corr")
    return FieldLoads(lm["region"], lm["mean"], lm["std"], lm["correlation"],
                      lm.get("l_corr"), lm.get("nu_kl"), lm.get("tau", 0.9),
                      lm.get("n_grid", 200), (min(x0, x1), max(x0, x1)),
                      tuple(lm.get("direction", (0.0, -1.0))), lm.get("scale", "variance"))


def build_problem(cfg, mode=None, mesh=None, threads=1) -> RtoProblem:
    """Problem from a validated config; ``mode`` is ``gpc`` or ``mc`` if given."""
    domain = build_domain(cfg)
    mesh = mesh if mesh is not None else build_mesh(cfg, domain)
    mat = Material(**cfg.get("material", {}))
    s = cfg.get("simp", {})
    simp = SimpParams(s.get("penal", 3.0), mat.eps,
                      tuple(tuple(c) for c in s.get("continuation", ())))
    sto = cfg["stochastic"]
    return RtoProblem(
        mesh=mesh, domain=domain,
        fixed={k: tuple(v) for k, v in cfg["bcs"]["fixed"].items()},
        load_model=build_load_model(cfg), material=mat, simp=simp,
        filter_radius=cfg.get("filter_radius", 1.5),
        volume_fraction=cfg["volume_fraction"], weight=cfg.get("weight_w", 1.0),
        p_pc=sto["p_pc"], nodes_per_dim=sto.get("nodes_per_dim"),
        mode=mode or sto["mode"], n_mc=sto.get("n_mc", 10_000), seed=sto.get("seed", 0),
        optimizer=OptimizerConfig(**cfg.get("optimizer", {})),
        passive_top_rows=cfg.get("passive", {}).get("top_rows", 0),
        threads=threads)


# --------------------------------------------------------------------------
# Presets

def _uniform(lo, hi):
    return {"kind": "uniform", "lo": lo, "hi": hi}


def _common(name, width, height, regions, n, fixed, load_model, radius, stochastic):
    return {
        "schema": SCHEMA_ID, "name": name,
        "domain": {"width": width, "height": height, "regions": regions},
        "mesh": {"n_elements": n, "seed": 1, "lloyd_iterations": 100},
        "material": {"E0": 1.0, "nu": 0.3, "Emin": 1e-9, "plane": "stress"},
        "bcs": {"fixed": fixed},
        "load_model": load_model,
        "simp": {"penal": 3.0, "continuation": []},
        "filter_radius": radius, "volume_fraction": 0.3, "weight_w": 1.0,
        "stochastic": stochastic,
        "optimizer": {"kind": "MMA", "move": 0.2, "max_iterations": 150, "tolerance": 0.01},
        "passive": {"top_rows": 0},
        "output": {"dir": name},
    }


def _cantilever(name, lo, hi):
    regions = [{"name": "left", "kind": "segment", "coords": [0, 0, 0, 30]},
               {"name": "top_right", "kind": "point", "coords": [60, 30]},
               {"name": "bottom_right", "kind": "point", "coords": [60, 0]}]
    # equal magnitudes in opposite directions at the two right corners
    lm = {"kind": "random_magnitudes", "loads": [
        {"region": "top_right", "direction": [0, -1], "distribution": _uniform(lo, hi)},
        {"region": "bottom_right", "direction": [0, 1], "distribution": _uniform(lo, hi)}]}
    sto = {"p_pc": 5, "nodes_per_dim": 6, "mode": "gpc", "n_mc": 10000, "seed": 2024}
    return _common(name, 60, 30, regions, 7200, {"left": ["x", "y"]}, lm, 1.5, sto)


def _michell(name, dist):
    xs = (30, 60, 90)
    regions = [{"name": "left_support", "kind": "point", "coords": [0, 0]},
               {"name": "right_support", "kind": "point", "coords": [120, 0]}]
    regions += [{"name": f"load{k + 1}", "kind": "point", "coords": [x, 0]}
                for k, x in enumerate(xs)]
    lm = {"kind": "random_angles", "loads": [
        {"region": f"load{k + 1}", "magnitude": m, "distribution": dist}
        for k, m in enumerate((1.0, 2.0, 1.0))]}
    sto = {"p_pc": 5, "nodes_per_dim": 6, "mode": "gpc", "n_mc": 10000, "seed": 2024}
    fixed = {"left_support": ["x", "y"], "right_support": ["x", "y"]}
    return _common(name, 120, 50, regions, 12000, fixed, lm, 1.5, sto)


BRIDGE_SPAN, BRIDGE_HEIGHT = 120, 40


def _bridge(name, correlation):
    W, H = BRIDGE_SPAN, BRIDGE_HEIGHT
    regions = [{"name": "deck", "kind": "segment", "coords": [0, H, W, H]},
               {"name": "left_support", "kind": "point", "coords": [0, 0]},
               {"name": "right_support", "kind": "point", "coords": [W, 0]}]
    lm = {"kind": "random_field", "region": "deck", "mean": 1.0, "std": 0.3,
          "correlation": correlation, "n_grid": 200, "direction": [0, -1], "scale": "variance"}
    if correlation == "exponential":
        lm.update(l_corr=120.0, nu_kl=7, tau=0.9)
        sto = {"p_pc": 5, "nodes_per_dim": 6, "mode": "gpc", "n_mc": 10000, "seed": 2024}
    else:
        sto = {"p_pc": 5, "nodes_per_dim": 6, "mode": "gpc", "n_mc": 10000, "seed": 2024}
    fixed = {"left_support": ["x", "y"], "right_support": ["x", "y"]}
    cfg = _common(name, W, H, regions, 10000, fixed, lm, 3.0, sto)
    cfg["passive"]["top_rows"] = 2
    return cfg


def _small(cfg):
    """Reduced-scale twin: a quarter of the elements (and a reduced 7-D grid)."""
    cfg = copy.deepcopy(cfg)
    cfg["name"] += "-small"
    cfg["output"]["dir"] = cfg["name"]
    cfg["mesh"]["n_elements"] //= 4
    cfg["mesh"]["lloyd_iterations"] = 50
    lm = cfg["load_model"]
    if lm["kind"] == "random_field" and lm["correlation"] == "exponential":
        # 3 nodes per dimension supports total degree 2 at most
        cfg["stochastic"].update(p_pc=2, nodes_per_dim=3)
    return cfg


def _base_presets():
    return {
        "cantilever-u05": _cantilever("cantilever-u05", 0.95, 1.05),
        "cantilever-u10": _cantilever("cantilever-u10", 0.9, 1.1),
        "cantilever-u20": _cantilever("cantilever-u20", 0.8, 1.2),
        "michell-normal": _michell("michell-normal", {"kind": "normal", "mean": -90.0, "std": 10.0}),
        "michell-uniform": _michell("michell-uniform", _uniform(-100.0, -80.0)),
        "michell-gumbel": _michell("michell-gumbel", {"kind": "gumbel", "mean": -90.0, "std": 10.0}),
        "bridge-full": _bridge("bridge-full", "constant"),
        "bridge-kl": _bridge("bridge-kl", "exponential"),
    }


def preset_names():
    names = []
    for n in _base_presets():
        names += [n, n + "-small"]
    return names


def preset(name: str) -> dict:
    base = _base_presets()
    if name in base:
        return validate(base[name])
    if name.endswith("-small") and name[:-6] in base:
        return validate(_small(base[name[:-6]]))
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")
