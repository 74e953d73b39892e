"""Command-line front end: ``polyrto mesh|optimize|stats|presets``.

Data goes to stdout, diagnostics to stderr.  ``optimize`` exits 0 on
convergence and 2 when the iteration budget ran out (results are written
either way); configuration and input errors exit 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .mesh import MeshError, save_mesh, write_vtk

log = logging.getLogger("polyrto")

MODES = ("det", "rto-gpc", "rto-mc", "nonrobust-propagate")
RESULT_KEYS = ("mu_c", "sigma_c", "w", "mode", "iterations", "fe_solves", "wall_seconds",
               "converged")


# --------------------------------------------------------------------------
# Writers

def write_density_csv(path, rho):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element", "density"])
        for e, r in enumerate(rho):
            w.writerow([e, repr(float(r))])


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective", "mu", "sigma", "volume", "max_change"])
        for row in history:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def write_svg(path, mesh, rho, width_px=800):
    """One polygon per element, grey level ``1 - rho`` (black = solid)."""
    x0, y0 = mesh.nodes.min(0)
    x1, y1 = mesh.nodes.max(0)
    s = width_px / (x1 - x0)
    h = (y1 - y0) * s
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px:.0f}" height="{h:.0f}" '
             f'viewBox="0 0 {width_px:.0f} {h:.0f}">']
    for el, r in zip(mesh.elements, np.clip(rho, 0.0, 1.0)):
        xy = mesh.nodes[el]
        pts = " ".join(f"{(x - x0) * s:.3f},{(y1 - y) * s:.3f}" for x, y in xy)
        g = int(round(255 * (1.0 - r)))
        lines.append(f'<polygon points="{pts}" fill="rgb({g},{g},{g})" stroke="none"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")


def result_record(mu, sigma, w, mode, iterations, fe_solves, wall, converged, timing=True):
    return {"mu_c": float(mu), "sigma_c": float(sigma), "w": float(w), "mode": mode,
            "iterations": int(iterations), "fe_solves": int(fe_solves),
            "wall_seconds": float(wall) if timing else None, "converged": bool(converged)}


# --------------------------------------------------------------------------
# Commands

def _out_dir(args, cfg):
    d = Path(args.out or cfg.get("output", {}).get("dir", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_mesh(args):
    cfg = cfgmod.load(args.config)
    mesh = cfgmod.build_mesh(cfg)
    out = _out_dir(args, cfg)
    save_mesh(mesh, out / "mesh.txt")
    write_vtk(mesh, out / "mesh.vtk")
    area = float(mesh.areas.sum())
    if args.json:
        print(json.dumps({"n_elements": mesh.n_elements, "area": area}))
    else:
        print(f"elements {mesh.n_elements}")
        print(f"area     {area:.10g}")
    return 0


def cmd_optimize(args):
    from . import rto
    from .threads import limit_threads

    cfg = cfgmod.load(args.config)
    mode = args.mode or ("rto-mc" if cfg["stochastic"]["mode"] == "mc" else "rto-gpc")
    with limit_threads(args.threads):
        problem = cfgmod.build_problem(cfg, mode="mc" if mode == "rto-mc" else "gpc",
                                       threads=args.threads or 1)
        log.info("mesh: %d elements; mode %s", problem.mesh.n_elements, mode)
        if mode == "det":
            res, wall = rto.run_deterministic(problem)
            rec = result_record(res.last["mu"], 0.0, problem.weight, mode, res.iterations,
                                res.iterations, wall, res.converged, not args.no_timing)
            rho, history = res.physical, [(it, f, f, 0.0, v, ch) for it, f, v, ch in res.history]
        else:
            if mode == "nonrobust-propagate":
                res = rto.run_nonrobust_then_propagate(problem)
            else:
                res = rto.run_rto(problem)
            rec = result_record(res.mu, res.sigma, problem.weight, mode, res.iterations,
                                res.fe_solves, res.wall_seconds, res.converged,
                                not args.no_timing)
            rho, history = res.densities, res.history
    out = _out_dir(args, cfg)
    (out / "result.json").write_text(json.dumps(rec, indent=2) + "\n")
    write_density_csv(out / "density.csv", rho)
    write_history_csv(out / "history.csv", history)
    write_vtk(problem.mesh, out / "density.vtk", {"density": rho})
    write_svg(out / "density.svg", problem.mesh, rho)
    if args.json:
        print(json.dumps(rec))
    else:
        print(f"mode {mode}: mu_c={rec['mu_c']:.6g} sigma_c={rec['sigma_c']:.6g} "
              f"iterations={rec['iterations']} converged={rec['converged']}")
    return 0 if rec["converged"] else 2


def cmd_stats(args):
    rows = []
    for p in args.results:
        path = Path(p)
        if not path.is_file():
            raise FileNotFoundError(f"result file not found: {path}")
        rec = json.loads(path.read_text())
        missing = [k for k in RESULT_KEYS if k not in rec]
        if missing:
            raise ValueError(f"{path}: missing keys {', '.join(missing)}")
        case = path.parent.name if path.name == "result.json" else path.stem
        rows.append({"case": case, **{k: rec[k] for k in RESULT_KEYS}})
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    header = ("case", "mode", "mu_C", "sigma_C", "solves", "time_s")
    table = [(r["case"], r["mode"], f"{r['mu_c']:.4g}", f"{r['sigma_c']:.4g}",
              str(r["fe_solves"]),
              "-" if r["wall_seconds"] is None else f"{r['wall_seconds']:.1f}") for r in rows]
    widths = [max(len(h), *(len(t[i]) for t in table)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    for t in table:
        print("  ".join(c.ljust(w) for c, w in zip(t, widths)).rstrip())
    return 0


def cmd_presets(args):
    if not args.name:
        print("\n".join(cfgmod.preset_names()))
        return 0
    text = cfgmod.dumps(cfgmod.preset(args.name))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="polyrto", description="Robust topology optimization "
                                "under load uncertainty on polygonal meshes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="generate the mesh of a problem config")
    m.add_argument("--config", required=True)
    m.add_argument("--out")
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_mesh)

    o = sub.add_parser("optimize", help="run a deterministic or robust optimization")
    o.add_argument("--config", required=True)
    o.add_argument("--mode", choices=MODES)
    o.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    o.add_argument("--out")
    o.add_argument("--json", action="store_true")
    o.add_argument("--no-timing", action="store_true",
                   help="write wall_seconds as null so repeated runs are byte-identical")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("stats", help="tabulate result files")
    s.add_argument("results", nargs="+")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    r = sub.add_parser("presets", help="list presets or print one as a config")
    r.add_argument("name", nargs="?")
    r.add_argument("--out")
    r.set_defaults(func=cmd_presets)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (FileNotFoundError, KeyError, ValueError, MeshError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
