"""Command line entry point.

    spikelab <command> [--config PATH] [--preset NAME] [--out DIR] [--seed N]
                       [--p P] [--mesh-h H]

Commands: constants, greens, mu, ansatz, landscape, verify, lift-check.
Every command writes its artifacts and a ``report.json`` to the output
directory.  Floats are serialized with 15 significant digits and keys are
sorted, so identical inputs give byte-identical reports.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
from pathlib import Path
import sys

import numpy as np

from . import config as cfgmod
from .bubble import constants
from .fem.mesh import build_mesh
from .fem.operator import MeshedOperator
from .greens import GreensError, SourceKind, regular_part
from .mu_solver import SpikeConfig, limit_mu, mu_residual, solve_mu
from .pipeline import green_data

log = logging.getLogger("spikelab")

COMMANDS = ("constants", "greens", "mu", "ansatz", "landscape", "verify", "lift-check")

TOLERANCES = {
    "newton_relative_residual": 1e-9,
    "mu_residual": 1e-12,
    "quadrature": 1e-10,
    "separated_gradient": 1e-11,
}


class StageError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# serialization

def _clean(obj):
    """Round floats to 15 significant digits and convert numpy types."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.15g}")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def fmt(x):
    return f"{float(x):.15g}"


def write_json(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(data), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# helpers

def _mesh_opts(exp):
    m = exp.raw["mesh"]
    return dict(h=float(m["h"]), grading=float(m.get("grading", 0.25)),
                mirror=bool(m.get("mirror", False)))


def _positions(exp, p):
    """Configured spike positions, or positions from the separated search."""
    if not isinstance(exp.positions, str):
        return np.asarray(exp.positions, dtype=float)
    from .reduced_energy import SeparatedObjective, boundary_extrema, find_critical_separated

    ext = [s for s, kind in boundary_extrema(exp.domain, exp.weight) if kind == "max"]
    ext += [s for s, kind in boundary_extrema(exp.domain, exp.weight) if kind == "min"]
    if len(ext) < exp.m:
        raise StageError("automatic positions need at least m boundary extrema of the weight; "
                         "give spikes.positions explicitly")
    obj = SeparatedObjective(exp.domain, exp.weight, exp.m, exp.l, p)
    cps = find_critical_separated(obj, [obj.seed(ext[: exp.m])])
    if not cps[0].converged:
        raise StageError("separated search did not converge for the automatic positions")
    return cps[0].points


def _green_op(exp, points):
    o = _mesh_opts(exp)
    centers = [(pt, o["h"] / 10) for pt in points]
    mesh = build_mesh(exp.domain, o["h"], centers, grading=o["grading"], mirror=o["mirror"])
    return MeshedOperator(mesh, exp.weight)


# ---------------------------------------------------------------------------
# commands

def cmd_constants(exp, out):
    k = constants()
    data = {"C1": k["C1"], "C2": k["C2"], "K": k["K"], "bubble_mass": k["bubble_mass"]}
    write_json(out / "constants.json", data)
    return {"constants": data}


def cmd_greens(exp, out):
    p = exp.p_values[0]
    pts = _positions(exp, p)
    op = _green_op(exp, pts)
    rows, info = [], []
    for pt, kind in zip(pts, exp.kinds):
        gd = regular_part(op, pt, kind)
        rows.append([gd.source[0], gd.source[1], kind, gd.robin, gd.robin_err, gd.residual])
        info.append({"point": gd.source, "kind": kind, "robin": gd.robin,
                     "robin_err": gd.robin_err})
    # inward normal ray from the boundary point at parameter 0
    dom = exp.domain
    x0, nu0 = dom.point(0.0), dom.normal(0.0)
    ray = [x0 - d * nu0 for d in (0.1, 0.05, 0.025)]
    h = _mesh_opts(exp)
    mesh = build_mesh(dom, h["h"], [(y, 0.002) for y in ray], grading=h["grading"])
    rop = MeshedOperator(mesh, exp.weight)
    for d, y in zip((0.1, 0.05, 0.025), ray):
        gd = regular_part(rop, y, SourceKind.INTERIOR)
        rows.append([y[0], y[1], "interior", gd.robin, gd.robin_err, gd.residual])
        info.append({"point": y, "kind": "interior", "depth": d, "robin": gd.robin,
                     "robin_minus_log": gd.robin - np.log(1 / (2 * d)) / (2 * np.pi)})
    write_csv(out / "greens.csv", ["x1", "x2", "kind", "robin", "robin_err", "residual"], rows)
    return {"greens": info}


def _setup(exp, p):
    from .pipeline import prepare

    pts = _positions(exp, p)
    o = _mesh_opts(exp)
    return prepare(exp.domain, exp.weight, pts, exp.kinds, p, h=o["h"], grading=o["grading"],
                   resolution=float(exp.raw["mesh"].get("resolution", 8.0)), mirror=o["mirror"])


def cmd_mu(exp, out):
    res = []
    for p in exp.p_values:
        pts = _positions(exp, p)
        op = _green_op(exp, pts)
        cfg = SpikeConfig(p, pts, exp.kinds)
        _, robin, G = green_data(op, cfg)
        mu = solve_mu(cfg, robin, G)
        res.append({"p": p, "points": pts, "kinds": exp.kinds, "robin": robin, "G": G,
                    "mu": mu, "mu_limit": limit_mu(cfg, robin, G), "delta": cfg.with_mu(mu).delta,
                    "residual": float(np.max(np.abs(mu_residual(cfg, mu, robin, G))))})
    write_json(out / "mu.json", {"stages": res})
    return {"mu": res}


def cmd_ansatz(exp, out):
    from .pipeline import ansatz_for

    p = exp.p_values[0]
    setup = _setup(exp, p)
    af = ansatz_for(setup)
    X = setup.op.mesh.nodes
    write_csv(out / "ansatz.csv", ["x1", "x2", "u"],
              [[x[0], x[1], u] for x, u in zip(X, af.nodal_values)])
    return {"ansatz": {"p": p, "mu": setup.cfg.mu, "delta": setup.cfg.delta,
                       "peak": float(af.nodal_values.max()), "defect": af.defect,
                       "defect_radius": af.defect_radius, "nodes": int(len(X))}}


def cmd_landscape(exp, out):
    from . import reduced_energy as re_

    seed = exp.seed
    summary = []
    if exp.regime == "clustered":
        xs = exp.raw["spikes"].get("xi_star")
        if xs is None:
            raise cfgmod.ConfigError("spikes.xi_star", "clustered regime needs xi_star")
        cache = re_.clustered_cache(exp.domain, exp.weight, xs, h=_mesh_opts(exp)["h"])
        n_starts = int(exp.raw["run"].get("multistart", 16))
        for p in exp.p_values:
            obj = re_.ClusteredObjective(exp.domain, exp.weight, exp.m, exp.l, p, xs, cache,
                                         ball=exp.raw["spikes"].get("ball"))
            r = re_.find_critical_clustered(obj, n_starts=n_starts, seed=seed)
            summary.append({"p": p, "points": r.points, "kinds": r.kinds, "value": r.value,
                            "value_initial": r.value_initial, "separation": r.separation,
                            "boundary_trapped": r.boundary_trapped,
                            "resolution_trapped": r.resolution_trapped, "seed": r.seed,
                            "start_values": r.start_values})
        rows = [[s["p"], s["separation"], s["value"], s["value_initial"]] for s in summary]
        write_csv(out / "landscape.csv", ["p", "separation", "F_max", "F_initial"], rows)
    else:
        for p in exp.p_values:
            obj = re_.SeparatedObjective(exp.domain, exp.weight, exp.m, exp.l, p)
            ext = re_.boundary_extrema(exp.domain, exp.weight)
            seeds = []
            if isinstance(exp.positions, str):
                if len(ext) >= exp.m:
                    seeds.append(obj.seed([s for s, _ in ext][: exp.m]))
            else:
                s, _ = exp.domain.project(np.asarray(exp.positions, dtype=float))
                seeds.append(obj.seed(s))
            for cp in re_.find_critical_separated(obj, seeds):
                summary.append({"p": p, "points": cp.points, "kinds": cp.kinds,
                                "s": cp.s, "t": cp.t, "value": cp.value,
                                "grad_norm": cp.grad_norm, "eigenvalues": cp.eigenvalues,
                                "classification": cp.classification,
                                "converged": cp.converged, "feasible": cp.feasible})
        # scan of a single boundary spike along the curve
        p = exp.p_values[0]
        n = int(exp.raw["run"].get("scan_points", 8))
        rows = []
        for s in np.arange(n) / n:
            x = exp.domain.point(s)[None, :]
            lp = re_.landscape_point(exp.domain, exp.weight, x, ["boundary"], p,
                                     h=_mesh_opts(exp)["h"])
            rows.append([s, x[0, 0], x[0, 1], lp.value_expansion, lp.value_quadrature])
        write_csv(out / "landscape.csv", ["s", "x1", "x2", "F_expansion", "F_quadrature"], rows)
    write_json(out / "critical_points.json", {"seed": seed, "regime": exp.regime,
                                              "critical_points": summary})
    return {"landscape": summary}


def cmd_verify(exp, out):
    from .pde_verify import continuation_in_p

    pts = _positions(exp, exp.p_values[0])
    o = _mesh_opts(exp)
    stages = continuation_in_p(exp.domain, exp.weight, pts, exp.kinds, exp.p_values,
                               h=o["h"], grading=o["grading"], mirror=o["mirror"],
                               resolution=float(exp.raw["mesh"].get("resolution", 8.0)))
    rows = []
    for st in stages:
        sol = st.solution
        rows.append({"p": st.p, "converged": sol.converged, "iters": sol.newton_iters,
                     "residual": sol.residual_norm, "mu": st.mu, "delta": st.delta,
                     "nodes": st.n_nodes,
                     "peak": [s["peak"] for s in st.metrics.get("spikes", [])],
                     "mass": [s["mass"] for s in st.metrics.get("spikes", [])],
                     "location": [s["location"] for s in st.metrics.get("spikes", [])],
                     "core_width": [s["core_width"] for s in st.metrics.get("spikes", [])],
                     "outside_sup": st.metrics.get("outside_sup"),
                     "message": sol.message})
    write_json(out / "branch.json", {"stages": rows})
    last = stages[-1].solution
    X = last.op.mesh.nodes
    write_csv(out / "solution.csv", ["x1", "x2", "u"], [[x[0], x[1], u] for x, u in zip(X, last.u)])
    if not all(r["converged"] for r in rows) or len(rows) < len(exp.p_values):
        raise StageError(f"branch truncated at p = {rows[-1]['p']}: {rows[-1]['message']}")
    return {"branch": rows}


def cmd_lift_check(exp, out):
    from .pde_verify import lift_identity_check

    rng = np.random.default_rng(exp.seed)
    x = rng.uniform(0.2, 2.0, size=(100, 2))
    fields = {
        "x1*x2": lambda y: y[..., 0] * y[..., 1],
        "sin(x1)cos(x2)": lambda y: np.sin(y[..., 0]) * np.cos(y[..., 1]),
        "exp(-|x|^2)": lambda y: np.exp(-np.sum(y * y, axis=-1)),
    }
    res = []
    for k1, k2 in ((0, 0), (1, 0), (1, 1), (2, 3)):
        for name, f in fields.items():
            r = lift_identity_check(k1, k2, f, x, p=3.0)
            res.append({"k1": k1, "k2": k2, "field": name, "max_residual": float(r.max())})
    write_json(out / "lift.json", {"seed": exp.seed, "points": 100, "checks": res})
    return {"lift": res}


HANDLERS = {
    "constants": cmd_constants,
    "greens": cmd_greens,
    "mu": cmd_mu,
    "ansatz": cmd_ansatz,
    "landscape": cmd_landscape,
    "verify": cmd_verify,
    "lift-check": cmd_lift_check,
}


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="spikelab", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="TOML experiment file")
    ap.add_argument("--preset", help="built-in experiment: " + ", ".join(sorted(cfgmod.PRESETS)))
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--seed", type=int, help="random seed for multistart searches")
    ap.add_argument("--p", type=float, help="single exponent (overrides any schedule)")
    ap.add_argument("--mesh-h", type=float, help="background mesh size")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    over = {}
    if args.out is not None:
        over["output"] = {"dir": str(args.out)}
    if args.seed is not None:
        over.setdefault("run", {})["seed"] = args.seed
    if args.p is not None:
        over.setdefault("run", {})["p"] = args.p
    if args.mesh_h is not None:
        over["mesh"] = {"h": args.mesh_h}
    try:
        raw = cfgmod.load(args.config, args.preset, over)
        if args.p is not None:
            raw["run"].pop("p_schedule", None)
        exp = cfgmod.resolve(raw)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = exp.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out}: {exc.strerror}", file=sys.stderr)
        return 2
    report = {"command": args.command, "config": exp.raw, "seed": exp.seed,
              "tolerances": TOLERANCES, "status": "ok"}
    code = 0
    try:
        report["results"] = HANDLERS[args.command](exp, out)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, GreensError, ValueError, RuntimeError) as exc:
        report["status"] = "failed"
        report["error"] = f"{type(exc).__name__}: {exc}"
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        code = 1
    write_json(out / "report.json", report)
    return code


def main():  # pragma: no cover
    sys.exit(run())
