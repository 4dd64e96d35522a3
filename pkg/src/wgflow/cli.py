"""Command-line interface: configuration, orchestration and serialization.

Subcommands: simulate, project, validate-radial, bounds-1d, heat.  Exit
codes: 0 success, 1 numerical failure, 2 configuration error.  All outputs
are deterministic given the config (and its seed).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["crowd", "entropy"]},
        "domain": {
            "oneOf": [
                {"enum": ["radial", "bimodal", "square"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "preset": {"enum": ["radial", "bimodal", "square"]},
                        "R": {"type": "number", "exclusiveMinimum": 0},
                        "alpha": {"type": "number", "exclusiveMinimum": 0},
                        "side": {"type": "number", "exclusiveMinimum": 0},
                        "origin": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                        "arc_segments": {"type": "integer", "minimum": 8},
                        "polygons": {
                            "type": "array",
                            "items": {
                                "type": "array",
                                "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                                "minItems": 3,
                            },
                        },
                    },
                },
            ]
        },
        "h": {"type": ["number", "string"]},
        "n_random": {"type": "integer", "minimum": 1},
        "random_box": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            "minItems": 2,
            "maxItems": 2,
        },
        "positions": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
        "init_region": {
            "oneOf": [
                {"enum": ["domain", "left-room"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "disk": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    },
                },
            ]
        },
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "T": {"type": "number", "minimum": 0},
        "potential": {
            "oneOf": [
                {"enum": ["zero", "norm", "quadratic", "eikonal"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["zero", "norm", "quadratic", "eikonal"]},
                        "targets": {
                            "type": "array",
                            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                        },
                        "h_fmm": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            ]
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["none", "quadratic", "gaussian"]},
                "strength": {"type": "number"},
                "scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "snapshot_stride": {"type": "integer", "minimum": 1},
        "export_cells": {"type": "boolean"},
        "boundary_policy": {"enum": ["project_back", "error"]},
    },
}

DEFAULTS = {
    "mode": "crowd",
    "domain": "square",
    "seed": 0,
    "snapshot_stride": 1,
    "export_cells": False,
    "boundary_policy": "project_back",
    "potential": "zero",
}

ALPHA = 2.0 / math.sqrt(math.pi)


def parse_rational(text):
    """'1/20' or '0.05' -> float."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def parse_config(path):
    """Load, schema-validate and normalize a run configuration file."""
    from .errors import SchemaError

    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise SchemaError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}")
    return normalize_config(raw)


def normalize_config(raw):
    from jsonschema import Draft202012Validator

    from .errors import SchemaError

    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise SchemaError(e.message, key_path="/".join(str(p) for p in e.path))
    cfg = dict(DEFAULTS)
    cfg.update(raw)
    if "h" in cfg:
        cfg["h"] = parse_rational(cfg["h"])
        cfg.setdefault("tau", cfg["h"] / 2.0)
        cfg.setdefault("eps", cfg["h"])
    if "tau" not in cfg or "eps" not in cfg:
        raise SchemaError("tau and eps are required unless h is given")
    cfg.setdefault("T", 1.0)
    return cfg


def build_domain(spec):
    from . import geometry as geo

    if isinstance(spec, str):
        spec = {"preset": spec}
    if "polygons" in spec:
        return geo.DomainGeometry(spec["polygons"]), spec
    preset = spec.get("preset")
    if preset == "radial":
        return geo.radial_sector_domain(R=spec.get("R", 2.0), arc_segments=spec.get("arc_segments", 256)), spec
    if preset == "bimodal":
        return geo.bimodal_domain(alpha=spec.get("alpha", ALPHA)), spec
    if preset == "square":
        return geo.square_domain(side=spec.get("side", 2.0), origin=tuple(spec.get("origin", (0.0, 0.0)))), spec
    from .errors import SchemaError

    raise SchemaError(f"unknown domain preset {preset!r}", key_path="domain")


def build_initial_positions(cfg, dom):
    import numpy as np

    from . import dynamics
    from .errors import SchemaError

    if "positions" in cfg:
        return np.asarray(cfg["positions"], dtype=float)
    if "n_random" in cfg:
        rng = np.random.default_rng(cfg["seed"])
        box = cfg.get("random_box")
        if box is not None:
            (x0, y0), (x1, y1) = box
            return np.column_stack(
                [x0 + (x1 - x0) * rng.random(cfg["n_random"]), y0 + (y1 - y0) * rng.random(cfg["n_random"])]
            )
        return dom.sample(rng, cfg["n_random"])
    if "h" not in cfg:
        raise SchemaError("need one of: positions, n_random, h")
    region = cfg.get("init_region", "domain")
    spec = cfg["domain"] if isinstance(cfg["domain"], dict) else {"preset": cfg["domain"]}
    if isinstance(region, dict) and "disk" in region:
        cx, cy, r = region["disk"]
        region_obj = dynamics.ExactDisk((cx, cy), r)
    elif region == "left-room":
        a = spec.get("alpha", ALPHA)
        from . import geometry as geo

        region_obj = geo.rectangle_domain(0.0, 0.0, a, a)
    elif spec.get("preset") == "radial":
        region_obj = dynamics.ExactSector(spec.get("R", 2.0))
    else:
        region_obj = dom
    return dynamics.grid_initialization(region_obj, cfg["h"])


def build_potential(cfg, dom):
    from . import potentials
    from .errors import SchemaError

    spec = cfg["potential"]
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "zero")
    if kind != "eikonal":
        return potentials.PotentialSpec(kind=kind).build()
    targets = spec.get("targets")
    if targets is None:
        dom_spec = cfg["domain"] if isinstance(cfg["domain"], dict) else {"preset": cfg["domain"]}
        if dom_spec.get("preset") != "bimodal":
            raise SchemaError("eikonal potential needs explicit targets outside the bimodal preset", "potential")
        a = dom_spec.get("alpha", ALPHA)
        targets = [[7 * a / 3, a], [7 * a / 3, 0.0]]
    h_fmm = spec.get("h_fmm", cfg.get("h", 2 * cfg["eps"]) / 2.0)
    return potentials.PotentialSpec(kind="eikonal", targets=targets, h_fmm=h_fmm, walls=dom).build()


def build_kernel(cfg):
    from . import dynamics

    k = cfg.get("kernel")
    if not k:
        return None
    return dynamics.KernelSpec(kind=k.get("kind", "none"), strength=k.get("strength", 0.0), scale=k.get("scale", 1.0))


# ---------------------------------------------------------------------------
# snapshot serialization
# ---------------------------------------------------------------------------


def region_to_json(region):
    loops = []
    for loop in region.loops:
        edges = []
        for e in loop:
            if hasattr(e, "tag"):
                edges.append({"type": "seg", "p": list(e.p0), "q": list(e.p1), "tag": int(e.tag)})
            else:
                edges.append(
                    {"type": "arc", "center": list(e.center), "radius": e.radius, "a0": e.a0, "a1": e.a1}
                )
        loops.append(edges)
    return {"owner": region.owner, "loops": loops}


def snapshot_to_json(snap, cfg, cells=None, weights=None, pressure=None):
    doc = {
        "t": snap.t,
        "mode": cfg.mode,
        "eps": cfg.eps,
        "positions": snap.positions.tolist(),
        "psi": snap.psi.tolist(),
        "energy": snap.energy,
        "speeds": snap.speeds.tolist(),
    }
    if snap.barycenters is not None:
        doc["barycenters"] = snap.barycenters.tolist()
    if cells is not None:
        doc["cells"] = [region_to_json(c) for c in cells]
    if weights is not None:
        doc["weights"] = list(map(float, weights))
    if pressure is not None:
        doc["pressure"] = list(map(float, pressure))
    return doc


def write_snapshot(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f)


def read_snapshot(path):
    with open(path) as f:
        return json.load(f)


def gaussian_cell_weights(snap, eps):
    """Figure coloring weights exp(-(|beta_i - x_i|^2 + psi_i)/(2 eps))."""
    import numpy as np

    d2 = ((snap.barycenters - snap.positions) ** 2).sum(axis=1)
    return np.exp(-(d2 + snap.psi) / (2.0 * eps))


def _pressure_at_particles(snap, cfg):
    """Discrete pressure proxy at the particle positions: -phi/eps in crowd
    mode, -phi/(2 eps) (= log sigma) in entropy mode."""
    import numpy as np

    X = snap.positions
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2) - snap.psi[None, :]
    phi = d2.min(axis=1)
    if cfg.mode == "crowd":
        return -np.minimum(phi, 0.0) / cfg.eps
    return -phi / (2.0 * cfg.eps)


def export_trajectory(traj, cfg, out_dir, dom=None, export_cells=False):
    """Write snapshot JSON files plus trajectories.csv."""
    import numpy as np

    from . import geometry as geo

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for k, snap in enumerate(traj.snapshots):
        cells = None
        weights = None
        pressure = None
        if export_cells and dom is not None:
            particles = geo.ParticleSet(snap.positions, eps=cfg.eps)
            cells = geo.build_power_diagram(particles, snap.psi, dom)
            if cfg.mode == "crowd":
                radii = np.sqrt(np.maximum(snap.psi, 0.0))
                cells = [
                    geo.clip_with_disk(c, snap.positions[c.owner], radii[c.owner]) for c in cells
                ]
            else:
                weights = gaussian_cell_weights(snap, cfg.eps)
            pressure = _pressure_at_particles(snap, cfg)
        doc = snapshot_to_json(snap, cfg, cells=cells, weights=weights, pressure=pressure)
        path = os.path.join(out_dir, f"snapshot_{k:06d}.json")
        write_snapshot(path, doc)
        paths.append(path)
    with open(os.path.join(out_dir, "trajectories.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "particle", "x", "y"])
        for snap in traj.snapshots:
            for i, (x, y) in enumerate(snap.positions):
                w.writerow([repr(snap.t), i, repr(float(x)), repr(float(y))])
    manifest = {
        "config_hash": traj.config_hash,
        "snapshots": [os.path.basename(p) for p in paths],
        "failure": traj.failure,
        "min_gap": traj.min_gap if np.isfinite(traj.min_gap) else None,
        "projected_counts": traj.projected_counts,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    import numpy as np

    from . import dynamics, validation

    cfg_raw = parse_config(args.config)
    if args.h is not None:
        cfg_raw["h"] = parse_rational(args.h)
        cfg_raw["tau"] = cfg_raw["h"] / 2.0
        cfg_raw["eps"] = cfg_raw["h"]
    if args.export_cells:
        cfg_raw["export_cells"] = True
    out_dir = args.output or cfg_raw.get("output_dir", "out")
    dom, dom_spec = build_domain(cfg_raw["domain"])
    X0 = build_initial_positions(cfg_raw, dom)
    cfg = dynamics.FlowConfig(
        mode=cfg_raw["mode"],
        tau=cfg_raw["tau"],
        eps=cfg_raw["eps"],
        T=cfg_raw["T"],
        potential=build_potential(cfg_raw, dom),
        kernel=build_kernel(cfg_raw),
        boundary_policy=cfg_raw["boundary_policy"],
        snapshot_stride=cfg_raw["snapshot_stride"],
    )
    bimodal = dom_spec.get("preset") == "bimodal" or cfg_raw["domain"] == "bimodal"
    right_room = None
    if bimodal:
        a = dom_spec.get("alpha", ALPHA)
        from . import geometry as geo

        right_room = geo.rectangle_domain(4 * a / 3, 0.0, 7 * a / 3, a)
    traj = dynamics.run_simulation(X0, cfg, dom, entry_region=right_room)
    export_trajectory(traj, cfg, out_dir, dom=dom, export_cells=cfg_raw["export_cells"])
    if bimodal:
        # exit times tracked at every step (not just stored snapshots)
        tmap = traj.entry_times if traj.entry_times is not None else validation.timeout_map(traj, right_room)
        with open(os.path.join(out_dir, "timeout.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["particle", "x0", "y0", "timeout"])
            X0s = traj.snapshots[0].positions
            for i, t in enumerate(tmap):
                w.writerow([i, repr(float(X0s[i, 0])), repr(float(X0s[i, 1])), repr(float(t))])
    if traj.failure:
        print(f"simulation aborted: {traj.failure}", file=sys.stderr)
        return 1
    print(f"wrote {len(traj.snapshots)} snapshots to {out_dir}")
    return 0


def cmd_project(args):
    import numpy as np

    from . import geometry as geo, ot_solver

    cfg_raw = parse_config(args.config)
    out_dir = args.output or cfg_raw.get("output_dir", "out")
    os.makedirs(out_dir, exist_ok=True)
    dom, _ = build_domain(cfg_raw["domain"])
    X = build_initial_positions(cfg_raw, dom)
    res = ot_solver.moreau_yosida(X, dom, cfg_raw["eps"], mode=cfg_raw["mode"])
    dual = res.dual
    particles = geo.ParticleSet(X, eps=cfg_raw["eps"])
    cells = geo.build_power_diagram(particles, dual.psi, dom)
    if cfg_raw["mode"] == "crowd":
        radii = np.sqrt(np.maximum(dual.psi, 0.0))
        regions = [geo.clip_with_disk(c, X[c.owner], radii[c.owner]) for c in cells]
        weights = None
    else:
        regions = cells
        import types

        snap = types.SimpleNamespace(barycenters=dual.barycenters, positions=X, psi=dual.psi)
        weights = gaussian_cell_weights(snap, cfg_raw["eps"])
    doc = {
        "t": 0.0,
        "mode": cfg_raw["mode"],
        "eps": cfg_raw["eps"],
        "positions": X.tolist(),
        "psi": dual.psi.tolist(),
        "energy": res.value,
        "speeds": np.hypot(res.force[:, 0], res.force[:, 1]).tolist(),
        "barycenters": dual.barycenters.tolist(),
        "force": res.force.tolist(),
        "cells": [region_to_json(c) for c in regions],
    }
    if weights is not None:
        doc["weights"] = list(map(float, weights))
    path = os.path.join(out_dir, "projection.json")
    write_snapshot(path, doc)
    print(
        f"projection: value={res.value:.6g} residual={dual.residual:.2e} "
        f"duality_gap={dual.duality_gap:.2e} -> {path}"
    )
    return 0


def cmd_validate_radial(args):
    from . import validation

    hs = [parse_rational(s) for s in (args.h or ["1/20", "1/30", "1/40", "1/50"])]
    out_dir = args.output or "out"
    os.makedirs(out_dir, exist_ok=True)
    report = validation.error_table(hs, T=args.T)
    path = os.path.join(out_dir, "error_table.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["h", "err_h", "runtime_s", "n_particles"])
        for h, err, rt, n in report.rows():
            w.writerow([repr(float(h)), repr(float(err)), repr(float(rt)), n])
    for h, err, rt, n in report.rows():
        print(f"h={h:.6g}  N={n}  err_h={err:.4e}  ({rt:.1f}s)")
    print(f"wrote {path}")
    return 0


def cmd_bounds_1d(args):
    import numpy as np

    from . import oned

    rng = np.random.default_rng(args.seed)
    report = {"crowd_identity": [], "diffusion_bound": [], "truncated_variance": None}
    ok = True
    for n in (5, 50, 500):
        for _ in range(args.trials):
            x = rng.random(n) * 2.0
            p = oned.Particles1D(x, eps=1.0 / n, interval=(-0.5, 2.5))
            val = oned.verify_crowd_bound(p)
            report["crowd_identity"].append({"n": n, "value": val, "dev": abs(val - 1.0 / 12.0)})
            ok &= abs(val - 1.0 / 12.0) <= 1e-10
    for _ in range(args.trials * 3):
        n = int(rng.integers(2, 80))
        eps = 10.0 ** rng.uniform(-4, -1)
        x = rng.random(n) * 2.0
        p = oned.Particles1D(x, eps=eps, interval=(-0.2, 2.2))
        lhs, bound = oned.verify_diffusion_bound(p)
        report["diffusion_bound"].append({"n": n, "eps": eps, "lhs": lhs, "bound": bound})
        ok &= lhs <= bound
    worst = -np.inf
    for _ in range(1000):
        eps = 10.0 ** rng.uniform(-4, 0)
        x = rng.normal(0, 1)
        lo = x + rng.normal(0, 2)
        hi = lo + abs(rng.normal(0, 2)) + 1e-9
        worst = max(worst, oned.truncated_gaussian_variance(lo, hi, x, eps) - eps)
    report["truncated_variance"] = {"worst_excess": worst, "pass": bool(worst <= 1e-12)}
    ok &= worst <= 1e-12
    report["pass"] = bool(ok)
    print(json.dumps(report if args.verbose else {
        "crowd_identity_max_dev": max(r["dev"] for r in report["crowd_identity"]),
        "diffusion_bound_violations": sum(1 for r in report["diffusion_bound"] if r["lhs"] > r["bound"]),
        "truncated_variance_worst_excess": worst,
        "pass": bool(ok),
    }, indent=1))
    return 0 if ok else 1


def cmd_heat(args):
    from . import dynamics, validation

    cfg_raw = parse_config(args.config)
    cfg_raw.setdefault("mode", "entropy")
    out_dir = args.output or cfg_raw.get("output_dir", "out")
    dom, _ = build_domain(cfg_raw["domain"])
    X0 = build_initial_positions(cfg_raw, dom)
    cfg = dynamics.FlowConfig(
        mode="entropy",
        tau=cfg_raw["tau"],
        eps=cfg_raw["eps"],
        T=cfg_raw["T"],
        potential=build_potential(cfg_raw, dom),
        snapshot_stride=cfg_raw["snapshot_stride"],
    )
    traj = dynamics.run_simulation(X0, cfg, dom)
    export_trajectory(traj, cfg, out_dir, dom=dom, export_cells=cfg_raw["export_cells"])
    slope, var = validation.heat_moment_check(traj)
    with open(os.path.join(out_dir, "heat_report.json"), "w") as f:
        json.dump({"variance_slope": slope, "variances": var.tolist()}, f, indent=1)
    if traj.failure:
        print(f"simulation aborted: {traj.failure}", file=sys.stderr)
        return 1
    print(f"heat run: variance slope over first snapshots = {slope}")
    return 0


def make_parser():
    ap = argparse.ArgumentParser(prog="wgflow", description=__doc__)
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS thread count (set before numpy loads)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a particle flow from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--h", default=None, help="override grid spacing (rational like 1/20)")
    p.add_argument("--export-cells", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("project", help="one-shot regularized projection of a point cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("validate-radial", help="radial benchmark error table")
    p.add_argument("--h", action="append", default=None, help="grid spacing (repeatable)")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_validate_radial)

    p = sub.add_parser("bounds-1d", help="executable 1D bounds report")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_bounds_1d)

    p = sub.add_parser("heat", help="entropy-mode heat flow run")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_heat)
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    # --threads must act before numpy initializes its thread pools
    if "--threads" in argv:
        k = argv.index("--threads")
        if k + 1 < len(argv):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ.setdefault(var, argv[k + 1])
    ap = make_parser()
    args = ap.parse_args(argv)
    from .errors import SchemaError, WgflowError

    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WgflowError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
