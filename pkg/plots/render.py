#!/usr/bin/env python3
"""Render figures from solver snapshot/CSV outputs.

Reads the snapshot JSON and CSV formats written by the wgflow CLI (this
script never imports the solver) and produces deterministic PNG images:
cell tessellations colored by initial position or density, projection
force-arrow figures, trajectory bundles, and exit-time heat maps.

Usage: render.py --spec spec.json

Spec keys: kind (cells | arrows | trajectories | timeout | density),
inputs (list of snapshot JSON or CSV paths), output (image path), optional
color_key (initial-y | initial-position | gaussian-weight), dpi, title.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection, PolyCollection

DPI = 150
CMAP = "viridis"
ARC_SEGMENTS = 64  # per arc edge
SENTINEL_COLOR = (0.65, 0.65, 0.65, 1.0)


def load_spec(path):
    with open(path) as f:
        spec = json.load(f)
    for key in ("kind", "inputs", "output"):
        if key not in spec:
            raise KeyError(f"figure spec is missing {key!r}")
    return spec


def read_snapshot(path):
    with open(path) as f:
        doc = json.load(f)
    for key in ("positions", "psi"):
        if key not in doc:
            raise ValueError(f"{path}: not a snapshot file (missing {key!r})")
    return doc


def cell_polygon(cell):
    """Sample a cell's loops into closed vertex arrays (arcs subdivided)."""
    polys = []
    for loop in cell["loops"]:
        pts = []
        for e in loop:
            if e["type"] == "seg":
                pts.append(e["p"])
            else:
                a0, a1 = e["a0"], e["a1"]
                th = np.linspace(a0, a1, ARC_SEGMENTS + 1)[:-1]
                cx, cy = e["center"]
                pts.extend(np.column_stack([cx + e["radius"] * np.cos(th), cy + e["radius"] * np.sin(th)]))
        if len(pts) >= 3:
            polys.append(np.asarray(pts, dtype=float))
    return polys


def color_values(doc, doc0, color_key):
    """Scalar (or RGB) colors per particle for the requested key."""
    pos0 = np.asarray(doc0["positions"])
    if color_key == "initial-y":
        y = pos0[:, 1]
        span = np.ptp(y) or 1.0
        return (y - y.min()) / span, False
    if color_key == "initial-position":
        lo = pos0.min(axis=0)
        span = np.maximum(pos0.max(axis=0) - lo, 1e-12)
        uv = (pos0 - lo) / span
        rgb = np.column_stack([uv[:, 0], uv[:, 1], np.full(len(uv), 0.55)])
        return rgb, True
    if color_key == "gaussian-weight":
        w = np.asarray(doc.get("weights", np.ones(len(doc["positions"]))), dtype=float)
        # per-frame normalization: the current maximum always maps to the top
        # of the color scale
        return w / (w.max() or 1.0), False
    raise ValueError(f"unknown color key {color_key!r}")


def draw_cells(ax, doc, colors, is_rgb):
    if "cells" not in doc:
        raise ValueError("snapshot has no cells; re-run the solver with cell export")
    polys, facecolors = [], []
    cmap = plt.get_cmap(CMAP)
    for cell, cval in zip(doc["cells"], colors):
        for poly in cell_polygon(cell):
            polys.append(poly)
            facecolors.append(tuple(cval) if is_rgb else cmap(float(cval)))
    ax.add_collection(
        PolyCollection(polys, facecolors=facecolors, edgecolors="black", linewidths=0.15)
    )
    ax.autoscale_view()


def fig_axes(n_panels, figsize_each=3.2):
    ncols = min(3, n_panels)
    nrows = int(math.ceil(n_panels / ncols))
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(figsize_each * ncols, figsize_each * nrows), squeeze=False
    )
    return fig, [ax for row in axes for ax in row]


def render_cells(spec, color_key):
    docs = [read_snapshot(p) for p in spec["inputs"]]
    fig, axes = fig_axes(len(docs))
    for ax in axes[len(docs):]:
        ax.set_visible(False)
    for ax, doc in zip(axes, docs):
        colors, is_rgb = color_values(doc, docs[0], color_key)
        draw_cells(ax, doc, colors, is_rgb)
        ax.set_aspect("equal")
        ax.set_title(f"t = {doc.get('t', 0.0):g}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    return fig


def render_arrows(spec):
    doc = read_snapshot(spec["inputs"][0])
    fig, axes = fig_axes(1, figsize_each=4.5)
    ax = axes[0]
    pos = np.asarray(doc["positions"])
    if "cells" in doc:
        colors, is_rgb = color_values(doc, doc, "initial-position")
        draw_cells(ax, doc, colors, is_rgb)
    bary = np.asarray(doc.get("barycenters", pos))
    ax.scatter(pos[:, 0], pos[:, 1], s=6, c="tab:orange", zorder=3)
    ax.scatter(bary[:, 0], bary[:, 1], s=6, c="tab:blue", zorder=3)
    segs = np.stack([pos, bary], axis=1)
    ax.add_collection(LineCollection(segs, colors="black", linewidths=0.6, zorder=2))
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    return fig


def read_trajectories_csv(path):
    rows = {}
    with open(path) as f:
        for rec in csv.DictReader(f):
            rows.setdefault(int(rec["particle"]), []).append(
                (float(rec["t"]), float(rec["x"]), float(rec["y"]))
            )
    paths = []
    for i in sorted(rows):
        arr = np.array(sorted(rows[i]))
        paths.append(arr[:, 1:])
    return paths


def render_trajectories(spec):
    paths = read_trajectories_csv(spec["inputs"][0])
    fig, axes = fig_axes(1, figsize_each=4.5)
    ax = axes[0]
    y0 = np.array([p[0, 1] for p in paths])
    span = np.ptp(y0) or 1.0
    cmap = plt.get_cmap(CMAP)
    colors = [cmap(float(v)) for v in (y0 - y0.min()) / span]
    ax.add_collection(LineCollection(paths, colors=colors, linewidths=0.4))
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    return fig


def render_timeout(spec):
    data = np.genfromtxt(spec["inputs"][0], delimiter=",", names=True)
    fig, axes = fig_axes(1, figsize_each=4.5)
    ax = axes[0]
    t = np.atleast_1d(data["timeout"])
    x, y = np.atleast_1d(data["x0"]), np.atleast_1d(data["y0"])
    never = t < 0
    if never.any():
        ax.scatter(x[never], y[never], s=14, color=SENTINEL_COLOR, marker="s")
    if (~never).any():
        sc = ax.scatter(x[~never], y[~never], s=14, c=t[~never], cmap=CMAP, marker="s")
        fig.colorbar(sc, ax=ax, shrink=0.8)
    ax.set_aspect("equal")
    return fig


def render(spec) -> str:
    kind = spec["kind"]
    if kind == "cells":
        fig = render_cells(spec, spec.get("color_key", "initial-y"))
    elif kind == "density":
        fig = render_cells(spec, spec.get("color_key", "gaussian-weight"))
    elif kind == "arrows":
        fig = render_arrows(spec)
    elif kind == "trajectories":
        fig = render_trajectories(spec)
    elif kind == "timeout":
        fig = render_timeout(spec)
    else:
        raise ValueError(f"unknown figure kind {kind!r}")
    if spec.get("title"):
        fig.suptitle(spec["title"])
    out = spec["output"]
    fig.savefig(out, dpi=spec.get("dpi", DPI), metadata={"Software": "wgflow-plots"})
    plt.close(fig)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", required=True, help="figure spec JSON")
    args = ap.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        out = render(spec)
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as exc:
        print(f"bad spec or input: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
