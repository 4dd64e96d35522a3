"""Driving potentials: analytic kinds and grid-based Eikonal distance fields
computed by first-order fast marching."""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import OutsideDomain

SENTINEL = np.inf


@dataclass
class PotentialSpec:
    """Specification of V: zero | norm | quadratic | custom | eikonal.

    quadratic is |x|^2/2, norm is |x| (gradient x/|x|, zero at the origin).
    custom supplies callables v(x) and grad_v(x) for (n, 2) arrays.  eikonal
    runs fast marching toward target points inside the wall geometry.
    """

    kind: str = "zero"
    targets: np.ndarray | None = None  # eikonal boundary points, V = 0 there
    h_fmm: float | None = None
    walls: object | None = None  # DomainGeometry; impassable outside
    v: object | None = None  # custom callable
    grad_v: object | None = None

    def build(self):
        if self.kind == "eikonal":
            if self.walls is None or self.targets is None or self.h_fmm is None:
                raise ValueError("eikonal potential needs targets, h_fmm and walls")
            return fast_marching(self)
        return AnalyticPotential(self)


class AnalyticPotential:
    def __init__(self, spec: PotentialSpec):
        self.spec = spec

    def value(self, pts):
        pts = np.atleast_2d(pts)
        k = self.spec.kind
        if k == "zero":
            return np.zeros(len(pts))
        if k == "norm":
            return np.hypot(pts[:, 0], pts[:, 1])
        if k == "quadratic":
            return 0.5 * (pts**2).sum(axis=1)
        if k == "custom":
            return np.asarray(self.spec.v(pts), dtype=float)
        raise ValueError(f"unknown potential kind {k!r}")

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        k = self.spec.kind
        if k == "zero":
            return np.zeros_like(pts)
        if k == "norm":
            r = np.hypot(pts[:, 0], pts[:, 1])
            with np.errstate(invalid="ignore", divide="ignore"):
                out = pts / r[:, None]
            out[r == 0.0] = 0.0
            return out
        if k == "quadratic":
            return pts.copy()
        if k == "custom":
            return np.asarray(self.spec.grad_v(pts), dtype=float)
        raise ValueError(f"unknown potential kind {k!r}")


@dataclass
class GridField:
    """Eikonal solution on a rectangular grid covering the walls' bbox.

    values[j, i] is V at node (x0 + i h, y0 + j h); nodes outside the wall
    geometry carry the +inf sentinel and are impassable.
    """

    x0: float
    y0: float
    h: float
    values: np.ndarray
    inside: np.ndarray
    unreached: int = 0
    grad_x: np.ndarray = field(init=False, repr=False)
    grad_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.grad_x, self.grad_y = _node_gradients(self.values, self.inside, self.h)

    def value(self, pts):
        return _bilinear(self, self.values, pts)

    def gradient(self, pts):
        """Gradient of the bilinear interpolant; falls back to interpolated
        one-sided node differences in cells touching a wall."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ny, nx = self.values.shape
        u = (pts[:, 0] - self.x0) / self.h
        v = (pts[:, 1] - self.y0) / self.h
        i = np.clip(np.floor(u).astype(int), 0, nx - 2)
        j = np.clip(np.floor(v).astype(int), 0, ny - 2)
        tu = np.clip(u - i, 0.0, 1.0)
        tv = np.clip(v - j, 0.0, 1.0)
        V00 = self.values[j, i]
        V10 = self.values[j, i + 1]
        V01 = self.values[j + 1, i]
        V11 = self.values[j + 1, i + 1]
        full = np.isfinite(V00) & np.isfinite(V10) & np.isfinite(V01) & np.isfinite(V11)
        out = np.empty_like(pts, dtype=float)
        with np.errstate(invalid="ignore"):
            out[:, 0] = ((V10 - V00) * (1 - tv) + (V11 - V01) * tv) / self.h
            out[:, 1] = ((V01 - V00) * (1 - tu) + (V11 - V10) * tu) / self.h
        if not full.all():
            part = ~full
            out[part, 0] = _bilinear(self, self.grad_x, pts[part])
            out[part, 1] = _bilinear(self, self.grad_y, pts[part])
        return out


def fast_marching(spec: PotentialSpec) -> GridField:
    """First-order upwind fast marching for |grad V| = 1 toward the targets.

    Walls (the complement of spec.walls) are impassable.  Monotone: nodes are
    accepted in non-decreasing V order, one acceptance per inside node.
    Inside nodes never reached keep the sentinel and are reported.
    """
    dom = spec.walls
    h = float(spec.h_fmm)
    x0, y0, x1, y1 = dom.bbox
    nx = int(math.ceil((x1 - x0) / h - 1e-9)) + 1
    ny = int(math.ceil((y1 - y0) / h - 1e-9)) + 1
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    inside = dom.contains(nodes, tol=1e-9 * max(dom.diameter, 1.0)).reshape(ny, nx)

    V = np.full((ny, nx), SENTINEL)
    state = np.zeros((ny, nx), dtype=np.int8)  # 0 far, 1 narrow, 2 accepted
    heap = []
    targets = np.atleast_2d(np.asarray(spec.targets, dtype=float))
    for t in targets:
        i = int(round((t[0] - x0) / h))
        j = int(round((t[1] - y0) / h))
        # targets on the wall boundary may round to a masked node: snap to
        # the nearest inside node within a couple of grid cells
        best = None
        for dj in range(-2, 3):
            for di in range(-2, 3):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny and inside[jj, ii]:
                    d2 = (x0 + ii * h - t[0]) ** 2 + (y0 + jj * h - t[1]) ** 2
                    if best is None or d2 < best[0]:
                        best = (d2, jj, ii)
        if best is None:
            raise ValueError(f"eikonal target {t} snaps outside the walls")
        _, j, i = best
        V[j, i] = 0.0
        state[j, i] = 1
        heapq.heappush(heap, (0.0, j, i))

    def update(j, i):
        best_x = min(
            V[j, i - 1] if i > 0 and state[j, i - 1] == 2 else SENTINEL,
            V[j, i + 1] if i + 1 < nx and state[j, i + 1] == 2 else SENTINEL,
        )
        best_y = min(
            V[j - 1, i] if j > 0 and state[j - 1, i] == 2 else SENTINEL,
            V[j + 1, i] if j + 1 < ny and state[j + 1, i] == 2 else SENTINEL,
        )
        a, b = min(best_x, best_y), max(best_x, best_y)
        if not np.isfinite(a):
            return SENTINEL
        if b - a >= h or not np.isfinite(b):
            return a + h
        return 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) ** 2))

    accepted = 0
    while heap:
        v, j, i = heapq.heappop(heap)
        if state[j, i] == 2:
            continue
        state[j, i] = 2
        accepted += 1
        for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            jj, ii = j + dj, i + di
            if 0 <= ii < nx and 0 <= jj < ny and inside[jj, ii] and state[jj, ii] != 2:
                cand = update(jj, ii)
                if cand < V[jj, ii]:
                    V[jj, ii] = cand
                    state[jj, ii] = 1
                    heapq.heappush(heap, (cand, jj, ii))

    unreached = int((inside & (state != 2)).sum())
    if unreached:
        warnings.warn(f"fast marching: {unreached} inside nodes unreachable (kept at sentinel)")
    return GridField(x0=x0, y0=y0, h=h, values=V, inside=inside, unreached=unreached)


def _node_gradients(V, inside, h):
    """Per-node differences using only finite neighbors: central where both
    sides exist, one-sided next to walls."""
    ny, nx = V.shape
    gxp = np.full_like(V, np.nan)
    gxm = np.full_like(V, np.nan)
    fin = np.isfinite(V)
    with np.errstate(invalid="ignore"):
        ok = fin[:, 1:] & fin[:, :-1]
        d = np.where(ok, np.subtract(V[:, 1:], V[:, :-1], where=ok), np.nan) / h
        gxp[:, :-1] = d
        gxm[:, 1:] = d
        gyp = np.full_like(V, np.nan)
        gym = np.full_like(V, np.nan)
        ok = fin[1:, :] & fin[:-1, :]
        d = np.where(ok, np.subtract(V[1:, :], V[:-1, :], where=ok), np.nan) / h
        gyp[:-1, :] = d
        gym[1:, :] = d
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gx = np.nanmean(np.stack([gxp, gxm]), axis=0)
        gy = np.nanmean(np.stack([gyp, gym]), axis=0)
    gx[~fin] = np.nan
    gy[~fin] = np.nan
    return np.nan_to_num(gx), np.nan_to_num(gy)


def _bilinear(f: GridField, A, pts):
    """Bilinear interpolation of node array A, ignoring wall nodes.

    With all four corners valid this is the plain bilinear interpolant; near
    walls the invalid corners are dropped and the weights renormalized
    (one-sided behaviour).  Raises OutsideDomain when no corner is valid.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ny, nx = A.shape
    u = (pts[:, 0] - f.x0) / f.h
    v = (pts[:, 1] - f.y0) / f.h
    if np.any((u < -0.5) | (u > nx - 0.5) | (v < -0.5) | (v > ny - 0.5)):
        raise OutsideDomain("interpolation point outside the grid")
    i = np.clip(np.floor(u).astype(int), 0, nx - 2)
    j = np.clip(np.floor(v).astype(int), 0, ny - 2)
    tu = np.clip(u - i, 0.0, 1.0)
    tv = np.clip(v - j, 0.0, 1.0)
    out = np.zeros(len(pts))
    wsum = np.zeros(len(pts))
    for dj, di, w in (
        (0, 0, (1 - tu) * (1 - tv)),
        (0, 1, tu * (1 - tv)),
        (1, 0, (1 - tu) * tv),
        (1, 1, tu * tv),
    ):
        val = A[j + dj, i + di]
        valid = f.inside[j + dj, i + di] & np.isfinite(val)
        out += np.where(valid, val, 0.0) * w * valid
        wsum += w * valid
    if np.any(wsum == 0.0):
        raise OutsideDomain("interpolation point has no valid grid corner")
    return out / wsum


def eval_grad_V(pot, x):
    """Gradient of the potential at points x (analytic or grid-based)."""
    return pot.gradient(np.atleast_2d(x))
