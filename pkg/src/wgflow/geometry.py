"""Laguerre (power) cells clipped to polygonal domains, with exact disk
intersections and closed-form cell integrals.

The domain is a union of convex polygons; every cell is obtained from a
convex piece by half-plane clipping, so each cell loop stays convex.  Disk
intersections keep circular arcs exactly; only the domain boundary is ever
polygonized (by the preset constructors).  Moments use the divergence
theorem edge by edge, with closed-form circular-segment terms, so crowd-mode
mass/barycenter/second-moment values are exact up to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import CoincidentPoints, QuadratureNotConverged

# Relative tolerance used for geometric predicates, scaled by domain size.
GEOM_RTOL = 1e-12

TAG_DOMAIN = -1  # edge tag for domain-boundary edges (bisector tags are >= 0)


class Segment(NamedTuple):
    p0: tuple
    p1: tuple
    tag: int


class Arc(NamedTuple):
    center: tuple
    radius: float
    a0: float
    a1: float  # CCW sweep, a1 >= a0


def polygon_area(verts) -> float:
    v = np.asarray(verts, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass
class DomainGeometry:
    """Union of convex polygons with disjoint interiors.

    Each piece is an (k, 2) array of vertices in counter-clockwise order.
    Edge normals/offsets are precomputed so that a point p is inside piece i
    iff normals[i] @ p <= offsets[i] (componentwise, up to tolerance).
    """

    pieces: list
    _normals: list = field(init=False, repr=False)
    _offsets: list = field(init=False, repr=False)
    _areas: np.ndarray = field(init=False, repr=False)
    bbox: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.pieces = [np.array(p, dtype=float) for p in self.pieces]
        if not self.pieces:
            raise ValueError("domain needs at least one piece")
        lo = np.min([p.min(axis=0) for p in self.pieces], axis=0)
        hi = np.max([p.max(axis=0) for p in self.pieces], axis=0)
        self.bbox = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
        diam2 = float(np.sum((hi - lo) ** 2))
        self._normals, self._offsets, areas = [], [], []
        for p in self.pieces:
            if len(p) < 3:
                raise ValueError("piece with fewer than 3 vertices")
            a = polygon_area(p)
            if a <= 0:
                raise ValueError("piece vertices must be in CCW order with positive area")
            e = np.roll(p, -1, axis=0) - p
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            if np.any(cross < -GEOM_RTOL * diam2):
                raise ValueError("piece is not convex (negative turn found)")
            # outward normal of CCW edge (dx,dy) is (dy,-dx)
            n = np.stack([e[:, 1], -e[:, 0]], axis=1)
            self._normals.append(n)
            self._offsets.append(np.einsum("ij,ij->i", n, p))
            areas.append(a)
        self._areas = np.array(areas)
        self._check_disjoint(diam2)

    def _check_disjoint(self, diam2):
        for i in range(len(self.pieces)):
            for j in range(i + 1, len(self.pieces)):
                verts = [tuple(v) for v in self.pieces[i]]
                tags = [TAG_DOMAIN] * len(verts)
                for n, c in zip(self._normals[j], self._offsets[j]):
                    verts, tags = _clip_halfplane(verts, tags, float(n[0]), float(n[1]), float(c), TAG_DOMAIN)
                    if len(verts) < 3:
                        break
                if len(verts) >= 3 and abs(polygon_area(verts)) > 10 * GEOM_RTOL * diam2:
                    raise ValueError(f"pieces {i} and {j} have overlapping interiors")

    @property
    def total_area(self) -> float:
        return float(self._areas.sum())

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return math.hypot(x1 - x0, y1 - y0)

    def contains(self, points, tol=None):
        """Boolean mask of points lying in the closed domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if tol is None:
            tol = GEOM_RTOL * max(self.diameter, 1.0) ** 2
        inside = np.zeros(len(pts), dtype=bool)
        for n, c in zip(self._normals, self._offsets):
            inside |= np.all(pts @ n.T <= c + tol, axis=1)
        return inside

    def project_point(self, p):
        """Closest point of the domain to p (p itself when inside)."""
        p = np.asarray(p, dtype=float)
        if self.contains(p[None, :])[0]:
            return p.copy()
        best, best_d = None, np.inf
        for piece in self.pieces:
            q = _closest_on_polygon(piece, p)
            d = np.hypot(*(q - p))
            if d < best_d:
                best, best_d = q, d
        return best

    def sample(self, rng, n):
        """n uniform points in the domain (area-weighted piece + rejection)."""
        probs = self._areas / self._areas.sum()
        out = np.empty((n, 2))
        piece_idx = rng.choice(len(self.pieces), size=n, p=probs)
        for k, i in enumerate(piece_idx):
            piece = self.pieces[i]
            lo, hi = piece.min(axis=0), piece.max(axis=0)
            n_i, c_i = self._normals[i], self._offsets[i]
            while True:
                q = lo + rng.random(2) * (hi - lo)
                if np.all(n_i @ q <= c_i + 1e-15):
                    out[k] = q
                    break
        return out


def _closest_on_polygon(verts, p):
    q = np.roll(verts, -1, axis=0)
    d = q - verts
    t = np.clip(np.einsum("ij,ij->i", p - verts, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    proj = verts + t[:, None] * d
    k = int(np.argmin(np.einsum("ij,ij->i", proj - p, proj - p)))
    return proj[k]


@dataclass
class ParticleSet:
    """Particle positions carrying mass 1/N each, plus the regularization eps."""

    positions: np.ndarray
    eps: float

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must be (N, 2)")
        if len(self.positions) < 1:
            raise ValueError("need at least one particle")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pairwise_distance() <= 0.0:
            raise CoincidentPoints("coincident particle positions")

    def __len__(self):
        return len(self.positions)

    def min_pairwise_distance(self) -> float:
        if len(self.positions) == 1:
            return np.inf
        d, _ = cKDTree(self.positions).query(self.positions, k=2)
        return float(d[:, 1].min())


@dataclass
class CellRegion:
    """One particle's cell: convex loops of straight edges and circular arcs.

    Straight edges carry a tag: the neighbor index j for a bisector facet, or
    TAG_DOMAIN for a piece-boundary edge.  Arcs come from disk clipping.
    """

    owner: int
    loops: list  # list of loops; a loop is a list of Segment/Arc

    @property
    def is_empty(self) -> bool:
        return not self.loops

    def area(self) -> float:
        return _edge_moments(self.loops)[0]

    def facet_lengths(self) -> dict:
        """Total straight-edge length shared with each neighbor tag >= 0."""
        out = {}
        for loop in self.loops:
            for e in loop:
                if isinstance(e, Segment) and e.tag >= 0:
                    out[e.tag] = out.get(e.tag, 0.0) + math.dist(e.p0, e.p1)
        return out

    def arc_length(self) -> float:
        return sum(e.radius * (e.a1 - e.a0) for loop in self.loops for e in loop if isinstance(e, Arc))

    def vertices(self):
        """Loop vertex arrays (arc endpoints included, arcs not sampled)."""
        out = []
        for loop in self.loops:
            pts = []
            for e in loop:
                if isinstance(e, Segment):
                    pts.append(e.p0)
                else:
                    pts.append(_arc_point(e, e.a0))
            out.append(np.array(pts))
        return out


def _arc_point(arc, a):
    return (arc.center[0] + arc.radius * math.cos(a), arc.center[1] + arc.radius * math.sin(a))


# ---------------------------------------------------------------------------
# half-plane clipping (scalar paths kept deliberately allocation-light: the
# Newton solver calls this for every cell at every iteration)
# ---------------------------------------------------------------------------


def _clip_halfplane(verts, tags, nx, ny, c, newtag):
    """Clip CCW polygon (vertex list + per-edge tags) to {x : n.x <= c}.

    tags[i] labels the edge verts[i] -> verts[i+1].  Edges created on the
    clipping line get newtag.
    """
    k = len(verts)
    if k == 0:
        return verts, tags
    d = [nx * v[0] + ny * v[1] - c for v in verts]
    out_v, out_t = [], []
    for i in range(k):
        j = i + 1 if i + 1 < k else 0
        di, dj = d[i], d[j]
        vi = verts[i]
        if di <= 0.0:
            out_v.append(vi)
            out_t.append(tags[i])
            if dj > 0.0:
                s = di / (di - dj)
                vj = verts[j]
                out_v.append((vi[0] + s * (vj[0] - vi[0]), vi[1] + s * (vj[1] - vi[1])))
                out_t.append(newtag)
        elif dj <= 0.0:
            s = di / (di - dj)
            vj = verts[j]
            out_v.append((vi[0] + s * (vj[0] - vi[0]), vi[1] + s * (vj[1] - vi[1])))
            out_t.append(tags[i])
    if len(out_v) < 3:
        return [], []
    return out_v, out_t


def _dedupe(verts, tags, tol):
    """Remove zero-length edges: if v[i] ~ v[i+1], drop record i (its tag too)."""
    k = len(verts)
    if k < 3:
        return [], []
    keep_v, keep_t = [], []
    for i in range(k):
        j = i + 1 if i + 1 < k else 0
        if math.dist(verts[i], verts[j]) > tol:
            keep_v.append(verts[i])
            keep_t.append(tags[i])
    if len(keep_v) < 3:
        return [], []
    return keep_v, keep_t


# ---------------------------------------------------------------------------
# neighbor discovery
# ---------------------------------------------------------------------------


def laguerre_neighbors(positions, psi):
    """Candidate facet neighbors of each particle in the full-plane diagram.

    Uses the lifted convex hull (regular triangulation): points are lifted to
    (x, y, |x|^2 - psi) and lower-hull simplex edges give the adjacency.  The
    returned sets may include a few redundant candidates (harmless: their
    half-planes do not cut) but never miss a positive-length facet.  Hidden
    points (empty full-plane cell) get an empty set and flag.
    """
    n = len(positions)
    if n <= 16:
        nbrs = [sorted(set(range(n)) - {i}) for i in range(n)]
        return nbrs, np.zeros(n, dtype=bool)
    lifted = np.column_stack([positions, np.einsum("ij,ij->i", positions, positions) - psi])
    try:
        hull = ConvexHull(lifted, qhull_options="Qt")
    except QhullError:
        try:
            hull = ConvexHull(lifted, qhull_options="Qt QJ")
        except QhullError:
            nbrs = [sorted(set(range(n)) - {i}) for i in range(n)]
            return nbrs, np.zeros(n, dtype=bool)
    lower = hull.equations[:, 2] < -1e-12
    sets = [set() for _ in range(n)]
    seen = np.zeros(n, dtype=bool)
    for simp in hull.simplices[lower]:
        a, b, c = int(simp[0]), int(simp[1]), int(simp[2])
        seen[a] = seen[b] = seen[c] = True
        sets[a].update((b, c))
        sets[b].update((a, c))
        sets[c].update((a, b))
    hidden = ~seen
    return [sorted(s) for s in sets], hidden


def build_power_diagram(particles: ParticleSet, psi, dom: DomainGeometry, neighbors=None):
    """Laguerre cells of the weighted particles clipped to the domain.

    Returns one CellRegion per particle (possibly empty, possibly split
    across pieces); straight edges are tagged with the neighbor index they
    bisect or TAG_DOMAIN.  Raises CoincidentPoints via ParticleSet upstream.
    """
    pts = particles.positions
    psi = np.asarray(psi, dtype=float)
    n = len(pts)
    if psi.shape != (n,):
        raise ValueError("psi must have one entry per particle")
    if neighbors is None:
        neighbors, hidden = laguerre_neighbors(pts, psi)
    else:
        hidden = np.zeros(n, dtype=bool)
    tol = GEOM_RTOL * max(dom.diameter, 1.0)
    sq = np.einsum("ij,ij->i", pts, pts)
    cells = []
    for i in range(n):
        if hidden[i]:
            cells.append(CellRegion(owner=i, loops=[]))
            continue
        loops = []
        for piece, p_normals, p_offsets in zip(dom.pieces, dom._normals, dom._offsets):
            lo, hi = piece.min(axis=0), piece.max(axis=0)
            verts = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
            tags = [TAG_DOMAIN] * 4
            for j in neighbors[i]:
                nx = 2.0 * (pts[j, 0] - pts[i, 0])
                ny = 2.0 * (pts[j, 1] - pts[i, 1])
                c = sq[j] - sq[i] + psi[i] - psi[j]
                verts, tags = _clip_halfplane(verts, tags, nx, ny, c, int(j))
                if not verts:
                    break
            if not verts:
                continue
            # clip against piece edges the polygon actually violates
            va = np.array(verts)
            viol = np.nonzero(np.any(va @ p_normals.T > p_offsets + tol, axis=0))[0]
            for k in viol:
                nk = p_normals[k]
                verts, tags = _clip_halfplane(verts, tags, float(nk[0]), float(nk[1]), float(p_offsets[k]), TAG_DOMAIN)
                if not verts:
                    break
            verts, tags = _dedupe(verts, tags, tol)
            if verts:
                loop = [Segment(verts[k], verts[k + 1 if k + 1 < len(verts) else 0], tags[k]) for k in range(len(verts))]
                loops.append(loop)
        cells.append(CellRegion(owner=i, loops=loops))
    return cells


# ---------------------------------------------------------------------------
# disk clipping
# ---------------------------------------------------------------------------


def clip_with_disk(cell: CellRegion, center, radius: float) -> CellRegion:
    """Exact intersection of a (polygonal) cell with a closed disk.

    Arcs are kept as arcs.  radius = 0 yields an empty region.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0.0 or cell.is_empty:
        return CellRegion(owner=cell.owner, loops=[])
    cx, cy = float(center[0]), float(center[1])
    loops = []
    for loop in cell.loops:
        new = _clip_loop_disk(loop, cx, cy, radius)
        if new:
            loops.append(new)
    return CellRegion(owner=cell.owner, loops=loops)


def _clip_loop_disk(loop, cx, cy, r):
    """Clip one convex polygonal loop against the disk B((cx,cy), r).

    Walks the CCW boundary, keeping inside portions of each edge and stitching
    a CCW arc between every exit point and the next entry point (exit/entry
    events alternate because both sets are convex).
    """
    for e in loop:
        if isinstance(e, Arc):
            raise ValueError("disk clipping expects polygonal loops")
    r2 = r * r
    verts = [e.p0 for e in loop]
    tags = [e.tag for e in loop]
    k = len(verts)
    inside = [(v[0] - cx) ** 2 + (v[1] - cy) ** 2 <= r2 for v in verts]

    if all(inside):
        return list(loop)

    out = []
    pending_exit = None  # angle at which the boundary left the disk
    first_entry = None  # angle of the first entry event of the walk

    def angle(p):
        return math.atan2(p[1] - cy, p[0] - cx)

    def emit_entry(p):
        nonlocal pending_exit, first_entry
        a = angle(p)
        if pending_exit is not None:
            a1 = a
            while a1 < pending_exit - 1e-15:
                a1 += 2.0 * math.pi
            if a1 > pending_exit:
                out.append(Arc((cx, cy), r, pending_exit, a1))
            pending_exit = None
        elif first_entry is None:
            first_entry = a

    for i in range(k):
        j = i + 1 if i + 1 < k else 0
        p, q = verts[i], verts[j]
        tag = tags[i]
        if inside[i] and inside[j]:
            out.append(Segment(p, q, tag))
            continue
        ex, ey = q[0] - p[0], q[1] - p[1]
        a = ex * ex + ey * ey
        if a == 0.0:
            continue
        fx, fy = p[0] - cx, p[1] - cy
        b = 2.0 * (fx * ex + fy * ey)
        c = fx * fx + fy * fy - r2
        disc = b * b - 4.0 * a * c
        disc = math.sqrt(disc) if disc > 0.0 else 0.0
        t1 = (-b - disc) / (2.0 * a)
        t2 = (-b + disc) / (2.0 * a)
        if inside[i]:
            # leaving the disk: the exit root is the larger one
            t = min(max(t2, 0.0), 1.0)
            x = (p[0] + t * ex, p[1] + t * ey)
            if x != p:
                out.append(Segment(p, x, tag))
            pending_exit = angle(x)
        elif inside[j]:
            t = min(max(t1, 0.0), 1.0)
            x = (p[0] + t * ex, p[1] + t * ey)
            emit_entry(x)
            if x != q:
                out.append(Segment(x, q, tag))
        elif disc > 0.0 and 0.0 < t1 < t2 < 1.0:
            # chord through the disk with both endpoints outside
            x1 = (p[0] + t1 * ex, p[1] + t1 * ey)
            x2 = (p[0] + t2 * ex, p[1] + t2 * ey)
            emit_entry(x1)
            out.append(Segment(x1, x2, tag))
            pending_exit = angle(x2)

    if not out and pending_exit is None and first_entry is None:
        # boundary never met the disk: disjoint, or disk strictly inside
        if _point_in_convex_loop(loop, cx, cy) and _min_dist_to_loop(loop, cx, cy) >= r * (1.0 - 1e-12):
            return [Arc((cx, cy), r, 0.0, 2.0 * math.pi)]
        return []

    if pending_exit is not None and first_entry is not None:
        a1 = first_entry
        while a1 < pending_exit - 1e-15:
            a1 += 2.0 * math.pi
        if a1 > pending_exit:
            out.append(Arc((cx, cy), r, pending_exit, a1))
    return out


def _point_in_convex_loop(loop, x, y):
    for e in loop:
        if isinstance(e, Segment):
            ex, ey = e.p1[0] - e.p0[0], e.p1[1] - e.p0[1]
            if ex * (y - e.p0[1]) - ey * (x - e.p0[0]) < 0.0:
                return False
    return True


def _min_dist_to_loop(loop, x, y):
    best = np.inf
    for e in loop:
        if isinstance(e, Segment):
            ex, ey = e.p1[0] - e.p0[0], e.p1[1] - e.p0[1]
            L2 = ex * ex + ey * ey
            t = 0.0 if L2 == 0.0 else min(max(((x - e.p0[0]) * ex + (y - e.p0[1]) * ey) / L2, 0.0), 1.0)
            best = min(best, math.hypot(e.p0[0] + t * ex - x, e.p0[1] + t * ey - y))
    return best


# ---------------------------------------------------------------------------
# moments (divergence theorem, exact closed forms)
# ---------------------------------------------------------------------------


def _edge_moments(loops, ref=(0.0, 0.0)):
    """(area, Mx, My, M2) about the reference point, summed over loops.

    Mx = int (x-rx) dA, My likewise, M2 = int |x-ref|^2 dA.
    """
    rx, ry = ref
    A = Mx = My = M2 = 0.0
    for loop in loops:
        for e in loop:
            if isinstance(e, Segment):
                px, py = e.p0[0] - rx, e.p0[1] - ry
                qx, qy = e.p1[0] - rx, e.p1[1] - ry
                dx, dy = qx - px, qy - py
                A += 0.5 * (px * qy - py * qx)
                Mx += 0.5 * dy * (px * px + px * dx + dx * dx / 3.0)
                My += -0.5 * dx * (py * py + py * dy + dy * dy / 3.0)
                M2 += (dy / 3.0) * (px**3 + 1.5 * px * px * dx + px * dx * dx + 0.25 * dx**3) - (dx / 3.0) * (
                    py**3 + 1.5 * py * py * dy + py * dy * dy + 0.25 * dy**3
                )
            else:
                A_, Mx_, My_, M2_ = _arc_moments(e, rx, ry)
                A += A_
                Mx += Mx_
                My += My_
                M2 += M2_
    return A, Mx, My, M2


def _arc_moments(arc: Arc, rx, ry):
    cx, cy = arc.center[0] - rx, arc.center[1] - ry
    r = arc.radius
    a0, a1 = arc.a0, arc.a1
    da = a1 - a0
    s0, s1 = math.sin(a0), math.sin(a1)
    c0, c1 = math.cos(a0), math.cos(a1)
    i_cos = s1 - s0
    i_sin = c0 - c1
    i_cos2 = 0.5 * da + 0.25 * (math.sin(2 * a1) - math.sin(2 * a0))
    i_sin2 = 0.5 * da - 0.25 * (math.sin(2 * a1) - math.sin(2 * a0))
    i_cos3 = (s1 - s1**3 / 3.0) - (s0 - s0**3 / 3.0)
    i_sin3 = (-c1 + c1**3 / 3.0) - (-c0 + c0**3 / 3.0)
    i_cos4 = 0.375 * da + 0.25 * (math.sin(2 * a1) - math.sin(2 * a0)) + (math.sin(4 * a1) - math.sin(4 * a0)) / 32.0
    i_sin4 = 0.375 * da - 0.25 * (math.sin(2 * a1) - math.sin(2 * a0)) + (math.sin(4 * a1) - math.sin(4 * a0)) / 32.0
    A = 0.5 * (r * r * da + cx * r * i_cos + cy * r * i_sin)
    Mx = 0.5 * r * (cx * cx * i_cos + 2.0 * cx * r * i_cos2 + r * r * i_cos3)
    My = 0.5 * r * (cy * cy * i_sin + 2.0 * cy * r * i_sin2 + r * r * i_sin3)
    M2 = (r / 3.0) * (
        cx**3 * i_cos
        + 3.0 * cx * cx * r * i_cos2
        + 3.0 * cx * r * r * i_cos3
        + r**3 * i_cos4
        + cy**3 * i_sin
        + 3.0 * cy * cy * r * i_sin2
        + 3.0 * cy * r * r * i_sin3
        + r**3 * i_sin4
    )
    return A, Mx, My, M2


def cell_moments(cell: CellRegion, ref=None):
    """(area, barycenter, second_moment) of the cell w.r.t. Lebesgue measure.

    second_moment is int |y - barycenter|^2 dy.  Empty cells give
    (0.0, None, 0.0).
    """
    if cell.is_empty:
        return 0.0, None, 0.0
    if ref is None:
        first = cell.loops[0][0]
        ref = first.p0 if isinstance(first, Segment) else _arc_point(first, first.a0)
    A, Mx, My, M2 = _edge_moments(cell.loops, ref)
    if A <= 0.0:
        return 0.0, None, 0.0
    bary = np.array([ref[0] + Mx / A, ref[1] + My / A])
    second = M2 - (Mx * Mx + My * My) / A
    return A, bary, max(second, 0.0)


def moments_about(cell: CellRegion, point):
    """(area, first_moment_vec, second_moment_scalar) about a given point."""
    if cell.is_empty:
        return 0.0, np.zeros(2), 0.0
    A, Mx, My, M2 = _edge_moments(cell.loops, (float(point[0]), float(point[1])))
    return A, np.array([Mx, My]), M2


# ---------------------------------------------------------------------------
# Gaussian integrals over polygonal cells (adaptive quadrature)
# ---------------------------------------------------------------------------

# conical-product rule of polynomial degree >= 8 on the reference triangle
# (Duffy map of a 5x5 Gauss-Legendre grid) and the classic 7-point degree-5
# rule used for the error estimate.


def _build_rules():
    x, w = np.polynomial.legendre.leggauss(5)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    xr = U.ravel()
    yr = (V * (1.0 - U)).ravel()
    # weights sum to the reference-triangle area 1/2: _tri_quad multiplies by
    # det = 2 * physical area, so sum(w) * det = physical area
    wr = (WU * WV * (1.0 - U)).ravel()
    a1 = (6.0 - math.sqrt(15.0)) / 21.0
    a2 = (6.0 + math.sqrt(15.0)) / 21.0
    w1 = (155.0 - math.sqrt(15.0)) / 1200.0
    w2 = (155.0 + math.sqrt(15.0)) / 1200.0
    pts5 = [(1 / 3, 1 / 3, 9 / 40)]
    for a, wgt in ((a1, w1), (a2, w2)):
        pts5 += [(a, a, wgt), (1 - 2 * a, a, wgt), (a, 1 - 2 * a, wgt)]
    x5 = np.array([p[0] for p in pts5])
    y5 = np.array([p[1] for p in pts5])
    w5 = np.array([p[2] for p in pts5]) / 2.0
    return (xr, yr, wr), (x5, y5, w5)

_RULE8, _RULE5 = _build_rules()


def _tri_quad(tris, center, psi_i, eps, rule):
    """Weighted moments over a batch of triangles (K,3,2) for the Gaussian
    weight exp(-(|x-c|^2 - psi)/2eps): returns (mass, m1x, m1y, m2) arrays
    of shape (K,), moments taken about the center."""
    xr, yr, wr = rule
    A = tris[:, 0, :]
    e1 = tris[:, 1, :] - A
    e2 = tris[:, 2, :] - A
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    px = A[:, 0, None] + np.outer(e1[:, 0], xr) + np.outer(e2[:, 0], yr)
    py = A[:, 1, None] + np.outer(e1[:, 1], xr) + np.outer(e2[:, 1], yr)
    dx = px - center[0]
    dy = py - center[1]
    r2 = dx * dx + dy * dy
    f = np.exp(np.clip((psi_i - r2) / (2.0 * eps), -745.0, 700.0))
    wdet = wr[None, :] * det[:, None]
    mass = (f * wdet).sum(axis=1)
    m1x = (f * dx * wdet).sum(axis=1)
    m1y = (f * dy * wdet).sum(axis=1)
    m2 = (f * r2 * wdet).sum(axis=1)
    return mass, m1x, m1y, m2


def gaussian_cell_integrals(cell: CellRegion, x_i, psi_i, eps, rtol=1e-12, max_levels=12):
    """Mass and weighted barycenter of a polygonal cell under the Gaussian
    weight exp(-(|x-x_i|^2 - psi_i)/(2 eps)).

    Fans each loop from its centroid, pre-splits triangles until their size
    resolves the sqrt(eps) weight scale (growing with distance from x_i),
    then refines by the degree-8 vs degree-5 difference until the estimated
    error drops below rtol of the running total.  Raises
    QuadratureNotConverged at the refinement cap.
    """
    mass, m1, _ = gaussian_cell_moments(cell, x_i, psi_i, eps, rtol=rtol, max_levels=max_levels)
    if mass <= 0.0:
        return 0.0, None
    return mass, np.asarray(x_i, dtype=float) + m1 / mass


def gaussian_cell_moments(cell: CellRegion, x_i, psi_i, eps, rtol=1e-12, max_levels=12):
    """(mass, first moment about x_i, second moment about x_i) under the
    Gaussian weight; see gaussian_cell_integrals."""
    if cell.is_empty:
        return 0.0, np.zeros(2), 0.0
    center = (float(x_i[0]), float(x_i[1]))
    tris = []
    for loop in cell.loops:
        pts = []
        for e in loop:
            if isinstance(e, Arc):
                raise ValueError("gaussian integrals expect polygonal cells")
            pts.append(e.p0)
        cx = sum(p[0] for p in pts) / len(pts)
        cy = sum(p[1] for p in pts) / len(pts)
        for k in range(len(pts)):
            q = pts[k + 1 if k + 1 < len(pts) else 0]
            tris.append(((cx, cy), pts[k], q))
    tris = np.array(tris)
    tris = _presplit(tris, center, eps)

    # any cell mass is bounded by the full-plane Gaussian mass; error below
    # rtol of that bound is negligible for every downstream use
    mass_ub = 2.0 * math.pi * eps * math.exp(min(psi_i / (2.0 * eps), 700.0))
    floor = rtol * max(mass_ub, 1e-300) * 1e-4
    total = np.zeros(4)
    active = tris
    bad = np.array([True])
    for _ in range(max_levels + 1):
        m8 = _tri_quad(active, center, psi_i, eps, _RULE8)
        m5 = _tri_quad(active, center, psi_i, eps, _RULE5)
        err = np.abs(m8[0] - m5[0])
        scale = abs(total[0] + m8[0].sum())
        bad = err > max(rtol * scale, floor)
        for comp in range(4):
            total[comp] += m8[comp][~bad].sum()
        if not bad.any():
            return float(total[0]), np.array([total[1], total[2]]), float(total[3])
        active = _split4(active[bad])
    raise QuadratureNotConverged(f"cell {cell.owner}: {int(bad.sum())} triangles above tolerance after {max_levels} levels")


def _presplit(tris, center, eps):
    """Split triangles until max edge^2 <= 9*(2 eps + d_min^2), so the local
    variation of the Gaussian is resolved before error estimation."""
    out = []
    active = np.asarray(tris, dtype=float)
    for _ in range(64):
        if len(active) == 0:
            break
        e2 = np.maximum(
            np.einsum("ij,ij->i", active[:, 1] - active[:, 0], active[:, 1] - active[:, 0]),
            np.maximum(
                np.einsum("ij,ij->i", active[:, 2] - active[:, 1], active[:, 2] - active[:, 1]),
                np.einsum("ij,ij->i", active[:, 0] - active[:, 2], active[:, 0] - active[:, 2]),
            ),
        )
        dmin2 = _tri_dist2_batch(active, center)
        split = e2 > 9.0 * (2.0 * eps + dmin2)
        if not split.any():
            out.append(active)
            break
        out.append(active[~split])
        active = _split4(active[split])
    return np.concatenate(out) if out else active


def _tri_dist2_batch(tris, c):
    """Squared distance from point c to each triangle (0 when inside)."""
    cx, cy = c
    inside = np.ones(len(tris), dtype=bool)
    d2 = np.full(len(tris), np.inf)
    for k in range(3):
        p = tris[:, k]
        q = tris[:, (k + 1) % 3]
        ex, ey = q[:, 0] - p[:, 0], q[:, 1] - p[:, 1]
        inside &= ex * (cy - p[:, 1]) - ey * (cx - p[:, 0]) >= 0.0
        L2 = ex * ex + ey * ey
        s = np.clip(((cx - p[:, 0]) * ex + (cy - p[:, 1]) * ey) / np.maximum(L2, 1e-300), 0.0, 1.0)
        d2 = np.minimum(d2, (p[:, 0] + s * ex - cx) ** 2 + (p[:, 1] + s * ey - cy) ** 2)
    return np.where(inside, 0.0, d2)


def _split4(tris):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return np.concatenate(
        [
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ]
    )


def gaussian_segment_integrals(p0, p1, center, psi_i, eps):
    """Line integrals of the Gaussian weight along segments (vectorized).

    p0, p1: (K, 2) arrays; center may be (2,) or per-segment (K, 2) and
    psi_i a scalar or (K,).  Returns (K,) array of int_seg w ds with
    w = exp(-(|x-center|^2 - psi_i)/(2 eps)).
    """
    from scipy.special import erf

    p0 = np.atleast_2d(p0)
    p1 = np.atleast_2d(p1)
    d = p1 - p0
    L = np.hypot(d[:, 0], d[:, 1])
    center = np.asarray(center, dtype=float)
    if center.ndim == 1:
        center = center[None, :]
    f = p0 - center
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * np.einsum("ij,ij->i", d, f)
    c0 = np.einsum("ij,ij->i", f, f) - psi_i
    out = np.zeros(len(p0))
    tiny = a < 1e-300
    if tiny.any():
        out[tiny] = L[tiny] * np.exp(np.clip(-c0[tiny] / (2.0 * eps), -745.0, 700.0))
    big = ~tiny
    if big.any():
        ab, bb, cb = a[big], b[big], c0[big]
        shift = bb / (2.0 * ab)
        const = np.exp(np.clip(-(cb - bb * bb / (4.0 * ab)) / (2.0 * eps), -745.0, 700.0))
        s = np.sqrt(ab / (2.0 * eps))
        out[big] = L[big] * const * np.sqrt(np.pi) / (2.0 * s) * (erf(s * (1.0 + shift)) - erf(s * shift))
    return out


# ---------------------------------------------------------------------------
# preset domains
# ---------------------------------------------------------------------------


def square_domain(side=2.0, origin=(0.0, 0.0)) -> DomainGeometry:
    x0, y0 = origin
    return DomainGeometry([[(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)]])


def rectangle_domain(x0, y0, x1, y1) -> DomainGeometry:
    return DomainGeometry([[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]])


def radial_sector_domain(R=2.0, arc_segments=256) -> DomainGeometry:
    """The wedge {x2 >= |x1|, |x| <= R}: convex, arc polygonized (inscribed)."""
    verts = [(0.0, 0.0)]
    for k in range(arc_segments + 1):
        a = math.pi / 4.0 + (math.pi / 2.0) * k / arc_segments
        verts.append((R * math.cos(a), R * math.sin(a)))
    return DomainGeometry([verts])


def bimodal_domain(alpha=2.0 / math.sqrt(math.pi)) -> DomainGeometry:
    """Two rooms joined by a corridor (three rectangles)."""
    a = alpha
    left = [(0.0, 0.0), (a, 0.0), (a, a), (0.0, a)]
    right = [(4 * a / 3, 0.0), (7 * a / 3, 0.0), (7 * a / 3, a), (4 * a / 3, a)]
    corridor = [(a, a / 3), (4 * a / 3, a / 3), (4 * a / 3, 2 * a / 3), (a, 2 * a / 3)]
    return DomainGeometry([left, right, corridor])


def disk_domain(radius=1.0, center=(0.0, 0.0), segments=256) -> DomainGeometry:
    cx, cy = center
    verts = [
        (cx + radius * math.cos(2 * math.pi * k / segments), cy + radius * math.sin(2 * math.pi * k / segments))
        for k in range(segments)
    ]
    return DomainGeometry([verts])
