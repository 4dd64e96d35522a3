"""Damped Newton solvers for the dual problems behind the regularized
congestion and entropy terms, and the particle forces they induce.

Both regularizations lead to a concave finite-dimensional dual over one
potential per particle: the optimal potentials make every Laguerre cell
carry mass exactly 1/N.  In crowd mode the cell measure is Lebesgue measure
on L_i intersected with the ball B(x_i, sqrt(psi_i)); in entropy mode it is
the Gaussian weight exp(-(|x-x_i|^2 - psi_i)/(2 eps)) on L_i.  A third
"quantization" mode constrains plain power cells against the uniform
measure on the domain (no ball, no weight); it backs Lloyd iterations and
direct Wasserstein evaluations against the uniform density.

Sign conventions: the dual values below are chosen so that their partial
derivative in psi_i is -(1/(2 eps)) * (mass_i - 1/N); the finite-difference
tests pin this convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import _fast, geometry as geo
from .errors import InfeasibleDomain, NoConvergence

MODES = ("crowd", "entropy", "quantization")

NEAR_COINCIDENT_REL = 1e-10

# the numba pipeline pays off once diagrams stop being tiny
FAST_PATH_MIN_N = 64


@dataclass
class CellSummaries:
    """Per-cell masses and moments plus the Jacobian d(mass)/d(psi) data."""

    masses: np.ndarray
    m1: np.ndarray  # first moment of the cell measure about x_i, (N, 2)
    m2: np.ndarray  # second moment about x_i, (N,)
    rows: np.ndarray  # off-diagonal Jacobian entries: J[rows, cols] = -vals
    cols: np.ndarray
    vals: np.ndarray
    diag_extra: np.ndarray  # ball-boundary / weight terms on the diagonal
    area_sum: float  # total (unclipped) cell area, for the partition check


@dataclass
class DualState:
    """Converged Kantorovich potentials and per-cell geometry summaries."""

    psi: np.ndarray
    cell_masses: np.ndarray
    barycenters: np.ndarray
    second_moments: np.ndarray
    mode: str
    eps: float
    positions: np.ndarray
    dom: geo.DomainGeometry
    residual: float
    iterations: int
    transport_cost: float  # sum_i int_{L_i} |y - x_i|^2 dsigma
    primal_value: float
    dual_value: float
    stalled: bool = False  # damping stalled at the roundoff floor above tol

    @property
    def duality_gap(self) -> float:
        return self.primal_value - self.dual_value

    def phi(self, points):
        """Kantorovich potential on the domain side at the given points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(pts))
        for s in range(0, len(pts), 1024):
            blk = pts[s : s + 1024]
            d2 = ((blk[:, None, :] - self.positions[None, :, :]) ** 2).sum(axis=2)
            out[s : s + 1024] = (d2 - self.psi[None, :]).min(axis=1)
        if self.mode == "crowd":
            return np.minimum(out, 0.0)
        return out

    def pressure(self, points):
        """Discrete pressure proxy: -phi/eps (crowd) or log sigma (entropy)."""
        if self.mode == "crowd":
            return -self.phi(points) / self.eps
        return -self.phi(points) / (2.0 * self.eps)


@dataclass
class MoreauYosidaResult:
    value: float
    force: np.ndarray  # per-particle velocity contribution (beta_i - x_i)/eps
    gradient: np.ndarray  # (x_i - beta_i)/(N eps), one row per particle
    dual: DualState


def _as_particles(X, eps):
    if isinstance(X, geo.ParticleSet):
        return X
    return geo.ParticleSet(np.asarray(X, dtype=float), eps=eps)


def _flat_pieces(dom):
    flat = getattr(dom, "_flat_pieces", None)
    if flat is None:
        ptr = [0]
        nxs, nys, offs, bboxes = [], [], [], []
        for piece, normals, offsets in zip(dom.pieces, dom._normals, dom._offsets):
            nxs.extend(normals[:, 0])
            nys.extend(normals[:, 1])
            offs.extend(offsets)
            ptr.append(ptr[-1] + len(piece))
            lo, hi = piece.min(axis=0), piece.max(axis=0)
            bboxes.append([lo[0], lo[1], hi[0], hi[1]])
        flat = (
            np.array(ptr, dtype=np.int64),
            np.array(nxs),
            np.array(nys),
            np.array(offs),
            np.array(bboxes),
        )
        dom._flat_pieces = flat
    return flat


def _neighbor_graph(pts, psi):
    n = len(pts)
    nbrs, hidden = geo.laguerre_neighbors(pts, psi)
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i, nb in enumerate(nbrs):
        indptr[i + 1] = indptr[i] + (0 if hidden[i] else len(nb))
    indices = np.concatenate(
        [np.asarray(nb, dtype=np.int64) for i, nb in enumerate(nbrs) if not hidden[i] and nb]
        or [np.empty(0, dtype=np.int64)]
    )
    return indptr, indices, hidden


def _knn_rows(particles, k):
    pts = particles.positions
    n = len(pts)
    k = min(k, n - 1)
    tree = getattr(particles, "_kdtree", None)
    if tree is None:
        from scipy.spatial import cKDTree

        tree = cKDTree(pts)
        particles._kdtree = tree
    _, idx = tree.query(pts, k=k + 1)
    return np.sort(idx[:, 1:], axis=1).astype(np.int64)


def _knn_graph(particles, k):
    """k-nearest candidate neighbors: cheap, independent of psi (valid for a
    whole solve), certified downstream by the partition-of-area identity."""
    idx = _knn_rows(particles, k)
    n, k = idx.shape
    indptr = np.arange(0, (n + 1) * k, k, dtype=np.int64)
    return indptr, idx.ravel(), np.zeros(n, dtype=bool)


def _union_graph(particles, psi):
    """Lifted-hull facet neighbors united with the 16 nearest candidates and
    no hidden flags: hidden cells are emptied by their near candidates, so
    the graph stays valid for nearby psi (certified by the area check)."""
    pts = particles.positions
    n = len(pts)
    nbrs, hidden = geo.laguerre_neighbors(pts, psi)
    knn = _knn_rows(particles, 16)
    rows = []
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        merged = np.union1d(np.asarray(nbrs[i], dtype=np.int64), knn[i])
        rows.append(merged)
        indptr[i + 1] = indptr[i] + len(merged)
    return indptr, np.concatenate(rows), np.zeros(n, dtype=bool)


def _evaluate_crowd_fast(particles, psi, dom, graph=None) -> CellSummaries:
    pts = particles.positions
    n = len(pts)
    if graph is None:
        graph = _neighbor_graph(pts, psi)
    indptr, indices, hidden = graph
    radii = np.sqrt(np.maximum(psi, 0.0))
    ptr, nxs, nys, offs, bboxes = _flat_pieces(dom)
    mass, m1, m2, areas, angle, facet_w, overflow = _fast.crowd_summaries(
        pts, np.asarray(psi, dtype=float), radii, hidden, indptr, indices, ptr, nxs, nys, offs, bboxes
    )
    if overflow.any():
        # rare: vertex buffer exhausted; redo those cells with the reference path
        cells = geo.build_power_diagram(particles, psi, dom)
        for i in np.nonzero(overflow)[0]:
            region = geo.clip_with_disk(cells[i], pts[i], radii[i]) if radii[i] > 0 else geo.CellRegion(i, [])
            a, mm1, mm2 = geo.moments_about(region, pts[i])
            mass[i], m1[i], m2[i] = a, mm1, mm2
            areas[i] = cells[i].area() if not cells[i].is_empty else 0.0
            angle[i] = region.arc_length() / radii[i] if radii[i] > 0 else 0.0
            fl = region.facet_lengths()
            for kk in range(indptr[i], indptr[i + 1]):
                j = indices[kk]
                L = fl.get(int(j), 0.0)
                facet_w[kk] = L / (2.0 * np.hypot(*(pts[i] - pts[j])))
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    return CellSummaries(
        masses=mass,
        m1=m1,
        m2=m2,
        rows=rows,
        cols=indices,
        vals=facet_w,
        diag_extra=0.5 * angle,
        area_sum=float(areas.sum()),
    )


def evaluate_cells(particles: geo.ParticleSet, psi, dom, mode, eps, fast=True) -> CellSummaries:
    """Masses, moments and Jacobian data of all cells at the given psi."""
    pts = particles.positions
    n = len(pts)
    if mode == "crowd" and fast and _fast.HAVE_NUMBA and n >= FAST_PATH_MIN_N:
        return _evaluate_crowd_fast(particles, np.asarray(psi, dtype=float), dom)
    cells = geo.build_power_diagram(particles, psi, dom)
    masses = np.zeros(n)
    m1 = np.zeros((n, 2))
    m2 = np.zeros(n)
    diag_extra = np.zeros(n)
    rows, cols, vals = [], [], []
    area_sum = 0.0
    if mode == "crowd":
        radii = np.sqrt(np.maximum(psi, 0.0))
        for i, cell in enumerate(cells):
            area_sum += cell.area() if not cell.is_empty else 0.0
            if cell.is_empty or radii[i] == 0.0:
                continue
            region = geo.clip_with_disk(cell, pts[i], radii[i])
            a, mm1, mm2 = geo.moments_about(region, pts[i])
            masses[i] = a
            m1[i] = mm1
            m2[i] = mm2
            arc = region.arc_length()
            if arc > 0.0:
                diag_extra[i] = arc / (2.0 * radii[i])
            for j, L in region.facet_lengths().items():
                rows.append(i)
                cols.append(j)
                vals.append(L / (2.0 * np.hypot(*(pts[i] - pts[j]))))
    elif mode == "entropy":
        seg_p0, seg_p1, seg_i, seg_j = [], [], [], []
        for i, cell in enumerate(cells):
            if cell.is_empty:
                continue
            area_sum += cell.area()
            a, mm1, mm2 = geo.gaussian_cell_moments(cell, pts[i], psi[i], eps)
            masses[i] = a
            m1[i] = mm1
            m2[i] = mm2
            for loop in cell.loops:
                for e in loop:
                    if e.tag >= 0:
                        seg_p0.append(e.p0)
                        seg_p1.append(e.p1)
                        seg_i.append(i)
                        seg_j.append(e.tag)
        diag_extra = masses / (2.0 * eps)
        if seg_i:
            seg_i = np.array(seg_i)
            seg_j = np.array(seg_j)
            w = geo.gaussian_segment_integrals(
                np.array(seg_p0), np.array(seg_p1), pts[seg_i], psi[seg_i], eps
            )
            d = np.hypot(*(pts[seg_i] - pts[seg_j]).T)
            rows, cols, vals = seg_i, seg_j, w / (2.0 * d)
    elif mode == "quantization":
        vol = dom.total_area
        for i, cell in enumerate(cells):
            if cell.is_empty:
                continue
            a, mm1, mm2 = geo.moments_about(cell, pts[i])
            area_sum += a
            masses[i] = a / vol
            m1[i] = mm1 / vol
            m2[i] = mm2 / vol
            for j, L in cell.facet_lengths().items():
                rows.append(i)
                cols.append(j)
                vals.append(L / (2.0 * np.hypot(*(pts[i] - pts[j])) * vol))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return CellSummaries(
        masses=masses,
        m1=m1,
        m2=m2,
        rows=np.asarray(rows, dtype=np.int64),
        cols=np.asarray(cols, dtype=np.int64),
        vals=np.asarray(vals, dtype=float),
        diag_extra=diag_extra,
        area_sum=area_sum,
    )


def _dual_value(summ: CellSummaries, psi, eps, mode, n):
    m, m2 = summ.masses, summ.m2
    if mode == "crowd":
        return (m2.sum() - float(psi @ m) + psi.sum() / n) / (2.0 * eps)
    if mode == "entropy":
        return psi.sum() / (n * 2.0 * eps) + (1.0 - m.sum())
    return m2.sum() - float(psi @ m) + psi.sum() / n


def _primal_value(summ: CellSummaries, psi, eps, mode):
    if mode == "crowd":
        return summ.m2.sum() / (2.0 * eps)
    if mode == "entropy":
        return float(psi @ summ.masses) / (2.0 * eps)
    return summ.m2.sum()


def dual_objective_crowd(psi, X, dom, eps):
    """Dual value and gradient for the congestion projection.

    value = (1/2eps) [ sum_i int_{L_i cap B_i} (|x-x_i|^2 - psi_i) dx
                       + sum_i psi_i / N ],
    grad_i = -(1/2eps) (|L_i cap B_i| - 1/N).
    """
    particles = _as_particles(X, eps)
    psi = np.asarray(psi, dtype=float)
    n = len(particles)
    summ = evaluate_cells(particles, psi, dom, "crowd", eps)
    grad = -(summ.masses - 1.0 / n) / (2.0 * eps)
    return _dual_value(summ, psi, eps, "crowd", n), grad


def dual_objective_entropy(psi, X, dom, eps):
    """Dual value and gradient for the entropic regularization.

    The gradient is the Gaussian cell mass minus 1/N, scaled by -1/(2 eps)
    (consistent with the crowd convention; pinned by finite differences).
    """
    particles = _as_particles(X, eps)
    psi = np.asarray(psi, dtype=float)
    n = len(particles)
    summ = evaluate_cells(particles, psi, dom, "entropy", eps)
    grad = -(summ.masses - 1.0 / n) / (2.0 * eps)
    return _dual_value(summ, psi, eps, "entropy", n), grad


def default_psi0(particles: geo.ParticleSet, eps, mode):
    n = len(particles)
    if mode == "crowd":
        return np.full(n, 1.0 / (n * math.pi))
    if mode == "entropy":
        return np.full(n, 2.0 * eps * math.log(1.0 / (2.0 * math.pi * eps * n)))
    return np.zeros(n)


def _rescue_empty_cells(particles, psi, dom, mode, eps, summ, ev, cold):
    """Make every cell carry positive mass before Newton starts.

    Cold starts use equal potentials, so a cell is empty only when its ball
    does not reach the domain; raising psi_i toward the squared distance
    fixes it.  Stale warm starts can hide cells behind neighbors' weights:
    the empty cells are lifted progressively (multiplicative growth, then
    quantiles of the healthy potentials), with a cold restart as the last
    resort.
    """
    n = len(particles)
    pts = particles.positions
    if mode != "crowd":
        if cold:
            raise NoConvergence("empty cell at the initial potentials")
        summ = ev(default_psi0(particles, eps, mode))
        if summ.masses.min() <= 0.0:
            raise NoConvergence("empty cell at the initial potentials")
        return default_psi0(particles, eps, mode), summ
    psi = psi.copy()
    dist = None
    for round_ in range(24):
        zero = summ.masses <= 0.0
        if not zero.any():
            return psi, summ
        if round_ >= 8 and not cold:
            cold_psi = default_psi0(particles, eps, "crowd")
            return _rescue_empty_cells(
                particles, cold_psi, dom, "crowd", eps, ev(cold_psi), ev, cold=True,
            )
        if dist is None:
            dist = np.zeros(n)
            for i in np.nonzero(zero)[0]:
                dist[i] = np.hypot(*(dom.project_point(pts[i]) - pts[i]))
        lift = 4.0 * np.abs(psi[zero]) + 1e-12
        out = dist[zero] > 0.0
        if out.any():
            # particles outside the domain need the ball to reach it
            reach = (1.2 * dist[zero] + 2.0**round_ * 1e-3 * dom.diameter) ** 2
            lift = np.where(out, np.maximum(lift, reach), lift)
        pos = psi[~zero]
        if round_ >= 2 and pos.size:
            lift = np.maximum(lift, float(np.quantile(pos, 0.25)))
        if round_ >= 4 and pos.size:
            lift = np.maximum(lift, float(np.median(pos)))
        psi[zero] = np.maximum(psi[zero], lift)
        summ = ev(psi)
    raise NoConvergence("could not find initial potentials with positive cell masses")


def _fd_jacobian(particles, psi, dom, mode, eps):
    n = len(psi)
    J = np.zeros((n, n))
    h = 1e-7 * max(1.0 / n, float(np.max(np.abs(psi))) if n else 1.0)
    for k in range(n):
        dp = np.zeros(n)
        dp[k] = h
        mp = evaluate_cells(particles, psi + dp, dom, mode, eps).masses
        mm = evaluate_cells(particles, psi - dp, dom, mode, eps).masses
        J[:, k] = (mp - mm) / (2.0 * h)
    return J


def newton_solve(
    X,
    dom,
    eps,
    mode="crowd",
    tol=None,
    psi0=None,
    max_iter=100,
    max_damping=40,
    hessian="analytic",
) -> DualState:
    """Solve the per-cell mass constraints max_i |mass_i - 1/N| <= tol by a
    damped Newton iteration on the Kantorovich potentials.

    The step is accepted once every cell keeps mass >= eps_damp (half the
    smaller of the initial minimum mass and 1/N) and the residual norm drops
    by the factor (1 - step/2).  Deterministic given inputs.
    """
    particles = _as_particles(X, eps)
    pts = particles.positions
    n = len(pts)
    if tol is None:
        tol = 1e-9 / n
    if mode == "crowd" and dom.total_area < 1.0:
        raise InfeasibleDomain(f"|Omega| = {dom.total_area:g} < 1: densities <= 1 cannot carry mass 1")
    if particles.min_pairwise_distance() < NEAR_COINCIDENT_REL * dom.diameter:
        warnings.warn("near-coincident particles: falling back to finite-difference Hessian")
        hessian = "fd"
    psi = default_psi0(particles, eps, mode) if psi0 is None else np.array(psi0, dtype=float)

    use_fast = mode == "crowd" and _fast.HAVE_NUMBA and n >= FAST_PATH_MIN_N
    cache = {"graph": None, "knn": None}
    area_tol = 1e-12 * max(dom.total_area, 1.0)

    def _ev(p):
        # candidate neighbor graphs are certified by the partition-of-area
        # identity (a missing facet makes cells overlap): try the last good
        # graph, then the psi-independent kNN candidates, then a fresh
        # lifted hull (exact at this psi, accepted unconditionally)
        if not use_fast:
            return evaluate_cells(particles, p, dom, mode, eps)
        if cache["graph"] is not None:
            s = _evaluate_crowd_fast(particles, p, dom, graph=cache["graph"])
            if abs(s.area_sum - dom.total_area) <= area_tol:
                return s
        if cache["knn"] is None:
            cache["knn"] = _knn_graph(particles, 16)
        if cache["graph"] is not cache["knn"]:
            s = _evaluate_crowd_fast(particles, p, dom, graph=cache["knn"])
            if abs(s.area_sum - dom.total_area) <= area_tol:
                cache["graph"] = cache["knn"]
                return s
        g = _union_graph(particles, p)
        s = _evaluate_crowd_fast(particles, p, dom, graph=g)
        if abs(s.area_sum - dom.total_area) <= area_tol:
            cache["graph"] = g
            return s
        # fall back to the exact hull graph with hidden flags at this psi
        g = _neighbor_graph(particles.positions, p)
        cache["graph"] = None
        return _evaluate_crowd_fast(particles, p, dom, graph=g)

    summ = _ev(psi)
    if summ.masses.min() <= 0.0:
        # empty cells break the damping floor (and give singular Jacobian
        # rows): repair the offending potentials, cold-restarting if needed
        psi, summ = _rescue_empty_cells(particles, psi, dom, mode, eps, summ, _ev, cold=psi0 is None)
    floor_mass = 1e-3 / n
    if summ.masses.min() < floor_mass:
        # near-empty cells make the damping floor useless and the Newton
        # system badly scaled: lift just those potentials until healthy
        for _ in range(40):
            low = summ.masses < floor_mass
            if not low.any():
                break
            if mode == "entropy":
                psi = psi.copy()
                psi[low] += 2.0 * eps * np.log(floor_mass / np.maximum(summ.masses[low], 1e-300))
            else:
                psi = psi.copy()
                psi[low] = np.abs(psi[low]) * np.maximum(1.5, floor_mass / np.maximum(summ.masses[low], 1e-300)) + 1e-15
            summ = _ev(psi)
            if summ.masses.min() <= 0.0:
                psi, summ = _rescue_empty_cells(particles, psi, dom, mode, eps, summ, _ev, cold=False)
        else:
            psi = default_psi0(particles, eps, mode)
            summ = _ev(psi)
            if summ.masses.min() <= 0.0:
                psi, summ = _rescue_empty_cells(particles, psi, dom, mode, eps, summ, _ev, cold=True)

    target = 1.0 / n
    eps_damp = 0.5 * min(float(summ.masses.min()), target)
    r = summ.masses - target
    rnorm = float(np.linalg.norm(r))
    iterations = 0
    stalled = False
    while float(np.max(np.abs(r))) > tol:
        if iterations >= max_iter:
            raise NoConvergence(
                f"damped Newton did not reach tol={tol:g} in {max_iter} iterations",
                iterations=iterations,
                residual=float(np.max(np.abs(r))),
            )
        delta = _newton_direction(particles, psi, dom, mode, eps, summ, r, hessian)
        step = 1.0
        for _ in range(max_damping + 1):
            trial = psi + step * delta
            summ_t = _ev(trial)
            r_t = summ_t.masses - target
            done = float(np.max(np.abs(r_t))) <= tol
            if done or (summ_t.masses.min() >= eps_damp and np.linalg.norm(r_t) <= (1.0 - step / 2.0) * rnorm):
                psi, summ, r = trial, summ_t, r_t
                rnorm = float(np.linalg.norm(r))
                break
            step *= 0.5
        else:
            if float(np.max(np.abs(r))) <= 100.0 * tol:
                # physically converged but pinned at the roundoff floor of a
                # near-degenerate configuration; keep the state, flag it
                warnings.warn(
                    f"Newton stalled at residual {float(np.max(np.abs(r))):.2e} (tol {tol:.2e})"
                )
                stalled = True
                break
            raise NoConvergence(
                "damping exhausted", iterations=iterations, residual=float(np.max(np.abs(r)))
            )
        iterations += 1

    bary = pts + summ.m1 / np.maximum(summ.masses, 1e-300)[:, None]
    second = summ.m2 - (summ.m1**2).sum(axis=1) / np.maximum(summ.masses, 1e-300)
    return DualState(
        psi=psi,
        cell_masses=summ.masses,
        barycenters=bary,
        second_moments=second,
        mode=mode,
        eps=eps,
        positions=pts.copy(),
        dom=dom,
        residual=float(np.max(np.abs(r))),
        iterations=iterations,
        transport_cost=float(summ.m2.sum()),
        primal_value=_primal_value(summ, psi, eps, mode),
        dual_value=_dual_value(summ, psi, eps, mode, n),
        stalled=stalled,
    )


def _newton_direction(particles, psi, dom, mode, eps, summ, r, hessian):
    n = len(psi)
    if hessian == "fd":
        J = _fd_jacobian(particles, psi, dom, mode, eps)
        if mode == "quantization":
            Jr = J[1:, 1:]
            delta = np.zeros(n)
            delta[1:] = np.linalg.solve(Jr + 1e-14 * np.eye(n - 1), -r[1:])
            return delta
        return np.linalg.solve(J + 1e-14 * np.eye(n), -r)
    diag = summ.diag_extra.copy()
    if len(summ.rows):
        np.add.at(diag, summ.rows, summ.vals)
    J = sp.coo_matrix(
        (
            np.concatenate([diag, -summ.vals]),
            (
                np.concatenate([np.arange(n), summ.rows]),
                np.concatenate([np.arange(n), summ.cols]),
            ),
        ),
        shape=(n, n),
    ).tocsr()
    if mode == "quantization":
        if n == 1:
            return np.zeros(1)
        Jr = J[1:, 1:] + sp.eye(n - 1, format="csr") * (1e-14 * max(diag.max(), 1.0))
        delta = np.zeros(n)
        delta[1:] = spsolve(Jr.tocsc(), -r[1:])
        return delta
    ridge = 0.0
    rnorm = float(np.linalg.norm(r)) + 1e-300
    for _ in range(4):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
                delta = spsolve((J + ridge * sp.eye(n, format="csr")).tocsc(), -r)
            # guard against inaccurate factorizations of badly-scaled systems
            if np.all(np.isfinite(delta)) and np.linalg.norm(J @ delta + r) <= 1e-6 * rnorm + ridge * np.linalg.norm(delta):
                return delta
        except Exception:
            pass
        ridge = max(ridge * 1e4, 1e-12 * max(float(diag.max()), 1.0))
    raise NoConvergence("Newton system could not be solved")


def moreau_yosida(X, dom, eps, mode="crowd", psi0=None, tol=None) -> MoreauYosidaResult:
    """Value, per-particle force (beta_i - x_i)/eps and gradient of the
    regularized term at the particle configuration X."""
    dual = newton_solve(X, dom, eps, mode=mode, psi0=psi0, tol=tol)
    force = (dual.barycenters - dual.positions) / eps
    n = len(dual.positions)
    grad = (dual.positions - dual.barycenters) / (n * eps)
    # the dual value is stationary in psi, so it is the robust F_eps estimate
    return MoreauYosidaResult(value=dual.dual_value, force=force, gradient=grad, dual=dual)


@dataclass
class ComplementarityReport:
    mode: str
    max_violation: float
    max_phi_on_support: float
    mass_error: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_violation <= 1e-10


def check_complementarity(dual: DualState, n_samples=4096, seed=0) -> ComplementarityReport:
    """Sampled verification of the optimality system (report-only).

    Crowd: phi <= 0 and phi (1 - sigma) = 0 with sigma the indicator of the
    union of ball-clipped cells; additionally sigma must be an admissible
    density (total mass 1, bounded by 1).  Entropy: phi/(2 eps) + log sigma
    = 0 at quadrature nodes, which exercises the cell assignment itself.
    """
    rng = np.random.default_rng(seed)
    pts = dual.positions
    psi = dual.psi
    n = len(pts)
    mass_error = abs(float(dual.cell_masses.sum()) - 1.0)
    if dual.mode == "crowd":
        samples = dual.dom.sample(rng, n_samples)
        d2 = ((samples[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2) - psi[None, :]
        raw = d2.min(axis=1)
        support = raw < 0.0  # sigma = 1 exactly on {phi < 0} cap Omega
        phi = np.minimum(raw, 0.0)
        viol = float(np.max(np.abs(phi * (~support)))) if (~support).any() else 0.0
        max_phi_support = float(raw[support].max()) if support.any() else -np.inf
        return ComplementarityReport(
            mode="crowd",
            max_violation=viol,
            max_phi_on_support=max_phi_support,
            mass_error=mass_error,
            details={"support_fraction": float(support.mean()), "n_samples": n_samples},
        )
    # entropy: evaluate at the degree-5 quadrature nodes of every cell
    particles = geo.ParticleSet(pts, eps=dual.eps)
    cells = geo.build_power_diagram(particles, psi, dual.dom)
    nodes = []
    owners = []
    x5, y5, _ = geo._RULE5
    for i, cell in enumerate(cells):
        for loop in cell.loops:
            vs = [e.p0 for e in loop]
            cx = sum(v[0] for v in vs) / len(vs)
            cy = sum(v[1] for v in vs) / len(vs)
            for k in range(len(vs)):
                q = vs[k + 1 if k + 1 < len(vs) else 0]
                ax, ay = cx, cy
                bx, by = vs[k]
                nodes.append(
                    np.column_stack(
                        [
                            ax + x5 * (bx - ax) + y5 * (q[0] - ax),
                            ay + x5 * (by - ay) + y5 * (q[1] - ay),
                        ]
                    )
                )
                owners.append(np.full(len(x5), i))
    nodes = np.concatenate(nodes)
    owners = np.concatenate(owners)
    if len(nodes) > n_samples:
        sel = rng.choice(len(nodes), size=n_samples, replace=False)
        nodes, owners = nodes[sel], owners[sel]
    phi = dual.phi(nodes)
    own_val = ((nodes - pts[owners]) ** 2).sum(axis=1) - psi[owners]
    # log sigma at a node of cell i is -(|x-x_i|^2 - psi_i)/(2 eps); the
    # identity phi/(2 eps) + log sigma = 0 holds iff the min is attained at i
    resid = np.abs(phi - own_val) / (2.0 * dual.eps)
    return ComplementarityReport(
        mode="entropy",
        max_violation=float(resid.max()),
        max_phi_on_support=float(phi.min()),
        mass_error=mass_error,
        details={"n_nodes": len(nodes)},
    )
