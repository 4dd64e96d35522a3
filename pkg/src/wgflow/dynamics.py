"""Explicit Euler evolution of the particle system under the potential, an
optional interaction kernel, and the regularized congestion/entropy force."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo, ot_solver
from .errors import EmptyGrid, LeftDomain

# post-projection separation, relative to the typical particle spacing
# sqrt(|Omega|/N): large enough to keep the Newton system well conditioned,
# orders of magnitude below the discretization scale
SEPARATION_REL = 2e-4


@dataclass
class KernelSpec:
    """Even C^{1,1} interaction kernel W; the self term i = j is skipped
    (grad W(0) = 0 convention)."""

    kind: str = "none"  # none | quadratic | gaussian
    strength: float = 0.0
    scale: float = 1.0

    def gradient(self, z):
        """grad W at pairwise differences z (..., 2)."""
        if self.kind == "none" or self.strength == 0.0:
            return np.zeros_like(z)
        if self.kind == "quadratic":
            return self.strength * z
        if self.kind == "gaussian":
            s2 = self.scale**2
            w = np.exp(-0.5 * (z**2).sum(axis=-1) / s2)
            return (-self.strength / s2) * z * w[..., None]
        raise ValueError(f"unknown kernel kind {self.kind!r}")

    def value(self, z):
        if self.kind == "none" or self.strength == 0.0:
            return np.zeros(z.shape[:-1])
        if self.kind == "quadratic":
            return 0.5 * self.strength * (z**2).sum(axis=-1)
        if self.kind == "gaussian":
            return self.strength * np.exp(-0.5 * (z**2).sum(axis=-1) / self.scale**2)
        raise ValueError(f"unknown kernel kind {self.kind!r}")


@dataclass
class FlowConfig:
    mode: str = "crowd"  # crowd | entropy
    tau: float = 0.05
    eps: float = 0.1
    T: float = 1.0
    potential: object = None  # built potential (AnalyticPotential / GridField)
    kernel: KernelSpec | None = None
    boundary_policy: str = "project_back"  # project_back | error
    snapshot_stride: int = 1
    newton_tol: float | None = None

    @classmethod
    def from_grid_spacing(cls, h, **kw):
        """Benchmark defaults tau = h/2, eps = h."""
        kw.setdefault("tau", h / 2.0)
        kw.setdefault("eps", h)
        return cls(**kw)

    def __post_init__(self):
        if self.tau <= 0 or self.eps <= 0 or self.T < 0:
            raise ValueError("need tau > 0, eps > 0, T >= 0")
        if self.mode not in ("crowd", "entropy"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.boundary_policy not in ("project_back", "error"):
            raise ValueError(f"unknown boundary policy {self.boundary_policy!r}")


@dataclass
class Snapshot:
    t: float
    positions: np.ndarray
    psi: np.ndarray
    energy: float
    speeds: np.ndarray
    masses: np.ndarray | None = None
    barycenters: np.ndarray | None = None
    velocities: np.ndarray | None = None


@dataclass
class Trajectory:
    snapshots: list
    config_hash: str
    times: np.ndarray = field(init=False)
    failure: str | None = None
    projected_counts: list = field(default_factory=list)  # per-step boundary projections
    min_gap: float = np.inf
    entry_times: np.ndarray | None = None  # first entry into the target region

    def __post_init__(self):
        self.times = np.array([s.t for s in self.snapshots])
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("snapshot times must be strictly increasing")
        if not all(np.isfinite(s.energy) for s in self.snapshots):
            raise ValueError("non-finite energy in trajectory")

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def config_hash(cfg: FlowConfig, X0) -> str:
    pot = getattr(cfg.potential, "spec", None)
    blob = json.dumps(
        {
            "mode": cfg.mode,
            "tau": cfg.tau,
            "eps": cfg.eps,
            "T": cfg.T,
            "potential": getattr(pot, "kind", str(type(cfg.potential).__name__)),
            "kernel": (cfg.kernel.kind, cfg.kernel.strength, cfg.kernel.scale) if cfg.kernel else None,
            "boundary": cfg.boundary_policy,
            "X0": np.asarray(X0).round(15).tolist(),
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def total_energy(cfg: FlowConfig, X, f_eps) -> float:
    """E^N = mean V + interaction + regularized term value."""
    e = f_eps
    if cfg.potential is not None:
        e += float(np.mean(cfg.potential.value(X)))
    if cfg.kernel is not None and cfg.kernel.kind != "none":
        n = len(X)
        z = X[:, None, :] - X[None, :, :]
        w = cfg.kernel.value(z)
        np.fill_diagonal(w, 0.0)
        e += 0.5 * float(w.sum()) / n**2
    return e


def interaction_force(kernel: KernelSpec, X):
    """-(1/N) sum_j grad W(x_i - x_j), skipping i = j."""
    n = len(X)
    z = X[:, None, :] - X[None, :, :]
    gw = kernel.gradient(z)
    gw[np.arange(n), np.arange(n)] = 0.0
    return -gw.sum(axis=1) / n


def euler_step(X, cfg: FlowConfig, dom, psi0=None):
    """One explicit Euler step; returns (X_next, DualState, velocity)."""
    dual = ot_solver.newton_solve(X, dom, cfg.eps, mode=cfg.mode, psi0=psi0, tol=cfg.newton_tol)
    v = (dual.barycenters - X) / cfg.eps
    if cfg.potential is not None:
        v = v - cfg.potential.gradient(X)
    if cfg.kernel is not None and cfg.kernel.kind != "none":
        v = v + interaction_force(cfg.kernel, X)
    X_next = X + cfg.tau * v
    X_next, n_proj = _apply_boundary(X_next, dom, cfg.boundary_policy)
    return X_next, dual, v, n_proj


def _apply_boundary(X, dom, policy):
    inside = dom.contains(X)
    n_out = int((~inside).sum())
    if n_out == 0:
        return X, 0
    if policy == "error":
        raise LeftDomain(f"{n_out} particles left the domain")
    X = X.copy()
    for i in np.nonzero(~inside)[0]:
        X[i] = dom.project_point(X[i])
    _separate_coincident(X, dom)
    return X, n_out


def _separate_coincident(X, dom):
    """Deterministically split particles that boundary projection collapsed
    onto the same point (e.g. several escapees mapped to one corner)."""
    delta = max(SEPARATION_REL * math.sqrt(dom.total_area / len(X)), 1e-12)
    for attempt in range(6):
        tree = cKDTree(X)
        pairs = tree.query_pairs(delta, output_type="ndarray")
        if len(pairs) == 0:
            return
        for k, (i, j) in enumerate(sorted(map(tuple, pairs))):
            d = X[j] - X[i]
            r = np.hypot(*d)
            if r < 1e-300:
                ang = 2.399963229728653 * (i + 3 * j + attempt)  # golden angle
                d = np.array([math.cos(ang), math.sin(ang)])
            else:
                d = d / r
            shift = (2.0**attempt) * delta
            Xi = X[i] - 0.5 * shift * d
            Xj = X[j] + 0.5 * shift * d
            X[i] = Xi if dom.contains(Xi[None, :])[0] else dom.project_point(Xi)
            X[j] = Xj if dom.contains(Xj[None, :])[0] else dom.project_point(Xj)
    warnings.warn("coincident particles could not be fully separated")


def run_simulation(X0, cfg: FlowConfig, dom, entry_region=None) -> Trajectory:
    """ceil(T/tau) Euler steps with warm-started dual solves.

    Snapshots are stored at the configured stride (always including the
    initial and final states).  When entry_region is given, the first time
    tau * min {k : x_i^k in region} is tracked per particle at every step
    (sentinel -1 for particles that never enter).  On a solver failure the
    partial trajectory is returned with the failure reason recorded.
    """
    X = np.array(X0, dtype=float)
    n_steps = int(math.ceil(cfg.T / cfg.tau - 1e-12)) if cfg.T > 0 else 0
    snaps = []
    proj_counts = []
    psi = psi_prev = None
    chash = config_hash(cfg, X0)
    min_gap = np.inf
    failure = None
    entry = None if entry_region is None else np.full(len(X), -1.0)
    k = 0
    try:
        while True:
            if entry is not None:
                newly = entry_region.contains(X) & (entry < 0.0)
                entry[newly] = k * cfg.tau
            # warm start: linear extrapolation of the previous potentials
            warm = None if psi is None else (psi if psi_prev is None else 2.0 * psi - psi_prev)
            dual = ot_solver.newton_solve(X, dom, cfg.eps, mode=cfg.mode, psi0=warm, tol=cfg.newton_tol)
            psi_prev, psi = psi, dual.psi
            v = (dual.barycenters - X) / cfg.eps
            if cfg.potential is not None:
                v = v - cfg.potential.gradient(X)
            if cfg.kernel is not None and cfg.kernel.kind != "none":
                v = v + interaction_force(cfg.kernel, X)
            if k % cfg.snapshot_stride == 0 or k == n_steps:
                snaps.append(
                    Snapshot(
                        t=k * cfg.tau,
                        positions=X.copy(),
                        psi=dual.psi.copy(),
                        energy=total_energy(cfg, X, dual.dual_value),
                        speeds=np.hypot(v[:, 0], v[:, 1]),
                        masses=dual.cell_masses.copy(),
                        barycenters=dual.barycenters.copy(),
                        velocities=v.copy(),
                    )
                )
            if k >= n_steps:
                break
            X_next = X + cfg.tau * v
            X_next, n_proj = _apply_boundary(X_next, dom, cfg.boundary_policy)
            proj_counts.append(n_proj)
            gap = geo.ParticleSet(X_next, cfg.eps).min_pairwise_distance()
            min_gap = min(min_gap, gap)
            if gap <= 1e-12:
                raise RuntimeError(f"particle gap collapsed to {gap:g}")
            X = X_next
            k += 1
    except Exception as exc:  # record partial trajectory with the reason
        if not snaps:
            raise
        failure = f"step {k}: {type(exc).__name__}: {exc}"
        warnings.warn(f"simulation aborted, partial trajectory returned ({failure})")
    traj = Trajectory(snapshots=snaps, config_hash=chash, projected_counts=proj_counts)
    traj.min_gap = min_gap
    traj.failure = failure
    traj.entry_times = entry
    return traj


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------


class ExactDisk:
    """Disk region with exact membership (closed), for grid seeding."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        c, r = self.center, self.radius
        self.bbox = (c[0] - r, c[1] - r, c[0] + r, c[1] + r)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        d2 = ((pts - self.center) ** 2).sum(axis=1)
        return d2 <= self.radius**2 * (1.0 + 1e-12)


class ExactSector:
    """The wedge {x2 >= |x1|, |x| <= R} with exact membership (closed)."""

    def __init__(self, R=2.0):
        self.R = float(R)
        self.bbox = (-R / math.sqrt(2.0), 0.0, R / math.sqrt(2.0), R)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        r2 = (pts**2).sum(axis=1)
        return (pts[:, 1] >= np.abs(pts[:, 0])) & (r2 <= self.R**2 * (1.0 + 1e-12))


def grid_initialization(region, h) -> np.ndarray:
    """Particles at the points of h Z^2 inside the (closed) region, ordered
    row-major (y outer, x inner).  The region is a DomainGeometry or any
    object with bbox and contains()."""
    if h <= 0:
        raise ValueError("h must be positive")
    x0, y0, x1, y1 = region.bbox
    eps_i = 1e-9
    i0, i1 = math.floor(x0 / h - eps_i), math.ceil(x1 / h + eps_i)
    j0, j1 = math.floor(y0 / h - eps_i), math.ceil(y1 / h + eps_i)
    xs = np.arange(i0, i1 + 1) * h
    ys = np.arange(j0, j1 + 1) * h
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies along axis 0
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = region.contains(pts)
    pts = pts[keep]
    if len(pts) == 0:
        raise EmptyGrid(f"no grid points of spacing {h} inside the region")
    return pts


def lloyd_quantization(dom: geo.DomainGeometry, n, iters=20, rng=None, x0=None):
    """Quantization of the uniform density on the domain: alternate the
    equal-mass power diagram with moving each point to its cell barycenter.

    Returns (positions, costs) with costs the W2^2 values per iteration
    (non-increasing)."""
    if x0 is None:
        rng = np.random.default_rng(0) if rng is None else rng
        X = dom.sample(rng, n)
    else:
        X = np.array(x0, dtype=float)
    costs = []
    psi = None
    for _ in range(iters):
        dual = ot_solver.newton_solve(X, dom, 1.0, mode="quantization", psi0=psi)
        psi = dual.psi
        costs.append(dual.transport_cost)
        X = dual.barycenters.copy()
    dual = ot_solver.newton_solve(X, dom, 1.0, mode="quantization", psi0=psi)
    costs.append(dual.transport_cost)
    return X, np.array(costs)


def wasserstein_to_uniform(X, dom: geo.DomainGeometry) -> float:
    """W2 distance between the empirical measure on X and the uniform
    probability density on the domain (semi-discrete, solved exactly)."""
    dual = ot_solver.newton_solve(X, dom, 1.0, mode="quantization")
    return math.sqrt(max(dual.transport_cost, 0.0))
