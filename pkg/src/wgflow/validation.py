"""Reference solutions and error metrics for the shipped benchmarks: the
radially symmetric congestion test with its free-boundary ODE, distance-
distribution Wasserstein errors, corridor exit times, and heat-flow sanity
checks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, geometry as geo, potentials
from .errors import SingularDenominator


@dataclass
class RadialSolution:
    """Exact congestion evolution on the wedge of radius R.

    The density is 1 on [0, b(t)), alpha (1 + t/r) on [b(t), R - t), zero
    beyond; b solves b' = alpha (b + t) / (b - alpha (b + t)), b(0) = 0 (the
    mass balance across the free boundary).  Once b reaches R - t the state
    is the fully saturated wedge of area 1 and stays put.
    """

    alpha: float = 1.0 / math.pi
    R: float = 2.0
    T: float = 1.0
    dt: float = 1e-5
    t_grid: np.ndarray = field(init=False)
    b_grid: np.ndarray = field(init=False)
    t_saturated: float = field(init=False)

    def __post_init__(self):
        a, R = self.alpha, self.R
        if abs(a * (math.pi * R * R / 4.0) - 1.0) > 1e-9:
            raise ValueError("alpha |Omega| must equal 1 (probability initial datum)")
        # series seed b = c t with (1-a) c^2 - 2 a c - a = 0
        c = (a + math.sqrt(a)) / (1.0 - a)
        t0 = 1e-6
        ts = [0.0, t0]
        bs = [0.0, c * t0]
        t, b = t0, c * t0
        r_sat = self._saturation_radius()
        self.t_saturated = math.inf

        def rhs(t, b):
            den = b - a * (b + t)
            if den <= 0.0:
                raise SingularDenominator(f"b - alpha (b + t) = {den:g} at t = {t:g}")
            return a * (b + t) / den

        while t < self.T:
            h = min(self.dt, self.T - t)
            k1 = rhs(t, b)
            k2 = rhs(t + h / 2, b + h * k1 / 2)
            k3 = rhs(t + h / 2, b + h * k2 / 2)
            k4 = rhs(t + h, b + h * k3)
            b = b + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t + h
            if b >= R - t or b >= r_sat:
                # fully saturated: freeze at the area-1 wedge
                self.t_saturated = t
                ts.append(t)
                bs.append(r_sat)
                break
            ts.append(t)
            bs.append(b)
        self.t_grid = np.array(ts)
        self.b_grid = np.array(bs)

    def _saturation_radius(self):
        # quarter-circle wedge: area = (pi/4) r^2 = 1
        return 2.0 / math.sqrt(math.pi)

    def b(self, t):
        t = np.asarray(t, dtype=float)
        r_sat = self._saturation_radius()
        out = np.interp(t, self.t_grid, self.b_grid)
        return np.where(t >= self.t_saturated, r_sat, out)

    def density(self, r, t):
        """rho_t as a function of the radius (three branches)."""
        r = np.asarray(r, dtype=float)
        if t >= self.t_saturated:
            return np.where(r < self._saturation_radius(), 1.0, 0.0)
        b = float(self.b(t))
        out = np.zeros_like(r)
        out[r < b] = 1.0
        mid = (r >= b) & (r < self.R - t)
        with np.errstate(divide="ignore"):
            out[mid] = self.alpha * (1.0 + t / r[mid])
        return out

    def radial_cdf(self, r, t):
        """CDF of the distance distribution (x -> |x|)_# rho_t.

        The wedge has angular measure pi/2, so the radial mass density is
        (pi/2) r rho_t(r); the piecewise integrals are closed forms.
        """
        r = np.atleast_1d(np.asarray(r, dtype=float))
        w = math.pi / 2.0
        a = self.alpha
        if t >= self.t_saturated:
            rs = self._saturation_radius()
            return np.clip(w * np.minimum(r, rs) ** 2 / 2.0, 0.0, 1.0)
        b = float(self.b(t))
        edge = self.R - t
        r1 = np.minimum(r, b)
        out = w * r1**2 / 2.0
        r2 = np.clip(r, b, edge)
        out += w * a * ((r2**2 - b**2) / 2.0 + t * (r2 - b))
        return np.clip(out, 0.0, 1.0)

    def total_mass(self, t):
        return float(self.radial_cdf(np.array([self.R]), t)[0])

    def radial_quantiles(self, u, t, grid=10_000):
        """Inverse of the radial CDF at levels u (numeric, fine grid)."""
        rs = np.linspace(0.0, self.R, grid)
        cdf = self.radial_cdf(rs, t)
        return np.interp(u, cdf, rs)


def distance_distribution_w2(positions, ref: RadialSolution, t, grid=10_000) -> float:
    """1D W2 distance between the reference distance distribution and the
    empirical distances of a particle snapshot (quantile matching).

    The empirical quantile is a step function; the reference quantile is
    integrated exactly against it on a fine u-grid.
    """
    radii = np.sort(np.hypot(positions[:, 0], positions[:, 1]))
    n = len(radii)
    u = (np.arange(grid) + 0.5) / grid
    q_ref = ref.radial_quantiles(u, t, grid=grid)
    q_emp = radii[np.minimum((u * n).astype(int), n - 1)]
    return math.sqrt(float(np.mean((q_ref - q_emp) ** 2)))


def empirical_w2_1d(samples_a, samples_b) -> float:
    """W2 between two atomic 1D measures with equal atom counts."""
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    if len(a) != len(b):
        raise ValueError("equal atom counts required")
    return math.sqrt(float(np.mean((a - b) ** 2)))


@dataclass
class ErrorReport:
    h_values: list
    errors: list
    runtimes: list
    n_particles: list

    def rows(self):
        return list(zip(self.h_values, self.errors, self.runtimes, self.n_particles))


def radial_benchmark(h, T=1.0, arc_segments=256, ref=None, snapshot_stride=1):
    """Run the radial congestion benchmark at spacing h; returns
    (err_h, trajectory, reference)."""
    if ref is None:
        ref = RadialSolution(T=T)
    dom = geo.radial_sector_domain(R=ref.R, arc_segments=arc_segments)
    X0 = dynamics.grid_initialization(dynamics.ExactSector(ref.R), h)
    cfg = dynamics.FlowConfig.from_grid_spacing(
        h,
        mode="crowd",
        T=T,
        potential=potentials.PotentialSpec(kind="norm").build(),
        snapshot_stride=snapshot_stride,
    )
    traj = dynamics.run_simulation(X0, cfg, dom)
    if traj.failure:
        raise RuntimeError(f"radial benchmark failed: {traj.failure}")
    err = max(
        distance_distribution_w2(s.positions, ref, s.t) for s in traj.snapshots
    )
    return err, traj, ref

def error_table(h_list, T=1.0) -> ErrorReport:
    """err_h = max_k W2(reference distance distribution, empirical) for each
    grid spacing, with tau = h/2, eps = h."""
    ref = RadialSolution(T=T)
    hs, errs, times, ns = [], [], [], []
    for h in h_list:
        t0 = time.time()
        err, traj, _ = radial_benchmark(h, T=T, ref=ref)
        hs.append(h)
        errs.append(err)
        times.append(time.time() - t0)
        ns.append(len(traj.snapshots[0].positions))
    return ErrorReport(h_values=hs, errors=errs, runtimes=times, n_particles=ns)


def timeout_map(traj, target_region, sentinel=-1.0):
    """Per-particle first-entry time tau_i = tau min {k : x_i^k in region};
    sentinel for particles that never enter."""
    n = len(traj.snapshots[0].positions)
    out = np.full(n, sentinel)
    for snap in traj.snapshots:
        inside = target_region.contains(snap.positions)
        newly = inside & (out == sentinel)
        out[newly] = snap.t
    return out


def heat_moment_check(traj, n_snapshots=10):
    """Least-squares slope of the spatial variance over the first snapshots.

    For the entropy flow with V = 0 on a roomy domain this approximates the
    heat-kernel variance growth d/dt E|x - mean|^2 = 4 in 2D.  Returns
    (slope, per-snapshot variances); empty report for single snapshots.
    """
    snaps = traj.snapshots[:n_snapshots]
    if len(snaps) < 2:
        return None, np.array([])
    ts = np.array([s.t for s in snaps])
    var = np.array(
        [float(np.mean(((s.positions - s.positions.mean(axis=0)) ** 2).sum(axis=1))) for s in snaps]
    )
    slope = float(np.polyfit(ts, var, 1)[0])
    return slope, var
