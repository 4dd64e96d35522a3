"""Exact one-dimensional specializations: the congestion projection by
interval pooling, the entropic dual via error-function integrals, and
executable versions of the static pressure bounds.

On an interval, the projection of N atoms onto densities bounded by 1 is a
union of saturated intervals: each particle claims a cell of length 1/N and
overlapping or out-of-domain claims merge into clusters placed at the mean
of their members (clamped into the domain).  The quantile-space view makes
this a pool-adjacent-violators sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from .errors import InfeasibleDomain, NoConvergence


@dataclass
class Particles1D:
    positions: np.ndarray  # sorted
    eps: float
    interval: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.positions = np.sort(np.asarray(self.positions, dtype=float))
        self.interval = (float(self.interval[0]), float(self.interval[1]))
        a, b = self.interval
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if b <= a:
            raise ValueError("empty interval")

    def __len__(self):
        return len(self.positions)


@dataclass
class Clusters1D:
    """Maximal saturated intervals of the projected density.

    starts[k] is the left end of cluster k; members k covers the particle
    index range [first[k], last[k]] inclusive; each particle owns a
    sub-interval of length 1/N."""

    starts: np.ndarray
    first: np.ndarray
    last: np.ndarray
    n: int

    @property
    def lengths(self):
        return (self.last - self.first + 1) / self.n

    def barycenters(self):
        """Midpoint of each particle's sub-interval, in particle order."""
        beta = np.empty(self.n)
        for s, f, l in zip(self.starts, self.first, self.last):
            k = np.arange(f, l + 1)
            beta[k] = s + (2 * (k - f) + 1) / (2 * self.n)
        return beta


def project_crowd_1d(p: Particles1D):
    """Exact W2 projection of the empirical measure onto densities <= 1.

    Returns (Clusters1D, barycenters).  Pooling sweep: clusters are merged
    left to right while they overlap (or poke out of the domain), each
    placed to preserve the mean of its member positions, clamped inward.
    Raises InfeasibleDomain when the interval is shorter than 1.
    """
    a, b = p.interval
    if b - a < 1.0:
        raise InfeasibleDomain(f"interval length {b - a} < 1")
    x = p.positions
    n = len(x)
    w = 1.0 / n  # cell length per particle
    # stack of clusters as (sum of member positions, count, first index)
    sums = []
    counts = []
    firsts = []
    for i in range(n):
        sums.append(x[i])
        counts.append(1)
        firsts.append(i)
        # merge while the last two clusters overlap (cluster of m particles
        # occupies m/n centered at its clamped mean)
        while len(sums) > 1:
            c1 = _center(sums[-1], counts[-1], w, a, b)
            l1 = counts[-1] * w
            c0 = _center(sums[-2], counts[-2], w, a, b)
            l0 = counts[-2] * w
            if c0 + l0 / 2.0 > c1 - l1 / 2.0 - 1e-15 * max(1.0, abs(c1)):
                sums[-2] += sums[-1]
                counts[-2] += counts[-1]
                sums.pop()
                counts.pop()
                firsts.pop()
            else:
                break
    starts = np.array(
        [_center(s, c, w, a, b) - c * w / 2.0 for s, c in zip(sums, counts)]
    )
    first = np.array(firsts, dtype=int)
    last = np.append(first[1:], n) - 1
    clusters = Clusters1D(starts=starts, first=first, last=last, n=n)
    return clusters, clusters.barycenters()


def _center(total, count, w, a, b):
    c = total / count
    half = count * w / 2.0
    return min(max(c, a + half), b - half)


def projection_cost(p: Particles1D) -> float:
    """W2^2 between the atoms and their projection (exact, per cell)."""
    clusters, beta = project_crowd_1d(p)
    n = len(p)
    # each cell is an interval of length 1/n with the barycenter at its
    # midpoint: int (y - x_i)^2 over the cell = L^3/12 + L (beta - x_i)^2
    L = 1.0 / n
    return float(np.sum(L**3 / 12.0 + L * (beta - p.positions) ** 2))


def verify_crowd_bound(p: Particles1D) -> float:
    """(1/eps^2) W2^2(projection, barycenter atoms) with eps = 1/N.

    Computed from the actual cell bounds and barycenters; equals 1/12
    for every configuration (cells have length 1/N, barycenter at the
    midpoint)."""
    clusters, beta = project_crowd_1d(p)
    n = len(p)
    w2 = 0.0
    for s, f, l in zip(clusters.starts, clusters.first, clusters.last):
        for k in range(f, l + 1):
            lo = s + (k - f) / n
            hi = lo + 1.0 / n
            w2 += ((hi - beta[k]) ** 3 - (lo - beta[k]) ** 3) / 3.0
    return w2 * n * n  # eps = 1/N


# ---------------------------------------------------------------------------
# entropic dual in 1D (error-function integrals)
# ---------------------------------------------------------------------------


def _gauss_mass(lo, hi, x, eps):
    s = math.sqrt(2.0 * eps)
    t0, t1 = (lo - x) / s, (hi - x) / s
    # erfc in the tails avoids the cancellation of erf(t1) - erf(t0)
    if t0 >= 0.0:
        d = erfc(t0) - erfc(t1)
    elif t1 <= 0.0:
        d = erfc(-t1) - erfc(-t0)
    else:
        d = erf(t1) - erf(t0)
    return math.sqrt(math.pi * eps / 2.0) * max(float(d), 0.0)


def _gauss_m1(lo, hi, x, eps):
    # int (y - x) exp(-(y-x)^2/2eps) dy
    return eps * (math.exp(-((lo - x) ** 2) / (2 * eps)) - math.exp(-((hi - x) ** 2) / (2 * eps)))


def _gauss_m2(lo, hi, x, eps):
    # int (y - x)^2 exp(-(y-x)^2/2eps) dy
    t0, t1 = lo - x, hi - x
    return eps * (t0 * math.exp(-(t0**2) / (2 * eps)) - t1 * math.exp(-(t1**2) / (2 * eps))) + eps * _gauss_mass(
        lo, hi, x, eps
    )


def _cells_1d(x, psi, a, b):
    """Laguerre cell boundaries on [a, b] from all pairwise constraints."""
    n = len(x)
    lo = np.full(n, float(a))
    hi = np.full(n, float(b))
    # y | (y-xi)^2 - psi_i <= (y-xj)^2 - psi_j, i.e. a half-line per pair
    for i in range(n):
        dx = x - x[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            c = (x**2 - x[i] ** 2 + psi[i] - psi) / (2.0 * dx)
        right = dx > 0  # constraint y <= c
        left = dx < 0  # constraint y >= c
        if right.any():
            hi[i] = min(hi[i], c[right].min())
        if left.any():
            lo[i] = max(lo[i], c[left].max())
    return lo, hi


def entropy_dual_1d(p: Particles1D, tol_scale=1e-12, max_iter=200):
    """Newton solve of the entropic mass system with closed-form masses.

    Returns (psi, (lo, hi) cell boundaries, barycenters).  Residual target
    is tol_scale / N on the max mass deviation."""
    x = p.positions
    n = len(x)
    a, b = p.interval
    eps = p.eps
    psi = np.full(n, 2.0 * eps * math.log(1.0 / (n * math.sqrt(2.0 * math.pi * eps))))
    target = 1.0 / n
    tol = tol_scale / n

    def masses(psi):
        lo, hi = _cells_1d(x, psi, a, b)
        lo = np.minimum(np.maximum(lo, a), b)
        hi = np.maximum(np.minimum(hi, b), lo)
        m = np.array(
            [math.exp(psi[i] / (2 * eps)) * _gauss_mass(lo[i], hi[i], x[i], eps) for i in range(n)]
        )
        return m, lo, hi

    m, lo, hi = masses(psi)
    for it in range(max_iter):
        r = m - target
        if np.abs(r).max() <= tol:
            break
        # Jacobian: weight factor on the diagonal plus boundary motion terms
        J = np.zeros((n, n))
        for i in range(n):
            J[i, i] = m[i] / (2 * eps)
        order = np.argsort(x)
        for k in range(n - 1):
            i, j = order[k], order[k + 1]
            c = hi[i]
            if a < c < b and abs(c - lo[j]) < 1e-9 * max(1.0, b - a):
                w = math.exp(psi[i] / (2 * eps)) * math.exp(-((c - x[i]) ** 2) / (2 * eps))
                d = 2.0 * abs(x[j] - x[i])
                J[i, i] += w / d
                J[j, j] += w / d
                J[i, j] -= w / d
                J[j, i] -= w / d
        delta = np.linalg.solve(J, -r)
        rn = np.linalg.norm(r)
        step = 1.0
        for _ in range(50):
            m_t, lo_t, hi_t = masses(psi + step * delta)
            if m_t.min() > 0 and np.linalg.norm(m_t - target) <= (1 - step / 2) * rn:
                psi = psi + step * delta
                m, lo, hi = m_t, lo_t, hi_t
                break
            step *= 0.5
        else:
            raise NoConvergence("1d entropy damping exhausted")
    else:
        raise NoConvergence(f"1d entropy Newton did not converge below {tol:g}")
    beta = x + np.array(
        [math.exp(psi[i] / (2 * eps)) * _gauss_m1(lo[i], hi[i], x[i], eps) for i in range(n)]
    ) / m
    return psi, (lo, hi), beta


def verify_diffusion_bound(p: Particles1D):
    """(lhs, bound) of the entropic quantization estimate:

    lhs = sum_i int_{L_i} (y - beta_i)^2 dsigma_N(y) computed by
    error-function moments, bound = (3/2) |Omega| sqrt(eps) / N."""
    x = p.positions
    n = len(x)
    eps = p.eps
    a, b = p.interval
    psi, (lo, hi), beta = entropy_dual_1d(p)
    lhs = 0.0
    for i in range(n):
        w = math.exp(psi[i] / (2 * eps))
        m = w * _gauss_mass(lo[i], hi[i], x[i], eps)
        m1 = w * _gauss_m1(lo[i], hi[i], x[i], eps)
        m2 = w * _gauss_m2(lo[i], hi[i], x[i], eps)
        # second moment about the cell barycenter
        lhs += m2 - m1 * m1 / m
    bound = 1.5 * (b - a) * math.sqrt(eps) / n
    return lhs, bound


def truncated_gaussian_variance(lo, hi, x, eps):
    """Variance of the Gaussian weight exp(-(y-x)^2/2eps) restricted to
    [lo, hi]; always bounded by the full variance eps."""
    m = _gauss_mass(lo, hi, x, eps)
    if m <= 0.0:
        return 0.0
    m1 = _gauss_m1(lo, hi, x, eps)
    m2 = _gauss_m2(lo, hi, x, eps)
    return m2 / m - (m1 / m) ** 2


def run_flow_1d(p: Particles1D, mode, grad_v, tau, T):
    """Explicit Euler flow in 1D; logs the accumulated barycenter spread
    (1/eps^2 or 1/eps) int W2^2(sigma_N, barycenter atoms) dt.

    Returns (history of positions, hypothesis integral)."""
    x = np.array(p.positions)
    n = len(x)
    eps = p.eps
    a, b = p.interval
    steps = int(math.ceil(T / tau - 1e-12))
    hist = [x.copy()]
    integral = 0.0
    x = np.sort(x)
    for _ in range(steps):
        q = Particles1D(x, eps=eps, interval=(a, b))
        if mode == "crowd":
            _, beta = project_crowd_1d(q)
            integral += tau * (1.0 / (12.0 * n * n)) / eps**2
        else:
            _, _, beta = entropy_dual_1d(q)
            lhs, _ = verify_diffusion_bound(q)
            integral += tau * lhs / eps
        v = (beta - x) / eps - grad_v(x)
        x = np.sort(np.clip(x + tau * v, a, b))
        hist.append(x.copy())
    return np.array(hist), integral
