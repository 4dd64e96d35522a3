import math

import numpy as np
import pytest

import wgflow.geometry as geo
from wgflow.errors import CoincidentPoints


def square_cell(side=1.0):
    s = side
    loop = [
        geo.Segment((0, 0), (s, 0), geo.TAG_DOMAIN),
        geo.Segment((s, 0), (s, s), geo.TAG_DOMAIN),
        geo.Segment((s, s), (0, s), geo.TAG_DOMAIN),
        geo.Segment((0, s), (0, 0), geo.TAG_DOMAIN),
    ]
    return geo.CellRegion(owner=0, loops=[loop])


class TestDomainGeometry:
    def test_total_area_and_bbox(self):
        dom = geo.bimodal_domain()
        a = 2.0 / math.sqrt(math.pi)
        assert dom.total_area == pytest.approx(2 * a * a + a * a / 9, rel=1e-12)
        assert dom.bbox == pytest.approx((0.0, 0.0, 7 * a / 3, a))

    def test_rejects_cw_polygon(self):
        with pytest.raises(ValueError):
            geo.DomainGeometry([[(0, 0), (0, 1), (1, 1), (1, 0)]])

    def test_rejects_nonconvex(self):
        with pytest.raises(ValueError):
            geo.DomainGeometry([[(0, 0), (2, 0), (2, 2), (1, 0.5), (0, 2)]])

    def test_rejects_overlapping_pieces(self):
        with pytest.raises(ValueError):
            geo.DomainGeometry(
                [
                    [(0, 0), (1, 0), (1, 1), (0, 1)],
                    [(0.5, 0.5), (1.5, 0.5), (1.5, 1.5), (0.5, 1.5)],
                ]
            )

    def test_contains_and_project(self):
        dom = geo.bimodal_domain()
        a = 2.0 / math.sqrt(math.pi)
        pts = np.array([[a / 2, a / 2], [1.1 * a, a / 2], [1.1 * a, 0.05 * a], [-1.0, -1.0]])
        inside = dom.contains(pts)
        assert list(inside) == [True, True, False, False]
        p = dom.project_point(np.array([-1.0, -1.0]))
        assert p == pytest.approx([0.0, 0.0])

    def test_sector_area_converges(self):
        a64 = geo.radial_sector_domain(R=2.0, arc_segments=64).total_area
        a256 = geo.radial_sector_domain(R=2.0, arc_segments=256).total_area
        assert abs(a256 - math.pi) < abs(a64 - math.pi)
        assert a256 == pytest.approx(math.pi, rel=1e-4)


class TestParticleSet:
    def test_rejects_coincident(self):
        with pytest.raises(CoincidentPoints):
            geo.ParticleSet(np.array([[0.0, 0.0], [0.0, 0.0]]), eps=0.1)

    def test_min_distance(self):
        ps = geo.ParticleSet(np.array([[0.0, 0.0], [3.0, 4.0]]), eps=0.1)
        assert ps.min_pairwise_distance() == pytest.approx(5.0)


class TestPowerDiagram:
    def test_single_particle_cell_is_domain(self):
        dom = geo.radial_sector_domain(R=2.0, arc_segments=64)
        ps = geo.ParticleSet(np.array([[0.0, 1.0]]), eps=0.1)
        cells = geo.build_power_diagram(ps, np.zeros(1), dom)
        area, _, _ = geo.cell_moments(cells[0])
        assert area == pytest.approx(dom.total_area, rel=1e-12)

    def test_equal_weights_is_voronoi(self, rng):
        # with equal psi the separating lines are plain bisectors
        dom = geo.square_domain(side=1.0, origin=(0, 0))
        X = np.array([[0.25, 0.5], [0.75, 0.5]])
        ps = geo.ParticleSet(X, eps=0.1)
        cells = geo.build_power_diagram(ps, np.zeros(2), dom)
        a0, b0, _ = geo.cell_moments(cells[0])
        assert a0 == pytest.approx(0.5, abs=1e-14)
        assert b0 == pytest.approx([0.25, 0.5], abs=1e-14)

    def test_two_point_shifted_bisector_monte_carlo(self, rng):
        # psi shift moves the separating line by delta/(2 |x1-x2|); areas are
        # checked against a 1e6-sample Monte Carlo oracle to 3 decimals
        dom = geo.square_domain(side=1.0, origin=(0, 0))
        X = np.array([[0.3, 0.5], [0.7, 0.5]])
        delta = 0.13
        ps = geo.ParticleSet(X, eps=0.1)
        cells = geo.build_power_diagram(ps, np.array([delta, 0.0]), dom)
        a0 = geo.cell_moments(cells[0])[0]
        a1 = geo.cell_moments(cells[1])[0]
        xline = 0.5 + delta / (2 * 0.4)
        assert a0 == pytest.approx(xline, abs=1e-12)
        samples = rng.random((1_000_000, 2))
        d0 = ((samples - X[0]) ** 2).sum(axis=1) - delta
        d1 = ((samples - X[1]) ** 2).sum(axis=1)
        mc = (d0 <= d1).mean()
        assert a0 == pytest.approx(mc, abs=1.5e-3)
        assert a1 == pytest.approx(1.0 - mc, abs=1.5e-3)

    def test_partition_facets_equivariance(self, rng):
        dom = geo.bimodal_domain()
        pts = dom.sample(rng, 80)
        psi = rng.normal(0.0, 0.01, 80)
        ps = geo.ParticleSet(pts, eps=0.1)
        cells = geo.build_power_diagram(ps, psi, dom)
        # partition of mass
        total = sum(geo.cell_moments(c)[0] for c in cells)
        assert total == pytest.approx(dom.total_area, rel=1e-9)
        # facet symmetry
        facets = [c.facet_lengths() for c in cells]
        for i, f in enumerate(facets):
            for j, L in f.items():
                if L > 1e-12:
                    assert facets[j][i] == pytest.approx(L, rel=1e-10)
        # translation equivariance of barycenters
        v = np.array([1.5, -2.5])
        dom_t = geo.DomainGeometry([p + v for p in dom.pieces])
        cells_t = geo.build_power_diagram(geo.ParticleSet(pts + v, eps=0.1), psi, dom_t)
        for c, ct in zip(cells, cells_t):
            a, b, m2 = geo.cell_moments(c)
            at, bt, m2t = geo.cell_moments(ct)
            assert at == pytest.approx(a, rel=1e-11)
            if b is not None:
                np.testing.assert_allclose(bt, b + v, atol=1e-12 * 10)
                assert m2t == pytest.approx(m2, rel=1e-9, abs=1e-15)

    def test_hull_pruning_matches_all_pairs(self, rng):
        dom = geo.square_domain(side=2.0)
        pts = dom.sample(rng, 150)
        psi = rng.normal(0.0, 0.02, 150)
        ps = geo.ParticleSet(pts, eps=0.1)
        cells_h = geo.build_power_diagram(ps, psi, dom)
        nb = [sorted(set(range(150)) - {i}) for i in range(150)]
        cells_a = geo.build_power_diagram(ps, psi, dom, neighbors=nb)
        for ch, ca in zip(cells_h, cells_a):
            assert geo.cell_moments(ch)[0] == pytest.approx(geo.cell_moments(ca)[0], abs=1e-13)

    def test_degenerate_grid_configuration(self):
        # cocircular lifted points (regular grid, equal weights)
        xs = np.arange(5) / 4.0
        X = np.column_stack([np.repeat(xs, 5), np.tile(xs, 5)])
        dom = geo.square_domain(side=1.0, origin=(0, 0))
        ps = geo.ParticleSet(X, eps=0.1)
        cells = geo.build_power_diagram(ps, np.zeros(25), dom)
        total = sum(geo.cell_moments(c)[0] for c in cells)
        assert total == pytest.approx(1.0, rel=1e-9)

    def test_monotone_in_psi(self, rng):
        dom = geo.square_domain(side=1.0, origin=(0, 0))
        pts = dom.sample(rng, 12)
        psi = rng.normal(0.0, 0.005, 12)
        ps = geo.ParticleSet(pts, eps=0.1)
        base = geo.build_power_diagram(ps, psi, dom)
        for i in (0, 5, 11):
            psi2 = psi.copy()
            psi2[i] += 0.01
            grown = geo.build_power_diagram(ps, psi2, dom)
            assert geo.cell_moments(grown[i])[0] >= geo.cell_moments(base[i])[0] - 1e-14


class TestDiskClipping:
    def test_cell_inside_disk_unchanged(self):
        cell = square_cell()
        out = geo.clip_with_disk(cell, (0.5, 0.5), 10.0)
        assert geo.cell_moments(out)[0] == pytest.approx(1.0, abs=1e-15)
        assert out.arc_length() == 0.0

    def test_disk_inside_cell(self):
        cell = square_cell()
        out = geo.clip_with_disk(cell, (0.5, 0.5), 0.25)
        a, b, m2 = geo.cell_moments(out)
        assert a == pytest.approx(math.pi * 0.25**2, rel=1e-12)
        assert b == pytest.approx([0.5, 0.5], abs=1e-12)
        assert m2 == pytest.approx(math.pi * 0.25**4 / 2, rel=1e-12)
        assert out.arc_length() == pytest.approx(2 * math.pi * 0.25, rel=1e-12)

    def test_quarter_disk_at_corner(self):
        cell = square_cell()
        out = geo.clip_with_disk(cell, (0.0, 0.0), 0.5)
        assert geo.cell_moments(out)[0] == pytest.approx(math.pi / 16, rel=1e-12)

    def test_zero_radius_empty(self):
        out = geo.clip_with_disk(square_cell(), (0.5, 0.5), 0.0)
        assert out.is_empty

    def test_disjoint_disk_empty(self):
        out = geo.clip_with_disk(square_cell(), (5.0, 5.0), 0.5)
        assert geo.cell_moments(out)[0] == 0.0

    def test_chord_segment_area(self):
        # disk centered below the bottom edge: a circular segment remains
        r, d = 0.5, 0.3
        out = geo.clip_with_disk(square_cell(), (0.5, -d), r)
        want = r * r * math.acos(d / r) - d * math.sqrt(r * r - d * d)
        assert geo.cell_moments(out)[0] == pytest.approx(want, rel=1e-12)

    def test_clip_consistency_bound(self, rng):
        dom = geo.bimodal_domain()
        pts = dom.sample(rng, 30)
        ps = geo.ParticleSet(pts, eps=0.1)
        cells = geo.build_power_diagram(ps, rng.normal(0, 0.01, 30), dom)
        for i in (0, 7, 29):
            a_cell = geo.cell_moments(cells[i])[0]
            for r in (0.01, 0.1, 0.5):
                a = geo.cell_moments(geo.clip_with_disk(cells[i], pts[i], r))[0]
                assert a <= min(a_cell, math.pi * r * r) + 1e-12

    def test_facet_lengths_survive_clip(self):
        # two half-square cells clipped by a disk on the shared edge
        dom = geo.square_domain(side=1.0, origin=(0, 0))
        X = np.array([[0.25, 0.5], [0.75, 0.5]])
        ps = geo.ParticleSet(X, eps=0.1)
        cells = geo.build_power_diagram(ps, np.zeros(2), dom)
        r = 0.3
        clipped = geo.clip_with_disk(cells[0], X[0], r)
        # the bisector x = 0.5 intersects B((0.25, 0.5), 0.3):
        # chord half-length sqrt(r^2 - 0.25^2)
        want = 2 * math.sqrt(r * r - 0.25**2)
        assert clipped.facet_lengths()[1] == pytest.approx(want, rel=1e-12)


class TestMoments:
    def test_unit_square(self):
        a, b, m2 = geo.cell_moments(square_cell())
        assert a == pytest.approx(1.0)
        assert b == pytest.approx([0.5, 0.5])
        assert m2 == pytest.approx(1.0 / 6.0, rel=1e-12)

    def test_empty(self):
        a, b, m2 = geo.cell_moments(geo.CellRegion(owner=0, loops=[]))
        assert (a, b, m2) == (0.0, None, 0.0)

    def test_thin_rectangle_matches_1d_cell_variance(self):
        # [0, 1/N] x [0, w]: per-width second moment about the midpoint of the
        # long axis tends to the 1D value 1/(12 N^2) as w -> 0
        n, w = 7, 1e-6
        loop = [
            geo.Segment((0, 0), (1 / n, 0), -1),
            geo.Segment((1 / n, 0), (1 / n, w), -1),
            geo.Segment((1 / n, w), (0, w), -1),
            geo.Segment((0, w), (0, 0), -1),
        ]
        cell = geo.CellRegion(owner=0, loops=[loop])
        a, b, m2 = geo.cell_moments(cell)
        assert a == pytest.approx(w / n, rel=1e-9)
        # remove the transverse contribution w^2/12 and normalize by the area
        per_width = (m2 - a * w * w / 12.0) / a
        assert per_width == pytest.approx(1.0 / (12 * n * n), rel=1e-6)


class TestGaussianIntegrals:
    def test_full_plane_limit(self):
        eps = 0.07
        s = 40.0
        loop = [
            geo.Segment((-s, -s), (s, -s), -1),
            geo.Segment((s, -s), (s, s), -1),
            geo.Segment((s, s), (-s, s), -1),
            geo.Segment((-s, s), (-s, -s), -1),
        ]
        cell = geo.CellRegion(owner=0, loops=[loop])
        mass, bary = geo.gaussian_cell_integrals(cell, (0.0, 0.0), 0.0, eps)
        assert mass == pytest.approx(2 * math.pi * eps, rel=1e-10)
        assert bary == pytest.approx([0.0, 0.0], abs=1e-12)

    def test_flat_weight_limit(self):
        # eps large: the weight tends to exp(psi/2eps) ~ const, mass -> area
        cell = square_cell()
        eps = 1e6
        mass, _ = geo.gaussian_cell_integrals(cell, (0.5, 0.5), 0.0, eps)
        assert mass == pytest.approx(1.0, rel=1e-5)

    def test_half_plane_erf_product(self):
        # cell = {x >= 0} emulated by a large box; oracle: 1D erf x Gaussian
        eps, psi = 0.05, 0.12
        s = 8.0
        loop = [
            geo.Segment((0, -s), (s, -s), -1),
            geo.Segment((s, -s), (s, s), -1),
            geo.Segment((s, s), (0, s), -1),
            geo.Segment((0, s), (0, -s), -1),
        ]
        cell = geo.CellRegion(owner=0, loops=[loop])
        mass, _ = geo.gaussian_cell_integrals(cell, (0.0, 0.0), psi, eps)
        want = math.pi * eps * math.exp(psi / (2 * eps))
        assert mass == pytest.approx(want, rel=1e-10)

    def test_segment_line_integral(self):
        from scipy.special import erf

        eps = 0.1
        got = geo.gaussian_segment_integrals(
            np.array([[-2.0, 0.3]]), np.array([[3.0, 0.3]]), (0.1, 0.0), 0.05, eps
        )[0]
        s = math.sqrt(2 * eps)
        want = (
            math.exp(0.05 / (2 * eps))
            * math.exp(-0.09 / (2 * eps))
            * math.sqrt(math.pi * eps / 2)
            * (erf((3 - 0.1) / s) - erf((-2 - 0.1) / s))
        )
        assert got == pytest.approx(want, rel=1e-13)

    def test_quadrature_rules_exact_on_monomials(self):
        from math import factorial

        tri = np.array([[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]])

        def integrate(rule, a, b):
            xr, yr, wr = rule
            e1 = tri[:, 1, :] - tri[:, 0, :]
            e2 = tri[:, 2, :] - tri[:, 0, :]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            px = np.outer(e1[:, 0], xr) + np.outer(e2[:, 0], yr)
            py = np.outer(e1[:, 1], xr) + np.outer(e2[:, 1], yr)
            return float(((px**a) * (py**b) * wr[None, :] * det[:, None]).sum())

        for a in range(9):
            for b in range(9 - a):
                exact = factorial(a) * factorial(b) / factorial(a + b + 2)
                assert integrate(geo._RULE8, a, b) == pytest.approx(exact, rel=1e-13)
                if a + b <= 5:
                    assert integrate(geo._RULE5, a, b) == pytest.approx(exact, rel=1e-13)
