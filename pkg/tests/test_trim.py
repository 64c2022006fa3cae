import numpy as np
import pytest
from scipy.integrate import quad

from shellrom.bspline import GeometryMap, KnotVector, TensorSpace, uniform_knots
from shellrom.errors import ConfigError, FullyTrimmedError
from shellrom.trim import (
    CUT,
    EXTERIOR,
    INTERIOR,
    AffinePoint,
    CircleTrim,
    SplineCurveTrim,
    active_functions,
    arc_quadrature,
    classify_elements,
    curve_on_surface,
    cut_quadrature,
    eval_curve,
    find_axis_crossings,
    resolve_trims,
    tensor_gauss,
)

MU0 = np.array([])


def center_circle(radius=0.2, cut_inside=True):
    return CircleTrim(AffinePoint(np.array([0.5, 0.5])), radius, cut_inside)


def quadratic_interface_curve(cut_side="right"):
    """Trim curve of the two-patch planar fixture: x bulges with mu."""
    kv = KnotVector(2, np.array([0, 0, 0, 1, 1, 1.0]))
    cps = (
        AffinePoint(np.array([0.5, 0.0])),
        AffinePoint(np.array([0.0, 0.5]), np.array([[1.0], [0.0]])),
        AffinePoint(np.array([0.5, 1.0])),
    )
    return SplineCurveTrim(kv, cps, cut_side)


def vertical_line_trim(x0=0.5, cut_side="left"):
    kv = KnotVector(2, np.array([0, 0, 0, 1, 1, 1.0]))
    cps = tuple(AffinePoint(np.array([x0, y])) for y in (0.0, 0.5, 1.0))
    return SplineCurveTrim(kv, cps, cut_side)


def flat_identity_map(n_elements=1, degree=2, scale=1.0):
    kv = uniform_knots(degree, n_elements)
    space = TensorSpace(kv, kv)
    g = kv.greville()
    ctrl = np.zeros((kv.n, kv.n, 3))
    ctrl[:, :, 0] = scale * g[:, None]
    ctrl[:, :, 1] = scale * g[None, :]
    return GeometryMap(space, ctrl.reshape(-1, 3))


class TestClassification:
    def test_no_trims_all_interior(self):
        space = TensorSpace(uniform_knots(2, 4), uniform_knots(2, 4))
        cls = classify_elements(space, [], MU0)
        assert np.all(cls.tags == INTERIOR)

    def test_huge_circle_all_exterior(self):
        space = TensorSpace(uniform_knots(2, 4), uniform_knots(2, 4))
        cls = classify_elements(space, [center_circle(radius=10.0)], MU0)
        assert np.all(cls.tags == EXTERIOR)

    def test_matches_dense_sampling_oracle(self):
        space = TensorSpace(uniform_knots(3, 8), uniform_knots(3, 8))
        trims = [center_circle()]
        cls = classify_elements(space, trims, MU0)
        resolved = resolve_trims(trims, MU0)
        bu, bv = space.element_bounds()
        for eu in range(8):
            for ev in range(8):
                gx = np.linspace(bu[eu, 0], bu[eu, 1], 50)
                gy = np.linspace(bv[ev, 0], bv[ev, 1], 50)
                pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), -1).reshape(-1, 2)
                s = resolved[0].signed_distance(pts)
                if np.all(s > 0):
                    expect = INTERIOR
                elif np.all(s < 0):
                    expect = EXTERIOR
                else:
                    expect = CUT
                assert cls.tags[eu, ev] == expect, (eu, ev)


class TestActiveFunctions:
    def test_untrimmed_all_active(self):
        space = TensorSpace(uniform_knots(2, 4), uniform_knots(2, 4))
        cls = classify_elements(space, [], MU0)
        idx = active_functions(space, cls)
        np.testing.assert_array_equal(idx, np.arange(space.n))

    def test_fully_trimmed_raises(self):
        space = TensorSpace(uniform_knots(2, 4), uniform_knots(2, 4))
        cls = classify_elements(space, [center_circle(radius=10.0)], MU0)
        with pytest.raises(FullyTrimmedError):
            active_functions(space, cls)

    def test_matches_support_overlap_oracle(self):
        space = TensorSpace(uniform_knots(3, 8), uniform_knots(3, 8))
        cls = classify_elements(space, [center_circle()], MU0)
        idx = active_functions(space, cls)

        # brute force: function (iu, iv) is active iff one of its support
        # elements is non-exterior
        p = 3
        su = space.kv_u.spans()
        expect = []
        for iu in range(space.kv_u.n):
            for iv in range(space.kv_v.n):
                eu_list = [e for e, s in enumerate(su) if iu <= s <= iu + p]
                ev_list = [e for e, s in enumerate(su) if iv <= s <= iv + p]
                active = any(cls.tags[eu, ev] != EXTERIOR
                             for eu in eu_list for ev in ev_list)
                if active:
                    expect.append(iu * space.kv_v.n + iv)
        np.testing.assert_array_equal(idx, np.array(expect))

    def test_ordering_stable_for_nearby_mu(self):
        space = TensorSpace(uniform_knots(3, 8), uniform_knots(3, 8))
        trim = CircleTrim(AffinePoint(np.array([0.45, 0.45]), np.eye(2)[:, :1]), 0.2)
        a = active_functions(space, classify_elements(space, [trim], np.array([0.01])))
        b = active_functions(space, classify_elements(space, [trim], np.array([0.0100001])))
        np.testing.assert_array_equal(a, b)


class TestCutQuadrature:
    def test_interior_element_plain_gauss(self):
        pts, w = cut_quadrature(((0.25, 0.5), (0.5, 0.75)), [], None, q=4)
        assert pts.shape == (16, 2)
        assert abs(w.sum() - 0.0625) < 1e-14

    def test_half_plane_cut(self):
        trims = [vertical_line_trim(0.5, cut_side="left")]
        pts, w = cut_quadrature(((0.0, 0.0), (1.0, 1.0)), trims, MU0, q=4, depth=6)
        assert abs(w.sum() - 0.5) < 1e-10
        assert np.all(pts[:, 0] > 0.5)

    def test_circle_area_on_mesh(self):
        space = TensorSpace(uniform_knots(3, 8), uniform_knots(3, 8))
        trims = [center_circle()]
        cls = classify_elements(space, trims, MU0)
        resolved = resolve_trims(trims, MU0)
        bu, bv = space.element_bounds()
        total = 0.0
        for eu in range(8):
            for ev in range(8):
                if cls.tags[eu, ev] == EXTERIOR:
                    continue
                lo, hi = (bu[eu, 0], bv[ev, 0]), (bu[eu, 1], bv[ev, 1])
                if cls.tags[eu, ev] == INTERIOR:
                    _, w = tensor_gauss(4, lo, hi)
                else:
                    _, w = cut_quadrature((lo, hi), resolved, None, q=4, depth=6)
                total += w.sum()
        assert abs(total - (1.0 - 0.04 * np.pi)) <= 1e-5

    def test_monotone_refinement(self):
        trims = resolve_trims([center_circle(radius=0.3)], MU0)
        exact = 1.0 - np.pi * 0.09
        errs = []
        for depth in (3, 4, 5):
            _, w = cut_quadrature(((0.0, 0.0), (1.0, 1.0)), trims, None, q=4, depth=depth)
            errs.append(abs(w.sum() - exact))
        assert errs[1] < errs[0] and errs[2] < errs[1]

    def test_weights_positive_points_active(self):
        trims = resolve_trims([center_circle()], MU0)
        pts, w = cut_quadrature(((0.375, 0.375), (0.5, 0.5)), trims, None, q=4, depth=5)
        assert np.all(w > 0)
        assert np.all(trims[0].signed_distance(pts) > 0)

    def test_bad_depth_raises(self):
        with pytest.raises(ConfigError):
            cut_quadrature(((0, 0), (1, 1)), [center_circle()], MU0, depth=0)


class TestInterfaceQuadrature:
    def test_straight_edge_length(self):
        geom = flat_identity_map()
        curve = vertical_line_trim(0.5).at(MU0)
        t, w, tang = arc_quadrature(curve_on_surface(curve, geom), np.array([0.0, 1.0]), 5)
        assert abs(w.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(tang[:, 1], 1.0, atol=1e-12)

    @pytest.mark.parametrize("mu", [0.5, 0.3])
    def test_matches_adaptive_arc_length_oracle(self, mu):
        geom = flat_identity_map()
        curve = quadratic_interface_curve().at(np.array([mu]))
        part = np.linspace(0, 1, 9)
        _, w, _ = arc_quadrature(curve_on_surface(curve, geom), part, 6)

        def speed(t):
            _, d = curve.point(np.array([t]), 1)
            return float(np.hypot(d[0, 0], d[0, 1]))

        oracle, err = quad(speed, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
        assert abs(w.sum() - oracle) <= 1e-8 * oracle

    def test_length_scales_with_map(self):
        curve = quadratic_interface_curve().at(np.array([0.35]))
        part = np.linspace(0, 1, 5)
        _, w1, _ = arc_quadrature(curve_on_surface(curve, flat_identity_map()), part, 6)
        _, w2, _ = arc_quadrature(curve_on_surface(curve, flat_identity_map(scale=2.0)), part, 6)
        assert abs(w2.sum() - 2.0 * w1.sum()) <= 1e-12 * w2.sum()


class TestCurveUtilities:
    def test_eval_curve_endpoint_and_tangent(self):
        curve = quadratic_interface_curve().at(np.array([0.25]))
        C, Cp = curve.point(np.array([0.0, 1.0]), 1)
        np.testing.assert_allclose(C[0], [0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(C[1], [0.5, 1.0], atol=1e-15)
        # y-component of the Bezier with y-ctrl (0, .5, 1) is linear: y = t
        mid = curve.point(np.array([0.37]), 0)[0]
        assert abs(mid[0, 1] - 0.37) < 1e-14

    def test_find_axis_crossings(self):
        curve = quadratic_interface_curve().at(np.array([0.25]))
        # x(t) = 0.5 - 0.5 t (1 - t); x = 0.4375 at t(1-t) = 1/8
        expect = np.roots([1, -1, 0.125])
        roots = find_axis_crossings(curve, axis=0, values=np.array([0.4375]))
        np.testing.assert_allclose(roots, sorted(expect), atol=1e-10)
        roots_y = find_axis_crossings(curve, axis=1, values=np.array([0.5]))
        np.testing.assert_allclose(roots_y, [0.5], atol=1e-12)
