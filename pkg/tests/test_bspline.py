import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellrom.bspline import (
    GeometryMap,
    KnotVector,
    TensorSpace,
    eval_basis,
    eval_basis_many,
    eval_geometry,
    fit_circular_arc,
    surface_frame,
    surface_frame_batch,
    uniform_knots,
)
from shellrom.errors import DomainError, SingularGeometryError


def make_flat_map(degree=2, n_elements=4, scale=1.0):
    kv = uniform_knots(degree, n_elements)
    space = TensorSpace(kv, kv)
    gu = kv.greville()
    ctrl = np.zeros((kv.n, kv.n, 3))
    ctrl[:, :, 0] = scale * gu[:, None]
    ctrl[:, :, 1] = scale * gu[None, :]
    return GeometryMap(space, ctrl.reshape(-1, 3))


def make_cylinder_map(n_arc=64, degree=3, radius=25.0, length=50.0, span_deg=80.0):
    span = np.deg2rad(span_deg)
    kv, arc = fit_circular_arc(radius, -span / 2, span / 2, degree, n_arc)
    kv_ax = uniform_knots(1, 1)
    ctrl = np.zeros((kv.n, 2, 3))
    ctrl[:, :, 0] = arc[:, 0:1]
    ctrl[:, :, 2] = arc[:, 1:2]
    ctrl[:, 1, 1] = length
    return GeometryMap(TensorSpace(kv, kv_ax), ctrl.reshape(-1, 3))


class TestKnotVector:
    def test_counts(self):
        kv = uniform_knots(2, 4)
        assert kv.n == 6
        assert kv.knots.size == kv.n + kv.degree + 1

    def test_rejects_non_open(self):
        with pytest.raises(ValueError):
            KnotVector(2, np.array([0, 0, 0.5, 1, 1, 1.0]))

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            KnotVector(2, np.array([0, 0, 0, 0.6, 0.4, 1, 1, 1.0]))

    def test_rejects_high_multiplicity(self):
        with pytest.raises(ValueError):
            KnotVector(2, np.array([0, 0, 0, 0.5, 0.5, 0.5, 1, 1, 1.0]))


class TestEvalBasis:
    def test_bernstein_midpoint(self):
        kv = KnotVector(2, np.array([0, 0, 0, 1, 1, 1.0]))
        first, vals = eval_basis(kv, 0.5, 0)
        assert first == 0
        np.testing.assert_allclose(vals[0], [0.25, 0.5, 0.25], atol=1e-15)

    def test_partition_of_unity(self):
        kv = uniform_knots(3, 7)
        xs = np.random.default_rng(7).uniform(0, 1, 100)
        _, ders = eval_basis_many(kv, xs, 1)
        assert np.abs(ders[:, 0].sum(axis=1) - 1.0).max() <= 1e-12
        assert np.abs(ders[:, 1].sum(axis=1)).max() <= 1e-12 * 100

    def test_first_derivative_vs_finite_difference(self):
        kv = KnotVector(2, np.array([0, 0, 0, 0.5, 1, 1, 1.0]))
        xi, h = 0.25, 1e-7
        _, d = eval_basis(kv, xi, 1)
        _, vp = eval_basis(kv, xi + h, 0)
        _, vm = eval_basis(kv, xi - h, 0)
        fd = (vp[0] - vm[0]) / (2 * h)
        np.testing.assert_allclose(d[1], fd, rtol=1e-5)

    def test_outside_domain_raises(self):
        kv = uniform_knots(2, 3)
        with pytest.raises(DomainError):
            eval_basis(kv, 1.5, 0)

    def test_order_above_degree_is_zero(self):
        kv = KnotVector(1, np.array([0, 0, 0.5, 1, 1.0]))
        _, d = eval_basis(kv, 0.3, 2)
        np.testing.assert_array_equal(d[2], 0.0)

    @settings(deadline=None, max_examples=25)
    @given(
        p=st.integers(2, 3),
        nel=st.integers(1, 6),
        x=st.floats(0.0, 1.0),
    )
    def test_partition_of_unity_property(self, p, nel, x):
        kv = uniform_knots(p, nel)
        _, d = eval_basis(kv, x, 0)
        assert abs(d[0].sum() - 1.0) < 1e-12


class TestGeometryMap:
    def test_identity_flat_derivatives(self):
        geom = make_flat_map()
        x, d1, d2 = eval_geometry(geom, (0.3, 0.7))
        np.testing.assert_allclose(x, [0.3, 0.7, 0.0], atol=1e-13)
        np.testing.assert_allclose(d1[0], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(d1[1], [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(d2, 0.0, atol=1e-10)

    def test_scaled_map_linearity(self):
        geom = make_flat_map(scale=2.0)
        _, d1, _ = eval_geometry(geom, (0.4, 0.6))
        np.testing.assert_allclose(d1[0], [2, 0, 0], atol=1e-12)

    def test_linear_reproduction(self):
        # control points sampled from a global linear function reproduce it
        kv = uniform_knots(3, 5)
        space = TensorSpace(kv, kv)
        gu = kv.greville()
        a, b, c = 1.25, -0.5, 0.75
        ctrl = np.zeros((kv.n, kv.n, 3))
        ctrl[:, :, 0] = gu[:, None]
        ctrl[:, :, 1] = gu[None, :]
        ctrl[:, :, 2] = a * gu[:, None] + b * gu[None, :] + c
        geom = GeometryMap(space, ctrl.reshape(-1, 3))
        pts = np.random.default_rng(3).uniform(0, 1, (50, 2))
        x, _, _ = geom.eval(pts, nders=0)
        exact = a * pts[:, 0] + b * pts[:, 1] + c
        assert np.abs(x[:, 2] - exact).max() <= 1e-12

    def test_cylinder_surface_measure(self):
        R, L, span = 25.0, 50.0, np.deg2rad(80.0)
        geom = make_cylinder_map(n_arc=256)
        pts = np.random.default_rng(5).uniform(0, 1, (40, 2))
        _, d1, d2 = geom.eval(pts, nders=2)
        fr = surface_frame_batch(d1, d2)
        assert np.abs(fr.jac - R * span * L).max() / (R * span * L) <= 1e-6

    def test_refinement_preserves_geometry(self):
        geom = make_cylinder_map(n_arc=8)
        fine = geom.refined(2, 3)
        pts = np.random.default_rng(11).uniform(0, 1, (100, 2))
        x0, _, _ = geom.eval(pts, nders=0)
        x1, _, _ = fine.eval(pts, nders=0)
        assert np.abs(x0 - x1).max() <= 1e-12 * 25.0


class TestSurfaceFrame:
    def test_flat_frame(self):
        geom = make_flat_map()
        fr = surface_frame(geom, (0.5, 0.25))
        np.testing.assert_allclose(fr.a3[0], [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(fr.acov[0], np.eye(2), atol=1e-12)
        np.testing.assert_allclose(fr.b[0], 0.0, atol=1e-12)

    def test_orthogonality_identity(self):
        geom = make_cylinder_map(n_arc=32)
        pts = np.random.default_rng(2).uniform(0, 1, (30, 2))
        _, d1, d2 = geom.eval(pts, nders=2)
        fr = surface_frame_batch(d1, d2)
        assert np.abs(np.einsum("gd,gd->g", fr.a1, fr.a3)).max() <= 1e-12 * 25
        assert np.abs(np.einsum("gd,gd->g", fr.a2, fr.a3)).max() <= 1e-12 * 50
        # a_alpha . a^beta = delta
        dot = np.einsum("gd,gbd->gb", fr.a1, fr.acon_vec)
        np.testing.assert_allclose(dot, np.tile([1.0, 0.0], (30, 1)), atol=1e-10)

    def test_metric_inverse_identity(self):
        geom = make_cylinder_map(n_arc=32)
        pts = np.random.default_rng(9).uniform(0, 1, (64, 2))
        _, d1, d2 = geom.eval(pts, nders=2)
        fr = surface_frame_batch(d1, d2)
        prod = np.einsum("gab,gbc->gac", fr.acon, fr.acov)
        assert np.abs(prod - np.eye(2)).max() <= 1e-10

    def test_cylinder_principal_curvature(self):
        R = 25.0
        geom = make_cylinder_map(n_arc=1024)
        pts = np.random.default_rng(4).uniform(0, 1, (20, 2))
        _, d1, d2 = geom.eval(pts, nders=2)
        fr = surface_frame_batch(d1, d2)
        kappa = np.abs(fr.b[:, 0, 0] / fr.acov[:, 0, 0])
        assert np.abs(kappa - 1.0 / R).max() * R <= 1e-6

    def test_degenerate_jacobian_raises(self):
        kv = uniform_knots(1, 1)
        space = TensorSpace(kv, kv)
        ctrl = np.zeros((4, 3))
        ctrl[:, 0] = [0.0, 0.0, 1.0, 1.0]  # collapsed: a1 parallel a2
        ctrl[:, 1] = [0.0, 0.0, 1.0, 1.0]
        geom = GeometryMap(space, ctrl)
        with pytest.raises(SingularGeometryError):
            surface_frame(geom, (0.5, 0.5))
