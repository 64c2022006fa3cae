import numpy as np
import pytest
import scipy.sparse as sp

from shellrom.bspline import GeometryMap, KnotVector, TensorSpace, uniform_knots
from shellrom.config import parse_config
from shellrom.benchmarks import plate_two_patch_trimmed, plate_amplitude, PLANE_7_2_2
from shellrom.errors import GeometryMismatchError
from shellrom.kl_shell import Material, h2_error_vs_exact
from shellrom.model import PatchDef, ShellModel, sine_bubble_load
from shellrom.multipatch import (
    InterfaceSpec,
    assemble_coupling,
    build_interfaces,
    penalty_coefficients,
    projection_values,
)
from shellrom.trim import AffinePoint, SplineCurveTrim

MAT = Material(**PLANE_7_2_2)


def rect_patch_def(pid, x0, x1, y0, y1, p, nel_u, nel_v, shift_knots=0.0):
    if shift_knots:
        def kv_dir(nel):
            k = uniform_knots(p, nel).knots.copy()
            k[p + 1:-(p + 1)] += shift_knots
            return KnotVector(p, k)
        ku, kv = kv_dir(nel_u), kv_dir(nel_v)
    else:
        ku, kv = uniform_knots(p, nel_u), uniform_knots(p, nel_v)
    space = TensorSpace(ku, kv)
    gu, gv = ku.greville(), kv.greville()
    ctrl = np.zeros((ku.n, kv.n, 3))
    ctrl[:, :, 0] = x0 + (x1 - x0) * gu[:, None]
    ctrl[:, :, 1] = y0 + (y1 - y0) * gv[None, :]
    return PatchDef(pid, space, ctrl.reshape(-1, 3))


def two_patch_plate_model(p, nel, shift=0.0):
    """[0, 0.5] and [0.5, 1] patches joined along a straight edge."""
    left = rect_patch_def("L", 0, 0.5, 0, 1, p, nel // 2, nel)
    right = rect_patch_def("R", 0.5, 1, 0, 1, p, nel // 2, nel, shift_knots=shift)
    dirichlet = ([("L", e, (0, 1, 2)) for e in ("west", "south", "north")]
                 + [("R", e, (0, 1, 2)) for e in ("east", "south", "north")])
    return ShellModel([left, right], MAT, sine_bubble_load(plate_amplitude(PLANE_7_2_2)),
                      dirichlet=dirichlet,
                      interfaces=[InterfaceSpec((0, 1), ("east", "west"))])


def single_patch_plate_model(p, nel):
    patch = rect_patch_def("P", 0, 1, 0, 1, p, nel, nel)
    dirichlet = [("P", e, (0, 1, 2)) for e in ("west", "east", "south", "north")]
    return ShellModel([patch], MAT, sine_bubble_load(plate_amplitude(PLANE_7_2_2)),
                      dirichlet=dirichlet)


def exact_plate(x):
    s, c = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
    sy, cy = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
    G = x.shape[0]
    vals = np.zeros((G, 3))
    vals[:, 2] = s * sy
    grad = np.zeros((G, 3, 3))
    grad[:, 2, 0] = np.pi * c * sy
    grad[:, 2, 1] = np.pi * s * cy
    hess = np.zeros((G, 3, 3, 3))
    hess[:, 2, 0, 0] = hess[:, 2, 1, 1] = -np.pi ** 2 * s * sy
    hess[:, 2, 0, 1] = hess[:, 2, 1, 0] = np.pi ** 2 * c * cy
    return vals, grad, hess


def model_h2_error(model, mu, u):
    e2 = r2 = 0.0
    geoms = model.geometry(mu)
    for i, (space, geom) in enumerate(zip(model.spaces, geoms)):
        err, ref = h2_error_vs_exact(space, geom, u[model.patch_slice(i)],
                                     exact_plate)
        e2 += err ** 2
        r2 += ref ** 2
    return np.sqrt(e2 / r2)


class TestBuildInterfaces:
    def test_matching_edge_pullbacks(self):
        model = two_patch_plate_model(2, 8)
        iface, = build_interfaces(model.interfaces, model.spaces,
                                  model.geometry([0.0]))
        xi_k, xi_l = iface.xi
        np.testing.assert_allclose(xi_k[:, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(xi_l[:, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(xi_k[:, 1], xi_l[:, 1], atol=1e-12)

    def test_nonconforming_pullback_roundtrip(self):
        model = two_patch_plate_model(2, 16, shift=np.sqrt(2) / 100)
        geoms = model.geometry([0.0])
        iface, = build_interfaces(model.interfaces, model.spaces, geoms)
        Xk, _, _ = geoms[0].eval(iface.xi[0], nders=0)
        Xl, _, _ = geoms[1].eval(iface.xi[1], nders=0)
        assert np.linalg.norm(Xk - Xl, axis=1).max() <= 1e-10

    def test_trimmed_interface_ignores_curve_knots(self):
        # trim curve with an interior knot at t = 0.7: the projection space
        # partition comes from knot-line crossings only
        cfg = plate_two_patch_trimmed(n_elements=4)
        for patch in cfg["patches"]:
            patch["trims"][0].update({
                "knots": [0, 0, 0, 0.7, 1, 1, 1],
                "control_points": [[0.5, 0.0], [0.0, 0.35], [0.45, 0.7], [0.5, 1.0]],
                "control_mu": [None, [[1.0], [0.0]], None, None],
            })
        model = parse_config(cfg)
        mu = [0.42]
        iface, = build_interfaces(model.interfaces, model.spaces,
                                  model.geometry(mu), model.resolved_trims(mu))
        interior = (iface.proj_kv[1][1:-1] if isinstance(iface.proj_kv, tuple)
                    else iface.proj_kv.interior_knots)
        assert np.all(np.abs(np.asarray(interior) - 0.7) > 1e-6)

    def test_gap_raises_mismatch(self):
        left = rect_patch_def("L", 0, 0.5, 0, 1, 2, 4, 4)
        right = rect_patch_def("R", 0.55, 1, 0, 1, 2, 4, 4)
        model = ShellModel([left, right], MAT, np.zeros(3),
                           interfaces=[InterfaceSpec((0, 1), ("east", "west"))])
        with pytest.raises(GeometryMismatchError):
            build_interfaces(model.interfaces, model.spaces, model.geometry([0.0]))


class TestPenaltyCoefficients:
    def make_iface(self, p, nel, length=1.0):
        model = two_patch_plate_model(p, nel)
        iface, = build_interfaces(model.interfaces, model.spaces,
                                  model.geometry([0.0]))
        return iface

    def test_p2_independent_of_length(self):
        iface = self.make_iface(2, 8)
        c_disp, _ = penalty_coefficients(iface, MAT, 2)
        E, nu, t = MAT.youngs_modulus, MAT.poisson_ratio, MAT.thickness
        assert c_disp == pytest.approx(E * t / (iface.h * (1 - nu ** 2)), rel=1e-12)

    def test_p3_derived_value(self):
        iface = self.make_iface(3, 4)  # four trace elements: h = 0.25
        assert iface.length == pytest.approx(1.0, abs=1e-12)
        assert iface.h == pytest.approx(0.25, abs=1e-12)
        c_disp, _ = penalty_coefficients(iface, Material(1e6, 0.3, 0.022), 3)
        assert c_disp == pytest.approx(386813.19, abs=0.01)

    def test_homogeneity_in_h(self):
        a = self.make_iface(3, 8)    # h = 1/4
        b = self.make_iface(3, 4)    # h = 1/2
        ca, _ = penalty_coefficients(a, MAT, 3)
        cb, _ = penalty_coefficients(b, MAT, 3)
        assert ca == pytest.approx(4.0 * cb, rel=1e-12)


class TestCouplingBlock:
    def coupling_matrix(self, model, mu=(0.0,)):
        geoms = model.geometry(mu)
        iface, = build_interfaces(model.interfaces, model.spaces, geoms,
                                  model.resolved_trims(mu))
        r, c, v = assemble_coupling(iface, model.spaces, geoms, MAT, model.offsets)
        n = model.n_dofs
        return sp.coo_matrix((v, (r, c)), shape=(n, n)).toarray()

    def test_continuous_field_zero_energy(self):
        model = two_patch_plate_model(2, 8)
        C = self.coupling_matrix(model)
        u = np.zeros(model.n_dofs)
        for i, space in enumerate(model.spaces):
            gu = space.kv_u.greville()
            gv = space.kv_v.greville()
            X = (0.0 if i == 0 else 0.5) + 0.5 * gu[:, None] + 0 * gv[None, :]
            Y = np.broadcast_to(gv[None, :], X.shape)
            vals = np.stack([2 * X - Y, X + 3 * Y, 5 * X + Y], -1).reshape(-1, 3)
            u[model.patch_slice(i)] = vals.ravel()
        energy = abs(u @ (C @ u))
        assert energy <= 1e-12 * np.abs(C).max() * (u @ u)

    def test_symmetry_and_psd(self):
        model = two_patch_plate_model(2, 4)
        C = self.coupling_matrix(model)
        assert np.abs(C - C.T).max() <= 1e-12 * np.abs(C).max()
        ev = np.linalg.eigvalsh(0.5 * (C + C.T))
        assert ev.min() >= -1e-10 * ev.max()

    def test_translation_invariance_row_sums(self):
        model = two_patch_plate_model(2, 8)
        C = self.coupling_matrix(model)
        for d in range(3):
            t = np.zeros(model.n_dofs)
            t[d::3] = 1.0
            assert np.abs(C @ t).max() <= 1e-10 * np.abs(C).max()


class TestTwoPatchConvergence:
    def errors(self, p, nels, shift=0.0):
        singles, twos = [], []
        for nel in nels:
            ms = single_patch_plate_model(p, nel)
            us, _ = ms.solve([0.0])
            singles.append(model_h2_error(ms, [0.0], us))
            mt = two_patch_plate_model(p, nel, shift)
            ut, _ = mt.solve([0.0])
            twos.append(model_h2_error(mt, [0.0], ut))
        return np.array(singles), np.array(twos)

    @pytest.mark.parametrize("p", [2, 3])
    def test_error_ratio_and_rate(self, p):
        singles, twos = self.errors(p, (8, 16))
        ratios = twos / singles
        assert np.all(ratios >= 0.5) and np.all(ratios <= 2.0)
        rate_single = np.log2(singles[0] / singles[1])
        rate_two = np.log2(twos[0] / twos[1])
        assert rate_two >= rate_single - 0.2

    def test_jump_decay_nonconforming(self):
        p = 2
        shift = np.sqrt(2) / 100 / 4
        jumps = []
        for nel in (8, 16, 32):
            model = two_patch_plate_model(p, nel, shift=shift)
            u, _ = model.solve([0.0])
            geoms = model.geometry([0.0])
            iface, = build_interfaces(model.interfaces, model.spaces, geoms)
            uL = model.displacement([0.0], u, "L", iface.xi[0])
            uR = model.displacement([0.0], u, "R", iface.xi[1])
            jumps.append(np.sqrt((((uL - uR) ** 2).sum(1) * iface.weights).sum()))
        rates = np.log2(np.array(jumps[:-1]) / np.array(jumps[1:]))
        assert np.all(rates >= p - 1)


class TestTrimmedCurveInterface:
    def test_pullback_roundtrip_and_solve(self):
        cfg = plate_two_patch_trimmed(n_elements=8)
        model = parse_config(cfg)
        for mu in ([0.3], [0.5]):
            geoms = model.geometry(mu)
            iface, = build_interfaces(model.interfaces, model.spaces, geoms,
                                      model.resolved_trims(mu))
            Xk, _, _ = geoms[0].eval(iface.xi[0], nders=0)
            Xl, _, _ = geoms[1].eval(iface.xi[1], nders=0)
            assert np.linalg.norm(Xk - Xl, axis=1).max() <= 1e-10
            # tangency at mu = 0.5 must not flood the partition
            assert iface.weights.size < 600
            assert iface.length == pytest.approx(
                1.0 if mu[0] == 0.5 else iface.length, rel=1e-12)

    def test_manufactured_solution_accuracy(self):
        model = parse_config(plate_two_patch_trimmed(n_elements=8))
        mu = [0.4]
        u, _ = model.solve(mu)
        cls = model.classifications(mu)
        resolved = model.resolved_trims(mu)
        e2 = r2 = 0.0
        geoms = model.geometry(mu)
        for i in range(2):
            err, ref = h2_error_vs_exact(model.spaces[i], geoms[i],
                                         u[model.patch_slice(i)], exact_plate,
                                         classification=cls[i],
                                         resolved_trims=resolved[i])
            e2 += err ** 2
            r2 += ref ** 2
        rel = np.sqrt(e2 / r2)
        single = single_patch_plate_model(2, 8)
        us, _ = single.solve([0.0])
        rel_single = model_h2_error(single, [0.0], us)
        assert rel <= 3.0 * rel_single
