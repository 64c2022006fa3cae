"""Multi-patch shell model: the object the FOM and ROM layers operate on.

A model owns the design-level patch definitions (control nets with optional
affine parameter maps), trim specs, boundary conditions, interface
declarations, and quadrature/ROM/optimization settings. Analysis spaces are
obtained once by uniform refinement of the design spaces; only control
points (geometry) and trims depend on the parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bspline import GeometryMap, KnotVector, TensorSpace, insert_knots_curve, refined_knots
from .errors import ConfigError
from .kl_shell import (
    FomSystem,
    Material,
    PatchAssembler,
    boundary_function_rows,
    evaluate_field,
    expand_component_matrix,
    finalize_system,
    normal_rotation,
    solve_fom,
)
from .multipatch import assemble_coupling, build_interfaces
from .trim import (
    EXTERIOR,
    INTERIOR,
    active_functions,
    classify_elements,
    cut_quadrature,
    gauss_rule,
    resolve_trims,
    tensor_gauss,
)


@dataclass
class PatchDef:
    """One patch: design space, control net, optional mu dependence, trims."""

    pid: str
    design_space: TensorSpace
    ctrl_base: np.ndarray  # (n_design, 3)
    ctrl_linear: np.ndarray = None  # (n_design, 3, M) affine map, or None
    refine: tuple = (0, 0)
    trims: list = field(default_factory=list)

    def design_ctrl(self, mu) -> np.ndarray:
        if self.ctrl_linear is None:
            return self.ctrl_base
        return self.ctrl_base + self.ctrl_linear @ np.atleast_1d(mu)

    @property
    def mu_dependent_geometry(self) -> bool:
        return self.ctrl_linear is not None


def constant_load(vector):
    return np.asarray(vector, dtype=float)


def sine_bubble_load(amplitude: float):
    """Vertical load A sin(pi x) sin(pi y), the manufactured-plate forcing."""

    def fn(x):
        f = np.zeros_like(x)
        f[:, 2] = amplitude * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
        return f

    return fn


def _refinement_operator(kv: KnotVector, times: int):
    """Linear operator mapping design control rows to refined rows."""
    add = refined_knots(kv, times)
    if add.size == 0:
        return kv, None
    basis = np.eye(kv.n)
    kv_new, T = insert_knots_curve(kv, basis, add)
    return kv_new, T  # T has shape (n_new, n_old)


class ShellModel:
    """Assembled view of a parameterized trimmed multi-patch shell problem."""

    def __init__(self, patches, material: Material, load,
                 dirichlet=(), neumann=(), interfaces=(),
                 mu_lower=None, mu_upper=None,
                 quad_order=None, cut_depth=6, mask_factor=3,
                 coupling_quad_extra=3,
                 rom=None, optimization=None, name="model"):
        self.name = name
        self.patches = list(patches)
        self.material = material
        self.load = load
        self.dirichlet = list(dirichlet)  # (patch_id, edge, components)
        self.neumann = list(neumann)  # (patch_id, edge, traction, moment)
        self.interfaces = list(interfaces)
        self.mu_lower = np.atleast_1d(np.asarray(mu_lower if mu_lower is not None else [0.0], float))
        self.mu_upper = np.atleast_1d(np.asarray(mu_upper if mu_upper is not None else [0.0], float))
        self.cut_depth = cut_depth
        self.mask_factor = mask_factor
        self.coupling_quad_extra = coupling_quad_extra
        self.rom = dict(rom or {})
        self.optimization = dict(optimization or {})

        self.spaces = []
        self._refine_ops = []
        for pd in self.patches:
            kvu, Tu = _refinement_operator(pd.design_space.kv_u, pd.refine[0])
            kvv, Tv = _refinement_operator(pd.design_space.kv_v, pd.refine[1])
            self.spaces.append(TensorSpace(kvu, kvv))
            self._refine_ops.append((Tu, Tv))
        self.assemblers = [PatchAssembler(s, quad_order) for s in self.spaces]

        self.offsets = np.concatenate([[0], np.cumsum([3 * s.n for s in self.spaces])])
        self.n_dofs = int(self.offsets[-1])

        self._id_index = {pd.pid: i for i, pd in enumerate(self.patches)}
        if len(self._id_index) != len(self.patches):
            raise ConfigError("duplicate patch ids")
        self._geom_cache = {}
        self._full_cache = {}
        self._gram = None
        self._diag_ref = None
        self.soft_tol = 1e-6

    # ---- lookups -------------------------------------------------------

    def patch_index(self, pid) -> int:
        if pid not in self._id_index:
            raise ConfigError(f"unknown patch id {pid!r}")
        return self._id_index[pid]

    def patch_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def mu_dim(self) -> int:
        return self.mu_lower.size

    def mu_mid(self) -> np.ndarray:
        return 0.5 * (self.mu_lower + self.mu_upper)

    # ---- geometry and trimming ----------------------------------------

    def geometry(self, mu) -> list:
        key = np.asarray(mu, float).tobytes()
        if key not in self._geom_cache:
            geoms = []
            for pd, space, (Tu, Tv) in zip(self.patches, self.spaces, self._refine_ops):
                nu_d, nv_d = pd.design_space.shape
                grid = pd.design_ctrl(mu).reshape(nu_d, nv_d, 3)
                if Tu is not None:
                    grid = np.einsum("ij,jkd->ikd", Tu, grid)
                if Tv is not None:
                    grid = np.einsum("kj,ijd->ikd", Tv, grid)
                geoms.append(GeometryMap(space, grid.reshape(-1, 3)))
            if len(self._geom_cache) > 16:
                self._geom_cache.clear()
            self._geom_cache[key] = geoms
        return self._geom_cache[key]

    def resolved_trims(self, mu) -> list:
        return [resolve_trims(pd.trims, mu) for pd in self.patches]

    def classifications(self, mu, resolved=None) -> list:
        resolved = resolved if resolved is not None else self.resolved_trims(mu)
        out = []
        for space, res in zip(self.spaces, resolved):
            out.append(classify_elements(space, res, None) if res else None)
        return out

    def active_mask(self, mu, classifications=None) -> np.ndarray:
        cls = classifications if classifications is not None else self.classifications(mu)
        mask = np.zeros(self.n_dofs, dtype=bool)
        for i, (space, c) in enumerate(zip(self.spaces, cls)):
            off = int(self.offsets[i])
            if c is None:
                mask[off: off + 3 * space.n] = True
                continue
            fns = active_functions(space, c)
            dofs = off + (3 * fns[:, None] + np.arange(3)[None, :]).ravel()
            mask[dofs] = True
        return mask

    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_dofs, dtype=bool)
        for pid, edge, comps in self.dirichlet:
            i = self.patch_index(pid)
            fns = boundary_function_rows(self.spaces[i], edge)
            for d in comps:
                mask[int(self.offsets[i]) + 3 * fns + d] = True
        return mask

    # ---- assembly ------------------------------------------------------

    def _patch_full_cache(self, i: int, geom) -> tuple:
        if i not in self._full_cache:
            self._full_cache[i] = self.assemblers[i].full_element_matrices(
                geom, self.material, self.load)
        return self._full_cache[i]

    def background_diag_median(self) -> float:
        """Median diagonal of the untrimmed background stiffness.

        Parameter-independent scale (evaluated at the box midpoint) used by
        the soft deactivation of barely-cut functions.
        """
        if self._diag_ref is None:
            mu = self.mu_mid()
            geoms = self.geometry(mu)
            total = np.zeros(self.n_dofs)
            for i, pd in enumerate(self.patches):
                asm = self.assemblers[i]
                if not pd.mu_dependent_geometry and pd.trims:
                    Ke, _ = self._patch_full_cache(i, geoms[i])
                else:
                    Ke, _ = asm.full_element_matrices(geoms[i], self.material, self.load)
                off = int(self.offsets[i])
                for e in range(asm.neu * asm.nev):
                    eu, ev = divmod(e, asm.nev)
                    total[off + asm.element_dofs(eu, ev)] += np.diagonal(Ke[e])
            self._diag_ref = float(np.median(total[total > 0]))
        return self._diag_ref

    def _neumann_contribution(self, i, geom, edge, traction, moment, f):
        from .bspline import surface_frame_batch
        from .multipatch import EDGE_PARAM, scalar_value_matrix

        space = self.spaces[i]
        asm = self.assemblers[i]
        kv_edge = space.kv_u if edge in ("south", "north") else space.kv_v
        pts_1d = []
        wts_1d = []
        for a, b in zip(kv_edge.breakpoints[:-1], kv_edge.breakpoints[1:]):
            x, w = gauss_rule(asm.q, a, b)
            pts_1d.append(x)
            wts_1d.append(w)
        t = np.concatenate(pts_1d)
        wt = np.concatenate(wts_1d)
        xi = EDGE_PARAM[edge](t)
        x, d1, d2 = geom.eval(xi, nders=2)
        direction = 0 if edge in ("south", "north") else 1
        speed = np.linalg.norm(d1[:, direction], axis=1)
        ds = wt * speed
        frame = surface_frame_batch(d1, d2)
        B, dB = scalar_value_matrix(space, xi, 1)
        off = int(self.offsets[i])
        trac = np.asarray(traction, float)
        if np.any(trac != 0.0):
            fe = np.einsum("gi,d,g->id", B, trac, ds)
            f[off: off + 3 * space.n] += fe.reshape(-1)
        if moment:
            tangent = d1[:, direction] / speed[:, None]
            # outward in-plane normal: cross(tangent, a3) points outward on
            # east/south edges, inward on west/north
            sign = 1.0 if edge in ("east", "south") else -1.0
            n = sign * np.cross(tangent, frame.a3)
            from .multipatch import rotation_rows

            rows = rotation_rows(frame, dB, n)
            f[off: off + 3 * space.n] += moment * (rows * ds[:, None]).sum(axis=0)

    def assemble(self, mu) -> FomSystem:
        """Extended FOM system at one parameter value."""
        mu = np.atleast_1d(np.asarray(mu, float))
        geoms = self.geometry(mu)
        resolved = self.resolved_trims(mu)
        cls = self.classifications(mu, resolved)
        rows, cols, vals = [], [], []
        f = np.zeros(self.n_dofs)
        for i, pd in enumerate(self.patches):
            cached = None
            if not pd.mu_dependent_geometry and pd.trims:
                cached = self._patch_full_cache(i, geoms[i])
            r, c, v, fp = self.assemblers[i].assemble(
                geoms[i], self.material, self.load,
                classification=cls[i], resolved_trims=resolved[i],
                cut_depth=self.cut_depth, mask_factor=self.mask_factor,
                cached_full=cached)
            off = int(self.offsets[i])
            rows.append(r + off)
            cols.append(c + off)
            vals.append(v)
            f[off: off + 3 * self.spaces[i].n] += fp
        for pid, edge, traction, moment in self.neumann:
            i = self.patch_index(pid)
            self._neumann_contribution(i, geoms[i], edge, traction, moment, f)
        if self.interfaces:
            ifaces = build_interfaces(self.interfaces, self.spaces, geoms,
                                      resolved, self.coupling_quad_extra)
            for iface in ifaces:
                r, c, v = assemble_coupling(iface, self.spaces, geoms,
                                            self.material, self.offsets)
                rows.append(r)
                cols.append(c)
                vals.append(v)
        return finalize_system(self.n_dofs, np.concatenate(rows),
                               np.concatenate(cols), np.concatenate(vals), f,
                               self.active_mask(mu, cls), self.dirichlet_mask(),
                               reference_diag=self.background_diag_median(),
                               soft_tol=self.soft_tol)

    def solve(self, mu):
        """Assemble and solve; returns (u_hat, compliance)."""
        return solve_fom(self.assemble(mu))

    # ---- norms, probes, measures ---------------------------------------

    def h2_gram(self) -> sp.csr_matrix:
        """Per-component surface H2 Gram matrix on the untrimmed background.

        Assembled once at the midpoint of the parameter box (the background
        is parameter-independent except for designs that move control
        points, where a fixed reference configuration serves as the norm).
        """
        if self._gram is None:
            geoms = self.geometry(self.mu_mid())
            blocks = []
            for asm, geom in zip(self.assemblers, geoms):
                X = asm.h2_gram_component(geom)
                blocks.append(expand_component_matrix(X))
            self._gram = sp.block_diag(blocks, format="csr")
        return self._gram

    def area(self, mu) -> float:
        """Physical active area of the trimmed model."""
        mu = np.atleast_1d(np.asarray(mu, float))
        geoms = self.geometry(mu)
        resolved = self.resolved_trims(mu)
        cls = self.classifications(mu, resolved)
        total = 0.0
        for i, (space, asm) in enumerate(zip(self.spaces, self.assemblers)):
            tags = cls[i].tags if cls[i] is not None else None
            for e in range(asm.neu * asm.nev):
                eu, ev = divmod(e, asm.nev)
                if tags is not None and tags[eu, ev] == EXTERIOR:
                    continue
                if tags is None or tags[eu, ev] == INTERIOR:
                    pts, w = asm.std_points[e], asm.std_weights[e]
                else:
                    lo = (asm.bounds_u[eu, 0], asm.bounds_v[ev, 0])
                    hi = (asm.bounds_u[eu, 1], asm.bounds_v[ev, 1])
                    pts, w = cut_quadrature((lo, hi), resolved[i], None,
                                            q=asm.q, depth=self.cut_depth,
                                            mask_factor=self.mask_factor)
                    if w.size == 0:
                        continue
                _, d1, _ = geoms[i].eval(pts, nders=1)
                jac = np.linalg.norm(np.cross(d1[:, 0], d1[:, 1]), axis=1)
                total += float(w @ jac)
        return total

    def volume(self, mu) -> float:
        """V = thickness x active area."""
        return self.material.thickness * self.area(mu)

    def displacement(self, mu, u_hat, pid, points, nders=0):
        """Displacement field of patch ``pid`` at parametric points."""
        i = self.patch_index(pid)
        return evaluate_field(self.spaces[i], u_hat[self.patch_slice(i)],
                              points, nders)
