"""B-spline spaces, tensor-product surfaces, and surface differential geometry.

Univariate bases are evaluated with the Cox-de Boor recursion and its
derivative recurrence, vectorized over evaluation points. Geometry maps are
plain (non-rational) spline surfaces in R^3; curved benchmark shapes are
produced by least-squares fits of analytic curves (see ``fit_circular_arc``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingularGeometryError


@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) knot vector on [0, 1].

    Attributes:
        degree: polynomial degree p >= 1.
        knots: non-decreasing array of length n + p + 1 with the first and
            last knot repeated p + 1 times.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.ascontiguousarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 1:
            raise ValueError("degree must be >= 1")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError("knot vector too short for degree")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-(p + 1):] == knots[-1])):
            raise ValueError("knot vector must be open (end knots repeated p+1 times)")
        interior = knots[p + 1:-(p + 1)]
        if interior.size:
            _, counts = np.unique(interior, return_counts=True)
            if np.any(counts > p):
                raise ValueError("interior knot multiplicity exceeds degree")

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return np.unique(self.knots)

    @property
    def interior_knots(self) -> np.ndarray:
        """Distinct knots strictly inside the domain."""
        bp = self.breakpoints
        return bp[1:-1]

    def spans(self) -> np.ndarray:
        """Indices k of non-empty knot spans [knots[k], knots[k+1])."""
        kn = self.knots
        return np.nonzero(kn[1:] > kn[:-1])[0]

    def greville(self) -> np.ndarray:
        """Greville abscissae (knot averages)."""
        p = self.degree
        kn = self.knots
        return np.array([kn[i + 1: i + p + 1].mean() for i in range(self.n)])

    def element_sizes(self) -> np.ndarray:
        kn = self.knots
        s = self.spans()
        return kn[s + 1] - kn[s]


def uniform_knots(degree: int, n_elements: int) -> KnotVector:
    """Open uniform knot vector with ``n_elements`` spans on [0, 1]."""
    interior = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(degree, knots)


def find_spans(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """Knot span index containing each x, right-clamped at the domain end."""
    kn = kv.knots
    p = kv.degree
    spans = np.searchsorted(kn, x, side="right") - 1
    return np.clip(spans, p, kv.n - 1)


def eval_basis_many(kv: KnotVector, x: np.ndarray, nders: int) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero basis functions and derivatives at many points.

    Args:
        kv: knot vector.
        x: evaluation points, shape (G,), inside [knots[0], knots[-1]].
        nders: highest derivative order requested (0, 1, or 2 typically).

    Returns:
        (first, ders) where ``first[g]`` is the index of the first of the
        p + 1 functions nonzero at ``x[g]`` and ``ders`` has shape
        (G, nders + 1, p + 1), row d holding the d-th derivatives.
        Orders above the degree evaluate to zero.
    """
    x = np.asarray(x, dtype=float)
    p = kv.degree
    kn = kv.knots
    lo, hi = kv.domain
    if np.any(x < lo - 1e-14) or np.any(x > hi + 1e-14):
        raise DomainError("evaluation point outside the knot vector domain")
    G = x.size
    spans = find_spans(kv, x)

    # Cox-de Boor triangle, vectorized over points. ndu holds basis values
    # and knot differences as in the standard derivative algorithm.
    ndu = np.zeros((G, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((G, p + 1))
    right = np.zeros((G, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - kn[spans + 1 - j]
        right[:, j] = kn[spans + j] - x
        saved = np.zeros(G)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = np.where(ndu[:, j, r] != 0.0, ndu[:, r, j - 1] / np.where(ndu[:, j, r] == 0.0, 1.0, ndu[:, j, r]), 0.0)
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((G, nders + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]

    n_eff = min(nders, p)
    if n_eff >= 1:
        a = np.zeros((G, 2, p + 1))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[:, 0, 0] = 1.0
            a[:, 1, :] = 0.0
            for k in range(1, n_eff + 1):
                d = np.zeros(G)
                rk = r - k
                pk = p - k
                if r >= k:
                    a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                    d = a[:, s2, 0] * ndu[:, rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                    d = d + a[:, s2, j] * ndu[:, rk + j, pk]
                if r <= pk:
                    a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                    d = d + a[:, s2, k] * ndu[:, r, pk]
                ders[:, k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, n_eff + 1):
            ders[:, k, :] *= fac
            fac *= p - k

    return spans - p, ders


def eval_basis(kv: KnotVector, xi: float, deriv_order: int = 0) -> tuple[int, np.ndarray]:
    """Nonzero basis functions at a single point.

    Returns (first_active_index, values) with ``values`` of shape
    (deriv_order + 1, p + 1).
    """
    first, ders = eval_basis_many(kv, np.array([xi]), deriv_order)
    return int(first[0]), ders[0]


def insert_knots_curve(kv: KnotVector, ctrl: np.ndarray, new_knots) -> tuple[KnotVector, np.ndarray]:
    """Insert knots into a spline curve without changing its image.

    ``ctrl`` has shape (n, ...); one Boehm step per inserted knot.
    """
    p = kv.degree
    knots = kv.knots.copy()
    ctrl = np.array(ctrl, dtype=float)
    for u in np.sort(np.asarray(new_knots, dtype=float)):
        k = int(np.searchsorted(knots, u, side="right") - 1)
        n = ctrl.shape[0]
        new_ctrl = np.empty((n + 1,) + ctrl.shape[1:])
        new_ctrl[: k - p + 1] = ctrl[: k - p + 1]
        new_ctrl[k + 1:] = ctrl[k:]
        for i in range(k - p + 1, k + 1):
            denom = knots[i + p] - knots[i]
            alpha = (u - knots[i]) / denom if denom > 0 else 0.0
            new_ctrl[i] = alpha * ctrl[i] + (1.0 - alpha) * ctrl[i - 1]
        ctrl = new_ctrl
        knots = np.insert(knots, k + 1, u)
    return KnotVector(p, knots), ctrl


def refined_knots(kv: KnotVector, times: int) -> np.ndarray:
    """Knots added by ``times`` rounds of uniform midpoint subdivision."""
    added = []
    bp = kv.breakpoints
    for _ in range(times):
        mids = 0.5 * (bp[:-1] + bp[1:])
        added.append(mids)
        bp = np.sort(np.concatenate([bp, mids]))
    return np.concatenate(added) if added else np.array([])


@dataclass(frozen=True)
class TensorSpace:
    """Tensor-product spline space on [0, 1]^2."""

    kv_u: KnotVector
    kv_v: KnotVector

    @property
    def degrees(self) -> tuple[int, int]:
        return self.kv_u.degree, self.kv_v.degree

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv_u.n, self.kv_v.n

    @property
    def n(self) -> int:
        return self.kv_u.n * self.kv_v.n

    def index(self, iu, iv):
        """Global function index for multi-index (iu, iv); u-major."""
        return np.asarray(iu) * self.kv_v.n + np.asarray(iv)

    @property
    def n_elements(self) -> tuple[int, int]:
        return self.kv_u.spans().size, self.kv_v.spans().size

    def element_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-direction span bounds: arrays (n_el, 2) of [lo, hi]."""
        out = []
        for kv in (self.kv_u, self.kv_v):
            s = kv.spans()
            out.append(np.column_stack([kv.knots[s], kv.knots[s + 1]]))
        return out[0], out[1]

    def element_first_functions(self) -> tuple[np.ndarray, np.ndarray]:
        """First active function index per span, per direction."""
        return (self.kv_u.spans() - self.kv_u.degree,
                self.kv_v.spans() - self.kv_v.degree)

    def element_function_indices(self, eu: int, ev: int) -> np.ndarray:
        """Global indices of functions supported on element (eu, ev), u-major."""
        pu, pv = self.degrees
        fu, fv = self.element_first_functions()
        iu = fu[eu] + np.arange(pu + 1)
        iv = fv[ev] + np.arange(pv + 1)
        return (iu[:, None] * self.kv_v.n + iv[None, :]).ravel()

    def functions_touching_spans(self, direction: int, span_mask: np.ndarray) -> np.ndarray:
        """Boolean mask of univariate functions whose support meets flagged spans."""
        kv = self.kv_u if direction == 0 else self.kv_v
        p = kv.degree
        first = kv.spans() - p
        mask = np.zeros(kv.n, dtype=bool)
        for e in np.nonzero(span_mask)[0]:
            mask[first[e]: first[e] + p + 1] = True
        return mask


def tabulate(space: TensorSpace, points: np.ndarray, nders: int):
    """Univariate basis tables at 2-D points.

    Returns (first_u, Bu, first_v, Bv) with Bu of shape (G, nders+1, pu+1).
    """
    fu, Bu = eval_basis_many(space.kv_u, points[:, 0], nders)
    fv, Bv = eval_basis_many(space.kv_v, points[:, 1], nders)
    return fu, Bu, fv, Bv


@dataclass(frozen=True)
class GeometryMap:
    """Spline surface mapping [0, 1]^2 into R^3.

    Control points are stored u-major: row index i = iu * n_v + iv.
    """

    space: TensorSpace
    control_points: np.ndarray

    def __post_init__(self):
        cp = np.ascontiguousarray(self.control_points, dtype=float)
        if cp.shape != (self.space.n, 3):
            raise ValueError(f"control point array must have shape ({self.space.n}, 3)")
        object.__setattr__(self, "control_points", cp)

    def eval(self, points: np.ndarray, nders: int = 2):
        """Evaluate position and parametric derivatives at points (G, 2).

        Returns (x, d1, d2): x is (G, 3); d1 is (G, 2, 3) holding F,1 and
        F,2; d2 is (G, 3, 3) holding F,11, F,12, F,22 (None if nders < that
        order).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        fu, Bu, fv, Bv = tabulate(self.space, points, nders)
        pu, pv = self.space.degrees
        nv = self.space.kv_v.n
        iu = fu[:, None] + np.arange(pu + 1)[None, :]
        iv = fv[:, None] + np.arange(pv + 1)[None, :]
        gidx = iu[:, :, None] * nv + iv[:, None, :]
        P = self.control_points[gidx]  # (G, pu+1, pv+1, 3)

        def comb(du, dv):
            return np.einsum("ga,gb,gabd->gd", Bu[:, du], Bv[:, dv], P, optimize=True)

        x = comb(0, 0)
        d1 = d2 = None
        if nders >= 1:
            d1 = np.stack([comb(1, 0), comb(0, 1)], axis=1)
        if nders >= 2:
            d2 = np.stack([comb(2, 0), comb(1, 1), comb(0, 2)], axis=1)
        return x, d1, d2

    def refined(self, times_u: int, times_v: int) -> "GeometryMap":
        """Uniform dyadic h-refinement; the surface is unchanged pointwise."""
        nu, nv = self.space.shape
        grid = self.control_points.reshape(nu, nv, 3)
        kv_u, kv_v = self.space.kv_u, self.space.kv_v
        add_u = refined_knots(kv_u, times_u)
        if add_u.size:
            kv_u, grid = insert_knots_curve(kv_u, grid, add_u)
        grid = np.swapaxes(grid, 0, 1)
        add_v = refined_knots(kv_v, times_v)
        if add_v.size:
            kv_v, grid = insert_knots_curve(kv_v, grid, add_v)
        grid = np.swapaxes(grid, 0, 1)
        space = TensorSpace(kv_u, kv_v)
        return GeometryMap(space, grid.reshape(space.n, 3))


def eval_geometry(geom: GeometryMap, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point, first, and second derivatives of the map at one (xi, eta)."""
    x, d1, d2 = geom.eval(np.atleast_2d(xi), nders=2)
    return x[0], d1[0], d2[0]


@dataclass
class SurfaceFrame:
    """Surface differential-geometry quantities at a batch of points.

    Attributes:
        a1, a2: covariant tangents, (G, 3).
        a3: unit normal, (G, 3).
        jac: surface measure |a1 x a2|, (G,).
        acov: covariant metric a_{ab}, (G, 2, 2).
        acon: contravariant metric a^{ab}, (G, 2, 2).
        acon_vec: contravariant tangents a^a, (G, 2, 3).
        b: curvature tensor b_{ab} = a3 . F,_{ab}, (G, 2, 2).
        d2: second derivatives F,11 F,12 F,22 as passed in, (G, 3, 3).
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    jac: np.ndarray
    acov: np.ndarray
    acon: np.ndarray
    acon_vec: np.ndarray
    b: np.ndarray = None
    d2: np.ndarray = None


def surface_frame_batch(d1: np.ndarray, d2: np.ndarray = None) -> SurfaceFrame:
    """Build the covariant/contravariant frame from map derivatives.

    Raises SingularGeometryError where |a1 x a2| < 1e-14 |a1||a2|.
    """
    a1 = d1[:, 0]
    a2 = d1[:, 1]
    cross = np.cross(a1, a2)
    jac = np.linalg.norm(cross, axis=1)
    scale = np.einsum("gd,gd->g", a1, a1) + np.einsum("gd,gd->g", a2, a2)
    if np.any(jac <= 1e-14 * scale):
        raise SingularGeometryError("degenerate surface Jacobian")
    a3 = cross / jac[:, None]
    acov = np.empty(d1.shape[:1] + (2, 2))
    acov[:, 0, 0] = np.einsum("gd,gd->g", a1, a1)
    acov[:, 0, 1] = acov[:, 1, 0] = np.einsum("gd,gd->g", a1, a2)
    acov[:, 1, 1] = np.einsum("gd,gd->g", a2, a2)
    det = acov[:, 0, 0] * acov[:, 1, 1] - acov[:, 0, 1] ** 2
    acon = np.empty_like(acov)
    acon[:, 0, 0] = acov[:, 1, 1] / det
    acon[:, 1, 1] = acov[:, 0, 0] / det
    acon[:, 0, 1] = acon[:, 1, 0] = -acov[:, 0, 1] / det
    acon_vec = np.einsum("gab,gbd->gad", acon, d1)
    b = None
    if d2 is not None:
        bcomp = np.einsum("gd,gkd->gk", a3, d2)  # (11, 12, 22)
        b = np.empty_like(acov)
        b[:, 0, 0] = bcomp[:, 0]
        b[:, 0, 1] = b[:, 1, 0] = bcomp[:, 1]
        b[:, 1, 1] = bcomp[:, 2]
    return SurfaceFrame(a1, a2, a3, jac, acov, acon, acon_vec, b, d2)


def surface_frame(geom: GeometryMap, xi) -> SurfaceFrame:
    """Frame at a single parametric point (arrays keep a leading axis of 1)."""
    _, d1, d2 = geom.eval(np.atleast_2d(xi), nders=2)
    return surface_frame_batch(d1, d2)


def fit_spline_curve(samples: np.ndarray, params: np.ndarray, kv: KnotVector,
                     interpolate_ends: bool = True) -> np.ndarray:
    """Least-squares spline fit of sampled curve points.

    Args:
        samples: (S, d) points to fit.
        params: (S,) parameter value of each sample in [0, 1].
        kv: target knot vector.
        interpolate_ends: pin the first/last control points to the end samples
            (needed when adjacent patches must share an edge exactly).

    Returns:
        control points (kv.n, d).
    """
    from scipy.interpolate import make_lsq_spline

    spl = make_lsq_spline(params, samples, kv.knots, k=kv.degree, axis=0)
    ctrl = np.array(spl.c[: kv.n], dtype=float)
    if interpolate_ends:
        ctrl[0] = samples[0]
        ctrl[-1] = samples[-1]
    return ctrl


def fit_circular_arc(radius: float, angle_start: float, angle_end: float,
                     degree: int, n_elements: int,
                     samples_per_element: int = 30) -> tuple[KnotVector, np.ndarray]:
    """Fit a planar circular arc (R sin phi, R cos phi) by a spline curve.

    The arc parameter is mapped affinely to [0, 1]. Returns the knot vector
    and 2-D control points in the (sin, cos) plane.
    """
    kv = uniform_knots(degree, n_elements)
    t = np.linspace(0.0, 1.0, n_elements * samples_per_element + 1)
    phi = angle_start + (angle_end - angle_start) * t
    pts = radius * np.column_stack([np.sin(phi), np.cos(phi)])
    ctrl = fit_spline_curve(pts, t, kv)
    return kv, ctrl
