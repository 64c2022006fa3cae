"""Parameter-dependent trimming of patch parametric domains.

Trim regions are described implicitly through signed distances to the active
region: positive values lie in the kept part of the domain. Element
classification and the adaptive quadtree quadrature exploit the 1-Lipschitz
property of these distance functions, so full/empty decisions are exact and
only boxes near a trim boundary are subdivided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bspline import KnotVector, TensorSpace, eval_basis_many
from .errors import ConfigError, FullyTrimmedError

INTERIOR = 0
CUT = 1
EXTERIOR = 2


@dataclass(frozen=True)
class AffinePoint:
    """Point whose coordinates depend affinely on the parameter vector."""

    base: np.ndarray
    linear: np.ndarray = None  # (d, M); None means parameter-independent

    def value(self, mu) -> np.ndarray:
        base = np.asarray(self.base, dtype=float)
        if self.linear is None:
            return base
        return base + np.asarray(self.linear, dtype=float) @ np.atleast_1d(mu)


def eval_curve(kv: KnotVector, ctrl: np.ndarray, t: np.ndarray, nders: int = 1):
    """Evaluate a spline curve (and derivatives) at parameters t.

    Returns a list of arrays [C, C', ...] each of shape (G, d).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    first, ders = eval_basis_many(kv, t, nders)
    idx = first[:, None] + np.arange(kv.degree + 1)[None, :]
    P = np.asarray(ctrl, dtype=float)[idx]  # (G, p+1, d)
    return [np.einsum("ga,gad->gd", ders[:, k], P) for k in range(nders + 1)]


class ResolvedCircle:
    """Circle trim at a fixed parameter value."""

    def __init__(self, center: np.ndarray, radius: float, cut_inside: bool):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.cut_inside = cut_inside

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(points - self.center, axis=-1) - self.radius
        return d if self.cut_inside else -d


class ResolvedSplineCurve:
    """Open spline trim curve at a fixed parameter value.

    The side test projects onto a dense polyline of the curve; the sign is the
    2-D cross product with the local tangent (positive = left of travel).
    """

    def __init__(self, kv: KnotVector, ctrl: np.ndarray, cut_side: str, n_poly: int = 192):
        self.kv = kv
        self.ctrl = np.asarray(ctrl, dtype=float)
        self.cut_side = cut_side
        t = np.linspace(kv.domain[0], kv.domain[1], n_poly + 1)
        self.poly_t = t
        self.poly = eval_curve(kv, self.ctrl, t, 0)[0]
        self.seg = self.poly[1:] - self.poly[:-1]
        self.seg_len2 = np.maximum(np.einsum("sd,sd->s", self.seg, self.seg), 1e-300)

    def point(self, t, nders=1):
        return eval_curve(self.kv, self.ctrl, t, nders)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if pts.shape[0] > 8192:  # keep the distance matrix small
            return np.concatenate([self.signed_distance(chunk)
                                   for chunk in np.array_split(pts, pts.shape[0] // 8192 + 1)])
        from scipy.spatial.distance import cdist

        # nearest polyline vertex, then exact projection on its two segments
        near = np.argmin(cdist(pts, self.poly, "sqeuclidean"), axis=1)
        best_d2 = np.full(pts.shape[0], np.inf)
        best_sign = np.ones(pts.shape[0])
        nseg = self.seg.shape[0]
        for off in (-1, 0):
            s = np.clip(near + off, 0, nseg - 1)
            rel = pts - self.poly[s]
            tau = np.clip(np.einsum("gd,gd->g", rel, self.seg[s]) / self.seg_len2[s], 0.0, 1.0)
            foot = self.poly[s] + tau[:, None] * self.seg[s]
            dist2 = ((pts - foot) ** 2).sum(axis=1)
            cross = self.seg[s, 0] * (pts[:, 1] - foot[:, 1]) - self.seg[s, 1] * (pts[:, 0] - foot[:, 0])
            upd = dist2 < best_d2
            best_d2 = np.where(upd, dist2, best_d2)
            best_sign = np.where(upd, np.where(cross >= 0, 1.0, -1.0), best_sign)
        dist = np.sqrt(best_d2)
        # positive on the left of the travel direction
        signed_left = best_sign * dist
        return -signed_left if self.cut_side == "left" else signed_left


@dataclass(frozen=True)
class CircleTrim:
    """Parameterized circular trim region in the parametric square."""

    center: AffinePoint
    radius: float
    cut_inside: bool = True

    def at(self, mu) -> ResolvedCircle:
        return ResolvedCircle(self.center.value(mu), self.radius, self.cut_inside)


@dataclass(frozen=True)
class SplineCurveTrim:
    """Trim curve given by a quadratic (or cubic) spline control polygon.

    ``cut_side`` names the side of the travel direction that is removed.
    """

    kv: KnotVector
    control_points: tuple
    cut_side: str = "right"

    def at(self, mu) -> ResolvedSplineCurve:
        ctrl = np.array([cp.value(mu) for cp in self.control_points])
        return ResolvedSplineCurve(self.kv, ctrl, self.cut_side)


def resolve_trims(trims, mu):
    return [t.at(mu) for t in trims]


def active_distance(resolved, points: np.ndarray) -> np.ndarray:
    """Signed distance to the active region: min over trim distances."""
    pts = np.atleast_2d(points)
    if not resolved:
        return np.full(pts.shape[0], np.inf)
    s = resolved[0].signed_distance(pts)
    for t in resolved[1:]:
        s = np.minimum(s, t.signed_distance(pts))
    return s


@dataclass
class ElementClassification:
    """Per-element trim tags on the background mesh of a patch.

    ``tags`` has shape (n_el_u, n_el_v) with values INTERIOR/CUT/EXTERIOR.
    ``cut_trims`` maps (eu, ev) of cut elements to the trim indices whose
    boundary passes near that element.
    """

    tags: np.ndarray
    cut_trims: dict


def _batch_grid(boxes: np.ndarray, m: int) -> np.ndarray:
    """m x m sample grid on each (N, 4) [x, y, w, h] box: (N, m*m, 2)."""
    lin = np.linspace(0.0, 1.0, m)
    ref = np.stack(np.meshgrid(lin, lin, indexing="ij"), axis=-1).reshape(-1, 2)
    return boxes[:, None, :2] + ref[None, :, :] * boxes[:, None, 2:]


def classify_elements(space: TensorSpace, trims, mu) -> ElementClassification:
    """Tag every Bezier element of the patch as interior, cut, or exterior.

    Sample grids are densified only on still-ambiguous elements; decisions
    use the 1-Lipschitz margin of the signed distance, so full/empty tags
    are exact and measure-zero boundary contact is not counted as cut.
    """
    resolved = (list(trims) if (trims and hasattr(trims[0], "signed_distance"))
                else resolve_trims(trims, mu))
    bu, bv = space.element_bounds()
    neu, nev = bu.shape[0], bv.shape[0]
    tags = np.full((neu, nev), INTERIOR, dtype=np.int8)
    cut_trims = {}
    if not resolved:
        return ElementClassification(tags, cut_trims)

    boxes = np.empty((neu * nev, 4))
    boxes[:, 0] = np.repeat(bu[:, 0], nev)
    boxes[:, 1] = np.tile(bv[:, 0], neu)
    boxes[:, 2] = np.repeat(bu[:, 1] - bu[:, 0], nev)
    boxes[:, 3] = np.tile(bv[:, 1] - bv[:, 0], neu)
    undecided = np.arange(neu * nev)
    flat = tags.ravel()
    m = 3
    while undecided.size:
        sub = boxes[undecided]
        pts = _batch_grid(sub, m)
        s = active_distance(resolved, pts.reshape(-1, 2)).reshape(len(undecided), -1)
        cover = 0.5 * np.hypot(sub[:, 2] / (m - 1), sub[:, 3] / (m - 1))
        crossing = np.any(s > 0, axis=1) & np.any(s < 0, axis=1)
        full = np.all(s > cover[:, None], axis=1)
        empty = np.all(s < -cover[:, None], axis=1)
        flat[undecided[crossing]] = CUT
        flat[undecided[full]] = INTERIOR
        flat[undecided[empty]] = EXTERIOR
        if m >= 65:
            rest = undecided[~(crossing | full | empty)]
            srest = s[~(crossing | full | empty)]
            flat[rest] = np.where(np.all(srest >= 0, axis=1), INTERIOR,
                                  np.where(np.all(srest <= 0, axis=1), EXTERIOR, CUT))
            break
        undecided = undecided[~(crossing | full | empty)]
        m = 2 * m - 1

    tags = flat.reshape(neu, nev)
    cut_ids = np.nonzero(flat == CUT)[0]
    if cut_ids.size:
        centers = boxes[cut_ids, :2] + 0.5 * boxes[cut_ids, 2:]
        diag = np.hypot(boxes[cut_ids, 2], boxes[cut_ids, 3])
        dists = np.stack([np.abs(r.signed_distance(centers)) for r in resolved], axis=1)
        for row, e in enumerate(cut_ids):
            near = list(np.nonzero(dists[row] <= diag[row])[0])
            cut_trims[divmod(int(e), nev)] = near or list(range(len(resolved)))
    return ElementClassification(tags, cut_trims)


def active_functions(space: TensorSpace, cls: ElementClassification) -> np.ndarray:
    """Sorted global indices of functions supported on non-exterior elements."""
    active_el = cls.tags != EXTERIOR

    def incidence(kv):
        spans = kv.spans()
        fn = np.arange(kv.n)
        return (fn[:, None] >= spans[None, :] - kv.degree) & (fn[:, None] <= spans[None, :])

    iu = incidence(space.kv_u)
    iv = incidence(space.kv_v)
    act = (iu.astype(int) @ active_el.astype(int) @ iv.astype(int).T) > 0
    idx = np.nonzero(act.ravel())[0]  # u-major, matches TensorSpace.index
    if idx.size == 0:
        raise FullyTrimmedError("all basis functions of the patch are trimmed away")
    return idx


def gauss_rule(q: int, lo=0.0, hi=1.0):
    """q-point Gauss-Legendre rule on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return lo + (hi - lo) * 0.5 * (x + 1.0), 0.5 * (hi - lo) * w


def tensor_gauss(q: int, lo, hi):
    xu, wu = gauss_rule(q, lo[0], hi[0])
    xv, wv = gauss_rule(q, lo[1], hi[1])
    pts = np.stack(np.meshgrid(xu, xv, indexing="ij"), axis=-1).reshape(-1, 2)
    w = np.outer(wu, wv).ravel()
    return pts, w


def _reference_tensor_gauss(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    x = 0.5 * (x + 1.0)
    pts = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    return pts, np.outer(0.5 * w, 0.5 * w).ravel()


def _boxes_tensor_gauss(boxes: np.ndarray, q: int):
    """Tensor Gauss rule on every box of an (N, 4) [x, y, w, h] array."""
    ref_p, ref_w = _reference_tensor_gauss(q)
    pts = boxes[:, None, :2] + ref_p[None, :, :] * boxes[:, None, 2:]
    w = ref_w[None, :] * (boxes[:, 2] * boxes[:, 3])[:, None]
    return pts.reshape(-1, 2), w.ravel()


def cut_quadrature(bounds, trims, mu, q: int = 4, depth: int = 6,
                   mask_factor: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature for the active part of one element.

    Cut elements are subdivided by an adaptive quadtree: boxes whose center
    distance to the trim boundary exceeds their half diagonal are exactly
    full (tensor Gauss) or empty; ambiguous boxes are split until ``depth``,
    where a denser Gauss rule masked by pointwise inside tests is applied.

    Args:
        bounds: ((u0, v0), (u1, v1)) element box in parametric coordinates.
        trims: trim specs (or already-resolved trims when mu is None).
        mu: parameter vector, ignored for resolved trims.
        q: base tensor Gauss order.
        depth: quadtree subdivision depth for cut elements.
        mask_factor: deepest ambiguous leaves use a (mask_factor*q)^2 rule.

    Returns:
        (points, weights) in parametric coordinates; weights carry the
        parametric measure of the active region.
    """
    if depth < 1:
        raise ConfigError("quadtree depth must be >= 1")
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    resolved = trims if (trims and hasattr(trims[0], "signed_distance")) else resolve_trims(trims, mu)
    if not resolved:
        return tensor_gauss(q, lo, hi)

    pts_out = []
    w_out = []
    boxes = np.array([[lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]]])
    for level in range(depth + 1):
        if boxes.size == 0:
            break
        centers = boxes[:, :2] + 0.5 * boxes[:, 2:]
        s = active_distance(resolved, centers)
        half_diag = 0.5 * np.hypot(boxes[:, 2], boxes[:, 3])
        full = s > half_diag
        empty = s < -half_diag
        ambiguous = ~(full | empty)
        if np.any(full):
            p, w = _boxes_tensor_gauss(boxes[full], q)
            pts_out.append(p)
            w_out.append(w)
        amb = boxes[ambiguous]
        if level == depth:
            if amb.size:
                # composite masked rule: mask_factor^2 panels of q x q Gauss
                m = mask_factor
                sub = amb[:, None, None, :].repeat(m, 1).repeat(m, 2).reshape(-1, 4).copy()
                step = sub[:, 2:] / m
                shifts = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"),
                                  -1).reshape(-1, 2)
                sub[:, :2] += np.tile(shifts, (amb.shape[0], 1)) * step
                sub[:, 2:] = step
                p, w = _boxes_tensor_gauss(sub, q)
                inside = active_distance(resolved, p) > 0
                pts_out.append(p[inside])
                w_out.append(w[inside])
            break
        if amb.size == 0:
            break
        half = amb[:, 2:] * 0.5
        children = []
        for dx in (0.0, 1.0):
            for dy in (0.0, 1.0):
                c = amb.copy()
                c[:, 0] += dx * half[:, 0]
                c[:, 1] += dy * half[:, 1]
                c[:, 2:] = half
                children.append(c)
        boxes = np.concatenate(children, axis=0)

    if not pts_out:
        return np.empty((0, 2)), np.empty(0)
    return np.concatenate(pts_out, axis=0), np.concatenate(w_out, axis=0)


def cut_quadrature_batch(bounds_list, resolved, q: int = 4, depth: int = 6,
                         mask_factor: int = 3):
    """Quadtree rules for many cut elements in one level-synchronized sweep.

    Args:
        bounds_list: sequence of ((u0, v0), (u1, v1)) element boxes.
        resolved: resolved trims shared by all elements.

    Returns:
        list of (points, weights) aligned with bounds_list; identical to
        calling cut_quadrature per element, but the inside tests are batched
        across elements.
    """
    if depth < 1:
        raise ConfigError("quadtree depth must be >= 1")
    n = len(bounds_list)
    if n == 0:
        return []
    boxes = np.array([[lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]]
                      for lo, hi in bounds_list])
    owner = np.arange(n)
    pts_acc, w_acc, own_acc = [], [], []

    def emit(bxs, owners, order):
        ref_p, ref_w = _reference_tensor_gauss(order)
        p = (bxs[:, None, :2] + ref_p[None, :, :] * bxs[:, None, 2:]).reshape(-1, 2)
        w = (ref_w[None, :] * (bxs[:, 2] * bxs[:, 3])[:, None]).ravel()
        o = np.repeat(owners, order * order)
        return p, w, o

    for level in range(depth + 1):
        if boxes.size == 0:
            break
        centers = boxes[:, :2] + 0.5 * boxes[:, 2:]
        s = active_distance(resolved, centers)
        half_diag = 0.5 * np.hypot(boxes[:, 2], boxes[:, 3])
        full = s > half_diag
        empty = s < -half_diag
        ambiguous = ~(full | empty)
        if np.any(full):
            p, w, o = emit(boxes[full], owner[full], q)
            pts_acc.append(p)
            w_acc.append(w)
            own_acc.append(o)
        amb, amb_owner = boxes[ambiguous], owner[ambiguous]
        if level == depth:
            if amb.size:
                m = mask_factor
                sub = amb[:, None, None, :].repeat(m, 1).repeat(m, 2).reshape(-1, 4).copy()
                step = sub[:, 2:] / m
                shifts = np.stack(np.meshgrid(np.arange(m), np.arange(m),
                                              indexing="ij"), -1).reshape(-1, 2)
                sub[:, :2] += np.tile(shifts, (amb.shape[0], 1)) * step
                sub[:, 2:] = step
                p, w, o = emit(sub, np.repeat(amb_owner, m * m), q)
                inside = active_distance(resolved, p) > 0
                pts_acc.append(p[inside])
                w_acc.append(w[inside])
                own_acc.append(o[inside])
            break
        if amb.size == 0:
            break
        half = amb[:, 2:] * 0.5
        children = []
        for dx in (0.0, 1.0):
            for dy in (0.0, 1.0):
                c = amb.copy()
                c[:, 0] += dx * half[:, 0]
                c[:, 1] += dy * half[:, 1]
                c[:, 2:] = half
                children.append(c)
        boxes = np.concatenate(children, axis=0)
        owner = np.tile(amb_owner, 4)

    if not pts_acc:
        return [(np.empty((0, 2)), np.empty(0))] * n
    P = np.concatenate(pts_acc)
    W = np.concatenate(w_acc)
    O = np.concatenate(own_acc)
    order = np.argsort(O, kind="stable")
    P, W, O = P[order], W[order], O[order]
    splits = np.searchsorted(O, np.arange(1, n))
    out = []
    for pi, wi in zip(np.split(P, splits), np.split(W, splits)):
        out.append((pi, wi))
    return out


def find_axis_crossings(curve: ResolvedSplineCurve, axis: int, values: np.ndarray,
                        n_scan: int = 1024, tol: float = 1e-13) -> np.ndarray:
    """Curve parameters where coordinate ``axis`` crosses the given values.

    Dense scan followed by bisection; returns sorted parameters strictly
    inside the curve domain.
    """
    lo, hi = curve.kv.domain
    t = np.linspace(lo, hi, n_scan + 1)
    x = curve.point(t, 0)[0][:, axis]
    roots = []
    for val in np.atleast_1d(values):
        g = x - val
        sign_change = np.nonzero(g[:-1] * g[1:] < 0)[0]
        for k in sign_change:
            a, b = t[k], t[k + 1]
            fa = g[k]
            for _ in range(60):
                m = 0.5 * (a + b)
                fm = float(curve.point(np.array([m]), 0)[0][0, axis]) - val
                if fa * fm <= 0:
                    b = m
                else:
                    a, fa = m, fm
                if b - a < tol:
                    break
            roots.append(0.5 * (a + b))
        # grid nodes exactly on the value count only for genuine crossings;
        # tangential contact (curve running along a knot line) adds none
        on_node = np.nonzero(np.abs(g) == 0.0)[0]
        for k in on_node:
            if 0 < k < n_scan and g[k - 1] * g[k + 1] < 0:
                roots.append(t[k])
    roots = np.array(sorted(roots))
    if roots.size:
        keep = np.concatenate([[True], np.diff(roots) > 1e-10])
        roots = roots[keep]
        roots = roots[(roots > lo + 1e-12) & (roots < hi - 1e-12)]
    return roots


def curve_on_surface(curve: ResolvedSplineCurve, geom):
    """Physical point/velocity callable for a parametric-domain curve."""

    def point_fn(t):
        C, Cp = curve.point(t, 1)
        _, d1, _ = geom.eval(C, nders=1)
        V = d1[:, 0] * Cp[:, 0:1] + d1[:, 1] * Cp[:, 1:2]
        x, _, _ = geom.eval(C, nders=0)
        return x, V

    return point_fn


def arc_quadrature(point_fn, partition: np.ndarray, order: int):
    """Gauss rule along a parameterized physical curve.

    Args:
        point_fn: callable t -> (X (G, 3), dX/dt (G, 3)) physical point and
            velocity at curve parameters t.
        partition: sorted breakpoints of the curve parameter.
        order: Gauss points per sub-interval.

    Returns:
        (t, weights, tangents): parameters (G,), arc-length weights (G,), and
        unit tangents (G, 3). Weights sum to the physical arc length.
    """
    ts = []
    ws = []
    for a, b in zip(partition[:-1], partition[1:]):
        if b - a <= 1e-14:
            continue
        x, w = gauss_rule(order, a, b)
        ts.append(x)
        ws.append(w)
    t = np.concatenate(ts)
    w = np.concatenate(ws)
    X, V = point_fn(t)
    speed = np.linalg.norm(V, axis=1)
    tangents = V / speed[:, None]
    return t, w * speed, tangents
