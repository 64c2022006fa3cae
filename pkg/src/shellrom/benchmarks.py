"""Builders for the benchmark problem configurations.

Each function returns a JSON-serializable config dictionary accepted by
``config.parse_config``. The shipped fixture files under ``fixtures/`` are
generated from these builders (see demos/make_fixtures.py).
"""

from __future__ import annotations

import numpy as np

from .bspline import fit_circular_arc, uniform_knots

SCORDELIS = {
    "radius": 25.0,
    "length": 50.0,
    "span_deg": 80.0,
    "youngs_modulus": 4.32e8,
    "poisson_ratio": 0.0,
    "thickness": 0.25,
    "load_z": -90.0,
}

PLANE_7_2_2 = {
    "youngs_modulus": 1.0e6,
    "poisson_ratio": 0.3,
    "thickness": 0.022,
}


def _grid(list3):
    return [[float(x) for x in row] for row in list3]


def _plate_control_points(degree, nel_u, nel_v, knots_u=None, knots_v=None):
    from .bspline import KnotVector

    kvu = KnotVector(degree, np.asarray(knots_u)) if knots_u is not None else uniform_knots(degree, nel_u)
    kvv = KnotVector(degree, np.asarray(knots_v)) if knots_v is not None else uniform_knots(degree, nel_v)
    gu, gv = kvu.greville(), kvv.greville()
    pts = [[float(gu[iu]), float(gv[iv]), 0.0]
           for iu in range(kvu.n) for iv in range(kvv.n)]
    return pts


def plate_amplitude(material) -> float:
    """Forcing amplitude making w = sin(pi x) sin(pi y) the exact deflection."""
    E, nu, t = (material["youngs_modulus"], material["poisson_ratio"],
                material["thickness"])
    D = E * t ** 3 / (12.0 * (1.0 - nu ** 2))
    return float(4.0 * np.pi ** 4 * D)


def plate_single(degree=3, n_elements=16) -> dict:
    """Simply supported square plate with the manufactured sinusoidal load."""
    mat = dict(PLANE_7_2_2)
    return {
        "name": f"plate-single-p{degree}-n{n_elements}",
        "parameters": {"lower": [0.0], "upper": [0.0]},
        "material": mat,
        "load": {"type": "sine_bubble_z", "amplitude": plate_amplitude(mat)},
        "patches": [{
            "id": "plate",
            "degree": degree,
            "elements_u": n_elements,
            "elements_v": n_elements,
            "control_points": _plate_control_points(degree, n_elements, n_elements),
        }],
        "dirichlet": [{"patch": "plate", "edge": e, "components": [0, 1, 2]}
                      for e in ("west", "east", "south", "north")],
    }


def plate_two_patch_trimmed(degree=2, n_elements=16, nonconforming=False,
                            n_train=200, n_clusters=8, pod_tol=1e-7,
                            seed=20) -> dict:
    """Two overlapping unit-square patches joined along a parameterized
    quadratic trimming curve (planar Kirchhoff plate, manufactured load).

    The curve runs from (0.5, 0) to (0.5, 1) with its middle control point at
    (mu, 0.5); the left patch keeps the region left of the curve and vice
    versa. The non-conforming variant shifts the right patch's interior
    knots by sqrt(2)/100.
    """
    mat = dict(PLANE_7_2_2)
    shift = float(np.sqrt(2.0) / 100.0)
    kv = uniform_knots(degree, n_elements).knots

    def shifted():
        k = kv.copy()
        interior = slice(degree + 1, -(degree + 1))
        k[interior] = k[interior] + shift
        return [float(v) for v in k]

    curve = {
        "kind": "spline_curve",
        "degree": 2,
        "knots": [0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        "control_points": [[0.5, 0.0], [0.0, 0.5], [0.5, 1.0]],
        "control_mu": [None, [[1.0], [0.0]], None],
    }
    left = {
        "id": "left",
        "degree": degree,
        "elements_u": n_elements,
        "elements_v": n_elements,
        "control_points": _plate_control_points(degree, n_elements, n_elements),
        "trims": [dict(curve, cut="right")],
    }
    if nonconforming:
        ku = shifted()
        right = {
            "id": "right",
            "degree": degree,
            "knots_u": ku,
            "knots_v": shifted(),
            "control_points": _plate_control_points(degree, n_elements, n_elements,
                                                     knots_u=ku, knots_v=shifted()),
            "trims": [dict(curve, cut="left")],
        }
    else:
        right = {
            "id": "right",
            "degree": degree,
            "elements_u": n_elements,
            "elements_v": n_elements,
            "control_points": _plate_control_points(degree, n_elements, n_elements),
            "trims": [dict(curve, cut="left")],
        }
    return {
        "name": "plane-two-patch-trimmed" + ("-nonconforming" if nonconforming else ""),
        "parameters": {"lower": [0.25], "upper": [0.75]},
        "material": mat,
        "load": {"type": "sine_bubble_z", "amplitude": plate_amplitude(mat)},
        "patches": [left, right],
        "dirichlet": (
            [{"patch": "left", "edge": e, "components": [0, 1, 2]}
             for e in ("west", "south", "north")]
            + [{"patch": "right", "edge": e, "components": [0, 1, 2]}
               for e in ("east", "south", "north")]),
        "interfaces": [{"patches": ["left", "right"], "trims": [0, 0]}],
        "quadrature": {"depth": 4, "mask_factor": 2},
        "rom": {"n_train": n_train, "n_clusters": n_clusters, "pod_tol": pod_tol,
                "seed": seed},
    }


def _scordelis_half_patch(pid, angle_lo, angle_hi, degree, arc_elements,
                          crown_at_end):
    """Coarse design patch of the split roof; crown column carries the mu map."""
    R, L = SCORDELIS["radius"], SCORDELIS["length"]
    kv_arc, arc = fit_circular_arc(R, np.deg2rad(angle_lo), np.deg2rad(angle_hi),
                                   degree, arc_elements)
    kv_ax = uniform_knots(degree, 1)
    g_ax = kv_ax.greville()
    pts = []
    for iu in range(kv_arc.n):
        for iv in range(kv_ax.n):
            pts.append([float(arc[iu, 0]), float(L * g_ax[iv]), float(arc[iu, 1])])
    crown_iu = kv_arc.n - 1 if crown_at_end else 0
    mu_map = [{"point": [crown_iu, iv], "matrix": [[0.0], [0.0], [1.0]]}
              for iv in range(kv_ax.n)]
    return {
        "id": pid,
        "degree": degree,
        "knots_u": [float(v) for v in kv_arc.knots],
        "elements_v": 1,
        "control_points": pts,
        "mu_map": mu_map,
        "refine": [2, 4],
    }


def scordelis_two_patch(degree=2, arc_elements=4, n_train=200, n_clusters=1,
                        pod_tol=1e-7, seed=11, volume_max=1.9e3) -> dict:
    """Split Scordelis-Lo roof whose crown moves vertically with mu."""
    s = SCORDELIS
    return {
        "name": "scordelis-two-patch",
        "parameters": {"lower": [0.0], "upper": [10.0]},
        "material": {"youngs_modulus": s["youngs_modulus"],
                     "poisson_ratio": s["poisson_ratio"],
                     "thickness": s["thickness"]},
        "load": {"type": "constant", "vector": [0.0, 0.0, s["load_z"]]},
        "patches": [
            _scordelis_half_patch("west_half", -s["span_deg"] / 2, 0.0, degree,
                                  arc_elements, crown_at_end=True),
            _scordelis_half_patch("east_half", 0.0, s["span_deg"] / 2, degree,
                                  arc_elements, crown_at_end=False),
        ],
        "dirichlet": [
            {"patch": p, "edge": e, "components": [0, 2]}
            for p in ("west_half", "east_half") for e in ("south", "north")
        ],
        "interfaces": [{"patches": ["west_half", "east_half"],
                        "edges": ["east", "west"]}],
        "rom": {"n_train": n_train, "n_clusters": n_clusters, "pod_tol": pod_tol,
                "seed": seed},
        "optimization": {"volume_max": volume_max},
    }


def scordelis_trimmed_holes(degree=3, n_elements=16, n_train=160, n_clusters=8,
                            pod_tol=1e-7, seed=7) -> dict:
    """Scordelis-Lo roof with two circular holes moving along the diagonal."""
    s = SCORDELIS
    half = s["span_deg"] / 2
    kv_arc, arc = fit_circular_arc(s["radius"], -np.deg2rad(half), np.deg2rad(half),
                                   degree, n_elements)
    kv_ax = uniform_knots(degree, n_elements)
    g_ax = kv_ax.greville()
    pts = []
    for iu in range(kv_arc.n):
        for iv in range(kv_ax.n):
            pts.append([float(arc[iu, 0]), float(s["length"] * g_ax[iv]),
                        float(arc[iu, 1])])
    return {
        "name": "scordelis-trimmed-holes",
        "parameters": {"lower": [0.0], "upper": [0.1]},
        "material": {"youngs_modulus": s["youngs_modulus"],
                     "poisson_ratio": s["poisson_ratio"],
                     "thickness": s["thickness"]},
        "load": {"type": "constant", "vector": [0.0, 0.0, s["load_z"]]},
        "patches": [{
            "id": "roof",
            "degree": degree,
            "knots_u": [float(v) for v in kv_arc.knots],
            "elements_v": n_elements,
            "control_points": pts,
            "trims": [
                {"kind": "circle", "center": [0.25, 0.25],
                 "center_mu": [[1.0], [1.0]], "radius": 0.2, "cut": "inside"},
                {"kind": "circle", "center": [0.75, 0.75],
                 "center_mu": [[-1.0], [-1.0]], "radius": 0.2, "cut": "inside"},
            ],
        }],
        "dirichlet": [{"patch": "roof", "edge": e, "components": [0, 2]}
                      for e in ("south", "north")],
        "quadrature": {"depth": 4},
        "rom": {"n_train": n_train, "n_clusters": n_clusters, "pod_tol": pod_tol,
                "seed": seed},
        "optimization": {},
    }


def scordelis_untrimmed(degree=3, n_elements=24) -> dict:
    """Plain Scordelis-Lo roof for the benchmark deflection check."""
    s = SCORDELIS
    half = s["span_deg"] / 2
    kv_arc, arc = fit_circular_arc(s["radius"], -np.deg2rad(half), np.deg2rad(half),
                                   degree, n_elements)
    kv_ax = uniform_knots(degree, n_elements)
    g_ax = kv_ax.greville()
    pts = []
    for iu in range(kv_arc.n):
        for iv in range(kv_ax.n):
            pts.append([float(arc[iu, 0]), float(s["length"] * g_ax[iv]),
                        float(arc[iu, 1])])
    return {
        "name": "scordelis-untrimmed",
        "parameters": {"lower": [0.0], "upper": [0.0]},
        "material": {"youngs_modulus": s["youngs_modulus"],
                     "poisson_ratio": s["poisson_ratio"],
                     "thickness": s["thickness"]},
        "load": {"type": "constant", "vector": [0.0, 0.0, s["load_z"]]},
        "patches": [{
            "id": "roof",
            "degree": degree,
            "knots_u": [float(v) for v in kv_arc.knots],
            "elements_v": n_elements,
            "control_points": pts,
        }],
        "dirichlet": [{"patch": "roof", "edge": e, "components": [0, 2]}
                      for e in ("south", "north")],
    }
