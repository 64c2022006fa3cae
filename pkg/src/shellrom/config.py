"""Configuration schema: strict validation and model construction.

Configs are plain JSON. Validation is strict: unknown keys are rejected and
every error carries the dotted path of the offending entry, collected into a
single ConfigError so a bad file reports all problems at once.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bspline import KnotVector, TensorSpace, uniform_knots
from .errors import ConfigError
from .kl_shell import EDGES, Material
from .model import PatchDef, ShellModel, constant_load, sine_bubble_load
from .multipatch import InterfaceSpec
from .trim import AffinePoint, CircleTrim, SplineCurveTrim

ROM_DEFAULTS = {
    "n_train": 100,
    "n_clusters": 4,
    "pod_tol": 1e-7,
    "deim_tol": None,  # defaults to pod_tol / 100
    "n_max": 40,
    "seed": 0,
}

OPT_DEFAULTS = {
    "gradient": "exact",
    "volume_max": None,
    "displacement_max": None,
    "max_iterations": 100,
    "max_outer": 5,
    "penalty0": 1.0,
}

QUAD_DEFAULTS = {"order": None, "depth": 6, "mask_factor": 3, "coupling_extra": 3}


class _Checker:
    def __init__(self):
        self.errors = []

    def fail(self, path, msg):
        self.errors.append((path, msg))

    def expect_keys(self, obj, path, required, optional=()):
        if not isinstance(obj, dict):
            self.fail(path, f"expected an object, got {type(obj).__name__}")
            return False
        for k in obj:
            if k not in required and k not in optional:
                self.fail(f"{path}.{k}", "unknown key")
        ok = True
        for k in required:
            if k not in obj:
                self.fail(f"{path}.{k}", "missing required key")
                ok = False
        return ok

    def number(self, obj, path, positive=False):
        if not isinstance(obj, (int, float)) or isinstance(obj, bool):
            self.fail(path, "expected a number")
            return 0.0
        if positive and obj <= 0:
            self.fail(path, "must be positive")
        return float(obj)

    def raise_if_failed(self):
        if self.errors:
            raise ConfigError(self.errors)


def _parse_trim(ck, node, path, mu_dim):
    if not isinstance(node, dict) or "kind" not in node:
        ck.fail(path, "trim must be an object with a 'kind'")
        return None
    kind = node.get("kind")
    if kind == "circle":
        if not ck.expect_keys(node, path, ("kind", "center", "radius"),
                              ("center_mu", "cut")):
            return None
        center = np.asarray(node["center"], float)
        lin = node.get("center_mu")
        lin = np.asarray(lin, float) if lin is not None else None
        if lin is not None and lin.shape != (2, mu_dim):
            ck.fail(f"{path}.center_mu", f"expected shape (2, {mu_dim})")
            return None
        cut = node.get("cut", "inside")
        if cut not in ("inside", "outside"):
            ck.fail(f"{path}.cut", "must be 'inside' or 'outside'")
            return None
        return CircleTrim(AffinePoint(center, lin),
                          ck.number(node["radius"], f"{path}.radius", positive=True),
                          cut_inside=(cut == "inside"))
    if kind == "spline_curve":
        if not ck.expect_keys(node, path, ("kind", "degree", "knots", "control_points"),
                              ("control_mu", "cut")):
            return None
        try:
            kv = KnotVector(int(node["degree"]), np.asarray(node["knots"], float))
        except ValueError as exc:
            ck.fail(f"{path}.knots", str(exc))
            return None
        cps = node["control_points"]
        if len(cps) != kv.n:
            ck.fail(f"{path}.control_points", f"expected {kv.n} points for this knot vector")
            return None
        mus = node.get("control_mu", [None] * len(cps))
        if len(mus) != len(cps):
            ck.fail(f"{path}.control_mu", "length must match control_points")
            return None
        points = []
        for j, (cp, m) in enumerate(zip(cps, mus)):
            lin = np.asarray(m, float) if m is not None else None
            if lin is not None and lin.shape != (2, mu_dim):
                ck.fail(f"{path}.control_mu[{j}]", f"expected shape (2, {mu_dim})")
                return None
            points.append(AffinePoint(np.asarray(cp, float), lin))
        cut = node.get("cut", "right")
        if cut not in ("left", "right"):
            ck.fail(f"{path}.cut", "must be 'left' or 'right'")
            return None
        return SplineCurveTrim(kv, tuple(points), cut)
    ck.fail(f"{path}.kind", f"unknown trim kind {kind!r}")
    return None


def _parse_patch(ck, node, path, mu_dim):
    required = ("id", "degree", "control_points")
    optional = ("knots_u", "knots_v", "elements_u", "elements_v", "refine",
                "mu_map", "trims")
    if not ck.expect_keys(node, path, required, optional):
        return None
    degree = node.get("degree")
    if not isinstance(degree, int) or degree < 2 or degree > 3:
        ck.fail(f"{path}.degree", "degree must be 2 or 3")
        return None

    def direction(suffix):
        if f"knots_{suffix}" in node:
            try:
                return KnotVector(degree, np.asarray(node[f"knots_{suffix}"], float))
            except ValueError as exc:
                ck.fail(f"{path}.knots_{suffix}", str(exc))
                return None
        if f"elements_{suffix}" in node:
            ne = node[f"elements_{suffix}"]
            if not isinstance(ne, int) or ne < 1:
                ck.fail(f"{path}.elements_{suffix}", "must be a positive integer")
                return None
            return uniform_knots(degree, ne)
        ck.fail(path, f"one of knots_{suffix} or elements_{suffix} is required")
        return None

    kvu, kvv = direction("u"), direction("v")
    if kvu is None or kvv is None:
        return None
    space = TensorSpace(kvu, kvv)
    cps = np.asarray(node["control_points"], float)
    if cps.shape != (space.n, 3):
        ck.fail(f"{path}.control_points",
                f"expected {space.n} control points (u-major grid), got {cps.shape[0] if cps.ndim else 0}")
        return None
    linear = None
    for j, entry in enumerate(node.get("mu_map", [])):
        epath = f"{path}.mu_map[{j}]"
        if not ck.expect_keys(entry, epath, ("point", "matrix")):
            continue
        iu, iv = entry["point"]
        if not (0 <= iu < space.kv_u.n and 0 <= iv < space.kv_v.n):
            ck.fail(f"{epath}.point", "control point index out of range")
            continue
        matrix = np.asarray(entry["matrix"], float)
        if matrix.shape != (3, mu_dim):
            ck.fail(f"{epath}.matrix", f"expected shape (3, {mu_dim})")
            continue
        if linear is None:
            linear = np.zeros((space.n, 3, mu_dim))
        linear[int(space.index(iu, iv))] += matrix
    trims = []
    for j, tnode in enumerate(node.get("trims", [])):
        trim = _parse_trim(ck, tnode, f"{path}.trims[{j}]", mu_dim)
        if trim is not None:
            trims.append(trim)
    refine = tuple(node.get("refine", (0, 0)))
    if len(refine) != 2 or any((not isinstance(r, int)) or r < 0 for r in refine):
        ck.fail(f"{path}.refine", "expected two non-negative integers")
        refine = (0, 0)
    return PatchDef(node["id"], space, cps, linear, refine, trims)


def parse_config(data: dict) -> ShellModel:
    """Validate a config dictionary and build the model."""
    ck = _Checker()
    ck.expect_keys(data, "config",
                   ("patches", "material", "load", "parameters"),
                   ("name", "dirichlet", "neumann", "interfaces",
                    "quadrature", "rom", "optimization"))
    ck.raise_if_failed()

    pnode = data["parameters"]
    mu_dim = 1
    lower = upper = None
    if ck.expect_keys(pnode, "parameters", ("lower", "upper")):
        lower = np.atleast_1d(np.asarray(pnode["lower"], float))
        upper = np.atleast_1d(np.asarray(pnode["upper"], float))
        mu_dim = lower.size
        if upper.size != mu_dim:
            ck.fail("parameters.upper", "lower/upper must have the same length")
        elif np.any(lower > upper):
            ck.fail("parameters", "lower bound exceeds upper bound")

    patches = []
    for j, node in enumerate(data["patches"]):
        pd = _parse_patch(ck, node, f"patches[{j}]", mu_dim)
        if pd is not None:
            patches.append(pd)
    ids = [pd.pid for pd in patches]
    if len(set(ids)) != len(ids):
        ck.fail("patches", "duplicate patch ids")

    material = None
    mnode = data["material"]
    if ck.expect_keys(mnode, "material",
                      ("youngs_modulus", "poisson_ratio", "thickness")):
        try:
            material = Material(ck.number(mnode["youngs_modulus"], "material.youngs_modulus"),
                                ck.number(mnode["poisson_ratio"], "material.poisson_ratio"),
                                ck.number(mnode["thickness"], "material.thickness"))
        except ValueError as exc:
            ck.fail("material", str(exc))

    load = None
    lnode = data["load"]
    if isinstance(lnode, dict) and lnode.get("type") == "constant":
        if ck.expect_keys(lnode, "load", ("type", "vector")):
            load = constant_load(lnode["vector"])
    elif isinstance(lnode, dict) and lnode.get("type") == "sine_bubble_z":
        if ck.expect_keys(lnode, "load", ("type", "amplitude")):
            load = sine_bubble_load(ck.number(lnode["amplitude"], "load.amplitude"))
    else:
        ck.fail("load.type", "must be 'constant' or 'sine_bubble_z'")

    def check_edge_ref(node, path, required, optional=()):
        if not ck.expect_keys(node, path, required, optional):
            return False
        ok = True
        if node["patch"] not in ids:
            ck.fail(f"{path}.patch", f"unknown patch id {node['patch']!r}")
            ok = False
        if node["edge"] not in EDGES:
            ck.fail(f"{path}.edge", f"edge must be one of {EDGES}")
            ok = False
        return ok

    dirichlet = []
    for j, node in enumerate(data.get("dirichlet", [])):
        path = f"dirichlet[{j}]"
        if check_edge_ref(node, path, ("patch", "edge", "components")):
            comps = node["components"]
            if not all(c in (0, 1, 2) for c in comps):
                ck.fail(f"{path}.components", "components must be 0, 1, or 2")
            else:
                dirichlet.append((node["patch"], node["edge"], tuple(comps)))

    neumann = []
    for j, node in enumerate(data.get("neumann", [])):
        path = f"neumann[{j}]"
        if check_edge_ref(node, path, ("patch", "edge"), ("traction", "moment")):
            neumann.append((node["patch"], node["edge"],
                            np.asarray(node.get("traction", [0, 0, 0]), float),
                            float(node.get("moment", 0.0))))

    interfaces = []
    for j, node in enumerate(data.get("interfaces", [])):
        path = f"interfaces[{j}]"
        if not ck.expect_keys(node, path, ("patches",), ("edges", "trims")):
            continue
        pair = node["patches"]
        if len(pair) != 2 or any(p not in ids for p in pair):
            ck.fail(f"{path}.patches", "must reference two known patch ids")
            continue
        idx = (ids.index(pair[0]), ids.index(pair[1]))
        if "edges" in node:
            if any(e not in EDGES for e in node["edges"]) or len(node["edges"]) != 2:
                ck.fail(f"{path}.edges", f"must be two of {EDGES}")
                continue
            interfaces.append(InterfaceSpec(idx, tuple(node["edges"])))
        elif "trims" in node:
            ti = node["trims"]
            if len(ti) != 2:
                ck.fail(f"{path}.trims", "must give one trim index per patch")
                continue
            bad = False
            for pi, t in zip(idx, ti):
                if not isinstance(t, int) or t < 0 or t >= len(patches[pi].trims):
                    ck.fail(f"{path}.trims", f"trim index {t} not defined on patch {ids[pi]!r}")
                    bad = True
            if not bad:
                interfaces.append(InterfaceSpec(idx, trim_indices=tuple(ti)))
        else:
            ck.fail(path, "either 'edges' or 'trims' is required")

    quad = dict(QUAD_DEFAULTS)
    if "quadrature" in data:
        if ck.expect_keys(data["quadrature"], "quadrature", (),
                          tuple(QUAD_DEFAULTS)):
            quad.update(data["quadrature"])

    rom = dict(ROM_DEFAULTS)
    if "rom" in data:
        if ck.expect_keys(data["rom"], "rom", (), tuple(ROM_DEFAULTS)):
            rom.update(data["rom"])
    if rom["deim_tol"] is None:
        rom["deim_tol"] = rom["pod_tol"] / 100.0

    opt = dict(OPT_DEFAULTS)
    if "optimization" in data:
        if ck.expect_keys(data["optimization"], "optimization", (), tuple(OPT_DEFAULTS)):
            opt.update(data["optimization"])

    ck.raise_if_failed()
    return ShellModel(patches, material, load, dirichlet, neumann, interfaces,
                      lower, upper, quad_order=quad["order"], cut_depth=quad["depth"],
                      mask_factor=quad["mask_factor"],
                      coupling_quad_extra=quad["coupling_extra"], rom=rom,
                      optimization=opt, name=data.get("name", "model"))


def load_config(path) -> ShellModel:
    """Load, validate, and build a model from a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([(str(path), "config file does not exist")])
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([(str(path), f"invalid JSON: {exc}")]) from exc
    return parse_config(data)


def config_to_dict(data: dict) -> dict:
    """Round-trip helper: normalized copy of a config dictionary."""
    return json.loads(json.dumps(data, sort_keys=True))
