"""Analytic signed-distance scenes and point-cloud normal estimation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from contactfield.errors import ParseError, ValidationError

KINDS = ("half_space", "sphere", "box", "capsule")


def _norm3(v):
    # explicit per-row form keeps batch and single-point results bit-identical
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])


@dataclass(frozen=True)
class SdfPrimitive:
    """One analytic shape. Use the ``half_space``/``sphere``/``box``/``capsule``
    constructors rather than filling ``params`` by hand."""

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown primitive kind {self.kind!r}")
        p = {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        need = {
            "half_space": ("point", "normal"),
            "sphere": ("center", "radius"),
            "box": ("center", "half_extents", "rotation"),
            "capsule": ("a", "b", "radius"),
        }[self.kind]
        missing = [k for k in need if k not in p]
        if missing:
            raise ValidationError(f"{self.kind}: missing parameters {missing}")
        if self.kind == "half_space":
            if abs(np.linalg.norm(p["normal"]) - 1.0) > 1e-9:
                raise ValidationError("half_space normal must be unit length")
        if "radius" in p and not p["radius"] > 0:
            raise ValidationError(f"{self.kind}: radius must be > 0")
        if self.kind == "box":
            if p["half_extents"].shape != (3,) or np.any(p["half_extents"] <= 0):
                raise ValidationError("box half_extents must be three positive values")
            r = p["rotation"]
            if r.shape != (3, 3) or not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
                raise ValidationError("box rotation must be a 3x3 rotation matrix")
        object.__setattr__(self, "params", p)

    @classmethod
    def half_space(cls, point, normal):
        """Solid below the plane through ``point``; ``normal`` points outward."""
        return cls("half_space", {"point": point, "normal": normal})

    @classmethod
    def sphere(cls, center, radius):
        return cls("sphere", {"center": center, "radius": radius})

    @classmethod
    def box(cls, center, half_extents, rotation=None):
        return cls("box", {"center": center, "half_extents": half_extents,
                           "rotation": np.eye(3) if rotation is None else rotation})

    @classmethod
    def capsule(cls, a, b, radius):
        return cls("capsule", {"a": a, "b": b, "radius": radius})

    def distance(self, pts):
        p = self.params
        if self.kind == "half_space":
            d = pts - p["point"]
            n = p["normal"]
            return d[:, 0] * n[0] + d[:, 1] * n[1] + d[:, 2] * n[2]
        if self.kind == "sphere":
            return _norm3(pts - p["center"]) - p["radius"]
        if self.kind == "box":
            local = (pts - p["center"]) @ p["rotation"]
            q = np.abs(local) - p["half_extents"]
            outside = _norm3(np.maximum(q, 0.0))
            inside = np.minimum(np.maximum(q[:, 0], np.maximum(q[:, 1], q[:, 2])), 0.0)
            return outside + inside
        # capsule: distance to segment minus radius
        ab = p["b"] - p["a"]
        ap = pts - p["a"]
        denom = float(ab @ ab)
        t = np.zeros(len(pts)) if denom == 0.0 else np.clip((ap @ ab) / denom, 0.0, 1.0)
        return _norm3(ap - t[:, None] * ab) - p["radius"]

    def to_dict(self):
        return {"kind": self.kind, **{k: v.tolist() for k, v in self.params.items()}}


@dataclass(frozen=True)
class SdfScene:
    """Union of primitives: the distance is the minimum over members."""

    primitives: tuple

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ValidationError("an SDF scene needs at least one primitive")
        object.__setattr__(self, "primitives", prims)

    def to_json(self):
        return [p.to_dict() for p in self.primitives]


def load_scene(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from None
    return scene_from_json(data)


def scene_from_json(data):
    if isinstance(data, dict):
        data = data.get("primitives", [])
    prims = []
    for i, rec in enumerate(data):
        try:
            kind = rec["kind"]
            params = {k: v for k, v in rec.items() if k != "kind"}
            if kind == "box":
                params.setdefault("rotation", np.eye(3))
            prims.append(SdfPrimitive(kind, params))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"primitive {i}: {exc}") from None
    return SdfScene(prims)


def batch_distance(scene, points):
    """Signed distance of every point to the scene (negative inside)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(0)
    pts = pts.reshape(-1, 3)
    d = scene.primitives[0].distance(pts)
    for prim in scene.primitives[1:]:
        d = np.minimum(d, prim.distance(pts))
    return d


def signed_distance(scene, p):
    return float(batch_distance(scene, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def estimate_normals(points, k=12, centroid=None):
    """Inward unit normals from local plane fits.

    For each point the normal is the least-variance direction of its ``k``
    nearest neighbours (the point itself included), flipped to face the cloud
    centroid. Returns ``(normals, valid)``; neighbourhoods whose covariance
    has rank below 2 are marked invalid and get a zero normal.
    """
    pts = np.asarray(points, dtype=np.float64)
    if k < 3:
        raise ValidationError("normal estimation needs k >= 3")
    if pts.shape[0] < k + 1:
        raise ValidationError(f"normal estimation needs at least {k + 1} points, got {pts.shape[0]}")
    _, nbr = cKDTree(pts).query(pts, k=k + 1)
    local = pts[nbr]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    valid = evals[:, 1] > 1e-10 * scale
    c = pts.mean(axis=0) if centroid is None else np.asarray(centroid, dtype=np.float64)
    flip = np.sum(normals * (c - pts), axis=1) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[~valid] = 0.0
    return normals, valid
