"""Dense labels from simulation-style inputs: SDF contact probability and
force fields extrapolated from sparse contact manifolds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from contactfield import _backend
from contactfield.core import ContactField
from contactfield.errors import ParseError, ValidationError


@dataclass(frozen=True)
class SoftContactConfig:
    k_sharpness: float = 1.7
    half_prob_depth: float = 0.005

    def __post_init__(self):
        if not self.k_sharpness > 0 or not self.half_prob_depth > 0:
            raise ValidationError("k_sharpness and half_prob_depth must be > 0")

    @property
    def length_scale(self):
        """Length at which ``exp(-(d / length)^k)`` equals one half at ``half_prob_depth``."""
        return self.half_prob_depth / math.log(2.0) ** (1.0 / self.k_sharpness)


@dataclass(frozen=True)
class SparseContact:
    position: np.ndarray
    normal: np.ndarray
    magnitude: float

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        n = np.array(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValidationError("contact normal must be unit length")
        if not self.magnitude >= 0:
            raise ValidationError("contact force magnitude must be >= 0")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "magnitude", float(self.magnitude))


@dataclass(frozen=True)
class ExtrapolationConfig:
    lambda_dist: float = 50.0
    d_thresh: float = 0.005
    clip_percentile: float | None = 98.0

    def __post_init__(self):
        if not self.lambda_dist > 0:
            raise ValidationError("lambda_dist must be > 0")
        if not self.d_thresh > 0:
            raise ValidationError("d_thresh must be > 0 (a clearance distance)")
        if self.clip_percentile is not None and not 0 < self.clip_percentile <= 100:
            raise ValidationError("clip_percentile must be in (0, 100]")


def soft_contact_prob(d, cfg=SoftContactConfig()):
    """Contact probability from signed distance.

    Touching or penetrating points (``d <= 0``) get 1; the probability decays
    with clearance and crosses 0.5 at ``cfg.half_prob_depth``.
    """
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-((np.maximum(d, 0.0) / cfg.length_scale) ** cfg.k_sharpness))


def depth_modulation(d, d_thresh):
    d = np.asarray(d, dtype=np.float64)
    return np.sqrt(np.maximum(0.0, 1.0 - np.maximum(d, 0.0) / d_thresh))


def clip_magnitudes(force, percentile):
    """Rescale vectors longer than the given percentile of nonzero magnitudes."""
    force = np.array(force, dtype=np.float64)
    mag = np.linalg.norm(force, axis=1)
    nz = mag[mag > 0]
    if nz.size == 0:
        return force, None
    cap = float(np.percentile(nz, percentile))
    over = mag > cap
    force[over] *= (cap / mag[over])[:, None]
    return force, cap


def extrapolate_forces(tool_points, d, contacts, cfg=ExtrapolationConfig()):
    """Dense per-point forces from a sparse contact set.

    Each point receives the inverse-square-kernel mean of the contact force
    vectors, scaled by a taper that is 1 at or below the surface and 0 at
    ``cfg.d_thresh`` clearance, followed by percentile clipping.
    """
    pts = np.ascontiguousarray(tool_points, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(d, dtype=np.float64)
    if d.shape[0] != pts.shape[0]:
        raise ValidationError("one signed distance per tool point required")
    if not contacts:
        return np.zeros_like(pts)
    cpos = np.ascontiguousarray([c.position for c in contacts])
    cvec = np.ascontiguousarray([c.magnitude * c.normal for c in contacts])
    mean, _ = _backend.kernels.kernel_weighted_mean(pts, cpos, cvec, float(cfg.lambda_dist))
    force = depth_modulation(d, cfg.d_thresh)[:, None] * mean
    if cfg.clip_percentile is not None:
        force, _ = clip_magnitudes(force, cfg.clip_percentile)
    return force


def label_frame_sim(tool_points, d, contacts, soft_cfg=SoftContactConfig(), ext_cfg=ExtrapolationConfig()):
    return ContactField(soft_contact_prob(d, soft_cfg), extrapolate_forces(tool_points, d, contacts, ext_cfg))


def contacts_from_json(items, line=None):
    try:
        return [SparseContact(c["x"], c["n"], c["F"]) for c in items]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad contact record: {exc}", line) from None


def contacts_to_json(contacts):
    return [{"x": c.position.tolist(), "n": c.normal.tolist(), "F": c.magnitude} for c in contacts]


def read_contacts(path):
    """One JSON array of ``{"x", "n", "F"}`` objects per line, one line per frame."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                items = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(items, list):
                raise ParseError("contact record must be a JSON array", lineno)
            out.append(contacts_from_json(items, lineno))
    return out


def write_contacts(path, per_frame):
    with open(path, "w", encoding="utf-8") as fh:
        for contacts in per_frame:
            fh.write(json.dumps(contacts_to_json(contacts)) + "\n")
