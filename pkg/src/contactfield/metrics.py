"""Contact-field losses and evaluation metrics (numpy, no autodiff)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from contactfield.errors import ValidationError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.75
    alpha_pos: float = 0.9
    tau_dir: float = 0.005
    w_clip: tuple = (1.0, 3.0)
    lambda_prob: float = 1.0
    lambda_force: float = 2.0
    lambda_mag: float = 1.5
    lambda_dir: float = 1.0
    w_scale: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if not 0 < self.alpha_pos < 1:
            raise ValidationError("alpha_pos must lie in (0, 1)")
        if self.w_clip[0] > self.w_clip[1]:
            raise ValidationError("w_clip lower bound exceeds upper bound")
        if min(self.lambda_prob, self.lambda_force, self.lambda_mag, self.lambda_dir) < 0:
            raise ValidationError("loss weights must be >= 0")


def _aligned(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"{what}: length mismatch ({a.shape[0]} vs {b.shape[0]})")
    return a, b


def focal_loss(pred_prob, target, cfg=LossConfig()):
    """Mean binary focal loss with positive-class balancing ``alpha_pos``."""
    p, y = _aligned(np.ravel(pred_prob), np.ravel(target), "focal_loss")
    if p.size == 0:
        return 0.0
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = y >= 0.5
    pt = np.where(pos, p, 1.0 - p)
    at = np.where(pos, cfg.alpha_pos, 1.0 - cfg.alpha_pos)
    return float(np.mean(-at * (1.0 - pt) ** cfg.gamma * np.log(pt)))


def adaptive_weights(gt_mag, cfg=LossConfig()):
    lo, hi = cfg.w_clip
    return np.clip(cfg.w_scale * np.log1p(gt_mag), lo, hi)


def magnitude_loss(pred_f, gt_f, cfg=LossConfig()):
    pf, gf = _aligned(pred_f, gt_f, "magnitude_loss")
    if pf.size == 0:
        return 0.0
    pm = np.linalg.norm(pf.reshape(-1, 3), axis=1)
    gm = np.linalg.norm(gf.reshape(-1, 3), axis=1)
    return float(np.mean(adaptive_weights(gm, cfg) * (pm - gm) ** 2))


def direction_loss(pred_f, gt_f, cfg=LossConfig()):
    """Mean cosine distance over points whose reference force exceeds ``tau_dir``."""
    pf, gf = _aligned(pred_f, gt_f, "direction_loss")
    pf = pf.reshape(-1, 3)
    gf = gf.reshape(-1, 3)
    gm = np.linalg.norm(gf, axis=1)
    mask = gm > cfg.tau_dir
    if not mask.any():
        return 0.0
    pm = np.linalg.norm(pf[mask], axis=1)
    cos = np.sum(pf[mask] * gf[mask], axis=1) / np.maximum(pm * gm[mask], 1e-8)
    return float(np.mean(1.0 - cos))


def combine_losses(l_prob, l_mag, l_dir, cfg=LossConfig()):
    return cfg.lambda_prob * l_prob + cfg.lambda_force * (cfg.lambda_mag * l_mag + cfg.lambda_dir * l_dir)


def composite_loss(pred, gt, cfg=LossConfig()):
    """Weighted total of the probability, magnitude and direction losses.

    ``pred`` and ``gt`` are ``ContactField`` objects; ground-truth
    probabilities are binarized at 0.5 for the focal term.
    """
    l_prob = focal_loss(pred.prob, np.asarray(gt.prob) >= 0.5, cfg)
    l_mag = magnitude_loss(pred.force, gt.force, cfg)
    l_dir = direction_loss(pred.force, gt.force, cfg)
    return {
        "total": combine_losses(l_prob, l_mag, l_dir, cfg),
        "prob": l_prob,
        "mag": l_mag,
        "dir": l_dir,
    }


def confusion(pred_prob, gt_binary, threshold=0.5):
    p, g = _aligned(np.ravel(pred_prob), np.ravel(gt_binary), "f1_score")
    pb = p >= threshold
    gb = g.astype(bool) if g.dtype == bool else g >= 0.5
    tp = int(np.sum(pb & gb))
    fp = int(np.sum(pb & ~gb))
    fn = int(np.sum(~pb & gb))
    return tp, fp, fn


def f1_from_counts(tp, fp, fn):
    if tp + fp == 0 and tp + fn == 0:
        return 1.0
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def f1_score(pred_prob, gt_binary, threshold=0.5):
    """F1 of thresholded predictions; 1.0 when neither side has positives."""
    return f1_from_counts(*confusion(pred_prob, gt_binary, threshold))


def force_mse(pred_f, gt_f):
    """Mean squared error over all force components (divisor ``3N``)."""
    pf, gf = _aligned(pred_f, gt_f, "force_mse")
    if pf.size == 0:
        return 0.0
    return float(np.mean((pf - gf) ** 2))


def eff_norm(eff, blade_len, max_blade_len):
    """Scraping efficiency normalised by relative blade length, capped at 1."""
    if not blade_len > 0:
        raise ValidationError("blade length must be > 0")
    if blade_len > max_blade_len:
        raise ValidationError("blade length exceeds the maximum blade length")
    return min(1.0, eff / (blade_len / max_blade_len))


def evaluate_fields(pred_fields, gt_fields, cfg=LossConfig(), threshold=0.5):
    """Pooled metrics over a sequence of frames.

    F1 and force MSE pool every point of every frame; loss components are
    averaged over frames.
    """
    if len(pred_fields) != len(gt_fields):
        raise ValidationError(f"{len(pred_fields)} predicted frames vs {len(gt_fields)} reference frames")
    tp = fp = fn = 0
    sq, count = 0.0, 0
    losses = {"total": 0.0, "prob": 0.0, "mag": 0.0, "dir": 0.0}
    for p, g in zip(pred_fields, gt_fields):
        a, b, c = confusion(p.prob, np.asarray(g.prob) >= 0.5, threshold)
        tp, fp, fn = tp + a, fp + b, fn + c
        _aligned(p.force, g.force, "force")
        sq += float(np.sum((p.force - g.force) ** 2))
        count += p.force.size
        for k, v in composite_loss(p, g, cfg).items():
            losses[k] += v
    n = max(len(pred_fields), 1)
    return {
        "frames": len(pred_fields),
        "f1": f1_from_counts(tp, fp, fn),
        "force_mse": sq / count if count else 0.0,
        "loss": {k: v / n for k, v in losses.items()},
    }
