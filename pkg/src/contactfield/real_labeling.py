"""Pseudo-ground-truth contact fields for real tool-on-table interactions."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from contactfield import force_opt
from contactfield.core import ContactField, pose_rotation, world_to_gripper
from contactfield.errors import EmptyProblemError, ValidationError
from contactfield.geometry import estimate_normals
from contactfield.tactile import (
    CalibrationScale,
    GateConfig,
    compute_wrench,
    contact_gate,
    filter_episode,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeuristicConfig:
    epsilon_height: float = 0.004
    gate: GateConfig = field(default_factory=GateConfig)

    def __post_init__(self):
        if not self.epsilon_height > 0:
            raise ValidationError("epsilon_height must be > 0")


@dataclass
class FrameDiagnostic:
    time: float
    gated: bool
    candidates: int = 0
    status: str = "no_contact"
    wrench_residual: float | None = None
    kkt_residual: float | None = None
    objective: float | None = None
    iterations: int | None = None
    converged: bool | None = None

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items()}


def heuristic_contact(frame, cfg=HeuristicConfig(), gated_in_contact=True):
    """Height-band contact probabilities above a known table.

    Points below ``table_z + epsilon_height`` get a probability falling
    linearly from 1 at the table to 0 at the top of the band; everything else,
    and every point of a frame not gated in contact, gets 0.
    """
    if frame.table_z is None:
        raise ValidationError(f"frame t={frame.time}: table height is required")
    n = frame.tool_points.shape[0]
    if not gated_in_contact:
        return ContactField.zeros(n)
    h = frame.tool_points[:, 2] - frame.table_z
    prob = np.where(h < cfg.epsilon_height, np.clip(1.0 - h / cfg.epsilon_height, 0.0, 1.0), 0.0)
    return ContactField(prob, np.zeros((n, 3)))


def frame_normals(frame, k=12):
    """Tool normals from the frame, estimated when absent; plus a validity mask."""
    if frame.tool_normals is not None:
        return frame.tool_normals, np.ones(frame.tool_points.shape[0], dtype=bool)
    return estimate_normals(frame.tool_points, k)


def build_socp(frame, probs, wrench, reg_lambda=0.01, reg_eps=1e-3, normals=None):
    """Assemble the force problem for one frame in the gripper frame.

    Returns ``(problem, indices)`` where ``indices`` maps candidates back to
    tool points.
    """
    prob = probs.prob if isinstance(probs, ContactField) else np.asarray(probs, dtype=np.float64)
    if prob.shape[0] != frame.tool_points.shape[0]:
        raise ValidationError("contact probabilities are not aligned with the tool points")
    if normals is None:
        normals, valid = frame_normals(frame)
    else:
        normals = np.asarray(normals, dtype=np.float64)
        valid = np.linalg.norm(normals, axis=1) > 0
    idx = np.flatnonzero((prob > 0) & valid)
    if idx.size == 0:
        raise EmptyProblemError(f"frame t={frame.time}: no force candidates")
    rot = pose_rotation(frame.gripper_pose)
    pos = world_to_gripper(frame.tool_points[idx], frame.gripper_pose)
    nrm = normals[idx] @ rot
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    problem = force_opt.SocpProblem(pos, nrm, prob[idx], wrench, reg_lambda, reg_eps)
    return problem, idx


def label_frame_real(frame, gated, heur_cfg=HeuristicConfig(), cal=CalibrationScale(),
                     reg_lambda=0.01, reg_eps=1e-3, solver_cfg=force_opt.SolverConfig(),
                     warm_start=None):
    """Label one frame; returns ``(ContactField, FrameDiagnostic, (indices, forces))``."""
    n = frame.tool_points.shape[0]
    diag = FrameDiagnostic(time=frame.time, gated=bool(gated))
    probs = heuristic_contact(frame, heur_cfg, gated)
    if not gated:
        return probs, diag, None
    wrench = compute_wrench(frame.tactile, cal, gripper_pose=frame.gripper_pose)
    try:
        problem, idx = build_socp(frame, probs, wrench, reg_lambda, reg_eps)
    except EmptyProblemError as exc:
        log.info("%s; frame skipped", exc)
        diag.status = "empty_problem"
        return ContactField.zeros(n), diag, None
    ws = None
    if warm_start is not None and np.array_equal(warm_start[0], idx):
        ws = warm_start[1]
    sol = force_opt.solve(problem, solver_cfg, warm_start=ws)
    force = np.zeros((n, 3))
    force[idx] = sol.forces @ pose_rotation(frame.gripper_pose).T
    prob = np.zeros(n)
    prob[idx] = probs.prob[idx]
    diag.candidates = int(idx.size)
    diag.status = "ok" if sol.converged else "not_converged"
    diag.wrench_residual = sol.wrench_residual
    diag.kkt_residual = sol.kkt_residual
    diag.objective = sol.objective
    diag.iterations = sol.iterations
    diag.converged = sol.converged
    return ContactField(prob, force), diag, (idx, sol.forces)


def label_episode_real(frames, filter_cfg=None, heur_cfg=HeuristicConfig(), cal=CalibrationScale(),
                       reg_lambda=0.01, reg_eps=1e-3, solver_cfg=force_opt.SolverConfig(),
                       threads=1, return_diagnostics=False):
    """Pseudo-label every frame of an episode.

    When ``filter_cfg`` is given the marker channels are filtered first;
    pass ``None`` for episodes that are already filtered. Gating runs over the
    whole (filtered) episode, after which frames are labeled independently.
    With ``threads > 1`` frames are solved in parallel and warm starts are
    not used.
    """
    frames = list(frames)
    if filter_cfg is not None:
        frames = filter_episode(frames, filter_cfg)
    if not frames:
        return ([], []) if return_diagnostics else []
    gates = contact_gate([f.tactile for f in frames], heur_cfg.gate)
    kw = dict(heur_cfg=heur_cfg, cal=cal, reg_lambda=reg_lambda, reg_eps=reg_eps, solver_cfg=solver_cfg)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda fg: label_frame_real(fg[0], fg[1], **kw), zip(frames, gates)))
    else:
        results, prev = [], None
        for f, g in zip(frames, gates):
            res = label_frame_real(f, g, warm_start=prev, **kw)
            prev = res[2]
            results.append(res)
    fields = [r[0] for r in results]
    diags = [r[1] for r in results]
    for d in diags:
        if d.status == "not_converged":
            log.warning("frame t=%s: force solver did not converge (kkt %.3g)", d.time, d.kkt_residual)
    return (fields, diags) if return_diagnostics else fields
