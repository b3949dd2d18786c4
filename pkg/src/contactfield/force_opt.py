"""Friction-cone constrained force distribution.

Given candidate contact points with inward normals and heuristic contact
probabilities, find per-point forces whose net wrench about the gripper
matches a measured wrench::

    minimize    ||G f - W||^2 + lam * sum_i ||f_i||^2 / (c_i + eps)
    subject to  ||f_i|| <= 2 (f_i . n_i)        for every candidate i

The constraint is a second-order cone with a 60 degree half-angle. Torque
rows of ``G`` and ``W`` are divided by a characteristic length so that the
residual is measured in newtons throughout.

The problem is solved with ADMM on the splitting ``f = z``, ``z`` in the cone
product: a cached linear solve for ``f``, a closed-form cone projection for
``z`` and a scaled dual update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from contactfield import _backend
from contactfield.errors import SolverError, ValidationError
from contactfield.tactile import L_C, Wrench

log = logging.getLogger(__name__)

#: ratio of force magnitude to its normal component on the cone boundary
CONE_MU = 2.0
CONE_HALF_ANGLE = np.arccos(1.0 / CONE_MU)


@dataclass(frozen=True)
class SocpProblem:
    positions: np.ndarray
    normals: np.ndarray
    probs: np.ndarray
    wrench: Wrench
    reg_lambda: float = 0.01
    reg_eps: float = 1e-3
    length: float = L_C

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        nrm = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        c = np.asarray(self.probs, dtype=np.float64).ravel()
        if pos.shape[0] < 1:
            raise ValidationError("force problem needs at least one candidate")
        if nrm.shape != pos.shape or c.shape[0] != pos.shape[0]:
            raise ValidationError("positions, normals and probs must align")
        if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
            raise ValidationError("candidate normals must be unit length")
        if np.any(c < 0) or np.any(c > 1):
            raise ValidationError("candidate probabilities must lie in [0, 1]")
        if self.reg_lambda < 0 or not self.reg_eps > 0:
            raise ValidationError("need reg_lambda >= 0 and reg_eps > 0")
        for k, v in (("positions", pos), ("normals", nrm), ("probs", c)):
            v.flags.writeable = False
            object.__setattr__(self, k, v)

    @property
    def n(self):
        return self.positions.shape[0]

    def weights(self):
        """Per-candidate ridge weight ``lam / (c_i + eps)``."""
        return self.reg_lambda / (self.probs + self.reg_eps)

    def scaled_target(self):
        return self.wrench.scaled(self.length)

    def scaled_grasp_matrix(self):
        g = grasp_matrix(self.positions)
        g[3:] /= self.length
        return g


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    max_iters: int = 2000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    over_relaxation: float = 1.6
    tol_kkt: float = 1e-7
    adaptive_rho: bool = True
    check_every: int = 25

    def __post_init__(self):
        if not self.rho > 0:
            raise ValidationError("rho must be > 0")
        if not (self.tol_primal > 0 and self.tol_dual > 0 and self.tol_kkt > 0):
            raise ValidationError("tolerances must be positive")
        if not 1.0 <= self.over_relaxation <= 1.9:
            raise ValidationError("over_relaxation must lie in [1, 1.9]")
        if self.max_iters < 1 or self.check_every < 1:
            raise ValidationError("max_iters and check_every must be >= 1")


@dataclass(frozen=True)
class SocpSolution:
    forces: np.ndarray
    objective: float
    wrench_residual: float
    iterations: int
    converged: bool
    kkt_residual: float
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    rho: float = 1.0


# --------------------------------------------------------------------------

def cross_matrix(p):
    x, y, z = p
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def grasp_matrix(positions):
    """``6 x 3n`` map from stacked point forces to ``(net force, net torque)``."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    g = np.zeros((6, n, 3))
    g[:3] = np.eye(3)[:, None, :]
    x, y, z = pos.T
    # rows of the cross-product matrix [p]x for every candidate
    g[3, :, 1], g[3, :, 2] = -z, y
    g[4, :, 0], g[4, :, 2] = z, -x
    g[5, :, 0], g[5, :, 1] = -y, x
    return g.reshape(6, 3 * n)


def cone_project(v, n):
    """Euclidean projection of ``v`` onto ``{f : ||f|| <= 2 f.n}``."""
    v = np.ascontiguousarray(v, dtype=np.float64).reshape(1, 3)
    n = np.ascontiguousarray(n, dtype=np.float64).reshape(1, 3)
    return _backend.kernels.cone_project_batch(v, n)[0]


def cone_project_batch(v, normals):
    return _backend.kernels.cone_project_batch(
        np.ascontiguousarray(v, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3),
    )


def cone_violation(forces, normals):
    """Per-point ``max(0, ||f|| - 2 f.n)``."""
    f = np.asarray(forces, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    return np.maximum(0.0, np.linalg.norm(f, axis=1) - CONE_MU * np.sum(f * n, axis=1))


def objective(problem, forces):
    f = np.asarray(forces, dtype=np.float64).ravel()
    r = problem.scaled_grasp_matrix() @ f - problem.scaled_target()
    reg = problem.weights() @ np.sum(f.reshape(-1, 3) ** 2, axis=1)
    return float(r @ r + reg)


def gradient(problem, forces):
    f = np.asarray(forces, dtype=np.float64).ravel()
    g = problem.scaled_grasp_matrix()
    lam = np.repeat(problem.weights(), 3)
    return 2.0 * (g.T @ (g @ f - problem.scaled_target()) + lam * f)


def kkt_residual(problem, forces):
    """Projected-gradient stationarity ``||f - P_K(f - grad(f))||``."""
    f = np.asarray(forces, dtype=np.float64).ravel()
    step = f - gradient(problem, f)
    proj = cone_project_batch(step.reshape(-1, 3), problem.normals).ravel()
    return float(np.linalg.norm(f - proj))


def _system_inverse(h, rho):
    m = h.shape[0]
    try:
        factor = cho_factor(h + rho * np.eye(m))
    except LinAlgError:
        raise SolverError("force-update system is not positive definite") from None
    return np.ascontiguousarray(cho_solve(factor, np.eye(m)))


def solve(problem, cfg=SolverConfig(), warm_start=None):
    """Solve the cone-constrained force distribution problem by ADMM.

    ``warm_start`` is an optional ``(n, 3)`` initial force guess, e.g. the
    previous frame's solution for the same candidates. The returned forces
    are the projected iterate, so they satisfy the cone constraints exactly.

    Iteration stops once the primal and dual residuals are below their
    tolerances and the projected-gradient stationarity of the iterate is
    below ``cfg.tol_kkt``. A warm start that already meets the stationarity
    tolerance is returned as is.
    """
    g = problem.scaled_grasp_matrix()
    w = problem.scaled_target()
    lam = np.repeat(problem.weights(), 3)
    h = g.T @ g + np.diag(lam)
    q = np.ascontiguousarray(g.T @ w)
    m = q.shape[0]
    normals = problem.normals

    def obj(f):
        r = g @ f - w
        return float(r @ r + lam @ (f * f))

    def kkt(f):
        step = f - 2.0 * (h @ f - q)
        return float(np.linalg.norm(f - cone_project_batch(step.reshape(-1, 3), normals).ravel()))

    x = np.zeros(m)
    z = np.zeros(m)
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=np.float64).reshape(-1, 3)
        if ws.shape != (problem.n, 3):
            raise ValidationError("warm start shape does not match the candidates")
        z[:] = cone_project_batch(ws, normals).ravel()
        x[:] = z
    u = np.zeros(m)

    rho = cfg.rho
    done = 0
    rp = rd = np.inf
    best_z, best_obj = z.copy(), obj(z)
    converged = kkt(z) < cfg.tol_kkt and (warm_start is not None or not q.any())
    if converged:
        rp = rd = 0.0
    else:
        minv = _system_inverse(h, rho)
    while not converged and done < cfg.max_iters:
        chunk = min(cfg.check_every, cfg.max_iters - done)
        it, rp, rd = _backend.kernels.admm_run(
            minv, q, normals, x, z, u, rho, cfg.over_relaxation, chunk, cfg.tol_primal, cfg.tol_dual
        )
        done += it
        val = obj(z)
        if val <= best_obj:
            best_z, best_obj = z.copy(), val
        if rp < cfg.tol_primal and rd < cfg.tol_dual and kkt(z) < cfg.tol_kkt:
            converged = True
            best_z, best_obj = z.copy(), val
            break
        if cfg.adaptive_rho:
            # rebalance on the ratio of normalized residuals; refactor only on large moves
            sp = rp / max(np.linalg.norm(x), np.linalg.norm(z), 1e-30)
            sd = rd / max(rho * np.linalg.norm(u), 1e-30)
            new_rho = float(np.clip(rho * np.sqrt(sp / max(sd, 1e-30)), 1e-6, 1e6))
            if new_rho > 5.0 * rho or new_rho < rho / 5.0:
                u *= rho / new_rho
                rho = new_rho
                minv = _system_inverse(h, rho)
    if not converged:
        log.debug("ADMM stopped after %d iterations (primal %.3g, dual %.3g)", done, rp, rd)
    return SocpSolution(
        forces=best_z.reshape(-1, 3).copy(),
        objective=best_obj,
        wrench_residual=float(np.linalg.norm(g @ best_z - w)),
        iterations=done,
        converged=converged,
        kkt_residual=kkt(best_z),
        primal_residual=float(rp),
        dual_residual=float(rd),
        rho=rho,
    )


def verify(problem, solution):
    """Recompute certificates for a solution (or a raw ``(n, 3)`` force array)."""
    forces = getattr(solution, "forces", solution)
    f = np.asarray(forces, dtype=np.float64).reshape(-1, 3)
    g = grasp_matrix(problem.positions)
    g[3:] /= problem.length
    r = g @ f.ravel() - problem.scaled_target()
    return {
        "feasibility_gap": float(cone_violation(f, problem.normals).max(initial=0.0)),
        "kkt_residual": kkt_residual(problem, f),
        "wrench_residual": float(np.linalg.norm(r)),
        "objective": objective(problem, f),
    }
