"""Synthetic tool-on-table episodes with exact ground truth.

A box-composition scraper (or a capsule crayon) is rigidly held by the
gripper, lowered onto the plane ``z = table_z``, pressed, slid along world
X and lifted. For every frame the generator knows which tool points are in
contact, the per-point contact forces it injected and their net wrench, and
it writes tactile marker states whose estimated wrench equals that net
wrench exactly (the marker force model is inverted by least norm).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from contactfield.core import ContactField, Frame, TactileState, gripper_to_world, with_rebuilt_history
from contactfield.errors import ConfigError
from contactfield.force_opt import cone_project_batch, cross_matrix
from contactfield.sim_labeling import SoftContactConfig, SparseContact, soft_contact_prob
from contactfield.tactile import K_NORMAL, K_SHEAR, Wrench


@dataclass(frozen=True)
class ToolSpec:
    shape: str = "scraper"
    blade_length: float = 0.08
    blade_thickness: float = 0.003
    blade_height: float = 0.04
    handle_length: float = 0.1
    handle_width: float = 0.02
    radius: float = 0.006
    n_points: int = 512


@dataclass(frozen=True)
class MotionSpec:
    approach_depth: float = 0.001
    slide_length: float = 0.1
    n_frames: int = 40
    press_force: float = 5.0
    hover: float = 0.02
    dt: float = 0.05
    yaw: float = 0.3
    friction: float = 0.2
    contact_tol: float = 0.004


@dataclass(frozen=True)
class NoiseSpec:
    point_sigma: float = 0.0
    marker_sigma: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    tool: ToolSpec = field(default_factory=ToolSpec)
    episode: MotionSpec = field(default_factory=MotionSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    table_z: float = 0.0
    sensor_scale: float = 0.025
    n_env_points: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        t, e = self.tool, self.episode
        if t.shape not in ("scraper", "crayon"):
            raise ConfigError(f"unknown tool shape {t.shape!r}")
        dims = [t.blade_length, t.blade_thickness, t.blade_height, t.handle_length, t.handle_width, t.radius]
        if min(dims) <= 0:
            raise ConfigError("tool dimensions must be positive")
        if e.n_frames < 3:
            raise ConfigError("an episode needs at least 3 frames")
        if e.approach_depth < 0 or e.press_force < 0 or e.contact_tol <= 0 or e.dt <= 0:
            raise ConfigError("approach_depth, press_force must be >= 0; contact_tol, dt > 0")
        reach = t.blade_height if t.shape == "scraper" else t.radius
        if e.approach_depth > reach:
            raise ConfigError(f"approach depth {e.approach_depth} exceeds the tool tip height {reach}")
        if self.noise.point_sigma < 0 or self.noise.marker_sigma < 0:
            raise ConfigError("noise levels must be >= 0")
        if not self.sensor_scale > 0:
            raise ConfigError("sensor_scale must be > 0")
        if t.n_points < 8 or self.n_env_points < 1:
            raise ConfigError("too few points requested")

    @classmethod
    def from_dict(cls, data):
        def build(kind, d):
            names = {f.name for f in fields(kind)}
            unknown = set(d) - names
            if unknown:
                raise ConfigError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
            return kind(**d)

        data = dict(data)
        sub = {"tool": ToolSpec, "episode": MotionSpec, "noise": NoiseSpec}
        for k, kind in sub.items():
            if k in data:
                data[k] = build(kind, data[k])
        try:
            return build(cls, data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return SynthConfig.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None


@dataclass
class SyntheticEpisode:
    frames: list
    truth: list
    contacts: list
    wrenches: list
    contact_masks: list
    calibration_scale: float

    def __iter__(self):
        return iter((self.frames, self.truth, self.contacts))


# --------------------------------------------------------------------------
# tool geometry, gripper frame

def _box_faces(center, half):
    """(center, outward normal, in-plane half extents u, v) for each face."""
    faces = []
    for ax in range(3):
        u_ax, v_ax = [a for a in range(3) if a != ax]
        for sign in (1.0, -1.0):
            c = np.array(center, dtype=np.float64)
            c[ax] += sign * half[ax]
            n = np.zeros(3)
            n[ax] = sign
            faces.append((c, n, u_ax, half[u_ax], v_ax, half[v_ax]))
    return faces


def _sample_boxes(boxes, n, rng, bottom_boost=4.0):
    faces, areas = [], []
    for center, half in boxes:
        for face in _box_faces(center, half):
            c, nrm, _, hu, _, hv = face
            w = 4 * hu * hv
            if nrm[2] < -0.5:
                w *= bottom_boost
            faces.append(face)
            areas.append(w)
    areas = np.asarray(areas)
    counts = rng.multinomial(n, areas / areas.sum())
    pts, normals = [], []
    for (c, nrm, ua, hu, va, hv), k in zip(faces, counts):
        p = np.repeat(c[None, :], k, axis=0)
        p[:, ua] += rng.uniform(-hu, hu, k)
        p[:, va] += rng.uniform(-hv, hv, k)
        pts.append(p)
        normals.append(np.repeat(-nrm[None, :], k, axis=0))
    return np.concatenate(pts), np.concatenate(normals)


def tool_cloud(tool, rng):
    """Tool surface points and inward normals in the gripper frame; the
    lowest point of the tool sits at ``z = -tip_depth``."""
    if tool.shape == "scraper":
        hl, hw = tool.handle_length, tool.handle_width
        handle = ((0.0, 0.0, -hl / 2), (hw / 2, hw / 2, hl / 2))
        blade = ((0.0, 0.0, -hl - tool.blade_height / 2),
                 (tool.blade_length / 2, tool.blade_thickness / 2, tool.blade_height / 2))
        pts, nrm = _sample_boxes([handle, blade], tool.n_points, rng)
        return pts, nrm, hl + tool.blade_height
    # crayon: capsule along -z, tip hemisphere at the bottom
    r, length = tool.radius, tool.handle_length
    a = np.array([0.0, 0.0, -r])
    b = np.array([0.0, 0.0, -length + r])
    v = rng.normal(size=(tool.n_points, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    s = rng.uniform(0.0, 1.0, tool.n_points)
    # area weighting: cylinder side vs two hemispheres
    side_area = 2 * np.pi * r * (length - 2 * r)
    cap_area = 4 * np.pi * r * r
    on_side = rng.uniform(size=tool.n_points) < side_area / (side_area + cap_area)
    axis_pt = np.where(on_side[:, None], a + s[:, None] * (b - a), np.where(v[:, 2:3] > 0, a, b))
    radial = np.where(on_side[:, None], v * np.array([1.0, 1.0, 0.0]), v)
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    pts = axis_pt + r * radial
    return pts, -radial, length


def sensor_layout(tool):
    """Marker positions (gripper frame) of two 7x9 sensors on the handle sides."""
    half = tool.handle_width / 2 if tool.shape == "scraper" else tool.radius
    xs = np.linspace(-0.012, 0.012, 9)
    zs = -0.03 + np.linspace(0.009, -0.009, 7)
    grid = np.array([[x, 0.0, z] for z in zs for x in xs])
    out = []
    for side in (1.0, -1.0):
        g = grid.copy()
        g[:, 1] = side * half
        out.append(g)
    return np.concatenate(out)


def marker_solution(arms, wrench, scale):
    """Least-norm marker channels ``(dx, dy, -depth)`` reproducing ``wrench``."""
    m = arms.shape[0]
    gain = scale * np.array([K_SHEAR, K_SHEAR, K_NORMAL])
    a = np.zeros((6, 3 * m))
    for i, r in enumerate(arms):
        a[:3, 3 * i:3 * i + 3] = np.diag(gain)
        a[3:, 3 * i:3 * i + 3] = cross_matrix(r) * gain
    y, *_ = np.linalg.lstsq(a, wrench.vector(), rcond=None)
    return y.reshape(m, 3)


def _height_profile(motion):
    n = motion.n_frames
    n_app = max(1, round(0.25 * n))
    n_press = max(1, round(0.1 * n))
    n_lift = max(1, round(0.25 * n))
    n_slide = max(0, n - n_app - n_press - n_lift)
    low = -motion.approach_depth
    h = np.concatenate([
        np.linspace(motion.hover, low, n_app, endpoint=False) if n_app > 1 else [motion.hover],
        np.full(n_press, low),
        np.full(n_slide, low),
        np.linspace(low, motion.hover, n_lift + 1)[1:],
    ])[:n]
    x = np.concatenate([
        np.zeros(n_app + n_press),
        np.linspace(0.0, motion.slide_length, n_slide + 1)[1:],
        np.full(n_lift, motion.slide_length),
    ])[:n]
    sliding = np.zeros(n, dtype=bool)
    sliding[n_app + n_press:n_app + n_press + n_slide] = True
    return h, x, sliding


def _injected_forces(d, normals_w, mask, slide_dir, motion):
    """World-frame forces on contact points, summing to ``press_force`` in magnitude."""
    f = np.zeros_like(normals_w)
    if not mask.any() or motion.press_force == 0:
        return f
    u = np.array([0.0, 0.0, 1.0]) - motion.friction * slide_dir
    u /= np.linalg.norm(u)
    idx = np.flatnonzero(mask)
    proj = cone_project_batch(np.repeat(u[None, :], idx.size, axis=0), normals_w[idx])
    w = soft_contact_prob(d[idx], SoftContactConfig())
    f[idx] = w[:, None] * proj
    total = np.linalg.norm(f.sum(axis=0))
    if total == 0:
        return np.zeros_like(f)
    return f * (motion.press_force / total)


def generate_episode(cfg=SynthConfig()):
    """Generate frames, ground-truth contact fields and sparse contacts."""
    rng = np.random.default_rng(cfg.rng_seed)
    tool, motion = cfg.tool, cfg.episode
    local_pts, local_nrm, tip_depth = tool_cloud(tool, rng)
    markers_local = sensor_layout(tool)
    rot = Rotation.from_euler("z", motion.yaw)
    quat = rot.as_quat(scalar_first=True)
    r = rot.as_matrix()
    slide_dir = r @ np.array([1.0, 0.0, 0.0])
    heights, xs, sliding = _height_profile(motion)
    extent = max(tool.blade_length, 2 * tool.radius) + motion.slide_length
    env_xy = rng.uniform(-1.0, 1.0, (cfg.n_env_points, 2)) * (extent / 2 + 0.05)

    frames, truth, contacts, wrenches, masks = [], [], [], [], []
    m = markers_local.shape[0]
    for i in range(motion.n_frames):
        pos = slide_dir * xs[i] + np.array([0.0, 0.0, cfg.table_z + tip_depth + heights[i]])
        pose = np.concatenate([pos, quat])
        pts = gripper_to_world(local_pts, pose)
        nrm = local_nrm @ r.T
        d = pts[:, 2] - cfg.table_z
        mask = d < motion.contact_tol
        f = _injected_forces(d, nrm, mask, slide_dir if sliding[i] else np.zeros(3), motion)
        f_grip = f @ r
        wrench = Wrench(f_grip.sum(axis=0), np.cross(local_pts, f_grip).sum(axis=0))
        y = marker_solution(markers_local, wrench, cfg.sensor_scale)
        disp = np.column_stack([y[:, 0], y[:, 1], -y[:, 2]])
        depth = -y[:, 2]

        if cfg.noise.marker_sigma > 0:
            disp = disp * (1.0 + cfg.noise.marker_sigma * rng.normal(size=disp.shape))
            depth = depth * (1.0 + cfg.noise.marker_sigma * rng.normal(size=m))
        obs_pts = pts
        env = np.column_stack([env_xy + pos[:2], np.full(cfg.n_env_points, cfg.table_z)])
        if cfg.noise.point_sigma > 0:
            obs_pts = pts + rng.normal(0.0, cfg.noise.point_sigma, pts.shape)
            env = env + rng.normal(0.0, cfg.noise.point_sigma, env.shape)

        tactile = TactileState(gripper_to_world(markers_local, pose), disp, depth)
        frames.append(Frame(
            time=i * motion.dt,
            tool_points=obs_pts,
            env_points=env,
            tactile=tactile,
            gripper_pose=pose,
            tool_normals=nrm,
            table_z=cfg.table_z,
        ))
        truth.append(ContactField(soft_contact_prob(d), f))
        mags = np.linalg.norm(f, axis=1)
        contacts.append([
            SparseContact(pts[j], f[j] / mags[j], mags[j]) for j in np.flatnonzero(mags > 0)
        ])
        wrenches.append(wrench)
        masks.append(mask)
    frames = with_rebuilt_history(frames)
    return SyntheticEpisode(frames, truth, contacts, wrenches, masks, cfg.sensor_scale)
