"""Frame and contact-field data model, episode I/O and network-input assembly.

Arrays held by the dataclasses are made read-only at construction, so a
``Frame`` can be shared freely between threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from contactfield import _backend
from contactfield.errors import ParseError, ValidationError

GRID_SHAPE = (7, 9)
MARKERS_PER_SENSOR = GRID_SHAPE[0] * GRID_SHAPE[1]
HISTORY = 5
HISTORY_WIDTH = 3 * HISTORY
FEATURE_WIDTH = 1 + HISTORY_WIDTH

TYPE_OBJECT = 0.0
TYPE_ENV = 1.0
TYPE_TACTILE = 2.0


def _frozen(a, shape_tail=None, name="array"):
    a = np.array(a, dtype=np.float64)
    if shape_tail is not None:
        if a.size == 0:
            a = a.reshape((0,) + shape_tail)
        if a.shape[1:] != shape_tail:
            raise ValidationError(f"{name} must have trailing shape {shape_tail}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite values")
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------------
# pose helpers

def pose_rotation(pose):
    """Rotation matrix of a ``[x, y, z, qw, qx, qy, qz]`` pose."""
    pose = np.asarray(pose, dtype=np.float64)
    return Rotation.from_quat(pose[3:7], scalar_first=True).as_matrix()


def world_to_gripper(points, pose):
    pose = np.asarray(pose, dtype=np.float64)
    return (np.asarray(points, dtype=np.float64) - pose[:3]) @ pose_rotation(pose)


def gripper_to_world(points, pose):
    pose = np.asarray(pose, dtype=np.float64)
    return np.asarray(points, dtype=np.float64) @ pose_rotation(pose).T + pose[:3]


# --------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class TactileState:
    """Marker states of all tactile sensors at one timestep.

    Markers are stored sensor-major, row-major within each 7x9 grid.
    ``rotations`` maps each sensor's local frame into the gripper frame
    (identity by default).
    """

    positions: np.ndarray
    displacements: np.ndarray
    depth: np.ndarray
    history: np.ndarray | None = None
    sensor_count: int = 2
    grid_shape: tuple = GRID_SHAPE
    rotations: np.ndarray | None = None

    def __post_init__(self):
        rows, cols = self.grid_shape
        m = self.sensor_count * rows * cols
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("grid_shape", (int(rows), int(cols)))
        if self.depth is None:
            raise ValidationError("tactile state has no depth channel")
        set_("positions", _frozen(self.positions, (3,), "marker positions"))
        set_("displacements", _frozen(self.displacements, (3,), "marker displacements"))
        set_("depth", _frozen(np.ravel(self.depth), None, "marker depth"))
        for name in ("positions", "displacements"):
            if getattr(self, name).shape[0] != m:
                raise ValidationError(
                    f"marker {name}: expected {m} markers for {self.sensor_count} sensors, "
                    f"got {getattr(self, name).shape[0]}"
                )
        if self.depth.shape[0] != m:
            raise ValidationError(f"marker depth: expected {m} values, got {self.depth.shape[0]}")
        if self.history is None:
            hist = np.zeros((m, HISTORY_WIDTH))
            hist[:, -3:] = self.displacements
        else:
            hist = self.history
        set_("history", _frozen(hist, (HISTORY_WIDTH,), "marker history"))
        if self.history.shape[0] != m:
            raise ValidationError(f"marker history: expected {m} rows")
        if self.rotations is None:
            rot = np.broadcast_to(np.eye(3), (self.sensor_count, 3, 3))
        else:
            rot = self.rotations
        set_("rotations", _frozen(rot, (3, 3), "sensor rotations"))
        if self.rotations.shape[0] != self.sensor_count:
            raise ValidationError("one rotation per sensor required")

    @property
    def marker_count(self):
        return self.positions.shape[0]

    def grids(self, channels):
        """Reshape per-marker channels ``(M, C)`` to ``(sensors, rows, cols, C)``."""
        channels = np.asarray(channels)
        return channels.reshape((self.sensor_count,) + self.grid_shape + channels.shape[1:])


@dataclass(frozen=True)
class ContactField:
    prob: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        prob = np.clip(np.array(np.ravel(self.prob), dtype=np.float64), 0.0, 1.0)
        object.__setattr__(self, "prob", _frozen(prob, None, "contact probability"))
        object.__setattr__(self, "force", _frozen(self.force, (3,), "contact force"))
        if self.prob.shape[0] != self.force.shape[0]:
            raise ValidationError(
                f"contact field lengths differ: {self.prob.shape[0]} probs vs {self.force.shape[0]} forces"
            )

    def __len__(self):
        return self.prob.shape[0]

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros((n, 3)))


@dataclass(frozen=True)
class Frame:
    time: float
    tool_points: np.ndarray
    env_points: np.ndarray
    tactile: TactileState
    gripper_pose: np.ndarray
    tool_normals: np.ndarray | None = None
    table_z: float | None = None
    labels: ContactField | None = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("time", float(self.time))
        set_("tool_points", _frozen(self.tool_points, (3,), "tool_points"))
        set_("env_points", _frozen(self.env_points, (3,), "env_points"))
        pose = _frozen(np.ravel(self.gripper_pose), None, "gripper_pose")
        if pose.shape != (7,):
            raise ValidationError("gripper_pose must be [x, y, z, qw, qx, qy, qz]")
        if abs(np.linalg.norm(pose[3:]) - 1.0) > 1e-6:
            raise ValidationError("gripper_pose quaternion is not unit norm")
        set_("gripper_pose", pose)
        n = self.tool_points.shape[0]
        if self.tool_normals is not None:
            normals = _frozen(self.tool_normals, (3,), "tool_normals")
            if normals.shape[0] != n:
                raise ValidationError(f"{normals.shape[0]} tool normals for {n} tool points")
            if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-6):
                raise ValidationError("tool_normals must be unit vectors")
            set_("tool_normals", normals)
        if self.table_z is not None:
            set_("table_z", float(self.table_z))
        if self.labels is not None and len(self.labels) != n:
            raise ValidationError(f"{len(self.labels)} labels for {n} tool points")

    def with_labels(self, labels):
        return replace(self, labels=labels)


@dataclass(frozen=True)
class CompositeInput:
    """Network input: positions plus ``[type, 15 history channels]`` per row.

    Rows are ordered object, environment, tactile. ``padded`` is set when a
    source had fewer points than requested and some were repeated.
    """

    points: np.ndarray
    features: np.ndarray
    counts: tuple
    padded: bool = False

    @property
    def n_obj(self):
        return self.counts[0]

    @property
    def tactile_rows(self):
        return slice(self.counts[0] + self.counts[1], sum(self.counts))


@dataclass(frozen=True)
class AugmentConfig:
    max_translation: float = 0.1
    max_rotation_z: float = np.deg2rad(30.0)
    jitter_sigma: float = 0.01
    tactile_noise_sigma: float = 0.001
    rng_seed: int = 0

    def __post_init__(self):
        for k in ("max_translation", "max_rotation_z", "jitter_sigma", "tactile_noise_sigma"):
            if getattr(self, k) < 0:
                raise ValidationError(f"AugmentConfig.{k} must be non-negative")


# --------------------------------------------------------------------------
# episode I/O

def rebuild_history(displacements):
    """Stack the last ``HISTORY`` displacement frames, oldest first, zero-padded.

    ``displacements`` has shape ``(T, M, 3)``; returns ``(T, M, 15)``.
    """
    d = np.asarray(displacements, dtype=np.float64)
    t, m, _ = d.shape
    padded = np.concatenate([np.zeros((HISTORY - 1, m, 3)), d], axis=0)
    hist = np.stack([padded[k:k + t] for k in range(HISTORY)], axis=2)
    return hist.reshape(t, m, HISTORY_WIDTH)


def _vec3_list(rec, key, line, required=True):
    if key not in rec:
        if required:
            raise ParseError(f"missing key {key!r}", line)
        return None
    a = np.asarray(rec[key], dtype=np.float64)
    if a.size == 0:
        return a.reshape(0, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ParseError(f"{key!r} must be a list of [x, y, z]", line)
    return a


def frame_from_record(rec, line=None):
    try:
        markers = rec["markers"]
        rows, cols = markers.get("grid", GRID_SHAPE)
        tactile = TactileState(
            positions=_vec3_list(markers, "pos", line),
            displacements=_vec3_list(markers, "disp", line),
            depth=np.asarray(markers["depth"], dtype=np.float64),
            history=markers.get("hist"),
            sensor_count=int(markers.get("sensors", 2)),
            grid_shape=(rows, cols),
            rotations=markers.get("rot"),
        )
        labels = None
        if rec.get("labels") is not None:
            labels = ContactField(rec["labels"]["c"], _vec3_list(rec["labels"], "f", line))
        return Frame(
            time=rec["t"],
            tool_points=_vec3_list(rec, "tool_points", line),
            env_points=_vec3_list(rec, "env_points", line),
            tactile=tactile,
            gripper_pose=rec["gripper_pose"],
            tool_normals=_vec3_list(rec, "tool_normals", line, required=False),
            table_z=rec.get("table_z"),
            labels=labels,
        )
    except ParseError:
        raise
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]!r}", line) from None
    except ValidationError as exc:
        raise ValidationError(f"line {line}: {exc}" if line else str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), line) from None


def frame_to_record(frame):
    tac = frame.tactile
    rec = {
        "t": frame.time,
        "tool_points": frame.tool_points.tolist(),
        "env_points": frame.env_points.tolist(),
        "markers": {
            "grid": list(tac.grid_shape),
            "sensors": tac.sensor_count,
            "pos": tac.positions.tolist(),
            "disp": tac.displacements.tolist(),
            "depth": tac.depth.tolist(),
            "hist": tac.history.tolist(),
        },
        "gripper_pose": frame.gripper_pose.tolist(),
    }
    if not np.array_equal(tac.rotations, np.broadcast_to(np.eye(3), tac.rotations.shape)):
        rec["markers"]["rot"] = tac.rotations.tolist()
    if frame.tool_normals is not None:
        rec["tool_normals"] = frame.tool_normals.tolist()
    if frame.table_z is not None:
        rec["table_z"] = frame.table_z
    if frame.labels is not None:
        rec["labels"] = field_to_record(frame.labels)
    return rec


def field_to_record(cf):
    return {"c": cf.prob.tolist(), "f": cf.force.tolist()}


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None


def read_episode(path):
    """Read a JSONL episode into a list of frames in time order.

    Frames whose marker record has no ``hist`` get their displacement history
    rebuilt from the preceding frames, zero-padded at the episode start.
    """
    frames, have_hist = [], []
    for lineno, rec in _iter_json_lines(path):
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", lineno)
        frames.append(frame_from_record(rec, lineno))
        have_hist.append("hist" in rec.get("markers", {}))
        if len(frames) > 1 and frames[-1].time <= frames[-2].time:
            raise ValidationError(
                f"line {lineno}: timestamps must increase ({frames[-2].time} then {frames[-1].time})"
            )
    if frames and not all(have_hist):
        frames = with_rebuilt_history(frames, only=[not h for h in have_hist])
    return frames


def with_rebuilt_history(frames, only=None):
    if not frames:
        return []
    counts = {f.tactile.marker_count for f in frames}
    if len(counts) != 1:
        raise ValidationError("marker count changes within the episode")
    hist = rebuild_history(np.stack([f.tactile.displacements for f in frames]))
    out = []
    for i, f in enumerate(frames):
        if only is not None and not only[i]:
            out.append(f)
            continue
        out.append(replace(f, tactile=replace(f.tactile, history=hist[i])))
    return out


def write_episode(frames, path):
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(json.dumps(frame_to_record(f)) + "\n")


def write_fields(path, times, fields, extra=None):
    """Write contact fields as JSONL ``{"t", "labels": {"c", "f"}}`` records."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, (t, cf) in enumerate(zip(times, fields)):
            rec = {"t": float(t), "labels": field_to_record(cf)}
            if extra is not None:
                rec.update(extra[i])
            fh.write(json.dumps(rec) + "\n")


def read_fields(path):
    """Read ``(times, fields)`` from a field file or a labeled episode file."""
    times, fields = [], []
    for lineno, rec in _iter_json_lines(path):
        lab = rec.get("labels") if isinstance(rec, dict) else None
        if lab is None:
            raise ParseError("record has no 'labels'", lineno)
        try:
            fields.append(ContactField(lab["c"], _vec3_list(lab, "f", lineno)))
            times.append(float(rec.get("t", len(times))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad labels: {exc}", lineno) from None
    return times, fields


def write_ply(path, points, cf):
    """ASCII PLY with position, contact probability and force per vertex."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] != len(cf):
        raise ValidationError("point count does not match contact field")
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property float prob",
        "property float fx",
        "property float fy",
        "property float fz",
        "end_header",
    ]
    body = np.column_stack([points, cf.prob, cf.force])
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, body, fmt="%.9g")


# --------------------------------------------------------------------------
# composite input

def _time_seed(t):
    return int.from_bytes(struct.pack("<d", float(t)), "little")


def _sample(points, k, rng):
    n = points.shape[0]
    if n == 0:
        raise ValidationError("cannot sample from an empty point set")
    start = int(rng.integers(n))
    order = _backend.kernels.farthest_point_sample(np.ascontiguousarray(points), min(k, n), start)
    if k <= n:
        return points[order], False
    reps = np.resize(order, k)
    return points[reps], True


def assemble_composite(frame, sample_obj=256, sample_env=512):
    """Build the ``N x (3 + 16)`` network input for one frame.

    Object and environment clouds are reduced by farthest-point sampling from
    a start index seeded by the frame time, so the result is deterministic.
    All tactile markers are kept.
    """
    if sample_obj < 1 or sample_env < 1:
        raise ValidationError("sample counts must be >= 1")
    rng = np.random.default_rng(_time_seed(frame.time))
    obj, pad_o = _sample(frame.tool_points, sample_obj, rng)
    env, pad_e = _sample(frame.env_points, sample_env, rng)
    tac = frame.tactile
    n_tac = tac.marker_count
    points = np.concatenate([obj, env, tac.positions])
    feats = np.zeros((points.shape[0], FEATURE_WIDTH))
    feats[:sample_obj, 0] = TYPE_OBJECT
    feats[sample_obj:sample_obj + sample_env, 0] = TYPE_ENV
    feats[sample_obj + sample_env:, 0] = TYPE_TACTILE
    feats[sample_obj + sample_env:, 1:] = tac.history
    return CompositeInput(points, feats, (sample_obj, sample_env, n_tac), pad_o or pad_e)


def rigid_transform(inp, translation, angle_z):
    """Rotate all positions about world Z by ``angle_z`` then translate."""
    c, s = np.cos(angle_z), np.sin(angle_z)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = inp.points @ rot.T + np.asarray(translation, dtype=np.float64)
    return replace(inp, points=pts)


def augment(inp, cfg):
    """Training-time augmentation: shared rigid motion, jitter and tactile noise."""
    rng = np.random.default_rng(cfg.rng_seed)
    translation = rng.uniform(-cfg.max_translation, cfg.max_translation, size=3)
    angle = rng.uniform(-cfg.max_rotation_z, cfg.max_rotation_z)
    out = rigid_transform(inp, translation, angle)
    pts = out.points + rng.normal(0.0, cfg.jitter_sigma, size=out.points.shape)
    feats = inp.features.copy()
    rows = inp.tactile_rows
    feats[rows, 1:] += rng.normal(0.0, cfg.tactile_noise_sigma, size=feats[rows, 1:].shape)
    return replace(out, points=pts, features=feats)
