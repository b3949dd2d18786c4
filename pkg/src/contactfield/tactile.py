"""Tactile marker post-processing, wrench estimation and contact gating."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter1d

from contactfield.core import with_rebuilt_history, world_to_gripper
from contactfield.errors import CalibrationError, ConfigError, ValidationError

# marker force model gains: shear per displacement, normal per indentation (N/m)
K_SHEAR = 20.0
K_NORMAL = 500.0
# characteristic length mixing torque into force units (m)
L_C = 0.05


@dataclass(frozen=True)
class FilterConfig:
    spatial_enabled: bool = True
    spatial_sigma: float = 0.25
    temporal_enabled: bool = True
    sg_window: int = 7
    sg_polyorder: int = 1
    precontact_smoothing: bool = True
    postcontact_smoothing: bool = True
    phase_method: str = "linear"
    depth_threshold: float = -0.002

    def __post_init__(self):
        if self.sg_window % 2 != 1 or self.sg_window <= self.sg_polyorder:
            raise ConfigError(
                f"window_length must be odd and > polyorder (got {self.sg_window}, {self.sg_polyorder})"
            )
        if self.sg_polyorder < 0:
            raise ConfigError("polyorder must be >= 0")
        if self.spatial_sigma <= 0:
            raise ConfigError("spatial sigma must be > 0")
        if self.phase_method != "linear":
            raise ConfigError(f"unsupported contact smoothing method {self.phase_method!r}")

    @property
    def phase_smoothing_enabled(self):
        return self.precontact_smoothing or self.postcontact_smoothing


@dataclass(frozen=True)
class GateConfig:
    noise_window: tuple = (0, 5)
    k_sigma: float = 3.0
    threshold_override: float | None = None

    def __post_init__(self):
        if self.k_sigma <= 0:
            raise ConfigError("k_sigma must be > 0")
        start, stop = self.noise_window
        if start < 0 or stop < start:
            raise ConfigError(f"invalid noise window {self.noise_window}")


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray
    frame_id: str = "gripper"

    def __post_init__(self):
        f = np.array(self.force, dtype=np.float64).reshape(3)
        t = np.array(self.torque, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValidationError("wrench components must be finite")
        f.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    def vector(self):
        return np.concatenate([self.force, self.torque])

    def scaled(self, length=L_C):
        """6-vector with torque divided by ``length`` (all entries in N)."""
        return np.concatenate([self.force, self.torque / length])

    @classmethod
    def from_vector(cls, v, frame_id="gripper"):
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:6], frame_id)

    @classmethod
    def zero(cls, frame_id="gripper"):
        return cls(np.zeros(3), np.zeros(3), frame_id)


@dataclass(frozen=True)
class CalibrationScale:
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0 or not math.isfinite(self.scale):
            raise CalibrationError(f"calibration scale must be positive, got {self.scale}")


# --------------------------------------------------------------------------
# config files

def load_filter_config(path):
    """Read ``(FilterConfig, GateConfig)`` from a YAML or JSON file.

    Key names follow the tactile filtering listing (``spatial.sigma``,
    ``temporal.window_length`` ...); the ``Tactile_Filtering`` and
    ``Contact_Smoothing`` sections may be present or flattened away.
    """
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return configs_from_mapping(data)


def configs_from_mapping(data):
    filt = dict(data.get("Tactile_Filtering", {}))
    smooth = dict(data.get("Contact_Smoothing", {}))
    for k in ("spatial", "temporal"):
        if k in data:
            filt[k] = data[k]
    for k in ("precontact_smoothing", "postcontact_smoothing", "method", "depth_threshold"):
        if k in data:
            smooth[k] = data[k]
    spatial = filt.get("spatial", {}) or {}
    temporal = filt.get("temporal", {}) or {}
    if spatial.get("method", "gaussian") != "gaussian":
        raise ConfigError(f"unsupported spatial filter {spatial['method']!r}")
    try:
        fc = FilterConfig(
            spatial_enabled=bool(spatial.get("enabled", True)),
            spatial_sigma=float(spatial.get("sigma", 0.25)),
            temporal_enabled=bool(temporal.get("enabled", True)),
            sg_window=int(temporal.get("window_length", 7)),
            sg_polyorder=int(temporal.get("polyorder", 1)),
            precontact_smoothing=bool(smooth.get("precontact_smoothing", True)),
            postcontact_smoothing=bool(smooth.get("postcontact_smoothing", True)),
            phase_method=str(smooth.get("method", "linear")),
            depth_threshold=float(smooth.get("depth_threshold", -0.002)),
        )
        gate = data.get("gate", {}) or {}
        override = gate.get("threshold_override")
        gc = GateConfig(
            noise_window=tuple(gate.get("noise_window", (0, 5))),
            k_sigma=float(gate.get("k_sigma", 3.0)),
            threshold_override=None if override is None else float(override),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad filter config value: {exc}") from None
    return fc, gc


# --------------------------------------------------------------------------
# filters

def spatial_filter(grid, sigma=0.25):
    """Gaussian blur over the 7x9 marker grid, independently per channel.

    ``grid`` is ``(rows, cols)``, ``(rows, cols, C)`` or ``(sensors, rows,
    cols, C)``. The kernel is truncated at ``ceil(4 sigma)`` cells and
    renormalized; edges reflect.
    """
    g = np.asarray(grid, dtype=np.float64)
    axes = (0, 1) if g.ndim <= 3 else (g.ndim - 3, g.ndim - 2)
    radius = max(1, math.ceil(4.0 * sigma))
    out = g
    for ax in axes:
        out = gaussian_filter1d(out, sigma, axis=ax, mode="reflect", radius=radius)
    return out


def _sg_coeffs(left, right, polyorder):
    x = np.arange(-left, right + 1, dtype=np.float64)
    order = min(polyorder, left + right)
    vander = np.vander(x, order + 1, increasing=True)
    # row 0 of the pseudo-inverse evaluates the fitted polynomial at x = 0
    return np.linalg.pinv(vander)[0]


def savitzky_golay(series, window=7, polyorder=1):
    """Savitzky-Golay smoothing along axis 0.

    Interior samples use the symmetric window; the first and last
    ``window // 2`` samples are fitted on the window truncated at the series
    end, with the polynomial order capped by the available samples.
    """
    if window % 2 != 1 or window <= polyorder or polyorder < 0:
        raise ConfigError(f"window must be odd and > polyorder (got {window}, {polyorder})")
    s = np.asarray(series, dtype=np.float64)
    t = s.shape[0]
    if t < window:
        raise ValidationError(f"series length {t} shorter than window {window}")
    h = window // 2
    out = np.empty_like(s)
    coeffs = _sg_coeffs(h, h, polyorder)
    windows = np.lib.stride_tricks.sliding_window_view(s, window, axis=0)
    out[h:t - h] = np.tensordot(windows, coeffs, axes=([-1], [0]))
    for i in range(h):
        c = _sg_coeffs(i, h, polyorder)
        out[i] = np.tensordot(c, s[: i + h + 1], axes=(0, 0))
        j = t - 1 - i
        c = _sg_coeffs(h, i, polyorder)
        out[j] = np.tensordot(c, s[j - h:], axes=(0, 0))
    return out


def contact_phases(depth, threshold):
    """Indices ``(first, last)`` of in-contact frames, or ``None`` if never in contact."""
    idx = np.flatnonzero(np.asarray(depth) < threshold)
    if idx.size == 0:
        return None
    return int(idx[0]), int(idx[-1])


def phase_smooth(series, depth, cfg=FilterConfig()):
    """Replace pre- and post-contact segments with linear ramps.

    The pre-contact segment ramps from its own median (at frame 0) to the
    value at the first contact frame; the post-contact segment ramps from the
    last contact value to its median at the final frame. Without any contact
    frame the whole series becomes its median.
    """
    s = np.array(series, dtype=np.float64, copy=True)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape[0] != s.shape[0]:
        raise ValidationError("depth and series are not aligned in time")
    t = s.shape[0]
    phases = contact_phases(depth, cfg.depth_threshold)
    if phases is None:
        if cfg.precontact_smoothing and t:
            s[:] = np.median(s, axis=0)
        return s
    first, last = phases
    shape = (-1,) + (1,) * (s.ndim - 1)
    if cfg.precontact_smoothing and first > 0:
        med = np.median(s[:first], axis=0)
        frac = (np.arange(first) / first).reshape(shape)
        s[:first] = med + (s[first] - med) * frac
    if cfg.postcontact_smoothing and last < t - 1:
        med = np.median(s[last + 1:], axis=0)
        n = t - 1 - last
        frac = (np.arange(1, n + 1) / n).reshape(shape)
        s[last + 1:] = s[last] + (med - s[last]) * frac
    return s


def filter_episode(frames, cfg=FilterConfig()):
    """Apply spatial, temporal and contact-phase filtering to the marker channels.

    Displacements and depth are filtered; the displacement history is rebuilt
    from the filtered values.
    """
    if not frames:
        return []
    tac0 = frames[0].tactile
    # (T, M, 4): dx, dy, dz, depth
    chans = np.stack(
        [np.column_stack([f.tactile.displacements, f.tactile.depth]) for f in frames]
    )
    t, m, c = chans.shape
    if cfg.spatial_enabled:
        grids = chans.reshape(t * tac0.sensor_count, *tac0.grid_shape, c)
        chans = spatial_filter(grids, cfg.spatial_sigma).reshape(t, m, c)
    if cfg.temporal_enabled:
        chans = savitzky_golay(chans, cfg.sg_window, cfg.sg_polyorder)
    if cfg.phase_smoothing_enabled:
        min_depth = np.array([f.tactile.depth.min() for f in frames])
        chans = phase_smooth(chans, min_depth, cfg)
    out = [
        replace(f, tactile=replace(f.tactile, displacements=chans[i, :, :3], depth=chans[i, :, 3]))
        for i, f in enumerate(frames)
    ]
    return with_rebuilt_history(out)


# --------------------------------------------------------------------------
# wrench

def marker_forces(tactile, cal=CalibrationScale(), gripper_pose=None, k_shear=K_SHEAR, k_normal=K_NORMAL):
    """Per-marker ``(moment arms, forces)`` in the gripper frame."""
    local = np.column_stack([
        k_shear * tactile.displacements[:, 0],
        k_shear * tactile.displacements[:, 1],
        -k_normal * tactile.depth,
    ]) * cal.scale
    per_sensor = tactile.marker_count // tactile.sensor_count
    rot = np.repeat(tactile.rotations, per_sensor, axis=0)
    forces = np.einsum("mij,mj->mi", rot, local)
    arms = tactile.positions
    if gripper_pose is not None:
        arms = world_to_gripper(arms, gripper_pose)
    return arms, forces


def compute_wrench(tactile, cal=CalibrationScale(), gripper_pose=None, **gains):
    """Net wrench of the marker forces about the gripper origin.

    Marker positions are taken as gripper-frame coordinates unless
    ``gripper_pose`` is given, in which case they are treated as world
    coordinates and transformed.
    """
    arms, forces = marker_forces(tactile, cal, gripper_pose, **gains)
    return Wrench(forces.sum(axis=0), np.cross(arms, forces).sum(axis=0))


def calibrate(observed, reference, length=L_C):
    """Scalar gain aligning the observed wrench magnitude with a reference."""
    obs = np.linalg.norm(observed.scaled(length))
    if obs == 0.0:
        raise CalibrationError("observed wrench is zero; cannot calibrate")
    return CalibrationScale(float(np.linalg.norm(reference.scaled(length)) / obs))


# --------------------------------------------------------------------------
# gating

def gate_statistic(tactile_series):
    """Mean marker displacement magnitude per frame."""
    return np.array([np.linalg.norm(s.displacements, axis=1).mean() for s in tactile_series])


def gate_threshold(stat, cfg):
    if cfg.threshold_override is not None:
        return float(cfg.threshold_override)
    start, stop = cfg.noise_window
    window = np.asarray(stat)[start:stop]
    if window.size == 0:
        raise ConfigError("contact gate noise window is empty and no threshold override given")
    return float(window.mean() + cfg.k_sigma * window.std())


def gate_from_statistic(stat, cfg=GateConfig()):
    stat = np.asarray(stat, dtype=np.float64)
    return stat > gate_threshold(stat, cfg)


def contact_gate(tactile_series, cfg=GateConfig()):
    """Per-frame in-contact flags: statistic strictly above the noise threshold."""
    return gate_from_statistic(gate_statistic(tactile_series), cfg)
