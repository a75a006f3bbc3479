"""Core value types: clouds, correspondences, configuration, normalization.

All types are immutable value objects. Registration itself never mutates
a cloud; warped outputs are new objects.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DegenerateCloudError, NonFiniteError, ShapeError


class WarpFieldType(Enum):
    """Per-point transform family predicted at each pyramid level."""

    VECTOR_R3 = "r3"          # pure translation field
    RIGID_SE3 = "se3"         # rotation + translation
    SIM3 = "sim3"             # scale + rotation + translation


class RotationRepr(Enum):
    AXIS_ANGLE = "axis_angle"
    EULER_XYZ = "euler"
    QUATERNION = "quaternion"
    SIX_D = "6d"

    @property
    def param_count(self) -> int:
        return {"axis_angle": 3, "euler": 3, "quaternion": 4, "6d": 6}[self.value]


class NormKind(Enum):
    L1 = "l1"
    L2 = "l2"


def _as_points(points, what: str) -> np.ndarray:
    arr = np.array(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"{what} must be an (n, 3) array, got shape {arr.shape}")
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0][0])
        raise NonFiniteError(f"{what} contains a non-finite coordinate at row {row}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """An (n, 3) float64 cloud plus pass-through per-point attributes.

    ``attrs`` keeps extra PLY vertex properties (name, ply type, values)
    untouched so they survive a read -> warp -> write cycle.
    """

    points: np.ndarray
    attrs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points, "point cloud"))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.attrs)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Sparse index matches (source row u, target row v) with confidences."""

    u: np.ndarray
    v: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64)
        v = np.asarray(self.v, dtype=np.int64)
        c = np.asarray(self.confidence, dtype=np.float64)
        if not (u.shape == v.shape == c.shape) or u.ndim != 1:
            raise ShapeError("correspondence arrays must be 1-D and equal length")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "confidence", c)

    def __len__(self) -> int:
        return self.u.shape[0]

    def validate_against(self, n_source: int, n_target: int):
        if len(self) == 0:
            return
        if self.u.min() < 0 or self.u.max() >= n_source:
            raise ShapeError(f"correspondence source index out of range [0, {n_source})")
        if self.v.min() < 0 or self.v.max() >= n_target:
            raise ShapeError(f"correspondence target index out of range [0, {n_target})")


OPTIMIZERS = ("adam", "sgd")
ACTIVATIONS = ("relu", "sigmoid")
INIT_SCHEMES = ("xavier_uniform", "kaiming_uniform", "zeros")


@dataclass(frozen=True)
class PyramidConfig:
    """Settings for one registration run.

    Key names are stable: the same names work in a config file and as
    ``--set key=value`` CLI overrides.
    """

    m: int = 9                        # number of pyramid levels
    k0: float = -8.0                  # initial frequency exponent
    mlp_width: int = 128
    mlp_depth: int = 3
    warp_type: WarpFieldType = WarpFieldType.RIGID_SE3
    rot_repr: RotationRepr = RotationRepr.AXIS_ANGLE
    norm_kind: NormKind = NormKind.L1
    lambda_cd: float = 1.0
    lambda_cor: float = 1.0
    # With an adaptive-moment optimizer a positive blend penalty saturates
    # the sigmoid head long before the transform can grow large enough to
    # push back (steps follow gradient sign consistency, not magnitude),
    # so the penalty is off unless asked for. See deformability_reg.
    lambda_reg: float = 0.0
    max_iter: int = 500
    cost_threshold: float = 1e-4      # stop when the data cost falls below this
    stall_window: int = 15            # iterations without relative improvement
    learning_rate: float = 0.05
    rng_seed: int = 0
    output_scale: float = 1e-4        # multiplier on the transform head output
    corr_conf_threshold: float = 0.3  # drop matches below this confidence at load
    normalize: bool = True
    optimizer: str = "adam"
    activation: str = "relu"
    init_scheme: str = "xavier_uniform"
    subsample: int = 0                # optimization-time point cap, 0 disables

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else v
        return out

    def replace(self, **kw) -> "PyramidConfig":
        return dataclasses.replace(self, **kw)


_ENUM_FIELDS = {"warp_type": WarpFieldType, "rot_repr": RotationRepr, "norm_kind": NormKind}


def _parse_value(name: str, raw: str):
    hints = {f.name: f.type for f in dataclasses.fields(PyramidConfig)}
    if name not in hints:
        raise ConfigError(f"unknown config key '{name}'")
    raw = raw.strip()
    if name in _ENUM_FIELDS:
        enum_cls = _ENUM_FIELDS[name]
        try:
            return enum_cls(raw.lower())
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            raise ConfigError(f"{name} must be one of: {allowed} (got '{raw}')") from None
    default = getattr(PyramidConfig(), name)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.lower()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse '{raw}' as {type(default).__name__}") from None


def load_config_file(path) -> dict:
    """Parse a ``key = value`` config file; '#' starts a comment."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
            name, raw = (part.strip() for part in line.split("=", 1))
            overrides[name] = _parse_value(name, raw)
    return overrides


def build_config(config_path=None, overrides: dict | None = None) -> PyramidConfig:
    """Defaults, then config file values, then explicit overrides."""
    values = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    for name, raw in (overrides or {}).items():
        values[name] = _parse_value(name, raw) if isinstance(raw, str) else raw
    cfg = PyramidConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: PyramidConfig):
    """Raise ConfigError naming the first violated constraint."""
    if cfg.m < 1:
        raise ConfigError("m must be >= 1")
    if cfg.mlp_width < 1:
        raise ConfigError("mlp_width must be >= 1")
    if cfg.mlp_depth < 1:
        raise ConfigError("mlp_depth must be >= 1")
    if not isinstance(cfg.warp_type, WarpFieldType):
        raise ConfigError("warp_type must be a WarpFieldType")
    if not isinstance(cfg.rot_repr, RotationRepr):
        raise ConfigError("rot_repr must be a RotationRepr")
    if not isinstance(cfg.norm_kind, NormKind):
        raise ConfigError("norm_kind must be l1 or l2")
    for name in ("lambda_cd", "lambda_cor", "lambda_reg"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    if cfg.cost_threshold < 0:
        raise ConfigError("cost_threshold must be >= 0")
    if cfg.stall_window < 1:
        raise ConfigError("stall_window must be >= 1")
    if cfg.learning_rate <= 0:
        raise ConfigError("learning_rate must be > 0")
    if cfg.output_scale <= 0:
        raise ConfigError("output_scale must be > 0")
    if not 0.0 <= cfg.corr_conf_threshold <= 1.0:
        raise ConfigError("corr_conf_threshold must be in [0, 1]")
    if cfg.optimizer not in OPTIMIZERS:
        raise ConfigError(f"optimizer must be one of: {', '.join(OPTIMIZERS)}")
    if cfg.activation not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of: {', '.join(ACTIVATIONS)}")
    if cfg.init_scheme not in INIT_SCHEMES:
        raise ConfigError(f"init_scheme must be one of: {', '.join(INIT_SCHEMES)}")
    if cfg.subsample < 0:
        raise ConfigError("subsample must be >= 0")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map taking input coordinates to the normalized frame.

    Normalized coordinates are ``(x - center) * scale``; the record is
    enough to map points, warp vectors, and results back to input units.
    """

    center: np.ndarray
    scale: float

    @classmethod
    def identity(cls) -> "NormalizationRecord":
        return cls(center=np.zeros(3), scale=1.0)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) * self.scale

    def invert_points(self, points: np.ndarray) -> np.ndarray:
        return points / self.scale + self.center

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        return vectors * self.scale

    def invert_vectors(self, vectors: np.ndarray) -> np.ndarray:
        return vectors / self.scale


def normalize_clouds(source: PointCloud, target: PointCloud):
    """Center the joint bounding box at the origin with unit diagonal.

    Returns ``(normalized_source, normalized_target, record)``. Degenerate
    input (an empty cloud, or all points coincident) is a hard error.
    """
    if source.count == 0 or target.count == 0:
        raise DegenerateCloudError("cannot normalize an empty point cloud")
    joint_min = np.minimum(source.points.min(axis=0), target.points.min(axis=0))
    joint_max = np.maximum(source.points.max(axis=0), target.points.max(axis=0))
    diagonal = float(np.linalg.norm(joint_max - joint_min))
    if diagonal == 0.0:
        raise DegenerateCloudError("degenerate bounding box: joint diagonal is zero")
    record = NormalizationRecord(center=(joint_min + joint_max) / 2.0, scale=1.0 / diagonal)
    return (
        source.with_points(record.apply_points(source.points)),
        target.with_points(record.apply_points(target.points)),
        record,
    )
