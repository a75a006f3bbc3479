"""Synthetic benchmark generation: surfaces, deformations, corruption.

Every generator is deterministic per seed. ``apply_deformation`` returns
the deformed cloud together with the exact per-point ground-truth warp,
constructed so that ``original + gt == deformed`` holds bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud
from .errors import ConfigError, ShapeError
from .warpfield import exp_so3

SHAPES = ("plane", "cylinder", "sphere", "torus")
DEFORMATIONS = ("rigid", "similarity", "twist", "bend", "sine")

_AXES = {"x": 0, "y": 1, "z": 2}


def sample_surface(shape: str, n: int, seed: int, scale: float = 1.0) -> PointCloud:
    """Sample ``n`` points on a canonical surface, scaled uniformly.

    Canonical sizes: plane is the unit square at z = 0, cylinder has
    radius 0.3 and height 1, sphere has radius 1, torus has ring radius
    0.5 and tube radius 0.2.
    """
    if shape not in SHAPES:
        raise ConfigError(f"unknown shape '{shape}' (choose from {', '.join(SHAPES)})")
    if n < 1:
        raise ConfigError("sample_surface needs n >= 1")
    rng = np.random.default_rng(seed)
    if shape == "plane":
        pts = np.zeros((n, 3))
        pts[:, :2] = rng.uniform(-0.5, 0.5, size=(n, 2))
    elif shape == "cylinder":
        angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
        pts = np.stack([0.3 * np.cos(angle), 0.3 * np.sin(angle),
                        rng.uniform(-0.5, 0.5, size=n)], axis=1)
    elif shape == "sphere":
        vec = rng.normal(size=(n, 3))
        pts = vec / np.linalg.norm(vec, axis=1, keepdims=True)
    else:
        big_r, small_r = 0.5, 0.2
        pts = np.empty((n, 3))
        got = 0
        while got < n:
            u = rng.uniform(0.0, 2.0 * np.pi, size=2 * (n - got))
            v = rng.uniform(0.0, 2.0 * np.pi, size=2 * (n - got))
            # area-correct rejection on the ring coordinate
            keep = rng.uniform(0.0, 1.0, size=u.size) < (big_r + small_r * np.cos(v)) / (big_r + small_r)
            u, v = u[keep][: n - got], v[keep][: n - got]
            ring = big_r + small_r * np.cos(v)
            pts[got : got + u.size] = np.stack(
                [ring * np.cos(u), ring * np.sin(u), small_r * np.sin(v)], axis=1)
            got += u.size
    return PointCloud(pts * scale)


@dataclass(frozen=True)
class DeformationSpec:
    """A named deformation with its parameters.

    Kinds and parameters (all optional, defaults in parentheses):

    * ``rigid``: wx, wy, wz (0) axis-angle rotation; tx, ty, tz (0)
    * ``similarity``: s (1) plus the rigid parameters
    * ``twist``: axis ('z'), rate (1.0) radians per unit length
    * ``bend``: axis ('x'), curvature (1.0) inverse arc radius
    * ``sine``: axis ('x'), amplitude (0.1), frequency (1.0) cycles/unit
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFORMATIONS:
            raise ConfigError(f"unknown deformation '{self.kind}'")
        allowed = {
            "rigid": {"wx", "wy", "wz", "tx", "ty", "tz"},
            "similarity": {"s", "wx", "wy", "wz", "tx", "ty", "tz"},
            "twist": {"axis", "rate"},
            "bend": {"axis", "curvature"},
            "sine": {"axis", "amplitude", "frequency"},
        }[self.kind]
        unknown = set(self.params) - allowed
        if unknown:
            raise ConfigError(f"{self.kind}: unknown parameter(s) {sorted(unknown)}")


def _axis_index(params: dict, default: str) -> int:
    axis = str(params.get("axis", default)).lower()
    if axis not in _AXES:
        raise ConfigError(f"axis must be one of x, y, z (got '{axis}')")
    return _AXES[axis]


def _lift_index(axis: int) -> int:
    return 2 if axis != 2 else 0


def _deform_points(pts: np.ndarray, spec: DeformationSpec) -> np.ndarray:
    p = spec.params
    if spec.kind in ("rigid", "similarity"):
        omega = np.array([p.get("wx", 0.0), p.get("wy", 0.0), p.get("wz", 0.0)])
        t = np.array([p.get("tx", 0.0), p.get("ty", 0.0), p.get("tz", 0.0)])
        s = float(p.get("s", 1.0)) if spec.kind == "similarity" else 1.0
        return s * (pts @ exp_so3(omega).T) + t
    if spec.kind == "twist":
        axis = _axis_index(p, "z")
        rate = float(p.get("rate", 1.0))
        i, j = [k for k in range(3) if k != axis]
        out = pts.copy()
        phi = rate * pts[:, axis]
        c, s = np.cos(phi), np.sin(phi)
        out[:, i] = c * pts[:, i] - s * pts[:, j]
        out[:, j] = s * pts[:, i] + c * pts[:, j]
        return out
    if spec.kind == "bend":
        axis = _axis_index(p, "x")
        lift = _lift_index(axis)
        c = float(p.get("curvature", 1.0))
        if c == 0.0:
            return pts.copy()
        out = pts.copy()
        u = pts[:, axis]
        out[:, axis] = np.sin(c * u) / c
        out[:, lift] = pts[:, lift] + (1.0 - np.cos(c * u)) / c
        return out
    # sine
    axis = _axis_index(p, "x")
    lift = _lift_index(axis)
    amp = float(p.get("amplitude", 0.1))
    freq = float(p.get("frequency", 1.0))
    out = pts.copy()
    out[:, lift] = pts[:, lift] + amp * np.sin(2.0 * np.pi * freq * pts[:, axis])
    return out


def apply_deformation(cloud: PointCloud, spec: DeformationSpec):
    """Deform a cloud; returns ``(deformed_cloud, gt_warp)``.

    The deformed points are reconstituted as ``original + gt`` so the
    ground-truth identity is exact in floating point.
    """
    gt = _deform_points(cloud.points, spec) - cloud.points
    return cloud.with_points(cloud.points + gt), gt


def partial_indices(cloud: PointCloud, overlap_fraction: float, seed: int) -> np.ndarray:
    """Indices retained by a random half-space crop, in original order."""
    if not 0.0 < overlap_fraction <= 1.0:
        raise ConfigError("overlap_fraction must be in (0, 1]")
    n = cloud.count
    keep = int(round(overlap_fraction * n))
    if keep < 1:
        raise ConfigError(f"overlap_fraction {overlap_fraction} keeps no points of {n}")
    if keep >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    proj = cloud.points @ direction
    order = np.argsort(proj, kind="stable")
    return np.sort(order[:keep])


def make_partial(cloud: PointCloud, overlap_fraction: float, seed: int) -> PointCloud:
    """Keep the requested fraction of points on one side of a random plane."""
    idx = partial_indices(cloud, overlap_fraction, seed)
    if idx.size == cloud.count:
        return cloud
    return cloud.with_points(cloud.points[idx])


def add_noise(cloud: PointCloud, ratio: float, radius: float, seed: int) -> PointCloud:
    """Perturb ``round(ratio * n)`` points uniformly inside a ball.

    The perturbed subset, directions, and magnitudes are all drawn from
    the seed, so equal seeds give identical output.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError("noise ratio must be in [0, 1]")
    if radius < 0.0:
        raise ConfigError("noise radius must be >= 0")
    k = int(round(ratio * cloud.count))
    if k == 0 or radius == 0.0:
        return cloud
    rng = np.random.default_rng(seed)
    chosen = rng.choice(cloud.count, size=k, replace=False)
    dirs = rng.normal(size=(k, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = radius * rng.uniform(0.0, 1.0, size=(k, 1)) ** (1.0 / 3.0)
    pts = cloud.points.copy()
    pts[chosen] += dirs * mags
    return cloud.with_points(pts)


# ---------------------------------------------------------------------------
# benchmark suite


@dataclass(frozen=True)
class SuiteInstance:
    name: str
    source: PointCloud
    target: PointCloud
    gt: np.ndarray
    spec: DeformationSpec

    @property
    def object_scale(self) -> float:
        lo = self.source.points.min(axis=0)
        hi = self.source.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def make_suite(count: int = 20, n_points: int = 2048, base_seed: int = 0) -> list[SuiteInstance]:
    """The standard non-rigid suite: twist, bend, and sine instances.

    Object bounding-box diagonals land in roughly [0.6, 2.1] scene
    meters; deformation magnitudes are large enough that no single
    near-rigid fit explains them.
    """
    # Twist axes are chosen perpendicular to each shape's symmetry axis:
    # twisting a z-axis cylinder about z slides points along the surface
    # and leaves the cloud-as-a-set nearly unchanged, which no
    # distance-to-nearest cost can observe.
    recipes = [
        ("cylinder", 1.2, "twist", lambda r: {"axis": "x", "rate": 1.1 + 0.5 * r}),
        ("plane", 1.3, "bend", lambda r: {"axis": "x", "curvature": 1.2 + 0.6 * r}),
        ("plane", 1.3, "sine", lambda r: {"axis": "x", "amplitude": 0.16 + 0.08 * r,
                                          "frequency": 0.9 + 0.4 * r}),
        ("cylinder", 1.4, "twist", lambda r: {"axis": "y", "rate": -(1.0 + 0.6 * r)}),
        ("torus", 0.8, "twist", lambda r: {"axis": "x", "rate": 1.3 + 0.5 * r}),
    ]
    instances = []
    for i in range(count):
        shape, scale, kind, make_params = recipes[i % len(recipes)]
        ramp = (i // len(recipes)) / max(1, (count - 1) // len(recipes))
        seed = base_seed + 101 * i
        source = sample_surface(shape, n_points, seed=seed, scale=scale)
        spec = DeformationSpec(kind, make_params(ramp), seed=seed)
        target, gt = apply_deformation(source, spec)
        instances.append(SuiteInstance(f"{i:02d}-{shape}-{kind}", source, target, gt, spec))
    return instances
