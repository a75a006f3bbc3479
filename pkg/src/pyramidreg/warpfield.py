"""Pointwise warp fields: rotations, rigid/similarity transforms, blending.

Two parallel paths live here:

* plain numpy builders that materialize 3x3 rotation matrices
  (``exp_so3``, ``rotation_from_repr``) for inspection and testing;
* tape-differentiable application of the same transforms to point
  batches (``warp``, ``compose_level``) written against the autodiff
  primitives, using the matrix-free Rodrigues form

      R x = x + A (w x x) + B (w x (w x x)),
      A = sin(t)/t,  B = (1 - cos(t))/t^2,  t = |w|,

  so no (n, 3, 3) stack is ever built during optimization.

Near t = 0 both coefficients switch to their second-order Taylor
expansions A = 1 - t^2/6, B = 1/2 - t^2/24 (for |w| < 1e-8), which are
functions of t^2 alone, keeping the gradient well-defined at w = 0.
Normalization denominators (quaternion, 6-D Gram-Schmidt) carry a
+1e-12 regularizer so degenerate inputs stay finite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .core import RotationRepr, WarpFieldType
from .errors import ShapeError

_TAYLOR_THRESHOLD = 1e-8  # switch point on |w|
_NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# explicit rotation matrices (plain numpy)


def _batched(params, width: int, what: str):
    arr = np.asarray(params, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"{what} expects shape (n, {width}) or ({width},), got {np.asarray(params).shape}")
    return arr, single


def exp_so3(omega) -> np.ndarray:
    """Rodrigues exponential: axis-angle vector(s) to rotation matrix(es)."""
    w, single = _batched(omega, 3, "exp_so3")
    t2 = (w * w).sum(axis=1)
    tiny = t2 < _TAYLOR_THRESHOLD**2
    t2_safe = np.where(tiny, 1.0, t2)
    theta = np.sqrt(t2_safe)
    a = np.where(tiny, 1.0 - t2 / 6.0, np.sin(theta) / theta)
    b = np.where(tiny, 0.5 - t2 / 24.0, 2.0 * np.sin(theta / 2.0) ** 2 / t2_safe)
    n = w.shape[0]
    k = np.zeros((n, 3, 3))
    k[:, 0, 1], k[:, 0, 2] = -w[:, 2], w[:, 1]
    k[:, 1, 0], k[:, 1, 2] = w[:, 2], -w[:, 0]
    k[:, 2, 0], k[:, 2, 1] = -w[:, 1], w[:, 0]
    rot = np.eye(3) + a[:, None, None] * k + b[:, None, None] * (k @ k)
    return rot[0] if single else rot


def _euler_to_matrix(angles: np.ndarray) -> np.ndarray:
    ax, ay, az = angles[:, 0], angles[:, 1], angles[:, 2]
    n = angles.shape[0]

    def stack(rows):
        out = np.empty((n, 3, 3))
        for i in range(3):
            for j in range(3):
                out[:, i, j] = rows[i][j]
        return out

    one, zero = np.ones(n), np.zeros(n)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = stack([(one, zero, zero), (zero, cx, -sx), (zero, sx, cx)])
    ry = stack([(cy, zero, sy), (zero, one, zero), (-sy, zero, cy)])
    rz = stack([(cz, -sz, zero), (sz, cz, zero), (zero, zero, one)])
    return rz @ ry @ rx


def _quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / (norm + _NORM_EPS)).T
    n = q.shape[0]
    rot = np.empty((n, 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def _sixd_to_matrix(p: np.ndarray) -> np.ndarray:
    a1, a2 = p[:, :3], p[:, 3:]
    b1 = a1 / (np.linalg.norm(a1, axis=1, keepdims=True) + _NORM_EPS)
    proj = (b1 * a2).sum(axis=1, keepdims=True)
    b2 = a2 - proj * b1
    b2 = b2 / (np.linalg.norm(b2, axis=1, keepdims=True) + _NORM_EPS)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rotation_from_repr(repr_: RotationRepr, params) -> np.ndarray:
    """Rotation matrix(es) from parameters in the given representation.

    Euler angles are intrinsic XYZ (R = Rz Ry Rx); quaternions are
    (w, x, y, z), normalized before conversion; 6-D inputs are the first
    two matrix columns, re-orthonormalized by Gram-Schmidt.
    """
    p, single = _batched(params, repr_.param_count, f"rotation_from_repr[{repr_.value}]")
    if repr_ is RotationRepr.AXIS_ANGLE:
        rot = exp_so3(p)
    elif repr_ is RotationRepr.EULER_XYZ:
        rot = _euler_to_matrix(p)
    elif repr_ is RotationRepr.QUATERNION:
        rot = _quaternion_to_matrix(p)
    else:
        rot = _sixd_to_matrix(p)
    return rot[0] if single else rot


# ---------------------------------------------------------------------------
# tape-differentiable point rotation


def _col(t: ad.Tensor, j: int) -> ad.Tensor:
    return ad.slice_axis(t, j, j + 1, axis=1)


def _cross(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    a1, a2, a3 = _col(a, 0), _col(a, 1), _col(a, 2)
    b1, b2, b3 = _col(b, 0), _col(b, 1), _col(b, 2)
    return ad.concat([
        ad.sub(ad.mul(a2, b3), ad.mul(a3, b2)),
        ad.sub(ad.mul(a3, b1), ad.mul(a1, b3)),
        ad.sub(ad.mul(a1, b2), ad.mul(a2, b1)),
    ], axis=1)


def _row_norm(v: ad.Tensor) -> ad.Tensor:
    return ad.sqrt(ad.sum_rows(ad.mul(v, v)))


def _normalize_rows(v: ad.Tensor) -> ad.Tensor:
    denom = ad.add_scalar(_row_norm(v), _NORM_EPS)
    return ad.scale_rows(v, 1.0 / denom)


def _rotate_axis_angle(omega: ad.Tensor, x: ad.Tensor) -> ad.Tensor:
    t2 = ad.sum_rows(ad.mul(omega, omega))
    # Constant masks: which rows take the Taylor branch. The +mask shift
    # keeps the exact branch finite in lanes where it is discarded.
    tiny = (t2.data < _TAYLOR_THRESHOLD**2).astype(np.float64)
    mask = ad.Tensor(tiny)
    keep = ad.Tensor(1.0 - tiny)
    t2_safe = ad.add(t2, mask)
    theta = ad.sqrt(t2_safe)
    sin_half = ad.sin(ad.mul_scalar(theta, 0.5))
    a_exact = ad.div(ad.sin(theta), theta)
    b_exact = ad.div(ad.mul_scalar(ad.mul(sin_half, sin_half), 2.0), t2_safe)
    a_taylor = ad.add_scalar(ad.mul_scalar(t2, -1.0 / 6.0), 1.0)
    b_taylor = ad.add_scalar(ad.mul_scalar(t2, -1.0 / 24.0), 0.5)
    a = ad.add(ad.mul(keep, a_exact), ad.mul(mask, a_taylor))
    b = ad.add(ad.mul(keep, b_exact), ad.mul(mask, b_taylor))
    wx = _cross(omega, x)
    wwx = _cross(omega, wx)
    return ad.add(x, ad.add(ad.scale_rows(wx, a), ad.scale_rows(wwx, b)))


def _rotate_euler(angles: ad.Tensor, x: ad.Tensor) -> ad.Tensor:
    # Apply Rx, then Ry, then Rz (equivalent to R = Rz Ry Rx).
    for axis in range(3):
        ang = _col(angles, axis)
        c, s = ad.cos(ang), ad.sin(ang)
        x0, x1, x2 = _col(x, 0), _col(x, 1), _col(x, 2)
        if axis == 0:
            x = ad.concat([x0,
                           ad.sub(ad.mul(c, x1), ad.mul(s, x2)),
                           ad.add(ad.mul(s, x1), ad.mul(c, x2))], axis=1)
        elif axis == 1:
            x = ad.concat([ad.add(ad.mul(c, x0), ad.mul(s, x2)),
                           x1,
                           ad.sub(ad.mul(c, x2), ad.mul(s, x0))], axis=1)
        else:
            x = ad.concat([ad.sub(ad.mul(c, x0), ad.mul(s, x1)),
                           ad.add(ad.mul(s, x0), ad.mul(c, x1)),
                           x2], axis=1)
    return x


def _rotate_quaternion(q: ad.Tensor, x: ad.Tensor) -> ad.Tensor:
    qn = _normalize_rows(q)
    w = ad.slice_axis(qn, 0, 1, axis=1)
    qv = ad.slice_axis(qn, 1, 4, axis=1)
    t = ad.mul_scalar(_cross(qv, x), 2.0)
    return ad.add(x, ad.add(ad.scale_rows(t, w), _cross(qv, t)))


def _rotate_sixd(p: ad.Tensor, x: ad.Tensor) -> ad.Tensor:
    a1 = ad.slice_axis(p, 0, 3, axis=1)
    a2 = ad.slice_axis(p, 3, 6, axis=1)
    b1 = _normalize_rows(a1)
    proj = ad.sum_rows(ad.mul(b1, a2))
    b2 = _normalize_rows(ad.sub(a2, ad.scale_rows(b1, proj)))
    b3 = _cross(b1, b2)
    # Columns of R are b1, b2, b3, so R x = x0 b1 + x1 b2 + x2 b3.
    out = ad.scale_rows(b1, _col(x, 0))
    out = ad.add(out, ad.scale_rows(b2, _col(x, 1)))
    return ad.add(out, ad.scale_rows(b3, _col(x, 2)))


_ROTATE = {
    RotationRepr.AXIS_ANGLE: _rotate_axis_angle,
    RotationRepr.EULER_XYZ: _rotate_euler,
    RotationRepr.QUATERNION: _rotate_quaternion,
    RotationRepr.SIX_D: _rotate_sixd,
}


def rotate_points(params: ad.Tensor, x: ad.Tensor, repr_: RotationRepr) -> ad.Tensor:
    """Rotate each row of ``x`` by its own row of rotation parameters."""
    return _ROTATE[repr_](params, x)


# ---------------------------------------------------------------------------
# motion parameter layout


def xi_dim(warp_type: WarpFieldType, rot_repr: RotationRepr) -> int:
    """Length of the per-point transform parameter vector."""
    if warp_type is WarpFieldType.VECTOR_R3:
        return 3
    if warp_type is WarpFieldType.RIGID_SE3:
        return rot_repr.param_count + 3
    return 1 + rot_repr.param_count + 3


_ROT_IDENTITY = {
    RotationRepr.AXIS_ANGLE: np.zeros(3),
    RotationRepr.EULER_XYZ: np.zeros(3),
    RotationRepr.QUATERNION: np.array([1.0, 0.0, 0.0, 0.0]),
    RotationRepr.SIX_D: np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
}


def identity_params(warp_type: WarpFieldType, rot_repr: RotationRepr) -> np.ndarray:
    """The ξ vector whose warp is the identity map.

    Added to the (near-zero) network output so every representation
    starts from the identity transform, not just the ones whose zero
    vector happens to encode it.
    """
    xi = np.zeros(xi_dim(warp_type, rot_repr))
    if warp_type is WarpFieldType.RIGID_SE3:
        xi[: rot_repr.param_count] = _ROT_IDENTITY[rot_repr]
    elif warp_type is WarpFieldType.SIM3:
        xi[1 : 1 + rot_repr.param_count] = _ROT_IDENTITY[rot_repr]
    return xi


def _as_tensor_2d(v, width: int | None, what: str):
    if not isinstance(v, ad.Tensor):
        v = ad.Tensor(np.asarray(v, dtype=np.float64))
    single = v.data.ndim == 1
    if single:
        if v.node is not None:
            raise ShapeError(f"{what}: taped input must be 2-D")
        v = ad.Tensor(v.data.reshape(1, -1))
    if v.data.ndim != 2 or (width is not None and v.data.shape[1] != width):
        raise ShapeError(f"{what}: expected (n, {width}) array, got {v.data.shape}")
    return v, single


def warp(x, xi, warp_type: WarpFieldType, rot_repr: RotationRepr = RotationRepr.AXIS_ANGLE):
    """Apply the per-point transform ξ to point(s) ``x``.

    Layouts: R3 ξ = (t); SE3 ξ = (rot, t); Sim3 ξ = (s_raw, rot, t) with
    scale exp(s_raw), so a zero raw scale is exactly scale 1.
    """
    x_t, single = _as_tensor_2d(x, 3, "warp points")
    xi_t, xi_single = _as_tensor_2d(xi, xi_dim(warp_type, rot_repr), "warp params")
    if xi_t.data.shape[0] != x_t.data.shape[0]:
        raise ShapeError(
            f"warp: {x_t.data.shape[0]} points but {xi_t.data.shape[0]} parameter rows")
    if warp_type is WarpFieldType.VECTOR_R3:
        out = ad.add(x_t, xi_t)
    elif warp_type is WarpFieldType.RIGID_SE3:
        d = rot_repr.param_count
        rot = ad.slice_axis(xi_t, 0, d, axis=1)
        t = ad.slice_axis(xi_t, d, d + 3, axis=1)
        out = ad.add(rotate_points(rot, x_t, rot_repr), t)
    else:
        d = rot_repr.param_count
        s = ad.exp(ad.slice_axis(xi_t, 0, 1, axis=1))
        rot = ad.slice_axis(xi_t, 1, 1 + d, axis=1)
        t = ad.slice_axis(xi_t, 1 + d, 1 + d + 3, axis=1)
        out = ad.add(ad.scale_rows(rotate_points(rot, x_t, rot_repr), s), t)
    if single and out.node is None:
        return ad.Tensor(out.data.reshape(3))
    return out


def compose_level(x_prev, xi, alpha, warp_type: WarpFieldType,
                  rot_repr: RotationRepr = RotationRepr.AXIS_ANGLE) -> ad.Tensor:
    """Blend one level's warp into the running composition.

    x_k = x_prev + alpha * (W(x_prev, xi) - x_prev): alpha 0 keeps the
    point fixed, alpha 1 applies the full warp.
    """
    x_t, single = _as_tensor_2d(x_prev, 3, "compose points")
    warped = warp(x_t, xi, warp_type, rot_repr)
    if isinstance(alpha, (int, float)):
        alpha = ad.Tensor(np.full((x_t.data.shape[0], 1), float(alpha)))
    delta = ad.sub(warped, x_t)
    out = ad.add(x_t, ad.scale_rows(delta, alpha))
    if single and out.node is None:
        return ad.Tensor(out.data.reshape(3))
    return out
