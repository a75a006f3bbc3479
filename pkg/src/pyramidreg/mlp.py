"""Per-level coordinate MLP: encoded point -> (transform params, blend weight).

A level network is a small ReLU trunk with two linear heads. The xi
head output is multiplied by a small constant (``output_scale``, 1e-4
by default) so a freshly initialized level starts as a near-identity
warp; the alpha head feeds a sigmoid directly. Biases are fixed at
zero by every init scheme.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FileFormatError

_ACT_CODES = {"relu": 0, "sigmoid": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class MlpLevel:
    trunk: list            # [(W, b), ...] hidden layers
    xi_head: tuple         # (W, b)
    alpha_head: tuple      # (W, b)
    output_scale: float
    activation: str

    def param_arrays(self) -> list[np.ndarray]:
        """All parameters in a fixed order (trunk pairs, xi head, alpha head)."""
        out = []
        for w, b in self.trunk:
            out.extend((w, b))
        out.extend(self.xi_head)
        out.extend(self.alpha_head)
        return out

    def copy_weights(self) -> list[np.ndarray]:
        return [a.copy() for a in self.param_arrays()]

    def set_weights(self, arrays: list[np.ndarray]):
        for dst, src in zip(self.param_arrays(), arrays):
            dst[...] = src


def init_mlp(in_dim: int, width: int, depth: int, xi_out: int, rng_seed,
             scheme: str = "xavier_uniform", output_scale: float = 1e-4,
             activation: str = "relu") -> MlpLevel:
    """Build a level network with seeded, deterministic initialization."""
    if scheme not in ("xavier_uniform", "kaiming_uniform", "zeros"):
        raise ConfigError(f"unknown init scheme '{scheme}'")
    rng = np.random.default_rng(rng_seed)

    def draw(fan_in, fan_out):
        if scheme == "zeros":
            return np.zeros((fan_in, fan_out))
        if scheme == "xavier_uniform":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        else:
            bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    trunk = []
    fan_in = in_dim
    for _ in range(depth):
        trunk.append((draw(fan_in, width), np.zeros(width)))
        fan_in = width
    xi_head = (draw(width, xi_out), np.zeros(xi_out))
    alpha_head = (draw(width, 1), np.zeros(1))
    return MlpLevel(trunk, xi_head, alpha_head, output_scale, activation)


def forward(net: MlpLevel, encoded: ad.Tensor, tape: ad.Tape | None = None):
    """Run the level network on (n, in_dim) encoded coordinates.

    Returns ``(xi, alpha, leaves)``. With a tape (which must be the
    active one), parameters are registered as leaves and returned in
    ``net.param_arrays()`` order so the optimizer can map gradients back;
    without one this is a plain evaluation and ``leaves`` is empty.
    """
    wrap = tape.leaf if tape is not None else ad.Tensor
    leaves = [wrap(a) for a in net.param_arrays()]
    act = ad.relu if net.activation == "relu" else ad.sigmoid
    h = encoded
    for i in range(len(net.trunk)):
        w, b = leaves[2 * i], leaves[2 * i + 1]
        h = act(ad.add_bias(ad.matmul(h, w), b))
    k = 2 * len(net.trunk)
    xi = ad.mul_scalar(ad.add_bias(ad.matmul(h, leaves[k]), leaves[k + 1]), net.output_scale)
    alpha = ad.sigmoid(ad.add_bias(ad.matmul(h, leaves[k + 2]), leaves[k + 3]))
    return xi, alpha, (leaves if tape is not None else [])


# ---------------------------------------------------------------------------
# binary weight dump

_MAGIC = b"MLPW"
_VERSION = 1


def save_weights(net: MlpLevel, level: int, path):
    """Write converged level weights: versioned header + float64 LE arrays."""
    arrays = net.param_arrays()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IiBxxxd", _VERSION, level,
                             _ACT_CODES[net.activation], net.output_scale))
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path):
    """Read a weight dump; returns ``(level, MlpLevel)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FileFormatError(f"{path}: not a weight dump (bad magic)")
    version, level, act_code, output_scale = struct.unpack_from("<IiBxxxd", blob, 4)
    if version != _VERSION:
        raise FileFormatError(f"{path}: unsupported weight dump version {version}")
    if act_code not in _ACT_NAMES:
        raise FileFormatError(f"{path}: unknown activation code {act_code}")
    offset = 4 + struct.calcsize("<IiBxxxd")
    (n_arrays,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    shapes = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        shapes.append(shape)
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        need = 8 * count
        if offset + need > len(blob):
            raise FileFormatError(f"{path}: truncated weight data")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count,
                                    offset=offset).reshape(shape).astype(np.float64))
        offset += need
    if n_arrays < 4 or n_arrays % 2 != 0:
        raise FileFormatError(f"{path}: malformed array table")
    trunk = [(arrays[i], arrays[i + 1]) for i in range(0, n_arrays - 4, 2)]
    net = MlpLevel(trunk, (arrays[-4], arrays[-3]), (arrays[-2], arrays[-1]),
                   output_scale, _ACT_NAMES[act_code])
    return level, net
