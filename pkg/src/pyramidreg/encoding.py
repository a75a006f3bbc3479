"""Single-band sinusoidal positional encoding.

Level k encodes a 3-D coordinate x as the 6-vector

    ( sin(2^(k + k0) * x), cos(2^(k + k0) * x) )

applied componentwise. Each pyramid level sees exactly one frequency
band: low levels (k small, with k0 well below zero) vary so slowly over
a normalized cloud that they can only express near-global motion, while
higher levels resolve finer detail.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteError, ShapeError


def frequency(k: int, k0: float) -> float:
    """Angular frequency 2^(k + k0) of level ``k``."""
    if k < 1:
        raise ShapeError(f"level index k must be >= 1, got {k}")
    return float(2.0 ** (k + k0))


def positional_encode(x, k: int, k0: float) -> ad.Tensor:
    """Encode (n, 3) coordinates as (n, 6) features for level ``k``.

    ``x`` may be a plain array or a Tensor; the result is differentiable
    w.r.t. ``x`` when a tape is active.
    """
    freq = frequency(k, k0)
    if not isinstance(x, ad.Tensor):
        arr = np.asarray(x, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("positional_encode: input contains non-finite values")
        x = ad.Tensor(arr)
    if x.data.ndim != 2 or x.data.shape[1] != 3:
        raise ShapeError(f"positional_encode expects (n, 3) input, got {x.data.shape}")
    scaled = ad.mul_scalar(x, freq)
    return ad.concat([ad.sin(scaled), ad.cos(scaled)], axis=1)
