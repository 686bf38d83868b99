"""Dense 4-D float32 arrays and the deterministic RNG shared by the library.

Every value flowing between layers is a numpy array of shape
(batch, time, feature, channel), row-major, float32 by default.  A float64
"check mode" is supported throughout simply by passing float64 arrays.
"""

from __future__ import annotations

import numpy as np

AXIS_BATCH = 0
AXIS_TIME = 1
AXIS_FEATURE = 2
AXIS_CHANNEL = 3

_CONCAT_AXES = {"feature": AXIS_FEATURE, "channel": AXIS_CHANNEL}


class InvalidShapeError(ValueError):
    """A tensor shape violates the (n, t, f, c) >= 1 contract."""


def check_shape(shape) -> tuple[int, int, int, int]:
    """Validate and normalize a 4-D shape; every dimension must be >= 1."""
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise InvalidShapeError(f"expected 4 dimensions (n, t, f, c), got {shape}")
    if any(d < 1 for d in shape):
        raise InvalidShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


class Rng:
    """Deterministic, splittable random source (PCG64 behind a SeedSequence).

    The same seed always yields the same stream, independent of platform.
    ``split`` derives independent child streams, so parallel consumers can
    be made reproducible by construction.
    """

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._ss))

    def split(self, n: int) -> list["Rng"]:
        """Derive ``n`` independent child generators."""
        return [Rng(self.seed, _ss=child) for child in self._ss.spawn(n)]

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, scale=1.0):
        return self._gen.normal(0.0, scale, size=shape)

    def random(self, shape=None):
        return self._gen.random(size=shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def zeros(shape, dtype=np.float32) -> np.ndarray:
    """All-zero tensor of the given 4-D shape."""
    return np.zeros(check_shape(shape), dtype=dtype)


def truncated_normal(shape, stddev: float, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Normal(0, stddev^2) samples with any draw outside +/-2*stddev redrawn.

    Deterministic given the rng state: rejected entries are redrawn from the
    same stream until all lie inside the truncation bound.
    """
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    shape = check_shape(shape) if len(tuple(shape)) == 4 else tuple(int(d) for d in shape)
    out = rng.normal(shape, stddev)
    bound = 2.0 * stddev
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(int(bad.sum()), stddev)
        bad = np.abs(out) > bound
    return out.astype(dtype)


def slice_feature(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Copy of the feature-axis interval [lo, hi) of ``x``."""
    if x.ndim != 4:
        raise InvalidShapeError(f"expected a 4-D tensor, got ndim={x.ndim}")
    f = x.shape[AXIS_FEATURE]
    if not (0 <= lo < hi <= f):
        raise ValueError(f"feature interval [{lo}, {hi}) out of range for {f} bins")
    return np.ascontiguousarray(x[:, :, lo:hi, :])


def concat(xs, axis: str) -> np.ndarray:
    """Concatenate tensors along the feature or channel axis, order preserved."""
    if axis not in _CONCAT_AXES:
        raise ValueError(f"axis must be 'feature' or 'channel', got {axis!r}")
    xs = list(xs)
    if not xs:
        raise ValueError("cannot concatenate an empty list of tensors")
    ax = _CONCAT_AXES[axis]
    first = xs[0].shape
    for i, x in enumerate(xs):
        if x.ndim != 4:
            raise InvalidShapeError(f"input {i}: expected 4-D, got ndim={x.ndim}")
        for d in range(4):
            if d != ax and x.shape[d] != first[d]:
                raise InvalidShapeError(
                    f"input {i} shape {x.shape} does not match {first} "
                    f"outside the {axis} axis"
                )
    return np.concatenate(xs, axis=ax)
