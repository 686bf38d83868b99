"""Layer primitives with explicit forward and backward passes.

Convolution uses SAME zero padding (output size = ceil(in / stride), extra
padding on the trailing edge) and is lowered to a single GEMM via im2col.
All backward functions return exact gradients of their forward map; a
finite-difference checker is provided to verify any composition of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Rng


def same_padding(in_size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return (out_size, pad_begin, pad_end) for SAME padding."""
    out = -(-in_size // stride)
    pad = max((out - 1) * stride + kernel - in_size, 0)
    return out, pad // 2, pad - pad // 2


@dataclass
class ConvParams:
    """2-D convolution parameters; weights are (kt, kf, in_c, out_c)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError(f"conv weights must be 4-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_channels "
                f"{self.weights.shape[3]}"
            )
        st, sf = self.stride
        if st < 1 or sf < 1:
            raise ValueError(f"stride components must be >= 1, got {self.stride}")

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[0], self.weights.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]


def _im2col(x, kt, kf, st, sf):
    """Lower conv input to a (n*ot*of, kt*kf*c) patch matrix."""
    n, t, f, c = x.shape
    ot, pt0, pt1 = same_padding(t, kt, st)
    of, pf0, pf1 = same_padding(f, kf, sf)
    xp = np.pad(x, ((0, 0), (pt0, pt1), (pf0, pf1), (0, 0)))
    # (n, T', F', c, kt, kf) window view, then stride over the spatial axes
    v = sliding_window_view(xp, (kt, kf), axis=(1, 2))[:, ::st, ::sf]
    cols = v.transpose(0, 1, 2, 4, 5, 3).reshape(n * ot * of, kt * kf * c)
    return cols, (ot, of, (pt0, pf0), xp.shape)


def conv2d_forward(x: np.ndarray, p: ConvParams, *, return_cache: bool = False):
    """SAME-padded 2-D convolution over (time, feature), bias added."""
    if x.shape[3] != p.in_channels:
        raise ValueError(
            f"input has {x.shape[3]} channels, weights expect {p.in_channels}"
        )
    kt, kf = p.kernel
    st, sf = p.stride
    cols, meta = _im2col(x, kt, kf, st, sf)
    ot, of = meta[0], meta[1]
    wf = p.weights.reshape(kt * kf * p.in_channels, p.out_channels)
    y = cols @ wf + p.bias.astype(cols.dtype)
    y = y.reshape(x.shape[0], ot, of, p.out_channels)
    if return_cache:
        return y, (cols, meta)
    return y


def conv2d_backward(x, p: ConvParams, grad_out, *, cache=None, need_grad_x=True):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    kt, kf = p.kernel
    st, sf = p.stride
    if cache is None:
        cache = _im2col(x, kt, kf, st, sf)
    cols, (ot, of, (pt0, pf0), xp_shape) = cache
    n = x.shape[0]
    if grad_out.shape != (n, ot, of, p.out_channels):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(n, ot, of, p.out_channels)}"
        )
    go = grad_out.reshape(n * ot * of, p.out_channels)
    grad_w = (cols.T @ go).reshape(p.weights.shape)
    grad_b = go.sum(axis=0)
    grad_x = None
    if need_grad_x:
        wf = p.weights.reshape(kt * kf * p.in_channels, p.out_channels)
        gcols = (go @ wf.T).reshape(n, ot, of, kt, kf, p.in_channels)
        gxp = np.zeros(xp_shape, dtype=grad_out.dtype)
        t_span = (ot - 1) * st + 1
        f_span = (of - 1) * sf + 1
        for i in range(kt):
            for j in range(kf):
                gxp[:, i : i + t_span : st, j : j + f_span : sf, :] += gcols[:, :, :, i, j, :]
        t, f = x.shape[1], x.shape[2]
        grad_x = gxp[:, pt0 : pt0 + t, pf0 : pf0 + f, :]
    return grad_x, grad_w, grad_b


@dataclass
class PoolIndices:
    """Argmax map from a maxpool forward pass (flat (t*f) index per output)."""

    indices: np.ndarray  # (n, ot, of, c) int64
    in_time: int
    in_feature: int


def maxpool_forward(x, window=(2, 2), stride=(2, 2)):
    """2x2 stride-2 max pooling; odd trailing edges use a shrunk window.

    Returns the pooled tensor and the argmax map. Ties resolve to the
    smallest flat (t*f) input index, which makes backward deterministic.
    """
    if tuple(window) != (2, 2) or tuple(stride) != (2, 2):
        raise ValueError("only 2x2 window with 2x2 stride is supported")
    n, t, f, c = x.shape
    ot, of = -(-t // 2), -(-f // 2)
    xp = x
    if (t % 2) or (f % 2):
        xp = np.pad(
            x,
            ((0, 0), (0, 2 * ot - t), (0, 2 * of - f), (0, 0)),
            constant_values=-np.inf,
        )
    r = xp.reshape(n, ot, 2, of, 2, c)
    # candidate axis k = dt*2 + df: ascending flat index within each window
    cand = r.transpose(0, 1, 3, 5, 2, 4).reshape(n, ot, of, c, 4)
    k = cand.argmax(axis=-1)
    y = np.take_along_axis(cand, k[..., None], axis=-1)[..., 0]
    ti = 2 * np.arange(ot)[None, :, None, None] + k // 2
    fj = 2 * np.arange(of)[None, None, :, None] + k % 2
    idx = (ti * f + fj).astype(np.int64)
    return y, PoolIndices(indices=idx, in_time=t, in_feature=f)


def maxpool_backward(pool_idx: PoolIndices, grad_out):
    """Route gradients to the recorded argmax positions; all else zero."""
    n, ot, of, c = grad_out.shape
    if pool_idx.indices.shape != grad_out.shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match argmax map "
            f"{pool_idx.indices.shape}"
        )
    t, f = pool_idx.in_time, pool_idx.in_feature
    gx = np.zeros((n, t * f, c), dtype=grad_out.dtype)
    ni = np.arange(n)[:, None, None]
    ci = np.arange(c)[None, None, :]
    # windows are disjoint, so argmax positions are unique per (n, c):
    # plain fancy assignment cannot collide
    gx[ni, pool_idx.indices.reshape(n, ot * of, c), ci] = grad_out.reshape(n, ot * of, c)
    return gx.reshape(n, t, f, c)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    """Pass gradient where x > 0; the subgradient at exactly 0 is 0."""
    return grad_out * (x > 0)


def dropout_forward(x, rate: float, rng: Rng | None = None, train: bool = True, *, mask=None):
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Eval mode is an exact identity with an all-ones mask. A precomputed mask
    may be injected to freeze the randomness (used by the gradient checker).
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, np.ones_like(x)
    if mask is None:
        if rng is None:
            raise ValueError("train-mode dropout with rate > 0 requires an rng")
        draws = rng.generator.random(size=x.shape, dtype=np.float32)
        mask = (draws >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    return x * mask * scale, mask


def dropout_backward(mask, rate: float, grad_out):
    if rate == 0.0:
        return grad_out
    scale = grad_out.dtype.type(1.0 / (1.0 - rate))
    return grad_out * mask * scale


@dataclass
class DenseParams:
    """Fully connected layer; weights are (in_features, out_features)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ValueError(f"dense weights must be 2-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_features "
                f"{self.weights.shape[1]}"
            )

    @property
    def in_features(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]


def dense_forward(x, p: DenseParams):
    if x.ndim != 2 or x.shape[1] != p.in_features:
        raise ValueError(
            f"dense input must be (n, {p.in_features}), got {x.shape}"
        )
    return x @ p.weights + p.bias.astype(x.dtype)


def dense_backward(x, p: DenseParams, grad_out):
    grad_x = grad_out @ p.weights.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def softmax_cross_entropy(logits, labels):
    """Stabilized softmax cross-entropy.

    Accepts a single (num_classes,) vector with an integer label, or an
    (n, num_classes) batch with an (n,) label vector; batch loss is the mean
    over samples and the gradient is scaled accordingly.
    """
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, num_classes = z.shape
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match batch size {n}")
    if (y < 0).any() or (y >= num_classes).any():
        raise ValueError(f"labels must lie in [0, {num_classes})")
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_p = shifted - np.log(total)
    loss = float(-log_p[np.arange(n), y].mean())
    grad = exp / total
    grad[np.arange(n), y] -= 1.0
    grad /= n
    grad = grad.astype(z.dtype)
    return loss, (grad[0] if single else grad)


def finite_difference_grads(loss_fn, params: dict, epsilon: float = 1e-5) -> dict:
    """Central-difference gradient of ``loss_fn(params)`` over every element."""
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=np.float64)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(params)
            flat[i] = orig - epsilon
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * epsilon)
        grads[name] = g
    return grads


def gradient_check(loss_and_grads, params: dict, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and finite-difference gradients.

    ``loss_and_grads(params)`` must return (scalar loss, gradient dict). The
    relative error uses |a - n| / max(|a|, |n|, 1e-8) per element.
    """
    _, analytic = loss_and_grads(params)
    numeric = finite_difference_grads(lambda p: loss_and_grads(p)[0], params, epsilon)
    worst = 0.0
    for name in params:
        a = np.asarray(analytic[name], dtype=np.float64)
        m = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(m)), 1e-8)
        worst = max(worst, float((np.abs(a - m) / denom).max()))
    return worst
