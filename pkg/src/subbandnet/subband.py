"""Band layouts and the three weight-sharing CNN architectures.

The model family shares one backbone: conv(20x8) -> ReLU -> dropout ->
maxpool(2x2), then conv(10x4) -> ReLU -> dropout, then a dense classifier.
``full_band`` runs it on the whole feature map. ``overlapped_subband`` gives
each feature band its own first-stage kernels and joins the bands before the
second convolution (channel concat by default; feature-axis and
after-conv2 joins are available as variants). ``full_plus_nonoverlap`` runs
a full two-stage tower per non-overlapped band plus a full-band tower and
joins them ahead of the classifier.

Models are described declaratively by :class:`ModelSpec`; parameters live in
a plain ``{name: ndarray}`` dict so training, checkpointing, and gradient
checking stay simple.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn, tensor
from .tensor import Rng

FULL_BAND = "full_band"
FULL_PLUS_NONOVERLAP = "full_plus_nonoverlap"
OVERLAPPED_SUBBAND = "overlapped_subband"
ARCHS = (FULL_BAND, FULL_PLUS_NONOVERLAP, OVERLAPPED_SUBBAND)

CONCAT_C_CONV1 = "concat_c_conv1"
CONCAT_CONV2 = "concat_conv2"
CONCAT_F_CONV1 = "concat_f_conv1"
VARIANTS = (CONCAT_C_CONV1, CONCAT_CONV2, CONCAT_F_CONV1)

CONV1_KERNEL = (20, 8)
CONV2_KERNEL = (10, 4)
POOL_WINDOW = (2, 2)
WEIGHT_STDDEV = 0.01

SPEC_SCHEMA = "subbandnet.modelspec.v1"


@dataclass(frozen=True)
class BandLayout:
    """Ordered feature-axis intervals [lo, hi) that together cover every bin.

    Overlap between neighbours is allowed; a non-overlapped layout is an
    exact partition.
    """

    bands: tuple[tuple[int, int], ...]
    feature_dim: int

    def __post_init__(self):
        bands = tuple((int(lo), int(hi)) for lo, hi in self.bands)
        object.__setattr__(self, "bands", bands)
        if not bands:
            raise ValueError("layout needs at least one band")
        for lo, hi in bands:
            if not (0 <= lo < hi <= self.feature_dim):
                raise ValueError(
                    f"band [{lo}, {hi}) out of range for {self.feature_dim} bins"
                )
        los = [lo for lo, _ in bands]
        if los != sorted(los):
            raise ValueError(f"bands must be sorted by start: {bands}")
        covered = np.zeros(self.feature_dim, dtype=int)
        for lo, hi in bands:
            covered[lo:hi] += 1
        if (covered == 0).any():
            missing = int(np.argmin(covered))
            raise ValueError(f"feature bin {missing} is not covered by any band")

    @property
    def num_bands(self) -> int:
        return len(self.bands)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.bands)

    def is_partition(self) -> bool:
        """True when the bands tile [0, feature_dim) with no overlap."""
        pos = 0
        for lo, hi in self.bands:
            if lo != pos:
                return False
            pos = hi
        return pos == self.feature_dim


_PRESET_BANDS = {
    2: ((0, 26), (14, 40)),
    3: ((0, 16), (12, 28), (24, 40)),
    4: ((0, 14), (8, 22), (16, 30), (26, 40)),
}


def preset_layout(num_bands: int) -> BandLayout:
    """Built-in overlapped layouts for 40-bin feature maps (2, 3, or 4 bands)."""
    if num_bands not in _PRESET_BANDS:
        raise ValueError(
            f"no preset layout for {num_bands} bands (choose from 2, 3, 4)"
        )
    return BandLayout(bands=_PRESET_BANDS[num_bands], feature_dim=40)


def uniform_layout(num_bands: int, feature_dim: int, overlap: int) -> BandLayout:
    """Equal-width bands with a fixed overlap between neighbours.

    Width is ``ceil((feature_dim + (num_bands - 1) * overlap) / num_bands)``
    and bands step by ``width - overlap``; the last band is clamped to end at
    ``feature_dim``. With ``overlap=0`` this produces a partition.
    """
    if num_bands < 1:
        raise ValueError(f"num_bands must be >= 1, got {num_bands}")
    if overlap < 0:
        raise ValueError(f"overlap must be >= 0, got {overlap}")
    width = -(-(feature_dim + (num_bands - 1) * overlap) // num_bands)
    if width > feature_dim:
        raise ValueError(
            f"infeasible layout: band width {width} exceeds {feature_dim} bins"
        )
    stride = width - overlap
    if num_bands > 1 and stride <= 0:
        raise ValueError(f"overlap {overlap} leaves no stride between bands")
    bands = []
    for i in range(num_bands):
        lo = i * stride
        hi = min(lo + width, feature_dim)
        bands.append((lo, hi))
    return BandLayout(bands=tuple(bands), feature_dim=feature_dim)


@dataclass(frozen=True)
class LayerSpec:
    """One resolved layer: shapes are batch-free (t, f, c) or (features,)."""

    name: str
    kind: str  # conv | relu | dropout | maxpool | slice | concat | flatten | dense
    in_shape: tuple
    out_shape: tuple
    kernel: tuple | None = None
    stride: tuple | None = None
    axis: str | None = None  # concat axis: channel | feature | flatten
    band: tuple | None = None  # slice interval (lo, hi)
    inputs: tuple = ()


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture instance with fully resolved layer shapes."""

    arch: str
    k: int
    dropout: float
    layout: BandLayout | None
    concat_variant: str | None
    input_shape: tuple[int, int]
    num_classes: int
    layers: tuple[LayerSpec, ...] = field(repr=False)

    def conv_and_dense_layers(self):
        return [l for l in self.layers if l.kind in ("conv", "dense")]

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self.conv_and_dense_layers():
            if layer.kind == "conv":
                kt, kf = layer.kernel
                in_c = layer.in_shape[2]
                out_c = layer.out_shape[2]
                shapes[layer.name + "/w"] = (kt, kf, in_c, out_c)
                shapes[layer.name + "/b"] = (out_c,)
            else:
                shapes[layer.name + "/w"] = (layer.in_shape[0], layer.out_shape[0])
                shapes[layer.name + "/b"] = (layer.out_shape[0],)
        return shapes


@dataclass(frozen=True)
class ReceptiveField:
    """Input extent (bins covered) feeding one point of a feature map."""

    time: int
    feature: int


def _pooled(size: int) -> int:
    return -(-size // 2)


class _LayerList:
    """Accumulates LayerSpec entries while tracking the running shape."""

    def __init__(self):
        self.layers: list[LayerSpec] = []

    def add(self, **kw) -> str:
        spec = LayerSpec(**kw)
        self.layers.append(spec)
        return spec.name

    def conv_block1(self, prefix, src, shape, k, dropout):
        t, f, c = shape
        src = self.add(
            name=prefix + "conv1", kind="conv", in_shape=(t, f, c),
            out_shape=(t, f, k), kernel=CONV1_KERNEL, stride=(1, 1), inputs=(src,),
        )
        src = self.add(name=prefix + "relu1", kind="relu", in_shape=(t, f, k),
                       out_shape=(t, f, k), inputs=(src,))
        src = self.add(name=prefix + "drop1", kind="dropout", in_shape=(t, f, k),
                       out_shape=(t, f, k), inputs=(src,))
        pt, pf = _pooled(t), _pooled(f)
        src = self.add(
            name=prefix + "pool1", kind="maxpool", in_shape=(t, f, k),
            out_shape=(pt, pf, k), kernel=POOL_WINDOW, stride=(2, 2), inputs=(src,),
        )
        return src, (pt, pf, k)

    def conv_block2(self, prefix, src, shape, k):
        t, f, c = shape
        src = self.add(
            name=prefix + "conv2", kind="conv", in_shape=(t, f, c),
            out_shape=(t, f, k), kernel=CONV2_KERNEL, stride=(1, 1), inputs=(src,),
        )
        src = self.add(name=prefix + "relu2", kind="relu", in_shape=(t, f, k),
                       out_shape=(t, f, k), inputs=(src,))
        src = self.add(name=prefix + "drop2", kind="dropout", in_shape=(t, f, k),
                       out_shape=(t, f, k), inputs=(src,))
        return src, (t, f, k)

    def head(self, src, shape, num_classes):
        flat = int(np.prod(shape))
        src = self.add(name="flatten", kind="flatten", in_shape=shape,
                       out_shape=(flat,), inputs=(src,))
        self.add(name="dense", kind="dense", in_shape=(flat,),
                 out_shape=(num_classes,), inputs=(src,))


def _warn_narrow_bands(layout: BandLayout):
    kf = CONV1_KERNEL[1]
    for lo, hi in layout.bands:
        if hi - lo < kf:
            warnings.warn(
                f"band [{lo}, {hi}) is narrower than the {kf}-bin conv1 kernel; "
                "SAME padding keeps it defined but most taps fall on padding",
                stacklevel=3,
            )


def build_model(
    arch: str,
    k: int,
    dropout: float = 0.5,
    layout: BandLayout | None = None,
    concat_variant: str | None = None,
    input_shape: tuple[int, int] = (98, 40),
    num_classes: int = 12,
) -> ModelSpec:
    """Resolve an architecture instance into a ModelSpec with layer shapes.

    ``layout`` is required for the banded architectures and must be None for
    ``full_band``; ``concat_variant`` applies only to ``overlapped_subband``
    and defaults to channel concatenation after the first conv block.
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}; choose from {ARCHS}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (0.0 <= dropout < 1.0):
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")
    t_in, f_in = (int(d) for d in input_shape)
    if t_in < 1 or f_in < 1:
        raise ValueError(f"input shape must be positive, got {input_shape}")

    if arch == FULL_BAND:
        if layout is not None:
            raise ValueError("full_band takes no band layout")
        if concat_variant is not None:
            raise ValueError("concat_variant applies only to overlapped_subband")
    else:
        if layout is None:
            raise ValueError(f"{arch} requires a band layout")
        if layout.feature_dim != f_in:
            raise ValueError(
                f"layout covers {layout.feature_dim} bins but input has {f_in}"
            )
        _warn_narrow_bands(layout)

    if arch == OVERLAPPED_SUBBAND:
        concat_variant = concat_variant or CONCAT_C_CONV1
        if concat_variant not in VARIANTS:
            raise ValueError(
                f"unknown concat variant {concat_variant!r}; choose from {VARIANTS}"
            )
    elif arch == FULL_PLUS_NONOVERLAP:
        if concat_variant is not None:
            raise ValueError("concat_variant applies only to overlapped_subband")
        if not layout.is_partition():
            raise ValueError(
                "full_plus_nonoverlap requires a non-overlapped partition layout"
            )

    ll = _LayerList()

    if arch == FULL_BAND:
        src, shape = ll.conv_block1("", "input", (t_in, f_in, 1), k, dropout)
        src, shape = ll.conv_block2("", src, shape, k)
        ll.head(src, shape, num_classes)

    elif arch == OVERLAPPED_SUBBAND:
        tower_srcs, tower_shapes = [], []
        for i, (lo, hi) in enumerate(layout.bands):
            prefix = f"band{i}/"
            src = ll.add(
                name=prefix + "slice", kind="slice", in_shape=(t_in, f_in, 1),
                out_shape=(t_in, hi - lo, 1), band=(lo, hi), inputs=("input",),
            )
            src, shape = ll.conv_block1(prefix, src, (t_in, hi - lo, 1), k, dropout)
            tower_srcs.append(src)
            tower_shapes.append(shape)
        pt = tower_shapes[0][0]
        pws = [s[1] for s in tower_shapes]
        if concat_variant == CONCAT_C_CONV1:
            if len(set(pws)) != 1:
                raise ValueError(
                    "channel concatenation needs equal pooled band widths, "
                    f"got {pws}; pick bands of equal width"
                )
            cshape = (pt, pws[0], k * layout.num_bands)
            src = ll.add(name="concat", kind="concat", axis="channel",
                         in_shape=tower_shapes[0], out_shape=cshape,
                         inputs=tuple(tower_srcs))
            src, shape = ll.conv_block2("", src, cshape, k)
            ll.head(src, shape, num_classes)
        elif concat_variant == CONCAT_F_CONV1:
            cshape = (pt, sum(pws), k)
            src = ll.add(name="concat", kind="concat", axis="feature",
                         in_shape=tower_shapes[0], out_shape=cshape,
                         inputs=tuple(tower_srcs))
            src, shape = ll.conv_block2("", src, cshape, k)
            ll.head(src, shape, num_classes)
        else:  # CONCAT_CONV2: per-band second stage, flatten-join before dense
            flat_total = 0
            srcs = []
            for i, (src, shape) in enumerate(zip(tower_srcs, tower_shapes)):
                src, shape = ll.conv_block2(f"band{i}/", src, shape, k)
                flat_total += int(np.prod(shape))
                srcs.append(src)
            src = ll.add(name="concat", kind="concat", axis="flatten",
                         in_shape=tower_shapes[0], out_shape=(flat_total,),
                         inputs=tuple(srcs))
            ll.add(name="dense", kind="dense", in_shape=(flat_total,),
                   out_shape=(num_classes,), inputs=(src,))

    else:  # FULL_PLUS_NONOVERLAP
        band_srcs, band_shapes = [], []
        for i, (lo, hi) in enumerate(layout.bands):
            prefix = f"band{i}/"
            src = ll.add(
                name=prefix + "slice", kind="slice", in_shape=(t_in, f_in, 1),
                out_shape=(t_in, hi - lo, 1), band=(lo, hi), inputs=("input",),
            )
            src, shape = ll.conv_block1(prefix, src, (t_in, hi - lo, 1), k, dropout)
            src, shape = ll.conv_block2(prefix, src, shape, k)
            band_srcs.append(src)
            band_shapes.append(shape)
        src_full, shape_full = ll.conv_block1("full/", "input", (t_in, f_in, 1), k, dropout)
        src_full, shape_full = ll.conv_block2("full/", src_full, shape_full, k)
        pt, pf = shape_full[0], shape_full[1]
        pws = [s[1] for s in band_shapes]
        if sum(pws) != pf:
            raise ValueError(
                f"pooled band widths {pws} sum to {sum(pws)} but the full-band "
                f"tower pools to {pf} bins, so the channel join is ill-formed; "
                "choose a partition whose pooled widths sum to the full width "
                "(even band widths always work)"
            )
        cf = ll.add(name="concat_feature", kind="concat", axis="feature",
                    in_shape=band_shapes[0], out_shape=(pt, pf, k),
                    inputs=tuple(band_srcs))
        cc = ll.add(name="concat_channel", kind="concat", axis="channel",
                    in_shape=(pt, pf, k), out_shape=(pt, pf, 2 * k),
                    inputs=(cf, src_full))
        ll.head(cc, (pt, pf, 2 * k), num_classes)

    return ModelSpec(
        arch=arch, k=k, dropout=float(dropout), layout=layout,
        concat_variant=concat_variant, input_shape=(t_in, f_in),
        num_classes=num_classes, layers=tuple(ll.layers),
    )


def init_params(spec: ModelSpec, rng: Rng, dtype=np.float32) -> dict[str, np.ndarray]:
    """Truncated-normal weights (stddev 0.01), zero biases, in layer order."""
    params = {}
    shapes = spec.param_shapes()
    for layer in spec.conv_and_dense_layers():
        w_shape = shapes[layer.name + "/w"]
        b_shape = shapes[layer.name + "/b"]
        params[layer.name + "/w"] = tensor.truncated_normal(w_shape, WEIGHT_STDDEV, rng, dtype)
        params[layer.name + "/b"] = np.zeros(b_shape, dtype=dtype)
    return params


def _check_input(spec: ModelSpec, x):
    if x.ndim != 4 or x.shape[1:] != (*spec.input_shape, 1):
        raise ValueError(
            f"expected input (n, {spec.input_shape[0]}, {spec.input_shape[1]}, 1), "
            f"got {x.shape}"
        )


def _conv_p(params, name):
    return nn.ConvParams(params[name + "/w"], params[name + "/b"])


def _block1_fwd(x, params, prefix, rate, train, rng, masks, cache):
    h, conv_cache = nn.conv2d_forward(x, _conv_p(params, prefix + "conv1"), return_cache=True)
    a = nn.relu_forward(h)
    injected = masks.get(prefix + "drop1") if masks else None
    d, mask = nn.dropout_forward(a, rate, rng, train, mask=injected)
    y, pidx = nn.maxpool_forward(d)
    cache[prefix + "b1"] = (x, conv_cache, h, mask, pidx)
    return y


def _block1_bwd(grad_y, params, prefix, rate, cache, grads, need_grad_x):
    x, conv_cache, h, mask, pidx = cache[prefix + "b1"]
    g = nn.maxpool_backward(pidx, grad_y)
    g = nn.dropout_backward(mask, rate, g)
    g = nn.relu_backward(h, g)
    gx, gw, gb = nn.conv2d_backward(
        x, _conv_p(params, prefix + "conv1"), g, cache=conv_cache,
        need_grad_x=need_grad_x,
    )
    grads[prefix + "conv1/w"] = gw
    grads[prefix + "conv1/b"] = gb
    return gx


def _block2_fwd(x, params, prefix, rate, train, rng, masks, cache):
    h, conv_cache = nn.conv2d_forward(x, _conv_p(params, prefix + "conv2"), return_cache=True)
    a = nn.relu_forward(h)
    injected = masks.get(prefix + "drop2") if masks else None
    d, mask = nn.dropout_forward(a, rate, rng, train, mask=injected)
    cache[prefix + "b2"] = (x, conv_cache, h, mask)
    return d


def _block2_bwd(grad_y, params, prefix, rate, cache, grads, need_grad_x=True):
    x, conv_cache, h, mask = cache[prefix + "b2"]
    g = nn.dropout_backward(mask, rate, grad_y)
    g = nn.relu_backward(h, g)
    gx, gw, gb = nn.conv2d_backward(
        x, _conv_p(params, prefix + "conv2"), g, cache=conv_cache,
        need_grad_x=need_grad_x,
    )
    grads[prefix + "conv2/w"] = gw
    grads[prefix + "conv2/b"] = gb
    return gx


def _forward_cached(spec, params, x, train, rng, masks):
    _check_input(spec, x)
    rate = spec.dropout if train else 0.0
    cache = {"rate": rate}
    n = x.shape[0]

    if spec.arch == FULL_BAND:
        t1 = _block1_fwd(x, params, "", rate, train, rng, masks, cache)
        u = _block2_fwd(t1, params, "", rate, train, rng, masks, cache)
        flat = u.reshape(n, -1)
        cache["pre_flat_shape"] = u.shape

    elif spec.arch == OVERLAPPED_SUBBAND:
        towers = []
        for i, (lo, hi) in enumerate(spec.layout.bands):
            xb = tensor.slice_feature(x, lo, hi)
            towers.append(_block1_fwd(xb, params, f"band{i}/", rate, train, rng, masks, cache))
        if spec.concat_variant == CONCAT_C_CONV1:
            c = tensor.concat(towers, "channel")
            u = _block2_fwd(c, params, "", rate, train, rng, masks, cache)
            flat = u.reshape(n, -1)
            cache["pre_flat_shape"] = u.shape
        elif spec.concat_variant == CONCAT_F_CONV1:
            c = tensor.concat(towers, "feature")
            cache["tower_widths"] = [t.shape[2] for t in towers]
            u = _block2_fwd(c, params, "", rate, train, rng, masks, cache)
            flat = u.reshape(n, -1)
            cache["pre_flat_shape"] = u.shape
        else:  # CONCAT_CONV2
            pieces = []
            shapes = []
            for i, t in enumerate(towers):
                ub = _block2_fwd(t, params, f"band{i}/", rate, train, rng, masks, cache)
                shapes.append(ub.shape)
                pieces.append(ub.reshape(n, -1))
            cache["tower_shapes"] = shapes
            flat = np.concatenate(pieces, axis=1)

    else:  # FULL_PLUS_NONOVERLAP
        band_outs = []
        for i, (lo, hi) in enumerate(spec.layout.bands):
            xb = tensor.slice_feature(x, lo, hi)
            tb = _block1_fwd(xb, params, f"band{i}/", rate, train, rng, masks, cache)
            band_outs.append(_block2_fwd(tb, params, f"band{i}/", rate, train, rng, masks, cache))
        tf_ = _block1_fwd(x, params, "full/", rate, train, rng, masks, cache)
        uf = _block2_fwd(tf_, params, "full/", rate, train, rng, masks, cache)
        cf = tensor.concat(band_outs, "feature")
        cc = tensor.concat([cf, uf], "channel")
        cache["band_widths"] = [b.shape[2] for b in band_outs]
        flat = cc.reshape(n, -1)
        cache["pre_flat_shape"] = cc.shape

    dense_p = nn.DenseParams(params["dense/w"], params["dense/b"])
    logits = nn.dense_forward(flat, dense_p)
    cache["flat"] = flat
    return logits, cache


def forward(spec, params, x, train: bool = False, rng: Rng | None = None, *, dropout_masks=None):
    """Run the model; eval mode (the default) is deterministic."""
    logits, _ = _forward_cached(spec, params, x, train, rng, dropout_masks)
    return logits


def loss_and_grads(spec, params, x, labels, train: bool = False,
                   rng: Rng | None = None, *, dropout_masks=None):
    """Mean cross-entropy over the batch and exact gradients for every param."""
    logits, cache = _forward_cached(spec, params, x, train, rng, dropout_masks)
    loss, grad_logits = nn.softmax_cross_entropy(logits, labels)
    rate = cache["rate"]
    grads = {}

    dense_p = nn.DenseParams(params["dense/w"], params["dense/b"])
    grad_flat, gw, gb = nn.dense_backward(cache["flat"], dense_p, grad_logits)
    grads["dense/w"] = gw
    grads["dense/b"] = gb

    if spec.arch == FULL_BAND:
        gu = grad_flat.reshape(cache["pre_flat_shape"])
        gt1 = _block2_bwd(gu, params, "", rate, cache, grads)
        _block1_bwd(gt1, params, "", rate, cache, grads, need_grad_x=False)

    elif spec.arch == OVERLAPPED_SUBBAND:
        B = spec.layout.num_bands
        if spec.concat_variant == CONCAT_C_CONV1:
            gu = grad_flat.reshape(cache["pre_flat_shape"])
            gc = _block2_bwd(gu, params, "", rate, cache, grads)
            for i, gt in enumerate(np.split(gc, B, axis=3)):
                _block1_bwd(gt, params, f"band{i}/", rate, cache, grads, need_grad_x=False)
        elif spec.concat_variant == CONCAT_F_CONV1:
            gu = grad_flat.reshape(cache["pre_flat_shape"])
            gc = _block2_bwd(gu, params, "", rate, cache, grads)
            offsets = np.cumsum(cache["tower_widths"])[:-1]
            for i, gt in enumerate(np.split(gc, offsets, axis=2)):
                _block1_bwd(gt, params, f"band{i}/", rate, cache, grads, need_grad_x=False)
        else:  # CONCAT_CONV2
            sizes = [int(np.prod(s[1:])) for s in cache["tower_shapes"]]
            offsets = np.cumsum(sizes)[:-1]
            for i, gpiece in enumerate(np.split(grad_flat, offsets, axis=1)):
                gu = gpiece.reshape(cache["tower_shapes"][i])
                gt = _block2_bwd(gu, params, f"band{i}/", rate, cache, grads)
                _block1_bwd(gt, params, f"band{i}/", rate, cache, grads, need_grad_x=False)

    else:  # FULL_PLUS_NONOVERLAP
        gcc = grad_flat.reshape(cache["pre_flat_shape"])
        gcf = gcc[..., : spec.k]
        guf = gcc[..., spec.k :]
        gtf = _block2_bwd(guf, params, "full/", rate, cache, grads)
        _block1_bwd(gtf, params, "full/", rate, cache, grads, need_grad_x=False)
        offsets = np.cumsum(cache["band_widths"])[:-1]
        for i, gub in enumerate(np.split(gcf, offsets, axis=2)):
            gtb = _block2_bwd(np.ascontiguousarray(gub), params, f"band{i}/", rate, cache, grads)
            _block1_bwd(gtb, params, f"band{i}/", rate, cache, grads, need_grad_x=False)

    return loss, grads


def band_tower_outputs(spec, params, x, train: bool = False, rng: Rng | None = None):
    """Per-band first-stage outputs (the tensors feeding the join)."""
    if spec.arch != OVERLAPPED_SUBBAND:
        raise ValueError("band towers exist only in the overlapped_subband arch")
    _check_input(spec, x)
    rate = spec.dropout if train else 0.0
    cache = {}
    outs = []
    for i, (lo, hi) in enumerate(spec.layout.bands):
        xb = tensor.slice_feature(x, lo, hi)
        outs.append(_block1_fwd(xb, params, f"band{i}/", rate, train, rng, None, cache))
    return outs


def collect_dropout_masks(spec, params, x, rng: Rng) -> dict[str, np.ndarray]:
    """Sample one train-mode dropout mask per layer, keyed by layer name."""
    _, cache = _forward_cached(spec, params, x, True, rng, None)
    masks = {}
    for key, entry in cache.items():
        if key.endswith("b1"):
            masks[key[:-2] + "drop1"] = entry[3]
        elif key.endswith("b2"):
            masks[key[:-2] + "drop2"] = entry[3]
    return masks


def gradient_check(spec, params, x, label, epsilon: float = 1e-5,
                   train_dropout: bool = False, rng: Rng | None = None) -> float:
    """Finite-difference check of the full model in float64.

    With ``train_dropout`` a mask set is sampled once and frozen across every
    finite-difference evaluation, so the checked map stays differentiable.
    """
    params64 = {k: v.astype(np.float64) for k, v in params.items()}
    x64 = x.astype(np.float64)
    masks = None
    train = False
    if train_dropout:
        if rng is None:
            raise ValueError("train_dropout gradient check requires an rng")
        masks = {k: v.astype(np.float64)
                 for k, v in collect_dropout_masks(spec, params64, x64, rng).items()}
        train = True

    def closure(p):
        return loss_and_grads(spec, p, x64, label, train=train, dropout_masks=masks)

    return nn.gradient_check(closure, params64, epsilon)


def _merged_extent(intervals) -> int:
    merged = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return sum(e - s for s, e in merged)


def _dilate(intervals, amount):
    return tuple((s, e + amount) for s, e in intervals)


def receptive_field(spec: ModelSpec, layer_name: str) -> ReceptiveField:
    """Input bins influencing one point of the named feature map.

    Channel concatenation unions the contributing bands' windows (mapped back
    to absolute input bins); feature-axis and flatten joins report the widest
    contributing band, since each output point there sees a single band.
    """
    t_in, f_in = spec.input_shape
    # state: (time intervals, feature intervals, time jump, feature jump)
    states = {"input": (((0, 1),), ((0, 1),), 1, 1)}
    for layer in spec.layers:
        srcs = [states[s] for s in layer.inputs]
        if layer.kind == "slice":
            ts, fs, jt, jf = srcs[0]
            lo = layer.band[0]
            fs = tuple((s + lo * jf, e + lo * jf) for s, e in fs)
            states[layer.name] = (ts, fs, jt, jf)
        elif layer.kind in ("conv", "maxpool"):
            ts, fs, jt, jf = srcs[0]
            kt, kf = layer.kernel
            st, sf = layer.stride
            ts = _dilate(ts, (kt - 1) * jt)
            fs = _dilate(fs, (kf - 1) * jf)
            states[layer.name] = (ts, fs, jt * st, jf * sf)
        elif layer.kind in ("relu", "dropout"):
            states[layer.name] = srcs[0]
        elif layer.kind == "concat":
            jt, jf = srcs[0][2], srcs[0][3]
            if layer.axis == "channel":
                ts = srcs[0][0]
                fs = tuple(iv for s in srcs for iv in s[1])
            else:  # feature or flatten: one band per output point
                widest = max(srcs, key=lambda s: _merged_extent(s[1]))
                ts, fs = widest[0], widest[1]
            states[layer.name] = (ts, fs, jt, jf)
        elif layer.kind in ("flatten", "dense"):
            states[layer.name] = (((0, t_in),), ((0, f_in),), 1, 1)
        else:
            raise AssertionError(f"unhandled layer kind {layer.kind}")

    name = layer_name
    if name not in states and "/" not in name and f"band0/{name}" in states:
        name = f"band0/{name}"
    if name not in states:
        raise ValueError(f"unknown layer {layer_name!r} for this model")
    ts, fs, _, _ = states[name]
    return ReceptiveField(time=_merged_extent(ts), feature=_merged_extent(fs))


def spec_to_json(spec: ModelSpec) -> str:
    """Serialize a ModelSpec to a versioned, human-readable JSON document."""
    doc = {
        "schema": SPEC_SCHEMA,
        "arch": spec.arch,
        "k": spec.k,
        "dropout": spec.dropout,
        "concat_variant": spec.concat_variant,
        "input_shape": list(spec.input_shape),
        "num_classes": spec.num_classes,
        "layout": None if spec.layout is None else {
            "feature_dim": spec.layout.feature_dim,
            "bands": [list(b) for b in spec.layout.bands],
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def spec_from_json(text: str) -> ModelSpec:
    doc = json.loads(text)
    if doc.get("schema") != SPEC_SCHEMA:
        raise ValueError(
            f"unsupported model spec schema {doc.get('schema')!r}, "
            f"expected {SPEC_SCHEMA!r}"
        )
    layout = None
    if doc["layout"] is not None:
        layout = BandLayout(
            bands=tuple(tuple(b) for b in doc["layout"]["bands"]),
            feature_dim=doc["layout"]["feature_dim"],
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_model(
            arch=doc["arch"], k=doc["k"], dropout=doc["dropout"], layout=layout,
            concat_variant=doc["concat_variant"],
            input_shape=tuple(doc["input_shape"]), num_classes=doc["num_classes"],
        )
