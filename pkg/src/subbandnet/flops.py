"""Per-layer FLOPS, multiplication, and parameter counts for a ModelSpec.

Convention (documented, bit-exact, pure integer arithmetic):

* conv: one multiply-add per kernel tap counts as 2 FLOPS, plus one add per
  output for the bias; SAME padding charges the full kernel volume at every
  output position.
* dense: 2 * in * out plus one add per output for the bias.
* maxpool: window_size - 1 comparisons per output, no multiplications.
* ReLU: one operation per element, no multiplications.
* dropout, concat, slice, flatten: free at inference.

Counts are for a single inference (batch 1). Absolute numbers from other
profilers will differ by their own conventions; ratios and trends between
architectures are the intended comparison.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from math import prod

from .subband import ModelSpec

CSV_SCHEMA = "subbandnet.flops.v1"


@dataclass(frozen=True)
class LayerCost:
    name: str
    flops: int
    multiplications: int
    parameters: int


@dataclass(frozen=True)
class FlopsReport:
    input_shape: tuple[int, int, int, int]
    per_layer: tuple[LayerCost, ...]

    @property
    def total_flops(self) -> int:
        return sum(c.flops for c in self.per_layer)

    @property
    def total_multiplications(self) -> int:
        return sum(c.multiplications for c in self.per_layer)

    @property
    def total_parameters(self) -> int:
        return sum(c.parameters for c in self.per_layer)

    def layer(self, name: str) -> LayerCost:
        for c in self.per_layer:
            if c.name == name:
                return c
        raise KeyError(f"no layer named {name!r} in report")

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# schema: {CSV_SCHEMA}\n")
        out.write("layer,name,flops,mult,params\n")
        for i, c in enumerate(self.per_layer):
            out.write(f"{i},{c.name},{c.flops},{c.multiplications},{c.parameters}\n")
        out.write(
            f"total,,{self.total_flops},{self.total_multiplications},"
            f"{self.total_parameters}\n"
        )
        return out.getvalue()

    def __str__(self) -> str:
        width = max(len(c.name) for c in self.per_layer)
        lines = [f"input shape: {self.input_shape}"]
        lines.append(f"{'layer':<{width}}  {'flops':>12}  {'mult':>12}  {'params':>10}")
        for c in self.per_layer:
            lines.append(
                f"{c.name:<{width}}  {c.flops:>12}  {c.multiplications:>12}  "
                f"{c.parameters:>10}"
            )
        lines.append(
            f"{'total':<{width}}  {self.total_flops:>12}  "
            f"{self.total_multiplications:>12}  {self.total_parameters:>10}"
        )
        return "\n".join(lines)


def _layer_cost(layer) -> LayerCost:
    kind = layer.kind
    if kind == "conv":
        kt, kf = layer.kernel
        in_c = layer.in_shape[2]
        t, f, c = layer.out_shape
        outputs = t * f * c
        mult = outputs * kt * kf * in_c
        flops = 2 * mult + outputs
        params = kt * kf * in_c * c + c
        return LayerCost(layer.name, flops, mult, params)
    if kind == "dense":
        n_in, n_out = layer.in_shape[0], layer.out_shape[0]
        mult = n_in * n_out
        return LayerCost(layer.name, 2 * mult + n_out, mult, mult + n_out)
    if kind == "maxpool":
        window = layer.kernel[0] * layer.kernel[1]
        return LayerCost(layer.name, prod(layer.out_shape) * (window - 1), 0, 0)
    if kind == "relu":
        return LayerCost(layer.name, prod(layer.out_shape), 0, 0)
    if kind in ("dropout", "concat", "slice", "flatten"):
        return LayerCost(layer.name, 0, 0, 0)
    raise AssertionError(f"unhandled layer kind {kind}")


def count_flops(spec: ModelSpec, input_shape=None) -> FlopsReport:
    """Count single-inference FLOPS/multiplications/parameters per layer."""
    expected = (1, *spec.input_shape, 1)
    if input_shape is None:
        input_shape = expected
    if tuple(input_shape) != expected:
        raise ValueError(
            f"report input shape {tuple(input_shape)} does not match the model "
            f"input {expected} (batch size 1)"
        )
    return FlopsReport(
        input_shape=expected,
        per_layer=tuple(_layer_cost(l) for l in spec.layers),
    )


def multiplications_total(spec: ModelSpec, input_shape=None) -> int:
    return count_flops(spec, input_shape).total_multiplications


def flops_reduction(spec_a: ModelSpec, spec_b: ModelSpec, input_shape=None) -> float:
    """Percentage FLOPS reduction going from model a to model b.

    Positive when b is cheaper; negative when b costs more.
    """
    if spec_a.input_shape != spec_b.input_shape:
        raise ValueError(
            f"models take different inputs: {spec_a.input_shape} vs "
            f"{spec_b.input_shape}"
        )
    a = count_flops(spec_a, input_shape).total_flops
    b = count_flops(spec_b, input_shape).total_flops
    if a == 0:
        raise ValueError("baseline model reports zero FLOPS")
    return 100.0 * (1.0 - b / a)
