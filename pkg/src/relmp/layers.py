"""Relational message-passing layers and the surrounding block machinery.

Two layers share the aggregation substrate:

* `rgconv_forward`: per-relation dense transforms. Each node's relation slots
  (mean-pooled neighbor features) are concatenated and pushed through a single
  stacked [R*C, C] matrix, then added to the self transform. Cost grows with
  R*C^2: every extra relation buys a full matrix.

* `grmp_forward`: one shared input transform, per-relation channel weights
  (a Hadamard with a learned [R*C] vector), learned per-node relation scores
  (no normalization across relations), one shared output transform, and a
  multiplicative gate against the self transform. Cost grows with R*C: every
  extra relation buys a vector.

The forward paths are staged exactly as the cost model's step decomposition so
an OpCounter wrapped around a call reproduces the closed-form totals digit for
digit. Two bookkeeping rules make that work: bias additions run inside
`counting_paused()` (the analytic counts exclude biases), and broadcasts are
materialized by the tile ops, which charge 1 FLOP per output element just as
the formulas assume.

Parameters are plain dataclasses of Tensors. Weight matrices right-multiply
row-vector features: a math-convention map W acting on column vectors appears
here as its transpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .graph import RelGraph, rel_aggregate
from .tensor import (Tensor, add, add_scalar, concat_cols, counting_paused,
                     depthwise_conv2d, div, gather_rows, gelu, hadamard, matmul,
                     mean_cols, mean_rows, mul_scalar, reshape, slice_cols, sqrt,
                     sub, tile_cols, tile_rows)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draws with resampling outside two standard deviations."""
    vals = rng.normal(0.0, std, size=shape)
    bad = np.abs(vals) > 2 * std
    while bad.any():
        vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(vals) > 2 * std
    return vals


def _param(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _named(obj, names) -> dict[str, Tensor]:
    out = {}
    for n in names:
        t = getattr(obj, n)
        if t is not None:
            out[n] = t
    return out


# -- relational convolution ------------------------------------------------------


@dataclass
class RGConvParams:
    """Per-relation matrices stacked as [R*C, C] plus the self transform.

    `w_stack` rows r*C..(r+1)*C hold relation r's matrix. Each relation matrix
    carries a bias (applied once per node after the stacked transform, which is
    equivalent to applying it inside the mean since the weights sum to one),
    and the self transform carries its own.
    """
    num_relations: int
    channels: int
    w_stack: Tensor
    b_stack: Tensor   # [R, C], row r is relation r's bias
    w_self: Tensor
    b_self: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, num_relations: int, channels: int,
             std: float = 0.02, dtype=None) -> "RGConvParams":
        if num_relations < 0 or channels < 1:
            raise ConfigError("bad relation or channel count")
        return cls(
            num_relations=num_relations,
            channels=channels,
            w_stack=_param(trunc_normal(rng, (num_relations * channels, channels), std), dtype),
            b_stack=_param(np.zeros((num_relations, channels)), dtype),
            w_self=_param(trunc_normal(rng, (channels, channels), std), dtype),
            b_self=_param(np.zeros(channels), dtype),
        )

    def tensors(self) -> dict[str, Tensor]:
        return _named(self, ("w_stack", "b_stack", "w_self", "b_self"))

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors().values())


def rgconv_forward(graph: RelGraph, z: Tensor, params: RGConvParams) -> Tensor:
    """Relational convolution over mean-pooled neighborhoods.

    z is [V, C]; the result is [V, C]. An empty graph degenerates to the self
    transform plus biases.
    """
    v_count, c = _check_features(graph, z, params.channels)
    r_count = graph.num_relations
    if r_count != params.num_relations:
        raise ShapeError("relation count of graph and parameters differ")
    # step 1: mean-pooled slots, node-major [V*R, C]
    slots = rel_aggregate(graph, z)
    # step 2: concatenate each node's slots and apply the stacked transform
    aggregated = None
    if r_count > 0:
        wide = reshape(slots, (v_count, r_count * c))
        aggregated = matmul(wide, params.w_stack)
    # step 3: self transform plus aggregation
    out = matmul(z, params.w_self)
    if aggregated is not None:
        out = add(out, aggregated)
    with counting_paused():
        out = add(out, params.b_self)
        if r_count > 0:
            # the per-relation biases enter once per node: sum of b_stack rows
            total = mul_scalar(mean_rows(params.b_stack), float(r_count))
            out = add(out, total)
    return out


# -- gated message passing ----------------------------------------------------------


@dataclass
class GRMPVariant:
    """Structural switches for the gated layer.

    gating: "multiplicative" (default) or "additive" self update.
    alpha: "learned" per-node relation scores or "uniform" (constant 1/R).
    use_w_in / use_w_out: drop the shared input/output transforms entirely
    (their parameters are not allocated, so parameter counts shift by C^2+C).
    """
    gating: str = "multiplicative"
    alpha: str = "learned"
    use_w_in: bool = True
    use_w_out: bool = True

    def validate(self):
        if self.gating not in ("multiplicative", "additive"):
            raise ConfigError(f"unknown gating mode {self.gating!r}")
        if self.alpha not in ("learned", "uniform"):
            raise ConfigError(f"unknown alpha mode {self.alpha!r}")


@dataclass
class GRMPParams:
    """Gated-layer parameters.

    w_channel is the concatenated per-relation channel-weight vector [1, R*C]
    (relation r occupies columns r*C..(r+1)*C); it carries no bias. w_alpha
    maps node features to R unnormalized relation scores. Only w_in, w_out and
    w_alpha carry biases; the self transform has none.
    """
    num_relations: int
    channels: int
    w_self: Tensor
    w_channel: Tensor
    w_in: Tensor | None = None
    b_in: Tensor | None = None
    w_out: Tensor | None = None
    b_out: Tensor | None = None
    w_alpha: Tensor | None = None
    b_alpha: Tensor | None = None
    variant: GRMPVariant = field(default_factory=GRMPVariant)

    @classmethod
    def init(cls, rng: np.random.Generator, num_relations: int, channels: int,
             std: float = 0.02, dtype=None,
             variant: GRMPVariant | None = None) -> "GRMPParams":
        if num_relations < 1:
            raise ContractError("gated layer requires at least one relation")
        if channels < 1:
            raise ConfigError("bad channel count")
        variant = variant or GRMPVariant()
        variant.validate()
        p = cls(
            num_relations=num_relations,
            channels=channels,
            w_self=_param(trunc_normal(rng, (channels, channels), std), dtype),
            w_channel=_param(np.ones((1, num_relations * channels)), dtype),
            variant=variant,
        )
        if variant.use_w_in:
            p.w_in = _param(trunc_normal(rng, (channels, channels), std), dtype)
            p.b_in = _param(np.zeros(channels), dtype)
        if variant.use_w_out:
            p.w_out = _param(trunc_normal(rng, (channels, channels), std), dtype)
            p.b_out = _param(np.zeros(channels), dtype)
        if variant.alpha == "learned":
            p.w_alpha = _param(trunc_normal(rng, (channels, num_relations), std), dtype)
            p.b_alpha = _param(np.zeros(num_relations), dtype)
        return p

    def tensors(self) -> dict[str, Tensor]:
        return _named(self, ("w_self", "w_channel", "w_in", "b_in",
                             "w_out", "b_out", "w_alpha", "b_alpha"))

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors().values())


def _check_features(graph: RelGraph, z: Tensor, channels: int):
    if z.data.ndim != 2:
        raise ShapeError("layer input must be [num_nodes, C]")
    if z.shape[0] != graph.num_nodes:
        raise ShapeError(f"feature rows {z.shape[0]} != num_nodes {graph.num_nodes}")
    if z.shape[1] != channels:
        raise ShapeError(f"feature width {z.shape[1]} != channels {channels}")
    return z.shape


def grmp_forward(graph: RelGraph, z: Tensor, params: GRMPParams) -> Tensor:
    """Gated relational message passing.

    Five stages: shared input transform, mean aggregation with per-relation
    channel weights, per-node relation weighting (scores are unnormalized),
    shared output transform, multiplicative (or additive) self update.
    An isolated node's aggregated message is exactly the output bias.
    """
    v_count, c = _check_features(graph, z, params.channels)
    r_count = graph.num_relations
    if r_count != params.num_relations:
        raise ShapeError("relation count of graph and parameters differ")
    if r_count < 1:
        raise ContractError("gated layer requires at least one relation")
    variant = params.variant

    # step 1: shared input transform
    if variant.use_w_in:
        z_in = matmul(z, params.w_in)
        with counting_paused():
            z_in = add(z_in, params.b_in)
    else:
        z_in = z

    # step 2: mean aggregation, then per-relation channel weights on the
    # node-major wide layout [V, R*C]
    slots = rel_aggregate(graph, z_in)
    wide = reshape(slots, (v_count, r_count * c))
    weights = tile_rows(params.w_channel, v_count)
    weighted = hadamard(wide, weights)

    # step 3: relation scores weight each slot; slots are then summed
    if variant.alpha == "learned":
        scores = matmul(z, params.w_alpha)
        with counting_paused():
            scores = add(scores, params.b_alpha)
        acc = None
        for r in range(r_count):
            slot_r = slice_cols(weighted, r * c, (r + 1) * c)
            score_col = slice_cols(scores, r, r + 1)
            term = hadamard(slot_r, tile_cols(score_col, c))
            acc = term if acc is None else add(acc, term)
    else:
        acc = None
        for r in range(r_count):
            slot_r = slice_cols(weighted, r * c, (r + 1) * c)
            acc = slot_r if acc is None else add(acc, slot_r)
        acc = mul_scalar(acc, 1.0 / r_count)

    # step 4: shared output transform
    if variant.use_w_out:
        aggregated = matmul(acc, params.w_out)
        with counting_paused():
            aggregated = add(aggregated, params.b_out)
    else:
        aggregated = acc

    # step 5: self transform and gate
    self_part = matmul(z, params.w_self)
    if variant.gating == "multiplicative":
        return hadamard(self_part, aggregated)
    return add(self_part, aggregated)


# -- layer normalization --------------------------------------------------------------


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, channels: int, dtype=None) -> "LayerNormParams":
        return cls(gamma=_param(np.ones(channels), dtype),
                   beta=_param(np.zeros(channels), dtype))

    def tensors(self) -> dict[str, Tensor]:
        return _named(self, ("gamma", "beta"))

    def param_count(self) -> int:
        return self.gamma.size + self.beta.size


def layer_norm(x: Tensor, params: LayerNormParams, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the channel axis with learned scale/shift."""
    if x.data.ndim != 2:
        raise ShapeError("layer_norm expects [rows, C]")
    c = x.shape[1]
    mu = mean_cols(x)
    centered = sub(x, tile_cols(mu, c))
    var = mean_cols(hadamard(centered, centered))
    std = sqrt(add_scalar(var, eps))
    normed = div(centered, tile_cols(std, c))
    out = hadamard(normed, params.gamma)
    with counting_paused():
        out = add(out, params.beta)
    return out


# -- feed-forward block -----------------------------------------------------------------


@dataclass
class FFNParams:
    """Two-layer feed-forward with expansion factor gamma and GELU between."""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, expansion: int = 4,
             std: float = 0.02, dtype=None) -> "FFNParams":
        if expansion < 1:
            raise ConfigError("expansion factor must be positive")
        hidden = channels * expansion
        return cls(
            w1=_param(trunc_normal(rng, (channels, hidden), std), dtype),
            b1=_param(np.zeros(hidden), dtype),
            w2=_param(trunc_normal(rng, (hidden, channels), std), dtype),
            b2=_param(np.zeros(channels), dtype),
        )

    def tensors(self) -> dict[str, Tensor]:
        return _named(self, ("w1", "b1", "w2", "b2"))

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors().values())


def ffn_forward(x: Tensor, params: FFNParams) -> Tensor:
    h = matmul(x, params.w1)
    with counting_paused():
        h = add(h, params.b1)
    h = gelu(h)
    out = matmul(h, params.w2)
    with counting_paused():
        out = add(out, params.b2)
    return out


# -- virtual-node features ------------------------------------------------------------


def global_virtual_feature(z: Tensor) -> Tensor:
    """Whole-graph summary node: the column mean of all rows, shape [1, C]."""
    return mean_rows(z)


@dataclass
class ContextStackParams:
    """Depthwise kernels applied in sequence with GELU after each.

    The default is three 3x3 kernels, an accumulative receptive field of 7.
    The composition (kernel count and sizes) is deliberately configurable:
    the reference description fixes only the receptive field, not the split.
    """
    kernels: list[Tensor]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, sizes=(3, 3, 3),
             std: float = 0.02, dtype=None) -> "ContextStackParams":
        for k in sizes:
            if k % 2 == 0 or k < 1:
                raise ConfigError("kernel sizes must be odd and positive")
        return cls(kernels=[_param(trunc_normal(rng, (k, k, channels), std), dtype)
                            for k in sizes])

    def tensors(self) -> dict[str, Tensor]:
        return {f"kernel{i}": k for i, k in enumerate(self.kernels)}

    def param_count(self) -> int:
        return sum(t.size for t in self.kernels)

    def receptive_field(self) -> int:
        return 1 + sum(k.shape[0] - 1 for k in self.kernels)


def context_stack_features(z: Tensor, height: int, width: int,
                           params: ContextStackParams) -> Tensor:
    """Per-node context summaries from stacked depthwise convolutions.

    z is [H*W, C] in row-major grid order; the result is [H*W, C], where row i
    summarizes the neighborhood of grid cell i.
    """
    if z.data.ndim != 2 or z.shape[0] != height * width:
        raise ShapeError("context stack input must be [H*W, C] matching the grid")
    c = z.shape[1]
    x = reshape(z, (height, width, c))
    for kern in params.kernels:
        x = depthwise_conv2d(x, kern)
        x = gelu(x)
    return reshape(x, (height * width, c))


# -- patch merging ---------------------------------------------------------------------


@dataclass
class PatchMergeParams:
    """2x2 window concat (4C) -> normalization -> linear to 2C, no bias."""
    norm: LayerNormParams | None
    w_reduce: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, std: float = 0.02,
             dtype=None, use_norm: bool = True) -> "PatchMergeParams":
        return cls(
            norm=LayerNormParams.init(4 * channels, dtype) if use_norm else None,
            w_reduce=_param(trunc_normal(rng, (4 * channels, 2 * channels), std), dtype),
        )

    def tensors(self) -> dict[str, Tensor]:
        out = {"w_reduce": self.w_reduce}
        if self.norm is not None:
            out.update({f"norm.{k}": v for k, v in self.norm.tensors().items()})
        return out

    def param_count(self) -> int:
        n = self.w_reduce.size
        if self.norm is not None:
            n += self.norm.param_count()
        return n


def patch_merging(z: Tensor, height: int, width: int,
                  params: PatchMergeParams) -> Tensor:
    """Halve each grid side by fusing 2x2 windows.

    z is [H*W, C] with H, W even; output is [(H/2)*(W/2), 2C]. Window features
    are concatenated in order top-left, top-right, bottom-left, bottom-right.
    """
    if height % 2 or width % 2:
        raise ShapeError("patch merging requires even grid sides")
    if z.data.ndim != 2 or z.shape[0] != height * width:
        raise ShapeError("patch merging input must be [H*W, C] matching the grid")
    rows = np.arange(height).reshape(-1, 1)
    cols = np.arange(width).reshape(1, -1)
    grid = rows * width + cols
    tl = grid[0::2, 0::2].reshape(-1)
    tr = grid[0::2, 1::2].reshape(-1)
    bl = grid[1::2, 0::2].reshape(-1)
    br = grid[1::2, 1::2].reshape(-1)
    gathered = concat_cols([gather_rows(z, tl), gather_rows(z, tr),
                            gather_rows(z, bl), gather_rows(z, br)])
    if params.norm is not None:
        gathered = layer_norm(gathered, params.norm)
    return matmul(gathered, params.w_reduce)
