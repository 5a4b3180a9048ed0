"""Set-aggregation operators: learned attention pooling and its baselines.

Every aggregator maps a stack of N per-element feature vectors to one
fixed-size output. The attention variants score each feature slot with a
linear map, normalize the scores over the set axis with a softmax, and sum
the score-weighted features:

    activations = X W            one activation per feature slot
    scores      = softmax over the set axis, independently per slot
    output      = sum_n  X[n] * scores[n]

Three attention layouts are provided: ``attsets_fc`` (one D x D map on
vector sets), ``attsets_conv`` (a pointwise C x C map shared across the
spatial locations of an [N, S, C] set -- the filter-size-1 convolutional
form, covering both 2D and 3D feature maps since locations are flattened),
and ``attsets_elem`` (a single scalar score per set element, broadcast over
all of its features). Baselines: max/mean/sum pooling (no parameters) and
a GRU that consumes the set as a sequence, which is deliberately
order-dependent.

All non-GRU aggregators are permutation invariant bit-for-bit: every
reduction over the set axis goes through ``set_sum``/``set_max`` and every
per-element linear map through ``matmul_rows`` (see tensor module notes).

Attention weights initialize to zero, which makes every attention variant
start out exactly equal to mean pooling: the softmax of an all-zero
activation map is uniform, and mean pooling is computed scale-then-sum so
the two paths produce identical bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

__all__ = [
    "FeatureSet",
    "AttentionMap",
    "AggregatorParams",
    "AGGREGATOR_KINDS",
    "ATTENTION_KINDS",
    "POOL_KINDS",
    "aggregator_init",
    "attsets_fc",
    "attsets_conv",
    "attsets_elem",
    "pool",
    "gru_aggregate",
    "aggregate",
]

ATTENTION_KINDS = ("attsets_fc", "attsets_conv", "attsets_elem")
POOL_KINDS = ("max", "mean", "sum")
AGGREGATOR_KINDS = ATTENTION_KINDS + POOL_KINDS + ("gru",)


@dataclass
class FeatureSet:
    """An unordered stack of per-element features: [N, D] or [N, S, C]."""

    data: Tensor

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(np.asarray(self.data, dtype=np.float64))
        if self.data.data.ndim not in (2, 3):
            raise ShapeError(f"feature set must be [N,D] or [N,S,C], got {list(self.data.shape)}")
        if self.n < 1:
            raise ContractError("feature set needs at least one element")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        """Feature width an aggregator's weights must match (D, or C for spatial sets)."""
        return self.data.shape[-1]


@dataclass
class AttentionMap:
    """Per-slot scores with the same shape as the aggregated set."""

    scores: Tensor

    def validate(self, tol: float = 1e-12) -> None:
        s = self.scores.data
        if (s < 0).any():
            raise ContractError("attention scores must be nonnegative")
        col_sums = s.reshape(s.shape[0], -1).sum(axis=0)
        if np.abs(col_sums - 1.0).max() > tol:
            raise ContractError("attention scores must sum to 1 over the set axis")


@dataclass
class AggregatorParams:
    kind: str
    weights: dict[str, Tensor] = field(default_factory=dict)
    use_bias: bool = False


def aggregator_init(kind: str, width: int, seed: int = 0, use_bias: bool = False) -> AggregatorParams:
    """Build parameters for an aggregator of the given feature width.

    Attention weights start at zero (exactly mean pooling); GRU gate
    matrices are uniform in (-0.1, 0.1), deterministic per seed; poolings
    are parameterless.
    """
    if kind not in AGGREGATOR_KINDS:
        raise ContractError(f"unknown aggregator kind {kind!r}")
    if width < 1:
        raise ContractError("width must be >= 1")
    weights: dict[str, Tensor] = {}
    if kind in ("attsets_fc", "attsets_conv"):
        weights["W"] = T.tensor_new([width, width], "zeros", requires_grad=True)
        if use_bias:
            weights["b"] = T.tensor_new([1, width], "zeros", requires_grad=True)
    elif kind == "attsets_elem":
        weights["w"] = T.tensor_new([width, 1], "zeros", requires_grad=True)
        if use_bias:
            weights["b"] = T.tensor_new([1, 1], "zeros", requires_grad=True)
    elif kind == "gru":
        rng = np.random.default_rng(seed)
        for name in ("Wz", "Uz", "Wr", "Ur", "Wh", "Uh"):
            weights[name] = Tensor(rng.uniform(-0.1, 0.1, size=(width, width)), requires_grad=True)
        for name in ("bz", "br", "bh"):
            weights[name] = T.tensor_new([1, width], "zeros", requires_grad=True)
    return AggregatorParams(kind=kind, weights=weights, use_bias=use_bias)


def _require_kind(params: AggregatorParams, kind: str) -> None:
    if params.kind != kind:
        raise ContractError(f"expected params of kind {kind!r}, got {params.kind!r}")


def _check_width(weight: Tensor, width: int) -> None:
    if weight.shape[0] != width:
        raise ShapeError(f"feature width {width} does not match weights {list(weight.shape)}")


def attsets_fc(fset: FeatureSet, params: AggregatorParams) -> tuple[Tensor, AttentionMap]:
    """Feature-wise attention over an [N, D] set; returns ([D], scores)."""
    _require_kind(params, "attsets_fc")
    x = fset.data
    if x.data.ndim != 2:
        raise ShapeError(f"attsets_fc needs an [N,D] set, got {list(x.shape)}")
    w = params.weights["W"]
    _check_width(w, fset.width)
    c = T.matmul_rows(x, w)
    if params.use_bias:
        c = T.add_rowvec(c, params.weights["b"])
    s = T.softmax_set(c)
    y = T.set_sum(T.ew_binary("mul", x, s))
    return y, AttentionMap(s)


def attsets_conv(fset: FeatureSet, params: AggregatorParams) -> tuple[Tensor, AttentionMap]:
    """Pointwise attention over an [N, S, C] spatial set; returns ([S, C], scores).

    Each of the S locations behaves exactly like ``attsets_fc`` on its
    [N, C] slice with the shared C x C map.
    """
    _require_kind(params, "attsets_conv")
    x = fset.data
    if x.data.ndim != 3:
        raise ShapeError(f"attsets_conv needs an [N,S,C] set, got {list(x.shape)}")
    n, s_loc, ch = x.shape
    w = params.weights["W"]
    _check_width(w, ch)
    c = T.matmul_rows(T.reshape(x, [n * s_loc, ch]), w)
    if params.use_bias:
        c = T.add_rowvec(c, params.weights["b"])
    scores = T.softmax_set(T.reshape(c, [n, s_loc * ch]))
    weighted = T.ew_binary("mul", T.reshape(x, [n, s_loc * ch]), scores)
    y = T.reshape(T.set_sum(weighted), [s_loc, ch])
    return y, AttentionMap(T.reshape(scores, [n, s_loc, ch]))


def attsets_elem(fset: FeatureSet, params: AggregatorParams) -> tuple[Tensor, AttentionMap]:
    """Element-wise attention: one scalar score per set element, shared by
    all of that element's features."""
    _require_kind(params, "attsets_elem")
    x = fset.data
    if x.data.ndim != 2:
        raise ShapeError(f"attsets_elem needs an [N,D] set, got {list(x.shape)}")
    w = params.weights["w"]
    _check_width(w, fset.width)
    a = T.matmul_rows(x, w)
    if params.use_bias:
        a = T.add_rowvec(a, params.weights["b"])
    s_col = T.softmax_set(a)
    s = T.repeat_cols(s_col, fset.width)
    y = T.set_sum(T.ew_binary("mul", x, s))
    return y, AttentionMap(s)


def pool(kind: str, fset: FeatureSet) -> Tensor:
    """Parameterless max / mean / sum pooling over the set axis."""
    if kind not in POOL_KINDS:
        raise ContractError(f"unknown pooling kind {kind!r}")
    x = fset.data
    if x.data.ndim != 2:
        raise ShapeError(f"pool needs an [N,D] set, got {list(x.shape)}")
    if kind == "max":
        return T.set_max(x)
    if kind == "sum":
        return T.set_sum(x)
    # scale-then-sum: identical bits to an attention variant at zero weights
    inv_n = Tensor(np.float64(1.0 / fset.n))
    return T.set_sum(T.ew_binary("mul", x, inv_n))


def _tanh(x: Tensor) -> Tensor:
    # tanh(x) = 2 sigmoid(2x) - 1, built from the core primitives
    return T.sigmoid(x * 2.0) * 2.0 - 1.0


def gru_aggregate(fset: FeatureSet, params: AggregatorParams) -> Tensor:
    """Left-to-right recurrence over the set order; order-dependent by design."""
    _require_kind(params, "gru")
    x = fset.data
    if x.data.ndim != 2:
        raise ShapeError(f"gru needs an [N,D] set, got {list(x.shape)}")
    w = params.weights
    _check_width(w["Wz"], fset.width)
    d = fset.width
    h = Tensor(np.zeros((1, d)))
    for i in range(fset.n):
        xi = T.take_row(x, i)
        z = T.sigmoid(T.add_rowvec(T.matmul(xi, w["Wz"]) + T.matmul(h, w["Uz"]), w["bz"]))
        r = T.sigmoid(T.add_rowvec(T.matmul(xi, w["Wr"]) + T.matmul(h, w["Ur"]), w["br"]))
        cand = _tanh(T.add_rowvec(T.matmul(xi, w["Wh"]) + T.matmul(r * h, w["Uh"]), w["bh"]))
        h = (1.0 - z) * h + z * cand
    return T.reshape(h, [d])


def aggregate(fset: FeatureSet, params: AggregatorParams) -> tuple[Tensor, AttentionMap | None]:
    """Dispatch on ``params.kind``; attention map is None for poolings/GRU."""
    kind = params.kind
    if kind == "attsets_fc":
        return attsets_fc(fset, params)
    if kind == "attsets_conv":
        data = fset.data
        if data.data.ndim == 2:
            n, d = data.shape
            fset = FeatureSet(T.reshape(data, [n, 1, d]))
        y, attn = attsets_conv(fset, params)
        return T.reshape(y, [y.size]), attn
    if kind == "attsets_elem":
        return attsets_elem(fset, params)
    if kind in POOL_KINDS:
        return pool(kind, fset), None
    if kind == "gru":
        return gru_aggregate(fset, params), None
    raise ContractError(f"unknown aggregator kind {kind!r}")
