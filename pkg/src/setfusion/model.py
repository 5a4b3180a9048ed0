"""Desk-scale encoder-decoder around a pluggable set aggregator.

Pipeline: each view image runs through a shared two-layer encoder to a
latent vector; the stack of latents is fused by the configured aggregator;
a two-layer decoder maps the fused latent to per-voxel occupancy
probabilities. Deliberately all-affine (no conv stacks): the properties
under test concern the aggregator and the training schedule, and small
affine nets keep every gradient checkable against finite differences.

Trainable tensors are partitioned into two fixed groups: ``base`` holds
the encoder and decoder layers, ``att`` holds the aggregator weights. The
two-stage trainer updates exactly one group per stage, so group membership
never changes after construction.

``predict`` encodes views one at a time (each encode is then bit-identical
wherever the view sits in the input order) and is pure over an immutable
bundle, so reordering input views cannot change the output of any
permutation-invariant aggregator, bit for bit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .aggregators import AttentionMap, FeatureSet, aggregate, aggregator_init
from .errors import ContractError, FormatError, ShapeError
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "ParamBundle",
    "VoxelGrid",
    "model_init",
    "encode_batch",
    "decode_batch",
    "encode_view",
    "decode_voxels",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"SFCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    image_side: int = 16
    latent_dim: int = 128
    encoder_hidden: int = 256
    decoder_hidden: int = 512
    grid_side: int = 16
    aggregator_kind: str = "attsets_fc"
    seed: int = 0
    max_views: int = 24

    def validate(self) -> None:
        for name in ("image_side", "latent_dim", "encoder_hidden", "decoder_hidden",
                     "grid_side", "max_views"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")

    @property
    def voxel_count(self) -> int:
        return self.grid_side ** 3


@dataclass
class VoxelGrid:
    """Per-voxel occupancy probabilities for a G^3 grid, flattened row-major."""

    probs: Tensor
    grid_side: int

    def __post_init__(self):
        if self.probs.size != self.grid_side ** 3:
            raise ShapeError(
                f"{self.probs.size} probabilities cannot fill a {self.grid_side}^3 grid")
        vals = self.probs.data
        if (vals < 0).any() or (vals > 1).any():
            raise ContractError("voxel probabilities must lie in [0, 1]")

    def as_cube(self) -> np.ndarray:
        g = self.grid_side
        return self.probs.data.reshape(g, g, g)


@dataclass
class ParamBundle:
    """Named trainable tensors split into disjoint base and att groups."""

    base: dict[str, Tensor]
    att: dict[str, Tensor]
    cfg: ModelConfig | None = None

    def __post_init__(self):
        overlap = set(self.base) & set(self.att)
        if overlap:
            raise ContractError(f"tensor names in both groups: {sorted(overlap)}")

    def group(self, name: str) -> dict[str, Tensor]:
        if name == "base":
            return self.base
        if name == "att":
            return self.att
        if name == "all":
            return {**self.base, **self.att}
        raise ContractError(f"unknown parameter group {name!r}")

    def named(self, group: str = "all"):
        """Deterministic (name, group_tag, tensor) iteration in sorted name order."""
        tagged = []
        if group in ("base", "all"):
            tagged += [(n, "base", t) for n, t in self.base.items()]
        if group in ("att", "all"):
            tagged += [(n, "att", t) for n, t in self.att.items()]
        if group not in ("base", "att", "all"):
            raise ContractError(f"unknown parameter group {group!r}")
        return sorted(tagged, key=lambda r: r[0])

    def checksum(self, group: str = "all") -> str:
        h = hashlib.sha256()
        for name, tag, t in self.named(group):
            h.update(name.encode())
            h.update(tag.encode())
            h.update(np.asarray(t.shape, dtype="<u4").tobytes())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def zero_grads(self) -> None:
        for _, _, t in self.named("all"):
            t.grad = None


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def model_init(cfg: ModelConfig) -> ParamBundle:
    """Deterministic parameter bundle for the given config and seed."""
    cfg.validate()
    p = cfg.image_side ** 2
    d, he, hd, voxels = cfg.latent_dim, cfg.encoder_hidden, cfg.decoder_hidden, cfg.voxel_count
    layers = [("enc_w1", p, he), ("enc_w2", he, d), ("dec_w1", d, hd), ("dec_w2", hd, voxels)]
    base: dict[str, Tensor] = {}
    for idx, (name, fan_in, fan_out) in enumerate(layers):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, idx]))
        base[name] = Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True)
        base[name.replace("w", "b")] = T.tensor_new([1, fan_out], "zeros", requires_grad=True)
    agg = aggregator_init(cfg.aggregator_kind, d, seed=cfg.seed)
    att = {f"att_{k}": t for k, t in agg.weights.items()}
    return ParamBundle(base=base, att=att, cfg=cfg)


def _agg_params(params: ParamBundle):
    from .aggregators import AggregatorParams

    kind = params.cfg.aggregator_kind
    return AggregatorParams(kind, {k.removeprefix("att_"): t for k, t in params.att.items()})


def encode_batch(images: Tensor, params: ParamBundle) -> Tensor:
    """Shared encoder over a [B, image_side^2] stack of flattened views."""
    h = T.relu(T.add_rowvec(T.matmul(images, params.base["enc_w1"]), params.base["enc_b1"]))
    return T.add_rowvec(T.matmul(h, params.base["enc_w2"]), params.base["enc_b2"])


def decode_batch(latents: Tensor, params: ParamBundle) -> Tensor:
    """Decoder from [B, D] latents to [B, G^3] occupancy probabilities."""
    h = T.relu(T.add_rowvec(T.matmul(latents, params.base["dec_w1"]), params.base["dec_b1"]))
    return T.sigmoid(T.add_rowvec(T.matmul(h, params.base["dec_w2"]), params.base["dec_b2"]))


def _flat_view(image, side: int) -> Tensor:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.size != side * side:
        raise ShapeError(f"view has {arr.size} pixels, expected {side}x{side}")
    return Tensor(arr.reshape(1, side * side))


def encode_view(image, params: ParamBundle) -> Tensor:
    """Latent vector for a single image_side x image_side view."""
    cfg = params.cfg
    lat = encode_batch(_flat_view(image, cfg.image_side), params)
    return T.reshape(lat, [cfg.latent_dim])


def decode_voxels(latent: Tensor, params: ParamBundle) -> VoxelGrid:
    cfg = params.cfg
    if latent.size != cfg.latent_dim:
        raise ShapeError(f"latent width {latent.size} != {cfg.latent_dim}")
    probs = decode_batch(T.reshape(latent, [1, cfg.latent_dim]), params)
    return VoxelGrid(T.reshape(probs, [cfg.voxel_count]), cfg.grid_side)


def predict(views, params: ParamBundle) -> tuple[VoxelGrid, AttentionMap | None]:
    """Reconstruct one voxel grid from 1..max_views view images.

    The attention map is returned only for attention aggregators.
    """
    cfg = params.cfg
    views = list(views)
    if not views:
        raise ContractError("predict needs at least one view")
    if len(views) > cfg.max_views:
        raise ContractError(f"{len(views)} views exceed the configured maximum {cfg.max_views}")
    latents = [encode_view(v, params) for v in views]
    fset = FeatureSet(T.stack_rows(latents))
    fused, attn = aggregate(fset, _agg_params(params))
    return decode_voxels(fused, params), attn


# --------------------------------------------------------------- checkpoint

_GROUP_TAGS = {"base": 0, "att": 1}
_TAG_GROUPS = {v: k for k, v in _GROUP_TAGS.items()}


def save_checkpoint(params: ParamBundle, path) -> None:
    """Binary layout: magic ``SFCK``, version u32, tensor count u32, then per
    tensor: name length u32 + UTF-8 name, group tag byte, rank u32, extents
    u32 each, values as little-endian float64. All integers little-endian."""
    records = params.named("all")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(records))
    for name, tag, t in records:
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += struct.pack("<B", _GROUP_TAGS[tag])
        shape = t.data.shape
        blob += struct.pack("<I", len(shape))
        blob += struct.pack(f"<{len(shape)}I", *shape) if shape else b""
        blob += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.off)
        piece = self.blob[self.off : self.off + n]
        self.off += n
        return piece

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path, cfg: ModelConfig | None = None) -> ParamBundle:
    """Bit-exact inverse of ``save_checkpoint``."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}", offset=4)
    count = r.u32("tensor count")
    groups: dict[str, dict[str, Tensor]] = {"base": {}, "att": {}}
    for _ in range(count):
        name_len = r.u32("name length")
        name = r.take(name_len, "name").decode("utf-8")
        tag_byte = r.take(1, "group tag")[0]
        if tag_byte not in _TAG_GROUPS:
            raise FormatError(f"unknown group tag {tag_byte}", offset=r.off - 1)
        rank = r.u32("rank")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, "extents")) if rank else ()
        n_vals = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(8 * n_vals, f"values of {name}")
        data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        groups[_TAG_GROUPS[tag_byte]][name] = Tensor(data, requires_grad=True)
    if r.off != len(blob):
        raise FormatError("trailing bytes after final tensor", offset=r.off)
    return ParamBundle(base=groups["base"], att=groups["att"], cfg=cfg)
