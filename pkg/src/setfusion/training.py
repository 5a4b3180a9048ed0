"""Two-stage decoupled training, the joint baseline, and the optimizers.

The two-stage schedule splits optimization by parameter group:

* Stage 1 trains only the ``base`` group (encoder + decoder) on
  single-image reconstructions. Each drawn image runs through the full
  pipeline as a one-element set, and the loss is the mean over all M*N
  single-image reconstructions of the step. Attention weights receive
  exactly zero gradient on one-element sets, and the structural group mask
  guarantees they stay bit-identical regardless of optimizer state.
* Stage 2 trains only the ``att`` group on multi-element sets, with the
  loss averaged over the M per-set reconstructions. The base group is
  masked out, so single-view behavior after stage 2 is bit-identical to
  the stage-1 checkpoint.

``joint_train`` is the ablation control: one loss, all parameters updated
together under the configured set-size regime. ``finetune`` updates every
trainable tensor at the (much smaller) finetune rate and is the stage-2
stand-in for aggregators without a separable attention module.

Stage 1 and ``joint_train`` under a fixed(1) regime build byte-for-byte
identical computation graphs, so their base trajectories coincide exactly;
that equivalence is a tested property, not an accident.

Every run is a deterministic function of (dataset, config, seed): batches
are drawn from a counter-based generator keyed by (seed, step), and
optimizer state is reset at stage boundaries.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .aggregators import FeatureSet, aggregate
from .errors import ContractError
from .model import ParamBundle, _agg_params, decode_batch, encode_batch
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "TrainReport",
    "parse_n_mode",
    "sample_minibatch",
    "OptimizerState",
    "optimizer_step",
    "faset_stage1",
    "faset_stage2",
    "joint_train",
    "finetune",
]

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 16
    stage1_steps: int = 600
    stage2_steps: int = 600
    n_mode: str = "fixed:8"  # set-size regime for stage 2 / joint / finetune
    learning_rate: float = 1e-3
    finetune_rate: float = 1e-5
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ContractError("step counts must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        parse_n_mode(self.n_mode)


def parse_n_mode(spec: str) -> tuple:
    """``fixed:N`` or ``uniform:LO:HI`` -> parsed tuple."""
    parts = str(spec).split(":")
    try:
        if parts[0] == "fixed" and len(parts) == 2:
            n = int(parts[1])
            if n < 1:
                raise ValueError
            return ("fixed", n)
        if parts[0] == "uniform" and len(parts) == 3:
            lo, hi = int(parts[1]), int(parts[2])
            if not 1 <= lo <= hi:
                raise ValueError
            return ("uniform", lo, hi)
    except ValueError:
        pass
    raise ContractError(f"bad n_mode {spec!r}; use 'fixed:N' or 'uniform:LO:HI'")


@dataclass
class TrainReport:
    stage: str
    steps: int
    losses: list
    wallclock_ms: float
    base_checksum: str
    att_checksum: str
    warning: str | None = None

    def to_json(self) -> str:
        doc = {
            "stage": self.stage,
            "steps": self.steps,
            "losses": self.losses,
            "wallclock_ms": self.wallclock_ms,
            "base_checksum": self.base_checksum,
            "att_checksum": self.att_checksum,
        }
        if self.warning:
            doc["warning"] = self.warning
        return json.dumps(doc, indent=2) + "\n"


def sample_minibatch(dataset, cfg: TrainConfig, step: int, n_mode: str | None = None):
    """Deterministic draw of ``batch_size`` (views, target) pairs for one step.

    Views are flattened to rows; the set size per sample follows the
    ``fixed``/``uniform`` regime. Identical (seed, step) always reproduces
    the identical batch.
    """
    if not dataset:
        raise ContractError("cannot sample from an empty dataset")
    mode = parse_n_mode(n_mode if n_mode is not None else cfg.n_mode)
    k = dataset[0].views.shape[0]
    hi = mode[1] if mode[0] == "fixed" else mode[2]
    if hi > k:
        raise ContractError(f"n_mode {mode} exceeds the {k} views stored per sample")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step]))
    picks = rng.integers(0, len(dataset), size=cfg.batch_size)
    batch = []
    for idx in picks:
        sample = dataset[int(idx)]
        n = mode[1] if mode[0] == "fixed" else int(rng.integers(mode[1], mode[2] + 1))
        chosen = rng.choice(k, size=n, replace=False)
        views = sample.views[np.sort(chosen)].reshape(n, -1)
        batch.append((views, sample.gt.astype(np.float64)))
    return batch


class OptimizerState:
    """Per-tensor Adam moments, keyed by parameter name."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}


def optimizer_step(params: ParamBundle, group: str, lr: float, state: OptimizerState,
                   optimizer: str = "adam") -> None:
    """Apply one update to the named group; all other tensors stay untouched."""
    for name, _, tensor in params.named(group):
        if tensor.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; run backward first")
        g = tensor.grad.reshape(tensor.shape)
        if optimizer == "sgd":
            tensor.data -= lr * g
            continue
        if optimizer != "adam":
            raise ContractError(f"unknown optimizer {optimizer!r}")
        t = state.t.get(name, 0) + 1
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
            state.m[name], state.v[name] = m, v
        state.t[name] = t
        # in-place moment updates: the big decoder matrix makes fresh
        # temporaries here the single most expensive allocation in training
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        denom = np.sqrt(v / (1.0 - ADAM_BETA2 ** t))
        denom += ADAM_EPS
        step = np.divide(m, denom, out=denom)
        step *= lr / (1.0 - ADAM_BETA1 ** t)
        tensor.data -= step


def _set_loss(params: ParamBundle, sets) -> Tensor:
    """Forward one step's worth of sets: encode each set's views, aggregate,
    decode all fused latents as one batch, mean BCE against the targets."""
    agg = _agg_params(params)
    d = params.cfg.latent_dim
    fused_rows = []
    targets = []
    for views, target in sets:
        latents = encode_batch(Tensor(views), params)
        y, _ = aggregate(FeatureSet(latents), agg)
        fused_rows.append(T.reshape(y, [1, d]))
        targets.append(target)
    probs = decode_batch(T.stack_rows(fused_rows), params)
    return T.bce_loss(probs, Tensor(np.stack(targets)))


def _per_image_sets(batch):
    """Decompose each sample into one-element sets, one per drawn view."""
    sets = []
    for views, target in batch:
        for row in views:
            sets.append((row.reshape(1, -1), target))
    return sets


def _run(params: ParamBundle, dataset, cfg: TrainConfig, *, stage: str, steps: int,
         group: str, lr: float, n_mode: str, per_image: bool,
         warning: str | None = None) -> TrainReport:
    cfg.validate()
    state = OptimizerState()
    losses: list[float] = []
    start = time.perf_counter()
    for step in range(steps):
        batch = sample_minibatch(dataset, cfg, step, n_mode=n_mode)
        sets = _per_image_sets(batch) if per_image else batch
        params.zero_grads()
        with T.Tape() as tape:
            loss = _set_loss(params, sets)
            tape.backward(loss)
        optimizer_step(params, group, lr, state, cfg.optimizer)
        losses.append(loss.item())
    wallclock_ms = (time.perf_counter() - start) * 1000.0
    return TrainReport(stage=stage, steps=steps, losses=losses, wallclock_ms=wallclock_ms,
                       base_checksum=params.checksum("base"),
                       att_checksum=params.checksum("att"), warning=warning)


def faset_stage1(params: ParamBundle, dataset, cfg: TrainConfig) -> TrainReport:
    """Stage 1: base group only, single-image reconstructions (fixed(1) draws)."""
    return _run(params, dataset, cfg, stage="stage1", steps=cfg.stage1_steps,
                group="base", lr=cfg.learning_rate, n_mode="fixed:1", per_image=True)


def faset_stage2(params: ParamBundle, dataset, cfg: TrainConfig) -> TrainReport:
    """Stage 2: attention group only, set-level reconstructions."""
    mode = parse_n_mode(cfg.n_mode)
    reachable = mode[1] >= 2 if mode[0] == "fixed" else mode[2] >= 2
    if not reachable:
        raise ContractError(f"stage 2 needs set sizes >= 2 to be reachable, got {cfg.n_mode}")
    if not params.att:
        msg = "stage 2 is a no-op: the aggregator has no trainable parameters"
        log.warning(msg)
        return TrainReport(stage="stage2", steps=0, losses=[], wallclock_ms=0.0,
                           base_checksum=params.checksum("base"),
                           att_checksum=params.checksum("att"), warning=msg)
    return _run(params, dataset, cfg, stage="stage2", steps=cfg.stage2_steps,
                group="att", lr=cfg.learning_rate, n_mode=cfg.n_mode, per_image=False)


def joint_train(params: ParamBundle, dataset, cfg: TrainConfig) -> TrainReport:
    """End-to-end baseline: every parameter updated under one set-level loss.

    Runs stage1_steps + stage2_steps so its budget matches a full two-stage
    run."""
    return _run(params, dataset, cfg, stage="joint",
                steps=cfg.stage1_steps + cfg.stage2_steps, group="all",
                lr=cfg.learning_rate, n_mode=cfg.n_mode, per_image=False)


def finetune(params: ParamBundle, dataset, cfg: TrainConfig) -> TrainReport:
    """Whole-network pass at the finetune rate; the stage-2 analog for
    pooling and recurrent aggregators."""
    return _run(params, dataset, cfg, stage="finetune", steps=cfg.stage2_steps,
                group="all", lr=cfg.finetune_rate, n_mode=cfg.n_mode, per_image=False)
