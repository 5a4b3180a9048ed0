"""Voxel IoU with binarization-threshold search, and per-view-count sweeps.

The metric binarizes predicted occupancy probabilities at a threshold p
(strictly greater than), then counts voxels:

    IoU = |binarized AND ground truth| / |binarized OR ground truth|

The threshold is searched over the fixed 13-value grid 0.20..0.80 in steps
of 0.05, independently per method and view count; ties break toward the
lower threshold so the reported optimum is the smallest maximizer. An
empty union (both grids empty) scores 1.0: total agreement on emptiness,
which can only occur at extreme thresholds.

Which views feed a sample during evaluation depends only on
(seed, sample_id, N) -- never on the method under test -- so different
aggregators always see identical inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "EvalConfig",
    "EvalReport",
    "iou",
    "default_thresholds",
    "choose_views",
    "threshold_search",
    "eval_sweep",
]


def default_thresholds() -> tuple[float, ...]:
    return tuple(round(0.20 + 0.05 * i, 2) for i in range(13))


@dataclass
class EvalConfig:
    thresholds: tuple = field(default_factory=default_thresholds)
    view_counts: tuple = (1, 2, 3, 4, 5, 8)
    seed: int = 0

    def validate(self) -> None:
        t = list(self.thresholds)
        if any(not 0.0 < p < 1.0 for p in t):
            raise ContractError("thresholds must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ContractError("thresholds must be strictly increasing")
        if any(n < 1 for n in self.view_counts):
            raise ContractError("view counts must be >= 1")


def _probs_of(pred) -> np.ndarray:
    if hasattr(pred, "probs"):  # VoxelGrid
        return pred.probs.data.reshape(-1)
    arr = np.asarray(pred, dtype=np.float64).reshape(-1)
    return arr


def iou(pred, gt, p: float) -> float:
    """Intersection over union of ``pred`` binarized at ``p`` against a
    binary ground-truth grid."""
    if not 0.0 < p < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {p}")
    hp = _probs_of(pred)
    ht = np.asarray(gt).reshape(-1) > 0.5
    if hp.size != ht.size:
        raise ShapeError(f"grid sizes differ: {hp.size} vs {ht.size}")
    binarized = hp > p
    union = int(np.count_nonzero(binarized | ht))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(binarized & ht)) / union


def choose_views(seed: int, sample_id: int, n: int, available: int) -> np.ndarray:
    """Deterministic method-independent pick of ``n`` of ``available`` views."""
    if n > available:
        raise ContractError(f"cannot pick {n} of {available} views")
    rng = np.random.default_rng(np.random.SeedSequence([seed, int(sample_id), n]))
    return np.sort(rng.choice(available, size=n, replace=False))


def _predicted_probs(params, testset, cfg: EvalConfig, n: int) -> list[tuple[int, np.ndarray, np.ndarray]]:
    from .model import predict

    out = []
    for sample in testset:
        k = sample.views.shape[0]
        picked = choose_views(cfg.seed, sample.sample_id, n, k)
        grid, _ = predict([sample.views[i] for i in picked], params)
        out.append((sample.sample_id, grid.probs.data, sample.gt))
    return out


def threshold_search(params, testset, cfg: EvalConfig, n: int) -> tuple[float, float]:
    """(best threshold, mean IoU at it); smallest maximizer on ties."""
    cfg.validate()
    testset = list(testset)
    if not testset:
        raise ContractError("threshold search needs a non-empty test set")
    preds = _predicted_probs(params, testset, cfg, n)
    best_p, best_iou = None, -1.0
    for p in cfg.thresholds:
        mean_iou = float(np.mean([iou(probs, gt, p) for _, probs, gt in preds]))
        if mean_iou > best_iou:
            best_p, best_iou = p, mean_iou
    return best_p, best_iou


@dataclass
class EvalReport:
    method: str
    rows: list  # dicts with n, threshold, mean_iou, n_samples
    per_sample: dict  # n -> list of (sample_id, iou)

    def mean_iou(self, n: int) -> float:
        for row in self.rows:
            if row["n"] == n:
                return row["mean_iou"]
        raise KeyError(f"no row for N={n}")

    def threshold(self, n: int) -> float:
        for row in self.rows:
            if row["n"] == n:
                return row["threshold"]
        raise KeyError(f"no row for N={n}")

    def to_csv(self) -> str:
        lines = ["method,N,threshold,mean_iou,n_samples"]
        for row in self.rows:
            lines.append(f"{self.method},{row['n']},{row['threshold']!r},"
                         f"{row['mean_iou']!r},{row['n_samples']}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "rows": self.rows,
            "per_sample": {str(n): [[int(sid), v] for sid, v in pairs]
                           for n, pairs in self.per_sample.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def eval_sweep(params, testset, cfg: EvalConfig, method: str | None = None) -> EvalReport:
    """Mean IoU at the searched threshold for every configured view count."""
    cfg.validate()
    testset = list(testset)
    if not testset:
        raise ContractError("evaluation needs a non-empty test set")
    k = testset[0].views.shape[0]
    if any(n > k for n in cfg.view_counts):
        raise ContractError(f"view counts {cfg.view_counts} exceed the {k} stored views")
    if method is None:
        method = params.cfg.aggregator_kind if params.cfg else "unknown"
    rows, per_sample = [], {}
    for n in cfg.view_counts:
        preds = _predicted_probs(params, testset, cfg, n)
        best_p, best_iou = None, -1.0
        for p in cfg.thresholds:
            mean_iou = float(np.mean([iou(probs, gt, p) for _, probs, gt in preds]))
            if mean_iou > best_iou:
                best_p, best_iou = p, mean_iou
        pairs = [(sid, iou(probs, gt, best_p)) for sid, probs, gt in preds]
        rows.append({"n": n, "threshold": best_p, "mean_iou": best_iou,
                     "n_samples": len(testset)})
        per_sample[n] = pairs
    return EvalReport(method=method, rows=rows, per_sample=per_sample)
