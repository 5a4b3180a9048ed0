"""Wall-clock comparison of the aggregators, alone and in the full pipeline.

For every (aggregator, set size) cell the report holds the median of R
timed repetitions taken after a warmup: medians tolerate scheduler noise
at the millisecond scales involved. Aggregation-only timings isolate the
fusion operator on a prebuilt feature set; full-forward timings run the
entire predict path (encode N views, fuse, decode). Inputs are seeded per
cell, so only the wall-clock fields vary between runs.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass

import numpy as np

from .aggregators import AGGREGATOR_KINDS, FeatureSet, aggregate, aggregator_init
from .errors import ContractError
from .model import ModelConfig, model_init, predict
from .tensor import Tensor

__all__ = ["BenchConfig", "BenchReport", "run_bench"]


@dataclass
class BenchConfig:
    n_grid: tuple = (1, 4, 8, 12, 16, 20, 24)
    latent_dim: int = 128
    repeats: int = 30
    warmups: int = 5
    inner_loops: int = 4  # forwards per timed repetition; median is per-forward
    aggregators: tuple = AGGREGATOR_KINDS
    seed: int = 0

    def validate(self) -> None:
        if self.repeats < 30 or self.warmups < 5:
            raise ContractError("benchmark needs >= 30 repetitions after >= 5 warmups")
        grid = list(self.n_grid)
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise ContractError("n_grid must be strictly increasing and >= 1")
        unknown = set(self.aggregators) - set(AGGREGATOR_KINDS)
        if unknown:
            raise ContractError(f"unknown aggregators {sorted(unknown)}")


@dataclass
class BenchReport:
    rows: list  # dicts: aggregator, n, agg_only_ms, full_forward_ms
    repeats: int
    warmups: int
    environment: str

    def cell(self, aggregator: str, n: int) -> dict:
        for row in self.rows:
            if row["aggregator"] == aggregator and row["n"] == n:
                return row
        raise KeyError(f"no cell for ({aggregator}, {n})")

    def to_csv(self) -> str:
        lines = ["aggregator,N,agg_only_ms,full_forward_ms"]
        for row in self.rows:
            lines.append(f"{row['aggregator']},{row['n']},"
                         f"{row['agg_only_ms']!r},{row['full_forward_ms']!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "rows": self.rows,
            "repeats": self.repeats,
            "warmups": self.warmups,
            "environment": self.environment,
        }, indent=2) + "\n"


def _median_ms(fn, cfg: BenchConfig) -> float:
    for _ in range(cfg.warmups):
        fn()
    times = []
    for _ in range(cfg.repeats):
        start = time.perf_counter()
        for _ in range(cfg.inner_loops):
            fn()
        times.append((time.perf_counter() - start) / cfg.inner_loops)
    return float(np.median(times) * 1000.0)


def run_bench(cfg: BenchConfig, model_cfg: ModelConfig | None = None) -> BenchReport:
    cfg.validate()
    if model_cfg is None:
        model_cfg = ModelConfig(latent_dim=cfg.latent_dim, max_views=max(cfg.n_grid))
    if model_cfg.latent_dim != cfg.latent_dim:
        raise ContractError("benchmark latent_dim must match the pipeline model")
    if model_cfg.max_views < max(cfg.n_grid):
        raise ContractError("pipeline max_views below the largest benchmarked set size")
    rows = []
    for kind in cfg.aggregators:
        agg_params = aggregator_init(kind, cfg.latent_dim, seed=cfg.seed)
        pipe_cfg = ModelConfig(**{**vars(model_cfg), "aggregator_kind": kind})
        pipe = model_init(pipe_cfg)
        for n in cfg.n_grid:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n]))
            fset = FeatureSet(Tensor(rng.standard_normal((n, cfg.latent_dim))))
            views = rng.uniform(0, 1, size=(n, pipe_cfg.image_side, pipe_cfg.image_side))
            agg_ms = _median_ms(lambda: aggregate(fset, agg_params), cfg)
            full_ms = _median_ms(lambda: predict(list(views), pipe), cfg)
            rows.append({"aggregator": kind, "n": n,
                         "agg_only_ms": agg_ms, "full_forward_ms": full_ms})
    env = (f"python {platform.python_version()}, numpy {np.__version__}, "
           f"{platform.machine()}, single process")
    return BenchReport(rows=rows, repeats=cfg.repeats, warmups=cfg.warmups, environment=env)
