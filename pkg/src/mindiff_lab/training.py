"""Seeded mini-batch training with a MinDiff penalty on the predictions."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn_core
from .data import Dataset
from .metrics import DEFAULT_THRESHOLD, EvalReport, evaluate, threshold_for_recall
from .penalties import ConfigError, KernelSpec, PenaltyConfig, mindiff_penalty

log = logging.getLogger(__name__)


class TrainingDivergence(ArithmeticError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 15
    batch_size: int = 256
    learning_rate: float = 1e-3
    hidden_units: int = 64
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    threshold: float = DEFAULT_THRESHOLD
    # "fixed" uses ``threshold``; "recall" picks it on the training split for ``target_recall``
    threshold_policy: str = "fixed"
    target_recall: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.hidden_units < 1:
            raise ConfigError("batch_size, epochs and hidden_units must be >= 1")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be positive")
        if self.threshold_policy not in ("fixed", "recall"):
            raise ConfigError(f"unknown threshold policy {self.threshold_policy!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        p = dict(d.pop("penalty", {}) or {})
        if p.get("kernel") is not None:
            p["kernel"] = KernelSpec(**p["kernel"])
        return cls(penalty=PenaltyConfig(**p), **d)


@dataclass
class TrainResult:
    config: TrainConfig
    params: nn_core.ModelParams
    train_report: EvalReport
    test_report: EvalReport | None
    primary_trace: list[float]
    penalty_trace: list[float]
    total_trace: list[float]
    skipped_penalty_batches: int

    def to_record(self, include_params: bool = True) -> dict:
        rec = {
            "config": self.config.to_dict(),
            "train": self.train_report.to_dict(),
            "test": None if self.test_report is None else self.test_report.to_dict(),
            "primary_trace": self.primary_trace,
            "penalty_trace": self.penalty_trace,
            "total_trace": self.total_trace,
            "skipped_penalty_batches": self.skipped_penalty_batches,
        }
        if include_params:
            rec["params"] = {k: np.asarray(v).tolist() for k, v in self.params.as_dict().items()}
        return rec


def dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=1) + "\n"


def train(dataset: Dataset, config: TrainConfig, test: Dataset | None = None) -> TrainResult:
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    params = nn_core.init_params(dataset.n_features, config.hidden_units, rng)
    state = nn_core.AdamState.zeros_like(params, lr=config.learning_rate)
    pen_cfg = config.penalty
    n = len(dataset)
    bs = config.batch_size

    primary_trace, penalty_trace, total_trace = [], [], []
    skipped = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        ep_primary = ep_penalty = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            xb, yb, ab = dataset.x[idx], dataset.y[idx], dataset.a[idx]
            cache = nn_core.forward_cache(params, xb)
            p = cache.prob
            primary, _ = nn_core.bce_loss(p, yb)
            pen = mindiff_penalty(p, yb, ab, pen_cfg)
            if pen.skipped:
                skipped += 1
            if not (math.isfinite(primary) and math.isfinite(pen.value)):
                raise TrainingDivergence(epoch, b, f"primary={primary} penalty={pen.value}")
            # BCE gradient taken on the logit directly so saturated outputs keep their signal
            g_logit = (p - yb) / len(idx) + pen.grad * p * (1.0 - p)
            try:
                grads = nn_core.backward_logits(params, xb, g_logit, cache)
                params, state = nn_core.optimizer_step(params, grads, state)
            except nn_core.NumericError as e:
                raise TrainingDivergence(epoch, b, str(e)) from e
            ep_primary += primary
            ep_penalty += pen.value
            n_batches += 1
        primary_trace.append(ep_primary / n_batches)
        penalty_trace.append(ep_penalty / n_batches)
        total_trace.append((ep_primary + ep_penalty) / n_batches)
        log.debug("epoch %d primary=%.5f penalty=%.5f", epoch, primary_trace[-1], penalty_trace[-1])

    if skipped:
        log.debug("%d batches had too few negatives per group for the penalty", skipped)

    train_pred = nn_core.forward(params, dataset.x)
    threshold = config.threshold
    if config.threshold_policy == "recall":
        threshold = threshold_for_recall(train_pred, dataset.y, config.target_recall)
    train_report = evaluate(train_pred, dataset.y, dataset.a, threshold)
    test_report = None
    if test is not None:
        test_report = evaluate(nn_core.forward(params, test.x), test.y, test.a, threshold)
    return TrainResult(
        config, params, train_report, test_report, primary_trace, penalty_trace, total_trace, skipped
    )


# --- repeated runs ----------------------------------------------------------

SUMMARY_METRICS = (
    "test_accuracy",
    "test_fpr_gap",
    "test_fpr_group0",
    "test_fpr_group1",
    "test_fpr_ratio",
    "train_accuracy",
    "train_fpr_gap",
)


def run_metrics(result: TrainResult) -> dict[str, float | None]:
    out = {}
    for split, rep in (("train", result.train_report), ("test", result.test_report)):
        if rep is None:
            continue
        out[f"{split}_accuracy"] = rep.accuracy
        out[f"{split}_fpr_gap"] = rep.fpr_gap
        out[f"{split}_fpr_group0"] = rep.fpr_group0
        out[f"{split}_fpr_group1"] = rep.fpr_group1
        out[f"{split}_fpr_ratio"] = rep.fpr_ratio
    return out


@dataclass
class MetricSummary:
    mean: float | None
    stderr: float | None
    n: int


@dataclass
class RepeatedResult:
    seeds: list[int]
    runs: list[dict | None]  # per-seed metrics, None where the run failed
    failures: dict[int, str]
    summary: dict[str, MetricSummary]

    @property
    def single_run(self) -> bool:
        return len(self.seeds) == 1

    @property
    def n_ok(self) -> int:
        return sum(r is not None for r in self.runs)


def summarize(values) -> MetricSummary:
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return MetricSummary(None, None, 0)
    if vals.size == 1:
        return MetricSummary(float(vals[0]), 0.0, 1)
    return MetricSummary(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)), int(vals.size))


def _run_one(args):
    dataset, config, test = args
    try:
        return run_metrics(train(dataset, config, test)), None
    except (TrainingDivergence, ConfigError, ValueError) as e:
        return None, str(e)


def run_repeated(
    dataset: Dataset,
    config: TrainConfig,
    n_runs: int,
    test: Dataset | None = None,
    jobs: int = 1,
) -> RepeatedResult:
    """Train with seeds ``config.seed + i`` for ``i < n_runs`` and summarize.

    Failed runs are kept as ``None`` entries with their error message.
    Results do not depend on ``jobs``.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    seeds = [config.seed + i for i in range(n_runs)]
    tasks = [(dataset, replace(config, seed=s), test) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]
    runs = [m for m, _ in outcomes]
    failures = {s: err for s, (_, err) in zip(seeds, outcomes) if err is not None}
    keys = SUMMARY_METRICS if test is not None else tuple(k for k in SUMMARY_METRICS if k.startswith("train"))
    summary = {k: summarize(r[k] for r in runs if r is not None) for k in keys}
    return RepeatedResult(seeds, runs, failures, summary)
