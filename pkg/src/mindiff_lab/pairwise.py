"""Pairwise ranking fairness: bucketed ranking-accuracy gaps and MinDiff on (alpha, beta).

For a pair (clicked, unclicked), ``alpha = f(clicked) - f(unclicked)`` and
``beta = A(clicked) - A(unclicked)``.  A positive per-bucket gap means pairs
whose clicked item is in the subgroup are ranked correctly less often.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .data import PairCorpus, PairExample
from .metrics import MetricError
from .penalties import (
    ConfigError,
    GROUP_UNKNOWN,
    PenaltyConfig,
    PenaltyValue,
    correlation_penalty,
    split_penalty,
)
from .training import TrainConfig, TrainingDivergence

log = logging.getLogger(__name__)


def _scorer(model):
    if isinstance(model, nn_core.ModelParams):
        return lambda x: nn_core.forward(model, np.atleast_2d(x))
    return lambda x: np.asarray(model(np.atleast_2d(x)), dtype=np.float64)


def alpha_beta(pair: PairExample, model) -> tuple[float, int]:
    score = _scorer(model)
    alpha = float(score(pair.x_clicked)[0] - score(pair.x_unclicked)[0])
    return alpha, int(pair.a_clicked) - int(pair.a_unclicked)


def corpus_alpha(corpus: PairCorpus, model) -> np.ndarray:
    score = _scorer(model)
    return score(corpus.x_clicked) - score(corpus.x_unclicked)


@dataclass
class PairwiseReport:
    """Per-bucket ranking accuracy split by the clicked item's group.

    Cells with no pairs hold ``None`` and make that bucket's gap ``None``;
    ``total_gap`` sums the defined gaps and ``complete`` says whether all were.
    """

    buckets: list[int]
    acc_in: list[float | None]
    acc_out: list[float | None]
    n_in: list[int]
    n_out: list[int]
    gap: list[float | None]
    total_gap: float
    overall_accuracy: float
    n_pairs: int
    complete: bool = field(default=True)

    CSV_HEADER = ("bucket", "n_in", "n_out", "acc_in", "acc_out", "gap")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        f = lambda v: "" if v is None else repr(float(v))
        for i, b in enumerate(self.buckets):
            w.writerow([b, self.n_in[i], self.n_out[i], f(self.acc_in[i]), f(self.acc_out[i]), f(self.gap[i])])
        w.writerow(["total", sum(self.n_in), sum(self.n_out), "", repr(self.overall_accuracy), repr(self.total_gap)])
        return buf.getvalue()


def _credit(alpha: np.ndarray) -> np.ndarray:
    return np.where(alpha > 0, 1.0, np.where(alpha == 0, 0.5, 0.0))


def pairwise_report(alpha, a_clicked, bucket) -> PairwiseReport:
    """Build the report from precomputed ``alpha`` values."""
    alpha = np.asarray(alpha, dtype=np.float64)
    a_clicked = np.asarray(a_clicked)
    bucket = np.asarray(bucket)
    if alpha.size == 0:
        raise MetricError("no pairs to evaluate")
    credit = _credit(alpha)
    buckets = sorted(int(b) for b in np.unique(bucket))
    acc_in, acc_out, n_in, n_out, gap = [], [], [], [], []
    for b in buckets:
        in_b = bucket == b
        cells = []
        for g, acc, cnt in ((1, acc_in, n_in), (0, acc_out, n_out)):
            sel = in_b & (a_clicked == g)
            cnt.append(int(sel.sum()))
            acc.append(float(credit[sel].mean()) if sel.any() else None)
            cells.append(acc[-1])
        gap.append(None if None in cells else cells[1] - cells[0])
    defined = [g for g in gap if g is not None]
    return PairwiseReport(
        buckets,
        acc_in,
        acc_out,
        n_in,
        n_out,
        gap,
        float(sum(defined)),
        float(credit.mean()),
        int(alpha.size),
        complete=len(defined) == len(gap),
    )


def pairwise_metric(pairs, model) -> PairwiseReport:
    """Ranking-accuracy report for a :class:`PairCorpus` or iterable of pairs."""
    corpus = pairs if isinstance(pairs, PairCorpus) else PairCorpus.from_examples(pairs)
    if len(corpus) == 0:
        raise MetricError("no pairs to evaluate")
    return pairwise_report(corpus_alpha(corpus, model), corpus.a_clicked, corpus.bucket)


def alpha_penalty(alpha, beta, config: PenaltyConfig) -> PenaltyValue:
    """MinDiff penalty on ``alpha`` given ``beta``; gradient is w.r.t. ``alpha``.

    Correlation uses every pair whose ``beta`` is known (pass NaN for unknown).
    MMD compares ``alpha`` for ``beta == +1`` against ``beta == -1``.
    """
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64).ravel()
    grad = np.zeros(alpha.size)
    if config.kind == "none" or config.weight == 0.0:
        return PenaltyValue(0.0, grad, config.kind != "none")
    if config.kind == "correlation":
        idx = np.flatnonzero(np.isfinite(beta))
        if idx.size < max(2, config.min_side):
            return PenaltyValue(0.0, grad, True)
        r = correlation_penalty(alpha[idx], beta[idx])
        grad[idx] = config.weight * r.grad
        return PenaltyValue(config.weight * r.value, grad, r.skipped)
    pos = np.flatnonzero(beta == 1)
    neg = np.flatnonzero(beta == -1)
    r = split_penalty(alpha[pos], alpha[neg], config)
    if r.skipped:
        return PenaltyValue(0.0, grad, True)
    grad[pos] = r.grad[: pos.size]
    grad[neg] = r.grad[pos.size :]
    return PenaltyValue(r.value, grad)


def _beta(corpus: PairCorpus) -> np.ndarray:
    ac = corpus.a_clicked.astype(np.float64)
    au = corpus.a_unclicked.astype(np.float64)
    ac[corpus.a_clicked == GROUP_UNKNOWN] = np.nan
    au[corpus.a_unclicked == GROUP_UNKNOWN] = np.nan
    return ac - au


def pairwise_mindiff_penalty(pairs, model, config: PenaltyConfig) -> tuple[PenaltyValue, np.ndarray]:
    """Penalty over a batch of pairs and its gradient w.r.t. each pair's ``alpha``."""
    corpus = pairs if isinstance(pairs, PairCorpus) else PairCorpus.from_examples(pairs)
    alpha = corpus_alpha(corpus, model)
    beta = _beta(corpus)
    if config.kind == "mmd":
        known = np.isfinite(beta)
        if known.any():
            log.debug("mmd pair penalty discards %.1f%% beta=0 pairs", 100 * np.mean(beta[known] == 0))
    return alpha_penalty(alpha, beta, config), alpha


@dataclass
class PairTrainResult:
    config: TrainConfig
    params: nn_core.ModelParams
    ranking_trace: list[float]
    penalty_trace: list[float]


def train_pairs(corpus: PairCorpus, config: TrainConfig) -> PairTrainResult:
    """Pointwise scorer trained on pairs with a logistic (RankNet) loss on logit differences.

    The MinDiff penalty acts on probability differences ``alpha``.
    """
    if len(corpus) == 0:
        raise ConfigError("empty pair corpus")
    d = corpus.x_clicked.shape[1]
    rng = np.random.default_rng(config.seed)
    params = nn_core.init_params(d, config.hidden_units, rng)
    state = nn_core.AdamState.zeros_like(params, lr=config.learning_rate)
    beta_all = _beta(corpus)
    n = len(corpus)
    rank_trace, pen_trace = [], []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        ep_rank = ep_pen = 0.0
        nb = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            k = idx.size
            x = np.vstack([corpus.x_clicked[idx], corpus.x_unclicked[idx]])
            cache = nn_core.forward_cache(params, x)
            z, p = cache.logit, cache.prob
            dz = z[:k] - z[k:]
            rank_loss = float(np.mean(np.logaddexp(0.0, -dz)))
            pen = alpha_penalty(p[:k] - p[k:], beta_all[idx], config.penalty)
            if not (math.isfinite(rank_loss) and math.isfinite(pen.value)):
                raise TrainingDivergence(epoch, b, f"ranking={rank_loss} penalty={pen.value}")
            g_dz = -nn_core.sigmoid(-dz) / k
            g_logit = np.concatenate([g_dz, -g_dz])
            g_p = np.concatenate([pen.grad, -pen.grad])
            g_logit = g_logit + g_p * p * (1.0 - p)
            grads = nn_core.backward_logits(params, x, g_logit, cache)
            params, state = nn_core.optimizer_step(params, grads, state)
            ep_rank += rank_loss
            ep_pen += pen.value
            nb += 1
        rank_trace.append(ep_rank / nb)
        pen_trace.append(ep_pen / nb)
    return PairTrainResult(config, params, rank_trace, pen_trace)
