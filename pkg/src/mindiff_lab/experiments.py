"""Lambda and kernel-length sweeps, Pareto extraction and the pairwise simulation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import Dataset, PairCorpusConfig, generate_pair_corpus
from .pairwise import PairwiseReport, corpus_alpha, pairwise_metric, train_pairs
from .penalties import DEFAULT_KERNEL_LENGTH, ConfigError, PenaltyConfig
from .training import TrainConfig, run_repeated

log = logging.getLogger(__name__)

VARIANTS = ("corr", "mmd_gaussian", "mmd_laplace")
DEFAULT_LAMBDAS = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_KERNEL_LENGTHS = tuple(float(v) for v in np.logspace(-3, 1, 10))
KERNEL_SWEEP_LAMBDAS = (0.1, 1.0, 5.0)
SWEET_SPOT = (0.1, 0.5)


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SweepSpec:
    base: TrainConfig = field(default_factory=TrainConfig)
    parameter: str = "lambda"  # or "kernel_length"
    values: tuple[float, ...] = DEFAULT_LAMBDAS
    runs: int = 20
    variants: tuple[str, ...] = VARIANTS
    # fixed lambdas for a kernel-length sweep / fixed length for a lambda sweep
    lambdas: tuple[float, ...] = KERNEL_SWEEP_LAMBDAS
    kernel_length: float = DEFAULT_KERNEL_LENGTH

    def __post_init__(self):
        if self.parameter not in ("lambda", "kernel_length"):
            raise ConfigError(f"unknown swept parameter {self.parameter!r}")
        if not self.values:
            raise ConfigError("value list must be non-empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("values must be strictly increasing")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if self.parameter == "kernel_length" and any(not v.startswith("mmd") for v in self.variants):
            raise ConfigError("kernel-length sweeps apply to mmd variants only")


@dataclass
class ParetoPoint:
    variant: str
    lam: float
    kernel_length: float
    acc_mean: float
    acc_stderr: float
    gap_mean: float
    gap_stderr: float
    n_runs: int
    n_ok: int
    seed_lo: int
    seed_hi: int
    config_hash: str
    single_run: bool = False
    failures: str = ""
    sweet_spot: bool = False
    duplicates: int = 0

    @property
    def key(self) -> tuple:
        return (self.variant, self.lam, self.kernel_length)


POINT_COLUMNS = tuple(f.name for f in fields(ParetoPoint))
_INT_COLS = {"n_runs", "n_ok", "seed_lo", "seed_hi", "duplicates"}
_BOOL_COLS = {"single_run", "sweet_spot"}
_STR_COLS = {"variant", "config_hash", "failures"}


def _cell_config(base: TrainConfig, variant: str, lam: float, length: float) -> TrainConfig:
    return replace(base, penalty=PenaltyConfig.from_variant(variant, lam, length))


def _run_cell(args) -> ParetoPoint:
    variant, lam, length, base, runs, train, test = args
    cfg = _cell_config(base, variant, lam, length)
    rep = run_repeated(train, cfg, runs, test)
    acc = rep.summary["test_accuracy"]
    gap = rep.summary["test_fpr_gap"]
    nan = float("nan")
    return ParetoPoint(
        variant=variant,
        lam=float(lam),
        kernel_length=float(length),
        acc_mean=nan if acc.mean is None else acc.mean,
        acc_stderr=nan if acc.stderr is None else acc.stderr,
        gap_mean=nan if gap.mean is None else gap.mean,
        gap_stderr=nan if gap.stderr is None else gap.stderr,
        n_runs=runs,
        n_ok=rep.n_ok,
        seed_lo=rep.seeds[0],
        seed_hi=rep.seeds[-1],
        config_hash=config_hash(cfg),
        single_run=rep.single_run,
        failures=";".join(f"{s}:{m}" for s, m in sorted(rep.failures.items())),
    )


def _run_cells(cells, jobs: int) -> list[ParetoPoint]:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def sweep(spec: SweepSpec, train: Dataset, test: Dataset, jobs: int = 1) -> list[ParetoPoint]:
    """One point per (variant, value), ordered by variant then value.

    Every cell trains with seeds ``base.seed .. base.seed + runs - 1``, so
    variants are compared on common random numbers and any cell can be
    recomputed alone.
    """
    if spec.parameter == "kernel_length":
        return kernel_length_sweep(spec, train, test, jobs)
    cells = [
        (v, lam, spec.kernel_length, spec.base, spec.runs, train, test)
        for v in spec.variants
        for lam in spec.values
    ]
    return _run_cells(cells, jobs)


def kernel_length_sweep(spec: SweepSpec, train: Dataset, test: Dataset, jobs: int = 1) -> list[ParetoPoint]:
    """Points per (variant, lambda, length); ``sweet_spot`` marks lengths in [0.1, 0.5]."""
    if spec.parameter != "kernel_length":
        spec = replace(spec, parameter="kernel_length")
    cells = [
        (v, lam, length, spec.base, spec.runs, train, test)
        for v in spec.variants
        for lam in spec.lambdas
        for length in spec.values
    ]
    points = _run_cells(cells, jobs)
    lo, hi = SWEET_SPOT
    for p in points:
        p.sweet_spot = lo <= p.kernel_length <= hi
    return points


def dominates(q: ParetoPoint, p: ParetoPoint) -> bool:
    return (
        q.acc_mean >= p.acc_mean
        and q.gap_mean <= p.gap_mean
        and (q.acc_mean > p.acc_mean or q.gap_mean < p.gap_mean)
    )


def pareto_front(points) -> list[ParetoPoint]:
    """Non-dominated points (high accuracy, low FPR gap), sorted by gap ascending.

    Points with identical means collapse to the first one seen, whose
    ``duplicates`` field counts the others.  Points with non-finite means are
    ignored.
    """
    pts = [p for p in points if math.isfinite(p.acc_mean) and math.isfinite(p.gap_mean)]
    uniq: dict[tuple[float, float], ParetoPoint] = {}
    for p in pts:
        k = (p.acc_mean, p.gap_mean)
        if k in uniq:
            uniq[k].duplicates += 1
        else:
            uniq[k] = replace(p, duplicates=0)
    reps = list(uniq.values())
    # sweep by accuracy descending; a point survives if its gap beats every more accurate one
    order = sorted(range(len(reps)), key=lambda i: (-reps[i].acc_mean, reps[i].gap_mean, i))
    front = []
    best_gap = math.inf
    for i in order:
        if reps[i].gap_mean < best_gap:
            front.append(reps[i])
            best_gap = reps[i].gap_mean
    return sorted(front, key=lambda p: (p.gap_mean, -p.acc_mean))


# --- CSV -------------------------------------------------------------------


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def points_to_csv(points) -> str:
    lines = [",".join(POINT_COLUMNS)]
    for p in points:
        row = [_cell(getattr(p, c)) for c in POINT_COLUMNS]
        lines.append(",".join(_quote(x) for x in row))
    return "\n".join(lines) + "\n"


def _quote(s: str) -> str:
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def write_points_csv(points, path) -> None:
    Path(path).write_text(points_to_csv(points))


def read_points_csv(path) -> list[ParetoPoint]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != POINT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            kw = {}
            for c in POINT_COLUMNS:
                v = row[c]
                if c in _INT_COLS:
                    kw[c] = int(v)
                elif c in _BOOL_COLS:
                    kw[c] = v == "1"
                elif c in _STR_COLS:
                    kw[c] = v
                else:
                    kw[c] = float(v)
            out.append(ParetoPoint(**kw))
    return out


# --- pairwise simulation ----------------------------------------------------


@dataclass(frozen=True)
class PairSimConfig:
    corpus: PairCorpusConfig = field(default_factory=PairCorpusConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5))
    corr_lambdas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5, 1.0)
    mmd_lambdas: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0)
    mmd_kernel: str = "gaussian"
    # None: set the length to the std of the baseline model's validation alphas
    kernel_length: float | None = None
    # validation accuracy may drop this much below the baseline when picking lambda
    accuracy_budget: float = 0.015

    def __post_init__(self):
        if not self.corr_lambdas or not self.mmd_lambdas:
            raise ConfigError("lambda lists must be non-empty")
        if self.accuracy_budget < 0:
            raise ConfigError("accuracy_budget must be >= 0")


@dataclass
class PairSimResult:
    seed: int
    reports: dict[str, PairwiseReport]
    lambdas: dict[str, float]
    kernel_length: float

    def summary_rows(self) -> list[dict]:
        base = self.reports["baseline"].total_gap
        rows = []
        for name, rep in self.reports.items():
            red = 1.0 - rep.total_gap / base if base != 0 else float("nan")
            rows.append(
                {
                    "variant": name,
                    "lambda": self.lambdas.get(name, 0.0),
                    "total_gap": rep.total_gap,
                    "overall_accuracy": rep.overall_accuracy,
                    "gap_reduction": 0.0 if name == "baseline" else red,
                }
            )
        return rows


def _select_lambda(corpus, val, base_cfg, variant, lambdas, kernel_length, min_acc):
    """Lambda with the smallest validation |total gap| among those within the accuracy floor."""
    best = None
    for lam in lambdas:
        cfg = replace(base_cfg, penalty=PenaltyConfig.from_variant(variant, lam, kernel_length))
        params = train_pairs(corpus, cfg).params
        rep = pairwise_metric(val, params)
        if rep.overall_accuracy < min_acc:
            continue
        score = abs(rep.total_gap)
        if best is None or score < best[0]:
            best = (score, lam, params)
    return best


def pairwise_sim(cfg: PairSimConfig, seed: int) -> PairSimResult:
    """Train baseline, Corr and MMD pair models on one synthetic world and report each.

    Train, validation and test corpora are drawn from three derived seeds.
    The MMD kernel length defaults to the spread of the baseline's
    validation alphas.  Each MinDiff variant's weight is the validation-best one whose accuracy
    stays within ``accuracy_budget`` of the baseline's validation accuracy;
    if none qualifies the smallest weight is used.
    """
    seeds = np.random.SeedSequence([cfg.corpus.seed, seed]).generate_state(3)
    train_c, val_c, test_c = (generate_pair_corpus(replace(cfg.corpus, seed=int(s))) for s in seeds)
    tcfg = replace(cfg.train, seed=seed, penalty=PenaltyConfig())
    base_params = train_pairs(train_c, tcfg).params
    base_val = pairwise_metric(val_c, base_params)
    floor = base_val.overall_accuracy - cfg.accuracy_budget

    length = cfg.kernel_length
    if length is None:
        length = float(np.std(corpus_alpha(val_c, base_params)))

    reports = {"baseline": pairwise_metric(test_c, base_params)}
    lambdas = {"baseline": 0.0}
    for name, variant, grid in (
        ("corr", "corr", cfg.corr_lambdas),
        ("mmd", f"mmd_{cfg.mmd_kernel}", cfg.mmd_lambdas),
    ):
        best = _select_lambda(train_c, val_c, tcfg, variant, grid, length, floor)
        if best is None:
            lam = min(grid)
            params = train_pairs(
                train_c, replace(tcfg, penalty=PenaltyConfig.from_variant(variant, lam, length))
            ).params
        else:
            _, lam, params = best
        reports[name] = pairwise_metric(test_c, params)
        lambdas[name] = float(lam)
    return PairSimResult(seed, reports, lambdas, length)


def mean_report(reports: list[PairwiseReport]) -> PairwiseReport:
    """Cell-wise mean of reports sharing a bucket layout."""
    first = reports[0]
    if any(r.buckets != first.buckets for r in reports):
        raise ValueError("reports have different bucket layouts")

    def avg(attr, i):
        vals = [getattr(r, attr)[i] for r in reports]
        return None if any(v is None for v in vals) else float(np.mean(vals))

    nb = len(first.buckets)
    gap = [avg("gap", i) for i in range(nb)]
    return PairwiseReport(
        list(first.buckets),
        [avg("acc_in", i) for i in range(nb)],
        [avg("acc_out", i) for i in range(nb)],
        [int(sum(r.n_in[i] for r in reports)) for i in range(nb)],
        [int(sum(r.n_out[i] for r in reports)) for i in range(nb)],
        gap,
        float(sum(g for g in gap if g is not None)),
        float(np.mean([r.overall_accuracy for r in reports])),
        int(sum(r.n_pairs for r in reports)),
        complete=all(g is not None for g in gap),
    )
