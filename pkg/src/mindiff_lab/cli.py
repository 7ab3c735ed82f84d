"""Command-line entry point: ``mindiff-lab <command> [flags]``.

Exit codes: 0 ok, 1 configuration error, 2 ingestion error, 3 numeric
divergence, 4 some sweep cells failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import urllib.request
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataConfigError,
    IngestionError,
    PairCorpusConfig,
    load_adult,
    mask_group_labels,
)
from .experiments import (
    DEFAULT_KERNEL_LENGTHS,
    DEFAULT_LAMBDAS,
    KERNEL_SWEEP_LAMBDAS,
    PairSimConfig,
    SweepSpec,
    kernel_length_sweep,
    mean_report,
    pairwise_sim,
    pareto_front,
    read_points_csv,
    sweep,
    write_points_csv,
)
from .metrics import CSV_COLUMNS, MetricError
from .penalties import ConfigError, KernelSpec, PenaltyConfig
from .training import TrainConfig, TrainingDivergence, dump_record, train

log = logging.getLogger("mindiff_lab")

EXIT_CONFIG, EXIT_INGEST, EXIT_DIVERGED, EXIT_PARTIAL = 1, 2, 3, 4

UCI_BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult"
ADULT_FILES = ("adult.data", "adult.test")


class CliConfigError(Exception):
    pass


# --- option plumbing ----------------------------------------------------------


def _floats(s) -> tuple[float, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(float(v) for v in s)
    return tuple(float(v) for v in str(s).split(",") if v.strip())


def _strs(s) -> tuple[str, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(str(v) for v in s)
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _fmt_default(v):
    if isinstance(v, tuple):
        return ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
    return str(v)


class Options:
    """Declares flags whose argparse default is ``None`` so the config file can sit in between."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.defaults: dict = {}
        self.types: dict = {}

    def add(self, flag: str, default, help: str, type=None, **kw):
        dest = flag.lstrip("-").replace("-", "_")
        if type is None:
            type = {bool: _bool, int: int, float: float}.get(default.__class__, str)
        self.defaults[dest] = default
        self.types[dest] = type
        self.parser.add_argument(
            flag, dest=dest, type=type, default=None, help=f"{help} (default: {_fmt_default(default)})", **kw
        )


def _load_config_file(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CliConfigError(f"cannot read config file {path}: {e}") from e
    if isinstance(d, dict) and "config" in d and "command" in d:
        d = d["config"]  # a run manifest
    if not isinstance(d, dict):
        raise CliConfigError("config file must hold a flat JSON object")
    return {k.replace("-", "_"): v for k, v in d.items()}


def resolve(args: argparse.Namespace, opts: Options) -> dict:
    """Flags > config file > built-in defaults."""
    cfg = _load_config_file(args.config) if args.config else {}
    unknown = set(cfg) - set(opts.defaults)
    if unknown:
        raise CliConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for k, default in opts.defaults.items():
        v = getattr(args, k)
        if v is None and k in cfg:
            try:
                v = opts.types[k](cfg[k])
            except (TypeError, ValueError, argparse.ArgumentTypeError) as e:
                raise CliConfigError(f"bad value for {k}: {cfg[k]!r}") from e
        out[k] = default if v is None else v
    return out


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, resolved: dict, data_files: list, outputs: list) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": resolved.get("seed"),
        "config": {k: _jsonable(v) for k, v in sorted(resolved.items())},
        "datasets": {str(p): _sha256(p) for p in data_files},
        "outputs": sorted(outputs),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --- shared option groups -----------------------------------------------------


def _data_opts(o: Options):
    o.add("--train-data", "data/adult/adult.data", "UCI adult.data file")
    o.add("--test-data", "data/adult/adult.test", "UCI adult.test file")
    o.add("--protected-value", "Female", "value of the sex column treated as group A=1")
    o.add("--include-sensitive", False, "keep the sensitive column as a model feature")
    o.add("--keep-fnlwgt", False, "keep the fnlwgt survey-weight column as a feature")
    o.add("--group-fraction", 1.0, "fraction of training rows whose group attribute is kept")


def _train_opts(o: Options, seed=0):
    o.add("--seed", seed, "base random seed")
    o.add("--epochs", 15, "training epochs")
    o.add("--batch-size", 256, "mini-batch size")
    o.add("--learning-rate", 1e-3, "Adam learning rate")
    o.add("--hidden-units", 64, "hidden layer width")
    o.add("--threshold", 0.5, "decision threshold for the fixed policy")
    o.add("--threshold-policy", "fixed", "fixed | recall", choices=("fixed", "recall"))
    o.add("--target-recall", 0.5, "recall target for the recall policy")
    o.add("--min-side", 2, "minimum negatives per group before the penalty applies")


def _load(resolved: dict):
    drop = () if resolved["keep_fnlwgt"] else ("fnlwgt",)
    train_ds, test_ds, schema = load_adult(
        resolved["train_data"],
        resolved["test_data"],
        protected_value=resolved["protected_value"],
        drop_columns=drop,
        include_sensitive=resolved["include_sensitive"],
    )
    if resolved["group_fraction"] < 1.0:
        train_ds = mask_group_labels(train_ds, resolved["group_fraction"], resolved["seed"])
    return train_ds, test_ds, schema


def _train_config(resolved: dict, penalty: PenaltyConfig) -> TrainConfig:
    return TrainConfig(
        seed=resolved["seed"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        learning_rate=resolved["learning_rate"],
        hidden_units=resolved["hidden_units"],
        penalty=penalty,
        threshold=resolved["threshold"],
        threshold_policy=resolved["threshold_policy"],
        target_recall=resolved["target_recall"],
    )


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands -----------------------------------------------------------------


def cmd_train(args, opts) -> int:
    r = resolve(args, opts)
    if r["penalty"] == "mmd":
        penalty = PenaltyConfig("mmd", r["lambda"], KernelSpec(r["kernel"], r["kernel_length"]), r["min_side"])
    elif r["penalty"] == "corr":
        penalty = PenaltyConfig("correlation", r["lambda"], min_side=r["min_side"])
    else:
        penalty = PenaltyConfig("none", 0.0, min_side=r["min_side"])
    cfg = _train_config(r, penalty)
    train_ds, test_ds, schema = _load(r)

    out = _prepare_out(r["out_dir"])
    outputs = ["manifest.json", "run_record.json", "schema.json", "eval.csv"]
    write_manifest(out, "train", r, [r["train_data"], r["test_data"]], outputs)
    schema.write(out / "schema.json")
    result = train(train_ds, cfg, test_ds)
    (out / "run_record.json").write_text(dump_record(result.to_record()))
    with open(out / "eval.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("split",) + CSV_COLUMNS)
        w.writerow(["train"] + result.train_report.csv_row())
        w.writerow(["test"] + result.test_report.csv_row())
    t = result.test_report
    gap = "undefined" if t.fpr_gap is None else f"{t.fpr_gap:.4f}"
    print(f"test accuracy {t.accuracy:.4f}  fpr_gap {gap}  fpr0 {t.fpr_group0}  fpr1 {t.fpr_group1}")
    return 0


def cmd_sweep(args, opts) -> int:
    r = resolve(args, opts)
    base = _train_config(r, PenaltyConfig(min_side=r["min_side"]))
    spec = SweepSpec(
        base=base,
        parameter="lambda",
        values=r["lambdas"],
        runs=r["runs"],
        variants=r["variants"],
        kernel_length=r["kernel_length"],
    )
    train_ds, test_ds, _ = _load(r)
    out = _prepare_out(r["out_dir"])
    write_manifest(out, "sweep", r, [r["train_data"], r["test_data"]], ["manifest.json", "sweep.csv", "pareto.csv"])
    points = sweep(spec, train_ds, test_ds, jobs=r["jobs"])
    write_points_csv(points, out / "sweep.csv")
    write_points_csv(pareto_front(points), out / "pareto.csv")
    _print_points(points)
    return EXIT_PARTIAL if any(p.failures for p in points) else 0


def cmd_kernel_sweep(args, opts) -> int:
    r = resolve(args, opts)
    base = _train_config(r, PenaltyConfig(min_side=r["min_side"]))
    spec = SweepSpec(
        base=base,
        parameter="kernel_length",
        values=r["kernel_lengths"],
        runs=r["runs"],
        variants=r["variants"],
        lambdas=r["lambdas"],
    )
    train_ds, test_ds, _ = _load(r)
    out = _prepare_out(r["out_dir"])
    write_manifest(out, "kernel-sweep", r, [r["train_data"], r["test_data"]], ["manifest.json", "kernel_sweep.csv"])
    points = kernel_length_sweep(spec, train_ds, test_ds, jobs=r["jobs"])
    write_points_csv(points, out / "kernel_sweep.csv")
    _print_points(points)
    return EXIT_PARTIAL if any(p.failures for p in points) else 0


def cmd_pareto(args, opts) -> int:
    r = resolve(args, opts)
    try:
        points = read_points_csv(r["sweep_csv"])
    except (OSError, ValueError) as e:
        raise IngestionError(f"cannot read sweep file: {e}") from e
    if r["per_variant"]:
        front = []
        for v in dict.fromkeys(p.variant for p in points):
            front.extend(pareto_front([p for p in points if p.variant == v]))
    else:
        front = pareto_front(points)
    out = _prepare_out(r["out_dir"])
    write_manifest(out, "pareto", r, [r["sweep_csv"]], ["manifest.json", "pareto.csv"])
    write_points_csv(front, out / "pareto.csv")
    _print_points(front)
    return 0


def cmd_pairwise_sim(args, opts) -> int:
    r = resolve(args, opts)
    corpus = PairCorpusConfig(
        n_pairs=r["n_pairs"],
        subgroup_rate=r["subgroup_rate"],
        bias_strength=r["bias_strength"],
        n_buckets=r["n_buckets"],
        seed=r["corpus_seed"],
    )
    tcfg = TrainConfig(
        epochs=r["epochs"],
        batch_size=r["batch_size"],
        learning_rate=r["learning_rate"],
        hidden_units=r["hidden_units"],
        penalty=PenaltyConfig(min_side=r["min_side"]),
    )
    length = r["kernel_length"] if r["kernel_length"] > 0 else None
    sim = PairSimConfig(
        corpus=corpus,
        train=tcfg,
        corr_lambdas=r["corr_lambdas"],
        mmd_lambdas=r["mmd_lambdas"],
        mmd_kernel=r["mmd_kernel"],
        kernel_length=length,
        accuracy_budget=r["accuracy_budget"],
    )
    if r["runs"] < 1:
        raise ConfigError("runs must be >= 1")
    out = _prepare_out(r["out_dir"])
    names = ("baseline", "corr", "mmd")
    outputs = ["manifest.json", "pairwise_summary.csv"] + [f"pairwise_{n}.csv" for n in names]
    write_manifest(out, "pairwise-sim", r, [], outputs)

    results = [pairwise_sim(sim, r["seed"] + i) for i in range(r["runs"])]
    for n in names:
        (out / f"pairwise_{n}.csv").write_text(mean_report([res.reports[n] for res in results]).to_csv())
    with open(out / "pairwise_summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("seed", "variant", "lambda", "kernel_length", "total_gap", "overall_accuracy", "gap_reduction"))
        for res in results:
            for row in res.summary_rows():
                w.writerow(
                    [res.seed, row["variant"], repr(row["lambda"]), repr(res.kernel_length),
                     repr(row["total_gap"]), repr(row["overall_accuracy"]), repr(row["gap_reduction"])]
                )
        base_gap = np.mean([res.reports["baseline"].total_gap for res in results])
        for n in names:
            gap = float(np.mean([res.reports[n].total_gap for res in results]))
            acc = float(np.mean([res.reports[n].overall_accuracy for res in results]))
            red = 0.0 if n == "baseline" else float(1.0 - gap / base_gap) if base_gap else float("nan")
            w.writerow(["mean", n, "", "", repr(gap), repr(acc), repr(red)])
            print(f"{n:9s} total_gap {gap:+.4f}  pairwise accuracy {acc:.4f}  reduction {red:.1%}")
    return 0


def cmd_fetch_data(args, opts) -> int:
    r = resolve(args, opts)
    src = r["source"]
    blobs = {}
    for name in ADULT_FILES:
        try:
            if "://" in src:
                with urllib.request.urlopen(f"{src.rstrip('/')}/{name}", timeout=60) as resp:
                    blobs[name] = resp.read()
            else:
                blobs[name] = (Path(src) / name).read_bytes()
        except (OSError, ValueError) as e:
            raise IngestionError(f"cannot fetch {name} from {src}: {e}") from e
    # only touch the output directory once every file is in hand
    out = _prepare_out(r["out_dir"])
    sums = []
    for name, blob in blobs.items():
        (out / name).write_bytes(blob)
        sums.append(f"{hashlib.sha256(blob).hexdigest()}  {name}")
        print(f"wrote {out / name}")
    (out / "SHA256SUMS").write_text("\n".join(sums) + "\n")
    write_manifest(out, "fetch-data", r, [out / n for n in ADULT_FILES], ["manifest.json", "SHA256SUMS", *ADULT_FILES])
    return 0


def _print_points(points):
    for p in points:
        print(
            f"{p.variant:13s} lambda={p.lam:<8g} l={p.kernel_length:<8.3g} "
            f"acc={p.acc_mean:.4f}±{p.acc_stderr:.4f} gap={p.gap_mean:.4f}±{p.gap_stderr:.4f}"
        )


# --- parser -------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, Options]]:
    parser = argparse.ArgumentParser(prog="mindiff-lab", description="MinDiff fairness-regularization lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    options = {}

    def command(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", default=None, help="flat JSON config file or run manifest (default: none)")
        p.set_defaults(func=func)
        o = Options(p)
        options[name] = o
        return o

    o = command("train", cmd_train, "train one model on Adult and evaluate it")
    _data_opts(o)
    _train_opts(o, seed=0)
    o.add("--penalty", "none", "none | corr | mmd", choices=("none", "corr", "mmd"))
    o.add("--kernel", "gaussian", "MMD kernel family", choices=("gaussian", "laplace"))
    o.add("--lambda", 0.0, "MinDiff weight")
    o.add("--kernel-length", 0.1, "MMD kernel length")
    o.add("--out-dir", "runs/train", "output directory")

    o = command("sweep", cmd_sweep, "lambda sweep for each penalty variant on Adult")
    _data_opts(o)
    _train_opts(o)
    o.add("--variants", ("corr", "mmd_gaussian", "mmd_laplace"), "comma-separated variants", type=_strs)
    o.add("--lambdas", DEFAULT_LAMBDAS, "comma-separated MinDiff weights", type=_floats)
    o.add("--kernel-length", 0.1, "MMD kernel length")
    o.add("--runs", 20, "seeded runs per cell")
    o.add("--jobs", 1, "parallel worker processes")
    o.add("--out-dir", "runs/sweep", "output directory")

    o = command("kernel-sweep", cmd_kernel_sweep, "kernel-length sweep for MMD variants on Adult")
    _data_opts(o)
    _train_opts(o)
    o.add("--variants", ("mmd_gaussian",), "comma-separated mmd variants", type=_strs)
    o.add("--lambdas", KERNEL_SWEEP_LAMBDAS, "comma-separated MinDiff weights, one curve each", type=_floats)
    o.add("--kernel-lengths", DEFAULT_KERNEL_LENGTHS, "comma-separated kernel lengths", type=_floats)
    o.add("--runs", 20, "seeded runs per cell")
    o.add("--jobs", 1, "parallel worker processes")
    o.add("--out-dir", "runs/kernel_sweep", "output directory")

    o = command("pareto", cmd_pareto, "extract the Pareto front from a sweep CSV")
    o.parser.add_argument("sweep_csv_pos", nargs="?", metavar="SWEEP_CSV", help="sweep.csv to read")
    o.add("--sweep-csv", "runs/sweep/sweep.csv", "sweep.csv to read (positional form also accepted)")
    o.add("--per-variant", False, "one front per variant instead of a global front")
    o.add("--out-dir", "runs/pareto", "output directory")

    o = command("pairwise-sim", cmd_pairwise_sim, "baseline vs Corr vs MMD on a synthetic click-pair corpus")
    o.add("--seed", 0, "base training seed; run i uses seed+i")
    o.add("--runs", 1, "number of seeded simulations")
    o.add("--corpus-seed", 0, "corpus generator seed")
    o.add("--n-pairs", 20000, "pairs per corpus")
    o.add("--subgroup-rate", 0.3, "probability an item is in the subgroup")
    o.add("--bias-strength", 1.0, "how strongly the subgroup's relevance signal is depressed")
    o.add("--n-buckets", 4, "satisfaction buckets")
    o.add("--epochs", 5, "training epochs")
    o.add("--batch-size", 256, "pairs per mini-batch")
    o.add("--learning-rate", 1e-3, "Adam learning rate")
    o.add("--hidden-units", 64, "hidden layer width")
    o.add("--min-side", 2, "minimum pairs per side before the penalty applies")
    o.add("--corr-lambdas", PairSimConfig.corr_lambdas, "candidate Corr weights", type=_floats)
    o.add("--mmd-lambdas", PairSimConfig.mmd_lambdas, "candidate MMD weights", type=_floats)
    o.add("--mmd-kernel", "gaussian", "MMD kernel family", choices=("gaussian", "laplace"))
    o.add("--kernel-length", 0.0, "MMD kernel length; 0 = std of baseline validation alphas")
    o.add("--accuracy-budget", 0.015, "allowed validation accuracy drop when picking lambda")
    o.add("--out-dir", "runs/pairwise", "output directory")

    o = command("fetch-data", cmd_fetch_data, "download UCI Adult files and write checksums")
    o.add("--source", UCI_BASE, "base URL or local directory holding adult.data/adult.test")
    o.add("--out-dir", "data/adult", "output directory")
    return parser, options


def main(argv=None) -> int:
    parser, options = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "pareto" and args.sweep_csv_pos:
        args.sweep_csv = args.sweep_csv_pos
    try:
        return args.func(args, options[args.command])
    except (CliConfigError, ConfigError, DataConfigError, MetricError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as e:
        print(f"ingestion error: {e}", file=sys.stderr)
        return EXIT_INGEST
    except TrainingDivergence as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
