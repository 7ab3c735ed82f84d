"""UCI Adult ingestion, group-label masking and a synthetic click-pair corpus."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from .penalties import GROUP_UNKNOWN

log = logging.getLogger(__name__)

ADULT_COLUMNS = (
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
)
NUMERIC_COLUMNS = ("age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week")
CATEGORICAL_COLUMNS = (
    "workclass",
    "education",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "native-country",
)


class IngestionError(RuntimeError):
    """Input data could not be read or produced no usable rows."""


class DataConfigError(ValueError):
    pass


@dataclass
class Dataset:
    """Features, binary labels and group attribute (``GROUP_UNKNOWN`` = unobserved)."""

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.a = np.asarray(self.a, dtype=np.int8)
        n = self.x.shape[0]
        if self.x.ndim != 2 or self.y.shape != (n,) or self.a.shape != (n,):
            raise DataConfigError(
                f"inconsistent shapes x={self.x.shape} y={self.y.shape} a={self.a.shape}"
            )
        if not np.isin(self.y, (0, 1)).all():
            raise DataConfigError("labels must be 0/1")
        if not np.isin(self.a, (0, 1, GROUP_UNKNOWN)).all():
            raise DataConfigError("group values must be 0, 1 or GROUP_UNKNOWN")

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.a[idx], list(self.feature_names))


@dataclass
class ColumnSchema:
    name: str
    kind: str  # "numeric" | "categorical"
    vocabulary: list[str] | None = None
    mean: float | None = None
    std: float | None = None

    def output_names(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        return [f"{self.name}={v}" for v in self.vocabulary]


@dataclass
class AdultSchema:
    columns: list[ColumnSchema]
    sensitive_column: str
    protected_value: str
    dropped_columns: list[str]
    stats: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return [n for c in self.columns for n in c.output_names()]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "AdultSchema":
        d = json.loads(text)
        d["columns"] = [ColumnSchema(**c) for c in d["columns"]]
        return cls(**d)


def _read_adult_file(path, skip_header: bool) -> pd.DataFrame:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e
    if skip_header and lines and lines[0].startswith("|"):
        lines = lines[1:]
    rows = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(ADULT_COLUMNS):
            raise IngestionError(f"{path}: expected {len(ADULT_COLUMNS)} fields, got {len(parts)}: {line[:60]!r}")
        rows.append(parts)
    df = pd.DataFrame(rows, columns=list(ADULT_COLUMNS))
    df["income"] = df["income"].str.rstrip(".")
    return df


def _clean(df: pd.DataFrame, name: str) -> tuple[pd.DataFrame, int]:
    missing = (df == "?").any(axis=1)
    dropped = int(missing.sum())
    df = df.loc[~missing].reset_index(drop=True)
    for c in NUMERIC_COLUMNS:
        try:
            df[c] = df[c].astype(np.float64)
        except ValueError as e:
            raise IngestionError(f"{name}: non-numeric value in column {c}: {e}") from e
    bad = ~df["income"].isin(["<=50K", ">50K"])
    if bad.any():
        raise IngestionError(f"{name}: unexpected income label {df['income'][bad].iloc[0]!r}")
    return df, dropped


def load_adult(
    train_path,
    test_path,
    *,
    sensitive_column: str = "sex",
    protected_value: str = "Female",
    drop_columns: tuple[str, ...] = ("fnlwgt",),
    include_sensitive: bool = False,
) -> tuple[Dataset, Dataset, AdultSchema]:
    """Load ``adult.data`` / ``adult.test`` into standardized, one-hot datasets.

    Label is 1 for income ``>50K``.  The group attribute is 1 where
    ``sensitive_column == protected_value``.  Rows with any ``?`` are dropped.
    Every transformation is fitted on the training file only; test-time
    categories absent from training encode as all zeros.  The sensitive
    column is excluded from the features unless ``include_sensitive``.
    """
    train_df, drop_train = _clean(_read_adult_file(train_path, skip_header=False), str(train_path))
    test_df, drop_test = _clean(_read_adult_file(test_path, skip_header=True), str(test_path))
    if len(train_df) == 0 or len(test_df) == 0:
        raise IngestionError("no usable rows after dropping missing values")
    if sensitive_column not in CATEGORICAL_COLUMNS:
        raise DataConfigError(f"sensitive column must be categorical, got {sensitive_column!r}")

    dropped_cols = list(drop_columns)
    if not include_sensitive:
        dropped_cols.append(sensitive_column)
    columns: list[ColumnSchema] = []
    for name in ADULT_COLUMNS[:-1]:
        if name in dropped_cols:
            continue
        if name in NUMERIC_COLUMNS:
            col = train_df[name].to_numpy()
            std = float(col.std())
            if std <= 0:
                dropped_cols.append(name)
                continue
            columns.append(ColumnSchema(name, "numeric", mean=float(col.mean()), std=std))
        else:
            columns.append(ColumnSchema(name, "categorical", vocabulary=sorted(train_df[name].unique())))

    schema = AdultSchema(columns, sensitive_column, protected_value, dropped_cols)
    train, unseen_train = _encode(train_df, schema)
    test, unseen_test = _encode(test_df, schema)
    schema.stats = {
        "train_rows": len(train),
        "test_rows": len(test),
        "train_dropped_missing": drop_train,
        "test_dropped_missing": drop_test,
        "test_unseen_category_values": unseen_test,
    }
    if drop_train or drop_test:
        log.info("dropped rows with missing values: train=%d test=%d", drop_train, drop_test)
    if unseen_test:
        log.warning("test split has %d values from categories unseen in training", unseen_test)
    return train, test, schema


def _encode(df: pd.DataFrame, schema: AdultSchema) -> tuple[Dataset, int]:
    blocks = []
    unseen = 0
    for c in schema.columns:
        if c.kind == "numeric":
            blocks.append(((df[c.name].to_numpy() - c.mean) / c.std)[:, None])
        else:
            pos = {v: i for i, v in enumerate(c.vocabulary)}
            idx = df[c.name].map(pos)
            missing = idx.isna().to_numpy()
            unseen += int(missing.sum())
            block = np.zeros((len(df), len(c.vocabulary)))
            ok = np.flatnonzero(~missing)
            block[ok, idx.to_numpy()[ok].astype(np.int64)] = 1.0
            blocks.append(block)
    x = np.hstack(blocks)
    y = (df["income"] == ">50K").to_numpy().astype(np.int8)
    a = (df[schema.sensitive_column] == schema.protected_value).to_numpy().astype(np.int8)
    return Dataset(x, y, a, schema.feature_names), unseen


def mask_group_labels(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep the group attribute on exactly ``floor(fraction * n)`` seeded-random rows."""
    if not (0.0 < fraction <= 1.0):
        raise DataConfigError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(dataset)
    keep = math.floor(fraction * n)
    rng = np.random.default_rng(seed)
    a = np.full(n, GROUP_UNKNOWN, dtype=np.int8)
    idx = rng.permutation(n)[:keep]
    a[idx] = dataset.a[idx]
    return Dataset(dataset.x, dataset.y, a, list(dataset.feature_names))


# --- synthetic click pairs -------------------------------------------------


@dataclass(frozen=True)
class PairCorpusConfig:
    n_pairs: int = 20000
    subgroup_rate: float = 0.3
    bias_strength: float = 1.0
    n_buckets: int = 4
    seed: int = 0
    n_noise_features: int = 2
    signal_noise: float = 0.5
    signal_shift: float = 1.0
    proxy_noise: float = 0.5
    click_sharpness: float = 3.0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise DataConfigError("n_pairs must be >= 1")
        if self.n_buckets < 1:
            raise DataConfigError("n_buckets must be >= 1")
        if not 0.0 < self.subgroup_rate < 1.0:
            raise DataConfigError("subgroup_rate must lie in (0, 1)")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise DataConfigError("bias_strength must lie in [0, 1]")
        if self.n_noise_features < 0 or self.signal_noise < 0 or self.proxy_noise <= 0:
            raise DataConfigError("noise settings must be non-negative (proxy_noise > 0)")


@dataclass(frozen=True)
class PairExample:
    x_clicked: np.ndarray
    x_unclicked: np.ndarray
    a_clicked: int
    a_unclicked: int
    bucket: int


@dataclass
class PairCorpus:
    """Column-oriented store of click pairs; iterating yields :class:`PairExample`."""

    x_clicked: np.ndarray
    x_unclicked: np.ndarray
    a_clicked: np.ndarray
    a_unclicked: np.ndarray
    bucket: np.ndarray

    def __len__(self):
        return self.bucket.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> PairExample:
        return PairExample(
            self.x_clicked[i], self.x_unclicked[i], int(self.a_clicked[i]), int(self.a_unclicked[i]), int(self.bucket[i])
        )

    def subset(self, idx) -> "PairCorpus":
        return PairCorpus(
            self.x_clicked[idx], self.x_unclicked[idx], self.a_clicked[idx], self.a_unclicked[idx], self.bucket[idx]
        )

    @property
    def beta(self) -> np.ndarray:
        return self.a_clicked.astype(np.int64) - self.a_unclicked.astype(np.int64)

    @classmethod
    def from_examples(cls, pairs) -> "PairCorpus":
        pairs = list(pairs)
        return cls(
            np.array([p.x_clicked for p in pairs], dtype=np.float64),
            np.array([p.x_unclicked for p in pairs], dtype=np.float64),
            np.array([p.a_clicked for p in pairs], dtype=np.int8),
            np.array([p.a_unclicked for p in pairs], dtype=np.int8),
            np.array([p.bucket for p in pairs], dtype=np.int64),
        )


def _items(rng, n, cfg: PairCorpusConfig):
    g = (rng.random(n) < cfg.subgroup_rate).astype(np.int8)
    rel = rng.standard_normal(n)
    # subgroup items show a depressed relevance signal
    signal = rel - cfg.signal_shift * cfg.bias_strength * g + cfg.signal_noise * rng.standard_normal(n)
    proxy = g + cfg.proxy_noise * rng.standard_normal(n)
    noise = rng.standard_normal((n, cfg.n_noise_features))
    return np.column_stack([signal, proxy, noise]), g, rel


def generate_pair_corpus(cfg: PairCorpusConfig) -> PairCorpus:
    """Seeded synthetic corpus of (clicked, unclicked) item pairs.

    Each item has a latent relevance; the first feature is a noisy view of
    it, lowered by ``bias_strength * signal_shift`` for subgroup items; the
    second is a noisy group proxy; the rest are pure noise.  Within a pair
    the click goes to either item with logistic odds in the relevance
    difference.  The satisfaction bucket comes from the clicked item's
    relevance cut at standard-normal quantiles.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_pairs
    x1, g1, r1 = _items(rng, n, cfg)
    x2, g2, r2 = _items(rng, n, cfg)
    p_first = 1.0 / (1.0 + np.exp(-cfg.click_sharpness * (r1 - r2)))
    first = rng.random(n) < p_first
    xc = np.where(first[:, None], x1, x2)
    xu = np.where(first[:, None], x2, x1)
    gc = np.where(first, g1, g2)
    gu = np.where(first, g2, g1)
    rc = np.where(first, r1, r2)
    if cfg.n_buckets > 1:
        cuts = norm.ppf(np.arange(1, cfg.n_buckets) / cfg.n_buckets)
        bucket = np.searchsorted(cuts, rc)
    else:
        bucket = np.zeros(n, dtype=np.int64)
    return PairCorpus(xc, xu, gc.astype(np.int8), gu.astype(np.int8), bucket.astype(np.int64))
