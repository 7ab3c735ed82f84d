import numpy as np
import pytest
from scipy.stats import ks_2samp

from mindiff_lab.data import (
    AdultSchema,
    DataConfigError,
    Dataset,
    IngestionError,
    PairCorpus,
    PairCorpusConfig,
    generate_pair_corpus,
    load_adult,
    mask_group_labels,
)
from mindiff_lab.penalties import GROUP_UNKNOWN

S = np.sqrt(1.5)

# hand encoding of tests/fixtures/adult_tiny.data after the "?" row is dropped
TINY_NAMES = [
    "age",
    "workclass=Private",
    "workclass=State-gov",
    "education=Bachelors",
    "education=HS-grad",
    "education-num",
    "marital-status=Married-civ-spouse",
    "marital-status=Never-married",
    "occupation=Adm-clerical",
    "relationship=Husband",
    "relationship=Not-in-family",
    "race=Black",
    "race=White",
    "capital-gain",
    "native-country=United-States",
]
TINY_TRAIN_X = np.array(
    [
        [-S, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 1, -S, 1],
        [0, 1, 0, 1, 0, S, 1, 0, 1, 1, 0, 1, 0, 0, 1],
        [S, 0, 1, 0, 1, -S, 0, 1, 1, 0, 1, 0, 1, S, 1],
    ]
)
TINY_TEST_X = np.array(
    [
        [0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1],
        [-5 / np.sqrt(200 / 3), 1, 0, 1, 0, S, 1, 0, 1, 1, 0, 1, 0, -S, 1],
    ]
)


class TestTinyAdult:
    def test_exact_train_matrix(self, tiny_adult):
        train, _, schema = load_adult(*tiny_adult)
        assert schema.feature_names == TINY_NAMES
        np.testing.assert_allclose(train.x, TINY_TRAIN_X, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(train.y, [0, 1, 0])
        np.testing.assert_array_equal(train.a, [0, 0, 1])

    def test_exact_test_matrix(self, tiny_adult):
        _, test, schema = load_adult(*tiny_adult)
        np.testing.assert_allclose(test.x, TINY_TEST_X, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(test.y, [1, 0])
        np.testing.assert_array_equal(test.a, [1, 0])
        # "Never-worked" never appears in training
        assert schema.stats["test_unseen_category_values"] == 1

    def test_drop_bookkeeping(self, tiny_adult):
        _, _, schema = load_adult(*tiny_adult)
        assert schema.stats["train_dropped_missing"] == 1
        assert schema.stats["test_dropped_missing"] == 0
        # constant columns vanish along with the fixed drops
        assert {"fnlwgt", "sex", "capital-loss", "hours-per-week"} <= set(schema.dropped_columns)

    def test_include_sensitive(self, tiny_adult):
        train, _, schema = load_adult(*tiny_adult, include_sensitive=True)
        assert "sex=Female" in schema.feature_names
        col = schema.feature_names.index("sex=Female")
        np.testing.assert_array_equal(train.x[:, col], train.a)

    def test_train_numeric_columns_standardized(self, tiny_adult):
        train, _, schema = load_adult(*tiny_adult)
        for i, name in enumerate(schema.feature_names):
            if "=" not in name:
                assert abs(train.x[:, i].mean()) < 1e-12
                assert abs(train.x[:, i].std() - 1) < 1e-12

    def test_deterministic(self, tiny_adult):
        a = load_adult(*tiny_adult)
        b = load_adult(*tiny_adult)
        assert a[0].x.tobytes() == b[0].x.tobytes()
        assert a[2].to_json() == b[2].to_json()

    def test_schema_json_round_trip(self, tiny_adult):
        _, _, schema = load_adult(*tiny_adult)
        assert AdultSchema.from_json(schema.to_json()) == schema

    def test_schema_independent_of_test_file(self, tiny_adult, tmp_path):
        train_path, test_path = tiny_adult
        other = tmp_path / "other.test"
        other.write_text("56, Self-emp-inc, 1, Doctorate, 16, Widowed, Sales, Wife, Other, Female, 0, 5, 9, Peru, >50K.\n")
        a = load_adult(train_path, test_path)[2]
        b = load_adult(train_path, other)[2]
        assert [c.__dict__ for c in a.columns] == [c.__dict__ for c in b.columns]
        assert b.stats["test_unseen_category_values"] > 0

    def test_missing_file(self, tiny_adult, tmp_path):
        with pytest.raises(IngestionError):
            load_adult(tmp_path / "nope.data", tiny_adult[1])

    def test_all_rows_missing(self, tiny_adult, tmp_path):
        p = tmp_path / "bad.data"
        p.write_text("45, ?, 1, Masters, 14, Divorced, Sales, Unmarried, White, Female, 0, 0, 40, United-States, <=50K\n")
        with pytest.raises(IngestionError):
            load_adult(p, tiny_adult[1])

    def test_wrong_field_count(self, tiny_adult, tmp_path):
        p = tmp_path / "short.data"
        p.write_text("1, 2, 3\n")
        with pytest.raises(IngestionError):
            load_adult(p, tiny_adult[1])


class TestFullAdult:
    def test_row_counts(self, adult):
        train, test, schema = adult
        assert len(train) == 30162 and len(test) == 15060
        assert 44000 <= len(train) + len(test) <= 46000

    def test_one_hot_blocks_sum_to_one_on_train(self, adult):
        train, _, schema = adult
        start = 0
        for col in schema.columns:
            width = 1 if col.kind == "numeric" else len(col.vocabulary)
            if col.kind == "categorical":
                np.testing.assert_array_equal(train.x[:, start : start + width].sum(axis=1), 1.0)
            start += width
        assert start == train.n_features

    def test_shapes_and_groups(self, adult):
        train, test, _ = adult
        assert train.n_features == test.n_features
        assert set(np.unique(train.a)) == {0, 1}
        # roughly a third of the rows are women and a quarter earn >50K
        assert 0.25 < train.a.mean() < 0.4
        assert 0.2 < train.y.mean() < 0.3


class TestMasking:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.ds = Dataset(rng.normal(size=(100, 3)), rng.integers(0, 2, 100), rng.integers(0, 2, 100))

    def test_full_fraction_unchanged(self):
        out = mask_group_labels(self.ds, 1.0, seed=3)
        np.testing.assert_array_equal(out.a, self.ds.a)

    def test_half(self):
        out = mask_group_labels(self.ds, 0.5, seed=3)
        assert np.sum(out.a != GROUP_UNKNOWN) == 50
        kept = out.a != GROUP_UNKNOWN
        np.testing.assert_array_equal(out.a[kept], self.ds.a[kept])

    def test_seeded(self):
        a = mask_group_labels(self.ds, 0.3, seed=9)
        b = mask_group_labels(self.ds, 0.3, seed=9)
        np.testing.assert_array_equal(a.a, b.a)

    @pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(DataConfigError):
            mask_group_labels(self.ds, fraction, seed=0)


class TestPairCorpus:
    def test_seeded(self):
        cfg = PairCorpusConfig(n_pairs=500, seed=4)
        a, b = generate_pair_corpus(cfg), generate_pair_corpus(cfg)
        for f in ("x_clicked", "x_unclicked", "a_clicked", "a_unclicked", "bucket"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()

    def test_different_seeds_differ(self):
        a = generate_pair_corpus(PairCorpusConfig(n_pairs=200, seed=1))
        b = generate_pair_corpus(PairCorpusConfig(n_pairs=200, seed=2))
        assert not np.array_equal(a.x_clicked, b.x_clicked)

    def test_shapes(self):
        c = generate_pair_corpus(PairCorpusConfig(n_pairs=300, n_noise_features=3, n_buckets=5))
        assert c.x_clicked.shape == (300, 5) and c.x_unclicked.shape == (300, 5)
        assert set(np.unique(c.bucket)) <= set(range(5))
        assert set(np.unique(c.beta)) <= {-1, 0, 1}

    def test_no_bias_signal_independent_of_group(self):
        c = generate_pair_corpus(PairCorpusConfig(n_pairs=10000, bias_strength=0.0, seed=11))
        signal = c.x_clicked[:, 0]
        stat = ks_2samp(signal[c.a_clicked == 1], signal[c.a_clicked == 0]).statistic
        assert stat < 0.05

    def test_bias_lowers_subgroup_signal(self):
        c = generate_pair_corpus(PairCorpusConfig(n_pairs=10000, bias_strength=1.0, seed=11))
        signal = c.x_clicked[:, 0]
        assert ks_2samp(signal[c.a_clicked == 1], signal[c.a_clicked == 0]).statistic > 0.2

    def test_examples_round_trip(self):
        c = generate_pair_corpus(PairCorpusConfig(n_pairs=20, seed=5))
        back = PairCorpus.from_examples(list(c))
        np.testing.assert_array_equal(back.x_clicked, c.x_clicked)
        np.testing.assert_array_equal(back.bucket, c.bucket)

    @pytest.mark.parametrize(
        "kw", [{"n_pairs": 0}, {"subgroup_rate": 1.0}, {"bias_strength": 1.5}, {"n_buckets": 0}, {"proxy_noise": 0.0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(DataConfigError):
            PairCorpusConfig(**kw)
