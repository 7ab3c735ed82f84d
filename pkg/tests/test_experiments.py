import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mindiff_lab.experiments import (
    ParetoPoint,
    PairSimConfig,
    SweepSpec,
    dominates,
    kernel_length_sweep,
    mean_report,
    pairwise_sim,
    pareto_front,
    points_to_csv,
    read_points_csv,
    sweep,
    write_points_csv,
)
from mindiff_lab.data import PairCorpusConfig
from mindiff_lab.penalties import ConfigError
from mindiff_lab.training import TrainConfig

from oracles import pareto_oracle


def pt(acc, gap, variant="corr", lam=0.0):
    return ParetoPoint(variant, lam, 0.1, acc, 0.0, gap, 0.0, 1, 1, 0, 0, "h")


BASE = TrainConfig(epochs=2, batch_size=64, hidden_units=8)


class TestPareto:
    def test_empty(self):
        assert pareto_front([]) == []

    def test_single(self):
        p = pt(0.8, 0.1)
        assert pareto_front([p]) == [p]

    def test_three_points(self):
        a, b, c = pt(0.85, 0.12), pt(0.84, 0.05), pt(0.80, 0.06)
        front = pareto_front([a, b, c])
        assert [(p.acc_mean, p.gap_mean) for p in front] == [(0.84, 0.05), (0.85, 0.12)]

    def test_duplicates_flagged(self):
        front = pareto_front([pt(0.8, 0.1, lam=1.0), pt(0.8, 0.1, lam=2.0), pt(0.8, 0.1, lam=3.0)])
        assert len(front) == 1
        assert front[0].lam == 1.0 and front[0].duplicates == 2

    def test_input_not_mutated(self):
        pts = [pt(0.8, 0.1), pt(0.8, 0.1)]
        pareto_front(pts)
        assert all(p.duplicates == 0 for p in pts)

    def test_dominance_rule(self):
        assert dominates(pt(0.8, 0.1), pt(0.8, 0.2))
        assert not dominates(pt(0.8, 0.1), pt(0.8, 0.1))
        assert not dominates(pt(0.9, 0.2), pt(0.8, 0.1))

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n = int(rng.integers(1, 30))
            # coarse grid to force ties in one coordinate
            vals = [(float(a), float(g)) for a, g in np.round(rng.uniform(size=(n, 2)), 1)]
            uniq = list(dict.fromkeys(vals))
            expected = {uniq[i] for i in pareto_oracle(uniq)}
            got = [(p.acc_mean, p.gap_mean) for p in pareto_front([pt(a, g) for a, g in vals])]
            assert set(got) == expected and len(got) == len(expected)
            assert got == sorted(got, key=lambda v: (v[1], -v[0]))

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), max_size=25))
    def test_mutually_non_dominated_subset(self, vals):
        pts = [pt(a, g) for a, g in vals]
        front = pareto_front(pts)
        for p, q in itertools.permutations(front, 2):
            assert not dominates(q, p)
        assert {(p.acc_mean, p.gap_mean) for p in front} <= set(vals)

    def test_nan_points_ignored(self):
        assert pareto_front([pt(float("nan"), 0.1), pt(0.7, 0.2)]) == [pt(0.7, 0.2)]


class TestCsv:
    def test_round_trip(self, tmp_path):
        pts = [
            pt(0.8123456789012345, 1 / 3, "mmd_gaussian", 0.25),
            ParetoPoint("corr", 2.0, 0.1, 0.7, 0.01, 0.02, 0.003, 20, 19, 0, 19, "abc", False, "4:diverged, badly", True, 2),
        ]
        path = tmp_path / "sweep.csv"
        write_points_csv(pts, path)
        assert read_points_csv(path) == pts

    def test_header(self):
        head = points_to_csv([]).strip()
        assert head.startswith("variant,lam,kernel_length,acc_mean,acc_stderr,gap_mean,gap_stderr")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_points_csv(p)


class TestSweep:
    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            SweepSpec(values=())
        with pytest.raises(ConfigError):
            SweepSpec(values=(1.0, 0.5))
        with pytest.raises(ConfigError):
            SweepSpec(runs=0)
        with pytest.raises(ConfigError):
            SweepSpec(parameter="kernel_length", variants=("corr",))

    def test_zero_lambda_rows_identical(self, toy_split):
        spec = SweepSpec(base=BASE, values=(0.0,), runs=2)
        pts = sweep(spec, *toy_split)
        assert [p.variant for p in pts] == ["corr", "mmd_gaussian", "mmd_laplace"]
        assert len({(p.acc_mean, p.gap_mean, p.acc_stderr) for p in pts}) == 1

    def test_order_independent(self, toy_split):
        a = sweep(SweepSpec(base=BASE, values=(0.5, 2.0), runs=2, variants=("corr", "mmd_laplace")), *toy_split)
        b = sweep(SweepSpec(base=BASE, values=(0.5, 2.0), runs=2, variants=("mmd_laplace", "corr")), *toy_split)
        assert sorted(points_to_csv(a).splitlines()) == sorted(points_to_csv(b).splitlines())

    def test_jobs_do_not_change_output(self, toy_split):
        spec = SweepSpec(base=BASE, values=(0.0, 1.0), runs=2, variants=("mmd_gaussian",))
        assert points_to_csv(sweep(spec, *toy_split, jobs=1)) == points_to_csv(sweep(spec, *toy_split, jobs=2))

    def test_provenance(self, toy_split):
        pts = sweep(SweepSpec(base=TrainConfig(seed=5, epochs=1, hidden_units=4), values=(1.0,), runs=3, variants=("corr",)), *toy_split)
        p = pts[0]
        assert (p.seed_lo, p.seed_hi, p.n_runs, p.n_ok) == (5, 7, 3, 3)
        assert len(p.config_hash) == 12 and not p.single_run

    def test_single_run_flag(self, toy_split):
        p = sweep(SweepSpec(base=BASE, values=(1.0,), runs=1, variants=("corr",)), *toy_split)[0]
        assert p.single_run and p.acc_stderr == 0.0 and p.gap_stderr == 0.0

    def test_kernel_sweep_flags_sweet_spot(self, toy_split):
        spec = SweepSpec(base=BASE, parameter="kernel_length", values=(0.01, 0.2, 2.0), runs=1,
                         variants=("mmd_gaussian",), lambdas=(0.0, 1.0))
        pts = kernel_length_sweep(spec, *toy_split)
        assert len(pts) == 6
        assert [p.sweet_spot for p in pts[:3]] == [False, True, False]
        # zero weight: flat across lengths
        assert len({(p.acc_mean, p.gap_mean) for p in pts[:3]}) == 1


class TestPairSim:
    CFG = PairSimConfig(
        corpus=PairCorpusConfig(n_pairs=1500),
        train=TrainConfig(epochs=2, hidden_units=8),
        corr_lambdas=(0.5,),
        mmd_lambdas=(1.0, 2.0),
    )

    def test_deterministic(self):
        a, b = pairwise_sim(self.CFG, 3), pairwise_sim(self.CFG, 3)
        for k in ("baseline", "corr", "mmd"):
            assert a.reports[k].to_csv() == b.reports[k].to_csv()
        assert a.lambdas == b.lambdas and a.kernel_length == b.kernel_length

    def test_summary_rows(self):
        r = pairwise_sim(self.CFG, 4)
        rows = r.summary_rows()
        assert [row["variant"] for row in rows] == ["baseline", "corr", "mmd"]
        assert rows[0]["gap_reduction"] == 0.0
        assert r.lambdas["corr"] == 0.5

    def test_no_bias_gap_near_zero(self):
        # default corpus size and epochs; smaller runs leave the proxy weight at its random init
        cfg = PairSimConfig(corpus=PairCorpusConfig(bias_strength=0.0), corr_lambdas=(0.5,), mmd_lambdas=(1.0,))
        gaps = np.array([pairwise_sim(cfg, s).reports["baseline"].total_gap for s in range(5)])
        stderr = gaps.std(ddof=1) / np.sqrt(gaps.size)
        assert abs(gaps.mean()) < 0.05
        assert abs(gaps.mean()) <= 3 * stderr

    def test_mean_report(self):
        r = pairwise_sim(self.CFG, 5).reports
        m = mean_report([r["baseline"], r["baseline"]])
        assert m.total_gap == pytest.approx(r["baseline"].total_gap, abs=1e-12)
        assert m.n_pairs == 2 * r["baseline"].n_pairs
