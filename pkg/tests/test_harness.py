import csv
import io
import json
import math
import os

import numpy as np
import pytest

from noisymc.core import SparseObservations
from noisymc.harness import cli
from noisymc.harness.datasets import (
    DataError,
    RatingsDataset,
    eval_real,
    jester_complete_submatrix,
    load_jester,
    load_movielens,
    random_prediction_nmae,
    spectrum_dump,
)
from noisymc.harness.sweep import (
    CSV_COLUMNS,
    ConfigError,
    SweepConfig,
    load_config,
    records_to_csv_text,
    run_sweep,
)

SMALL = dict(model="standard", n=60, r=2, epsilon_grid=[20], snr_grid=[4], noise="standard_gaussian",
             solvers=["optspace", "rank_r_projection"], trials=2, master_seed=3)


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------- configuration


class TestSweepConfig:
    def test_from_dict(self):
        cfg = SweepConfig.from_dict(SMALL)
        assert cfg.epsilon_grid == (20.0,)
        assert cfg.grid() == [(0, 20.0, 4.0)]

    def test_inverse_sqrt_grid(self):
        d = {k: v for k, v in SMALL.items() if k != "snr_grid"}
        cfg = SweepConfig.from_dict({**d, "inv_sqrt_snr_grid": [0, 0.5, 2]})
        assert cfg.snr_grid == (math.inf, 4.0, 0.25)
        assert cfg.noise_spec(math.inf).kind == "none"

    def test_grid_is_epsilon_major(self):
        cfg = SweepConfig.from_dict({**SMALL, "epsilon_grid": [10, 20], "snr_grid": [1, "inf"]})
        assert [(e, s) for _, e, s in cfg.grid()] == [(10, 1), (10, math.inf), (20, 1), (20, math.inf)]

    def test_overrides(self):
        assert SweepConfig.from_dict(SMALL, master_seed=9, trials=None).master_seed == 9

    @pytest.mark.parametrize("patch", [
        {"model": "banded"}, {"noise": "none"}, {"n": 0}, {"trials": 0}, {"epsilon_grid": []},
        {"epsilon_grid": [70]}, {"epsilon_grid": ["x"]}, {"solvers": ["svd"]}, {"solvers": []},
        {"solvers": ["fpca", "fpca"]}, {"snr_grid": [-1]}, {"bogus": 1}, {"rank_source": "guess"},
        {"model": "ill_conditioned"},
    ])
    def test_invalid(self, patch):
        with pytest.raises(ConfigError):
            SweepConfig.from_dict({**SMALL, **patch})

    def test_both_snr_grids_rejected(self):
        with pytest.raises(ConfigError):
            SweepConfig.from_dict({**SMALL, "inv_sqrt_snr_grid": [1]})

    def test_load_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(SMALL))
        assert load_config(p, trials=5).trials == 5

    def test_shipped_configs_parse(self):
        names = sorted(os.listdir(cli.CONFIG_DIR))
        assert {"fig1.json", "fig6.json", "fig1_n200.json"} <= set(names)
        for name in names:
            load_config(os.path.join(cli.CONFIG_DIR, name))


# ---------------------------------------------------------------- sweep


@pytest.fixture(scope="module")
def small_records():
    return run_sweep(SweepConfig.from_dict(SMALL))


class TestRunSweep:
    def test_row_layout(self, small_records):
        kinds = [(r.row_type, r.trial, r.solver) for r in small_records]
        assert kinds == [("trial", 0, "optspace"), ("trial", 0, "rank_r_projection"),
                         ("trial", 1, "optspace"), ("trial", 1, "rank_r_projection"),
                         ("mean", "mean", "optspace"), ("mean", "mean", "rank_r_projection")]

    def test_trial_columns(self, small_records):
        for rec in small_records[:4]:
            assert rec.status.startswith("ok")
            assert rec.rmse >= 0
            eps = rec.realized_E_size / 60
            assert rec.oracle_rmse == pytest.approx(math.sqrt(2 / 4) * math.sqrt((2 * 60 * 2 - 4) / (60 * eps)))
            assert rec.realized_E_size > 0
            assert rec.snr_warning in (0, 1)

    def test_mean_rows(self, small_records):
        mean = small_records[4]
        vals = [r.rmse for r in small_records[:4] if r.solver == "optspace"]
        assert mean.rmse == pytest.approx(np.mean(vals))
        assert mean.status == "ok:2/2"

    def test_projection_is_worst(self):
        cfg = SweepConfig.from_dict({**SMALL, "n": 100, "epsilon_grid": [40], "trials": 1,
                                     "solvers": ["optspace", "admira", "fpca", "rank_r_projection"]})
        trial = {r.solver: r.rmse for r in run_sweep(cfg) if r.row_type == "trial"}
        assert trial["rank_r_projection"] == max(trial.values())

    def test_noiseless_recovery(self):
        cfg = SweepConfig.from_dict({**SMALL, "n": 100, "epsilon_grid": [40], "snr_grid": ["inf"], "trials": 1,
                                     "solvers": ["optspace", "fpca"], "rank_source": "true"})
        for rec in run_sweep(cfg):
            assert rec.rmse <= 1e-3

    def test_solver_failure_is_recorded(self):
        # nothing is revealed, so both solvers raise
        cfg = SweepConfig.from_dict({**SMALL, "n": 4, "epsilon_grid": [1e-9], "trials": 1, "rank_source": "true",
                                     "solvers": ["rank_r_projection", "oracle"]})
        recs = run_sweep(cfg)
        assert [r.status.split(":")[0] for r in recs] == ["error", "error", "ok", "ok"]
        assert recs[2].status == "ok:0/1" and math.isnan(recs[2].rmse)

    def test_csv_schema_and_determinism(self, small_records):
        text = records_to_csv_text(small_records)
        rows = read_csv(text)
        assert list(rows[0]) == CSV_COLUMNS
        assert rows[0]["schema_version"] == "1"
        assert "\r" not in text
        again = records_to_csv_text(run_sweep(SweepConfig.from_dict(SMALL)))
        assert again == text

    def test_parallel_matches_serial(self, small_records):
        par = run_sweep(SweepConfig.from_dict(SMALL), jobs=2)
        assert records_to_csv_text(par) == records_to_csv_text(small_records)

    def test_quantization_records_step(self):
        cfg = SweepConfig.from_dict({**SMALL, "noise": "quantization", "trials": 1, "solvers": ["oracle"]})
        rec = run_sweep(cfg)[0]
        assert rec.quantization_a > 0
        assert rec.realized_snr == pytest.approx(4.0, rel=0.02)
        assert rec.snr_warning == 0


# ---------------------------------------------------------------- datasets


def write_jester(path, rng, users=40, full_users=6):
    lines = []
    for u in range(users):
        ratings = np.round(rng.uniform(-10, 10, 100), 2)
        if u >= full_users:
            ratings[rng.random(100) < 0.6] = 99
        if u == users - 1:
            ratings[2:] = 99  # two ratings: not eligible for the holdout
        count = int(np.sum(ratings != 99))
        lines.append(",".join([str(count)] + [repr(float(x)) if x != 99 else "99" for x in ratings]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_movielens(directory, rng, users=30, items=50):
    pairs = [(u, i) for u in range(1, users + 1) for i in range(1, items + 1) if rng.random() < 0.3]
    rng.shuffle(pairs)
    cut = int(0.8 * len(pairs))
    for name, part in (("u1.base", pairs[:cut]), ("u1.test", pairs[cut:])):
        (directory / name).write_text("".join(f"{u}\t{i}\t{rng.integers(1, 6)}\t881250949\n" for u, i in part))
    return cut, len(pairs) - cut


class TestJester:
    def test_holdout_structure(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng)
        ds = load_jester(f, 20, rng_seed=1)
        assert ds.shape == (20, 100)
        assert np.all(np.bincount(ds.test.rows, minlength=20) == 2)
        assert not ds.train.overlaps(ds.test)
        assert np.all(np.abs(ds.train.values) <= 10) and np.all(np.abs(ds.test.values) <= 10)
        assert ds.meta["excluded_users"] == 1

    def test_deterministic(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng)
        a, b = load_jester(f, 10, 4), load_jester(f, 10, 4)
        assert a.train == b.train and a.test == b.test

    def test_directory_input(self, tmp_path, rng):
        write_jester(tmp_path / "a.csv", rng, users=10)
        write_jester(tmp_path / "b.csv", rng, users=10)
        assert load_jester(tmp_path, 18, 0).shape[0] == 18

    def test_too_many_users(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng, users=5)
        with pytest.raises(DataError):
            load_jester(f, 5, 0)

    def test_malformed_line_number(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng, users=5)
        f.write_text(f.read_text() + "3,1,2\n")
        with pytest.raises(DataError, match=r"jester\.csv:6"):
            load_jester(f, 2, 0)

    def test_out_of_range(self, tmp_path):
        f = tmp_path / "j.csv"
        f.write_text("1," + ",".join(["11"] + ["99"] * 99) + "\n")
        with pytest.raises(DataError, match="outside"):
            load_jester(f, 1, 0)

    def test_missing_path(self, tmp_path):
        with pytest.raises(DataError):
            load_jester(tmp_path / "nope.csv", 1, 0)

    def test_complete_submatrix_and_spectrum(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng)
        full = jester_complete_submatrix(f)
        assert full.shape == (6, 100)
        s = spectrum_dump(f)
        assert np.all(np.diff(s) <= 0)

    def test_spectrum_rank_two(self, rng):
        A = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 20))
        s = spectrum_dump(A)
        assert int(np.sum(s > 1e-8 * s[0])) == 2

    def test_spectrum_without_complete_rows(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng, full_users=0)
        with pytest.raises(DataError):
            spectrum_dump(f)


class TestMovieLens:
    def test_split_sizes(self, tmp_path, rng):
        n_base, n_test = write_movielens(tmp_path, rng)
        ds = load_movielens(tmp_path / "u1.base", tmp_path / "u1.test")
        assert (ds.train.size, ds.test.size) == (n_base, n_test)
        assert set(np.unique(np.concatenate([ds.train.values, ds.test.values]))) <= {1.0, 2.0, 3.0, 4.0, 5.0}
        assert ds.shape[0] <= 30 and ds.shape[1] <= 50

    def test_overlap_rejected(self, tmp_path):
        (tmp_path / "b").write_text("1\t1\t3\t0\n")
        (tmp_path / "t").write_text("1\t1\t4\t0\n")
        with pytest.raises(DataError, match="both splits"):
            load_movielens(tmp_path / "b", tmp_path / "t")

    def test_malformed(self, tmp_path):
        (tmp_path / "b").write_text("1\t1\t3\t0\n1 2 3 4\n")
        (tmp_path / "t").write_text("2\t1\t4\t0\n")
        with pytest.raises(DataError, match=r"b:2"):
            load_movielens(tmp_path / "b", tmp_path / "t")


class TestEvalReal:
    @pytest.fixture
    def lowrank_ratings(self, rng):
        M = np.clip(3 + rng.standard_normal((60, 2)) @ rng.standard_normal((2, 40)) * 0.5, 1, 5)
        mask = rng.random(M.shape) < 0.5
        test_mask = (~mask) & (rng.random(M.shape) < 0.3)
        return RatingsDataset("synthetic", SparseObservations.from_dense(M, mask),
                              SparseObservations.from_dense(M, test_mask), 1.0, 5.0)

    @pytest.mark.parametrize("solver", ["optspace", "incremental_optspace", "admira", "fpca"])
    def test_solvers_beat_midpoint(self, lowrank_ratings, solver):
        base, _ = eval_real(lowrank_ratings, "midpoint")
        rep, row = eval_real(lowrank_ratings, solver, rank=2)
        assert rep.status.startswith("ok")
        assert 0 <= rep.nmae < base.nmae
        assert row["nmae"] == rep.nmae

    def test_fpca_sigma_flagged(self, lowrank_ratings):
        _, row = eval_real(lowrank_ratings, "fpca")
        assert row["sigma_heuristic"] == pytest.approx(0.1 * np.std(lowrank_ratings.train.values))

    def test_unknown_solver(self, lowrank_ratings):
        with pytest.raises(ValueError):
            eval_real(lowrank_ratings, "svd")

    def test_overlapping_dataset_rejected(self):
        obs = SparseObservations((2, 2), [0], [0], [3.0])
        with pytest.raises(DataError):
            RatingsDataset("x", obs, obs, 1.0, 5.0)


class TestRandomBaseline:
    def test_value_and_determinism(self):
        v = random_prediction_nmae(7, 100_000)
        assert v == pytest.approx(1 / 3, abs=0.01)
        assert v == random_prediction_nmae(7, 100_000)

    def test_needs_pairs(self):
        with pytest.raises(ValueError):
            random_prediction_nmae(0, 0)


# ---------------------------------------------------------------- CLI


class TestCli:
    def test_sweep(self, tmp_path, capsys):
        cfgf = tmp_path / "c.json"
        cfgf.write_text(json.dumps(SMALL))
        out = tmp_path / "out.csv"
        assert cli.main(["sweep", "--config", str(cfgf), "--out", str(out), "--trials", "1"]) == 0
        rows = read_csv(out.read_text())
        assert len(rows) == 4
        assert (tmp_path / "out.timing.csv").exists()

    def test_sweep_seed_changes_output(self, tmp_path):
        cfgf = tmp_path / "c.json"
        cfgf.write_text(json.dumps({**SMALL, "trials": 1}))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cli.main(["sweep", "--config", str(cfgf), "--out", str(a), "--seed", "1"])
        cli.main(["sweep", "--config", str(cfgf), "--out", str(b), "--seed", "2"])
        assert a.read_text() != b.read_text()

    def test_config_errors_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({**SMALL, "n": -1}))
        out = str(tmp_path / "o.csv")
        assert cli.main(["sweep", "--config", str(bad), "--out", out]) == 1
        assert cli.main(["sweep", "--config", str(tmp_path / "missing.json"), "--out", out]) == 1
        bad.write_text("{not json")
        assert cli.main(["sweep", "--config", str(bad), "--out", out]) == 1
        with pytest.raises(SystemExit) as exc:
            cli.main(["sweep", "--out", out])
        assert exc.value.code == 1

    def test_data_errors_exit_2(self, tmp_path):
        out = str(tmp_path / "o.csv")
        assert cli.main(["eval-real", "--dataset", "movielens", "--path", str(tmp_path), "--solver", "optspace",
                         "--out", out]) == 2
        assert cli.main(["spectrum", "--dataset", "jester", "--path", str(tmp_path / "x"), "--out", out]) == 2

    def test_eval_real_movielens(self, tmp_path, rng):
        write_movielens(tmp_path, rng)
        out = tmp_path / "ml.csv"
        assert cli.main(["eval-real", "--dataset", "movielens", "--path", str(tmp_path), "--solver", "midpoint",
                         "--out", str(out)]) == 0
        row = read_csv(out.read_text())[0]
        assert row["dataset"] == "movielens" and float(row["nmae"]) > 0

    def test_eval_real_jester_and_spectrum(self, tmp_path, rng):
        f = write_jester(tmp_path / "jester.csv", rng)
        out = tmp_path / "j.csv"
        assert cli.main(["eval-real", "--dataset", "jester", "--path", str(f), "--solver", "optspace",
                         "--users", "30", "--rank", "2", "--out", str(out)]) == 0
        assert read_csv(out.read_text())[0]["status"].startswith("ok")
        spec = tmp_path / "s.csv"
        assert cli.main(["spectrum", "--dataset", "jester", "--path", str(f), "--out", str(spec)]) == 0
        assert len(read_csv(spec.read_text())) == 6

    def test_rand_baseline(self, capsys):
        assert cli.main(["rand-baseline", "--pairs", "1000", "--seed", "3"]) == 0
        assert 0.25 < float(capsys.readouterr().out) < 0.42
        assert cli.main(["rand-baseline", "--pairs", "0", "--seed", "3"]) == 1
