import numpy as np
import pytest

from wqimpute import metrics
from wqimpute.errors import ConfigError, DataError

import oracles as orc


def test_score_perfect_predictions():
    r = metrics.score(np.array([0.2, 0.5, 0.9]), np.array([0.2, 0.5, 0.9]))
    assert r.rmse == 0.0
    assert r.mae == 0.0
    assert r.count == 3


def test_score_single_pair():
    r = metrics.score(np.array([1.0]), np.array([0.5]))
    assert r.rmse == 0.5
    assert r.mae == 0.5


def test_report_formatting_matches_four_decimals():
    r = metrics.EvalReport(rmse=0.0203, mae=0.0135, count=100,
                           model_kind="nlr-cnn", split_name="test",
                           scale="normalized")
    assert r.metrics_line() == "RMSE 0.0203, MAE 0.0135"
    assert "RMSE 0.0203, MAE 0.0135" in r.text_block()
    assert "nlr-cnn" in r.text_block()


def test_report_csv_line_matches_header():
    r = metrics.EvalReport(rmse=0.25, mae=0.125, count=8, model_kind="cp",
                           split_name="val", scale="raw")
    fields = r.csv_line().split(",")
    assert len(fields) == len(metrics.EVAL_CSV_HEADER.split(","))
    assert fields[0] == "cp" and fields[1] == "val" and fields[2] == "raw"
    assert float(fields[4]) == 0.25 and float(fields[5]) == 0.125


def test_score_validation():
    with pytest.raises(DataError, match="empty"):
        metrics.score(np.array([]), np.array([]))
    with pytest.raises(DataError, match="equal-length"):
        metrics.score(np.array([1.0, 2.0]), np.array([1.0]))


def test_score_matches_loop_reference():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = rng.uniform(0, 1, 37)
        p = rng.uniform(0, 1, 37)
        r = metrics.score(t, p)
        rmse, mae = orc.score_ref(t, p)
        assert r.rmse == pytest.approx(rmse, abs=1e-12)
        assert r.mae == pytest.approx(mae, abs=1e-12)


def test_rmse_dominates_mae():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 50))
        r = metrics.score(rng.uniform(0, 1, n), rng.uniform(0, 1, n))
        assert r.rmse >= r.mae >= 0.0


def test_score_is_permutation_invariant():
    rng = np.random.default_rng(2)
    t = rng.uniform(0, 1, 101)
    p = rng.uniform(0, 1, 101)
    base = metrics.score(t, p)
    perm = rng.permutation(101)
    shuffled = metrics.score(t[perm], p[perm])
    assert shuffled.rmse == pytest.approx(base.rmse, abs=1e-12)
    assert shuffled.mae == pytest.approx(base.mae, abs=1e-12)


def test_synth_observed_count():
    tensor, _ = metrics.synth_generate((20, 10, 30), rank=3,
                                       observed_fraction=0.3, seed=0)
    assert len(tensor) == 1800
    assert tensor.dims == (20, 10, 30)


def test_synth_noiseless_linear_matches_oracle_exactly():
    tensor, oracle = metrics.synth_generate((6, 4, 10), rank=2,
                                            observed_fraction=1.0, seed=1)
    assert len(tensor) == 240
    dense = oracle.dense()
    assert np.array_equal(tensor.values, dense[tensor.i, tensor.j, tensor.k])
    assert dense.max() == 1.0
    assert dense.min() >= 0.0


def test_synth_nonlinear_values_in_open_interval():
    tensor, oracle = metrics.synth_generate((8, 5, 12), rank=3,
                                            observed_fraction=0.5,
                                            nonlinear=True, seed=2)
    d = oracle.dense()
    assert np.all((d > 0.0) & (d < 1.0))
    assert np.all((tensor.values > 0.0) & (tensor.values < 1.0))


def test_synth_noise_perturbs_but_stays_clipped():
    clean, oracle = metrics.synth_generate((6, 4, 10), rank=2,
                                           observed_fraction=0.6, seed=3)
    noisy, oracle2 = metrics.synth_generate((6, 4, 10), rank=2,
                                            observed_fraction=0.6,
                                            noise=0.05, seed=3)
    assert np.array_equal(oracle.dense(), oracle2.dense())
    assert not np.array_equal(clean.values, noisy.values)
    assert noisy.values.min() >= 0.0 and noisy.values.max() <= 1.0


def test_synth_deterministic_and_seed_sensitive():
    a, _ = metrics.synth_generate((5, 3, 8), rank=2, observed_fraction=0.4, seed=4)
    b, _ = metrics.synth_generate((5, 3, 8), rank=2, observed_fraction=0.4, seed=4)
    c, _ = metrics.synth_generate((5, 3, 8), rank=2, observed_fraction=0.4, seed=5)
    assert a.same_content(b)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_synth_identifier_maps():
    tensor, _ = metrics.synth_generate((3, 2, 4), rank=1, observed_fraction=1.0,
                                       seed=6)
    assert tensor.station_ids == ("st000", "st001", "st002")
    assert tensor.parameter_names == ("param00", "param01")
    assert tensor.time_stamps[0] == "2020-01-01T00:00:00"
    assert tensor.time_stamps[1] == "2020-01-01T01:00:00"


def test_synth_argument_validation():
    with pytest.raises(ConfigError):
        metrics.synth_generate((4, 3, 5), rank=0)
    with pytest.raises(ConfigError):
        metrics.synth_generate((4, 0, 5), rank=2)
    with pytest.raises(ConfigError):
        metrics.synth_generate((4, 3, 5), rank=2, observed_fraction=0.0)
    with pytest.raises(ConfigError):
        metrics.synth_generate((4, 3, 5), rank=2, observed_fraction=1.5)
    with pytest.raises(ConfigError):
        metrics.synth_generate((4, 3, 5), rank=2, noise=-0.1)


def test_oracle_answers_any_cell_and_validates():
    tensor, oracle = metrics.synth_generate((4, 3, 5), rank=2,
                                            observed_fraction=0.3, seed=7)
    dense = oracle.dense()
    assert oracle.dims == (4, 3, 5)
    assert oracle.value(2, 1, 4) == dense[2, 1, 4]
    with pytest.raises(DataError, match="out of range"):
        oracle.value(4, 0, 0)
    with pytest.raises(ValueError):
        dense[0, 0, 0] = 99.0  # oracle tensor is read-only


def test_smoothing_taps_form_a_convex_blend():
    assert sum(metrics.SMOOTH_TAPS) == pytest.approx(1.0)
    assert all(t > 0 for t in metrics.SMOOTH_TAPS)
