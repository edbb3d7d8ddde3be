import numpy as np
import pytest

from wqimpute.data import (Scaler, SparseTensor, SplitSpec, export_csv,
                           fit_scaler, ingest_csv, normalize, split_entries)
from wqimpute.errors import ConfigError, DataError

from conftest import make_tensor


def test_ingest_counts_and_dims(csv_writer):
    path = csv_writer([
        ("a", "ph", "2021-03-01T00:00:00", 7.1),
        ("b", "ph", "2021-03-01T01:00:00", 7.3),
        ("a", "ph", "2021-03-01T01:00:00", 7.2),
    ])
    t = ingest_csv(path)
    assert t.dims == (2, 1, 2)
    assert len(t) == 3


def test_ingest_first_seen_station_order_and_time_sort(csv_writer):
    path = csv_writer([
        ("zeta", "no3", "2021-01-02T00:00:00", 1.0),
        ("alpha", "no3", "2021-01-01T00:00:00", 2.0),
        ("zeta", "ph", "2021-01-01T00:00:00", 3.0),
    ])
    t = ingest_csv(path)
    # stations and parameters keep file order, time slots are chronological
    assert t.station_ids == ("zeta", "alpha")
    assert t.parameter_names == ("no3", "ph")
    assert t.time_stamps == ("2021-01-01T00:00:00", "2021-01-02T00:00:00")
    assert t.k[0] == 1 and t.k[1] == 0


def test_ingest_empty_file_and_header_only(tmp_path, csv_writer):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="no records"):
        ingest_csv(empty)
    with pytest.raises(DataError, match="no records"):
        ingest_csv(csv_writer([]))


def test_ingest_rejects_wrong_header(csv_writer):
    path = csv_writer([("a", "ph", "2021-01-01T00:00:00", 1.0)],
                      header="station,param,time,value")
    with pytest.raises(DataError, match="header"):
        ingest_csv(path)


def test_ingest_malformed_rows_name_the_line(csv_writer):
    path = csv_writer([
        ("a", "ph", "2021-01-01T00:00:00", 1.0),
        ("b", "ph", "2021-01-01T00:00:00"),
    ])
    with pytest.raises(DataError, match="line 3"):
        ingest_csv(path)

    bad_value = csv_writer([("a", "ph", "2021-01-01T00:00:00", "seven")], name="v.csv")
    with pytest.raises(DataError, match="line 2.*seven"):
        ingest_csv(bad_value)

    bad_time = csv_writer([("a", "ph", "yesterday", 1.0)], name="t.csv")
    with pytest.raises(DataError, match="line 2.*yesterday"):
        ingest_csv(bad_time)


def test_ingest_rejects_non_finite_values(csv_writer):
    path = csv_writer([("a", "ph", "2021-01-01T00:00:00", "nan")])
    with pytest.raises(DataError, match="non-finite"):
        ingest_csv(path)


def test_ingest_duplicate_key_names_collision(csv_writer):
    path = csv_writer([
        ("a", "ph", "2021-01-01T00:00:00", 1.0),
        ("a", "ph", "2021-01-01T00:00:00", 2.0),
    ])
    with pytest.raises(DataError, match=r"duplicate key \(a, ph"):
        ingest_csv(path)


def test_ingest_duplicate_detected_across_timestamp_spellings(csv_writer):
    # same instant written two ways is still the same key
    path = csv_writer([
        ("a", "ph", "2021-01-01T06:00:00", 1.0),
        ("a", "ph", "2021-01-01 06:00:00", 2.0),
    ])
    with pytest.raises(DataError, match="duplicate key"):
        ingest_csv(path)


def test_export_then_ingest_roundtrip(tmp_path, csv_writer):
    path = csv_writer([
        ("b", "ph", "2021-01-02T00:00:00", 7.25),
        ("a", "no3", "2021-01-01T00:00:00", 0.125),
        ("a", "ph", "2021-01-02T00:00:00", 6.5),
        ("b", "no3", "2021-01-01T00:00:00", 0.5),
    ])
    t1 = ingest_csv(path)
    out1 = tmp_path / "out1.csv"
    export_csv(t1, out1)
    t2 = ingest_csv(out1)
    assert t1.same_content(t2)
    out2 = tmp_path / "out2.csv"
    export_csv(t2, out2)
    assert out1.read_bytes() == out2.read_bytes()


def test_export_preserves_values_exactly(tmp_path, csv_writer):
    # repr round-trip keeps full float64 precision
    val = 0.1 + 0.2
    path = csv_writer([("a", "ph", "2021-01-01T00:00:00", repr(val))])
    out = tmp_path / "out.csv"
    export_csv(ingest_csv(path), out)
    assert ingest_csv(out).values[0] == val


def test_sparse_tensor_rejects_bad_indices():
    with pytest.raises(DataError, match="outside tensor dims"):
        SparseTensor((2, 2, 2), np.array([2]), np.array([0]), np.array([0]),
                     np.array([1.0]), ("a", "b"), ("p", "q"), ("t0", "t1"))


def test_sparse_tensor_rejects_duplicates():
    with pytest.raises(DataError, match="duplicate"):
        SparseTensor((2, 2, 2), np.array([0, 0]), np.array([0, 0]), np.array([1, 1]),
                     np.array([1.0, 2.0]), ("a", "b"), ("p", "q"), ("t0", "t1"))


def test_sparse_tensor_arrays_read_only():
    t = make_tensor()
    with pytest.raises(ValueError):
        t.values[0] = 99.0


def test_with_values_and_entries_selection():
    t = make_tensor(dims=(2, 2, 3), n_entries=8)
    doubled = t.with_values(t.values * 2)
    assert np.array_equal(doubled.values, t.values * 2)
    assert doubled.station_ids == t.station_ids
    with pytest.raises(DataError, match="entry count"):
        t.with_values(np.zeros(3))

    e = t.entries(np.array([1, 3]))
    assert len(e) == 2
    assert e.x[0] == t.values[1] and e.k[1] == t.k[3]
    assert len(t.entries()) == len(t)


def test_split_sizes_exact_for_default_ratios():
    t = make_tensor(dims=(5, 4, 5), n_entries=100)
    s = split_entries(t, SplitSpec(ratios=(1, 2, 7), seed=3))
    assert (len(s.train), len(s.val), len(s.test)) == (10, 20, 70)


def test_split_is_disjoint_cover_for_any_seed():
    t = make_tensor(dims=(4, 3, 5), n_entries=57)
    for seed in range(5):
        s = split_entries(t, SplitSpec(seed=seed))
        merged = np.concatenate([s.train, s.val, s.test])
        assert len(merged) == 57
        assert len(np.unique(merged)) == 57


def test_split_deterministic_and_seed_sensitive():
    t = make_tensor(dims=(4, 3, 5), n_entries=60)
    a = split_entries(t, SplitSpec(seed=11))
    b = split_entries(t, SplitSpec(seed=11))
    c = split_entries(t, SplitSpec(seed=12))
    assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)
    assert not np.array_equal(a.train, c.train)


def test_split_requires_ten_entries():
    t = make_tensor(dims=(3, 1, 3), n_entries=9)
    with pytest.raises(DataError, match="at least 10"):
        split_entries(t, SplitSpec())


def test_split_spec_rejects_degenerate_ratios():
    with pytest.raises(ConfigError):
        SplitSpec(ratios=(1, 0, 0))
    with pytest.raises(ConfigError):
        SplitSpec(ratios=(1, -1, 2))
    assert abs(sum(SplitSpec(ratios=(1, 2, 7)).fractions()) - 1.0) < 1e-15


def test_split_sizes_within_one_of_ideal():
    t = make_tensor(dims=(4, 3, 6), n_entries=71)
    spec = SplitSpec(ratios=(2, 3, 5), seed=0)
    s = split_entries(t, spec)
    for part, frac in zip((s.train, s.val, s.test), spec.fractions()):
        assert abs(len(part) - frac * 71) < 1.0


def _two_param_tensor():
    # seed 4 trains parameter p on {2, 4} and parameter q on {10, 15}
    i = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1])
    j = np.array([0, 0, 1, 1, 0, 0, 1, 1, 0, 1])
    k = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2])
    vals = np.array([2.0, 4.0, 10.0, 30.0, 3.0, 5.0, 20.0, 15.0, 2.5, 25.0])
    t = SparseTensor((2, 2, 3), i, j, k, vals, ("a", "b"), ("p", "q"),
                     ("t0", "t1", "t2"))
    split = split_entries(t, SplitSpec(ratios=(4, 3, 3), seed=4))
    return t, split


def test_normalize_minmax_and_clamping():
    t = make_tensor(dims=(2, 1, 5), n_entries=10,
                    values=np.array([2.0, 4.0, 3.0, 5.0, 2.0, 4.0, 3.0, 2.5, 4.0, 3.5]))
    split = split_entries(t, SplitSpec(ratios=(5, 3, 2), seed=4))
    norm, scaler = normalize(t, split)
    lo = t.values[split.train].min()
    hi = t.values[split.train].max()
    mid = scaler.transform(np.array([0]), np.array([(lo + hi) / 2.0]))[0]
    assert mid == pytest.approx(0.5)
    # out-of-range held-out values clamp to the unit interval
    assert scaler.transform(np.array([0]), np.array([hi + 1.0]))[0] == 1.0
    assert scaler.transform(np.array([0]), np.array([lo - 1.0]))[0] == 0.0
    assert norm.values.min() >= 0.0 and norm.values.max() <= 1.0
    assert np.all(norm.values[split.train] >= 0.0)
    assert np.all(norm.values[split.train] <= 1.0)


def test_normalize_inverse_is_identity_in_range():
    t, split = _two_param_tensor()
    norm, scaler = normalize(t, split)
    back = scaler.inverse(t.j, norm.values)
    in_range = (t.values >= scaler.mins[t.j]) & (t.values <= scaler.maxs[t.j])
    rel = np.abs(back[in_range] - t.values[in_range]) / np.abs(t.values[in_range])
    assert rel.max() < 1e-12


def test_normalize_is_per_parameter():
    t, split = _two_param_tensor()
    _, scaler = normalize(t, split)
    assert scaler.mins[0] != scaler.mins[1] or scaler.maxs[0] != scaler.maxs[1]
    # value 3 against parameter-0 range differs from the same value on parameter 1
    a = scaler.transform(np.array([0]), np.array([3.0]))[0]
    b = scaler.transform(np.array([1]), np.array([3.0]))[0]
    assert a != b


def test_normalize_degenerate_parameter_warns_and_maps_to_half():
    vals = np.array([5.0] * 6 + [1.0, 2.0, 3.0, 4.0])
    j = np.array([0] * 6 + [1] * 4)
    i = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1])
    k = np.array([0, 0, 1, 1, 2, 2, 0, 1, 2, 3])
    t = SparseTensor((2, 2, 4), i, j, k, vals, ("a", "b"), ("p", "q"),
                     ("t0", "t1", "t2", "t3"))
    split = split_entries(t, SplitSpec(ratios=(8, 1, 1), seed=0))
    with pytest.warns(UserWarning, match="degenerate"):
        norm, scaler = normalize(t, split)
    flat = norm.values[t.j == 0]
    if (t.j[split.train] == 0).any():
        assert np.all(flat == 0.5)


def test_normalize_requires_training_coverage():
    # parameter q appears only outside the training partition
    i = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1])
    j = np.array([0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1])
    k = np.array([0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5])
    t = SparseTensor((2, 2, 6), i, j, k, np.linspace(1, 12, 12),
                     ("a", "b"), ("p", "q"), tuple(f"t{n}" for n in range(6)))
    train = np.flatnonzero(j == 0)[:8]
    rest = np.setdiff1d(np.arange(12), train)
    from wqimpute.data import Split
    split = Split(train=train, val=rest[:2], test=rest[2:])
    with pytest.raises(DataError, match="q"):
        fit_scaler(t, split)


def test_scaler_rejects_inverted_bounds():
    with pytest.raises(DataError, match="max below min"):
        Scaler(mins=np.array([1.0]), maxs=np.array([0.0]))
