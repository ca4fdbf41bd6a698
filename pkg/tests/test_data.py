import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dataset
from locunlearn.data import (
    AccessAudit,
    DataView,
    ForgetSpec,
    SyntheticSpec,
    load_csv,
    load_dataset,
    load_idx,
    make_split,
    make_synthetic,
    mia_calibration_subset,
    read_idx,
    train_test_split,
    write_idx,
)
from locunlearn.errors import ConfigError, ParseError, ValidationError


def balanced(c, per_class, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(c), per_class)
    return dataset(rng.normal(size=(len(y), 3)), y, c)


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(num_classes=2, dim=2, n=8, seed=7)
    a, b = make_synthetic(spec), make_synthetic(spec)
    assert a.checksum == b.checksum
    assert np.array_equal(a.features, b.features)
    assert a.class_counts().tolist() == [4, 4]


def test_dataset_is_read_only():
    d = balanced(2, 3)
    with pytest.raises(ValueError):
        d.features[0, 0] = 1.0


def test_dataset_validates_labels_and_values():
    with pytest.raises(ValidationError):
        dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ValidationError):
        dataset([[np.nan, 0.0]], [0], 2)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(6, 4, 4), dtype=np.uint8)
    write_idx(tmp_path / "x.idx", images)
    write_idx(tmp_path / "y.idx", np.array([0, 1, 2, 0, 1, 2], dtype=np.uint8))
    back = read_idx(tmp_path / "x.idx")
    assert back.tobytes() == images.tobytes() and back.shape == images.shape
    ds = load_idx(tmp_path / "x.idx", tmp_path / "y.idx")
    assert ds.input_shape == (1, 4, 4) and ds.num_classes == 3
    assert ds.features.min() == 0.0 and ds.features.max() == 1.0


def test_idx_parse_errors_carry_offsets(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x00\x01\x08\x01")
    with pytest.raises(ParseError, match="offset 0"):
        read_idx(tmp_path / "bad")
    (tmp_path / "short").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x05\x01\x02")
    with pytest.raises(ParseError) as exc:
        read_idx(tmp_path / "short")
    assert exc.value.offset == 10


def test_csv_loader(tmp_path):
    (tmp_path / "d.csv").write_text("0,1,2\n1,3,4\n\n1,5,6\n")
    ds = load_csv(tmp_path / "d.csv")
    assert ds.labels.tolist() == [0, 1, 1]
    np.testing.assert_allclose(ds.features[0], [0.0, 0.2], rtol=1e-6)


def test_csv_label_out_of_range_is_validation_error(tmp_path):
    (tmp_path / "d.csv").write_text("0,1.0\n2,2.0\n")
    with pytest.raises(ValidationError):
        load_csv(tmp_path / "d.csv", num_classes=2)


def test_csv_malformed_row_reports_byte_offset(tmp_path):
    (tmp_path / "d.csv").write_text("0,1.0\n1,abc\n")
    with pytest.raises(ParseError) as exc:
        load_csv(tmp_path / "d.csv")
    assert exc.value.offset == 6


def test_load_dataset_dispatch():
    ds = load_dataset({"kind": "synthetic", "num_classes": 3, "dim": 4, "n": 9,
                       "input_shape": [1, 2, 2]})
    assert ds.input_shape == (1, 2, 2)
    with pytest.raises(ConfigError):
        load_dataset({"kind": "parquet"})


def test_train_test_split_partitions():
    d = balanced(3, 10)
    tr, te = train_test_split(d, 0.3, 1)
    assert len(tr) == 21 and len(te) == 9


def test_iid_forget_size_at_paper_scale():
    d = dataset(np.zeros((50_000, 1)), np.arange(50_000) % 10, 10)
    s = make_split(d, ForgetSpec("iid", 0.10, seed=3))
    assert len(s.forget_indices) == 5000


def test_non_iid_takes_half_of_each_listed_class():
    d = balanced(10, 500)
    s = make_split(d, ForgetSpec("non_iid", 0.10, (2, 5), seed=0))
    counts = np.bincount(d.labels[s.forget_indices], minlength=10)
    assert counts[2] == 250 and counts[5] == 250 and counts.sum() == 500


def test_non_iid_shortfall_moves_to_other_class():
    y = np.array([0] * 3 + [1] * 30 + [2] * 7)
    d = dataset(np.zeros((40, 1)), y, 3)
    s = make_split(d, ForgetSpec("non_iid", 0.25, (0, 1), seed=0))
    counts = np.bincount(d.labels[s.forget_indices], minlength=3)
    assert counts.tolist() == [3, 7, 0]


def test_non_iid_impossible_fraction_lists_shortfall():
    y = np.array([0] * 2 + [1] * 2 + [2] * 16)
    d = dataset(np.zeros((20, 1)), y, 3)
    with pytest.raises(ConfigError, match="shortfall 2"):
        make_split(d, ForgetSpec("non_iid", 0.3, (0, 1), seed=0))


def test_singleton_forget_set():
    d = balanced(2, 10)
    s = make_split(d, ForgetSpec("iid", 0.05, seed=0))
    assert len(s.forget_indices) == 1


def test_forget_spec_validation():
    with pytest.raises(ConfigError):
        ForgetSpec("non_iid", 0.1)
    with pytest.raises(ConfigError):
        ForgetSpec("iid", 1.0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(10, 300), c=st.integers(2, 6), frac=st.floats(0.02, 0.5),
       kind=st.sampled_from(["iid", "non_iid"]), seed=st.integers(0, 1000))
def test_split_partition_purity_and_size(n, c, frac, kind, seed):
    d = dataset(np.zeros((n, 1)), np.arange(n) % c, c)
    classes = (0, c - 1)
    spec = ForgetSpec(kind, frac, classes if kind == "non_iid" else (), seed)
    target = int(np.floor(frac * n + 0.5))
    if target < 1 or (kind == "non_iid" and target > sum(d.class_counts()[list(classes)])):
        with pytest.raises(ConfigError):
            make_split(d, spec)
        return
    s = make_split(d, spec)
    both = np.concatenate([s.forget_indices, s.retain_indices])
    assert sorted(both.tolist()) == list(range(n))
    assert abs(len(s.forget_indices) - target) <= (1 if kind == "iid" else len(classes))
    if kind == "non_iid":
        assert set(d.labels[s.forget_indices].tolist()) <= set(classes)


def test_audit_counts_reads():
    d = balanced(2, 5)
    audit = AccessAudit(len(d))
    view = DataView(d, [1, 3, 5], audit)
    view.take([0, 2])
    list(view.batches(2, seed=0))
    assert audit.reads_of([1]) == 2 and audit.reads_of([3]) == 1
    assert audit.reads_of([0, 2, 4]) == 0
    view.labels_unaudited()
    assert audit.counts.sum() == 5


def test_calibration_matches_test_histogram():
    train = balanced(3, 200, seed=1)
    test = balanced(3, 100, seed=2)
    split = make_split(train, ForgetSpec("iid", 0.1, seed=0))
    idx = mia_calibration_subset(split.retain(), test, seed=4)
    assert np.bincount(train.labels[idx], minlength=3).tolist() == [100, 100, 100]
    assert set(idx.tolist()) <= set(split.retain_indices.tolist())
    assert np.array_equal(idx, mia_calibration_subset(split.retain(), test, seed=4))


def test_calibration_fills_missing_class_with_warning():
    y = np.array([0] * 50 + [1] * 50 + [2] * 50)
    train = dataset(np.zeros((150, 1)), y, 4)
    test = dataset(np.zeros((40, 1)), np.arange(40) % 4, 4)
    split = make_split(train, ForgetSpec("iid", 0.1, seed=0))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        idx = mia_calibration_subset(split.retain(), test, seed=0)
    assert any("histogram" in str(w.message) for w in caught)
    assert len(idx) == 40 and len(set(idx.tolist())) == 40
    counts = np.bincount(train.labels[idx], minlength=4)
    assert counts[3] == 0 and counts[:3].min() >= 10


def test_calibration_needs_retain_at_least_test_size():
    small = balanced(2, 3)
    with pytest.raises(ConfigError):
        mia_calibration_subset(DataView(small), balanced(2, 10), 0)
