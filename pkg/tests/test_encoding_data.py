import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synrecourse.data import (
    DataLoadError,
    load_dataset,
    sample_synthetic,
    save_dataset,
    train_test_split,
)
from synrecourse.encoding import BinaryEncoder, encode_binary
from synrecourse.task import load_task, task_from_dict


@pytest.mark.parametrize(
    "name, n_features, width, n_functions",
    [("syn", 10, 40, 6), ("syn_long", 14, 64, 10), ("german", 10, 44, 7), ("adult", 14, 125, 6)],
)
def test_shipped_shapes(name, n_features, width, n_functions):
    task = load_task(name)
    assert len(task.schema.names) == n_features
    assert task.encoder.width == width
    assert len(task.library.functions) == n_functions


def test_encoding_one_hot_per_block(syn):
    ds = sample_synthetic(syn, 50, seed=3)
    X = syn.encoder.transform(ds.rows)
    assert X.shape == (50, 40)
    for f, start in zip(syn.schema.features, syn.encoder.offsets_):
        assert np.all(X[:, start:start + f.width].sum(axis=1) == 1)


def test_encode_binary_matches_transform(syn):
    s = sample_synthetic(syn, 1, seed=0).rows[0]
    np.testing.assert_array_equal(encode_binary(s, syn.encoder), syn.encoder.transform([s])[0])


def test_encoder_is_sklearn_compatible(syn):
    enc = BinaryEncoder(syn.schema)
    assert enc.get_params()["schema"] is syn.schema
    out = enc.fit_transform(sample_synthetic(syn, 3, seed=1).rows)
    assert out.shape == (3, 40)
    assert len(enc.feature_names_out()) == 40


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_encoding_injective_on_distinct_bins(a, b):
    task = load_task("syn")
    s, t = sample_synthetic(task, 1, seed=a).rows[0], sample_synthetic(task, 1, seed=b).rows[0]
    same_bins = all(
        (s[f.name] == t[f.name]) if f.is_categorical else (f.bin_index(s[f.name]) == f.bin_index(t[f.name]))
        for f in task.schema.features
    )
    assert same_bins == np.array_equal(task.encoder.encode(s), task.encoder.encode(t))


def test_bit_labels_render_bins(syn):
    text = [b.describe(True) for b in syn.encoder.bits_]
    assert "education = bachelor" in text
    assert "10000 <= income < 20000" in text
    assert "income < 10000" in text


def test_sampler_is_deterministic(syn):
    a = sample_synthetic(syn, 200, seed=7)
    b = sample_synthetic(syn, 200, seed=7)
    assert a.rows == b.rows and a.labels == b.labels


def test_sampler_zero_rows(syn):
    assert len(sample_synthetic(syn, 0)) == 0


def test_root_uniform_frequencies():
    cfg = {
        "name": "uniform",
        "features": [{"name": "c", "kind": "categorical", "values": ["a", "b", "c", "d"]}],
        "functions": [],
        "generative": {"c": {}},
    }
    task = task_from_dict(cfg)
    ds = sample_synthetic(task, 10000, seed=0)
    k, n = 4, 10000
    sigma = np.sqrt(n * (1 / k) * (1 - 1 / k))
    for v in "abcd":
        count = sum(1 for r in ds.rows if r["c"] == v)
        assert abs(count - n / k) <= 3 * sigma


def test_balanced_syn_counts(syn):
    ds = sample_synthetic(syn, 10004, seed=0, balanced=True)
    assert sum(ds.labels) == 5002
    assert len(ds) - sum(ds.labels) == 5002
    assert all(syn.label(r) == y for r, y in zip(ds.rows[:500], ds.labels[:500]))


def test_csv_roundtrip(tmp_path, syn):
    ds = sample_synthetic(syn, 30, seed=2)
    path = tmp_path / "d.csv"
    save_dataset(ds, path)
    back = load_dataset(path, syn.schema)
    assert back.rows == ds.rows and back.labels == ds.labels


def test_header_only_file_is_empty_dataset(tmp_path, syn):
    path = tmp_path / "empty.csv"
    save_dataset(sample_synthetic(syn, 0), path)
    assert len(load_dataset(path, syn.schema)) == 0


def test_bad_category_names_row(tmp_path, syn):
    ds = sample_synthetic(syn, 3, seed=0)
    path = tmp_path / "bad.csv"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(ds.rows[1]["relation"], "astronaut", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataLoadError, match="row 1"):
        load_dataset(path, syn.schema)


def test_unknown_column_rejected(tmp_path, syn):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(syn.schema.names + ["shoe_size"]) + "\n")
    with pytest.raises(DataLoadError, match="shoe_size"):
        load_dataset(path, syn.schema)


@pytest.mark.parametrize("n", [1, 5, 10, 101])
def test_split_sizes_and_disjoint(syn, n):
    ds = sample_synthetic(syn, n, seed=1)
    train, test = train_test_split(ds, seed=4)
    assert abs(len(train) - 0.8 * n) <= 1
    assert len(train) + len(test) == n
    ids = {id(r) for r in train.rows}
    assert not any(id(r) in ids for r in test.rows)


def test_german_shaped_rows():
    task = load_task("german")
    ds = sample_synthetic(task, 1002, seed=0)
    assert len(ds) == 1002
    assert len(ds.rows[0].values) == 10
