import numpy as np
import pytest
from conftest import write_csv

from safe_ids.errors import ConfigError, DataError
from safe_ids.ingest import (
    Dataset,
    Normalizer,
    SplitSpec,
    apply_normalizer,
    filter_normal,
    fit_normalizer,
    load_dataset,
    read_dataset,
    save_dataset,
    split,
)


def _ds(n, d=2, labels=None, seed=0):
    X = np.random.default_rng(seed).normal(size=(n, d))
    y = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    return Dataset(X, y, tuple(f"f{i}" for i in range(d)))


def test_labels_map_from_raw_values(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["x", "y", "label"], [[1, 2, "normal"], [3, 4, "dos"], [5, 6, "normal"], [7, 8, "scan"]])
    ds = load_dataset(p, "label", {"dos", "scan"})
    assert ds.labels.tolist() == [0, 1, 0, 1]
    assert ds.column_names == ("x", "y")


def test_constant_column_is_kept_and_flagged(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["x", "c", "label"], [[1, 3, 0], [2, 3, 1], [4, 3, 0]])
    ds = load_dataset(p, "label", {"1"})
    assert ds.d == 2
    assert ds.constant_columns == ["c"]


def test_fifty_nine_feature_schema(tmp_path):
    # column count of the largest benchmark table; names are placeholders
    header = [f"feat_{i}" for i in range(59)] + ["class3"]
    rows = [[*(np.arange(59) + r), "Normal" if r % 2 else "Attack"] for r in range(6)]
    ds = load_dataset(write_csv(tmp_path / "x.csv", header, rows), "class3", {"Attack"})
    assert ds.d == 59
    assert ds.labels.tolist() == [1, 0, 1, 0, 1, 0]


def test_categorical_first_appearance_codes(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["proto", "v", "label"],
                  [["udp", 1, 0], ["tcp", 2, 0], ["udp", 3, 1], ["icmp", 4, 0]])
    ds = load_dataset(p, "label", {"1"})
    assert ds.features[:, 0].tolist() == [0.0, 1.0, 0.0, 2.0]


def test_unparseable_and_missing_rows_dropped(tmp_path):
    rows = [[i, i * 2, 0] for i in range(40)] + [["oops", 1, 0], ["", 2, 1], ["inf", 3, 0]]
    ds = load_dataset(write_csv(tmp_path / "a.csv", ["x", "y", "label"], rows), "label", {"1"})
    assert ds.n == 40
    assert np.all(np.isfinite(ds.features))


def test_delimiter_and_drop_columns(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("id\tx\tlabel\n a \t1\tbad\n b \t2\tok\n")
    ds = load_dataset(p, "label", {"bad"}, delimiter="\t", drop_columns=["id"])
    assert ds.column_names == ("x",)
    assert ds.labels.tolist() == [1, 0]


@pytest.mark.parametrize(
    "setup, exc",
    [
        (lambda p: p / "missing.csv", DataError),
        (lambda p: write_csv(p / "a.csv", ["x", "y"], [[1, 2]]), DataError),
        (lambda p: write_csv(p / "a.csv", ["x", "label"], [["", 0]]), DataError),
    ],
)
def test_load_errors(tmp_path, setup, exc):
    with pytest.raises(exc):
        load_dataset(setup(tmp_path), "label", {"1"})


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan]]), np.array([0]), ("a",))
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 1)), np.array([2]), ("a",))
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 2)), np.array([0]), ("a", "a"))


@pytest.mark.parametrize("n, sizes", [(10, (6, 2, 2)), (11, (6, 2, 3))])
def test_split_sizes(n, sizes):
    parts = split(_ds(n), SplitSpec(0.6, 0.2, 0.2, seed=7))
    assert tuple(p.n for p in parts) == sizes


def test_split_deterministic_disjoint_exhaustive():
    ds = _ds(101)
    a = split(ds, SplitSpec(seed=3))
    b = split(ds, SplitSpec(seed=3))
    for x, y in zip(a, b):
        assert np.array_equal(x.row_ids, y.row_ids)
    ids = np.concatenate([p.row_ids for p in a])
    assert sorted(ids.tolist()) == list(range(101))


def test_split_rejects_bad_specs():
    with pytest.raises(ConfigError):
        SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(DataError):
        split(_ds(4), SplitSpec())


def test_filter_normal():
    assert filter_normal(_ds(3, labels=[0, 1, 0])).n == 2
    same = _ds(3)
    assert filter_normal(same).n == 3
    with pytest.raises(DataError):
        filter_normal(_ds(2, labels=[1, 1]))


def test_normalizer_examples():
    train = Dataset(np.array([[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]]), np.zeros(3, dtype=np.int64), ("a", "c"))
    nrm = fit_normalizer(train)
    assert apply_normalizer(nrm, train).features.tolist() == [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]
    assert nrm.transform(np.array([[20.0, 9.0], [-4.0, 3.0]])).tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_normalizer_rejects_attack_rows_and_roundtrips(tmp_path):
    with pytest.raises(DataError):
        fit_normalizer(_ds(3, labels=[0, 1, 0]))
    nrm = fit_normalizer(_ds(50, d=3))
    nrm.save(tmp_path / "n.json")
    back = Normalizer.load(tmp_path / "n.json")
    assert np.array_equal(back.mins, nrm.mins) and np.array_equal(back.maxs, nrm.maxs)


def test_dataset_csv_roundtrip_is_exact(tmp_path):
    ds = _ds(20, d=4, labels=[i % 2 for i in range(20)])
    save_dataset(ds, tmp_path / "d.csv")
    back = read_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
