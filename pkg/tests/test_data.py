import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualhsic.data import (
    DatasetFormatError,
    load_csv_dataset,
    load_idx_dataset,
    make_split_blobs,
    normalize,
    read_csv_table,
    read_idx,
    split_by_class,
    write_idx,
)
from dualhsic.numerics import make_rng


def assert_disjoint(stream):
    seen = set()
    for t in stream.tasks:
        labels = set(np.unique(np.concatenate([t.y_train, t.y_test])).tolist())
        assert labels <= set(t.classes)
        assert not labels & seen
        seen |= labels


def test_single_task_binary():
    s = make_split_blobs(1, 2, 10, 3, 0.5, make_rng(0))
    assert len(s) == 1 and s.num_classes == 2
    assert set(s.tasks[0].y_train) == {0, 1}
    assert len(s.tasks[0].x_train) == 16 and len(s.tasks[0].x_test) == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(2, 12), st.integers(1, 4), st.integers(0, 1000))
def test_blobs_class_disjoint(num_tasks, cpt, spc, dim, seed):
    s = make_split_blobs(num_tasks, cpt, spc, dim, 1.0, make_rng(seed))
    assert_disjoint(s)
    assert sorted(c for t in s.tasks for c in t.classes) == list(range(num_tasks * cpt))


def test_consecutive_class_assignment():
    s = make_split_blobs(5, 2, 10, 4, 1.0, make_rng(0))
    assert [t.classes for t in s.tasks] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]


def test_train_test_disjoint_and_deterministic():
    a = make_split_blobs(2, 2, 30, 3, 1.0, make_rng(1))
    b = make_split_blobs(2, 2, 30, 3, 1.0, make_rng(1))
    for ta, tb in zip(a.tasks, b.tasks):
        np.testing.assert_array_equal(ta.x_train, tb.x_train)
        rows_train = {r.tobytes() for r in ta.x_train}
        assert not any(r.tobytes() in rows_train for r in ta.x_test)


def test_normalize_statistics():
    s = normalize(make_split_blobs(3, 2, 40, 5, 2.0, make_rng(2), center_scale=4.0))
    x = np.concatenate([t.x_train for t in s.tasks])
    assert np.max(np.abs(x.mean(axis=0))) < 1e-9
    assert np.max(np.abs(x.std(axis=0) - 1)) < 1e-6
    again = normalize(s)
    for t1, t2 in zip(s.tasks, again.tasks):
        np.testing.assert_allclose(t1.x_train, t2.x_train, atol=1e-9)
        np.testing.assert_allclose(t1.x_test, t2.x_test, atol=1e-9)


def test_normalize_constant_feature():
    s = make_split_blobs(1, 2, 10, 2, 1.0, make_rng(3))
    for t in s.tasks:
        t.x_train[:, 1] = 7.0
        t.x_test[:, 1] = 7.0
    n = normalize(s)
    assert np.all(n.tasks[0].x_train[:, 1] == 0.0)
    assert np.all(n.tasks[0].x_test[:, 1] == 0.0)


def test_split_divisibility():
    y = np.arange(10)
    x = np.zeros((10, 1))
    tasks = split_by_class(x, y, x, y, 5)
    assert [t.classes for t in tasks] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    with pytest.raises(DatasetFormatError):
        split_by_class(x, y, x, y, 3)


def test_idx_round_trip(tmp_path):
    imgs = make_rng(0).integers(0, 256, size=(4, 3, 2)).astype(np.uint8)
    write_idx(tmp_path / "a", imgs)
    raw = (tmp_path / "a").read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    assert raw[4:8] == (4).to_bytes(4, "big")
    np.testing.assert_array_equal(read_idx(tmp_path / "a"), imgs)


def test_idx_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x01\x02\x08\x03" + b"\x00" * 20)
    with pytest.raises(DatasetFormatError):
        read_idx(tmp_path / "bad")
    write_idx(tmp_path / "short", np.zeros((4, 2, 2), np.uint8))
    (tmp_path / "short").write_bytes((tmp_path / "short").read_bytes()[:-3])
    with pytest.raises(DatasetFormatError):
        read_idx(tmp_path / "short")


def make_idx_dir(path, n=40, classes=10, gz=False):
    rng = make_rng(4)
    labels = np.tile(np.arange(classes), n // classes).astype(np.uint8)
    imgs = rng.integers(0, 256, size=(len(labels), 4, 4)).astype(np.uint8)
    write_idx(path / "train-images-idx3-ubyte", imgs)
    write_idx(path / "train-labels-idx1-ubyte", labels)
    if gz:
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
            data = (path / name).read_bytes()
            (path / name).unlink()
            with gzip.open(path / (name + ".gz"), "wb") as fh:
                fh.write(data)
    return imgs, labels


@pytest.mark.parametrize("gz", [False, True])
def test_load_idx_dataset(tmp_path, gz):
    make_idx_dir(tmp_path, gz=gz)
    s = load_idx_dataset(tmp_path, 5)
    assert [t.classes for t in s.tasks] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    assert s.input_dim == 16
    assert_disjoint(s)
    with pytest.raises(DatasetFormatError):
        load_idx_dataset(tmp_path, 3)


def test_load_idx_wrong_magic(tmp_path):
    make_idx_dir(tmp_path)
    # swap labels in for images: wrong magic for the image file
    (tmp_path / "train-images-idx3-ubyte").write_bytes((tmp_path / "train-labels-idx1-ubyte").read_bytes())
    with pytest.raises(DatasetFormatError):
        load_idx_dataset(tmp_path, 5)


def test_csv_loading(tmp_path):
    rng = make_rng(5)
    rows = ["f1,label,f2"] + [f"{rng.normal()},{i % 4},{rng.normal()}" for i in range(40)]
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    x, y, tid, names = read_csv_table(tmp_path / "d.csv")
    assert x.shape == (40, 2) and names == ["f1", "f2"] and tid is None
    s = load_csv_dataset(tmp_path / "d.csv", 2)
    assert [t.classes for t in s.tasks] == [(0, 1), (2, 3)]
    (tmp_path / "e.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DatasetFormatError):
        read_csv_table(tmp_path / "e.csv")
