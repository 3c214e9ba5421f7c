"""Class-split task streams: synthetic Gaussian blobs, IDX files and CSV files."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import make_rng


class DatasetFormatError(ValueError):
    pass


@dataclass
class Task:
    task_id: int
    classes: tuple[int, ...]
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass
class TaskStream:
    tasks: list[Task]
    classes_per_task: int
    num_classes: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.tasks[0].x_train.shape[1]

    def __len__(self):
        return len(self.tasks)

    def test_sets(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(t.x_test, t.y_test) for t in self.tasks]

    def joint(self) -> "TaskStream":
        """All tasks merged into one, for the joint-training upper bound."""
        merged = Task(
            task_id=0,
            classes=tuple(c for t in self.tasks for c in t.classes),
            x_train=np.concatenate([t.x_train for t in self.tasks]),
            y_train=np.concatenate([t.y_train for t in self.tasks]),
            x_test=np.concatenate([t.x_test for t in self.tasks]),
            y_test=np.concatenate([t.y_test for t in self.tasks]),
        )
        return replace(self, tasks=[merged], classes_per_task=self.num_classes)


def _stratified_split(x, y, rng, test_fraction=0.2):
    train_idx, test_idx = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        if len(idx) > 1:
            n_test = min(max(n_test, 1), len(idx) - 1)
        else:
            n_test = 0
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return x[train_idx], y[train_idx], x[test_idx], y[test_idx]


def split_by_class(x_train, y_train, x_test, y_test, num_tasks: int) -> list[Task]:
    """Assign consecutive label IDs to tasks: with 10 classes and 5 tasks, {0,1}, {2,3}, ..."""
    classes = np.unique(np.concatenate([y_train, y_test]))
    if len(classes) % num_tasks:
        raise DatasetFormatError(f"{len(classes)} classes cannot be split evenly into {num_tasks} tasks")
    per = len(classes) // num_tasks
    tasks = []
    for t in range(num_tasks):
        cls = tuple(int(c) for c in classes[t * per:(t + 1) * per])
        tr = np.isin(y_train, cls)
        te = np.isin(y_test, cls)
        tasks.append(Task(t, cls, x_train[tr], y_train[tr], x_test[te], y_test[te]))
    return tasks


def make_split_blobs(
    num_tasks: int,
    classes_per_task: int,
    samples_per_class: int,
    dim: int,
    cluster_spread: float,
    rng: np.random.Generator,
    center_scale: float = 1.0,
) -> TaskStream:
    """Isotropic Gaussian clusters, one per class, split 80/20 per class.

    Centres are drawn from ``N(0, center_scale^2 I)``; each sample adds
    ``N(0, cluster_spread^2 I)`` noise.
    """
    if min(num_tasks, classes_per_task, samples_per_class, dim) < 1:
        raise ValueError("all counts must be >= 1")
    num_classes = num_tasks * classes_per_task
    centers = rng.normal(0.0, center_scale, size=(num_classes, dim))
    x = np.concatenate(
        [centers[c] + rng.normal(0.0, cluster_spread, size=(samples_per_class, dim)) for c in range(num_classes)]
    )
    y = np.repeat(np.arange(num_classes), samples_per_class)
    x_tr, y_tr, x_te, y_te = _stratified_split(x, y, rng)
    tasks = split_by_class(x_tr, y_tr, x_te, y_te, num_tasks)
    meta = {
        "kind": "blobs",
        "samples_per_class": samples_per_class,
        "dim": dim,
        "cluster_spread": cluster_spread,
        "center_scale": center_scale,
    }
    return TaskStream(tasks=tasks, classes_per_task=classes_per_task, num_classes=num_classes, meta=meta)


def normalize(stream: TaskStream) -> TaskStream:
    """Standardise every feature with statistics pooled over all training splits.

    Zero-variance features are only centred.
    """
    x_all = np.concatenate([t.x_train for t in stream.tasks])
    mean = x_all.mean(axis=0)
    std = x_all.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return apply_normalization(stream, mean, std)


def apply_normalization(stream: TaskStream, mean, std) -> TaskStream:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    tasks = [
        replace(t, x_train=(t.x_train - mean) / std, x_test=(t.x_test - mean) / std) for t in stream.tasks
    ]
    return replace(stream, tasks=tasks, mean=mean, std=std)


# IDX ---------------------------------------------------------------------

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES or ndim == 0:
        raise DatasetFormatError(f"{path}: bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_TYPES[dtype_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header < expected:
        raise DatasetFormatError(f"{path}: expected {expected} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    codes = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    native = array.dtype.newbyteorder("=")
    if native not in codes:
        raise DatasetFormatError(f"dtype {array.dtype} has no IDX encoding")
    code = codes[native]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, code, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(_IDX_TYPES[code]).tobytes())


def _read_checked(path: Path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        head = fh.read(4)
    if len(head) < 4 or int.from_bytes(head, "big") != magic:
        raise DatasetFormatError(f"{path}: expected magic 0x{magic:08x}")
    return read_idx(path)


def _find(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    return None


def load_idx_dataset(path, num_tasks: int, seed: int = 0) -> TaskStream:
    """Load MNIST-style IDX files from a directory.

    Expects ``train-images-idx3-ubyte`` and ``train-labels-idx1-ubyte`` (gzip
    optional); when the matching ``t10k-*`` files are absent an 80/20
    stratified split is made with ``seed``.  Images are flattened, scaled to
    [0, 1] and globally standardised.
    """
    d = Path(path)
    tr_img, tr_lab = _find(d, "train-images-idx3-ubyte"), _find(d, "train-labels-idx1-ubyte")
    if tr_img is None or tr_lab is None:
        raise FileNotFoundError(f"no train-images/train-labels IDX files in {d}")
    x = _read_checked(tr_img, IDX_IMAGES_MAGIC)
    x = x.reshape(x.shape[0], -1).astype(np.float64) / 255.0
    y = _read_checked(tr_lab, IDX_LABELS_MAGIC).astype(np.int64)
    if len(x) != len(y):
        raise DatasetFormatError(f"{len(x)} images but {len(y)} labels")
    te_img, te_lab = _find(d, "t10k-images-idx3-ubyte"), _find(d, "t10k-labels-idx1-ubyte")
    if te_img is not None and te_lab is not None:
        x_te = _read_checked(te_img, IDX_IMAGES_MAGIC)
        x_te = x_te.reshape(x_te.shape[0], -1).astype(np.float64) / 255.0
        y_te = _read_checked(te_lab, IDX_LABELS_MAGIC).astype(np.int64)
        x_tr, y_tr = x, y
    else:
        x_tr, y_tr, x_te, y_te = _stratified_split(x, y, make_rng(seed))
    tasks = split_by_class(x_tr, y_tr, x_te, y_te, num_tasks)
    num_classes = int(max(y_tr.max(), y_te.max() if len(y_te) else 0)) + 1
    stream = TaskStream(tasks, len(tasks[0].classes), num_classes, meta={"kind": "idx", "path": str(d)})
    return normalize(stream)


# CSV ---------------------------------------------------------------------


def read_csv_table(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, list[str]]:
    """Read a CSV with a header row and a ``label`` column.

    Returns ``(features, labels, task_ids_or_None, feature_names)``; an
    optional ``task_id`` column is split off as well.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    if "label" not in header:
        raise DatasetFormatError(f"{path}: no 'label' column in header")
    li = header.index("label")
    ti = header.index("task_id") if "task_id" in header else None
    feat_cols = [i for i, h in enumerate(header) if i not in (li, ti)]
    try:
        table = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: non-numeric cell ({exc})") from None
    if table.size == 0:
        table = table.reshape(0, len(header))
    if table.shape[1] != len(header):
        raise DatasetFormatError(f"{path}: ragged rows")
    labels = table[:, li].astype(np.int64)
    task_ids = table[:, ti].astype(np.int64) if ti is not None else None
    return table[:, feat_cols], labels, task_ids, [header[i] for i in feat_cols]


def load_csv_dataset(path, num_tasks: int, seed: int = 0) -> TaskStream:
    x, y, _, _ = read_csv_table(path)
    x_tr, y_tr, x_te, y_te = _stratified_split(x, y, make_rng(seed))
    tasks = split_by_class(x_tr, y_tr, x_te, y_te, num_tasks)
    num_classes = int(y.max()) + 1
    stream = TaskStream(tasks, len(tasks[0].classes), num_classes, meta={"kind": "csv", "path": str(path)})
    return normalize(stream)
