"""Dense float64 linear algebra used by the kernels, network and losses.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with two axes,
one sample per row.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between all pairs of rows of ``x``.

    Differences are formed explicitly, so identical rows give exactly zero
    and the result is exactly symmetric with a zero diagonal.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"expected a nonempty 2-D batch, got shape {x.shape}")
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def double_center(k: np.ndarray) -> np.ndarray:
    """Return ``H K H`` with ``H = I - 11^T/n`` without forming ``H``."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"double_center needs a square matrix, got {k.shape}")
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    return k - row - col + k.mean()


def trace_product(a: np.ndarray, b: np.ndarray) -> float:
    """``tr(a @ b)`` as ``sum_ij a_ij b_ji``, in O(n^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise ShapeError(f"trace_product needs equal square matrices, got {a.shape} and {b.shape}")
    return float(np.sum(a * b.T))


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Philox (counter-based) generator; same seed gives the same stream everywhere."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed: int, names: list[str]) -> dict[str, np.random.Generator]:
    """Independent named streams derived from one seed.

    Streams are keyed by position in ``names``, so callers must keep the
    order fixed for runs to replay.
    """
    children = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(len(names))
    return {name: make_rng(child) for name, child in zip(names, children)}
