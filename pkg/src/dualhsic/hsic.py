"""Kernel matrices, the biased empirical HSIC estimator and its gradient.

The estimator is ``(n-1)^-2 tr(K_X H K_Y H)``.  Because ``H`` is idempotent
and the trace is cyclic this equals the Frobenius inner product of the two
double-centred kernel matrices, which is how it is evaluated here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, double_center, pairwise_sq_dists, trace_product

KERNEL_KINDS = ("gaussian", "linear")


class KernelConfigError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    """HSIC needs at least two samples."""


@dataclass(frozen=True)
class KernelConfig:
    sigma: float = 5.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelConfigError(f"unknown kernel kind {self.kind!r}")
        if not self.sigma > 0:
            raise KernelConfigError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class HsicValue:
    value: float
    n: int

    def __float__(self):
        return self.value


def kernel_matrix(x: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if cfg.kind == "linear":
        if x.shape[0] == 0:
            raise ShapeError("kernel_matrix needs at least one row")
        k = x @ x.T
        return 0.5 * (k + k.T)
    k = np.exp(-pairwise_sq_dists(x) / (2.0 * cfg.sigma**2))
    np.fill_diagonal(k, 1.0)
    return k


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DegenerateBatchError(f"HSIC needs n >= 2 samples, got {x.shape[0]}")
    return x, y


def centered_kernel(x: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    return double_center(kernel_matrix(x, cfg))


def empirical_hsic(x, y, cfg_x: KernelConfig = KernelConfig(), cfg_y: KernelConfig = KernelConfig()) -> HsicValue:
    x, y = _check_pair(x, y)
    n = x.shape[0]
    value = trace_product(centered_kernel(x, cfg_x), centered_kernel(y, cfg_y)) / (n - 1) ** 2
    return HsicValue(value=value, n=n)


def hsic_gradient_wrt_first(
    x, y, cfg_x: KernelConfig = KernelConfig(), cfg_y: KernelConfig = KernelConfig()
) -> np.ndarray:
    """Analytic gradient of ``empirical_hsic(x, y)`` with respect to the rows of ``x``.

    With ``M = H K_Y H`` and a Gaussian ``K_X``::

        dHSIC/dx_i = 2 / ((n-1)^2 sigma^2) * sum_j M_ij K_ij (x_j - x_i)

    For a linear ``K_X`` it is ``2 M x / (n-1)^2``.
    """
    x, y = _check_pair(x, y)
    n = x.shape[0]
    m = centered_kernel(y, cfg_y)
    scale = 2.0 / (n - 1) ** 2
    if cfg_x.kind == "linear":
        return scale * (m @ x)
    p = m * kernel_matrix(x, cfg_x)
    return scale / cfg_x.sigma**2 * (p @ x - p.sum(axis=1, keepdims=True) * x)


def permutation_null_quantile(
    x,
    y,
    cfg_x: KernelConfig = KernelConfig(),
    cfg_y: KernelConfig = KernelConfig(),
    permutations: int = 500,
    q: float = 0.95,
    rng: np.random.Generator | None = None,
) -> float:
    """``q``-quantile of HSIC between ``x`` and row-shuffled copies of ``y``."""
    if permutations < 100:
        raise ValueError(f"need at least 100 permutations, got {permutations}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    if rng is None:
        raise ValueError("an explicit rng is required for reproducible null quantiles")
    x, y = _check_pair(x, y)
    n = x.shape[0]
    kx = centered_kernel(x, cfg_x)
    # permutations commute with H, so permuting the centred kernel is exact
    ky = centered_kernel(y, cfg_y)
    null = np.empty(permutations)
    for i in range(permutations):
        p = rng.permutation(n)
        null[i] = trace_product(kx, ky[np.ix_(p, p)]) / (n - 1) ** 2
    return float(np.quantile(null, q))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out
