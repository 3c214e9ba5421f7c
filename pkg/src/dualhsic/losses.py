"""Training objectives: base rehearsal losses plus the HSIC bottleneck and alignment terms.

Every loss returns its value together with gradients at the places
:func:`dualhsic.network.backward` accepts them (logits and hidden outputs).
The combined objective is::

    total = L_CL + L_HBR + lambda_ha * L_HA
    L_HBR = lambda_x * sum_j HSIC(X, Z_j) - lambda_y * sum_j HSIC(Y, Z_j)
    L_HA  = -1/2 * (HSIC(Z_buf, p(Z_cur)) + HSIC(p(Z_buf), Z_cur))

``lambda_ha`` is signed and applied literally, so a negative value
penalises alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hsic import KernelConfig, empirical_hsic, hsic_gradient_wrt_first, one_hot
from .network import (
    ForwardTrace,
    MlpParams,
    ProjectionHead,
    backward,
    forward,
    head_backward,
    head_forward,
)
from .numerics import ShapeError

HBR_TARGETS = ("buffer_only", "current_only", "both")
BASE_METHODS = ("er", "derpp")


@dataclass(frozen=True)
class DualHsicConfig:
    lambda_x: float = 0.001
    lambda_y: float = 0.05
    lambda_ha: float = -0.75
    # 1-based hidden layers for HBR; None means every hidden layer
    hbr_layers: tuple[int, ...] | None = None
    hbr_target: str = "buffer_only"
    kernel_x: KernelConfig = KernelConfig()
    kernel_y: KernelConfig = KernelConfig()
    kernel_z: KernelConfig = KernelConfig()

    def __post_init__(self):
        if self.hbr_target not in HBR_TARGETS:
            raise ValueError(f"hbr_target must be one of {HBR_TARGETS}, got {self.hbr_target!r}")
        if self.hbr_layers is not None:
            layers = tuple(sorted({int(j) for j in self.hbr_layers}))
            if self.hbr_enabled and not layers:
                raise ValueError("hbr_layers must be nonempty when HBR is enabled")
            if any(j < 1 for j in layers):
                raise ValueError("hbr_layers are 1-based")
            object.__setattr__(self, "hbr_layers", layers)

    @property
    def hbr_enabled(self) -> bool:
        return self.lambda_x != 0.0 or self.lambda_y != 0.0

    @property
    def ha_enabled(self) -> bool:
        return self.lambda_ha != 0.0

    def layers_for(self, num_layers: int) -> tuple[int, ...]:
        if self.hbr_layers is None:
            return tuple(range(1, num_layers + 1))
        bad = [j for j in self.hbr_layers if j > num_layers]
        if bad:
            raise ValueError(f"hbr_layers {bad} exceed the network depth {num_layers}")
        return self.hbr_layers


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows of logits")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label index outside [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def der_pp_buffer_loss(logits, stored_logits, labels, alpha: float, beta: float) -> tuple[float, np.ndarray]:
    """``alpha * MSE(logits, stored) + beta * CE(logits, labels)``; MSE averages over all entries."""
    logits = np.asarray(logits, dtype=np.float64)
    stored_logits = np.asarray(stored_logits, dtype=np.float64)
    if logits.shape != stored_logits.shape:
        raise ShapeError(f"logits {logits.shape} vs stored logits {stored_logits.shape}")
    diff = logits - stored_logits
    mse = float(np.mean(diff**2))
    ce, ce_grad = cross_entropy(logits, labels)
    grad = alpha * 2.0 * diff / diff.size + beta * ce_grad
    return alpha * mse + beta * ce, grad


@dataclass
class HbrResult:
    value: float
    x_term: float
    y_term: float
    grad_hidden: dict[int, np.ndarray]


def hbr_loss(trace: ForwardTrace, x, y_onehot, cfg: DualHsicConfig) -> HbrResult:
    """Bottleneck penalty on one batch, summed over ``cfg``'s layers.

    ``x_term`` and ``y_term`` are both reported with their coefficient
    applied and ``value = x_term - y_term``.
    """
    x = np.asarray(x, dtype=np.float64)
    y_onehot = np.asarray(y_onehot, dtype=np.float64)
    layers = cfg.layers_for(trace.num_layers)
    x_term = y_term = 0.0
    grads: dict[int, np.ndarray] = {}
    for j in layers:
        z = trace.z(j)
        g = np.zeros_like(z)
        if cfg.lambda_x != 0.0:
            x_term += cfg.lambda_x * empirical_hsic(x, z, cfg.kernel_x, cfg.kernel_z).value
            g += cfg.lambda_x * hsic_gradient_wrt_first(z, x, cfg.kernel_z, cfg.kernel_x)
        if cfg.lambda_y != 0.0:
            y_term += cfg.lambda_y * empirical_hsic(y_onehot, z, cfg.kernel_y, cfg.kernel_z).value
            g -= cfg.lambda_y * hsic_gradient_wrt_first(z, y_onehot, cfg.kernel_z, cfg.kernel_y)
        if cfg.lambda_x != 0.0 or cfg.lambda_y != 0.0:
            grads[j] = g
    return HbrResult(value=x_term - y_term, x_term=x_term, y_term=y_term, grad_hidden=grads)


@dataclass
class HaResult:
    value: float
    grad_buffer: np.ndarray
    grad_current: np.ndarray
    grad_head: dict[str, np.ndarray]


def ha_loss(z_buffer, z_current, head: ProjectionHead, lambda_ha: float, kernel: KernelConfig = KernelConfig()) -> HaResult:
    """Symmetric alignment loss between buffered and current last-layer features.

    ``value`` is the unscaled loss; every gradient is of ``lambda_ha * value``.
    No stop-gradient is applied: both branches and the head receive gradients.
    """
    z_buffer = np.asarray(z_buffer, dtype=np.float64)
    z_current = np.asarray(z_current, dtype=np.float64)
    if z_buffer.shape != z_current.shape:
        raise ShapeError(f"buffer batch {z_buffer.shape} and current batch {z_current.shape} must match")
    p_cur, cache_cur = head_forward(head, z_current)
    p_buf, cache_buf = head_forward(head, z_buffer)

    first = empirical_hsic(z_buffer, p_cur, kernel, kernel).value
    second = empirical_hsic(p_buf, z_current, kernel, kernel).value
    value = -0.5 * (first + second)

    scale = -0.5 * lambda_ha
    g_buf = scale * hsic_gradient_wrt_first(z_buffer, p_cur, kernel, kernel)
    g_pcur = scale * hsic_gradient_wrt_first(p_cur, z_buffer, kernel, kernel)
    g_cur = scale * hsic_gradient_wrt_first(z_current, p_buf, kernel, kernel)
    g_pbuf = scale * hsic_gradient_wrt_first(p_buf, z_current, kernel, kernel)

    dz_cur, head_cur = head_backward(head, cache_cur, g_pcur)
    dz_buf, head_buf = head_backward(head, cache_buf, g_pbuf)
    grad_head = {k: head_cur[k] + head_buf[k] for k in head_cur}
    return HaResult(value=value, grad_buffer=g_buf + dz_buf, grad_current=g_cur + dz_cur, grad_head=grad_head)


def _merge(into: dict[int, np.ndarray], extra: dict[int, np.ndarray]):
    for j, g in extra.items():
        into[j] = into[j] + g if j in into else g


@dataclass
class GradientBundle:
    """Loss gradients at every injection site of one training step."""

    current_logits: np.ndarray | None = None
    buffer_logits: np.ndarray | None = None
    current_hidden: dict[int, np.ndarray] = field(default_factory=dict)
    buffer_hidden: dict[int, np.ndarray] = field(default_factory=dict)
    head: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class LossReport:
    total: float
    base: float
    hbr_x: float
    hbr_y: float
    ha: float
    lambda_ha: float
    grads: GradientBundle = field(repr=False, default_factory=GradientBundle)

    def reconstruct(self) -> float:
        return self.base + self.hbr_x - self.hbr_y + self.lambda_ha * self.ha

    def breakdown(self) -> dict[str, float]:
        return {
            "total": self.total,
            "base": self.base,
            "hbr_x": self.hbr_x,
            "hbr_y": self.hbr_y,
            "ha": self.ha,
            "lambda_ha": self.lambda_ha,
        }


def total_loss(
    base: float,
    grad_current_logits: np.ndarray,
    grad_buffer_logits: np.ndarray | None = None,
    hbr_buffer: HbrResult | None = None,
    hbr_current: HbrResult | None = None,
    ha: HaResult | None = None,
    lambda_ha: float = 0.0,
) -> LossReport:
    """Assemble ``L_CL + L_HBR + lambda_ha * L_HA`` and merge gradients per site."""
    bundle = GradientBundle(current_logits=grad_current_logits, buffer_logits=grad_buffer_logits)
    hbr_x = hbr_y = 0.0
    total = base
    if hbr_buffer is not None:
        hbr_x += hbr_buffer.x_term
        hbr_y += hbr_buffer.y_term
        total += hbr_buffer.value
        _merge(bundle.buffer_hidden, hbr_buffer.grad_hidden)
    if hbr_current is not None:
        hbr_x += hbr_current.x_term
        hbr_y += hbr_current.y_term
        total += hbr_current.value
        _merge(bundle.current_hidden, hbr_current.grad_hidden)
    ha_value = 0.0
    if ha is not None:
        ha_value = ha.value
        total += lambda_ha * ha.value
        # HA acts on the last hidden layer; the caller knows its index
        bundle.head = ha.grad_head
    return LossReport(total=total, base=base, hbr_x=hbr_x, hbr_y=hbr_y, ha=ha_value, lambda_ha=lambda_ha, grads=bundle)


@dataclass
class StepBatch:
    """One training step's inputs: a current batch and an optional buffer batch."""

    x: np.ndarray
    y: np.ndarray
    x_buffer: np.ndarray | None = None
    y_buffer: np.ndarray | None = None
    stored_logits: np.ndarray | None = None

    @property
    def has_buffer(self) -> bool:
        return self.x_buffer is not None and len(self.x_buffer) > 0


def compute_objective(
    params: MlpParams,
    head: ProjectionHead | None,
    batch: StepBatch,
    cfg: DualHsicConfig,
    base: str = "er",
    alpha: float = 0.1,
    beta: float = 0.5,
) -> tuple[LossReport, ForwardTrace, ForwardTrace | None]:
    """Forward both batches and evaluate the full objective.

    Buffer-dependent terms are skipped when the batch carries no buffer data.
    """
    if base not in BASE_METHODS:
        raise ValueError(f"unknown base method {base!r}")
    C = params.spec.num_classes
    L = params.spec.num_layers
    cur = forward(params, batch.x)
    base_value, g_cur = cross_entropy(cur.logits, batch.y)

    buf = None
    g_buf = None
    hbr_buf = hbr_cur = ha = None
    if batch.has_buffer:
        buf = forward(params, batch.x_buffer)
        if base == "derpp":
            mem, g_buf = der_pp_buffer_loss(buf.logits, batch.stored_logits, batch.y_buffer, alpha, beta)
        else:
            mem, g_buf = cross_entropy(buf.logits, batch.y_buffer)
        base_value += mem
        if cfg.hbr_enabled and cfg.hbr_target in ("buffer_only", "both") and len(batch.x_buffer) >= 2:
            hbr_buf = hbr_loss(buf, batch.x_buffer, one_hot(batch.y_buffer, C), cfg)
        if cfg.ha_enabled and len(batch.x) >= 2:
            ha = ha_loss(buf.z(L), cur.z(L), head, cfg.lambda_ha, cfg.kernel_z)
    if cfg.hbr_enabled and cfg.hbr_target in ("current_only", "both") and len(batch.x) >= 2:
        hbr_cur = hbr_loss(cur, batch.x, one_hot(batch.y, C), cfg)

    report = total_loss(base_value, g_cur, g_buf, hbr_buf, hbr_cur, ha, cfg.lambda_ha)
    if ha is not None:
        _merge(report.grads.buffer_hidden, {L: ha.grad_buffer})
        _merge(report.grads.current_hidden, {L: ha.grad_current})
    return report, cur, buf


def objective_gradients(
    params: MlpParams, report: LossReport, cur: ForwardTrace, buf: ForwardTrace | None
) -> dict[str, np.ndarray]:
    """Backpropagate a :class:`LossReport`'s bundle into parameter gradients."""
    bundle = report.grads
    grads = backward(params, cur, bundle.current_logits, bundle.current_hidden)
    if buf is not None:
        extra = backward(params, buf, bundle.buffer_logits, bundle.buffer_hidden)
        grads = {k: grads[k] + extra[k] for k in grads}
    return grads
