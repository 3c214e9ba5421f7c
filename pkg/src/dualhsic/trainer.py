"""Task-sequential rehearsal training, class-incremental evaluation and metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .buffer import RehearsalBuffer, stack_entries
from .config import ExperimentConfig
from .data import Task, TaskStream, load_csv_dataset, load_idx_dataset, make_split_blobs, normalize
from .losses import StepBatch, compute_objective, objective_gradients
from .network import (
    MlpParams,
    MlpSpec,
    ProjectionHead,
    TrainingDivergenceError,
    forward,
    init_head,
    init_params,
    sgd_step,
)
from .numerics import spawn_rngs

log = logging.getLogger(__name__)

RNG_STREAMS = ["data", "init", "head", "order", "buffer", "sample"]


class UndefinedMetricError(ValueError):
    pass


# metrics -------------------------------------------------------------------


class AccuracyMatrix:
    """``S[t, tau]``: accuracy on task ``tau`` after training task ``t`` (both 1-based).

    Entries above the diagonal are never written and read as NaN.
    """

    def __init__(self, num_tasks: int):
        self.num_tasks = num_tasks
        self.values = np.full((num_tasks, num_tasks), np.nan)

    def set_row(self, t: int, accuracies) -> None:
        acc = np.asarray(accuracies, dtype=np.float64)
        if acc.shape != (t,):
            raise ValueError(f"row {t} needs {t} accuracies, got {acc.shape}")
        if np.any((acc < 0) | (acc > 1)):
            raise ValueError("accuracies must lie in [0, 1]")
        self.values[t - 1, :t] = acc

    def row(self, t: int) -> np.ndarray:
        return self.values[t - 1, :t].copy()

    def to_list(self) -> list[list[float]]:
        return [self.row(t).tolist() for t in range(1, self.num_tasks + 1)]

    @classmethod
    def from_rows(cls, rows) -> "AccuracyMatrix":
        m = cls(len(rows))
        for t, row in enumerate(rows, start=1):
            if len(row) and not np.all(np.isnan(row)):
                m.set_row(t, row)
        return m


def _as_array(S) -> np.ndarray:
    return S.values if isinstance(S, AccuracyMatrix) else np.asarray(S, dtype=np.float64)


def average_accuracy(S, t: int) -> float:
    """Mean of ``S[t, 1..t]``, summed with ``math.fsum`` so the result is order-independent."""
    s = _as_array(S)
    row = s[t - 1, :t]
    if np.any(np.isnan(row)):
        raise UndefinedMetricError(f"row {t} of the accuracy matrix is incomplete")
    return math.fsum(row.tolist()) / t


def forgetting(S, t: int) -> float:
    """Mean over earlier tasks of the best-ever accuracy minus accuracy after task ``t``.

    The best is taken over rows ``tau' in 1..t-1`` where ``S[tau', tau]`` has
    been recorded (``tau' >= tau``).  Not clamped at zero.
    """
    if t < 2:
        raise UndefinedMetricError("forgetting needs at least two tasks")
    s = _as_array(S)
    past = s[: t - 1, : t - 1]
    if np.any(np.isnan(np.diag(past))) or np.any(np.isnan(s[t - 1, : t - 1])):
        raise UndefinedMetricError(f"rows 1..{t} of the accuracy matrix are incomplete")
    peak = np.nanmax(past, axis=0)
    return math.fsum((peak - s[t - 1, : t - 1]).tolist()) / (t - 1)


# state -----------------------------------------------------------------------


@dataclass
class TrainState:
    params: MlpParams
    head: ProjectionHead
    buffer: RehearsalBuffer
    rngs: dict[str, np.random.Generator]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch_log: list[dict] = field(default_factory=list)


@dataclass
class RunResult:
    accuracy: AccuracyMatrix
    epoch_log: list[dict]
    final_average_accuracy: float
    final_forgetting: float | None
    timings: dict[str, float]
    seed: int
    state: TrainState | None = field(default=None, repr=False)
    stream: TaskStream | None = field(default=None, repr=False)

    def task_records(self) -> list[dict]:
        recs = []
        for t in range(1, self.accuracy.num_tasks + 1):
            row = self.accuracy.row(t)
            if np.all(np.isnan(row)):
                continue
            losses = [e for e in self.epoch_log if e["task"] == t]
            recs.append({"task": t, "accuracy_row": row.tolist(), "losses": losses})
        return recs


def build_stream(cfg: ExperimentConfig, seed: int) -> TaskStream:
    d = cfg.data
    data_seed = seed if int(d["seed"]) < 0 else int(d["seed"])
    if d["kind"] == "blobs":
        rng = spawn_rngs(data_seed, RNG_STREAMS)["data"]
        stream = make_split_blobs(
            int(d["num_tasks"]),
            int(d["classes_per_task"]),
            int(d["samples_per_class"]),
            int(d["dim"]),
            float(d["cluster_spread"]),
            rng,
            center_scale=float(d["center_scale"]),
        )
        return normalize(stream)
    if d["kind"] == "idx":
        return load_idx_dataset(d["path"], int(d["num_tasks"]), seed=data_seed)
    return load_csv_dataset(d["path"], int(d["num_tasks"]), seed=data_seed)


def init_state(cfg: ExperimentConfig, stream: TaskStream, seed: int) -> TrainState:
    rngs = spawn_rngs(seed, RNG_STREAMS)
    spec = MlpSpec(stream.input_dim, cfg.hidden_dims, stream.num_classes, cfg.activation)
    params = init_params(spec, rngs["init"], seed=seed)
    head = init_head(spec.hidden_dims[-1], rngs["head"], spec.activation)
    buffer = RehearsalBuffer(cfg.buffer_capacity, rngs["buffer"])
    return TrainState(params=params, head=head, buffer=buffer, rngs=rngs)


def _apply(params, grads, lr, momentum, velocity, prefix):
    if momentum == 0.0:
        return sgd_step(params, grads, lr)
    eff = {}
    for name, g in grads.items():
        key = prefix + name
        v = velocity.get(key)
        v = g if v is None else momentum * v + g
        velocity[key] = v
        eff[name] = v
    return sgd_step(params, eff, lr)


def train_task(state: TrainState, task: Task, cfg: ExperimentConfig, task_index: int) -> TrainState:
    """Train on one task for ``train.epochs`` epochs of shuffled mini-batches.

    Each step draws a buffer batch of the same size as the current batch
    (rehearsal terms are skipped while the buffer is empty), takes one SGD
    step on the network and projection head, then offers the current batch
    to the reservoir.
    """
    if len(task.x_train) == 0:
        raise ValueError(f"task {task_index} has no training data")
    tr = cfg.train
    B, lr, mom = int(tr["batch_size"]), float(tr["lr"]), float(tr["momentum"])
    dh = cfg.dualhsic
    needs_logits = cfg.base == "derpp"
    n = len(task.x_train)
    for epoch in range(1, int(tr["epochs"]) + 1):
        order = state.rngs["order"].permutation(n)
        sums: dict[str, float] = {}
        steps = 0
        for start in range(0, n, B):
            idx = order[start:start + B]
            x, y = task.x_train[idx], task.y_train[idx]
            batch = StepBatch(x=x, y=y)
            if len(state.buffer):
                xb, yb, lb = stack_entries(state.buffer.sample(len(idx), state.rngs["sample"]))
                batch = StepBatch(x=x, y=y, x_buffer=xb, y_buffer=yb, stored_logits=lb)
            report, cur, buf = compute_objective(
                state.params, state.head, batch, dh, cfg.base, float(tr["derpp_alpha"]), float(tr["derpp_beta"])
            )
            if not np.isfinite(report.total):
                raise TrainingDivergenceError(
                    f"non-finite loss at task {task_index}, epoch {epoch}, step {state.step}: {report.breakdown()}"
                )
            grads = objective_gradients(state.params, report, cur, buf)
            state.params = _apply(state.params, grads, lr, mom, state.velocity, "")
            if report.grads.head:
                state.head = _apply(state.head, report.grads.head, lr, mom, state.velocity, "head.")
            if epoch == 1 or not cfg.insert_first_epoch_only:
                state.buffer.observe_batch(x, y, task_index, cur.logits if needs_logits else None)
            for k, v in report.breakdown().items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
            state.step += 1
        entry = {"task": task_index, "epoch": epoch, "steps": steps}
        entry.update({k: v / steps for k, v in sums.items()})
        state.epoch_log.append(entry)
        log.debug("task %d epoch %d loss %.4f", task_index, epoch, entry["total"])
    return state


def predict(params: MlpParams, x) -> np.ndarray:
    # np.argmax resolves ties to the lowest class index
    return np.argmax(forward(params, x).logits, axis=1)


def evaluate(state: TrainState, test_sets) -> list[float]:
    """Class-IL accuracy on each test set: argmax over all classes, no task masking."""
    out = []
    for x, y in test_sets:
        if len(y) == 0:
            out.append(0.0)
            continue
        out.append(float(np.mean(predict(state.params, x) == y)))
    return out


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, stream: TaskStream | None = None) -> RunResult:
    seed = cfg.seed if seed is None else int(seed)
    timings = {"data": 0.0, "train": 0.0, "eval": 0.0}
    t0 = time.perf_counter()
    if stream is None:
        stream = build_stream(cfg, seed)
    timings["data"] = time.perf_counter() - t0
    T = len(stream)
    S = AccuracyMatrix(T)
    state = init_state(cfg, stream, seed)

    if cfg.mode == "joint":
        t0 = time.perf_counter()
        train_task(state, stream.joint().tasks[0], cfg, T)
        timings["train"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        S.set_row(T, evaluate(state, stream.test_sets()))
        timings["eval"] = time.perf_counter() - t0
        return RunResult(S, state.epoch_log, average_accuracy(S, T), None, timings, seed, state, stream)

    for t, task in enumerate(stream.tasks, start=1):
        if cfg.reset_head_per_task and t > 1:
            state.head = init_head(state.head.width, state.rngs["head"], state.head.activation)
        t0 = time.perf_counter()
        train_task(state, task, cfg, t)
        timings["train"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        S.set_row(t, evaluate(state, stream.test_sets()[:t]))
        timings["eval"] += time.perf_counter() - t0
        log.info("seed %d task %d accuracies %s", seed, t, np.round(S.row(t), 3).tolist())
    f_T = forgetting(S, T) if T >= 2 else None
    return RunResult(S, state.epoch_log, average_accuracy(S, T), f_T, timings, seed, state, stream)
