"""Checkpoint container: network, projection head, normalisation and optional buffer.

The file is an uncompressed ``.npz`` archive.  Entry ``__header__`` holds a
UTF-8 JSON document::

    {"format": "dualhsic-checkpoint", "version": 1,
     "spec": {"input_dim", "hidden_dims", "num_classes", "activation"},
     "init": {"seed", "scheme"}, "classes_per_task": int | null,
     "buffer": {"capacity", "observed", "rng_state"} | null,
     "config": {...} | null}

Tensors are stored under ``net/f1.W``, ``net/f1.b``, ..., ``net/g.W``,
``net/g.b``, ``head/p1.W`` ... ``head/p2.b``, ``norm/mean``, ``norm/std`` and,
when a buffer is saved, ``buffer/x``, ``buffer/y``, ``buffer/task_id``,
``buffer/insertion_index`` and optionally ``buffer/logits``.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .buffer import BufferEntry, RehearsalBuffer
from .network import MlpParams, MlpSpec, ProjectionHead

FORMAT = "dualhsic-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: MlpParams
    head: ProjectionHead
    mean: np.ndarray | None
    std: np.ndarray | None
    classes_per_task: int | None
    buffer: RehearsalBuffer | None
    config: dict | None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    path,
    params: MlpParams,
    head: ProjectionHead,
    mean=None,
    std=None,
    classes_per_task: int | None = None,
    buffer: RehearsalBuffer | None = None,
    config: dict | None = None,
) -> None:
    arrays = {f"net/{k}": v for k, v in params.named().items()}
    arrays.update({f"head/{k}": v for k, v in head.named().items()})
    if mean is not None:
        arrays["norm/mean"] = np.asarray(mean, dtype=np.float64)
        arrays["norm/std"] = np.asarray(std, dtype=np.float64)
    buf_header = None
    if buffer is not None:
        buf_header = {
            "capacity": buffer.capacity,
            "observed": buffer.observed,
            "rng_state": _jsonable(buffer.rng.bit_generator.state),
        }
        if buffer.entries:
            arrays["buffer/x"] = np.stack([e.x for e in buffer.entries])
            arrays["buffer/y"] = np.array([e.y for e in buffer.entries], dtype=np.int64)
            arrays["buffer/task_id"] = np.array([e.task_id for e in buffer.entries], dtype=np.int64)
            arrays["buffer/insertion_index"] = np.array([e.insertion_index for e in buffer.entries], dtype=np.int64)
            if all(e.logits is not None for e in buffer.entries):
                arrays["buffer/logits"] = np.stack([e.logits for e in buffer.entries])
    header = {
        "format": FORMAT,
        "version": VERSION,
        "spec": params.spec.to_dict(),
        "init": {"seed": params.init_seed, "scheme": params.init_scheme},
        "head_activation": head.activation,
        "classes_per_task": classes_per_task,
        "buffer": buf_header,
        "config": config,
    }
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    bio = io.BytesIO()
    np.savez(bio, **arrays)
    atomic_write_bytes(Path(path), bio.getvalue())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from None
    if "__header__" not in arrays:
        raise CheckpointError(f"{path}: missing header")
    header = json.loads(arrays.pop("__header__").tobytes().decode())
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r} v{header.get('version')}")
    s = header["spec"]
    spec = MlpSpec(s["input_dim"], tuple(s["hidden_dims"]), s["num_classes"], s["activation"])
    n = spec.num_layers
    tags = [f"f{i + 1}" for i in range(n)] + ["g"]
    try:
        weights = [arrays[f"net/{t}.W"] for t in tags]
        biases = [arrays[f"net/{t}.b"] for t in tags]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from None
    for (fan_in, fan_out), w, b in zip(zip(spec.dims[:-1], spec.dims[1:]), weights, biases):
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise CheckpointError(f"{path}: tensor shapes do not match the stored spec")
    params = MlpParams(spec, weights, biases, header["init"]["seed"], header["init"]["scheme"])
    head = ProjectionHead(
        arrays["head/p1.W"], arrays["head/p1.b"], arrays["head/p2.W"], arrays["head/p2.b"], header["head_activation"]
    )
    buffer = None
    bh = header.get("buffer")
    if bh is not None:
        rng = np.random.Generator(np.random.Philox())
        rng.bit_generator.state = _from_jsonable(bh["rng_state"])
        buffer = RehearsalBuffer(bh["capacity"], rng)
        buffer.observed = bh["observed"]
        if "buffer/x" in arrays:
            logits = arrays.get("buffer/logits")
            for i in range(len(arrays["buffer/x"])):
                buffer.entries.append(
                    BufferEntry(
                        x=arrays["buffer/x"][i],
                        y=int(arrays["buffer/y"][i]),
                        task_id=int(arrays["buffer/task_id"][i]),
                        logits=None if logits is None else logits[i],
                        insertion_index=int(arrays["buffer/insertion_index"][i]),
                    )
                )
    return Checkpoint(
        params=params,
        head=head,
        mean=arrays.get("norm/mean"),
        std=arrays.get("norm/std"),
        classes_per_task=header.get("classes_per_task"),
        buffer=buffer,
        config=header.get("config"),
    )
