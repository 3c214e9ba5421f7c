import numpy as np
import pytest

from dualhsic.buffer import RehearsalBuffer
from dualhsic.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from dualhsic.network import MlpSpec, forward, init_head, init_params
from dualhsic.numerics import make_rng


def build(rng):
    spec = MlpSpec(4, (5, 3), 6, "relu")
    params = init_params(spec, rng, seed=9)
    head = init_head(3, rng)
    buf = RehearsalBuffer(4, make_rng(2))
    buf.observe_batch(rng.normal(size=(7, 4)), rng.integers(0, 6, 7), 1, rng.normal(size=(7, 6)))
    return params, head, buf


def test_round_trip(tmp_path, rng):
    params, head, buf = build(rng)
    mean, std = rng.normal(size=4), rng.uniform(1, 2, 4)
    path = tmp_path / "m.ckpt.npz"
    save_checkpoint(path, params, head, mean, std, 2, buf, {"seed": 1})
    ck = load_checkpoint(path)
    for k, v in params.named().items():
        assert np.array_equal(ck.params.named()[k], v)
    for k, v in head.named().items():
        assert np.array_equal(ck.head.named()[k], v)
    assert np.array_equal(ck.mean, mean) and np.array_equal(ck.std, std)
    assert ck.classes_per_task == 2 and ck.config == {"seed": 1}
    assert ck.params.spec == params.spec and ck.params.init_seed == 9
    assert ck.buffer.observed == buf.observed and len(ck.buffer) == len(buf)
    for a, b in zip(ck.buffer.entries, buf.entries):
        assert np.array_equal(a.x, b.x) and a.y == b.y and np.array_equal(a.logits, b.logits)
        assert a.insertion_index == b.insertion_index
    # the buffer rng resumes where it stopped
    assert ck.buffer.rng.integers(0, 10**9) == buf.rng.integers(0, 10**9)
    x = rng.normal(size=(3, 4))
    assert np.array_equal(forward(ck.params, x).logits, forward(params, x).logits)


def test_minimal_checkpoint(tmp_path, rng):
    params, head, _ = build(rng)
    save_checkpoint(tmp_path / "a.npz", params, head)
    ck = load_checkpoint(tmp_path / "a.npz")
    assert ck.mean is None and ck.buffer is None and ck.classes_per_task is None


def test_bad_files(tmp_path, rng):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(junk)
    plain = tmp_path / "plain.npz"
    np.savez(plain, a=np.zeros(2))
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(plain)
