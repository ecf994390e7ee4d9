import hashlib

import numpy as np
import pytest
import torch

from diffcontrol import tasks as T
from diffcontrol.exceptions import (
    DemoTooShortError,
    DigestMismatchError,
    KindMismatchError,
    MissingCheckpointError,
    TruncatedFileError,
    VersionMismatchError,
)
from diffcontrol.nets import DenoiserConfig, is_frozen
from diffcontrol.normalize import Normalizer
from diffcontrol.training import (
    DEFAULT_SCHEDULE,
    TrainHyper,
    load_checkpoint,
    pairs_from_demos,
    save_checkpoint,
    slice_windows,
    state_digest,
    train_base,
    train_transition,
    write_loss_trace,
)

TINY = DenoiserConfig(W=16, D=1, obs_dim=1, channels=(8, 16, 32), cond_dim=32, prior_hidden=8)
QUICK = TrainHyper(epochs=3, batches_per_epoch=4, batch_size=16)


@pytest.fixture(scope="module")
def demos():
    return T.gen_demos("cosine", 6, np.random.default_rng(0))


@pytest.fixture(scope="module")
def trained(demos):
    base = train_base(demos, TINY, QUICK, np.random.default_rng(1))
    before = state_digest(base.module)
    trans = train_transition(pairs_from_demos(demos, 16, 4), base, QUICK, np.random.default_rng(2), shift=4)
    return base, trans, before


def test_pair_count():
    demo = T.gen_demos("cosine", 1, np.random.default_rng(0))[0]
    assert len(slice_windows(demo, 48, 12)) == 160 - 48 - 12 + 1


def test_too_short():
    demo = T.gen_demos("cosine", 1, np.random.default_rng(0))[0]
    demo.actions = demo.actions[:59]
    with pytest.raises(DemoTooShortError):
        slice_windows(demo, 48, 12)


@pytest.mark.parametrize("task", ["cosine", "drum", "scoop"])
@pytest.mark.parametrize("W,h", [(48, 12), (48, 1), (48, 48), (16, 5)])
def test_overlap_identity(task, W, h):
    for d in T.gen_demos(task, 5, np.random.default_rng(4)):
        pairs = slice_windows(d, W, h)
        assert len(pairs) == len(d) - W - h + 1
        for p in pairs:
            assert np.array_equal(p.target[: W - h], p.prior[h:W])


def test_blank_prior_pairs_cover_episode_start():
    demo = T.gen_demos("drum", 1, np.random.default_rng(0))[0]
    pairs = pairs_from_demos([demo], 48, 12)
    blank = [p for p in pairs if p.blank]
    assert len(blank) == 12
    assert np.array_equal(blank[0].target, demo.actions[:48])
    assert len(pairs_from_demos([demo], 48, 12, blank_prior=False)) == 120 - 48 - 12 + 1


def test_normalizer_round_trip():
    rng = np.random.default_rng(0)
    X = rng.uniform(-3, 7, size=(500, 3))
    n = Normalizer.fit(X)
    Y = n.transform(X)
    assert np.allclose(Y.min(0), -1) and np.allclose(Y.max(0), 1)
    assert np.max(np.abs(n.inverse_transform(Y) - X)) <= 1e-9
    const = Normalizer.fit(np.ones((4, 1)))
    assert np.all(np.isfinite(const.transform(np.ones((2, 1)))))


def test_base_training_reduces_loss(demos):
    hyper = TrainHyper(epochs=8, batches_per_epoch=6, batch_size=32, lr=3e-3)
    ck = train_base(demos, TINY, hyper, np.random.default_rng(0))
    assert len(ck.loss_trace) == 8
    assert np.mean(ck.loss_trace[-2:]) < ck.loss_trace[0]
    assert ck.schedule["T"] == DEFAULT_SCHEDULE[0]


def test_frozen_base_unchanged(trained):
    base, trans, before = trained
    assert state_digest(base.module) == before
    assert is_frozen(base.module)
    assert trans.meta["base_digest"] == base.digest


def test_connectors_leave_zero(trained):
    _, trans, _ = trained
    assert max(float(c.weight.detach().abs().max()) for c in trans.module.connectors) > 0


def test_checkpoint_round_trip_bytes(trained, tmp_path):
    base, trans, _ = trained
    for ck, kind in ((base, "base"), (trans, "transition")):
        p1, p2 = tmp_path / f"{kind}1.ckpt", tmp_path / f"{kind}2.ckpt"
        save_checkpoint(ck, p1)
        back = load_checkpoint(p1, kind=kind, base=base if kind == "transition" else None)
        save_checkpoint(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert back.digest == hashlib.sha256(p1.read_bytes()[:-32]).hexdigest()


def test_loaded_transition_keeps_shift(trained, tmp_path):
    base, trans, _ = trained
    save_checkpoint(trans, tmp_path / "t.ckpt")
    back = load_checkpoint(tmp_path / "t.ckpt", base=base)
    assert back.module.shift == 4


def test_corrupt_byte_detected(trained, tmp_path):
    base, _, _ = trained
    p = tmp_path / "b.ckpt"
    save_checkpoint(base, p)
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0x01
    p.write_bytes(bytes(data))
    with pytest.raises(DigestMismatchError):
        load_checkpoint(p)


def test_truncated_and_version(trained, tmp_path):
    base, _, _ = trained
    p = tmp_path / "b.ckpt"
    save_checkpoint(base, p)
    data = p.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(data[:20])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(tmp_path / "short.ckpt")
    bumped = bytearray(data)
    bumped[8] = 99
    body = bytes(bumped[:-32])
    (tmp_path / "v.ckpt").write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "v.ckpt")
    with pytest.raises(MissingCheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_kind_mismatch(demos, trained, tmp_path):
    base, trans, _ = trained
    save_checkpoint(base, tmp_path / "b.ckpt")
    with pytest.raises(KindMismatchError):
        load_checkpoint(tmp_path / "b.ckpt", kind="transition")
    with pytest.raises(KindMismatchError):
        train_transition(pairs_from_demos(demos, 16, 4), trans, QUICK, 0)


def test_transition_rejects_wrong_base(demos, trained, tmp_path):
    base, trans, _ = trained
    other = train_base(demos, TINY, QUICK, np.random.default_rng(9))
    save_checkpoint(other, tmp_path / "o.ckpt")
    save_checkpoint(trans, tmp_path / "t.ckpt")
    other = load_checkpoint(tmp_path / "o.ckpt")
    with pytest.raises(DigestMismatchError):
        load_checkpoint(tmp_path / "t.ckpt", base=other)


def test_training_determinism(tmp_path):
    digests = []
    for _ in range(2):
        d = T.gen_demos("cosine", 4, np.random.default_rng(11))
        b = train_base(d, TINY, QUICK, np.random.default_rng(12))
        t = train_transition(pairs_from_demos(d, 16, 4), b, QUICK, np.random.default_rng(13), shift=4)
        m = T.save_demos(d, tmp_path / f"d{len(digests)}")
        digests.append(
            (
                save_checkpoint(b, tmp_path / f"b{len(digests)}.ckpt"),
                save_checkpoint(t, tmp_path / f"t{len(digests)}.ckpt"),
                hashlib.sha256(repr(m).encode()).hexdigest(),
            )
        )
    assert digests[0] == digests[1]
    assert (tmp_path / "d0" / "demo_0003.json").read_bytes() == (tmp_path / "d1" / "demo_0003.json").read_bytes()


def test_loss_trace_csv(trained, tmp_path):
    base, _, _ = trained
    write_loss_trace(base, tmp_path / "loss.csv")
    rows = (tmp_path / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss"
    assert len(rows) == 1 + len(base.loss_trace)


def test_transition_training_does_not_touch_global_rng(demos, trained):
    base, _, _ = trained
    torch.manual_seed(0)
    ref = torch.rand(2)
    torch.manual_seed(0)
    train_transition(pairs_from_demos(demos[:1], 16, 4), base, TrainHyper(epochs=1, batches_per_epoch=1, batch_size=4), 5)
    assert torch.equal(torch.rand(2), ref)
