import numpy as np
import pytest

from gmixseq import checkpoint as C
from gmixseq import gmeg as G
from gmixseq import nfmg as F
from gmixseq import synthdata as S
from gmixseq import tensor as T
from gmixseq.tensor import Tensor
from gmixseq.training import TrainConfig

GMEG_TINY = dict(coeff_dim=4, audio_dim=3, k=3, d_z=4, d_w=4, model_dim=8, n_heads=2, ff_dim=16,
                 enc_layers=1, map_layers=1, dec_layers=1)
NFMG_TINY = dict(audio_dim=4, d_latent=4, model_dim=8, n_heads=2, ff_dim=16, enc_layers=1, dec_layers=1,
                 flow_steps=2, coupling_dim=8, coupling_heads=2)


@pytest.fixture(scope="module")
def trained_gmeg():
    data = S.gen_emotion_corpus(3, 3, 8, coeff_dim=4, audio_dim=3, seed=0)
    m = G.GmegModel(G.GmegConfig(**GMEG_TINY, seed=1))
    G.train(m, data, TrainConfig(epochs=2, lr=1e-3, batch_size=4))
    return m


def gmeg_outputs(m, n=10):
    rng = np.random.default_rng(0)
    outs = []
    for i in range(n):
        audio = rng.normal(size=(6, 3))
        outs.append(G.generate(m, audio, e=i % 3, noise_w=rng.standard_normal(4), noise_z=rng.standard_normal(4)))
    return outs


def test_gmeg_round_trip_is_bitwise(trained_gmeg, tmp_path):
    C.save(trained_gmeg, tmp_path / "m.ckpt")
    back = C.load(tmp_path / "m.ckpt", kind="gmeg")
    for a, b in zip(gmeg_outputs(trained_gmeg), gmeg_outputs(back)):
        assert np.array_equal(a, b)
    assert back.optimizer.t == trained_gmeg.optimizer.t
    for x, y in zip(back.optimizer.m + back.optimizer.v, trained_gmeg.optimizer.m + trained_gmeg.optimizer.v):
        assert np.array_equal(x, y)
    assert C.to_bytes(back) == C.to_bytes(trained_gmeg)


def test_resumed_training_matches_uninterrupted(tmp_path):
    data = S.gen_emotion_corpus(3, 2, 8, coeff_dim=4, audio_dim=3, seed=2)
    a = G.GmegModel(G.GmegConfig(**GMEG_TINY, seed=1))
    G.train(a, data, TrainConfig(epochs=1, lr=1e-3, batch_size=3, seed=5))
    C.save(a, tmp_path / "a.ckpt")
    b = C.load(tmp_path / "a.ckpt")
    cfg = TrainConfig(epochs=1, lr=1e-3, batch_size=3, seed=6)
    G.train(a, data, cfg, optimizer=a.optimizer)
    G.train(b, data, cfg, optimizer=b.optimizer)
    assert C.to_bytes(a) == C.to_bytes(b)


def test_nfmg_round_trip_is_bitwise():
    m = F.NfmgModel(F.NfmgConfig(**NFMG_TINY, seed=3))
    rng = np.random.default_rng(1)
    for step in m.flow.steps:
        step.out.weight.data = rng.normal(0.0, 0.2, step.out.weight.shape)
    back = C.from_bytes(C.to_bytes(m, step=7))
    assert back.step == 7 and getattr(back, "optimizer", None) is None
    z = rng.normal(size=(10, 4))
    audio = rng.normal(size=(10, 5, 4))
    with T.no_grad():
        assert np.array_equal(F.flow_log_prob(m.flow, z).data, F.flow_log_prob(back.flow, z).data)
    assert np.array_equal(F.sample_motion(m, audio, z), F.sample_motion(back, audio, z))


def test_header_contents(trained_gmeg, tmp_path):
    C.save(trained_gmeg, tmp_path / "m.ckpt")
    info = C.inspect(tmp_path / "m.ckpt")
    assert info["kind"] == "gmeg" and info["seed"] == 1 and info["has_optimizer"]
    assert info["n_params"] == sum(p.data.size for p in trained_gmeg.parameters())
    assert info["step"] == trained_gmeg.optimizer.t
    assert info["config"]["k"] == 3


def test_kind_mismatch(trained_gmeg):
    with pytest.raises(C.CheckpointError):
        C.from_bytes(C.to_bytes(trained_gmeg), kind="nfmg")


def test_corruption_and_truncation_detected(trained_gmeg):
    buf = C.to_bytes(trained_gmeg)
    for cut in (3, 20, len(buf) // 2, len(buf) - 1):
        with pytest.raises(C.CheckpointError):
            C.from_bytes(buf[:cut])
    flipped = bytearray(buf)
    flipped[len(buf) // 2] ^= 1
    with pytest.raises(C.CheckpointError):
        C.from_bytes(bytes(flipped))
    with pytest.raises(C.CheckpointError):
        C.from_bytes(b"NOPE" + buf[4:])


def test_version_mismatch(trained_gmeg):
    import hashlib
    body = bytearray(C.to_bytes(trained_gmeg)[:-32])
    body[4] = 2
    with pytest.raises(C.CheckpointError, match="version"):
        C.from_bytes(bytes(body) + hashlib.sha256(bytes(body)).digest())


def test_save_is_atomic_over_existing_file(trained_gmeg, tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"old")
    C.save(trained_gmeg, path)
    assert path.read_bytes()[:4] == C.MAGIC
    assert not (tmp_path / "m.ckpt.tmp").exists()
