"""Shared trained models and the acceptance summary.

Training the desk-scale models takes a few minutes, so each is trained
once per session and reused. The acceptance suite records one line per
criterion; those lines are printed together at the end of the run.
"""

import time
from dataclasses import dataclass

import pytest

from gmixseq import gmeg as G
from gmixseq import nfmg as F
from gmixseq import synthdata as S
from gmixseq.training import TrainConfig

EMOTION = dict(k=3, n_per_class=25, length=32, coeff_dim=16, seed=7)
GMEG_TRAIN = TrainConfig(epochs=200, lr=1e-3, batch_size=15, seed=0)
MOTION = dict(n_speakers=2, n_per_speaker=40, length=32, seed=11)
NFMG_TRAIN = TrainConfig(epochs=150, lr=1e-3, batch_size=16, seed=0)

_LINES = []


@dataclass
class Trained:
    model: object
    log: object
    seconds: float


@pytest.fixture(scope="session")
def emotion_split():
    c = S.gen_emotion_corpus(EMOTION["k"], EMOTION["n_per_class"], EMOTION["length"],
                             coeff_dim=EMOTION["coeff_dim"], seed=EMOTION["seed"])
    return c.split(5)


@pytest.fixture(scope="session")
def motion_split():
    c = S.gen_motion_corpus(MOTION["n_speakers"], MOTION["n_per_speaker"], MOTION["length"], seed=MOTION["seed"])
    return c.split(5)


def _train_gmeg(train, k):
    t0 = time.perf_counter()
    m = G.GmegModel(G.GmegConfig(k=k, coeff_dim=train.coeff_dim, audio_dim=train.audio_dim, seed=0))
    log = G.train(m, train, GMEG_TRAIN)
    return Trained(m, log, time.perf_counter() - t0)


def _train_nfmg(train, use_flow):
    t0 = time.perf_counter()
    m = F.NfmgModel(F.NfmgConfig(n_speakers=MOTION["n_speakers"], use_flow=use_flow, seed=0))
    log = F.train(m, train, NFMG_TRAIN)
    return Trained(m, log, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def gmeg_full(emotion_split):
    return _train_gmeg(emotion_split[0], 3)


@pytest.fixture(scope="session")
def gmeg_unimodal(emotion_split):
    return _train_gmeg(emotion_split[0], 1)


@pytest.fixture(scope="session")
def nfmg_flow(motion_split):
    return _train_nfmg(motion_split[0], True)


@pytest.fixture(scope="session")
def nfmg_plain(motion_split):
    return _train_nfmg(motion_split[0], False)


@pytest.fixture(scope="session")
def acceptance():
    def record(label, ok, seconds, budget, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail} ({seconds:.1f}s of {budget:.0f}s)"
        _LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
