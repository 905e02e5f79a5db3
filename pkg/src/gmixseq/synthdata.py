"""Synthetic expression and motion corpora with known generating structure,
plus the nearest-centroid classifier used as an oracle by the recovery
tests and as the embedding for the interpolation-smoothness metrics."""

from __future__ import annotations

import numpy as np

from .corpus import Sequence, SyntheticCorpus

MOTION_DIM = 12
# head rotation (3), translation (3), left eye (2), right eye (2), blinks (2)
ROT, TRANS, EYE_L, EYE_R, BLINK = slice(0, 3), slice(3, 6), slice(6, 8), slice(8, 10), slice(10, 12)

# (yaw offset, freq lo, freq hi, amp lo, amp hi) per head-motion regime
REGIMES = (
    (0.25, 0.04, 0.06, 0.35, 0.45),   # slow, wide
    (-0.25, 0.14, 0.18, 0.08, 0.12),  # fast, narrow
)


class SeparationError(ValueError):
    pass


def smoothed_walk(rng: np.random.Generator, length: int, dim: int, window: int = 5) -> np.ndarray:
    """Random walk, moving-average smoothed, centred and scaled per channel."""
    steps = rng.normal(size=(length + window - 1, dim))
    walk = np.cumsum(steps, axis=0)
    kernel = np.ones(window) / window
    sm = np.stack([np.convolve(walk[:, j], kernel, mode="valid") for j in range(dim)], axis=1)
    sm = sm - sm.mean(axis=0)
    std = sm.std(axis=0)
    return sm / np.where(std > 0, std, 1.0)


# -- emotion corpus ------------------------------------------------------------


def emotion_params(k: int, coeff_dim: int, audio_dim: int, noise: float, rng) -> dict:
    offsets = rng.normal(size=(k, coeff_dim))
    params = {
        "offsets": offsets.tolist(),
        "freqs": rng.uniform(0.05, 0.2, size=k).tolist(),
        "phases": rng.uniform(0, 2 * np.pi, size=k).tolist(),
        "amps": (0.3 * rng.normal(size=(k, coeff_dim))).tolist(),
        "audio_map": (0.4 * rng.normal(size=(audio_dim, coeff_dim))).tolist(),
        "noise": noise,
    }
    check_separation(params)
    return params


def check_separation(params: dict) -> float:
    off = np.asarray(params["offsets"])
    d = np.linalg.norm(off[:, None] - off[None], axis=-1)
    min_d = d[~np.eye(len(off), dtype=bool)].min()
    if not min_d > 4 * params["noise"]:
        raise SeparationError(f"archetypes {min_d:.3g} apart, need > 4 x noise = {4 * params['noise']:.3g}")
    return float(min_d)


def render_expression(params: dict, label: int, audio: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
    """Archetype offset + emotion oscillation + linear audio response (+ noise)."""
    t = np.arange(audio.shape[0])[:, None]
    off = np.asarray(params["offsets"])[label]
    amp = np.asarray(params["amps"])[label]
    osc = amp * np.sin(2 * np.pi * params["freqs"][label] * t + params["phases"][label])
    beta = off + osc + audio @ np.asarray(params["audio_map"])
    if noise is not None:
        beta = beta + params["noise"] * noise
    return beta


def gen_emotion_corpus(k: int, n_per_class: int, length: int, coeff_dim: int = 16, seed: int = 0,
                       audio_dim: int = 8, noise: float = 0.1, n_speakers: int = 1) -> SyntheticCorpus:
    if k < 2:
        raise ValueError("an emotion corpus needs K >= 2")
    rng = np.random.default_rng(seed)
    params = emotion_params(k, coeff_dim, audio_dim, noise, rng)
    seqs = []
    for label in range(k):
        for i in range(n_per_class):
            audio = smoothed_walk(rng, length, audio_dim)
            eps = rng.normal(size=(length, coeff_dim))
            seqs.append(Sequence(label, i % n_speakers, audio, render_expression(params, label, audio, eps)))
    return SyntheticCorpus("emotion", k, length, coeff_dim, audio_dim, seed, params, seqs)


# -- motion corpus ----------------------------------------------------------------


def head_rotation(length: int, regime: int, freq: float, amp: float, phase: float) -> np.ndarray:
    offset = REGIMES[regime][0]
    t = np.arange(length)
    arg = 2 * np.pi * freq * t + phase
    rot = np.zeros((length, 3))
    rot[:, 0] = offset + amp * np.sin(arg)
    rot[:, 1] = 0.3 * amp * np.sin(arg + np.pi / 3)
    rot[:, 2] = 0.1 * amp * np.sin(arg + np.pi / 2)
    return rot


def gen_motion_corpus(n_speakers: int, n_per_speaker: int, length: int, seed: int = 0,
                      modality: str = "bimodal", audio_dim: int = 8, jitter: int = 1,
                      noise: float = 0.01) -> SyntheticCorpus:
    """Multi-speaker head/eye/blink motion.

    Each sequence draws a head-motion regime (one regime when unimodal,
    either of two when bimodal) that fixes mean yaw and oscillation band.
    Audio channel 0 is a beat envelope; head pitch gets a short nod at each
    audio beat, displaced by up to ``jitter`` frames. The regime is not
    encoded in the audio, so it is the part of the motion the audio cannot
    explain.
    """
    if modality not in ("unimodal", "bimodal"):
        raise ValueError("modality must be 'unimodal' or 'bimodal'")
    if audio_dim < 4:
        raise ValueError("motion audio needs at least 4 channels (beat envelope plus 3 drive channels)")
    rng = np.random.default_rng(seed)
    speaker_pose = 0.05 * rng.normal(size=(n_speakers, MOTION_DIM))
    speaker_pose[:, BLINK] = 0.0
    seqs, seq_params = [], []
    t = np.arange(length)
    for spk in range(n_speakers):
        for _ in range(n_per_speaker):
            regime = int(rng.integers(2)) if modality == "bimodal" else 0
            _, f_lo, f_hi, a_lo, a_hi = REGIMES[regime]
            freq, amp = rng.uniform(f_lo, f_hi), rng.uniform(a_lo, a_hi)
            phase = rng.uniform(0, 2 * np.pi)

            spacing = rng.integers(6, 10)
            beats = np.arange(int(rng.integers(0, spacing)), length, spacing)
            audio = smoothed_walk(rng, length, audio_dim)
            audio[:, 0] = np.exp(-0.5 * ((t[:, None] - beats[None]) / 1.0) ** 2).sum(axis=1)

            rho = np.zeros((length, MOTION_DIM))
            rho[:, ROT] = head_rotation(length, regime, freq, amp, phase)
            shifts = rng.integers(-jitter, jitter + 1, size=len(beats)) if jitter else np.zeros(len(beats), int)
            nod_times = beats + shifts
            rho[:, 1] += 0.08 * np.exp(-0.5 * ((t[:, None] - nod_times[None]) / 1.5) ** 2).sum(axis=1)
            rho[:, TRANS] = 0.2 * rho[:, ROT] + 0.05 * audio[:, 1:4]
            rho[:, EYE_L] = -0.5 * rho[:, 0:2]
            rho[:, EYE_R] = -0.5 * rho[:, 0:2]
            blink_times = np.flatnonzero(rng.random(length) < 0.05)
            blink = np.clip(np.exp(-0.5 * ((t[:, None] - blink_times[None]) / 0.8) ** 2).sum(axis=1), 0, 1)
            rho[:, BLINK] = blink[:, None]
            rho += speaker_pose[spk]
            rho[:, :10] += noise * rng.normal(size=(length, 10))

            seqs.append(Sequence(regime, spk, audio, rho))
            seq_params.append({"regime": regime, "freq": freq, "amp": amp, "phase": phase,
                               "beats": beats.tolist()})
    params = {"modality": modality, "jitter": jitter, "noise": noise,
              "speaker_pose": speaker_pose.tolist(), "sequences": seq_params}
    return SyntheticCorpus("motion", 2 if modality == "bimodal" else 1, length, MOTION_DIM,
                           audio_dim, seed, params, seqs)


def dominant_frequency(x: np.ndarray) -> float:
    """Peak of the magnitude spectrum (cycles per frame), DC excluded."""
    x = x - x.mean()
    n = len(x) * 8
    spec = np.abs(np.fft.rfft(x, n=n))
    freqs = np.fft.rfftfreq(n)
    return float(freqs[1:][np.argmax(spec[1:])])


def audio_beats(audio: np.ndarray) -> np.ndarray:
    """Strict local maxima of the beat-envelope channel above half its peak."""
    env = audio[:, 0]
    if len(env) < 3:
        return np.zeros(0, dtype=np.int64)
    inner = (env[1:-1] > env[:-2]) & (env[1:-1] > env[2:]) & (env[1:-1] > 0.5 * env.max())
    return np.flatnonzero(inner) + 1


# -- oracle classifier ----------------------------------------------------------


class OracleClassifier:
    """Nearest-centroid classifier on per-sequence mean coefficients.

    Logits are ``-|x - c_k|^2 / (2 s^2)`` with the temperature ``s`` set to a
    quarter of the smallest centroid gap, so class probabilities stay
    graded between archetypes instead of saturating.
    """

    def __init__(self, centroids: np.ndarray):
        self.centroids = np.asarray(centroids, dtype=np.float64)
        gaps = np.linalg.norm(self.centroids[:, None] - self.centroids[None], axis=-1)
        k = len(self.centroids)
        min_gap = gaps[~np.eye(k, dtype=bool)].min() if k > 1 else 1.0
        self.scale = max(0.25 * float(min_gap), 1e-12)
        self.center = self.centroids.mean(axis=0)
        self.basis = self.centroids - self.center
        self.bias = -0.5 * (self.basis ** 2).sum(axis=1) / self.scale ** 2
        self.accuracy: float | None = None

    @property
    def k(self) -> int:
        return len(self.centroids)

    def embed(self, x) -> np.ndarray:
        """Penultimate representation, affine in the input; accepts a frame
        (D,), a batch of frames (N, D) or a batch of sequences (N, T, D)."""
        x = np.asarray(x, dtype=np.float64)
        feats = x.mean(axis=-2) if x.ndim == 3 else x
        return (feats - self.center) @ self.basis.T / self.scale

    def embed_sequence(self, seq: np.ndarray) -> np.ndarray:
        return self.embed(np.asarray(seq).mean(axis=0))

    def logits(self, x) -> np.ndarray:
        return self.embed(x) / self.scale + self.bias

    def predict_proba(self, x) -> np.ndarray:
        lg = self.logits(x)
        lg = lg - lg.max(axis=-1, keepdims=True)
        p = np.exp(lg)
        return p / p.sum(axis=-1, keepdims=True)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def sequence_proba(self, seqs: np.ndarray) -> np.ndarray:
        return self.predict_proba(np.asarray(seqs).mean(axis=-2))

    def score(self, corpus: SyntheticCorpus) -> float:
        pred = self.predict(corpus.coeffs().mean(axis=1))
        return float(np.mean(pred == corpus.labels()))


def oracle_classifier(corpus: SyntheticCorpus) -> OracleClassifier:
    labels = corpus.labels()
    if len(labels) == 0 or np.any(labels < 0):
        raise ValueError("oracle classifier needs a labelled corpus")
    feats = corpus.coeffs().mean(axis=1)
    missing = [k for k in range(corpus.k) if not np.any(labels == k)]
    if missing:
        raise ValueError(f"no sequences for labels {missing}")
    centroids = np.stack([feats[labels == k].mean(axis=0) for k in range(corpus.k)])
    clf = OracleClassifier(centroids)
    clf.accuracy = clf.score(corpus)
    return clf
