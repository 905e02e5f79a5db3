"""Motion diversity/beat metrics, interpolation smoothness metrics and a
latent cluster separation score."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .synthdata import ROT

BA_SIGMA = 3.0
PCM_TAU = 1.0
PATH_LENGTH = 17


def motion_embeddings(rho: np.ndarray) -> np.ndarray:
    """Per-frame 3-d head-rotation embeddings, (..., T, 3)."""
    return np.asarray(rho, dtype=np.float64)[..., ROT]


def sequence_embeddings(batch: np.ndarray) -> np.ndarray:
    """One embedding per sequence: the mean of its per-frame embeddings."""
    return motion_embeddings(batch).mean(axis=-2)


def div(embeddings: np.ndarray) -> float:
    """Mean pairwise L1 distance over a batch of B >= 2 embeddings."""
    m = np.asarray(embeddings, dtype=np.float64)
    b = len(m)
    if b < 2:
        raise ValueError("diversity needs at least two embeddings")
    dist = np.abs(m[:, None, :] - m[None, :, :]).sum(axis=-1)
    return float(2.0 / (b * (b - 1)) * np.triu(dist, k=1).sum())


def beat_align(motion_beats, audio_beats, sigma: float = BA_SIGMA) -> float:
    bm = np.asarray(motion_beats, dtype=np.float64)
    ba = np.asarray(audio_beats, dtype=np.float64)
    if bm.size == 0:
        raise ValueError("motion beat track is empty")
    if ba.size == 0:
        raise ValueError("audio beat track is empty")
    nearest = np.min(np.abs(bm[:, None] - ba[None, :]), axis=1)
    return float(np.mean(np.exp(-nearest ** 2 / (2 * sigma ** 2))))


def extract_motion_beats(rho: np.ndarray) -> np.ndarray:
    """Frames where the head-rotation speed has a strict local minimum.

    Speed at frame t uses the central difference (r[t+1] - r[t-1]) / 2, so
    it exists for frames 1..T-2 and a minimum needs both neighbours.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape[0] < 3:
        raise ValueError("need at least 3 frames to find beats")
    r = motion_embeddings(rho)
    speed = np.linalg.norm(r[2:] - r[:-2], axis=-1) / 2.0
    if len(speed) < 3:
        return np.zeros(0, dtype=np.int64)
    inner = (speed[1:-1] < speed[:-2]) & (speed[1:-1] < speed[2:])
    return np.flatnonzero(inner) + 2


def pcm(predicted: np.ndarray, ground_truth: np.ndarray, tau: float = PCM_TAU) -> float:
    """Fraction of (frame, dimension) entries with |pred - gt| < tau."""
    p = np.asarray(predicted, dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(np.abs(p - g) < tau))


def _steps(path, embed: Callable | None) -> np.ndarray:
    pts = [np.asarray(embed(x) if embed is not None else x, dtype=np.float64).ravel() for x in path]
    pts = np.stack(pts)
    return np.linalg.norm(np.diff(pts, axis=0), axis=-1)


def e_ppl(path: Sequence, embed: Callable | None = None) -> float:
    """Mean embedding distance between adjacent path elements."""
    if len(path) < 2:
        raise ValueError("path needs at least 2 elements")
    return float(np.mean(_steps(path, embed)))


def e_pdv(path: Sequence, embed: Callable | None = None) -> float:
    """Population variance of adjacent embedding distances."""
    if len(path) < 3:
        raise ValueError("path needs at least 3 elements")
    return float(np.var(_steps(path, embed)))


def cluster_separation(latents: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient with Euclidean distance."""
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2 or np.any(counts < 2):
        raise ValueError("silhouette needs >= 2 labels with >= 2 points each")
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    own = np.zeros(len(x))
    other = np.full(len(x), np.inf)
    for c, n in zip(classes, counts):
        in_c = y == c
        mean_to_c = dist[:, in_c].sum(axis=1)
        own = np.where(in_c, mean_to_c / (n - 1), own)
        other = np.where(in_c, other, np.minimum(other, mean_to_c / n))
    denom = np.maximum(own, other)
    s = np.where(denom > 0, (other - own) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


def provenance(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(hashlib.sha256(b).digest())
    return h.hexdigest()


@dataclass
class MetricRecord:
    name: str
    value: float
    params: dict = field(default_factory=dict)
    provenance: str = ""

    def to_line(self) -> str:
        return json.dumps({"metric": self.name, "value": self.value, "params": self.params,
                           "provenance": self.provenance}, sort_keys=True)

    @classmethod
    def from_line(cls, line: str) -> "MetricRecord":
        d = json.loads(line)
        return cls(d["metric"], d["value"], d.get("params", {}), d.get("provenance", ""))


@dataclass
class MetricReport:
    records: list[MetricRecord] = field(default_factory=list)

    def add(self, name, value, provenance="", **params):
        self.records.append(MetricRecord(name, float(value), params, provenance))

    def __getitem__(self, name) -> float:
        for r in self.records:
            if r.name == name:
                return r.value
        raise KeyError(name)

    def to_text(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        return cls([MetricRecord.from_line(l) for l in text.splitlines() if l.strip()])
