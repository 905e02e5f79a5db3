"""Corpus container and its on-disk formats.

Binary layout (all integers little-endian)::

    b"GMXD" | u32 version | u32 header_len | header (UTF-8 JSON)
    u32 n_records
    per record: i32 label | i32 speaker
                u32 T | u32 D_a | T*D_a float64 audio (row-major)
                u32 T | u32 D   | T*D   float64 coefficients (row-major)

The text export is line-delimited JSON: the header object first, then one
object per record. Python's float repr round-trips exactly, so both
formats reload bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GMXD"
FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    pass


@dataclass
class Sequence:
    label: int
    speaker: int
    audio: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.audio = np.ascontiguousarray(self.audio, dtype=np.float64)
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        if self.audio.ndim != 2 or self.coeffs.ndim != 2:
            raise ValueError("audio and coefficients must be 2-D (frames x features)")
        if self.audio.shape[0] != self.coeffs.shape[0]:
            raise ValueError("audio and coefficient sequences differ in length")

    @property
    def length(self) -> int:
        return self.coeffs.shape[0]


@dataclass
class SyntheticCorpus:
    kind: str
    k: int
    length: int
    coeff_dim: int
    audio_dim: int
    seed: int
    params: dict = field(default_factory=dict)
    sequences: list[Sequence] = field(default_factory=list)

    def __len__(self):
        return len(self.sequences)

    def header(self) -> dict:
        return {"version": FORMAT_VERSION, "kind": self.kind, "K": self.k, "T": self.length,
                "coeff_dim": self.coeff_dim, "audio_dim": self.audio_dim, "seed": self.seed,
                "params": self.params}

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    def speakers(self) -> np.ndarray:
        return np.array([s.speaker for s in self.sequences], dtype=np.int64)

    def coeffs(self) -> np.ndarray:
        return np.stack([s.coeffs for s in self.sequences])

    def audio(self) -> np.ndarray:
        return np.stack([s.audio for s in self.sequences])

    def subset(self, idx) -> "SyntheticCorpus":
        return SyntheticCorpus(self.kind, self.k, self.length, self.coeff_dim, self.audio_dim,
                               self.seed, self.params, [self.sequences[i] for i in idx])

    def split(self, n_holdout_per_class: int) -> tuple["SyntheticCorpus", "SyntheticCorpus"]:
        """Last ``n_holdout_per_class`` sequences of each label go to the held-out part."""
        labels = self.labels()
        held: list[int] = []
        for k in np.unique(labels):
            held.extend(np.flatnonzero(labels == k)[-n_holdout_per_class:].tolist())
        held_set = set(held)
        train = [i for i in range(len(self)) if i not in held_set]
        return self.subset(train), self.subset(sorted(held))


def _from_header(h: dict, sequences) -> SyntheticCorpus:
    if h.get("version") != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported corpus version {h.get('version')}")
    return SyntheticCorpus(h["kind"], h["K"], h["T"], h["coeff_dim"], h["audio_dim"], h["seed"],
                           h.get("params", {}), sequences)


def to_bytes(corpus: SyntheticCorpus) -> bytes:
    head = json.dumps(corpus.header(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head,
             struct.pack("<I", len(corpus.sequences))]
    for s in corpus.sequences:
        parts.append(struct.pack("<ii", s.label, s.speaker))
        for mat in (s.audio, s.coeffs):
            parts.append(struct.pack("<II", *mat.shape))
            parts.append(mat.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def from_bytes(buf: bytes) -> SyntheticCorpus:
    if buf[:4] != MAGIC:
        raise CorpusFormatError("not a corpus file (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise CorpusFormatError(f"unsupported corpus version {version}")
        pos = 12
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        seqs = []
        for _ in range(n):
            label, speaker = struct.unpack_from("<ii", buf, pos)
            pos += 8
            mats = []
            for _ in range(2):
                rows, cols = struct.unpack_from("<II", buf, pos)
                pos += 8
                nbytes = rows * cols * 8
                if pos + nbytes > len(buf):
                    raise CorpusFormatError("truncated corpus file")
                mats.append(np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos)
                            .reshape(rows, cols).astype(np.float64))
                pos += nbytes
            seqs.append(Sequence(label, speaker, mats[0], mats[1]))
    except struct.error as exc:
        raise CorpusFormatError(f"truncated corpus file: {exc}") from None
    if pos != len(buf):
        raise CorpusFormatError("trailing bytes after last record")
    return _from_header(header, seqs)


def to_text(corpus: SyntheticCorpus) -> str:
    lines = [json.dumps(corpus.header(), sort_keys=True)]
    for s in corpus.sequences:
        lines.append(json.dumps({"label": s.label, "speaker": s.speaker,
                                 "audio": s.audio.tolist(), "coeffs": s.coeffs.tolist()}))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> SyntheticCorpus:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows:
        raise CorpusFormatError("empty text corpus")
    seqs = [Sequence(r["label"], r["speaker"], np.array(r["audio"], dtype=np.float64).reshape(len(r["audio"]), -1),
                     np.array(r["coeffs"], dtype=np.float64).reshape(len(r["coeffs"]), -1)) for r in rows[1:]]
    return _from_header(rows[0], seqs)


def save(corpus: SyntheticCorpus, path) -> None:
    path = Path(path)
    if path.suffix in (".jsonl", ".txt"):
        path.write_text(to_text(corpus))
    else:
        path.write_bytes(to_bytes(corpus))


def load(path) -> SyntheticCorpus:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        return from_bytes(raw)
    return from_text(raw.decode("utf-8"))
