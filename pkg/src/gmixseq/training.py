"""Mini-batch Adam loop shared by both generators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import Adam, Module
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 16
    seed: int = 0
    # fraction of sequences per batch whose previous-frame decoder inputs are blanked
    prev_dropout: float = 0.5


@dataclass
class TrainLog:
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(["epoch"] + self.columns)]
        for epoch, row in enumerate(self.rows):
            lines.append(",".join([str(epoch)] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"


def fit(model: Module, n_items: int, batch_loss: Callable, columns: list[str], cfg: TrainConfig,
        optimizer: Adam | None = None, on_epoch: Callable | None = None) -> tuple[TrainLog, Adam]:
    """Run ``cfg.epochs`` epochs of shuffled mini-batches.

    ``batch_loss(idx, rng)`` returns the loss terms for the given item
    indices, total first; ``rng`` is the run's generator, used for noise.
    """
    if n_items == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = optimizer or Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas)
    history = TrainLog(columns)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_items)
        sums = np.zeros(len(columns))
        for start in range(0, n_items, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            try:
                terms = batch_loss(idx, rng)
                terms[0].backward()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {opt.t}: {exc}") from exc
            opt.step()
            sums += len(idx) * np.array([t.item() for t in terms])
        row = (sums / n_items).tolist()
        if not np.all(np.isfinite(row)):
            raise TrainingDiverged(f"non-finite epoch mean at epoch {epoch}: {row}")
        history.rows.append(row)
        log.debug("epoch %d %s", epoch, dict(zip(columns, row)))
        if on_epoch is not None:
            on_epoch(epoch, row)
    return history, opt
