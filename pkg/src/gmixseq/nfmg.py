"""Normalizing-flow motion generator.

A sequence VAE over 12-d motion coefficients whose latent prior is a
standard normal pushed through a stack of affine coupling steps. Each
coupling step scales and shifts the first half of the latent using a small
Transformer over the second half, then the feature order is reversed.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import distributions as D
from . import tensor as T
from .corpus import SyntheticCorpus
from .nn import AutoregressiveDecoder, EncoderStack, Linear, Module, SequenceEncoder, param
from .synthdata import MOTION_DIM
from .tensor import Tensor
from .training import TrainConfig, TrainLog, fit

SCALE_BOUND = 2.0


@dataclass
class NfmgConfig:
    audio_dim: int = 8
    d_latent: int = 8
    model_dim: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    n_speakers: int = 1
    cross_window: int | None = 3
    flow_steps: int = 4
    coupling_layers: int = 1
    coupling_dim: int = 16
    coupling_heads: int = 2
    # False replaces the flow prior by a plain standard normal (ablation)
    use_flow: bool = True
    lambda_kl: float = 1.0
    lambda_vel: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_latent % 2:
            raise ValueError("latent dim must be even for coupling")
        if self.use_flow and self.flow_steps < 2:
            raise ValueError("a flow prior needs at least 2 steps so every dim is transformed")

    def to_dict(self) -> dict:
        return asdict(self)


class CouplingStep(Module):
    """Affine coupling: ``z1' = z1 * exp(s(z2)) + t(z2)``, z2 passes through.

    ``s`` is bounded to (-2, 2) by ``2 tanh``. The conditioner treats each
    coordinate of z2 as a token (value projection plus a learned coordinate
    embedding). Output weights start at zero, so a fresh step is the identity.
    """

    def __init__(self, dim: int, model_dim: int, n_heads: int, ff_dim: int, n_layers: int, rng):
        if dim % 2:
            raise ValueError("coupling needs an even dimension")
        self.half = dim // 2
        self.value_proj = Linear(1, model_dim, rng)
        self.coord = param(rng.normal(0.0, 1.0, size=(self.half, model_dim)))
        self.stack = EncoderStack(n_layers, model_dim, n_heads, ff_dim, rng)
        self.out = Linear(model_dim, 2, rng)
        self.out.weight.data[:] = 0.0

    def scale_shift(self, z2: Tensor) -> tuple[Tensor, Tensor]:
        b = z2.shape[0]
        h = self.stack(self.value_proj(z2.reshape(b, self.half, 1)) + self.coord)
        st = self.out(h)
        return SCALE_BOUND * T.tanh(st[..., 0]), st[..., 1]

    def _split(self, z: Tensor):
        if z.shape[-1] != 2 * self.half:
            raise ValueError(f"coupling expects dim {2 * self.half}, got {z.shape[-1]}")
        return z[:, : self.half], z[:, self.half:]


def _as_batch(z) -> tuple[Tensor, bool]:
    z = T.as_tensor(z)
    if z.ndim == 1:
        return z.reshape(1, -1), True
    return z, False


def coupling_forward(step: CouplingStep, z) -> tuple[Tensor, Tensor]:
    z, single = _as_batch(z)
    if z.shape[-1] % 2:
        raise ValueError("coupling needs an even dimension")
    z1, z2 = step._split(z)
    s, t = step.scale_shift(z2)
    out = T.concat([z1 * T.exp(s) + t, z2], axis=-1)
    log_det = s.sum(axis=-1)
    return (out.reshape(-1), log_det.reshape(())) if single else (out, log_det)


def coupling_inverse(step: CouplingStep, z) -> tuple[Tensor, Tensor]:
    """Exact inverse of :func:`coupling_forward`; returns (z, log_det of the inverse)."""
    z, single = _as_batch(z)
    if z.shape[-1] % 2:
        raise ValueError("coupling needs an even dimension")
    y1, z2 = step._split(z)
    s, t = step.scale_shift(z2)
    out = T.concat([(y1 - t) * T.exp(-s), z2], axis=-1)
    log_det = -s.sum(axis=-1)
    return (out.reshape(-1), log_det.reshape(())) if single else (out, log_det)


class FlowStack(Module):
    def __init__(self, dim: int, n_steps: int, model_dim: int, n_heads: int, ff_dim: int, n_layers: int, rng):
        self.dim = dim
        self.steps = [CouplingStep(dim, model_dim, n_heads, ff_dim, n_layers, rng) for _ in range(n_steps)]


def flow_forward(f: FlowStack, z) -> tuple[Tensor, Tensor]:
    """Base sample -> prior sample. Each step is coupling then flip (flip has
    zero log-det)."""
    z, single = _as_batch(z)
    if z.shape[-1] % 2:
        raise ValueError("flow needs an even dimension")
    total = Tensor(np.zeros(z.shape[0]))
    for step in f.steps:
        z, ld = coupling_forward(step, z)
        z = T.flip(z, -1)
        total = total + ld
    return (z.reshape(-1), total.reshape(())) if single else (z, total)


def flow_inverse(f: FlowStack, z) -> tuple[Tensor, Tensor]:
    z, single = _as_batch(z)
    if z.shape[-1] % 2:
        raise ValueError("flow needs an even dimension")
    total = Tensor(np.zeros(z.shape[0]))
    for step in reversed(f.steps):
        z = T.flip(z, -1)
        z, ld = coupling_inverse(step, z)
        total = total + ld
    return (z.reshape(-1), total.reshape(())) if single else (z, total)


def flow_log_prob(f: FlowStack | None, z) -> Tensor:
    """log p(z') = log N(F^-1(z'); 0, I) + log|det dF^-1/dz'|.

    ``f=None`` is the plain standard-normal prior.
    """
    z = T.as_tensor(z)
    if f is None:
        base, ld = z, 0.0
    else:
        base, ld = flow_inverse(f, z)
    d = base.shape[-1]
    std = D.DiagGaussian(Tensor(np.zeros(d)), Tensor(np.zeros(d)))
    return D.log_pdf(std, base) + ld


class NfmgLoss(NamedTuple):
    total: Tensor
    rec: Tensor
    kl: Tensor
    vel: Tensor


LOSS_COLUMNS = ["total", "rec", "kl", "vel"]


class NfmgModel(Module):
    kind = "nfmg"

    def __init__(self, cfg: NfmgConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = SequenceEncoder(MOTION_DIM, cfg.audio_dim, cfg.model_dim, cfg.n_heads,
                                       cfg.ff_dim, cfg.enc_layers, rng)
        self.posterior = Linear(cfg.model_dim, 2 * cfg.d_latent, rng, gain=0.1)
        self.flow = FlowStack(cfg.d_latent, cfg.flow_steps if cfg.use_flow else 0, cfg.coupling_dim,
                              cfg.coupling_heads, 2 * cfg.coupling_dim, cfg.coupling_layers, rng)
        self.decoder = AutoregressiveDecoder(MOTION_DIM, cfg.audio_dim, cfg.d_latent, cfg.model_dim,
                                             cfg.n_heads, cfg.ff_dim, cfg.dec_layers, cfg.n_speakers,
                                             rng, cross_window=cfg.cross_window)

    @property
    def prior_flow(self) -> FlowStack | None:
        return self.flow if self.cfg.use_flow else None


def _batch(x) -> Tensor:
    x = T.as_tensor(x)
    return x.reshape(1, *x.shape) if x.ndim == 2 else x


def encode(m: NfmgModel, rho, audio) -> D.DiagGaussian:
    rho, audio = _batch(rho), _batch(audio)
    if rho.shape[1] != audio.shape[1]:
        raise ValueError(f"motion has {rho.shape[1]} frames, audio has {audio.shape[1]}")
    p = m.posterior(m.encoder(rho, audio))
    d = m.cfg.d_latent
    return D.DiagGaussian(p[:, :d], p[:, d:])


def nfmg_loss(m: NfmgModel, rho, audio, noise, speakers=None, keep_prev=None) -> NfmgLoss:
    """Reconstruction, single-sample KL to the flow prior, velocity term.

    rec and vel are squared errors summed over each sequence's frames and
    coefficients (vel over consecutive-frame differences), then averaged over
    the batch, so with lambda_kl = 1 the objective is a plain ELBO.
    """
    rho, audio = _batch(rho), _batch(audio)
    b = rho.shape[0]
    speakers = np.zeros(b, dtype=np.int64) if speakers is None else np.broadcast_to(np.asarray(speakers), (b,))
    q = encode(m, rho, audio)
    z = D.reparam_sample(q, noise)
    recon = m.decoder.teacher_forced(z, audio, rho, speakers, keep_prev)
    err = recon - rho
    rec = (err * err).sum(axis=(1, 2)).mean()
    n = rho.shape[1]
    dv = (recon[:, 1:] - recon[:, : n - 1]) - (rho[:, 1:] - rho[:, : n - 1])
    vel = (dv * dv).sum(axis=(1, 2)).mean()
    kl = (D.log_pdf(q, z) - flow_log_prob(m.prior_flow, z)).mean()
    total = rec + m.cfg.lambda_kl * kl + m.cfg.lambda_vel * vel
    return NfmgLoss(total, rec, kl, vel)


def train(m: NfmgModel, corpus: SyntheticCorpus, cfg: TrainConfig, optimizer=None,
          on_epoch=None) -> TrainLog:
    rho_all = corpus.coeffs()
    audio_all = corpus.audio()
    speakers = corpus.speakers()
    if np.any(speakers >= m.cfg.n_speakers):
        raise ValueError("corpus has speaker ids the model has no embedding for")

    def batch_loss(idx, rng):
        n = len(idx)
        keep = (rng.random(n) >= cfg.prev_dropout).astype(np.float64)
        return nfmg_loss(m, Tensor(rho_all[idx]), Tensor(audio_all[idx]),
                         rng.standard_normal((n, m.cfg.d_latent)), speakers[idx], keep)

    history, opt = fit(m, len(corpus), batch_loss, LOSS_COLUMNS, cfg, optimizer, on_epoch)
    m.optimizer = opt
    return history


def pretrain(m: NfmgModel, corpus: SyntheticCorpus, cfg: TrainConfig) -> tuple[NfmgModel, TrainLog]:
    history = train(m, corpus, cfg)
    return m, history


def finetune(m: NfmgModel, target: SyntheticCorpus, cfg: TrainConfig,
             speaker: int | None = None) -> tuple[NfmgModel, TrainLog]:
    """Continue training a copy of ``m`` on one speaker's data; ``m`` is
    left untouched. A fresh optimizer is used."""
    tuned = copy.deepcopy(m)
    if speaker is not None:
        target = target.subset([i for i, s in enumerate(target.sequences) if s.speaker == speaker])
    history = train(tuned, target, cfg)
    return tuned, history


def sample_motion(m: NfmgModel, audio, noise, speaker=0) -> np.ndarray:
    """Map base noise through the flow and decode it against ``audio``."""
    single = np.ndim(audio) == 2
    audio = _batch(audio)
    noise = np.reshape(noise, (audio.shape[0], m.cfg.d_latent))
    speakers = np.broadcast_to(np.asarray(speaker, dtype=np.int64), (audio.shape[0],))
    with T.no_grad():
        z = Tensor(noise) if m.prior_flow is None else flow_forward(m.flow, noise)[0]
    out = m.decoder.generate(z, audio, speakers)
    return out[0] if single else out


def reconstruction_mse(m: NfmgModel, corpus: SyntheticCorpus) -> float:
    """Per-element squared error of teacher-forced reconstruction from the
    posterior mean."""
    with T.no_grad():
        rho, audio = Tensor(corpus.coeffs()), Tensor(corpus.audio())
        q = encode(m, rho, audio)
        recon = m.decoder.teacher_forced(q.mean, audio, rho, corpus.speakers())
    return float(np.mean((recon.data - rho.data) ** 2))


def posterior_means(m: NfmgModel, corpus: SyntheticCorpus) -> np.ndarray:
    with T.no_grad():
        return encode(m, Tensor(corpus.coeffs()), Tensor(corpus.audio())).mean.data
