"""Gaussian-mixture expression generator.

A sequence VAE over expression coefficients conditioned on audio. The
encoder gives diagonal posteriors for a mixture-selecting latent ``w`` and
the content latent ``z``; the mapper turns ``w`` into K Gaussian
components over ``z`` (one per emotion); the decoder rolls out
coefficients autoregressively from ``z`` and audio.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import distributions as D
from . import tensor as T
from .corpus import SyntheticCorpus
from .nn import AutoregressiveDecoder, EncoderStack, Linear, Module, SequenceEncoder, param
from .tensor import Tensor
from .training import TrainConfig, TrainLog, fit


@dataclass
class LossWeights:
    rec: float = 1.0
    cond: float = 0.5
    w: float = 0.5
    emo: float = 0.5

    def __post_init__(self):
        if min(self.rec, self.cond, self.w, self.emo) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class GmegConfig:
    coeff_dim: int = 16
    audio_dim: int = 8
    k: int = 3
    d_z: int = 16
    d_w: int = 16
    model_dim: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    enc_layers: int = 2
    map_layers: int = 2
    dec_layers: int = 2
    n_speakers: int = 1
    cross_window: int | None = 3
    # "label": the emotion label picks the component in the conditional KL;
    # "posterior": responsibilities weight all components
    cond_mode: str = "label"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.cond_mode not in ("label", "posterior"):
            raise ValueError(f"unknown cond_mode {self.cond_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class LossTerms(NamedTuple):
    total: Tensor
    rec: Tensor
    cond: Tensor
    w: Tensor
    emo: Tensor


LOSS_COLUMNS = ["total", "rec", "cond", "w", "emo"]


class MogMapper(Module):
    """Transformer over K component tokens (projected w plus a learned
    per-component embedding; no positional encoding), one head per token."""

    def __init__(self, cfg: GmegConfig, rng):
        self.w_proj = Linear(cfg.d_w, cfg.model_dim, rng)
        self.components = param(rng.normal(0.0, 1.0, size=(cfg.k, cfg.model_dim)))
        self.stack = EncoderStack(cfg.map_layers, cfg.model_dim, cfg.n_heads, cfg.ff_dim, rng)
        self.head = Linear(cfg.model_dim, 2 * cfg.d_z, rng)

    def __call__(self, w: Tensor) -> D.MixtureParams:
        b = w.shape[0]
        k, m = self.components.shape
        tokens = T.broadcast_to(self.w_proj(w).reshape(b, 1, m), (b, k, m)) + self.components
        out = self.head(self.stack(tokens))
        d = out.shape[-1] // 2
        return D.MixtureParams(out[..., :d], out[..., d:])


class GmegModel(Module):
    kind = "gmeg"

    def __init__(self, cfg: GmegConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = SequenceEncoder(cfg.coeff_dim, cfg.audio_dim, cfg.model_dim, cfg.n_heads,
                                       cfg.ff_dim, cfg.enc_layers, rng)
        self.z_head = Linear(cfg.model_dim, 2 * cfg.d_z, rng, gain=0.1)
        self.w_head = Linear(cfg.model_dim, 2 * cfg.d_w, rng, gain=0.1)
        self.mapper = MogMapper(cfg, rng)
        self.decoder = AutoregressiveDecoder(cfg.coeff_dim, cfg.audio_dim, cfg.d_z, cfg.model_dim,
                                             cfg.n_heads, cfg.ff_dim, cfg.dec_layers, cfg.n_speakers,
                                             rng, cross_window=cfg.cross_window)


def _batch(x) -> Tensor:
    x = T.as_tensor(x)
    return x.reshape(1, *x.shape) if x.ndim == 2 else x


def encode(m: GmegModel, beta, audio) -> tuple[D.DiagGaussian, D.DiagGaussian]:
    """Posteriors (q(z), q(w)) from a batch (B, T, D) or a single sequence."""
    beta, audio = _batch(beta), _batch(audio)
    if beta.shape[1] != audio.shape[1]:
        raise ValueError(f"expression has {beta.shape[1]} frames, audio has {audio.shape[1]}")
    h = m.encoder(beta, audio)
    zp, wp = m.z_head(h), m.w_head(h)
    dz, dw = m.cfg.d_z, m.cfg.d_w
    return D.DiagGaussian(zp[:, :dz], zp[:, dz:]), D.DiagGaussian(wp[:, :dw], wp[:, dw:])


def mog_map(m: GmegModel, w) -> D.MixtureParams:
    w = T.as_tensor(w)
    if w.shape[-1] != m.cfg.d_w:
        raise ValueError(f"w must have dim {m.cfg.d_w}")
    return m.mapper(w.reshape(1, -1) if w.ndim == 1 else w)


def decode(m: GmegModel, z, audio, speaker) -> np.ndarray:
    """Free-running rollout; returns (B, T, D) or (T, D) for a single sequence."""
    single = T.as_tensor(audio).ndim == 2
    audio = _batch(audio)
    z = T.as_tensor(z)
    z = z.reshape(1, -1) if z.ndim == 1 else z
    speakers = np.broadcast_to(np.asarray(speaker, dtype=np.int64), (audio.shape[0],))
    out = m.decoder.generate(z, audio, speakers)
    return out[0] if single else out


def loss(m: GmegModel, beta, audio, labels, noise_w, noise_z, speakers=None,
         keep_prev: np.ndarray | None = None) -> LossTerms:
    """Mixture ELBO terms, each averaged over the batch.

    Reconstruction is the squared error summed over frames and coefficients
    of each sequence, then averaged over the batch. Summing over frames
    keeps it on the same per-sequence scale as the KL terms.
    """
    beta, audio = _batch(beta), _batch(audio)
    b = beta.shape[0]
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (b,))
    if np.any(labels < 0) or np.any(labels >= m.cfg.k):
        raise ValueError("emotion label out of range")
    speakers = np.zeros(b, dtype=np.int64) if speakers is None else np.broadcast_to(np.asarray(speakers), (b,))
    qz, qw = encode(m, beta, audio)
    z = D.reparam_sample(qz, noise_z)
    w = D.reparam_sample(qw, noise_w)
    mix = mog_map(m, w)
    recon = m.decoder.teacher_forced(z, audio, beta, speakers, keep_prev)
    err = recon - beta
    rec = (err * err).sum(axis=(1, 2)).mean()

    comp = D.component_log_pdfs(mix, z)
    resp = D.responsibilities(mix, z)
    if m.cfg.cond_mode == "label":
        prior_term = comp[np.arange(b), labels]
    else:
        prior_term = (resp.probs * comp).sum(axis=-1)
    cond = (D.log_pdf(qz, z) - prior_term).mean()
    w_kl = D.kl_to_std_normal(qw).mean()
    emo = D.kl_categorical_to_uniform(resp).mean()
    lw = m.cfg.weights
    total = lw.rec * rec + lw.cond * cond + lw.w * w_kl + lw.emo * emo
    return LossTerms(total, rec, cond, w_kl, emo)


def train(m: GmegModel, corpus: SyntheticCorpus, cfg: TrainConfig, optimizer=None,
          on_epoch=None) -> TrainLog:
    beta_all = corpus.coeffs()
    audio_all = corpus.audio()
    # a single-component prior (the unimodal ablation) ignores emotion labels
    labels = corpus.labels() if m.cfg.k > 1 else np.zeros(len(corpus), dtype=np.int64)
    speakers = corpus.speakers()

    def batch_loss(idx, rng):
        n = len(idx)
        keep = (rng.random(n) >= cfg.prev_dropout).astype(np.float64)
        return loss(m, Tensor(beta_all[idx]), Tensor(audio_all[idx]), labels[idx],
                    rng.standard_normal((n, m.cfg.d_w)), rng.standard_normal((n, m.cfg.d_z)),
                    speakers[idx], keep)

    history, opt = fit(m, len(corpus), batch_loss, LOSS_COLUMNS, cfg, optimizer, on_epoch)
    m.optimizer = opt
    return history


def _check_label(m: GmegModel, e):
    e = np.asarray(e)
    if np.any(e < 0) or np.any(e >= m.cfg.k):
        raise ValueError(f"emotion label {e.tolist()} out of range for K={m.cfg.k}")


def sample_latent(m: GmegModel, e, noise_w, noise_z) -> np.ndarray:
    """z from component ``e`` of the mixture generated by w = noise_w."""
    _check_label(m, e)
    with T.no_grad():
        mix = mog_map(m, noise_w)
        comp = mix.component(int(e))
        z = D.reparam_sample(comp, np.reshape(noise_z, comp.mean.shape))
    out = z.data
    return out[0] if np.ndim(noise_w) == 1 else out


def interpolate_latent(m: GmegModel, e1, e2, alpha: float, noise_w, noise_z, mode: str = "moment",
                       u: float | None = None) -> np.ndarray:
    """Blend two emotion components produced from the same w.

    ``mode="moment"`` samples N(a mu1 + (1-a) mu2, a var1 + (1-a) var2);
    ``mode="mixture"`` samples component e1 when ``u < alpha``, else e2.
    Both endpoints reproduce :func:`sample_latent` bit for bit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    _check_label(m, e1)
    _check_label(m, e2)
    if mode == "mixture":
        if u is None:
            raise ValueError("mixture mode needs a uniform draw u")
        return sample_latent(m, e1 if u < alpha else e2, noise_w, noise_z)
    if mode != "moment":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if alpha == 1.0:
        return sample_latent(m, e1, noise_w, noise_z)
    if alpha == 0.0:
        return sample_latent(m, e2, noise_w, noise_z)
    with T.no_grad():
        mix = mog_map(m, noise_w)
    mu = alpha * mix.means.data[:, e1] + (1 - alpha) * mix.means.data[:, e2]
    var = alpha * np.exp(mix.log_vars.data[:, e1]) + (1 - alpha) * np.exp(mix.log_vars.data[:, e2])
    z = mu + np.sqrt(var) * np.reshape(noise_z, mu.shape)
    return z[0] if np.ndim(noise_w) == 1 else z


def generate(m: GmegModel, audio, e=None, speaker=0, blend: tuple[int, int, float] | None = None,
             noise_w=None, noise_z=None, rng: np.random.Generator | None = None,
             mode: str = "moment", u: float | None = None) -> np.ndarray:
    """Sample a latent (one label, or a blend (e1, e2, alpha)) and decode it."""
    rng = rng or np.random.default_rng(m.cfg.seed)
    single = np.ndim(audio) == 2
    b = 1 if single else np.shape(audio)[0]
    if noise_w is None:
        noise_w = rng.standard_normal((b, m.cfg.d_w))
    if noise_z is None:
        noise_z = rng.standard_normal((b, m.cfg.d_z))
    noise_w = np.reshape(noise_w, (b, m.cfg.d_w))
    noise_z = np.reshape(noise_z, (b, m.cfg.d_z))
    if blend is not None:
        e1, e2, alpha = blend
        z = interpolate_latent(m, e1, e2, alpha, noise_w, noise_z, mode=mode, u=u)
    elif e is not None:
        z = sample_latent(m, e, noise_w, noise_z)
    else:
        raise ValueError("pass an emotion label or a blend")
    return decode(m, z, audio, speaker)


def posterior_means(m: GmegModel, corpus: SyntheticCorpus) -> tuple[np.ndarray, np.ndarray]:
    with T.no_grad():
        qz, qw = encode(m, Tensor(corpus.coeffs()), Tensor(corpus.audio()))
    return qz.mean.data, qw.mean.data


def classify_encoded(m: GmegModel, corpus: SyntheticCorpus) -> np.ndarray:
    """Argmax responsibility of each sequence's posterior-mean z under the
    mixture mapped from its posterior-mean w."""
    z, w = posterior_means(m, corpus)
    with T.no_grad():
        resp = D.responsibilities(mog_map(m, w), z)
    return np.argmax(resp.probs.data, axis=-1)


def class_centroids(m: GmegModel, corpus: SyntheticCorpus) -> np.ndarray:
    """Mean posterior z per label; (K_data, d_z)."""
    z, _ = posterior_means(m, corpus)
    labels = corpus.labels()
    return np.stack([z[labels == k].mean(axis=0) for k in range(corpus.k)])
