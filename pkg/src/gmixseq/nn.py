"""Transformer building blocks on top of :mod:`gmixseq.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e30


class Module:
    """Parameter container. Parameters are discovered from attributes in
    definition order, so names are stable across runs."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0):
        self.weight = param(rng.normal(0.0, gain / math.sqrt(n_in), size=(n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, d: int, ff_dim: int, rng):
        self.fc1 = Linear(d, ff_dim, rng)
        self.fc2 = Linear(ff_dim, d, rng, gain=0.5)

    def __call__(self, x):
        return self.fc2(T.relu(self.fc1(x)))


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal table, shape (length, d)."""
    if d % 2:
        raise ValueError("positional encoding needs an even dimension")
    if length < 1:
        raise ValueError("length must be >= 1")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def causal_mask(n_q: int, n_k: int | None = None, window: int | None = None) -> np.ndarray:
    """Additive mask letting query i see keys 0..i, or only the last
    ``window`` of them (i-window+1..i) when a window is given."""
    n_k = n_q if n_k is None else n_k
    q = np.arange(n_q)[:, None]
    kk = np.arange(n_k)[None, :]
    allowed = kk <= q
    if window is not None:
        allowed &= kk > q - window
    return np.where(allowed, 0.0, NEG_INF)


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng):
        if d % n_heads:
            raise ValueError("model_dim must be divisible by n_heads")
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng, gain=0.5)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, xq: Tensor, xkv: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, nq, d = xq.shape
        dh = d // self.n_heads
        q = self._split(self.q(xq))
        k = self.k(xkv)
        k = k.reshape(b, k.shape[1], self.n_heads, dh).transpose(0, 2, 3, 1)
        v = self._split(self.v(xkv))
        scores = (q @ k) * (1.0 / math.sqrt(dh))
        if mask is not None:
            scores = scores + Tensor(mask)
        att = T.softmax(scores, axis=-1) @ v
        return self.o(att.transpose(0, 2, 1, 3).reshape(b, nq, d))


class EncoderLayer(Module):
    def __init__(self, d, n_heads, ff_dim, rng):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, ff_dim, rng)

    def __call__(self, x, mask=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.norm2(x))


class EncoderStack(Module):
    """Pre-norm Transformer encoder with a final layer norm."""

    def __init__(self, n_layers: int, model_dim: int, n_heads: int, ff_dim: int, rng):
        self.model_dim = model_dim
        self.layers = [EncoderLayer(model_dim, n_heads, ff_dim, rng) for _ in range(n_layers)]
        self.norm = LayerNorm(model_dim)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return encode(self, x, mask)


def encode(stack: EncoderStack, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    for layer in stack.layers:
        x = layer(x, mask)
    x = stack.norm(x)
    return x.reshape(x.shape[1:]) if squeeze else x


class DecoderLayer(Module):
    def __init__(self, d, n_heads, ff_dim, rng, use_cross=True):
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.use_cross = use_cross
        if use_cross:
            self.norm2 = LayerNorm(d)
            self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm3 = LayerNorm(d)
        self.ff = FeedForward(d, ff_dim, rng)

    def __call__(self, x, memory, self_mask, cross_mask):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, self_mask)
        if self.use_cross:
            x = x + self.cross_attn(self.norm2(x), memory, cross_mask)
        return x + self.ff(self.norm3(x))


class DecoderStack(Module):
    """Pre-norm decoder: causal self-attention plus cross-attention in which
    query frame i only sees memory frames 0..i (or the last ``cross_window``
    of them)."""

    def __init__(self, n_layers: int, model_dim: int, n_heads: int, ff_dim: int, rng,
                 use_cross: bool = True, cross_window: int | None = None):
        self.model_dim = model_dim
        self.cross_window = cross_window
        self.layers = [DecoderLayer(model_dim, n_heads, ff_dim, rng, use_cross) for _ in range(n_layers)]
        self.norm = LayerNorm(model_dim)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        """Teacher-forced pass over all positions; x is (B, t, d), memory (B, >=t, d)."""
        t = x.shape[1]
        if memory.shape[1] < t:
            raise ValueError(f"memory has {memory.shape[1]} frames, decoder asked for {t}")
        if memory.shape[1] > t:
            memory = memory[:, :t]
        mask = causal_mask(t)
        cross = mask if self.cross_window is None else causal_mask(t, window=self.cross_window)
        for layer in self.layers:
            x = layer(x, memory, mask, cross)
        return self.norm(x)


def decode_step(stack: DecoderStack, prev: Tensor, memory: Tensor) -> Tensor:
    """Decoder output at the last position of ``prev``.

    Only ``prev[:t]`` and ``memory[:t]`` are read, so frames beyond t have
    no influence on the result.
    """
    squeeze = prev.ndim == 2
    if squeeze:
        prev = prev.reshape(1, *prev.shape)
        memory = memory.reshape(1, *memory.shape)
    t = prev.shape[1]
    if t < 1:
        raise ValueError("decode_step needs at least one input position")
    if t > memory.shape[1]:
        raise IndexError(f"step {t} runs past the {memory.shape[1]}-frame memory")
    out = stack(prev, memory[:, :t])[:, t - 1]
    return out.reshape(out.shape[1:]) if squeeze else out


class SequenceEncoder(Module):
    """Coefficient and audio frames, each linearly projected and summed,
    plus positional encoding, through an encoder stack, then averaged over
    time. Returns one (B, model_dim) summary per sequence."""

    def __init__(self, coeff_dim, audio_dim, model_dim, n_heads, ff_dim, n_layers, rng):
        self.coeff_proj = Linear(coeff_dim, model_dim, rng)
        self.audio_proj = Linear(audio_dim, model_dim, rng, bias=False)
        self.stack = EncoderStack(n_layers, model_dim, n_heads, ff_dim, rng)

    def __call__(self, coeffs: Tensor, audio: Tensor) -> Tensor:
        if coeffs.shape[:2] != audio.shape[:2]:
            raise ValueError(f"coefficient and audio lengths differ: {coeffs.shape[:2]} vs {audio.shape[:2]}")
        n = coeffs.shape[1]
        x = self.coeff_proj(coeffs) + self.audio_proj(audio) + Tensor(positional_encoding(n, self.stack.model_dim))
        return self.stack(x).mean(axis=1)


class AutoregressiveDecoder(Module):
    """Frame-by-frame coefficient decoder.

    Input token t is the projected previous frame plus the positional code
    plus the projected latent; token 0 uses the speaker embedding as its
    previous frame. Audio enters through aligned cross-attention.
    """

    def __init__(self, coeff_dim, audio_dim, latent_dim, model_dim, n_heads, ff_dim, n_layers,
                 n_speakers, rng, cross_window: int | None = 3):
        self.coeff_dim = coeff_dim
        self.speakers = param(np.zeros((n_speakers, coeff_dim)))
        self.prev_proj = Linear(coeff_dim, model_dim, rng)
        self.latent_proj = Linear(latent_dim, model_dim, rng, bias=False)
        self.audio_proj = Linear(audio_dim, model_dim, rng)
        self.stack = DecoderStack(n_layers, model_dim, n_heads, ff_dim, rng, cross_window=cross_window)
        self.out = Linear(model_dim, coeff_dim, rng)

    @property
    def n_speakers(self) -> int:
        return self.speakers.shape[0]

    def start_frames(self, speakers) -> Tensor:
        speakers = np.asarray(speakers, dtype=np.int64)
        if np.any(speakers < 0) or np.any(speakers >= self.n_speakers):
            raise KeyError(f"unknown speaker id in {speakers.tolist()}")
        return self.speakers[speakers]

    def memory(self, audio: Tensor) -> Tensor:
        n = audio.shape[1]
        return self.audio_proj(audio) + Tensor(positional_encoding(n, self.stack.model_dim))

    def _tokens(self, z: Tensor, prev: Tensor) -> Tensor:
        b, n, _ = prev.shape
        m = self.stack.model_dim
        lat = T.broadcast_to(self.latent_proj(z).reshape(b, 1, m), (b, n, m))
        return self.prev_proj(prev) + Tensor(positional_encoding(n, m)) + lat

    def teacher_forced(self, z: Tensor, audio: Tensor, target: Tensor, speakers,
                       keep_prev: np.ndarray | None = None) -> Tensor:
        """Predict every frame from the ground-truth previous frames.

        ``keep_prev`` (B,) zeroes the previous-frame inputs of sequences
        where it is 0, forcing those predictions to come from z and audio.
        """
        b, n, d = target.shape
        start = self.start_frames(speakers).reshape(b, 1, d)
        prev = T.concat([start, target[:, : n - 1]], axis=1)
        if keep_prev is not None:
            mask = np.ones((b, n, d))
            mask[:, 1:, :] = np.asarray(keep_prev, dtype=np.float64)[:, None, None]
            prev = prev * Tensor(mask)
        h = self.stack(self._tokens(z, prev), self.memory(audio))
        return self.out(h)

    def step(self, z: Tensor, audio: Tensor, prev: Tensor) -> Tensor:
        """Next frame given the t frames of ``prev`` (start frame first);
        reads audio frames 0..t-1 only."""
        t = prev.shape[1]
        if t > audio.shape[1]:
            raise IndexError(f"step {t} runs past the {audio.shape[1]}-frame audio")
        mem = self.memory(audio[:, :t])
        return self.out(decode_step(self.stack, self._tokens(z, prev), mem))

    def generate(self, z: Tensor, audio: Tensor, speakers) -> np.ndarray:
        """Free-running rollout, one frame per audio frame."""
        b, n, _ = audio.shape
        frames = [self.start_frames(speakers).reshape(b, 1, self.coeff_dim)]
        with T.no_grad():
            for t in range(1, n + 1):
                prev = T.concat(frames, axis=1)
                nxt = self.step(z, audio, prev)
                frames.append(nxt.reshape(b, 1, self.coeff_dim))
        return T.concat(frames[1:], axis=1).data


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def param_grad_check(loss_fn, params: list[Tensor], h: float = 1e-5, n_coords: int = 8,
                     rng: np.random.Generator | None = None) -> float:
    """Spot-check a model loss against central differences on sampled
    parameter coordinates. ``loss_fn()`` rebuilds the loss from scratch."""
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            with T.no_grad():
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            err = abs(analytic.reshape(-1)[i] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
