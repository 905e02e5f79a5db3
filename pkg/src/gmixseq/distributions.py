"""Diagonal Gaussians, Gaussian mixtures and the KL terms of the mixture ELBO.

All functions act on the last axis and accept arbitrary leading batch axes.
Mixture tensors carry the component axis second to last: ``(..., K, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        self.mean = T.as_tensor(self.mean)
        self.log_var = T.as_tensor(self.log_var)
        if self.mean.shape != self.log_var.shape:
            raise ValueError("mean and log_var must have the same shape")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class MixtureParams:
    means: Tensor
    log_vars: Tensor
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.means = T.as_tensor(self.means)
        self.log_vars = T.as_tensor(self.log_vars)
        if self.means.shape != self.log_vars.shape or self.means.ndim < 2:
            raise ValueError("means/log_vars must share a (..., K, d) shape")
        k = self.means.shape[-2]
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (k,) or np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be a length-K probability vector")

    @property
    def k(self) -> int:
        return self.means.shape[-2]

    @property
    def dim(self) -> int:
        return self.means.shape[-1]

    def component(self, k: int) -> DiagGaussian:
        return DiagGaussian(self.means[..., k, :], self.log_vars[..., k, :])


@dataclass
class Responsibilities:
    probs: Tensor
    log_probs: Tensor | None = None

    def __post_init__(self):
        self.probs = T.as_tensor(self.probs)

    @property
    def k(self) -> int:
        return self.probs.shape[-1]


def _check_dim(d: int, z: Tensor):
    if z.shape[-1] != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {z.shape[-1]}")


def log_pdf(g: DiagGaussian, z) -> Tensor:
    z = T.as_tensor(z)
    _check_dim(g.dim, z)
    diff = z - g.mean
    quad = diff * diff / T.exp(g.log_var)
    return -0.5 * (quad + g.log_var + LOG_2PI).sum(axis=-1)


def component_log_pdfs(m: MixtureParams, z) -> Tensor:
    """log N_k(z) for every component, shape (..., K)."""
    z = T.as_tensor(z)
    _check_dim(m.dim, z)
    zk = z.reshape(*z.shape[:-1], 1, z.shape[-1])
    shape = np.broadcast_shapes(zk.shape, m.means.shape)
    means, log_vars = m.means, m.log_vars
    if means.shape != shape:
        means, log_vars = T.broadcast_to(means, shape), T.broadcast_to(log_vars, shape)
    diff = T.broadcast_to(zk, shape) - means
    quad = diff * diff / T.exp(log_vars)
    return -0.5 * (quad + log_vars + LOG_2PI).sum(axis=-1)


def _log_weights(m: MixtureParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lw = np.log(m.weights)
    # zero-weight components are pushed out of reach without leaving float range
    return np.where(np.isfinite(lw), lw, -1e300)


def mixture_log_pdf(m: MixtureParams, z) -> Tensor:
    return T.logsumexp(component_log_pdfs(m, z) + Tensor(_log_weights(m)), axis=-1)


def responsibilities(m: MixtureParams, z) -> Responsibilities:
    logits = component_log_pdfs(m, z) + Tensor(_log_weights(m))
    if np.any(logits.data.max(axis=-1) <= -1e300):
        raise FloatingPointError("all component densities underflow")
    return Responsibilities(T.softmax(logits, axis=-1), T.log_softmax(logits, axis=-1))


def kl_to_std_normal(g: DiagGaussian) -> Tensor:
    return -0.5 * (g.log_var - g.mean * g.mean - T.exp(g.log_var) + 1.0).sum(axis=-1)


def kl_categorical_to_uniform(r: Responsibilities) -> Tensor:
    """KL(r || uniform) with 0 log 0 taken as 0."""
    log_p = r.log_probs
    if log_p is None:
        p = r.probs
        log_p = T.log(T.as_tensor(np.maximum(p.data, 1e-300))) if not p._parents else \
            T.log(p + Tensor(np.where(p.data > 0, 0.0, 1e-300)))
    return (r.probs * (log_p + math.log(r.k))).sum(axis=-1)


def reparam_sample(g: DiagGaussian, noise) -> Tensor:
    noise = T.as_tensor(noise)
    if noise.shape[-1] != g.dim:
        raise ValueError(f"noise has dim {noise.shape[-1]}, distribution has {g.dim}")
    return g.mean + T.exp(0.5 * g.log_var) * noise
