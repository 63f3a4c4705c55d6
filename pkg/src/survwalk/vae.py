"""MLP variational autoencoder pieces expressed as diffcore graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, ShapeError

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


@dataclass
class LatentGaussian:
    """Diagonal Gaussian q(z|x) parameterised by ``mu`` and ``log_var``.

    Both fields are tensors of shape ``(d,)`` or ``(n, d)``; ``log_var`` is
    clamped to ``[LOG_VAR_MIN, LOG_VAR_MAX]`` on construction.
    """

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if not isinstance(self.mu, Tensor):
            self.mu = dc.constant(self.mu)
        if not isinstance(self.log_var, Tensor):
            self.log_var = dc.constant(self.log_var)
        if self.mu.shape != self.log_var.shape:
            raise ShapeError("LatentGaussian", self.mu.shape, self.log_var.shape)
        self.log_var = dc.clip(self.log_var, LOG_VAR_MIN, LOG_VAR_MAX)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)


@dataclass
class MLP:
    """Dense relu network; the last layer is linear."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, dtype=np.float32) -> "MLP":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            weights.append(w.astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray], prefix: str) -> "MLP":
        weights, biases, i = [], [], 0
        while f"{prefix}.{i}.weight" in arrays:
            weights.append(arrays[f"{prefix}.{i}.weight"])
            biases.append(arrays[f"{prefix}.{i}.bias"])
            i += 1
        return cls(weights, biases)

    def forward(self, x: Tensor, leaves: dict[str, Tensor] | None = None, prefix: str = "") -> Tensor:
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError("mlp input", x.shape, (self.sizes[0],))
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if leaves is not None:
                w, b = leaves[f"{prefix}.{i}.weight"], leaves[f"{prefix}.{i}.bias"]
            h = dc.matmul(h, w) + b
            if i < last:
                h = dc.relu(h)
        return h


def _as_batch(x) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else dc.constant(x)
    if x.ndim == 1:
        return dc.reshape(x, (1, x.shape[0])), True
    return x, False


def encode(x, encoder: MLP, leaves: dict[str, Tensor] | None = None) -> LatentGaussian:
    """Deterministic map from images to q(z|x); output width 2d split as (mu, log_var)."""
    xb, single = _as_batch(x)
    out = encoder.forward(xb, leaves, "encoder")
    if out.shape[1] % 2:
        raise ShapeError("encode (output width must be even)", out.shape)
    d = out.shape[1] // 2
    mu, log_var = out[:, :d], out[:, d:]
    if single:
        mu, log_var = dc.reshape(mu, (d,)), dc.reshape(log_var, (d,))
    return LatentGaussian(mu, log_var)


def reparameterize(q: LatentGaussian, eps) -> Tensor:
    """z = mu + exp(log_var / 2) * eps, differentiable in (mu, log_var)."""
    eps = eps if isinstance(eps, Tensor) else dc.constant(np.asarray(eps, dtype=q.mu.dtype))
    if eps.shape != q.mu.shape:
        raise ShapeError("reparameterize", q.mu.shape, eps.shape)
    return q.mu + dc.exp(q.log_var * 0.5) * eps


def kl_divergence(q: LatentGaussian) -> Tensor:
    """KL(q || N(0, I)) = 1/2 sum_d (mu^2 + sigma^2 - 1 - log sigma^2), per row."""
    terms = q.mu * q.mu + dc.exp(q.log_var) - q.log_var - 1.0
    return dc.reduce_sum(terms, axis=-1 if q.mu.ndim > 1 else None) * 0.5


def decode(z, decoder: MLP, leaves: dict[str, Tensor] | None = None) -> Tensor:
    """Pixel probabilities in (0, 1) via a terminal sigmoid."""
    zb, single = _as_batch(z)
    logits = decoder.forward(zb, leaves, "decoder")
    # sigmoid last, so the NLL can recover the logits from the output node
    return dc.sigmoid(dc.reshape(logits, (logits.shape[1],)) if single else logits)


def _log_probs(x_hat: Tensor) -> tuple[Tensor, Tensor]:
    """(log x_hat, log(1 - x_hat)) floored at log(LOG_MIN), like ``dc.log``.

    Sigmoid outputs are evaluated from their logits: rounding in
    probability space makes both logs step functions once pixels saturate.
    """
    if x_hat.op == "sigmoid":
        logits = x_hat.parents[0]
        floor = math.log(dc.LOG_MIN)
        return dc.clip(-dc.softplus(-logits), floor, 0.0), dc.clip(-dc.softplus(logits), floor, 0.0)
    return dc.log(x_hat), dc.log(1.0 - x_hat)


def bernoulli_nll(x, x_hat: Tensor) -> Tensor:
    """-sum_pixels [x log x_hat + (1 - x) log(1 - x_hat)], one value per row."""
    x = x if isinstance(x, Tensor) else dc.constant(np.asarray(x, dtype=x_hat.dtype))
    if x.shape != x_hat.shape:
        raise ShapeError("bernoulli_nll", x.shape, x_hat.shape)
    log_p, log_q = _log_probs(x_hat)
    ll = x * log_p + (1.0 - x) * log_q
    return -dc.reduce_sum(ll, axis=-1 if x.ndim > 1 else None)


def elbo_loss(x, q: LatentGaussian, x_hat: Tensor, beta: float) -> Tensor:
    """Negative beta-ELBO, one value per datum (single-sample reconstruction term)."""
    if beta < 0:
        raise ConfigError(f"beta must be non-negative, got {beta}")
    return bernoulli_nll(x, x_hat) + kl_divergence(q) * beta
