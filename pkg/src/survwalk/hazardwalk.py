"""HazardWalk: move a latent Gaussian along the gradient of its expected hazard.

The walk state is ``(mu, log_sigma)``.  Each step takes the gradient of
E_q[exp(psi^T z)] with respect to ``(mu, sigma)``, chain-rules the sigma part
to ``log_sigma``, normalises the joint vector to unit length and moves a fixed
distance ``step_size`` up (``increase``) or down (``decrease``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ShapeError
from .model import ModelState
from .vae import LOG_VAR_MAX, LOG_VAR_MIN, LatentGaussian

LOG_SIGMA_MIN = 0.5 * LOG_VAR_MIN
LOG_SIGMA_MAX = 0.5 * LOG_VAR_MAX


@dataclass(frozen=True)
class WalkConfig:
    iterations: int = 1500
    mc_samples: int = 128
    step_size: float = 1e-2
    direction: Literal["increase", "decrease"] = "increase"
    snapshot_every: int = 100
    estimator: Literal["closed_form", "monte_carlo"] = "closed_form"
    seed: int = 0
    sample_frames: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be at least 1")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be a positive integer")
        if self.direction not in ("increase", "decrease"):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.estimator not in ("closed_form", "monte_carlo"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")


@dataclass
class WalkRecord:
    iteration: int
    latent: LatentGaussian
    expected_hazard: float
    frame: np.ndarray | None = None


@dataclass
class WalkTrajectory:
    records: list[WalkRecord] = field(default_factory=list)
    status: str = "completed"

    @property
    def hazards(self) -> np.ndarray:
        return np.array([r.expected_hazard for r in self.records])

    @property
    def frames(self) -> list[np.ndarray]:
        return [r.frame for r in self.records if r.frame is not None]

    def snapshot_hazards(self) -> np.ndarray:
        return np.array([r.expected_hazard for r in self.records if r.frame is not None])

    def to_csv(self, path) -> None:
        d = self.records[0].latent.dim
        header = ["iteration", "expected_hazard"]
        header += [f"mu_{i + 1}" for i in range(d)] + [f"sigma_{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for rec in self.records:
                mu = rec.latent.mu.data
                sigma = rec.latent.sigma
                writer.writerow(
                    [rec.iteration, repr(float(rec.expected_hazard))]
                    + [repr(float(v)) for v in mu]
                    + [repr(float(v)) for v in sigma]
                )


def _check(mu: np.ndarray, sigma: np.ndarray, psi: np.ndarray) -> None:
    if not (mu.shape == sigma.shape == psi.shape) or mu.ndim != 1:
        raise ShapeError("expected_hazard", mu.shape, sigma.shape, psi.shape)


def log_expected_hazard(mu, sigma, psi) -> float:
    """log E_q[exp(psi^T z)] = psi^T mu + 1/2 sum_d psi_d^2 sigma_d^2."""
    mu, sigma, psi = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, psi))
    _check(mu, sigma, psi)
    return float(psi @ mu + 0.5 * np.sum(psi**2 * sigma**2))


def expected_hazard_closed(mu, sigma, psi) -> float:
    """Lognormal moment generating identity; exponent clamped like ``diffcore.exp``."""
    return float(np.exp(min(log_expected_hazard(mu, sigma, psi), dc.EXP_MAX)))


def expected_hazard_closed_grad(mu, sigma, psi) -> tuple[float, np.ndarray, np.ndarray]:
    """(E, dE/dmu, dE/dsigma) with dE/dmu = psi E and dE/dsigma_d = psi_d^2 sigma_d E."""
    mu, sigma, psi = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, psi))
    e = expected_hazard_closed(mu, sigma, psi)
    return e, psi * e, psi**2 * sigma * e


def expected_hazard_mc(mu, sigma, psi, n_samples: int, rng: np.random.Generator):
    """Monte-Carlo estimate of E_q[exp(psi^T z)] and its pathwise gradient.

    Returns ``(estimate, grad_mu, grad_sigma)`` where the gradient is the
    sample mean of d exp(r_b) / d(mu, sigma) with z_b = mu + sigma * eps_b.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    mu, sigma, psi = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, psi))
    _check(mu, sigma, psi)
    mu_t, sigma_t = dc.parameter(mu), dc.parameter(sigma)
    eps = dc.constant(rng.standard_normal((n_samples, mu.shape[0])))
    z = mu_t + sigma_t * eps
    est = dc.reduce_sum(dc.exp(dc.matmul(z, dc.constant(psi)))) * (1.0 / n_samples)
    grads = dc.backward(est)
    return float(est.data), grads[mu_t], grads[sigma_t]


def _direction(mu, log_sigma, psi, config: WalkConfig, rng) -> np.ndarray:
    sigma = np.exp(log_sigma)
    if config.estimator == "closed_form":
        _, g_mu, g_sigma = expected_hazard_closed_grad(mu, sigma, psi)
    else:
        _, g_mu, g_sigma = expected_hazard_mc(mu, sigma, psi, config.mc_samples, rng)
    return np.concatenate([g_mu, g_sigma * sigma])


def _step(mu, log_sigma, psi, config: WalkConfig, rng):
    d = mu.shape[0]
    g = _direction(mu, log_sigma, psi, config, rng)
    norm = np.sqrt(np.sum(g * g))
    if norm == 0.0 or not np.isfinite(norm):
        return None
    step = config.step_size if config.direction == "increase" else -config.step_size
    g_hat = g / norm
    new_mu = mu + step * g_hat[:d]
    new_log_sigma = np.clip(log_sigma + step * g_hat[d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return new_mu, new_log_sigma


def walk_step(
    q: LatentGaussian,
    psi: np.ndarray,
    config: WalkConfig,
    rng: np.random.Generator | None = None,
) -> LatentGaussian | None:
    """One normalised ascent/descent step in (mu, log_sigma); ``None`` if the gradient vanishes."""
    mu = np.asarray(q.mu.data, dtype=np.float64)
    log_sigma = 0.5 * np.asarray(q.log_var.data, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    nxt = _step(mu, log_sigma, np.asarray(psi, dtype=np.float64), config, rng)
    if nxt is None:
        return None
    return LatentGaussian(nxt[0], 2.0 * nxt[1])


def walk_latent(
    q0: LatentGaussian,
    psi: np.ndarray,
    config: WalkConfig,
    decode_fn=None,
) -> WalkTrajectory:
    """Iterate :func:`walk_step` from ``q0``; decode a frame every ``snapshot_every``."""
    psi = np.asarray(psi, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    frame_rng = np.random.default_rng([config.seed, 1])
    mu = np.asarray(q0.mu.data, dtype=np.float64).reshape(-1)
    log_sigma = 0.5 * np.asarray(q0.log_var.data, dtype=np.float64).reshape(-1)

    def frame(mu, log_sigma):
        if decode_fn is None:
            return None
        z = mu
        if config.sample_frames:
            z = mu + np.exp(log_sigma) * frame_rng.standard_normal(mu.shape)
        return decode_fn(z)

    def record(k, mu, log_sigma, snap):
        q = LatentGaussian(mu.copy(), 2.0 * log_sigma)
        e = expected_hazard_closed(mu, np.exp(log_sigma), psi)
        return WalkRecord(k, q, e, frame(mu, log_sigma) if snap else None)

    traj = WalkTrajectory([record(0, mu, log_sigma, True)])
    for k in range(1, config.iterations + 1):
        nxt = _step(mu, log_sigma, psi, config, rng)
        if nxt is None:
            traj.status = "stationary"
            if traj.records[-1].frame is None and decode_fn is not None:
                traj.records[-1].frame = frame(mu, log_sigma)
            break
        mu, log_sigma = nxt
        snap = k % config.snapshot_every == 0 or k == config.iterations
        traj.records.append(record(k, mu, log_sigma, snap))
    return traj


def run_walk(x: np.ndarray, model: ModelState, config: WalkConfig) -> WalkTrajectory:
    """Encode ``x``, walk its posterior through the model's Cox head, decode means."""
    q0 = model.encode(np.asarray(x).reshape(-1))
    return walk_latent(q0, model.psi, config, model.decode_mean)
