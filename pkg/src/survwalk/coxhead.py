"""Linear Cox head, partial-likelihood loss, and the tau-weighted joint objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DataFormatError, ShapeError
from .survdata import order_for_risk_sets


@dataclass(frozen=True)
class LossWeights:
    tau: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")


def risk_score(z, psi) -> Tensor:
    """r = psi^T z (no bias). The hazard scaling factor is exp(r)."""
    z = z if isinstance(z, Tensor) else dc.constant(z)
    psi = psi if isinstance(psi, Tensor) else dc.constant(np.asarray(psi, dtype=z.dtype))
    if z.ndim == 1:
        if z.shape != psi.shape:
            raise ShapeError("risk_score", z.shape, psi.shape)
        return dc.reduce_sum(z * psi)
    return dc.matmul(z, psi)


def cox_loss(risks, times, events) -> Tensor:
    """Negative partial Cox log-likelihood with Breslow risk sets {j : t_j >= t_i}.

    The risk-set log-sum-exp is a running cumulative log-sum-exp over the
    descending-time order; tied times share the value at the end of their tie
    block so every tied observation sits in each other's risk set.
    """
    risks = risks if isinstance(risks, Tensor) else dc.constant(risks)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    n = risks.shape[0]
    if risks.ndim != 1 or times.shape != (n,) or events.shape != (n,):
        raise ShapeError("cox_loss", risks.shape, times.shape, events.shape)
    n_events = float(events.sum())
    if n_events == 0:
        raise DataFormatError("all observations censored")

    order = order_for_risk_sets(times)
    t_sorted = times[order]
    # last sorted position whose time equals this one
    block_end = np.searchsorted(-t_sorted, -t_sorted, side="right") - 1
    r_sorted = dc.take(risks, order)
    log_risk_set = dc.take(dc.cumlogsumexp(r_sorted), block_end)
    delta = dc.constant(events[order].astype(risks.dtype))
    partial = dc.reduce_sum(delta * (r_sorted - log_risk_set))
    return partial * (-1.0 / n_events)


def joint_loss(elbo_terms: Tensor, cox: Tensor, weights: LossWeights) -> Tensor:
    """(tau / n) * sum(elbo_terms) + (1 - tau) * cox."""
    n = elbo_terms.shape[0]
    return dc.reduce_sum(elbo_terms) * (weights.tau / n) + cox * (1.0 - weights.tau)
