"""Minibatch optimisation of the joint VAE + Cox objective."""

from __future__ import annotations

import copy
import logging

import numpy as np

from . import diffcore as dc
from .checkpoint import Checkpoint
from .config import RunConfig
from .coxhead import LossWeights, cox_loss, joint_loss, risk_score
from .diffcore import Adam
from .errors import DataFormatError
from .model import ModelState
from .survdata import SurvivalDataset
from .vae import decode, elbo_loss, encode, reparameterize

log = logging.getLogger(__name__)

_MAX_RESAMPLES = 1000


def init_checkpoint(config: RunConfig, n_features: int) -> Checkpoint:
    rng = np.random.default_rng(config.seed)
    model = ModelState.init(
        n_features,
        config.latent_dim,
        config.encoder_widths,
        config.decoder_widths,
        rng,
        np.dtype(config.dtype),
        config.psi_init_scale,
    )
    opt_args = dict(beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    return Checkpoint(
        config=config,
        model=model,
        adam_vae=Adam(config.lr_vae, **opt_args),
        adam_cox=Adam(config.lr_cox, **opt_args),
        rng_state=rng.bit_generator.state,
    )


def batch_losses(
    model: ModelState,
    x: np.ndarray,
    times: np.ndarray,
    events: np.ndarray,
    eps: np.ndarray,
    weights: LossWeights,
    vae_leaves: dict | None = None,
    cox_leaves: dict | None = None,
):
    """Build the graph for one batch; returns (joint, mean elbo, cox) tensors."""
    xt = dc.constant(x)
    q = encode(xt, model.encoder, vae_leaves)
    z = reparameterize(q, eps)
    x_hat = decode(z, model.decoder, vae_leaves)
    elbo = elbo_loss(xt, q, x_hat, weights.beta)
    psi = cox_leaves["cox.psi"] if cox_leaves is not None else model.psi
    cox = cox_loss(risk_score(z, psi), times, events)
    return joint_loss(elbo, cox, weights), elbo, cox


def _batches(rng, n: int, batch_size: int, events: np.ndarray):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        tries = 0
        while events[idx].sum() == 0:
            # risk sets need at least one event; draw a replacement batch
            tries += 1
            if tries > _MAX_RESAMPLES:
                raise DataFormatError("could not draw a batch containing an event")
            idx = rng.choice(n, size=len(idx), replace=False)
        yield idx


def train(
    config: RunConfig,
    data: SurvivalDataset,
    resume: Checkpoint | None = None,
) -> Checkpoint:
    """Run epochs up to ``config.epochs``, continuing from ``resume`` if given."""
    if data.events.sum() == 0:
        raise DataFormatError("all observations censored")
    if resume is None:
        ckpt = init_checkpoint(config, data.n_features)
    else:
        ckpt = copy.deepcopy(resume)
        ckpt.config = config
    dtype = np.dtype(config.dtype)
    model = ckpt.model
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    weights = LossWeights(config.tau, config.beta)
    features = data.features.astype(dtype)
    n = len(data)

    for epoch in range(ckpt.epoch, config.epochs):
        sums = np.zeros(3)
        count = 0
        for idx in _batches(rng, n, config.batch_size, data.events):
            eps = rng.standard_normal((len(idx), config.latent_dim)).astype(dtype)
            vae_leaves = dc.leaves(model.vae_arrays())
            cox_leaves = dc.leaves(model.cox_arrays())
            loss, elbo, cox = batch_losses(
                model, features[idx], data.times[idx], data.events[idx], eps, weights, vae_leaves, cox_leaves
            )
            grads = dc.backward(loss)
            ckpt.adam_vae.step(model.vae_arrays(), {k: grads[t] for k, t in vae_leaves.items()})
            ckpt.adam_cox.step(model.cox_arrays(), {k: grads[t] for k, t in cox_leaves.items()})
            sums += len(idx) * np.array([loss.item(), float(np.mean(elbo.data)), cox.item()])
            count += len(idx)
        joint, elbo_mean, cox_mean = (float(v) for v in sums / count)
        ckpt.history.append({"epoch": epoch + 1, "joint": joint, "elbo": elbo_mean, "cox": cox_mean})
        ckpt.epoch = epoch + 1
        log.info("epoch %d joint %.4f elbo %.4f cox %.4f", epoch + 1, joint, elbo_mean, cox_mean)

    ckpt.rng_state = rng.bit_generator.state
    return ckpt
