"""Parameter container tying encoder, decoder and Cox head together."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .coxhead import risk_score
from .vae import MLP, LatentGaussian, decode, encode


@dataclass
class ModelState:
    encoder: MLP
    decoder: MLP
    psi: np.ndarray

    @classmethod
    def init(
        cls,
        n_features: int,
        latent_dim: int,
        encoder_widths=(256, 64),
        decoder_widths=(64, 256),
        rng: np.random.Generator | None = None,
        dtype=np.float32,
        psi_init_scale: float = 3.0,
    ) -> "ModelState":
        rng = rng if rng is not None else np.random.default_rng(0)
        enc = MLP.init([n_features, *encoder_widths, 2 * latent_dim], rng, dtype)
        dec = MLP.init([latent_dim, *decoder_widths, n_features], rng, dtype)
        # the head trains at a tiny learning rate, so its init sets the risk scale
        psi = (rng.standard_normal(latent_dim) * psi_init_scale).astype(dtype)
        return cls(enc, dec, psi)

    @property
    def latent_dim(self) -> int:
        return self.psi.shape[0]

    @property
    def n_features(self) -> int:
        return self.encoder.sizes[0]

    @property
    def dtype(self):
        return self.psi.dtype

    def vae_arrays(self) -> dict[str, np.ndarray]:
        return {**self.encoder.named_arrays("encoder"), **self.decoder.named_arrays("decoder")}

    def cox_arrays(self) -> dict[str, np.ndarray]:
        return {"cox.psi": self.psi}

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {**self.vae_arrays(), **self.cox_arrays()}

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "ModelState":
        return cls(MLP.from_named(arrays, "encoder"), MLP.from_named(arrays, "decoder"), arrays["cox.psi"])

    # inference helpers on plain arrays
    def encode(self, x: np.ndarray) -> LatentGaussian:
        return encode(np.asarray(x, dtype=self.dtype), self.encoder)

    def decode_mean(self, z: np.ndarray) -> np.ndarray:
        return decode(np.asarray(z, dtype=self.dtype), self.decoder).data

    def risk(self, z: np.ndarray) -> np.ndarray:
        return risk_score(dc.constant(np.asarray(z, dtype=self.dtype)), self.psi).data
