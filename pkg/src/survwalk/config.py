"""Run configuration and YAML loading."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .survdata import SimulationConfig


@dataclass(frozen=True)
class RunConfig:
    latent_dim: int = 4
    beta: float = 1.0
    tau: float = 0.5
    lr_vae: float = 1e-4
    lr_cox: float = 1e-5
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    encoder_widths: tuple[int, ...] = (256, 64)
    decoder_widths: tuple[int, ...] = (64, 256)
    psi_init_scale: float = 3.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float32"
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        if isinstance(self.simulation, dict):
            object.__setattr__(self, "simulation", SimulationConfig(**self.simulation))
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.lr_vae <= 0 or self.lr_cox <= 0:
            raise ConfigError("learning rates must be positive")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be at least 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def image_size(self) -> int:
        return self.simulation.image_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "simulation" in d:
            sim = d["simulation"] or {}
            sim_known = {f.name for f in fields(SimulationConfig)}
            if set(sim) - sim_known:
                raise ConfigError(f"unknown simulation keys: {sorted(set(sim) - sim_known)}")
            d["simulation"] = SimulationConfig(**sim)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def override(self, **values) -> "RunConfig":
        """Apply non-None overrides; ``simulation.<key>`` names reach the nested config."""
        top, sim = {}, {}
        for key, value in values.items():
            if value is None:
                continue
            if key.startswith("simulation."):
                sim[key.split(".", 1)[1]] = value
            else:
                top[key] = value
        cfg = replace(self, **top) if top else self
        if sim:
            cfg = replace(cfg, simulation=replace(cfg.simulation, **sim))
        return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return RunConfig.from_dict(raw)
