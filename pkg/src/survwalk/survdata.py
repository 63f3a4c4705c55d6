"""Survival datasets: glyph simulation, MNIST IDX ingestion, risk-set ordering.

Simulated images of class ``k`` show ``k`` evenly spaced horizontal bars on a
square canvas.  Event times are exponential with rate
``base_rate * exp(hazard_slope * k)``, so higher classes fail sooner.  An
independent exponential censoring clock is tuned so that the expected
censored fraction matches the configured target.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class SimulationConfig:
    n_classes: int = 10
    samples_per_class: int = 200
    image_size: int = 16
    base_rate: float = 0.001
    hazard_slope: float = 1.0
    censoring_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.samples_per_class < 1 or self.image_size < 1:
            raise ConfigError("n_classes, samples_per_class and image_size must be positive")
        if self.base_rate <= 0 or self.hazard_slope <= 0:
            raise ConfigError("base_rate and hazard_slope must be positive")
        if not 0 <= self.censoring_fraction < 1:
            raise ConfigError(f"censoring_fraction must lie in [0, 1), got {self.censoring_fraction}")
        if self.n_classes - 1 > self.image_size:
            raise ConfigError("image_size too small to draw one bar per class")

    def class_rates(self, n_classes: int | None = None) -> np.ndarray:
        k = np.arange(self.n_classes if n_classes is None else n_classes)
        return self.base_rate * np.exp(self.hazard_slope * k)


@dataclass(frozen=True)
class SurvivalRecord:
    features: np.ndarray
    time: float
    event: int
    class_label: int | None = None


@dataclass
class SurvivalDataset:
    """Column-oriented survival data; indexing yields :class:`SurvivalRecord`."""

    features: np.ndarray  # (n, p) in [0, 1]
    times: np.ndarray  # (n,) > 0
    events: np.ndarray  # (n,) in {0, 1}
    class_labels: np.ndarray | None = None  # (n,)
    provenance: str = "simulated"
    seed: int | None = None
    image_shape: tuple[int, int] = field(default=(16, 16))

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.times = np.asarray(self.times, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.int64)
        n = len(self.times)
        if n == 0:
            raise DataFormatError("dataset is empty")
        if self.features.shape[0] != n or self.events.shape != (n,):
            raise DataFormatError("features, times and events disagree in length")
        if self.class_labels is not None:
            self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
            if self.class_labels.shape != (n,):
                raise DataFormatError("class_labels length mismatch")
        if np.any(self.times <= 0) or not np.all(np.isfinite(self.times)):
            raise DataFormatError("survival times must be positive and finite")
        if not np.all((self.events == 0) | (self.events == 1)):
            raise DataFormatError("event indicators must be 0 or 1")
        if self.events.sum() == 0:
            raise DataFormatError("all observations censored")
        if self.features.min() < 0 or self.features.max() > 1:
            raise DataFormatError("pixel intensities must lie in [0, 1]")
        self.image_shape = tuple(int(s) for s in self.image_shape)

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i: int) -> SurvivalRecord:
        label = None if self.class_labels is None else int(self.class_labels[i])
        return SurvivalRecord(self.features[i], float(self.times[i]), int(self.events[i]), label)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(
            self.features[idx],
            self.times[idx],
            self.events[idx],
            None if self.class_labels is None else self.class_labels[idx],
            self.provenance,
            self.seed,
            self.image_shape,
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            "features": self.features.astype(np.float32),
            "time": self.times.astype(np.float64),
            "event": self.events.astype(np.int64),
        }
        if self.class_labels is not None:
            arrays["class"] = self.class_labels.astype(np.int64)
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], meta: dict) -> "SurvivalDataset":
        return cls(
            arrays["features"],
            arrays["time"],
            arrays["event"],
            arrays.get("class"),
            meta.get("provenance", "simulated"),
            meta.get("seed"),
            tuple(meta.get("image_shape", (16, 16))),
        )


def glyph(k: int, size: int = 16) -> np.ndarray:
    """Noise-free class-``k`` image: ``k`` one-pixel bars at evenly spaced rows."""
    img = np.zeros((size, size))
    margin = max(1, size // 8)
    for i in range(k):
        row = int((i + 0.5) * size / k)
        img[row, margin : size - margin] = 1.0
    return img


def _censoring_rate(rates: np.ndarray, weights: np.ndarray, target: float) -> float:
    """Rate ``c`` of an exponential censoring clock with E[censored] == target.

    P(censored | class k) = c / (c + rate_k) for independent exponentials.
    """
    if target == 0:
        return 0.0

    def gap(log_c):
        c = np.exp(log_c)
        return float(np.sum(weights * c / (c + rates)) - target)

    return float(np.exp(brentq(gap, -60.0, 60.0, xtol=1e-14)))


def attach_survival(
    labels: np.ndarray,
    config: SimulationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (time, event) for each class label under the exponential model."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = max(config.n_classes, int(labels.max()) + 1)
    rates = config.class_rates(n_classes)
    weights = np.bincount(labels, minlength=n_classes) / len(labels)
    c = _censoring_rate(rates, weights, config.censoring_fraction)
    event_time = rng.exponential(1.0 / rates[labels])
    if c == 0.0:
        return event_time, np.ones(len(labels), dtype=np.int64)
    censor_time = rng.exponential(1.0 / c, size=len(labels))
    times = np.minimum(event_time, censor_time)
    events = (event_time <= censor_time).astype(np.int64)
    return times, events


def simulate(config: SimulationConfig) -> SurvivalDataset:
    """Generate a class-dependent-hazard glyph dataset fully determined by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    s = config.image_size
    labels = np.repeat(np.arange(config.n_classes), config.samples_per_class)
    labels = labels[rng.permutation(len(labels))]
    glyphs = np.stack([glyph(k, s).reshape(-1) for k in range(config.n_classes)])
    noise = rng.uniform(0.0, 0.1, size=(len(labels), s * s))
    features = np.clip(glyphs[labels] + noise, 0.0, 1.0).astype(np.float32)
    times, events = attach_survival(labels, config, rng)
    return SurvivalDataset(features, times, events, labels, "simulated", config.seed, (s, s))


# ------------------------------------------------------------------- IDX


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an IDX file of unsigned bytes into an ndarray."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(f"truncated IDX header in {path}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"bad IDX magic 0x{magic:08x} in {path}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"truncated IDX header in {path}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) < count:
        raise DataFormatError(f"truncated IDX payload in {path}: {len(payload)} of {count} bytes")
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)


def load_idx(image_path, label_path, config: SimulationConfig | None = None) -> SurvivalDataset:
    """Load MNIST-style IDX images/labels and attach simulated survival times."""
    config = config or SimulationConfig()
    images = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"label value {int(labels.max())} outside 0..9")
    rng = np.random.default_rng(config.seed)
    times, events = attach_survival(labels, config, rng)
    features = (images.reshape(len(images), -1) / 255.0).astype(np.float32)
    return SurvivalDataset(features, times, events, labels, "idx", config.seed, images.shape[1:])


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (used for fixtures and round-trips)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


# ------------------------------------------------------------ risk sets


def order_for_risk_sets(data) -> np.ndarray:
    """Indices sorting observations by descending time, ties in original order.

    After this permutation the risk set ``{j : t_j >= t_i}`` is a prefix, so its
    log-sum-exp becomes a running cumulative log-sum-exp.
    """
    times = data.times if isinstance(data, SurvivalDataset) else np.asarray(data)
    return np.argsort(-times, kind="stable")
