"""Evaluation: concordance, hazard/class rank agreement, PCA, reconstruction."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from . import diffcore as dc
from .errors import DataFormatError, ShapeError
from .model import ModelState
from .survdata import SurvivalDataset
from .vae import bernoulli_nll


@dataclass
class EmbeddingTable:
    ids: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    risk: np.ndarray
    time: np.ndarray
    event: np.ndarray
    class_label: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        if len(np.unique(self.ids)) != n:
            raise DataFormatError("embedding ids must be unique")
        if self.mu.shape != self.sigma.shape or self.mu.shape[0] != n:
            raise ShapeError("EmbeddingTable", self.mu.shape, self.sigma.shape)

    def __len__(self) -> int:
        return len(self.ids)

    def to_csv(self, path) -> None:
        d = self.mu.shape[1]
        header = (
            ["id"]
            + [f"mu_{i + 1}" for i in range(d)]
            + [f"sigma_{i + 1}" for i in range(d)]
            + ["risk", "time", "event", "class"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(len(self)):
                label = "" if self.class_label is None else int(self.class_label[i])
                writer.writerow(
                    [int(self.ids[i])]
                    + [repr(float(v)) for v in self.mu[i]]
                    + [repr(float(v)) for v in self.sigma[i]]
                    + [repr(float(self.risk[i])), repr(float(self.time[i])), int(self.event[i]), label]
                )


def embed(model: ModelState, data: SurvivalDataset) -> EmbeddingTable:
    """Posterior means/scales and mean-based risk scores for every record."""
    q = model.encode(data.features)
    mu = q.mu.data.astype(np.float64)
    return EmbeddingTable(
        ids=np.arange(len(data)),
        mu=mu,
        sigma=q.sigma.astype(np.float64),
        risk=model.risk(q.mu.data).astype(np.float64),
        time=data.times,
        event=data.events,
        class_label=data.class_labels,
    )


def c_index(risks, times, events) -> float:
    """Harrell's C: over pairs with t_i < t_j and delta_i = 1, share with r_i > r_j.

    Ties in risk earn half credit; pairs with equal times are not comparable.
    """
    r = np.asarray(risks, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    if not (r.shape == t.shape == e.shape):
        raise ShapeError("c_index", r.shape, t.shape, e.shape)
    if not e.any():
        raise DataFormatError("all observations censored")
    concordant = 0.0
    comparable = 0
    for i in np.flatnonzero(e):
        later = t > t[i]
        n = int(later.sum())
        if n == 0:
            continue
        comparable += n
        rj = r[later]
        concordant += np.sum(r[i] > rj) + 0.5 * np.sum(r[i] == rj)
    if comparable == 0:
        raise DataFormatError("no comparable pairs for the concordance index")
    return float(concordant / comparable)


@dataclass
class PCA2:
    projection: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d)
    eigenvalues: np.ndarray  # (d,) descending
    mean: np.ndarray


def pca2(points) -> PCA2:
    """Project onto the top two covariance eigenvectors.

    Each component's sign is fixed so its largest-magnitude loading is positive.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ShapeError("pca2 (need n >= 2, d >= 2)", x.shape)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[0] <= 0:
        raise DataFormatError("pca2: data has zero variance")
    comps = vecs[:, :2].T.copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    return PCA2(xc @ comps.T, comps, np.clip(vals, 0, None), mean)


def hazard_rank_agreement(table: EmbeddingTable) -> float:
    """Spearman correlation between class label and per-class mean risk."""
    if table.class_label is None:
        raise DataFormatError("hazard_rank_agreement needs class labels")
    classes = np.unique(table.class_label)
    if len(classes) < 2:
        raise DataFormatError("hazard_rank_agreement needs at least two classes")
    means = np.array([table.risk[table.class_label == k].mean() for k in classes])
    return float(spearmanr(classes, means).statistic)


def reconstruction_nll(model: ModelState, data: SurvivalDataset) -> float:
    """Mean Bernoulli NLL per record when decoding the posterior mean."""
    q = model.encode(data.features)
    x_hat = model.decode_mean(q.mu.data)
    nll = bernoulli_nll(dc.constant(data.features.astype(x_hat.dtype)), dc.constant(x_hat))
    return float(np.mean(nll.data.astype(np.float64)))


def evaluate(model: ModelState, data: SurvivalDataset) -> dict:
    table = embed(model, data)
    out = {
        "n": len(data),
        "c_index": c_index(table.risk, table.time, table.event),
        "reconstruction_nll": reconstruction_nll(model, data),
        "cohort_mean_risk": float(table.risk.mean()),
    }
    if data.class_labels is not None and len(np.unique(data.class_labels)) > 1:
        out["hazard_rank_agreement"] = hazard_rank_agreement(table)
    return out
