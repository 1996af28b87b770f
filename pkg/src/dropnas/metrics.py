"""Monte-Carlo predictive inference and the algorithmic search metrics.

* accuracy (%) of the MC-averaged prediction
* expected calibration error (%), equal-width confidence bins
* average predictive entropy (nats) of the MC-averaged distribution
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .supernet import SupernetSpec, activate

EVAL_CHUNK = 500


@dataclass(frozen=True)
class PredictiveDist:
    """MC-averaged class probabilities, one row per input."""

    probs: np.ndarray
    samples: int

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    ece: float
    ape: float
    latency_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


def _probs(dists) -> np.ndarray:
    if isinstance(dists, PredictiveDist):
        p = dists.probs
    elif isinstance(dists, (list, tuple)) and dists and isinstance(dists[0], PredictiveDist):
        p = np.concatenate([np.atleast_2d(d.probs) for d in dists])
    else:
        p = np.asarray(dists, dtype=np.float64)
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.shape[0] == 0:
        raise ValueError("metrics need at least one prediction")
    return p


def mc_predict(
    spec: SupernetSpec,
    params,
    genome: Sequence[int],
    x: np.ndarray,
    samples: int = 3,
    rng: np.random.Generator | None = None,
    quantize: bool = False,
) -> PredictiveDist:
    """Average the softmax of ``samples`` stochastic forward passes.

    Every input gets its own dropout masks on every pass; Masksembles slots use
    bank mask ``t mod K`` on pass ``t``.
    """
    if samples < 1:
        raise ValueError(f"need at least one MC sample, got {samples}")
    rng = np.random.default_rng() if rng is None else rng
    single = x.shape == spec.backbone.input_shape
    xb = x[None] if single else x
    total = np.zeros((len(xb), spec.backbone.num_classes), dtype=np.float64)
    for start in range(0, len(xb), EVAL_CHUNK):
        chunk = xb[start : start + EVAL_CHUNK]
        for t in range(samples):
            masks = activate(spec, genome, t, rng, batch=len(chunk))
            logits = nn.forward(spec.backbone, params, chunk, masks, quantize=quantize)[-1]
            total[start : start + len(chunk)] += nn.softmax(logits.astype(np.float64))
    probs = total / samples
    return PredictiveDist(probs[0] if single else probs, samples)


def accuracy(dists, labels) -> float:
    p = _probs(dists)
    labels = np.asarray(labels).reshape(-1)
    if len(labels) != len(p):
        raise ValueError(f"{len(p)} predictions for {len(labels)} labels")
    # argmax returns the first maximal index, i.e. ties go to the lowest class
    return 100.0 * float(np.mean(p.argmax(axis=1) == labels))


def ece(dists, labels, bins: int = 10) -> float:
    """Expected calibration error in percent.

    Bin ``b`` holds confidences in ``(b/B, (b+1)/B]``; a confidence of exactly
    0 goes to bin 0.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    p = _probs(dists)
    labels = np.asarray(labels).reshape(-1)
    if len(labels) != len(p):
        raise ValueError(f"{len(p)} predictions for {len(labels)} labels")
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == labels).astype(np.float64)
    edges = np.arange(bins + 1) / bins
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    n = len(conf)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    hit_sum = np.bincount(idx, weights=correct, minlength=bins)
    terms = [
        (counts[b] / n) * abs(hit_sum[b] / counts[b] - conf_sum[b] / counts[b])
        for b in range(bins)
        if counts[b]
    ]
    return 100.0 * math.fsum(terms)


def entropy(probs) -> np.ndarray:
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    logs = np.log(np.where(p > 0, p, 1.0))
    return -(p * logs).sum(axis=1)


def ape(dists) -> float:
    """Mean entropy (nats) of the MC-averaged predictive distributions."""
    h = entropy(_probs(dists))
    return max(0.0, float(h.mean()))


def make_ood(mean, std, n: int, shape=None, seed: int = 0) -> np.ndarray:
    """Gaussian noise images matching per-feature training mean and std."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise ValueError("standard deviation must be non-negative")
    shape = mean.shape if shape is None else tuple(shape)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, *shape))
    return (mean + std * z).astype(np.float32)
