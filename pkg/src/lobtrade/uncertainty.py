"""Classification uncertainty from Monte-Carlo sample matrices.

An (M, 3) sample matrix of softmax rows is summarized by the mean
probability vector and three scalar measures: predictive entropy
(entropy of the mean), mutual information (predictive entropy minus
mean per-sample entropy; model disagreement), and the variation ratio
(fraction of passes whose argmax differs from the modal argmax).

Entropies default to nats; a different log base can be configured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def mean_prob(samples: np.ndarray) -> np.ndarray:
    """Column-wise arithmetic mean of the sample rows."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"expected non-empty (M, classes) matrix, got {samples.shape}")
    return samples.mean(axis=0)


def _entropy_rows(p: np.ndarray, base: float) -> np.ndarray:
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    if base != math.e:
        h = h / math.log(base)
    return h


def predictive_entropy(p_bar: np.ndarray, base: float = math.e) -> float:
    """Entropy of a probability vector, with 0*log(0) := 0."""
    p_bar = np.asarray(p_bar, dtype=np.float64)
    return float(_entropy_rows(p_bar, base))


def mutual_information(samples: np.ndarray, base: float = math.e) -> float:
    """Entropy of the mean minus the mean per-row entropy."""
    samples = np.asarray(samples, dtype=np.float64)
    h_mean = predictive_entropy(mean_prob(samples), base)
    return h_mean - float(_entropy_rows(samples, base).mean())


def variation_ratio(samples: np.ndarray) -> float:
    """1 - (modal argmax count) / M; row ties go to the lowest index."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"expected non-empty (M, classes) matrix, got {samples.shape}")
    winners = np.argmax(samples, axis=1)  # first index wins ties
    counts = np.bincount(winners, minlength=samples.shape[1])
    return 1.0 - counts.max() / samples.shape[0]


@dataclass(frozen=True)
class UncertaintySummary:
    """Mean probability vector plus the three uncertainty measures."""

    p_bar: np.ndarray
    entropy: float
    mutual_info: float
    variation_ratio: float

    @classmethod
    def from_samples(cls, samples: np.ndarray, base: float = math.e) -> "UncertaintySummary":
        p_bar = mean_prob(samples)
        return cls(
            p_bar=p_bar,
            entropy=predictive_entropy(p_bar, base),
            mutual_info=mutual_information(samples, base),
            variation_ratio=variation_ratio(samples),
        )
