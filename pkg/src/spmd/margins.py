"""Signed margins and their first two moments.

The margin of sample i is t_i <W, Z_i>. Moments use the population
convention (divide by N). A tiny negative variance from floating-point
cancellation is clamped to zero with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .tensor import DenseTensor

VARIANCE_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class MarginSummary:
    margins: np.ndarray
    mean: float
    variance: float


def signed_margins(w: DenseTensor, data: LabeledDataset) -> np.ndarray:
    """Per-sample signed margins t_i <W, Z_i>."""
    if w.dims != data.dims:
        raise ValueError(f"weight dims {w.dims} do not match data dims {data.dims}")
    return data.labels * (data.samples @ w.data)


def margin_mean(margins: np.ndarray) -> float:
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise ValueError("no margins")
    return float(np.mean(margins))


def margin_variance(margins: np.ndarray) -> float:
    """Population variance of the margins; clamps tiny negative rounding."""
    margins = np.asarray(margins, dtype=np.float64)
    if margins.size == 0:
        raise ValueError("no margins")
    v = float(np.mean(margins**2) - np.mean(margins) ** 2)
    if v < 0.0:
        if v < -VARIANCE_CLAMP_TOL * max(1.0, float(np.mean(margins**2))):
            raise ValueError(f"variance {v} is negative beyond rounding tolerance")
        warnings.warn(f"variance {v} clamped to 0", stacklevel=2)
        v = 0.0
    return v


def summarize_margins(w: DenseTensor, data: LabeledDataset) -> MarginSummary:
    m = signed_margins(w, data)
    return MarginSummary(m, margin_mean(m), margin_variance(m))


def summarize_scores(scores: np.ndarray, labels: np.ndarray) -> MarginSummary:
    """Margin summary from precomputed raw scores <W, Z_i>."""
    m = np.asarray(labels, dtype=np.float64) * np.asarray(scores, dtype=np.float64)
    return MarginSummary(m, margin_mean(m), margin_variance(m))


def mode_margin_stats(features: np.ndarray, labels: np.ndarray,
                      v: np.ndarray) -> MarginSummary:
    """Margin summary in mode-feature matrix form.

    mean = (1/N) (Z t)' v and variance = v' Z (N I - t t')/N^2 Z' v, for a
    D x N feature matrix Z; matches the elementwise forms on t_i * (v'z_i).
    """
    z = np.asarray(features, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if z.ndim != 2:
        raise ValueError("features must be a D x N matrix")
    if t.size != z.shape[1] or v.size != z.shape[0]:
        raise ValueError(
            f"shape mismatch: features {z.shape}, {t.size} labels, weight length {v.size}"
        )
    n = t.size
    scores = z.T @ v
    mean = float((z @ t) @ v) / n
    var = float(scores @ scores) / n - float(t @ scores) ** 2 / n**2
    if var < 0.0:
        if var < -VARIANCE_CLAMP_TOL * max(1.0, float(scores @ scores) / n):
            raise ValueError(f"variance {var} is negative beyond rounding tolerance")
        warnings.warn(f"variance {var} clamped to 0", stacklevel=2)
        var = 0.0
    return MarginSummary(t * scores, mean, var)
