"""Training-set distribution statistics, detection scores, and thresholds.

Two detection scores are supported, both oriented so that higher means more
anomalous: the negative maximum softmax probability (``neg_msp``) and the
Mahalanobis distance (``md``) to a single class-agnostic Gaussian fitted on
training-set embeddings. Thresholds come from a nearest-rank quantile of the
calibration scores; the detection rule is strictly greater-than, so ties sit
on the negative side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

NEG_MSP = "neg_msp"
MD = "md"
DETECTOR_KINDS = (NEG_MSP, MD)

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class GaussianStats:
    """Mean and inverse covariance of the in-distribution embeddings."""

    mu: np.ndarray
    sigma_inv: np.ndarray
    ridge_epsilon: float
    n_fit: int

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "sigma_inv": self.sigma_inv.tolist(),
            "ridge_epsilon": self.ridge_epsilon,
            "n_fit": self.n_fit,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GaussianStats":
        return cls(
            mu=np.asarray(d["mu"], dtype=np.float64),
            sigma_inv=np.asarray(d["sigma_inv"], dtype=np.float64),
            ridge_epsilon=float(d["ridge_epsilon"]),
            n_fit=int(d["n_fit"]),
        )


@dataclass(frozen=True)
class DetectorCalibration:
    """A detector kind plus its calibrated score threshold."""

    kind: str
    threshold: float
    calibration_rate: float
    n_calibration: int

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if not (0 < self.calibration_rate < 1):
            raise ValueError("calibration_rate must be in (0, 1)")

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "calibration_rate": self.calibration_rate,
            "n_calibration": self.n_calibration,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DetectorCalibration":
        return cls(
            kind=d["kind"],
            threshold=float(d["threshold"]),
            calibration_rate=float(d["calibration_rate"]),
            n_calibration=int(d["n_calibration"]),
        )


def fit_gaussian(embeddings: Sequence[np.ndarray] | np.ndarray,
                 ridge_epsilon: float = 1e-5) -> GaussianStats:
    """Fit mean and ridge-regularized inverse sample covariance.

    Covariance uses the n-1 denominator; ``ridge_epsilon`` is added to the
    diagonal before inverting through a Cholesky factorization, and the
    inverse is re-symmetrized so it is exactly symmetric.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of embeddings, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 embeddings to fit a covariance")
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / (n - 1)
    cov = cov + ridge_epsilon * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError(
            f"covariance not positive definite with ridge_epsilon={ridge_epsilon}; "
            "try a larger epsilon"
        ) from None
    inv_chol = np.linalg.inv(chol)
    sigma_inv = inv_chol.T @ inv_chol
    sigma_inv = (sigma_inv + sigma_inv.T) / 2.0
    return GaussianStats(mu=mu, sigma_inv=sigma_inv, ridge_epsilon=ridge_epsilon, n_fit=n)


def msp(logits: np.ndarray | Sequence[float]) -> float:
    """Maximum softmax probability of a logit vector, in (0, 1]."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError("msp expects a 1-D vector of at least 2 logits")
    if not np.all(np.isfinite(z)):
        raise ValueError("msp got non-finite logits")
    z = z - z.max()
    ez = np.exp(z)
    return float(ez.max() / ez.sum())


def neg_msp(logits: np.ndarray | Sequence[float]) -> float:
    return -msp(logits)


def md(embedding: np.ndarray | Sequence[float], stats: GaussianStats) -> float:
    """Mahalanobis distance sqrt((x - mu) S^-1 (x - mu)^T), >= 0."""
    x = np.asarray(embedding, dtype=np.float64)
    if x.shape != stats.mu.shape:
        raise ValueError(
            f"embedding dimension {x.shape} does not match stats dimension {stats.mu.shape}"
        )
    delta = x - stats.mu
    q = float(delta @ stats.sigma_inv @ delta)
    return math.sqrt(max(q, 0.0))


def calibrate_threshold(scores: Sequence[float], rate: float,
                        kind: str = NEG_MSP) -> DetectorCalibration:
    """Set the threshold at the nearest-rank (1 - rate) quantile of ``scores``.

    With this convention at most ceil(rate * N) calibration scores strictly
    exceed the threshold, i.e. the calibration-set flag rate stays at or
    below ``rate`` up to one rank.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot calibrate a threshold on empty scores")
    if not (0 < rate < 1):
        raise ValueError("rate must be in (0, 1)")
    threshold = float(np.quantile(arr, 1.0 - rate, method="nearest"))
    return DetectorCalibration(
        kind=kind,
        threshold=threshold,
        calibration_rate=rate,
        n_calibration=int(arr.size),
    )


def detect(score: float, cal: DetectorCalibration) -> bool:
    """Flag as adversarial iff the score strictly exceeds the threshold."""
    return score > cal.threshold


@dataclass(frozen=True)
class DetectorSuite:
    """Fitted stats plus both calibrated detectors, bundled for scoring."""

    stats: GaussianStats
    neg_msp_cal: DetectorCalibration
    md_cal: DetectorCalibration

    def score_and_flag(self, logits: np.ndarray, embedding: np.ndarray
                       ) -> tuple[float, float, bool, bool]:
        """Return (msp, md, flagged_msp, flagged_md) for one input."""
        p = msp(logits)
        dist = md(embedding, self.stats)
        return p, dist, detect(-p, self.neg_msp_cal), detect(dist, self.md_cal)

    def save(self, path: str | Path) -> None:
        payload = {
            "stats": self.stats.to_json_dict(),
            "neg_msp_cal": self.neg_msp_cal.to_json_dict(),
            "md_cal": self.md_cal.to_json_dict(),
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DetectorSuite":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            stats=GaussianStats.from_json_dict(d["stats"]),
            neg_msp_cal=DetectorCalibration.from_json_dict(d["neg_msp_cal"]),
            md_cal=DetectorCalibration.from_json_dict(d["md_cal"]),
        )


def save_stats(stats: GaussianStats, path: str | Path) -> None:
    Path(path).write_text(json.dumps(stats.to_json_dict()) + "\n", encoding="utf-8")


def load_stats(path: str | Path) -> GaussianStats:
    return GaussianStats.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))
