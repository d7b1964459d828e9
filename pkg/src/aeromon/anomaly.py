"""Reconstruction-error anomaly scoring with percentile-calibrated thresholds.

A trained reconstruction network plus a normals-fitted scaler become a
classifier: score each sample by reconstruction MSE or by the Mahalanobis
distance of its residual from the healthy residual distribution, then flag
scores strictly above a threshold calibrated as a high percentile of the
healthy training scores.

Scores are always computed one sample at a time through the same code path
`classify` uses, so a calibration score and a later classification score of
the same sample are bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import Network, forward, load_network, mse_loss
from .dataset import Dataset, Label, MinMaxScaler
from .errors import (
    DataError,
    DegenerateResidualsError,
    DomainError,
    InsufficientDataError,
    NotPositiveDefiniteError,
    ShapeError,
)
from .numerics import CholeskyFactor, cholesky, covariance, solve_spd

SCORER_FORMAT_VERSION = 1

MSE_POLICY = "mse"
MAHALANOBIS_POLICY = "mahalanobis"
POLICY_KINDS = (MSE_POLICY, MAHALANOBIS_POLICY)


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str = MAHALANOBIS_POLICY
    percentile: float = 85.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise DomainError(f"unknown threshold policy '{self.kind}'")
        if not 0.0 < self.percentile < 100.0:
            raise DomainError("calibration percentile must lie strictly in (0, 100)")


@dataclass(frozen=True)
class ResidualStats:
    """Mean and covariance factor of healthy reconstruction residuals.

    The raw covariance is kept alongside the factor so a serialized scorer
    can be refactored on load into the bit-identical CholeskyFactor (the
    jitter escalation is deterministic in the input matrix).
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: CholeskyFactor
    n_fit: int


def residual(net: Network, x_scaled) -> np.ndarray:
    """r = reconstruction - input, for one scaled sample."""
    x = np.asarray(x_scaled, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("residual expects a single sample vector")
    out, _ = forward(net, x)
    return out - x


def score_mse(net: Network, x_scaled) -> float:
    x = np.asarray(x_scaled, dtype=np.float64)
    out, _ = forward(net, x)
    return mse_loss(x, out)


def score_mahalanobis(stats: ResidualStats, r) -> float:
    """sqrt((r - mean)^T Sigma^{-1} (r - mean)) through the Cholesky solve."""
    r = np.asarray(r, dtype=np.float64)
    centered = r - stats.mean
    solved = solve_spd(stats.chol, centered)
    return math.sqrt(max(float(np.dot(centered, solved)), 0.0))


def fit_residual_stats(net: Network, ae_train_scaled: Dataset) -> ResidualStats:
    """Residual mean and jittered covariance factor over healthy samples."""
    if ae_train_scaled.n < 8:
        raise InsufficientDataError(f"residual statistics need >= 8 samples, got {ae_train_scaled.n}")
    residuals = np.array([residual(net, row) for row in ae_train_scaled.features])
    mean, cov = covariance(residuals)
    try:
        factor = cholesky(cov, 0.0)
    except NotPositiveDefiniteError as exc:
        raise DegenerateResidualsError(f"residual covariance is not factorizable: {exc}") from exc
    return ResidualStats(mean=mean, cov=cov, chol=factor, n_fit=ae_train_scaled.n)


def calibration_threshold(scores, p: float) -> float:
    """Threshold = the order statistic at rank ceil(p/100 * (n-1)).

    Taking the upper flanking order statistic (instead of interpolating
    between ranks) guarantees that the strictly-above fraction of the
    calibration scores is floor((1-p/100)*(n-1))/n for tie-free scores:
    never above (100-p)%, and within 2/n below it. p=100 is accepted here
    and yields the maximum score (nothing strictly above).
    """
    if not 0.0 < p <= 100.0:
        raise DomainError("calibration percentile must lie in (0, 100]")
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise InsufficientDataError("cannot calibrate on an empty score list")
    rank = int(math.ceil((p / 100.0) * (s.size - 1)))
    return float(s[rank])


@dataclass(frozen=True)
class AnomalyScorer:
    """Self-contained decision rule: network + scaler + threshold (+stats)."""

    net: Network
    scaler: MinMaxScaler
    policy: ThresholdPolicy
    threshold: float
    stats: ResidualStats | None = None

    def __post_init__(self):
        if (self.policy.kind == MAHALANOBIS_POLICY) != (self.stats is not None):
            raise DomainError("residual stats are required exactly for the mahalanobis policy")
        if not math.isfinite(self.threshold):
            raise DomainError("threshold must be finite")


def _score_scaled(policy_kind: str, net: Network, stats: ResidualStats | None, x_scaled) -> float:
    if policy_kind == MSE_POLICY:
        return score_mse(net, x_scaled)
    return score_mahalanobis(stats, residual(net, x_scaled))


def calibrate(net: Network, scaler: MinMaxScaler, ae_train: Dataset, policy: ThresholdPolicy) -> AnomalyScorer:
    """Score every healthy training sample and set the percentile threshold.

    `ae_train` holds raw (unscaled) samples; the scaler is applied here so
    calibration and classification share one transformation.
    """
    if ae_train.n == 0:
        raise InsufficientDataError("cannot calibrate on an empty dataset")
    if ae_train.is_labeled and int(ae_train.labels.max(initial=0)) != 0:
        raise DataError("calibration data must contain only normal samples")
    scaled = scaler.transform(ae_train.features)
    stats = None
    if policy.kind == MAHALANOBIS_POLICY:
        stats = fit_residual_stats(net, Dataset(scaled, channel_names=ae_train.channel_names))
    scores = [_score_scaled(policy.kind, net, stats, row) for row in scaled]
    threshold = calibration_threshold(scores, policy.percentile)
    return AnomalyScorer(net=net, scaler=scaler, policy=policy, threshold=threshold, stats=stats)


def score_sample(scorer: AnomalyScorer, x_raw) -> float:
    x = np.asarray(x_raw, dtype=np.float64)
    if x.shape != (scorer.scaler.mins.shape[0],):
        raise ShapeError(f"sample has shape {x.shape}, expected ({scorer.scaler.mins.shape[0]},)")
    return _score_scaled(scorer.policy.kind, scorer.net, scorer.stats, scorer.scaler.transform(x))


def classify(scorer: AnomalyScorer, x_raw) -> tuple[Label, float]:
    """Anomalous iff score > threshold; a tie is Normal."""
    score = score_sample(scorer, x_raw)
    label = Label.ANOMALOUS if score > scorer.threshold else Label.NORMAL
    return label, score


def scorer_to_dict(scorer: AnomalyScorer, model_file: str) -> dict:
    d = {
        "format_version": SCORER_FORMAT_VERSION,
        "policy": scorer.policy.kind,
        "percentile": scorer.policy.percentile,
        "threshold": scorer.threshold,
        "model_file": model_file,
        "scaler": scorer.scaler.to_dict(),
        "residual_mean": None,
        "residual_cov": None,
        "n_fit": None,
    }
    if scorer.stats is not None:
        d["residual_mean"] = [float(v) for v in scorer.stats.mean]
        d["residual_cov"] = [float(v) for v in scorer.stats.cov.ravel(order="C")]
        d["n_fit"] = scorer.stats.n_fit
    return d


def save_scorer(scorer: AnomalyScorer, path, model_file: str) -> None:
    Path(path).write_text(json.dumps(scorer_to_dict(scorer, model_file), sort_keys=True), encoding="utf-8")


def load_scorer(path) -> AnomalyScorer:
    """Rebuild a scorer; the referenced model file is resolved relative to
    the scorer file's directory."""
    path = Path(path)
    d = json.loads(path.read_text(encoding="utf-8"))
    if d.get("format_version") != SCORER_FORMAT_VERSION:
        raise DataError(f"unsupported scorer format version {d.get('format_version')!r}")
    net = load_network(path.parent / d["model_file"])
    scaler = MinMaxScaler.from_dict(d["scaler"])
    policy = ThresholdPolicy(kind=d["policy"], percentile=d["percentile"])
    stats = None
    if policy.kind == MAHALANOBIS_POLICY:
        mean = np.array(d["residual_mean"], dtype=np.float64)
        dim = mean.shape[0]
        cov = np.array(d["residual_cov"], dtype=np.float64).reshape(dim, dim)
        try:
            factor = cholesky(cov, 0.0)
        except NotPositiveDefiniteError as exc:
            raise DegenerateResidualsError(f"stored residual covariance is not factorizable: {exc}") from exc
        stats = ResidualStats(mean=mean, cov=cov, chol=factor, n_fit=int(d["n_fit"]))
    return AnomalyScorer(net=net, scaler=scaler, policy=policy, threshold=float(d["threshold"]), stats=stats)
