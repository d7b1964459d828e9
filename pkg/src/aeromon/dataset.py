"""Telemetry ingestion, scaling, splitting, and synthetic generation.

A sample is one 7-channel engine snapshot: outside air temperature (oat),
mean gas temperature (mgt), power available (pa), indicated airspeed (ias),
net power (np), compressor speed (cs), and output torque (ot), optionally
labelled normal/anomalous. Datasets are immutable after construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DomainError,
    InsufficientDataError,
    MissingLabelsError,
    ParseError,
    SchemaError,
    StratificationError,
)
from .numerics import Rng

CHANNELS = ("oat", "mgt", "pa", "ias", "np", "cs", "ot")
N_CHANNELS = len(CHANNELS)

_LABEL_TOKENS = {"0": 0, "normal": 0, "1": 1, "anomalous": 1}


class Label(IntEnum):
    NORMAL = 0
    ANOMALOUS = 1


@dataclass(frozen=True)
class TelemetrySample:
    """One snapshot: 7 raw channel readings in CHANNELS order."""

    features: tuple[float, ...]
    label: Label | None = None


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, 7) float64
    labels: np.ndarray | None = None  # (n,) int8 with Label values
    channel_names: tuple[str, ...] = CHANNELS

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != len(self.channel_names):
            raise DomainError(f"features must be (n, {len(self.channel_names)}), got {feats.shape}")
        if not np.isfinite(feats).all():
            raise DomainError("features contain non-finite values")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int8)
            if labels.shape != (feats.shape[0],):
                raise DomainError("labels length must match features")
            if not np.isin(labels, (0, 1)).all():
                raise DomainError("labels must be 0 (normal) or 1 (anomalous)")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def sample(self, i: int) -> TelemetrySample:
        label = Label(int(self.labels[i])) if self.is_labeled else None
        return TelemetrySample(tuple(float(v) for v in self.features[i]), label)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        labels = self.labels[idx] if self.is_labeled else None
        return Dataset(self.features[idx], labels, self.channel_names)

    def count(self, label: Label) -> int:
        if not self.is_labeled:
            raise MissingLabelsError("dataset has no labels")
        return int((self.labels == int(label)).sum())

    def require_labels(self) -> np.ndarray:
        if not self.is_labeled:
            raise MissingLabelsError("dataset has no labels")
        return self.labels


def load_csv(path, has_labels: bool) -> Dataset:
    """Read telemetry from `oat,mgt,pa,ias,np,cs,ot[,label]` CSV.

    Labels parse case-insensitively from {normal, anomalous} or {0, 1}.
    Row numbers in errors count data rows (header excluded).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"telemetry file not found: {path}")
    expected = list(CHANNELS) + (["label"] if has_labels else [])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InsufficientDataError(f"{path}: file is empty") from None
        header = [h.strip().lower() for h in header]
        for i, name in enumerate(expected):
            if i >= len(header):
                raise SchemaError(f"{path}: missing column '{name}'")
            if header[i] != name:
                raise SchemaError(f"{path}: expected column '{name}' at position {i + 1}, found '{header[i]}'")
        if len(header) > len(expected):
            raise SchemaError(f"{path}: unexpected extra column '{header[len(expected)]}'")

        rows: list[list[float]] = []
        labels: list[int] = []
        for rownum, cells in enumerate(reader, start=1):
            if len(cells) != len(expected):
                raise ParseError(f"{path}: row {rownum} has {len(cells)} cells, expected {len(expected)}")
            try:
                values = [float(c) for c in cells[:N_CHANNELS]]
            except ValueError:
                raise ParseError(f"{path}: row {rownum} contains a non-numeric cell") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"{path}: row {rownum} contains a non-finite value")
            rows.append(values)
            if has_labels:
                token = cells[N_CHANNELS].strip().lower()
                if token not in _LABEL_TOKENS:
                    raise ParseError(f"{path}: row {rownum} has unrecognized label '{cells[N_CHANNELS]}'")
                labels.append(_LABEL_TOKENS[token])

    if not rows:
        raise InsufficientDataError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels, dtype=np.int8) if has_labels else None)


def save_csv(data: Dataset, path, include_labels: bool | None = None) -> None:
    """Write the canonical CSV layout; floats use shortest round-trip repr."""
    if include_labels is None:
        include_labels = data.is_labeled
    if include_labels and not data.is_labeled:
        raise MissingLabelsError("cannot write labels: dataset has none")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(CHANNELS) + (["label"] if include_labels else []))
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            if include_labels:
                row.append(str(int(data.labels[i])))
            writer.writerow(row)


@dataclass(frozen=True)
class SplitResult:
    """Held-out test set plus the two training views derived from the rest."""

    test: Dataset
    supervised_train: Dataset
    ae_train: Dataset
    ae_val: Dataset
    test_indices: np.ndarray = field(repr=False, default=None)
    supervised_indices: np.ndarray = field(repr=False, default=None)
    ae_train_indices: np.ndarray = field(repr=False, default=None)
    ae_val_indices: np.ndarray = field(repr=False, default=None)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _largest_remainder_take(class_sizes: dict[int, int], fraction: float, total_take: int) -> dict[int, int]:
    """Per-class allocation: floor quotas, leftover seats by largest remainder.

    Remainder ties go to the larger class, then to the lower label value.
    """
    quotas = {c: fraction * n for c, n in class_sizes.items()}
    take = {c: int(math.floor(q)) for c, q in quotas.items()}
    seats = total_take - sum(take.values())
    order = sorted(
        class_sizes,
        key=lambda c: (-(quotas[c] - take[c]), -class_sizes[c], c),
    )
    for c in order[:seats]:
        take[c] += 1
    return take


def split(
    data: Dataset,
    test_fraction: float = 0.10,
    ae_val_fraction: float = 0.10,
    seed: int = 0,
) -> SplitResult:
    """Stratified shuffled test holdout plus unsupervised training views.

    The test set takes round(test_fraction * n) samples with per-class counts
    within one sample of the global class ratio. Normals of the remaining
    supervised training set are split again: ae_val_fraction held out for
    validation, the rest for reconstruction training. Membership is decided
    by a seeded shuffle; each part keeps original row order.
    """
    labels = data.require_labels()
    if not 0.0 < test_fraction < 1.0 or not 0.0 <= ae_val_fraction < 1.0:
        raise DomainError("split fractions must lie in (0, 1)")
    class_indices = {c: np.flatnonzero(labels == c) for c in (0, 1)}
    for c, idx in class_indices.items():
        if idx.size < 2:
            raise StratificationError(f"class {Label(c).name} has {idx.size} member(s), need >= 2")

    rng = Rng(seed)
    total_take = _round_half_up(test_fraction * data.n)
    take = _largest_remainder_take({c: idx.size for c, idx in class_indices.items()}, test_fraction, total_take)

    test_parts, train_parts = [], []
    for c in (0, 1):
        pool = list(class_indices[c])
        rng.shuffle(pool)
        test_parts.append(pool[: take[c]])
        train_parts.append(pool[take[c] :])
    test_idx = np.sort(np.concatenate([np.asarray(p, dtype=np.int64) for p in test_parts]))
    train_idx = np.sort(np.concatenate([np.asarray(p, dtype=np.int64) for p in train_parts]))

    normal_train = [i for i in train_parts[0]]
    n_val = _round_half_up(ae_val_fraction * len(normal_train))
    rng.shuffle(normal_train)
    ae_val_idx = np.sort(np.asarray(normal_train[:n_val], dtype=np.int64))
    ae_train_idx = np.sort(np.asarray(normal_train[n_val:], dtype=np.int64))

    return SplitResult(
        test=data.subset(test_idx),
        supervised_train=data.subset(train_idx),
        ae_train=data.subset(ae_train_idx),
        ae_val=data.subset(ae_val_idx),
        test_indices=test_idx,
        supervised_indices=train_idx,
        ae_train_indices=ae_train_idx,
        ae_val_indices=ae_val_idx,
    )


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-channel min and range of the fit set, mapping it onto [0, 1].

    A zero range marks a stuck channel; such channels map to constant 0
    rather than erroring.
    """

    mins: np.ndarray
    ranges: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        ranges = np.asarray(self.ranges, dtype=np.float64)
        if mins.shape != ranges.shape or mins.ndim != 1:
            raise DomainError("scaler mins/ranges must be matching vectors")
        if (ranges < 0).any():
            raise DomainError("scaler ranges must be non-negative")
        mins.setflags(write=False)
        ranges.setflags(write=False)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "ranges", ranges)

    @property
    def degenerate_channels(self) -> np.ndarray:
        return self.ranges == 0.0

    def transform(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        safe = np.where(self.ranges > 0.0, self.ranges, 1.0)
        scaled = (x - self.mins) / safe
        if x.ndim == 1:
            scaled[self.degenerate_channels] = 0.0
        else:
            scaled[:, self.degenerate_channels] = 0.0
        return scaled

    def to_dict(self) -> dict:
        return {"mins": [float(v) for v in self.mins], "ranges": [float(v) for v in self.ranges]}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.array(d["mins"], dtype=np.float64), np.array(d["ranges"], dtype=np.float64))


def fit_scaler(train: Dataset) -> MinMaxScaler:
    if train.n == 0:
        raise InsufficientDataError("cannot fit scaler on an empty dataset")
    mins = train.features.min(axis=0)
    ranges = train.features.max(axis=0) - mins
    return MinMaxScaler(mins, ranges)


def apply_scaler(scaler: MinMaxScaler, data: Dataset) -> Dataset:
    """x' = (x - min) / range per channel. Out-of-range values are NOT
    clamped: a test reading outside the fit range lands outside [0, 1],
    which is exactly the signal an anomaly detector needs."""
    return Dataset(scaler.transform(data.features), data.labels, data.channel_names)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the seeded synthetic telemetry generator.

    Severities scale the three fault transforms; 0 disables a transform's
    shift entirely.
    """

    n_samples: int
    anomaly_fraction: float = 0.40
    seed: int = 0
    oat_low: float = -5.0
    oat_high: float = 35.0
    demand_low: float = 0.30
    demand_high: float = 1.00
    torque_severity: float = 1.0
    mgt_severity: float = 1.0
    coupling_severity: float = 1.0
    coupling_gap: float = 0.10

    def __post_init__(self):
        if self.n_samples < 100:
            raise DomainError("n_samples must be >= 100")
        if not 0.0 < self.anomaly_fraction < 1.0:
            raise DomainError("anomaly_fraction must lie strictly in (0, 1)")
        if self.oat_high <= self.oat_low or self.demand_high <= self.demand_low:
            raise DomainError("regime bands must have positive width")
        if min(self.torque_severity, self.mgt_severity, self.coupling_severity) < 0:
            raise DomainError("severities must be non-negative")
        if not 0.0 <= self.coupling_gap < (self.demand_high - self.demand_low) / 2.0:
            raise DomainError("coupling_gap must be non-negative and smaller than half the demand band")


# Healthy-regime model: a latent power demand u and the ambient temperature
# drive every internal channel; the constants below set channel scales and
# noise floors. Output torque follows the design-torque curve _DT(u), so a
# healthy torque margin is zero-mean noise.
_IAS_NOISE = 3.0
_NP_NOISE = 8.0
_CS_NOISE = 0.25
_PA_NOISE = 8.0
_MGT_NOISE = 6.0
_OT_NOISE = 8.0


def _design_torque(u: float) -> float:
    return 300.0 + 420.0 * u


def _healthy_channels(rng: Rng, cfg: SynthConfig) -> tuple[dict, float]:
    u = rng.uniform(cfg.demand_low, cfg.demand_high)
    oat = rng.uniform(cfg.oat_low, cfg.oat_high)
    ias = 40.0 + 110.0 * u + rng.normal(0.0, _IAS_NOISE)
    np_ = 160.0 + 620.0 * u + rng.normal(0.0, _NP_NOISE)
    cs = 86.0 + 12.0 * u + 0.04 * (oat - 15.0) + rng.normal(0.0, _CS_NOISE)
    pa = 860.0 - 2.4 * (oat - 15.0) - 45.0 * u + rng.normal(0.0, _PA_NOISE)
    mgt = 440.0 + 0.38 * (np_ - 160.0) + 1.1 * (oat - 15.0) + rng.normal(0.0, _MGT_NOISE)
    ot = _design_torque(u) + rng.normal(0.0, _OT_NOISE)
    return {"oat": oat, "mgt": mgt, "pa": pa, "ias": ias, "np": np_, "cs": cs, "ot": ot}, u


def _decohered_demand(rng: Rng, cfg: SynthConfig, u: float) -> float:
    """Independent latent demand at least coupling_gap away from the true one,
    so a coupling fault never degenerates into a relabelled healthy sample."""
    while True:
        candidate = rng.uniform(cfg.demand_low, cfg.demand_high)
        if abs(candidate - u) >= cfg.coupling_gap:
            return candidate


def _apply_fault(rng: Rng, cfg: SynthConfig, ch: dict, u: float) -> dict:
    """One of three documented fault transforms, chosen uniformly.

    0: torque-margin depression, ot drops at least 60 * severity below design.
    1: over-temperature drift on mgt.
    2: coupling break: cs/np/pa are regenerated from independent latent
       demands with inflated noise, distorting cross-channel covariance
       while barely moving the marginals.
    """
    kind = rng.randrange(3)
    out = dict(ch)
    if kind == 0:
        out["ot"] = ch["ot"] - cfg.torque_severity * (60.0 + abs(rng.normal(0.0, 15.0)))
    elif kind == 1:
        out["mgt"] = ch["mgt"] + cfg.mgt_severity * (45.0 + abs(rng.normal(0.0, 12.0)))
    else:
        boost = 1.0 + cfg.coupling_severity
        u_cs = _decohered_demand(rng, cfg, u)
        u_np = _decohered_demand(rng, cfg, u)
        u_pa = _decohered_demand(rng, cfg, u)
        oat = ch["oat"]
        out["cs"] = 86.0 + 12.0 * u_cs + 0.04 * (oat - 15.0) + rng.normal(0.0, _CS_NOISE * boost)
        out["np"] = 160.0 + 620.0 * u_np + rng.normal(0.0, _NP_NOISE * boost)
        out["pa"] = 860.0 - 2.4 * (oat - 15.0) - 45.0 * u_pa + rng.normal(0.0, _PA_NOISE * boost)
    return out


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Seeded stand-in telemetry with exact class counts.

    round(anomaly_fraction * n) samples receive a fault transform; the rest
    are healthy draws. Sample order is a seeded shuffle of the two blocks so
    classes interleave. Bit-identical output for identical configs.
    """
    n_anom = _round_half_up(cfg.anomaly_fraction * cfg.n_samples)
    n_norm = cfg.n_samples - n_anom
    rng = Rng(cfg.seed)

    rows = np.empty((cfg.n_samples, N_CHANNELS))
    labels = np.empty(cfg.n_samples, dtype=np.int8)
    for i in range(n_norm):
        ch, _ = _healthy_channels(rng, cfg)
        rows[i] = [ch[name] for name in CHANNELS]
        labels[i] = int(Label.NORMAL)
    for i in range(n_norm, cfg.n_samples):
        ch, u = _healthy_channels(rng, cfg)
        ch = _apply_fault(rng, cfg, ch, u)
        rows[i] = [ch[name] for name in CHANNELS]
        labels[i] = int(Label.ANOMALOUS)

    order = list(range(cfg.n_samples))
    rng.shuffle(order)
    order = np.asarray(order, dtype=np.int64)
    return Dataset(rows[order], labels[order])
