"""Core dataset types, normalization, windowing, splitting and file I/O.

A dataset lives in memory as a dense float32 tensor of shape
[entity][day][attribute] plus per-entity static profiles and a binary
label matrix. On disk it is a directory:

    manifest.json   n_entities, n_days, n_attributes, kpi_index,
                    attribute_names, entity_ids
    values.f32      little-endian IEEE-754 float32, row-major [N][T][D]
    labels.csv      header: entity_id,day,label
    static.csv      header: entity_id,open_time,product_type,location,...
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STD_FLOOR = 1e-8
WINDOW_DAYS = 31
INPUT_DAYS = WINDOW_DAYS - 1


class DatasetError(Exception):
    """Dataset I/O or validation failure with a stable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class DatasetTensor:
    values: np.ndarray  # [N][T][D], float32
    entity_ids: tuple[str, ...]
    attribute_names: tuple[str, ...]
    kpi_index: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise DatasetError("bad-shape", f"expected 3-d values, got {v.ndim}-d")
        n, t, d = v.shape
        if n < 1 or t < WINDOW_DAYS or d < 2:
            raise DatasetError("bad-shape", f"need N>=1, T>={WINDOW_DAYS}, D>=2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DatasetError("nonfinite-values", "values contain NaN/Inf")
        if len(self.entity_ids) != n or len(self.attribute_names) != d:
            raise DatasetError("bad-shape", "id/name lengths do not match values")
        if not (0 <= self.kpi_index < d):
            raise DatasetError("bad-shape", f"kpi_index {self.kpi_index} out of range")

    @property
    def n_entities(self) -> int:
        return self.values.shape[0]

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def n_attributes(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class EntityStaticProfile:
    entity_id: str
    open_time: int  # days since epoch
    product_type: int
    location: int
    extra: tuple[float, ...] = ()

    def __post_init__(self):
        if self.product_type < 0 or self.location < 0:
            raise DatasetError("bad-profile", "categorical codes must be >= 0")


@dataclass(frozen=True)
class LabelMatrix:
    labels: np.ndarray  # [N][T], values in {0, 1}

    def __post_init__(self):
        lab = self.labels
        if lab.ndim != 2:
            raise DatasetError("bad-shape", "labels must be 2-d")
        if not np.isin(lab, (0, 1)).all():
            raise DatasetError("bad-labels", "label entries must be 0 or 1")


@dataclass(frozen=True)
class WindowSample:
    entity_index: int
    start: int  # first day of the 31-day window in the source tensor
    input: np.ndarray  # [30][D]
    target: float  # day-31 KPI
    target_label: int


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # [N][D]
    std: np.ndarray  # [N][D], floored at STD_FLOOR


def normalize(data: DatasetTensor, train_range: tuple[int, int]) -> tuple[DatasetTensor, NormStats]:
    """Per-entity per-attribute z-score with stats from train_range days only.

    train_range is a half-open day interval [start, stop). Constant
    attributes get their std clamped to STD_FLOOR instead of erroring.
    """
    start, stop = train_range
    if not (0 <= start < stop <= data.n_days):
        raise DatasetError("bad-range", f"train_range {train_range} outside [0, {data.n_days})")
    tr = data.values[:, start:stop, :].astype(np.float64)
    mean = tr.mean(axis=1)
    std = np.maximum(tr.std(axis=1), STD_FLOOR)
    normed = (data.values.astype(np.float64) - mean[:, None, :]) / std[:, None, :]
    out = DatasetTensor(
        values=normed.astype(np.float32),
        entity_ids=data.entity_ids,
        attribute_names=data.attribute_names,
        kpi_index=data.kpi_index,
    )
    return out, NormStats(mean=mean, std=std)


def denormalize(data: DatasetTensor, stats: NormStats) -> DatasetTensor:
    raw = data.values.astype(np.float64) * stats.std[:, None, :] + stats.mean[:, None, :]
    return DatasetTensor(
        values=raw.astype(np.float32),
        entity_ids=data.entity_ids,
        attribute_names=data.attribute_names,
        kpi_index=data.kpi_index,
    )


def sliding_windows(
    data: DatasetTensor, labels: LabelMatrix, window: int = WINDOW_DAYS
) -> list[WindowSample]:
    """Per entity, one sample per window offset in chronological order.

    The first window-1 days form the input; the KPI on the last day is
    the prediction target, labeled by that day's label.
    """
    if labels.labels.shape != (data.n_entities, data.n_days):
        raise DatasetError("bad-shape", "label matrix does not match tensor")
    if data.n_days < window:
        raise DatasetError("insufficient-history", f"T={data.n_days} < window={window}")
    samples = []
    for n in range(data.n_entities):
        for o in range(data.n_days - window + 1):
            samples.append(
                WindowSample(
                    entity_index=n,
                    start=o,
                    input=data.values[n, o : o + window - 1, :],
                    target=float(data.values[n, o + window - 1, data.kpi_index]),
                    target_label=int(labels.labels[n, o + window - 1]),
                )
            )
    return samples


def split(
    samples: list[WindowSample],
) -> tuple[list[WindowSample], list[WindowSample], list[WindowSample]]:
    """Chronological 6:2:2 per-entity split by window start day.

    train = floor(0.6 W), val = floor(0.2 W), test = remainder.
    """
    by_entity: dict[int, list[WindowSample]] = {}
    for s in samples:
        by_entity.setdefault(s.entity_index, []).append(s)
    train, val, test = [], [], []
    for n, group in sorted(by_entity.items()):
        group = sorted(group, key=lambda s: s.start)
        w = len(group)
        if w < 5:
            raise DatasetError("too-few-samples", f"entity {n} has {w} windows, need >= 5")
        n_train = math.floor(0.6 * w)
        n_val = math.floor(0.2 * w)
        train.extend(group[:n_train])
        val.extend(group[n_train : n_train + n_val])
        test.extend(group[n_train + n_val :])
    return train, val, test


def train_day_range(n_days: int, window: int = WINDOW_DAYS) -> tuple[int, int]:
    """Day interval covered by the inputs+targets of the training windows."""
    w = n_days - window + 1
    n_train = math.floor(0.6 * w)
    return 0, n_train - 1 + window


# ---------------------------------------------------------------------------
# file I/O


def save_dataset(
    data: DatasetTensor,
    labels: LabelMatrix,
    profiles: list[EntityStaticProfile],
    path: str | Path,
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n_entities": data.n_entities,
        "n_days": data.n_days,
        "n_attributes": data.n_attributes,
        "kpi_index": data.kpi_index,
        "attribute_names": list(data.attribute_names),
        "entity_ids": list(data.entity_ids),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    data.values.astype("<f4").tofile(path / "values.f32")
    with open(path / "labels.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("entity_id,day,label\n")
        for n, eid in enumerate(data.entity_ids):
            for t in range(data.n_days):
                f.write(f"{eid},{t},{int(labels.labels[n, t])}\n")
    n_extra = max((len(p.extra) for p in profiles), default=0)
    extra_cols = "".join(f",extra_{i}" for i in range(n_extra))
    with open(path / "static.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write(f"entity_id,open_time,product_type,location{extra_cols}\n")
        for p in profiles:
            vals = "".join(f",{v!r}" for v in p.extra)
            f.write(f"{p.entity_id},{p.open_time},{p.product_type},{p.location}{vals}\n")


def load_dataset(
    path: str | Path,
) -> tuple[DatasetTensor, LabelMatrix, list[EntityStaticProfile]]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise DatasetError("missing-manifest", f"no manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        n = int(manifest["n_entities"])
        t = int(manifest["n_days"])
        d = int(manifest["n_attributes"])
        kpi = int(manifest["kpi_index"])
        names = tuple(manifest["attribute_names"])
        ids = tuple(manifest["entity_ids"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError("malformed-manifest", str(exc)) from exc

    raw = np.fromfile(path / "values.f32", dtype="<f4")
    if raw.size < n * t * d:
        raise DatasetError("truncated-binary", f"values.f32 has {raw.size} floats, expected {n*t*d}")
    if raw.size > n * t * d:
        raise DatasetError("shape-mismatch", f"values.f32 has {raw.size} floats, expected {n*t*d}")
    values = raw.reshape(n, t, d)

    lpath = path / "labels.csv"
    if not lpath.exists():
        raise DatasetError("missing-labels", f"no labels.csv in {path}")
    labels = np.zeros((n, t), dtype=np.int8)
    index = {eid: i for i, eid in enumerate(ids)}
    with open(lpath, encoding="utf-8") as f:
        header = f.readline()
        if header.strip() != "entity_id,day,label":
            raise DatasetError("malformed-labels", f"bad labels header: {header.strip()!r}")
        for line in f:
            eid, day, lab = line.strip().split(",")
            if eid not in index or not (0 <= int(day) < t):
                raise DatasetError("shape-mismatch", f"label row out of range: {line.strip()!r}")
            labels[index[eid], int(day)] = int(lab)

    spath = path / "static.csv"
    if not spath.exists():
        raise DatasetError("missing-static", f"no static.csv in {path}")
    profiles = []
    with open(spath, encoding="utf-8") as f:
        cols = f.readline().strip().split(",")
        if cols[:4] != ["entity_id", "open_time", "product_type", "location"]:
            raise DatasetError("malformed-static", f"bad static header: {cols}")
        for line in f:
            parts = line.strip().split(",")
            profiles.append(
                EntityStaticProfile(
                    entity_id=parts[0],
                    open_time=int(parts[1]),
                    product_type=int(parts[2]),
                    location=int(parts[3]),
                    extra=tuple(float(v) for v in parts[4:]),
                )
            )

    data = DatasetTensor(values=values, entity_ids=ids, attribute_names=names, kpi_index=kpi)
    return data, LabelMatrix(labels=labels), profiles
