"""Cohort ingestion and preprocessing.

The pipeline from raw per-surgery CSVs to training-ready arrays:

1. load minute-resolution records (missing cells stay flagged)
2. carry-forward imputation with a 20-minute gap limit; SpO2 below 60 is an
   artifact and treated as missing before imputation
3. per-channel z-scoring with statistics fit on the training split only
4. the raw (imputed, unnormalized) SpO2 stream drives event intervals,
   per-minute labels/masks, and future low-SpO2 targets
5. fixed-width windows are cut per minute with zero padding at the start

Minutes are 0-based throughout. A window at minute t covers the ``window``
trailing minutes ending at t; its future target row aligns to minutes
(t - window + lead, t + lead].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .fileio import atomic_write_text

CHANNELS = (
    "spo2", "heart_rate", "respiratory_rate", "tidal_volume",
    "minute_ventilation", "etco2", "fio2", "peep", "pip", "o2_flow",
    "air_flow", "temperature", "nibp_systolic", "nibp_diastolic",
    "nibp_mean", "ibp_systolic", "ibp_diastolic", "ibp_mean",
)
SPO2 = CHANNELS.index("spo2")
SPO2_ARTIFACT_FLOOR = 60.0
IMPUTE_MAX_GAP = 20


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class SurgeryRecord:
    """One surgery: (channels, minutes) values plus an observed mask."""

    surgery_id: str
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.observed.shape:
            raise DataError(f"{self.surgery_id}: values/observed must be matching 2-D arrays")
        if self.values.shape[1] < 1:
            raise DataError(f"{self.surgery_id}: empty record")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def duration(self) -> int:
        return self.values.shape[1]


# -- CSV interchange ----------------------------------------------------------


def write_surgery_csv(path, record: SurgeryRecord) -> None:
    header = ("minute",) + CHANNELS
    if record.n_channels != len(CHANNELS):
        raise DataError(f"{record.surgery_id}: expected {len(CHANNELS)} channels")
    lines = [",".join(header)]
    for t in range(record.duration):
        cells = [str(t)]
        for c in range(record.n_channels):
            cells.append(f"{record.values[c, t]:.6g}" if record.observed[c, t] else "")
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_surgery_csv(path, surgery_id: str | None = None) -> SurgeryRecord:
    path = Path(path)
    if surgery_id is None:
        surgery_id = path.stem
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            if tuple(header) != ("minute",) + CHANNELS:
                raise DataError(f"{path}: unexpected header {header[:3]}...")
            values, observed = [], []
            for i, row in enumerate(reader):
                if len(row) != len(CHANNELS) + 1:
                    raise DataError(f"{path}: row {i + 2} has {len(row)} cells, "
                                    f"expected {len(CHANNELS) + 1}")
                if row[0] != str(i):
                    raise DataError(f"{path}: row {i + 2} minute column is {row[0]!r}, expected {i}")
                vals, obs = [], []
                for j, cell in enumerate(row[1:]):
                    if cell == "":
                        vals.append(0.0)
                        obs.append(False)
                    else:
                        try:
                            vals.append(float(cell))
                        except ValueError:
                            raise DataError(f"{path}: row {i + 2}, column "
                                            f"{CHANNELS[j]!r}: bad number {cell!r}") from None
                        obs.append(True)
                values.append(vals)
                observed.append(obs)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not values:
        raise DataError(f"{path}: no data rows")
    return SurgeryRecord(surgery_id, np.array(values).T, np.array(observed).T)


def write_manifest(path, entries) -> None:
    """entries: iterable of (surgery_id, csv_path); paths stored as given."""
    lines = ["surgery_id,path"]
    lines.extend(f"{sid},{p}" for sid, p in entries)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, Path]]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["surgery_id", "path"]:
                raise DataError(f"{path}: manifest header must be surgery_id,path")
            out = []
            for row in reader:
                if len(row) != 2:
                    raise DataError(f"{path}: bad manifest row {row!r}")
                out.append((row[0], path.parent / row[1]))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not out:
        raise DataError(f"{path}: empty manifest")
    return out


def load_cohort(manifest_path) -> list[SurgeryRecord]:
    return [read_surgery_csv(p, sid) for sid, p in read_manifest(manifest_path)]


# -- imputation ---------------------------------------------------------------


def impute(record: SurgeryRecord, max_gap: int = IMPUTE_MAX_GAP) -> SurgeryRecord:
    """Carry each observation forward up to ``max_gap`` minutes, else 0.

    SpO2 readings below 60 are artifacts: dropped from the observed mask
    before the carry. Channels never observed stay all-zero.
    """
    observed = record.observed.copy()
    observed[SPO2] &= record.values[SPO2] >= SPO2_ARTIFACT_FLOOR
    V, T = record.values.shape
    t_idx = np.arange(T)
    # last[c, t] = most recent observed minute <= t, or -1
    marks = np.where(observed, t_idx[None, :], -1)
    last = np.maximum.accumulate(marks, axis=1)
    fresh = (last >= 0) & (t_idx[None, :] - last <= max_gap)
    src = np.where(fresh, last, 0)
    values = np.take_along_axis(record.values * observed, src, axis=1)
    values[~fresh] = 0.0
    return SurgeryRecord(record.surgery_id, values, record.observed.copy())


# -- normalization ------------------------------------------------------------


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, record: SurgeryRecord) -> SurgeryRecord:
        values = (record.values - self.mean[:, None]) / self.std[:, None]
        return SurgeryRecord(record.surgery_id, values, record.observed.copy())

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]


def fit_normalizer(records, std_floor: float = 1e-6) -> Normalizer:
    """Per-channel mean/std over every minute of the given (training) records."""
    if not records:
        raise DataError("cannot fit a normalizer on an empty training set")
    stacked = np.concatenate([r.values for r in records], axis=1)
    mean = stacked.mean(axis=1)
    std = np.maximum(stacked.std(axis=1), std_floor)
    return Normalizer(mean, std)


# -- events, labels, masks ----------------------------------------------------


def label_events(spo2: np.ndarray, threshold: float = 90.0, min_run: int = 1) -> list[tuple[int, int]]:
    """Maximal runs of spo2 <= threshold lasting >= min_run minutes.

    Returns inclusive [start, end] minute pairs in order.
    """
    low = np.asarray(spo2, dtype=np.float64) <= threshold
    if low.ndim != 1:
        raise DataError("spo2 trace must be 1-D")
    padded = np.concatenate(([False], low, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, ends = edges[::2], edges[1::2] - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends) if e - s + 1 >= min_run]


def assign_labels_and_mask(events, duration: int, horizon: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Per-minute labels and masks from event intervals.

    y=1 on the ``horizon`` minutes right before each event start; m=0 inside
    event intervals. Mask wins where a later event's positive window overlaps
    an earlier ongoing event.
    """
    y = np.zeros(duration, dtype=np.int8)
    m = np.ones(duration, dtype=np.int8)
    for start, end in events:
        y[max(start - horizon, 0):start] = 1
        m[start:min(end, duration - 1) + 1] = 0
    y[m == 0] = 0
    return y, m


# -- windows ------------------------------------------------------------------


@dataclass
class WindowSample:
    """One training example cut at minute t of a surgery."""

    x: np.ndarray
    y: int
    m: int
    u: np.ndarray
    truncated: bool
    surgery_id: str
    t: int


def window_matrix(values: np.ndarray, window: int) -> np.ndarray:
    """(V, T) -> (T, V, window) of trailing windows, zero padded at the start."""
    V, T = values.shape
    padded = np.zeros((V, T + window - 1))
    padded[:, window - 1:] = values
    return np.lib.stride_tricks.sliding_window_view(padded, window, axis=1).transpose(1, 0, 2)


def window_targets(spo2_low: np.ndarray, window: int, lead: int) -> tuple[np.ndarray, np.ndarray]:
    """Future low-SpO2 target rows and truncation flags for every minute.

    Row t column k covers minute t - window + 1 + k + lead; minutes outside
    the record contribute 0 and set the truncation flag.
    """
    low = np.asarray(spo2_low).astype(np.float64)
    T = low.shape[0]
    shift = window - 1 - lead
    ext = np.zeros(T + window - 1)
    lo, hi = max(shift, 0), min(shift + T, T + window - 1)
    if hi > lo:
        ext[lo:hi] = low[lo - shift:hi - shift]
    u = np.lib.stride_tricks.sliding_window_view(ext, window).copy()
    t_idx = np.arange(T)
    truncated = (t_idx < window - 1 - lead) | (t_idx > T - 1 - lead)
    return u, truncated


def extract_windows(x: np.ndarray, spo2_raw: np.ndarray, y: np.ndarray, m: np.ndarray,
                    surgery_id: str, window: int, lead: int,
                    threshold: float = 90.0):
    """Yield one WindowSample per minute of a preprocessed surgery."""
    V, T = x.shape
    mats = window_matrix(x, window)
    u_all, trunc = window_targets(np.asarray(spo2_raw) <= threshold, window, lead)
    for t in range(T):
        yield WindowSample(x=mats[t].copy(), y=int(y[t]), m=int(m[t]),
                           u=u_all[t].copy(), truncated=bool(trunc[t]),
                           surgery_id=surgery_id, t=t)


# -- prepared surgeries -------------------------------------------------------


@dataclass
class PreparedSurgery:
    """Imputation + normalization + labeling output for one surgery."""

    surgery_id: str
    x: np.ndarray
    spo2_raw: np.ndarray
    y: np.ndarray
    m: np.ndarray
    u: np.ndarray
    truncated: np.ndarray

    @property
    def duration(self) -> int:
        return self.x.shape[1]


def prepare_surgery(record: SurgeryRecord, normalizer: Normalizer, window: int,
                    horizon: int, lead: int, min_run: int,
                    threshold: float = 90.0) -> PreparedSurgery:
    imputed = impute(record)
    spo2_raw = imputed.values[SPO2].copy()
    events = label_events(spo2_raw, threshold=threshold, min_run=min_run)
    y, m = assign_labels_and_mask(events, imputed.duration, horizon=horizon)
    u, truncated = window_targets(spo2_raw <= threshold, window, lead)
    x = normalizer.apply_values(imputed.values)
    return PreparedSurgery(record.surgery_id, x, spo2_raw, y, m, u, truncated)


# -- splits -------------------------------------------------------------------


@dataclass
class CohortSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def split_cohort(surgery_ids, seed: int) -> CohortSplit:
    """Seeded shuffle then a 70/10/20 cut by surgery count."""
    ids = list(surgery_ids)
    if len(ids) < 10:
        raise DataError(f"need at least 10 surgeries to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate surgery ids")
    order = rng_mod.stream(seed, "split").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = int(0.7 * n)
    n_val = int(0.1 * n)
    return CohortSplit(train=shuffled[:n_train],
                       validation=shuffled[n_train:n_train + n_val],
                       test=shuffled[n_train + n_val:])
