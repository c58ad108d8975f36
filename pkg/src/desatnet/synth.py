"""Statistically controlled synthetic cohort generator.

Each surgery is an 18-channel minute-resolution record of mean-reverting
vitals around per-surgery baselines. A seeded permutation assigns exactly the
right number of surgeries a persistent (>= 5 min) or transient (1-4 min)
desaturation event, so measured per-surgery incidences hit the requested
targets up to rounding. Scheduled events are preceded by a 10-15 minute
precursor (respiratory rate climbs, tidal volume falls, SpO2 drifts down,
heart rate rises) whose amplitude scales with event severity; outside the
scheduled interval SpO2 is clamped above the event threshold, inside it is
clamped below, so labeling recovers the schedule exactly.

Missingness mimics the operating room: invasive pressure lines absent for
whole cases, cuff pressures cycling every few minutes, short dropout bursts
elsewhere, and an occasional sub-60 SpO2 artifact. ``missing_scale=0``
disables every missingness source.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .data import (CHANNELS, SPO2, SurgeryRecord, impute, label_events,
                   write_manifest, write_surgery_csv)

EVENT_THRESHOLD = 90.0
PERSISTENT_MIN_RUN = 5

_BASELINES = {
    "spo2": (97.6, 0.5), "heart_rate": (75.0, 8.0), "respiratory_rate": (12.0, 1.2),
    "tidal_volume": (450.0, 40.0), "minute_ventilation": (5.4, 0.5),
    "etco2": (35.0, 2.5), "fio2": (50.0, 8.0), "peep": (5.0, 1.0),
    "pip": (18.0, 3.0), "o2_flow": (2.0, 0.5), "air_flow": (1.0, 0.4),
    "temperature": (36.2, 0.25), "nibp_systolic": (115.0, 10.0),
    "nibp_diastolic": (65.0, 7.0), "nibp_mean": (82.0, 8.0),
    "ibp_systolic": (112.0, 10.0), "ibp_diastolic": (62.0, 7.0), "ibp_mean": (79.0, 8.0),
}
_NOISE = {
    "spo2": 0.25, "heart_rate": 1.5, "respiratory_rate": 0.4, "tidal_volume": 9.0,
    "minute_ventilation": 0.18, "etco2": 0.7, "fio2": 1.2, "peep": 0.25,
    "pip": 0.8, "o2_flow": 0.15, "air_flow": 0.12, "temperature": 0.04,
    "nibp_systolic": 3.0, "nibp_diastolic": 2.2, "nibp_mean": 2.4,
    "ibp_systolic": 2.6, "ibp_diastolic": 2.0, "ibp_mean": 2.2,
}


@dataclass
class CohortSpec:
    n_surgeries: int
    mean_duration: float = 89.0
    general_incidence: float = 0.24
    persistent_incidence: float = 0.019
    missing_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_surgeries < 1:
            raise ValueError("n_surgeries must be positive")
        for name in ("general_incidence", "persistent_incidence"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.persistent_incidence > self.general_incidence:
            raise ValueError("persistent incidence cannot exceed general incidence")
        if self.mean_duration < 45:
            raise ValueError("mean_duration must be >= 45 minutes")
        if self.missing_scale < 0:
            raise ValueError("missing_scale must be >= 0")


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _event_plan(kind: str, T: int, rng: np.random.Generator):
    """(precursor_len, start, duration, strength) for a scheduled event."""
    if kind == "persistent":
        duration = int(rng.integers(PERSISTENT_MIN_RUN, 13))
        strength = rng.uniform(1.2, 1.6)
    else:
        duration = int(rng.integers(1, 5))
        strength = rng.uniform(0.6, 1.0)
    pre = int(rng.integers(10, 16))
    lo = pre + 2
    hi = T - duration - 6
    start = int(rng.integers(lo, hi + 1))
    return pre, start, duration, strength


def _generate_surgery(sid: str, kind: str, spec: CohortSpec,
                      rng: np.random.Generator) -> SurgeryRecord:
    T = int(np.clip(np.round(rng.gamma(16.0, spec.mean_duration / 16.0)), 45, 240))
    V = len(CHANNELS)

    mu = np.array([_BASELINES[n][0] for n in CHANNELS])
    jitter = np.array([_BASELINES[n][1] for n in CHANNELS])
    sigma = np.array([_NOISE[n] for n in CHANNELS])
    rho = np.where(np.array(CHANNELS) == "temperature", 0.97, 0.85)
    baseline = mu + rng.normal(0.0, 1.0, size=V) * jitter
    base = dict(zip(CHANNELS, baseline))

    eps = rng.normal(0.0, 1.0, size=(V, T)) * sigma[:, None]
    values = np.empty((V, T))
    values[:, 0] = baseline + eps[:, 0]
    for t in range(1, T):
        values[:, t] = baseline + rho * (values[:, t - 1] - baseline) + eps[:, t]

    risk = np.zeros(T)
    event = None
    if kind != "none":
        pre, start, duration, strength = _event_plan(kind, T, rng)
        event = (start, start + duration - 1)
        ramp_t = np.arange(T)
        risk = _smoothstep((ramp_t - (start - pre)) / pre)
        end = event[1]
        after = ramp_t > end
        risk[after] = np.exp(-(ramp_t[after] - end) / 3.0)
        risk[start:end + 1] = 1.0

        idx = {n: CHANNELS.index(n) for n in
               ("respiratory_rate", "tidal_volume", "heart_rate", "etco2")}
        values[idx["respiratory_rate"]] += risk * (2.0 + 2.5 * strength)
        values[idx["tidal_volume"]] -= risk * (35.0 + 45.0 * strength)
        values[idx["heart_rate"]] += risk * 4.0 * strength
        values[idx["etco2"]] += risk * 1.5 * strength
        values[SPO2] -= risk * (1.0 + 1.1 * strength)

    # benign distractor: a respiratory-rate bump with no event behind it
    if rng.random() < 0.4:
        width = int(rng.integers(5, 9))
        pos = int(rng.integers(0, max(T - width, 1)))
        bump = _smoothstep(np.linspace(0, 1, width)) * _smoothstep(np.linspace(1, 0, width))
        values[CHANNELS.index("respiratory_rate")][pos:pos + width] += bump[:T - pos] * rng.uniform(1.5, 3.5)

    spo2 = values[SPO2]
    if event is not None:
        start, end = event
        depth = rng.uniform(85.0, 88.5)
        spo2[start:end + 1] = depth + rng.normal(0.0, 0.4, size=end - start + 1)
        spo2[start:end + 1] = np.minimum(spo2[start:end + 1], EVENT_THRESHOLD - 0.6)
        recover = np.arange(end + 1, T)
        if recover.size:
            rebound = base["spo2"] - (base["spo2"] - 91.6) * np.exp(-(recover - end) / 2.5)
            spo2[recover] = rebound + rng.normal(0.0, 0.2, size=recover.size)
    outside = np.ones(T, dtype=bool)
    if event is not None:
        outside[event[0]:event[1] + 1] = False
    spo2[outside] = np.clip(spo2[outside], EVENT_THRESHOLD + 0.7, 100.0)
    values[SPO2] = np.minimum(spo2, 100.0)

    observed = np.ones((V, T), dtype=bool)
    scale = spec.missing_scale
    if scale > 0:
        if rng.random() < 0.7 * min(scale, 1.0):
            for name in ("ibp_systolic", "ibp_diastolic", "ibp_mean"):
                observed[CHANNELS.index(name)] = False
        cycle = int(rng.integers(3, 6))
        phase = int(rng.integers(0, cycle))
        cuff = np.zeros(T, dtype=bool)
        cuff[phase::cycle] = True
        for name in ("nibp_systolic", "nibp_diastolic", "nibp_mean"):
            observed[CHANNELS.index(name)] = cuff
        for c, name in enumerate(CHANNELS):
            if name.startswith(("ibp", "nibp")):
                continue
            rate = 0.004 if name == "spo2" else 0.01
            n_bursts = rng.poisson(rate * scale * T)
            cap = 3 if name == "spo2" else 8
            for _ in range(n_bursts):
                ln = int(rng.integers(1, cap + 1))
                at = int(rng.integers(0, T))
                observed[c, at:at + ln] = False
        if rng.random() < 0.15 * min(scale, 1.0):
            slots = np.flatnonzero(_artifact_slots(T, event))
            if slots.size:
                at = int(rng.choice(slots))
                values[SPO2, at] = rng.uniform(40.0, 58.0)
        # anchor SpO2 at the first minute and around the scheduled event so
        # zero-fill can never fake an event and labels stay exactly on plan
        observed[SPO2, 0] = True
        if event is not None:
            lo = max(event[0] - 1, 0)
            observed[SPO2, lo:event[1] + 2] = True

    return SurgeryRecord(sid, values, observed)


def _artifact_slots(T: int, event) -> np.ndarray:
    ok = np.ones(T, dtype=bool)
    ok[0] = False
    if event is not None:
        lo = max(event[0] - 2, 0)
        ok[lo:event[1] + 3] = False
    return ok


def generate_cohort(spec: CohortSpec) -> list[SurgeryRecord]:
    """Deterministic cohort; per-surgery streams are seed-spawned."""
    n = spec.n_surgeries
    n_general = int(round(spec.general_incidence * n))
    n_persistent = min(int(round(spec.persistent_incidence * n)), n_general)
    order = rng_mod.stream(spec.seed, "assign").permutation(n)
    kinds = ["none"] * n
    for i in order[:n_persistent]:
        kinds[i] = "persistent"
    for i in order[n_persistent:n_general]:
        kinds[i] = "transient"
    width = max(4, len(str(n - 1)))
    records = []
    for i in range(n):
        sid = f"s{i:0{width}d}"
        records.append(_generate_surgery(sid, kinds[i], spec,
                                         rng_mod.stream(spec.seed, "surgery", i)))
    return records


def measure_cohort(records, threshold: float = EVENT_THRESHOLD) -> dict:
    """Post-imputation incidence and prevalence statistics."""
    n = len(records)
    n_general = n_persistent = 0
    minutes = 0
    low_minutes = 0
    for rec in records:
        spo2 = impute(rec).values[SPO2]
        general = label_events(spo2, threshold=threshold, min_run=1)
        persistent = label_events(spo2, threshold=threshold, min_run=PERSISTENT_MIN_RUN)
        n_general += bool(general)
        n_persistent += bool(persistent)
        minutes += rec.duration
        low_minutes += sum(e - s + 1 for s, e in general)
    return {
        "n_surgeries": n,
        "total_minutes": int(minutes),
        "mean_duration": minutes / n,
        "general_incidence": n_general / n,
        "persistent_incidence": n_persistent / n,
        "low_minute_fraction": low_minutes / minutes,
    }


def write_cohort(records, out_dir) -> Path:
    """One CSV per surgery plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        name = f"{rec.surgery_id}.csv"
        write_surgery_csv(out_dir / name, rec)
        entries.append((rec.surgery_id, name))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest
