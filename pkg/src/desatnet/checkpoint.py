"""Single-file binary checkpoint container.

Layout: one JSON header line (format tag, version, model config, and an array
manifest of name/shape/offset/nbytes entries), then the raw little-endian
float64 array payloads concatenated in manifest order. The normalizer's
per-channel statistics ride along as non-trainable entries, so a checkpoint
is everything needed to score raw cohort CSVs. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import DataError, Normalizer
from .fileio import atomic_write_bytes
from .model import DesatModel, ModelConfig

FORMAT = "desatnet-checkpoint"
VERSION = 1


def save_checkpoint(path, model: DesatModel, normalizer: Normalizer) -> Path:
    entries = []
    blobs = []
    offset = 0
    arrays = list(model.parameters()) + [
        ("normalizer.mean", normalizer.mean),
        ("normalizer.std", normalizer.std),
    ]
    for name, arr in arrays:
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        blob = np.ascontiguousarray(data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(data)),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"format": FORMAT, "version": VERSION,
              "config": model.cfg.to_dict(), "arrays": entries}
    payload = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(blobs)
    return atomic_write_bytes(path, payload)


def load_checkpoint(path) -> tuple[DesatModel, Normalizer]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise DataError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")

    blob = raw[nl + 1:]
    arrays = {}
    for entry in header["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise DataError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(blob[start:start + n], dtype="<f8")
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)

    cfg = ModelConfig(**header["config"])
    model = DesatModel(cfg)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("normalizer.")})
    try:
        normalizer = Normalizer(arrays["normalizer.mean"].copy(),
                                arrays["normalizer.std"].copy())
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint lacks normalizer arrays") from exc
    return model, normalizer
