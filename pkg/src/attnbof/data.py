"""Synthetic sequence tasks, length normalization, and the feature-file format.

Datasets are lists of (D x N float64 matrix, integer label).  Two seeded
generators exercise the properties attention is supposed to buy:

* ``gen_noisy_timestamps`` -- a small fraction of columns carry a fixed
  class prototype, the rest are class-independent Gaussian noise, so models
  that can suppress irrelevant timestamps/codewords have an edge.
* ``gen_order_task`` -- two classes whose items are column-multiset twins
  differing only in block order, so any pipeline that is invariant to
  timestamp permutation is stuck at chance by construction.
"""

from __future__ import annotations

import csv
import math
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics
from .errors import ConfigError, DataFormatError, ShapeError
from .numerics import Array

FEATURES_MAGIC = b"FSEQ"
FEATURES_VERSION = 1


@dataclass
class LabeledSequenceSet:
    items: list[tuple[Array, int]]
    classes: int
    feature_dim: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, (x, label) in enumerate(self.items):
            if x.ndim != 2 or x.shape[0] != self.feature_dim:
                raise ShapeError(
                    f"item {i}: shape {x.shape} does not match feature_dim "
                    f"{self.feature_dim}")
            if not 0 <= label < self.classes:
                raise ValueError(f"item {i}: label {label} out of range "
                                 f"[0, {self.classes})")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def group_size(self) -> int:
        """Items are generated in groups of this size (twin pairs for the
        order task); splits keep groups intact."""
        return int(self.metadata.get("group_size", 1))

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=int)

    def subset(self, indices) -> "LabeledSequenceSet":
        meta = dict(self.metadata)
        meta.pop("group_size", None)  # a subset need not preserve grouping
        return LabeledSequenceSet(
            items=[self.items[i] for i in indices], classes=self.classes,
            feature_dim=self.feature_dim, metadata=meta)

    def checksum(self) -> str:
        """CRC32 over labels and payload bytes, as 8 hex digits."""
        crc = 0
        for x, label in self.items:
            crc = zlib.crc32(np.int64(label).tobytes(), crc)
            crc = zlib.crc32(np.ascontiguousarray(x, dtype="<f8").tobytes(), crc)
        return f"{crc & 0xFFFFFFFF:08x}"


# ---------------------------------------------------------------------------
# generators


def gen_noisy_timestamps(classes: int, feature_dim: int, length: int,
                         signal_fraction: float, snr: float, count: int,
                         seed: int) -> LabeledSequenceSet:
    """Per item: ceil(signal_fraction * length) random columns hold the class
    prototype (a one-hot unit vector scaled by snr), the rest are standard
    Gaussian noise.  Labels cycle round-robin so classes stay balanced."""
    if not 0.0 < signal_fraction <= 1.0:
        raise ConfigError(
            f"signal_fraction must be in (0, 1], got {signal_fraction}")
    if classes < 2 or feature_dim < 1 or length < 1 or count < 1:
        raise ConfigError("classes >= 2, feature_dim/length/count >= 1 required")
    rng = np.random.default_rng(seed)
    n_signal = math.ceil(signal_fraction * length)
    prototypes = np.zeros((classes, feature_dim))
    for c in range(classes):
        prototypes[c, c % feature_dim] = snr
    items = []
    for i in range(count):
        label = i % classes
        x = rng.standard_normal((feature_dim, length))
        spots = rng.choice(length, size=n_signal, replace=False)
        x[:, spots] = prototypes[label][:, None]
        items.append((x, label))
    meta = {"generator": "noisy", "seed": seed, "classes": classes,
            "feature_dim": feature_dim, "length": length,
            "signal_fraction": signal_fraction, "snr": snr, "count": count}
    return LabeledSequenceSet(items=items, classes=classes,
                              feature_dim=feature_dim, metadata=meta)


ORDER_NOISE = 0.3


def gen_order_task(feature_dim: int, length: int, count: int,
                   seed: int) -> LabeledSequenceSet:
    """Twin pairs around two fixed symbols: a class-0 item is [symbol A block,
    symbol B block] with per-column Gaussian jitter, and its class-1 twin is
    the exact column reversal of that item.  Twins therefore share the exact
    column multiset, so any timestamp-permutation-invariant classifier is
    stuck at accuracy 1/2, while the block order itself is a stable, learnable
    rule (the symbols are fixed per dataset)."""
    if length < 2 or length % 2 != 0:
        raise ConfigError(f"order task needs an even length >= 2, got {length}")
    if count < 2 or count % 2 != 0:
        raise ConfigError(f"order task generates twin pairs; count must be even, "
                          f"got {count}")
    rng = np.random.default_rng(seed)
    half = length // 2
    symbol_a = rng.standard_normal(feature_dim)
    symbol_b = rng.standard_normal(feature_dim)
    items = []
    for _ in range(count // 2):
        blocks = np.concatenate([np.tile(symbol_a[:, None], half),
                                 np.tile(symbol_b[:, None], half)], axis=1)
        forward = blocks + ORDER_NOISE * rng.standard_normal((feature_dim, length))
        items.append((forward, 0))
        items.append((forward[:, ::-1].copy(), 1))
    meta = {"generator": "order", "seed": seed, "feature_dim": feature_dim,
            "length": length, "count": count, "group_size": 2}
    return LabeledSequenceSet(items=items, classes=2, feature_dim=feature_dim,
                              metadata=meta)


GENERATORS = ("noisy", "order")


# ---------------------------------------------------------------------------
# preprocessing


def pad_or_clip(x: Array, target_len: int) -> Array:
    """Normalize sequence length: keep the first ``target_len`` columns, or
    append zero columns."""
    if target_len < 1:
        raise ConfigError(f"target length must be >= 1, got {target_len}")
    x = numerics.as_matrix(x, "pad_or_clip input")
    n = x.shape[1]
    if n == target_len:
        return x
    if n > target_len:
        return x[:, :target_len].copy()
    out = np.zeros((x.shape[0], target_len))
    out[:, :n] = x
    return out


# ---------------------------------------------------------------------------
# persistence


def save_features(dataset: LabeledSequenceSet, path: str) -> None:
    from .io_container import write_container

    manifest = []
    chunks = []
    offset = 0
    for x, label in dataset.items:
        raw = np.ascontiguousarray(x, dtype="<f8").tobytes()
        manifest.append({"label": int(label), "rows": int(x.shape[0]),
                         "cols": int(x.shape[1]), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"classes": dataset.classes, "feature_dim": dataset.feature_dim,
              "metadata": dataset.metadata, "items": manifest}
    write_container(path, FEATURES_MAGIC, FEATURES_VERSION, header, b"".join(chunks))


def load_features(path: str) -> LabeledSequenceSet:
    from .io_container import read_container

    _, header, payload = read_container(path, FEATURES_MAGIC, FEATURES_VERSION)
    try:
        classes = int(header["classes"])
        feature_dim = int(header["feature_dim"])
        manifest = header["items"]
        metadata = header.get("metadata", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed feature header ({exc})") from exc
    items = []
    for i, entry in enumerate(manifest):
        rows, cols, off = entry["rows"], entry["cols"], entry["offset"]
        if rows != feature_dim:
            raise DataFormatError(
                f"{path}: item {i} has {rows} rows, header says {feature_dim}")
        count = rows * cols * 8
        if off < 0 or off + count > len(payload):
            raise DataFormatError(f"{path}: item {i} extends past payload")
        x = np.frombuffer(payload[off:off + count], dtype="<f8").reshape(rows, cols).copy()
        items.append((x, int(entry["label"])))
    return LabeledSequenceSet(items=items, classes=classes,
                              feature_dim=feature_dim, metadata=metadata)


_CSV_LABEL = re.compile(r"_(\d+)$")


def load_csv_items(paths: list[str | Path], classes: int | None = None
                   ) -> LabeledSequenceSet:
    """Interop import: one item per CSV file (rows = features, columns =
    timestamps), label taken from the ``_<label>`` filename suffix."""
    items = []
    feature_dim = None
    for p in sorted(Path(p) for p in paths):
        m = _CSV_LABEL.search(p.stem)
        if m is None:
            raise DataFormatError(
                f"{p}: filename must end with _<label> before the extension")
        label = int(m.group(1))
        with open(p, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        if not rows:
            raise DataFormatError(f"{p}: empty CSV")
        x = np.array(rows, dtype=float)
        if feature_dim is None:
            feature_dim = x.shape[0]
        elif x.shape[0] != feature_dim:
            raise DataFormatError(
                f"{p}: {x.shape[0]} feature rows, earlier files had {feature_dim}")
        items.append((x, label))
    if feature_dim is None:
        raise DataFormatError("no CSV files given")
    n_classes = classes if classes is not None else max(l for _, l in items) + 1
    return LabeledSequenceSet(items=items, classes=n_classes,
                              feature_dim=feature_dim,
                              metadata={"generator": "csv-import"})
