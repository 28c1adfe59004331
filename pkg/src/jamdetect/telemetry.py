"""KPI data model, dataset file formats, normalization and windowing.

Every model in the package consumes the same 14-element feature vector, in the
order given by :data:`FEATURES`. Records carry their label alongside so a
dataset file is self-describing.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from jamdetect.errors import DataError, ValidationError

SAMPLE_PERIOD_MS = 180

FEATURES: tuple[str, ...] = (
    "dl_bitrate",
    "ul_bitrate",
    "dl_packet_rate",
    "ul_packet_rate",
    "dl_retx_rate",
    "ul_retx_rate",
    "pusch_snr_db",
    "cqi",
    "power_headroom_db",
    "epre_dbm",
    "ul_path_loss_db",
    "dl_mcs",
    "ul_mcs",
    "turbo_decoder_rate",
)
N_FEATURES = len(FEATURES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}
INTEGER_FEATURES = frozenset({"cqi", "dl_mcs", "ul_mcs"})

# (low, high); None means unbounded on that side.
FEATURE_BOUNDS: dict[str, tuple[float | None, float | None]] = {
    "dl_bitrate": (0.0, None),
    "ul_bitrate": (0.0, None),
    "dl_packet_rate": (0.0, None),
    "ul_packet_rate": (0.0, None),
    "dl_retx_rate": (0.0, 1.0),
    "ul_retx_rate": (0.0, 1.0),
    "pusch_snr_db": (None, None),
    "cqi": (0, 15),
    "power_headroom_db": (None, None),
    "epre_dbm": (None, None),
    "ul_path_loss_db": (0.0, None),
    "dl_mcs": (0, 28),
    "ul_mcs": (0, 28),
    "turbo_decoder_rate": (0.0, 1.0),
}

CELLS = ("LTE", "NR")
LABEL_KINDS = ("Clean", "Jam")
CHANNELS = ("CCH", "DCH")

CSV_COLUMNS: tuple[str, ...] = (
    ("timestamp_ms", "cell")
    + FEATURES
    + ("label_kind", "jam_type", "center_freq_mhz", "power_dbm", "channel")
)


def check_feature(name: str, value: float, row: int | None = None) -> None:
    """Raise :class:`ValidationError` if ``value`` is outside the range of ``name``."""
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise ValidationError(name, f"expected a number, got {value!r}", row)
    if not math.isfinite(value):
        raise ValidationError(name, f"must be finite, got {value!r}", row)
    if name in INTEGER_FEATURES and float(value) != int(value):
        raise ValidationError(name, f"must be an integer, got {value!r}", row)
    lo, hi = FEATURE_BOUNDS[name]
    if lo is not None and value < lo:
        raise ValidationError(name, f"{value!r} below minimum {lo}", row)
    if hi is not None and value > hi:
        raise ValidationError(name, f"{value!r} above maximum {hi}", row)


@dataclass(frozen=True)
class KpiRecord:
    """One 180 ms cross-layer telemetry sample for a single cell."""

    timestamp_ms: int
    cell: str
    dl_bitrate: float
    ul_bitrate: float
    dl_packet_rate: float
    ul_packet_rate: float
    dl_retx_rate: float
    ul_retx_rate: float
    pusch_snr_db: float
    cqi: int
    power_headroom_db: float
    epre_dbm: float
    ul_path_loss_db: float
    dl_mcs: int
    ul_mcs: int
    turbo_decoder_rate: float

    def __post_init__(self) -> None:
        self.validate()

    def validate(self, row: int | None = None) -> None:
        if self.cell not in CELLS:
            raise ValidationError("cell", f"unknown cell {self.cell!r}", row)
        if isinstance(self.timestamp_ms, bool) or not isinstance(self.timestamp_ms, (int, np.integer)):
            raise ValidationError("timestamp_ms", "must be an integer", row)
        for name in FEATURES:
            check_feature(name, getattr(self, name), row)

    def features(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURES], dtype=float)

    @classmethod
    def from_features(cls, timestamp_ms: int, cell: str, vector: Sequence[float]) -> KpiRecord:
        if len(vector) != N_FEATURES:
            raise DataError(f"feature vector must have {N_FEATURES} entries, got {len(vector)}")
        values = {}
        for name, v in zip(FEATURES, vector):
            values[name] = int(round(float(v))) if name in INTEGER_FEATURES else float(v)
        return cls(timestamp_ms=int(timestamp_ms), cell=cell, **values)


@dataclass(frozen=True)
class Label:
    """Ground truth for one record.

    ``jam_type`` is the scenario index (0 means an unknown jamming type); all
    jam fields are None for clean records.
    """

    kind: str = "Clean"
    jam_type: int | None = None
    center_freq_mhz: float | None = None
    power_dbm: float | None = None
    channel: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in LABEL_KINDS:
            raise ValidationError("label_kind", f"unknown label kind {self.kind!r}")
        jam_fields = (self.jam_type, self.center_freq_mhz, self.power_dbm, self.channel)
        if self.kind == "Clean":
            if any(v is not None for v in jam_fields):
                raise ValidationError("label_kind", "clean labels must not carry jam fields")
            return
        if self.jam_type is None or self.jam_type < 0:
            raise ValidationError("jam_type", f"jam label needs a non-negative jam_type, got {self.jam_type!r}")
        if self.channel not in CHANNELS:
            raise ValidationError("channel", f"jam label needs channel CCH or DCH, got {self.channel!r}")
        if self.center_freq_mhz is None or self.power_dbm is None:
            raise ValidationError("center_freq_mhz", "jam label needs center frequency and power")

    @classmethod
    def clean(cls) -> Label:
        return cls()

    @property
    def is_jam(self) -> bool:
        return self.kind == "Jam"

    @property
    def key(self) -> str:
        """Scenario identifier, e.g. ``"clean"`` or ``"2140MHz/-5dBm"``."""
        if not self.is_jam:
            return "clean"
        return f"{self.center_freq_mhz:g}MHz/{self.power_dbm:g}dBm"


CLEAN = Label()


@dataclass(frozen=True)
class Dataset:
    """Ordered labeled records. Timestamps strictly increase within each cell."""

    records: tuple[KpiRecord, ...]
    labels: tuple[Label, ...]
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.records) != len(self.labels):
            raise DataError(f"{len(self.records)} records but {len(self.labels)} labels")
        last: dict[str, int] = {}
        for i, rec in enumerate(self.records):
            prev = last.get(rec.cell)
            if prev is not None and rec.timestamp_ms <= prev:
                raise ValidationError(
                    "timestamp_ms",
                    f"not strictly increasing within cell {rec.cell} ({rec.timestamp_ms} after {prev})",
                    i,
                )
            last[rec.cell] = rec.timestamp_ms

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def features(self) -> np.ndarray:
        """(N, 14) float matrix in canonical feature order."""
        if not self.records:
            return np.zeros((0, N_FEATURES))
        arr = np.array([r.features() for r in self.records])
        arr.setflags(write=False)
        return arr

    @cached_property
    def y(self) -> np.ndarray:
        """Binary labels, 1 = jamming present."""
        arr = np.array([1 if lab.is_jam else 0 for lab in self.labels], dtype=int)
        arr.setflags(write=False)
        return arr

    @property
    def keys(self) -> list[str]:
        return [lab.key for lab in self.labels]

    @property
    def cells(self) -> list[str]:
        return [r.cell for r in self.records]

    def subset(self, indices: Iterable[int], source: str | None = None) -> Dataset:
        """Records at ``indices`` in increasing dataset order."""
        idx = sorted(set(int(i) for i in indices))
        return Dataset(
            tuple(self.records[i] for i in idx),
            tuple(self.labels[i] for i in idx),
            self.source if source is None else source,
        )

    @classmethod
    def concat(cls, parts: Sequence[Dataset], source: str = "") -> Dataset:
        records: list[KpiRecord] = []
        labels: list[Label] = []
        for p in parts:
            records.extend(p.records)
            labels.extend(p.labels)
        return cls(tuple(records), tuple(labels), source)


# ---------------------------------------------------------------------------
# file formats


def _parse_number(text: str, name: str, row: int) -> float:
    try:
        if name in INTEGER_FEATURES:
            return int(text)
        return float(text)
    except (TypeError, ValueError):
        raise ValidationError(name, f"cannot parse {text!r} as a number", row) from None


def _row_to_pair(row: dict, index: int, from_text: bool) -> tuple[KpiRecord, Label]:
    missing = [c for c in CSV_COLUMNS[:-4] if c not in row]
    if missing:
        raise ValidationError(missing[0], "missing field", index)

    def num(name: str):
        v = row[name]
        if from_text:
            return _parse_number(v, name, index)
        if name in INTEGER_FEATURES and isinstance(v, float) and v.is_integer():
            return int(v)
        return v

    ts = row["timestamp_ms"]
    try:
        ts = int(ts)
    except (TypeError, ValueError):
        raise ValidationError("timestamp_ms", f"cannot parse {ts!r} as an integer", index) from None
    values = {name: num(name) for name in FEATURES}
    for name, v in values.items():
        check_feature(name, v, index)
    cell = row["cell"]
    if cell not in CELLS:
        raise ValidationError("cell", f"unknown cell {cell!r}", index)
    record = KpiRecord(timestamp_ms=ts, cell=cell, **values)

    def opt(name: str, conv):
        v = row.get(name)
        if v is None or v == "":
            return None
        try:
            return conv(v)
        except (TypeError, ValueError):
            raise ValidationError(name, f"cannot parse {v!r}", index) from None

    try:
        label = Label(
            kind=row["label_kind"],
            jam_type=opt("jam_type", int),
            center_freq_mhz=opt("center_freq_mhz", float),
            power_dbm=opt("power_dbm", float),
            channel=opt("channel", str),
        )
    except ValidationError as exc:
        raise ValidationError(exc.field, str(exc), index) from None
    return record, label


def parse_dataset(data: bytes | str, format: str = "CSV", source: str = "") -> Dataset:
    """Parse a CSV or JSONL dataset, validating every record.

    Raises:
        ValidationError: naming the zero-based data row and field at fault.
        DataError: for a missing or wrong CSV header.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    fmt = format.upper()
    records: list[KpiRecord] = []
    labels: list[Label] = []
    if fmt == "CSV":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise DataError(f"CSV header must be exactly: {','.join(CSV_COLUMNS)}")
        for i, row in enumerate(reader):
            if None in row or any(v is None for v in row.values()):
                raise ValidationError("row", "wrong number of columns", i)
            rec, lab = _row_to_pair(row, i, from_text=True)
            records.append(rec)
            labels.append(lab)
    elif fmt == "JSONL":
        i = 0
        for line in text.splitlines():
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError("row", f"invalid JSON ({exc.msg})", i) from None
            if not isinstance(obj, dict):
                raise ValidationError("row", "expected a JSON object", i)
            if "label_kind" not in obj:
                raise ValidationError("label_kind", "missing field", i)
            rec, lab = _row_to_pair(obj, i, from_text=False)
            records.append(rec)
            labels.append(lab)
            i += 1
    else:
        raise DataError(f"unknown dataset format {format!r}")
    return Dataset(tuple(records), tuple(labels), source)


def _row_dict(rec: KpiRecord, lab: Label) -> dict:
    row = {"timestamp_ms": rec.timestamp_ms, "cell": rec.cell}
    for name in FEATURES:
        row[name] = getattr(rec, name)
    row["label_kind"] = lab.kind
    row["jam_type"] = lab.jam_type
    row["center_freq_mhz"] = lab.center_freq_mhz
    row["power_dbm"] = lab.power_dbm
    row["channel"] = lab.channel
    return row


def serialize_dataset(data: Dataset, format: str = "CSV") -> bytes:
    """Inverse of :func:`parse_dataset`; floats are written with ``repr`` so they round-trip."""
    fmt = format.upper()
    out = io.StringIO()
    if fmt == "CSV":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec, lab in zip(data.records, data.labels):
            row = _row_dict(rec, lab)
            writer.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in CSV_COLUMNS])
    elif fmt == "JSONL":
        for rec, lab in zip(data.records, data.labels):
            out.write(json.dumps(_row_dict(rec, lab)) + "\n")
    else:
        raise DataError(f"unknown dataset format {format!r}")
    return out.getvalue().encode("utf-8")


def read_dataset(path) -> Dataset:
    """Load a dataset file; the format follows the extension (.jsonl, else CSV)."""
    p = Path(path)
    fmt = "JSONL" if p.suffix.lower() in (".jsonl", ".json") else "CSV"
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise DataError(f"{p}: {exc.strerror}") from None
    return parse_dataset(raw, fmt, source=str(p))


def write_dataset(data: Dataset, path) -> None:
    p = Path(path)
    fmt = "JSONL" if p.suffix.lower() in (".jsonl", ".json") else "CSV"
    p.write_bytes(serialize_dataset(data, fmt))


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Normalizer:
    """Per-feature scaling fitted on a training set.

    MinMax maps to [0, 1] with clipping; ZScore maps to (x - mean) / std.
    Features with zero range (MinMax) or zero std (ZScore) map to 0.
    """

    mins: np.ndarray
    maxs: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    mode: str = "MinMax"

    def __post_init__(self) -> None:
        if self.mode not in ("MinMax", "ZScore"):
            raise DataError(f"unknown normalizer mode {self.mode!r}")
        for name in ("mins", "maxs", "means", "stds"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.maxs < self.mins):
            raise DataError("normalizer max below min")
        if np.any(self.stds < 0):
            raise DataError("normalizer stddev negative")

    @property
    def constant(self) -> np.ndarray:
        """Boolean mask of features with no spread under the active mode."""
        if self.mode == "MinMax":
            return (self.maxs - self.mins) == 0
        return self.stds == 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        const = self.constant
        if self.mode == "MinMax":
            span = np.where(const, 1.0, self.maxs - self.mins)
            z = np.clip((x - self.mins) / span, 0.0, 1.0)
        else:
            scale = np.where(const, 1.0, self.stds)
            z = (x - self.means) / scale
        return np.where(const, 0.0, z)

    def invert(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.mode == "MinMax":
            x = self.mins + z * (self.maxs - self.mins)
        else:
            x = self.means + z * self.stds
        return np.where(self.constant, self.mins if self.mode == "MinMax" else self.means, x)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        return cls(np.array(d["mins"]), np.array(d["maxs"]), np.array(d["means"]), np.array(d["stds"]), d["mode"])


def fit_normalizer(data: Dataset | np.ndarray, mode: str = "MinMax") -> Normalizer:
    """Fit per-feature min/max and mean/population-std over every record."""
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot fit a normalizer on an empty dataset")
    return Normalizer(X.min(axis=0), X.max(axis=0), X.mean(axis=0), X.std(axis=0), mode)


def apply_normalizer(norm: Normalizer, record: KpiRecord | np.ndarray) -> np.ndarray:
    x = record.features() if isinstance(record, KpiRecord) else record
    return norm.apply(x)


# ---------------------------------------------------------------------------
# windowing


@dataclass(frozen=True)
class Window:
    """``k`` consecutive feature vectors, most recent last."""

    rows: np.ndarray
    label: Label
    cell: str = ""
    end_index: int = -1

    @property
    def k(self) -> int:
        return self.rows.shape[0]


def cell_streams(data: Dataset) -> dict[str, list[int]]:
    """Dataset indices of each cell's records, in order."""
    streams: dict[str, list[int]] = {}
    for i, rec in enumerate(data.records):
        streams.setdefault(rec.cell, []).append(i)
    return streams


def make_windows(data: Dataset, k: int) -> list[Window]:
    """Sliding windows of length ``k`` over each cell stream.

    Windows are returned in order of the dataset position of their last row;
    each carries that row's label.
    """
    if k < 1:
        raise DataError(f"window length must be >= 1, got {k}")
    streams = cell_streams(data)
    X = data.features
    out: list[Window] = []
    for cell, idx in streams.items():
        if len(idx) < k:
            raise DataError(f"cell {cell} has {len(idx)} records, fewer than window length {k}")
        for j in range(k - 1, len(idx)):
            rows = X[idx[j - k + 1 : j + 1]].copy()
            out.append(Window(rows, data.labels[idx[j]], cell, idx[j]))
    out.sort(key=lambda w: w.end_index)
    return out


__all__ = [
    "CELLS",
    "CLEAN",
    "CSV_COLUMNS",
    "Dataset",
    "FEATURES",
    "FEATURE_INDEX",
    "KpiRecord",
    "Label",
    "N_FEATURES",
    "Normalizer",
    "SAMPLE_PERIOD_MS",
    "Window",
    "apply_normalizer",
    "cell_streams",
    "fit_normalizer",
    "make_windows",
    "parse_dataset",
    "read_dataset",
    "serialize_dataset",
    "write_dataset",
]
