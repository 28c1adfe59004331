"""Synthetic KPI telemetry for the clean state and each jamming campaign.

Clean records come from a three-factor model. Each feature loads on one latent
(downlink quality, uplink quality, or UE link budget / traffic). The latents
follow AR(1) processes per cell stream, so adjacent samples are correlated in
time as well as across features. Jamming moves the latents of the link it hits
(an on-manifold shift) and adds a few off-manifold distortions:

* data-channel (DCH) jamming drags the targeted quality latents down and pushes
  retransmissions up / turbo decoder rate down beyond what the latent explains;
* control-channel (CCH) jamming degrades downlink quality, but with probability
  ``P_INACCURATE_CQI`` the UE keeps reporting the pre-jamming CQI, and with
  probability ``P_MCS_VARIANCE`` the scheduled MCS jumps away from the CQI
  mapping.

``overlap=True`` scales every shift by ``OVERLAP_SCALE`` so the jammed
distribution sits inside the clean one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from jamdetect.errors import DataError
from jamdetect.telemetry import (
    CLEAN,
    FEATURE_BOUNDS,
    FEATURE_INDEX,
    FEATURES,
    INTEGER_FEATURES,
    N_FEATURES,
    SAMPLE_PERIOD_MS,
    Dataset,
    KpiRecord,
    Label,
)

LATENTS = ("dl", "ul", "ue")

# feature -> (mean, std, latent, loading)
DEFAULT_BASELINE: dict[str, tuple[float, float, str, float]] = {
    "cqi": (12.0, 0.9, "dl", 0.92),
    "dl_mcs": (22.0, 1.5, "dl", 0.92),
    "dl_bitrate": (40e6, 2e6, "dl", 0.9),
    "dl_retx_rate": (0.04, 0.008, "dl", -0.9),
    "pusch_snr_db": (20.0, 1.5, "ul", 0.92),
    "ul_mcs": (20.0, 1.5, "ul", 0.92),
    "ul_bitrate": (15e6, 0.8e6, "ul", 0.9),
    "ul_retx_rate": (0.04, 0.008, "ul", -0.9),
    "turbo_decoder_rate": (0.93, 0.008, "ul", 0.9),
    "dl_packet_rate": (3500.0, 150.0, "ue", 0.9),
    "ul_packet_rate": (1500.0, 70.0, "ue", 0.9),
    "power_headroom_db": (18.0, 1.5, "ue", 0.85),
    "epre_dbm": (-26.0, 0.4, "ue", 0.85),
    "ul_path_loss_db": (95.0, 2.0, "ue", -0.85),
}

AR_COEF = 0.7

# Latent shift (in latent sd) at severity 1.
DCH_LATENT_SHIFT = 12.0
CCH_LATENT_SHIFT = 10.0
# Off-manifold shifts at severity 1, in feature sd.
DCH_RETX_EXCESS = 6.0
DCH_TURBO_DEFICIT = 6.0
CCH_MCS_JUMP = (5.0, 9.0)
SHIFT_JITTER = 0.15

P_INACCURATE_CQI = 0.503
P_MCS_VARIANCE = 0.845
OVERLAP_SCALE = 0.25

# marker thresholds, in implied-latent units
CQI_MARKER_GAP = 3.0
MCS_MARKER_GAP = 3.0

# jamming waveform catalogue: center frequency (MHz) -> power levels (dBm)
JAM_CATALOGUE: tuple[tuple[float, tuple[float, ...]], ...] = (
    (2140.0, (0.0, -5.0, -11.0, -12.0, -13.0)),
    (1950.0, (0.0, -5.0, -11.0, -12.0, -13.0)),
    (3490.0, (-11.0, -12.0, -13.0)),
)
UPLINK_BAND_MHZ = 1950.0
DOWNLINK_BAND_MHZ = 2140.0
LOW_POWER_DBM = -11.0


@dataclass(frozen=True)
class BaselineModel:
    """Clean-state feature distribution.

    ``means`` and ``stds`` are per-feature; ``latents`` and ``loadings`` give
    the factor each feature follows and how strongly (signed). Generated
    values are clamped to the record ranges and integer features are rounded.
    """

    means: dict[str, float]
    stds: dict[str, float]
    latents: dict[str, str]
    loadings: dict[str, float]
    ar_coef: float = AR_COEF

    def __post_init__(self) -> None:
        for table in (self.means, self.stds, self.latents, self.loadings):
            missing = set(FEATURES) - set(table)
            if missing:
                raise DataError(f"baseline missing features: {sorted(missing)}")
        for name in FEATURES:
            if self.stds[name] <= 0:
                raise DataError(f"baseline std for {name} must be positive")
            if self.latents[name] not in LATENTS:
                raise DataError(f"unknown latent {self.latents[name]!r} for {name}")
            if not 0 < abs(self.loadings[name]) < 1:
                raise DataError(f"loading for {name} must be in (-1, 1) and nonzero")
        if not 0 <= self.ar_coef < 1:
            raise DataError("ar_coef must be in [0, 1)")

    @classmethod
    def default(cls) -> BaselineModel:
        return cls(
            means={k: v[0] for k, v in DEFAULT_BASELINE.items()},
            stds={k: v[1] for k, v in DEFAULT_BASELINE.items()},
            latents={k: v[2] for k, v in DEFAULT_BASELINE.items()},
            loadings={k: v[3] for k, v in DEFAULT_BASELINE.items()},
        )

    def with_overrides(self, overrides: dict) -> BaselineModel:
        """Copy with ``{"means": {...}, "stds": {...}, ...}`` entries replaced."""
        kwargs = {}
        for key in ("means", "stds", "latents", "loadings"):
            if key in overrides:
                unknown = set(overrides[key]) - set(FEATURES)
                if unknown:
                    raise DataError(f"unknown features in baseline override: {sorted(unknown)}")
                kwargs[key] = {**getattr(self, key), **overrides[key]}
        if "ar_coef" in overrides:
            kwargs["ar_coef"] = float(overrides["ar_coef"])
        return replace(self, **kwargs)

    def vectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mean = np.array([self.means[f] for f in FEATURES])
        std = np.array([self.stds[f] for f in FEATURES])
        load = np.array([self.loadings[f] for f in FEATURES])
        return mean, std, load

    def clamp(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float)
        for j, name in enumerate(FEATURES):
            lo, hi = FEATURE_BOUNDS[name]
            if name in INTEGER_FEATURES:
                X[:, j] = np.round(X[:, j])
            X[:, j] = np.clip(X[:, j], -np.inf if lo is None else lo, np.inf if hi is None else hi)
        return X


@dataclass(frozen=True)
class ScenarioSpec:
    """A jamming scenario (or the clean state) and its generator seed."""

    label: Label
    severity: float = 0.0
    overlap: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.severity <= 1.0:
            raise DataError(f"severity must be in [0, 1], got {self.severity}")
        if (self.severity == 0.0) != (not self.label.is_jam):
            raise DataError("severity must be 0 exactly when the label is Clean")

    @classmethod
    def clean(cls, seed: int = 0) -> ScenarioSpec:
        return cls(CLEAN, 0.0, False, seed)


def power_to_severity(power_dbm: float) -> float:
    """Linear map from -13 dBm -> 0.3 to 0 dBm -> 1.0, clipped to [0.3, 1]."""
    sev = 0.3 + 0.7 * (power_dbm + 13.0) / 13.0
    return float(min(1.0, max(0.3, sev)))


def default_channel(center_freq_mhz: float) -> str:
    return "CCH" if center_freq_mhz == DOWNLINK_BAND_MHZ else "DCH"


def jam_label(center_freq_mhz: float, power_dbm: float, jam_type: int = 0, channel: str | None = None) -> Label:
    return Label(
        kind="Jam",
        jam_type=jam_type,
        center_freq_mhz=float(center_freq_mhz),
        power_dbm=float(power_dbm),
        channel=channel or default_channel(center_freq_mhz),
    )


def catalogue_specs(seed: int = 0) -> list[ScenarioSpec]:
    """Clean plus one spec per catalogue (frequency, power) row, with derived sub-seeds.

    Jam types are numbered from 1 in catalogue order. Downlink-band rows at or
    below ``LOW_POWER_DBM`` are the overlap scenarios.
    """
    specs = [ScenarioSpec.clean(sub_seed(seed, 0))]
    m = 0
    for freq, powers in JAM_CATALOGUE:
        for p in powers:
            m += 1
            overlap = freq == DOWNLINK_BAND_MHZ and p <= LOW_POWER_DBM
            specs.append(ScenarioSpec(jam_label(freq, p, m), power_to_severity(p), overlap, sub_seed(seed, m)))
    return specs


def sub_seed(seed: int, index: int) -> int:
    """Deterministic 64-bit child seed."""
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]).generate_state(1, np.uint64)[0])


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    eps = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = eps[0]
    scale = math.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + scale * eps[t]
    return out


def _targets(label: Label) -> tuple[str, ...]:
    if label.channel == "CCH":
        return ("dl",)
    if label.center_freq_mhz == UPLINK_BAND_MHZ:
        return ("ul",)
    return ("dl", "ul")


def generate_features(spec: ScenarioSpec, baseline: BaselineModel, n: int,
                      cells: Sequence[str] | None = None) -> np.ndarray:
    """Feature matrix for ``n`` records of ``spec`` (before record construction)."""
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(spec.seed)
    if cells is None:
        cells = [("LTE", "NR")[i % 2] for i in range(n)]
    mean, std, load = baseline.vectors()
    lat_idx = np.array([LATENTS.index(baseline.latents[f]) for f in FEATURES])

    # clean latents: AR(1) per cell stream
    Z = np.empty((n, len(LATENTS)))
    cells_arr = np.asarray(cells)
    for cell in ("LTE", "NR"):
        rows = np.flatnonzero(cells_arr == cell)
        for k in range(len(LATENTS)):
            if rows.size:
                Z[rows, k] = _ar1(rng, rows.size, baseline.ar_coef)
    noise = rng.standard_normal((n, N_FEATURES))
    resid = np.sqrt(1.0 - load**2)

    scale = spec.severity * (OVERLAP_SCALE if spec.overlap else 1.0)
    jitter = 1.0 + SHIFT_JITTER * rng.standard_normal(n)
    inaccurate = rng.random(n) < P_INACCURATE_CQI
    mcs_event = rng.random(n) < P_MCS_VARIANCE
    jump_mag = rng.uniform(*CCH_MCS_JUMP, size=(n, 2))
    jump_sign = rng.random((n, 2)) < 0.5

    Zj = Z.copy()
    lab = spec.label
    if lab.is_jam:
        shift = (CCH_LATENT_SHIFT if lab.channel == "CCH" else DCH_LATENT_SHIFT) * scale * jitter
        for t in _targets(lab):
            Zj[:, LATENTS.index(t)] -= shift

    X = mean + std * (load * Zj[:, lat_idx] + resid * noise)

    if lab.is_jam and lab.channel == "CCH":
        # reported CQI (and the MCS scheduled from it) may track the pre-jamming channel
        dl = LATENTS.index("dl")
        for name in ("cqi", "dl_mcs"):
            j = FEATURE_INDEX[name]
            stale = mean[j] + std[j] * (load[j] * Z[:, dl] + resid[j] * noise[:, j])
            X[:, j] = np.where(inaccurate, stale, X[:, j])
        for col, name in enumerate(("dl_mcs", "ul_mcs")):
            j = FEATURE_INDEX[name]
            mag = jump_mag[:, col] * std[j] * scale
            v = np.round(X[:, j])
            up_ok = v + mag <= FEATURE_BOUNDS[name][1]
            down_ok = v - mag >= FEATURE_BOUNDS[name][0]
            up = np.where(up_ok & down_ok, jump_sign[:, col], up_ok | ~down_ok & (v < 14))
            X[:, j] = np.where(mcs_event, v + np.where(up, mag, -mag), X[:, j])
    elif lab.is_jam:
        targets = _targets(lab)
        for name, excess in (("dl_retx_rate", DCH_RETX_EXCESS), ("ul_retx_rate", DCH_RETX_EXCESS),
                             ("turbo_decoder_rate", -DCH_TURBO_DEFICIT)):
            j = FEATURE_INDEX[name]
            if baseline.latents[name] in targets:
                X[:, j] += excess * std[j] * scale * jitter
    return baseline.clamp(X)


def generate_scenario(spec: ScenarioSpec, baseline: BaselineModel | None = None, n: int = 1,
                      start_ms: int = 0) -> Dataset:
    """``n`` labeled records alternating LTE/NR cells, one sample period per cell step."""
    baseline = baseline or BaselineModel.default()
    cells = [("LTE", "NR")[i % 2] for i in range(n)]
    X = generate_features(spec, baseline, n, cells)
    records = tuple(
        KpiRecord.from_features(start_ms + (i // 2) * SAMPLE_PERIOD_MS, cells[i], X[i]) for i in range(n)
    )
    return Dataset(records, (spec.label,) * n, source=f"simulated:{spec.label.key}")


@dataclass
class CampaignConfig:
    """Campaign file contents. ``scenarios`` None means Clean plus the full jamming catalogue."""

    per_scenario_n: int = 100
    seed: int = 0
    clean_n: int | None = None
    scenarios: list[dict] | None = None
    baseline_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> CampaignConfig:
        known = {"per_scenario_n", "seed", "clean_n", "scenarios", "baseline"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown campaign config keys: {sorted(unknown)}")
        return cls(
            per_scenario_n=int(d.get("per_scenario_n", 100)),
            seed=int(d.get("seed", 0)),
            clean_n=None if d.get("clean_n") is None else int(d["clean_n"]),
            scenarios=d.get("scenarios"),
            baseline_overrides=d.get("baseline", {}),
        )

    @classmethod
    def load(cls, path) -> CampaignConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc.msg})") from None

    def specs(self) -> list[tuple[ScenarioSpec, int]]:
        if self.scenarios is None:
            out = []
            for s in catalogue_specs(self.seed):
                n = self.clean_n if (not s.label.is_jam and self.clean_n is not None) else self.per_scenario_n
                out.append((s, n))
            return out
        out = []
        for i, entry in enumerate(self.scenarios):
            n = int(entry.get("n", self.per_scenario_n))
            seed = sub_seed(self.seed, i)
            if entry.get("kind", "Jam") == "Clean":
                out.append((ScenarioSpec.clean(seed), n))
                continue
            freq = float(entry["center_freq_mhz"])
            power = float(entry["power_dbm"])
            lab = jam_label(freq, power, int(entry.get("jam_type", i)), entry.get("channel"))
            sev = float(entry.get("severity", power_to_severity(power)))
            overlap = bool(entry.get("overlap", freq == DOWNLINK_BAND_MHZ and power <= LOW_POWER_DBM))
            out.append((ScenarioSpec(lab, sev, overlap, seed), n))
        return out


def generate_campaign(baseline: BaselineModel | None = None, per_scenario_n: int = 100, seed: int = 0,
                      config: CampaignConfig | None = None) -> Dataset:
    """Concatenated dataset over every scenario of a campaign.

    Without ``config`` this covers Clean plus the 13 catalogue rows, each with
    ``per_scenario_n`` records. The clock runs on across scenarios so each
    cell stream stays strictly increasing.
    """
    if config is None:
        if per_scenario_n < 1:
            raise DataError("per_scenario_n must be >= 1")
        config = CampaignConfig(per_scenario_n=per_scenario_n, seed=seed)
    baseline = (baseline or BaselineModel.default()).with_overrides(config.baseline_overrides)
    parts = []
    t0 = 0
    for spec, n in config.specs():
        parts.append(generate_scenario(spec, baseline, n, start_ms=t0))
        t0 += ((n + 1) // 2) * SAMPLE_PERIOD_MS
    return Dataset.concat(parts, source=f"campaign:seed={config.seed}")


def poison_span(n: int, fraction: float, stage: float) -> tuple[int, int]:
    """Half-open index range replaced by :func:`inject_poison`."""
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"fraction must be in [0, 1), got {fraction}")
    if not 0.0 <= stage <= 1.0:
        raise DataError(f"stage must be in [0, 1], got {stage}")
    start = int(math.floor(stage * n + 1e-9))
    count = int(math.floor(fraction * n + 1e-9))
    if start + count > n:
        raise DataError(f"poison span [{start}, {start + count}) runs past the end of a {n}-record stream")
    return start, start + count


def inject_poison(clean_stream: Dataset, jam_source: Dataset, fraction: float, stage: float) -> Dataset:
    """Replace a contiguous run of the stream with jam records labeled Clean.

    Timestamps and cells of the replaced positions are kept; only the KPI
    values change. Jam records are drawn from the start of ``jam_source``.
    """
    n = len(clean_stream)
    start, stop = poison_span(n, fraction, stage)
    count = stop - start
    if count == 0:
        return clean_stream
    if len(jam_source) < count:
        raise DataError(f"jam source has {len(jam_source)} records, {count} needed")
    records = list(clean_stream.records)
    labels = list(clean_stream.labels)
    for offset in range(count):
        i = start + offset
        src = jam_source.records[offset]
        values = {name: getattr(src, name) for name in FEATURES}
        records[i] = KpiRecord(timestamp_ms=records[i].timestamp_ms, cell=records[i].cell, **values)
        labels[i] = CLEAN
    return Dataset(tuple(records), tuple(labels), source=f"{clean_stream.source}+poison({fraction},{stage})")


# ---------------------------------------------------------------------------
# CCH markers


def _implied_latent(X: np.ndarray, baseline: BaselineModel, name: str) -> np.ndarray:
    j = FEATURE_INDEX[name]
    return (X[:, j] - baseline.means[name]) / (baseline.stds[name] * baseline.loadings[name])


def inaccurate_cqi_marker(X: np.ndarray, baseline: BaselineModel | None = None) -> np.ndarray:
    """True where reported CQI sits well above what the downlink bitrate implies."""
    baseline = baseline or BaselineModel.default()
    X = np.atleast_2d(X)
    gap = _implied_latent(X, baseline, "cqi") - _implied_latent(X, baseline, "dl_bitrate")
    return gap >= CQI_MARKER_GAP


def mcs_variance_marker(X: np.ndarray, baseline: BaselineModel | None = None) -> np.ndarray:
    """True where the downlink MCS departs from the CQI mapping."""
    baseline = baseline or BaselineModel.default()
    X = np.atleast_2d(X)
    gap = _implied_latent(X, baseline, "dl_mcs") - _implied_latent(X, baseline, "cqi")
    return np.abs(gap) >= MCS_MARKER_GAP
