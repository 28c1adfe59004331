"""Splitting, detection metrics, ROC/AUC and the experiment drivers."""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from jamdetect import anomaly, classifiers, temporal
from jamdetect.errors import DataError
from jamdetect.simulator import inject_poison, poison_span
from jamdetect.telemetry import Dataset

log = logging.getLogger(__name__)

DEFAULT_TRAIN_FRACTION = 0.75
SUPERVISED_KINDS = ("tree", "forest", "logreg", "gnb", "knn", "lstm")
STUDY_KINDS = SUPERVISED_KINDS + ("ensemble_ae",)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_indices(keys: Sequence[str], train_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified split of positions ``0..N-1`` by stratum key.

    The train side gets ``round(train_fraction * N)`` positions. Each stratum
    first receives ``floor(train_fraction * n_k)``; the leftover slots go to
    the strata with the largest fractional remainders (first-seen order breaks
    ties), so every stratum is within one sample of its exact share.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    strata: dict[str, list[int]] = {}
    for i, k in enumerate(keys):
        strata.setdefault(k, []).append(i)
    small = [k for k, idx in strata.items() if len(idx) < 2]
    if small:
        raise DataError(f"classes with fewer than 2 samples cannot be split: {small}")
    n = len(keys)
    target = _round_half_up(train_fraction * n)
    base = {k: math.floor(train_fraction * len(idx)) for k, idx in strata.items()}
    rema = sorted(strata, key=lambda k: -(train_fraction * len(strata[k]) - base[k]))
    extra = target - sum(base.values())
    for k in rema[:max(0, extra)]:
        base[k] += 1
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k, idx in strata.items():
        perm = rng.permutation(idx)
        train.extend(perm[:base[k]].tolist())
        test.extend(perm[base[k]:].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)


def split(data: Dataset, train_fraction: float = DEFAULT_TRAIN_FRACTION, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Label-stratified train/test split; both halves keep dataset order."""
    tr, te = stratified_indices(data.keys, train_fraction, seed)
    return data.subset(tr, f"{data.source}[train]"), data.subset(te, f"{data.source}[test]")


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class EvalReport:
    """Jam-positive detection metrics at a fixed threshold.

    Ratios with a zero denominator are reported as 0.
    """

    tp: int
    fp: int
    tn: int
    fn: int
    eta: float
    scenario: str = ""

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        for name in ("accuracy", "precision", "recall", "f1"):
            value = getattr(self, name)
            out[name] = value
            out[f"{name}_pct"] = round(100.0 * value, 1)
        return out


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DataError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise DataError("no scores to evaluate")
    if np.isnan(s).any():
        raise DataError("scores contain NaN")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    return s, y.astype(int)


def metrics(scores, labels, eta: float, scenario: str = "") -> EvalReport:
    """Confusion counts for decisions ``score > eta``."""
    s, y = _check_scores(scores, labels)
    pred = s > eta
    pos = y == 1
    return EvalReport(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        eta=float(eta),
        scenario=scenario,
    )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc(scores, labels) -> RocCurve:
    """Threshold sweep over the distinct scores, highest first.

    Tied scores move together, so the trapezoid area counts a tied
    positive/negative pair as one half.
    """
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s.size - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s_sorted[last]]
    # exact trapezoid in integer arithmetic, one division at the end
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1]))) + int(fp[0] * tp[0])
    auc = area2 / (2.0 * n_pos * n_neg)
    return RocCurve(fpr, tpr, thresholds, float(auc))


def mann_whitney_auc(scores, labels) -> float:
    """Rank-sum AUC with mid-ranks for ties."""
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# per-type study


@dataclass
class TypeStudy:
    model_kind: str
    negatives: str
    aucs: dict[str, float] = field(default_factory=dict)
    rocs: dict[str, RocCurve] = field(default_factory=dict)


def _samples(data: Dataset, kind: str):
    """Feature samples and their label keys; LSTM samples are LTE/NR window pairs."""
    if kind == "lstm":
        windows = temporal.pair_cells(data)
        if not windows:
            raise DataError("no LTE/NR pairs to build windows from")
        return np.stack([w.rows for w in windows]), [w.label.key for w in windows]
    return data.features, data.keys


def _fit_and_score(kind: str, X_train, y_train, X_test, hyper: dict, seed: int) -> np.ndarray:
    if kind == "lstm":
        model = temporal.lstm_train((X_train, y_train), seed=seed, **hyper)
        return temporal.predict_score(model, X_test)
    if kind == "ensemble_ae":
        model = anomaly.train_ensemble(X_train[y_train == 0], seed=seed, **hyper)
        return model.raw_score(X_test)
    if kind in ("forest",):
        hyper = {"seed": seed, **hyper}
    return classifiers.predict_score(classifiers.train_classifier(kind, X_train, y_train, **hyper), X_test)


def per_type_study(campaign: Dataset, model_kind: str = "forest", hyper: dict | None = None, seed: int = 0,
                   negatives: str = "rest", train_fraction: float = DEFAULT_TRAIN_FRACTION,
                   types: Sequence[str] | None = None) -> TypeStudy:
    """One binary detector per jam type, evaluated by ROC on a held-out split.

    ``negatives="rest"`` pits each type against every other record;
    ``"clean"`` against clean records only. ``ensemble_ae`` trains on the
    negatives of the training split and ignores labels beyond that.
    """
    if model_kind not in STUDY_KINDS:
        raise DataError(f"unknown model kind {model_kind!r}")
    if negatives not in ("rest", "clean"):
        raise DataError("negatives must be 'rest' or 'clean'")
    hyper = dict(hyper or {})
    X, keys = _samples(campaign, model_kind)
    keys_arr = np.array(keys)
    present = list(dict.fromkeys(keys))
    if len(present) < 2:
        raise DataError("per-type study needs at least 2 scenarios")
    train_idx, test_idx = stratified_indices(keys, train_fraction, seed)
    wanted = types if types is not None else [k for k in present if k != "clean"]
    study = TypeStudy(model_kind, negatives)
    for key in wanted:
        if key not in present:
            log.warning("scenario %s is missing from the campaign; skipped", key)
            continue
        keep = np.ones(len(keys), dtype=bool) if negatives == "rest" else (keys_arr == key) | (keys_arr == "clean")
        tr = train_idx[keep[train_idx]]
        te = test_idx[keep[test_idx]]
        y_tr = (keys_arr[tr] == key).astype(int)
        y_te = (keys_arr[te] == key).astype(int)
        if y_te.min() == y_te.max() or y_tr.min() == y_tr.max():
            log.warning("scenario %s lacks positives or negatives after splitting; skipped", key)
            continue
        scores = _fit_and_score(model_kind, X[tr], y_tr, X[te], hyper, seed)
        curve = roc(scores, y_te)
        study.aucs[key] = curve.auc
        study.rocs[key] = curve
    return study


# ---------------------------------------------------------------------------
# poisoning study


@dataclass(frozen=True)
class PoisonCell:
    fraction: float
    stage: float
    auc: float


def poison_study(clean_stream: Dataset, jam_source: Dataset, test_data: Dataset, fractions: Sequence[float],
                 stages: Sequence[float], seed: int = 0, hyper: dict | None = None) -> list[PoisonCell]:
    """AUC of the ensemble auto-encoder on ``test_data`` after each poisoning.

    Every cell trains with the same seed, so the only difference between
    cells is the poison. Combinations whose span would run past the end of
    the stream are skipped with a warning.
    """
    hyper = dict(hyper or {})
    for v in list(fractions) + list(stages):
        if not 0.0 <= v < 1.0:
            raise DataError(f"fractions and stages must lie in [0, 1), got {v}")
    y = test_data.y
    if y.min() == y.max():
        raise DataError("test data needs both clean and jam records")
    X_test = test_data.features
    out = []
    for fraction in fractions:
        for stage in stages:
            try:
                poison_span(len(clean_stream), fraction, stage)
            except DataError:
                log.warning("fraction %s at stage %s overruns the stream; skipped", fraction, stage)
                continue
            stream = inject_poison(clean_stream, jam_source, fraction, stage)
            model = anomaly.train_ensemble(stream, seed=seed, **hyper)
            out.append(PoisonCell(float(fraction), float(stage), roc(model.raw_score(X_test), y).auc))
    return out


# ---------------------------------------------------------------------------
# writers


def write_report(report: EvalReport, path, extra: dict | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for f, t in curve.rows():
            w.writerow([repr(f), repr(t)])


def write_type_study(study: TypeStudy, auc_path, roc_path=None) -> None:
    with open(auc_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "auc"])
        for key, auc in study.aucs.items():
            w.writerow([key, repr(auc)])
    if roc_path is not None:
        with open(roc_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "fpr", "tpr"])
            for key, curve in study.rocs.items():
                for f, t in curve.rows():
                    w.writerow([key, repr(f), repr(t)])


def write_grid_csv(cells: Sequence[PoisonCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fraction", "stage", "auc"])
        for c in cells:
            w.writerow([repr(c.fraction), repr(c.stage), repr(c.auc)])
