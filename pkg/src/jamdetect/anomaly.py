"""Unsupervised ensemble auto-encoder detector.

Training is a single streaming pass with two phases:

1. feature mapping: the first ``fm_fraction`` of the stream is only used to
   build the feature clustering (correlation-distance agglomerative
   clustering); no normalization state or weights are touched;
2. training: every remaining record updates the per-cluster auto-encoders
   (their own online min-max state, then one SGD step) and the output
   auto-encoder, which learns the vector of per-cluster RMSEs.

The anomaly score is ``tanh(s / scale)`` where ``s`` is the output
auto-encoder's reconstruction RMSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from jamdetect.errors import DataError, ModelError
from jamdetect.simulator import sub_seed
from jamdetect.telemetry import Dataset

DEFAULT_FM_FRACTION = 0.1
DEFAULT_BETA = 0.75
DEFAULT_LR = 0.05
DEFAULT_MAX_CLUSTER = 7
DEFAULT_QUANTILE = 0.999
SCALE_FACTOR = 3.0
MIN_STREAM = 20

_NORM_EPS = 1e-16


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# feature clustering


def correlation_distance(X: np.ndarray) -> np.ndarray:
    """``1 - |pearson|``; a constant column has correlation 0 with everything else."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    const = norms == 0
    safe = np.where(const, 1.0, norms)
    corr = (Xc.T @ Xc) / np.outer(safe, safe)
    corr[const, :] = 0.0
    corr[:, const] = 0.0
    np.fill_diagonal(corr, 1.0)
    return 1.0 - np.clip(np.abs(corr), 0.0, 1.0)


@dataclass(frozen=True)
class FeatureClustering:
    """Partition of feature indices; clusters ordered by their smallest member."""

    clusters: tuple[tuple[int, ...], ...]

    @property
    def d(self) -> int:
        return len(self.clusters)


def cluster_features(prefix: np.ndarray, max_cluster_size: int = DEFAULT_MAX_CLUSTER) -> FeatureClustering:
    """Complete-linkage agglomerative clustering on correlation distance.

    Starts from singletons and repeatedly merges the closest pair; stops as
    soon as the closest pair would form a cluster larger than
    ``max_cluster_size``. Distance ties go to the pair with the smallest
    member indices.
    """
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim != 2 or prefix.shape[0] < 2:
        raise DataError("feature clustering needs at least 2 rows")
    if max_cluster_size < 1:
        raise DataError("max_cluster_size must be >= 1")
    dist = correlation_distance(prefix)
    clusters: list[list[int]] = [[j] for j in range(prefix.shape[1])]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = dist[np.ix_(clusters[a], clusters[b])].max()
                key = (d, min(clusters[a]), min(clusters[b]))
                if best is None or key < best[0]:
                    best = (key, a, b)
        _, a, b = best
        if len(clusters[a]) + len(clusters[b]) > max_cluster_size:
            break
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    clusters.sort(key=min)
    return FeatureClustering(tuple(tuple(c) for c in clusters))


# ---------------------------------------------------------------------------
# auto-encoders


@dataclass
class AutoEncoder:
    """Tied-weight sigmoid auto-encoder with its own online min-max scaling."""

    W: np.ndarray  # (visible, hidden)
    hbias: np.ndarray
    vbias: np.ndarray
    norm_min: np.ndarray
    norm_max: np.ndarray
    lr: float = DEFAULT_LR
    n_trained: int = 0

    @classmethod
    def create(cls, n_visible: int, beta: float = DEFAULT_BETA, lr: float = DEFAULT_LR, seed: int = 0) -> AutoEncoder:
        n_hidden = max(1, math.ceil(beta * n_visible))
        rng = np.random.default_rng(seed)
        a = 1.0 / n_visible
        return cls(
            W=rng.uniform(-a, a, (n_visible, n_hidden)),
            hbias=np.zeros(n_hidden),
            vbias=np.zeros(n_visible),
            norm_min=np.full(n_visible, np.inf),
            norm_max=np.full(n_visible, -np.inf),
            lr=lr,
        )

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    def _scale(self, x: np.ndarray) -> np.ndarray:
        lo = np.where(np.isfinite(self.norm_min), self.norm_min, 0.0)
        hi = np.where(np.isfinite(self.norm_max), self.norm_max, 0.0)
        return (x - lo) / (hi - lo + _NORM_EPS)

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        hidden = _sigmoid(z @ self.W + self.hbias)
        return _sigmoid(hidden @ self.W.T + self.vbias)

    def train(self, x: np.ndarray) -> float:
        """Update min-max state, take one SGD step, return the RMSE before the step."""
        self.norm_min = np.minimum(self.norm_min, x)
        self.norm_max = np.maximum(self.norm_max, x)
        z = self._scale(x)
        hidden = _sigmoid(z @ self.W + self.hbias)
        out = _sigmoid(hidden @ self.W.T + self.vbias)
        err = z - out
        d_hidden = (err @ self.W) * hidden * (1.0 - hidden)
        self.W += self.lr * (np.outer(z, d_hidden) + np.outer(err, hidden))
        self.hbias += self.lr * d_hidden
        self.vbias += self.lr * err
        self.n_trained += 1
        return float(np.sqrt(np.mean(err * err)))

    def rmse(self, X: np.ndarray) -> np.ndarray:
        """Reconstruction RMSE for each row of ``X`` (no state change)."""
        Z = self._scale(np.atleast_2d(X))
        E = Z - self.reconstruct(Z)
        return np.sqrt(np.mean(E * E, axis=1))

    def to_dict(self) -> dict:
        return {
            "W": self.W.tolist(),
            "hbias": self.hbias.tolist(),
            "vbias": self.vbias.tolist(),
            "norm_min": [None if not math.isfinite(v) else v for v in self.norm_min],
            "norm_max": [None if not math.isfinite(v) else v for v in self.norm_max],
            "lr": self.lr,
            "n_trained": self.n_trained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AutoEncoder:
        return cls(
            W=np.array(d["W"], dtype=float),
            hbias=np.array(d["hbias"], dtype=float),
            vbias=np.array(d["vbias"], dtype=float),
            norm_min=np.array([np.inf if v is None else v for v in d["norm_min"]], dtype=float),
            norm_max=np.array([-np.inf if v is None else v for v in d["norm_max"]], dtype=float),
            lr=float(d["lr"]),
            n_trained=int(d["n_trained"]),
        )


@dataclass
class EnsembleAE:
    clustering: FeatureClustering
    ensemble: list[AutoEncoder]
    output: AutoEncoder
    eta: float = 1.0
    eta_scale: float = 1.0
    fm_fraction: float = DEFAULT_FM_FRACTION
    n_fm: int = 0
    n_train: int = 0
    seed: int = 0
    hyper: dict = field(default_factory=dict)
    kind: str = field(default="ensemble_ae", init=False)

    @property
    def trained(self) -> bool:
        return self.output.n_trained > 0

    def weights(self) -> list[np.ndarray]:
        """Every weight and bias array, ensemble first then output."""
        out = []
        for ae in [*self.ensemble, self.output]:
            out.extend([ae.W, ae.hbias, ae.vbias])
        return out

    def ensemble_rmse(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([ae.rmse(X[:, list(c)]) for ae, c in zip(self.ensemble, self.clustering.clusters)])

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        """Output auto-encoder RMSE ``s`` in [0, inf) for each row."""
        if not self.trained:
            raise ModelError("ensemble auto-encoder has not been trained")
        return self.output.rmse(self.ensemble_rmse(X))


def train_ensemble(stream: Dataset | np.ndarray, fm_fraction: float = DEFAULT_FM_FRACTION,
                   beta: float = DEFAULT_BETA, lr: float = DEFAULT_LR,
                   max_cluster_size: int = DEFAULT_MAX_CLUSTER, seed: int = 0) -> EnsembleAE:
    """Two-phase streaming training; labels, if any, are ignored.

    The first ``floor(fm_fraction * N)`` records only build the clustering.
    Each later record trains the ensemble and output auto-encoders once, in
    stream order.
    """
    X = stream.features if isinstance(stream, Dataset) else np.asarray(stream, dtype=float)
    n = X.shape[0]
    if n < MIN_STREAM:
        raise DataError(f"stream has {n} records; at least {MIN_STREAM} are needed")
    if not 0.0 < fm_fraction < 1.0:
        raise DataError(f"fm_fraction must be in (0, 1), got {fm_fraction}")
    n_fm = int(math.floor(fm_fraction * n + 1e-9))
    if n_fm < 2:
        raise DataError("feature-mapping phase needs at least 2 records")
    clustering = cluster_features(X[:n_fm], max_cluster_size)
    ensemble = [AutoEncoder.create(len(c), beta, lr, sub_seed(seed, i)) for i, c in enumerate(clustering.clusters)]
    output = AutoEncoder.create(clustering.d, beta, lr, sub_seed(seed, clustering.d))
    cols = [list(c) for c in clustering.clusters]
    rmse = np.empty(clustering.d)
    for x in X[n_fm:]:
        for i, (ae, c) in enumerate(zip(ensemble, cols)):
            rmse[i] = ae.train(x[c])
        output.train(rmse)
    hyper = {"fm_fraction": fm_fraction, "beta": beta, "lr": lr, "max_cluster_size": max_cluster_size, "seed": seed}
    return EnsembleAE(clustering, ensemble, output, fm_fraction=fm_fraction, n_fm=n_fm, n_train=n - n_fm,
                      seed=seed, hyper=hyper)


def score(model: EnsembleAE, x):
    """Jamming probability ``tanh(s / eta_scale)``; float for one vector, array for a matrix."""
    arr = np.asarray(x, dtype=float)
    s = np.tanh(model.raw_score(arr) / model.eta_scale)
    return float(s[0]) if arr.ndim == 1 else s


def nearest_rank_quantile(values, q: float) -> float:
    """The ``ceil(q * n)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DataError("quantile of an empty set")
    if not 0.0 < q <= 1.0:
        raise DataError(f"quantile must be in (0, 1], got {q}")
    rank = max(1, math.ceil(q * v.size - 1e-12))
    return float(v[rank - 1])


def calibrate_threshold(model: EnsembleAE, clean_validation: Dataset | np.ndarray, q: float = DEFAULT_QUANTILE,
                        fit_scale: bool = True) -> float:
    """Set ``eta`` to the nearest-rank ``q``-quantile of clean validation scores.

    With ``fit_scale`` the tanh scale is first set to 3x the mean validation
    RMSE (left unchanged when that mean is 0). Both values are stored on the
    model; eta is returned.
    """
    X = clean_validation.features if isinstance(clean_validation, Dataset) else np.asarray(clean_validation, float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("calibration needs a non-empty clean validation set")
    if not 0.0 < q <= 1.0:
        raise DataError(f"quantile must be in (0, 1], got {q}")
    if fit_scale:
        m = float(np.mean(model.raw_score(X)))
        if m > 0:
            model.eta_scale = SCALE_FACTOR * m
    model.eta = nearest_rank_quantile(score(model, X), q)
    return model.eta
