"""Instantaneous (single-sample) jamming classifiers.

All models are binary: class 1 means jamming present. ``predict_score``
returns P(jam | x), the test statistic compared against a threshold eta; a
sample is declared jammed only when the score is strictly greater than eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from jamdetect.errors import ModelError, TrainingError
from jamdetect.simulator import sub_seed
from jamdetect.telemetry import N_FEATURES, Normalizer, fit_normalizer

DEFAULT_N_TREES = 100
DEFAULT_MAX_DEPTH = 12
DEFAULT_FEATURES_PER_SPLIT = math.ceil(math.sqrt(N_FEATURES))
DEFAULT_KNN_K = 5
DEFAULT_LR = 0.1
DEFAULT_L2 = 1e-4
DEFAULT_EPOCHS = 500
GNB_VAR_FLOOR = 1e-9

_GAIN_EPS = 1e-12


def gini(counts) -> float:
    """Gini impurity ``1 - sum(p_c^2)`` of per-class counts."""
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("class counts must be non-negative")
    total = c.sum()
    if total == 0:
        raise ValueError("gini of an empty node is undefined")
    p = c / total
    return float(1.0 - np.sum(p * p))


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("training input is empty")
    if y.shape != (X.shape[0],):
        raise TrainingError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise TrainingError("labels must be 0 (clean) or 1 (jam)")
    return X, y


def _as_rows(model_dim: int, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model_dim:
        raise ModelError(f"expected feature vectors of length {model_dim}, got shape {x.shape}")
    return X, single


# ---------------------------------------------------------------------------
# trees


@dataclass
class TreeNode:
    """Either a split (``feature``/``threshold``/children) or a leaf (``proba``)."""

    feature: int = -1
    threshold: float = 0.0
    left: TreeNode | None = None
    right: TreeNode | None = None
    proba: tuple[float, float] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.proba is not None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """P(jam) per row (rows go left when ``x[feature] <= threshold``)."""
        out = np.empty(X.shape[0])
        self._fill(X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, X, idx, out) -> None:
        if self.is_leaf:
            out[idx] = self.proba[1]
            return
        go_left = X[idx, self.feature] <= self.threshold
        if go_left.any():
            self.left._fill(X, idx[go_left], out)
        if (~go_left).any():
            self.right._fill(X, idx[~go_left], out)

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"proba": list(self.proba)}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TreeNode:
        if "proba" in d:
            p = d["proba"]
            return cls(proba=(float(p[0]), float(p[1])))
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


def _leaf(y: np.ndarray) -> TreeNode:
    p1 = float(y.mean())
    return TreeNode(proba=(1.0 - p1, p1))


def _best_split(X: np.ndarray, y: np.ndarray, features, min_leaf: int):
    """Best (gain, feature, threshold) over ``features``; ties keep the earliest.

    A zero-gain split still counts (XOR-like nodes need one); feature -1 means
    no valid split exists.
    """
    n = y.size
    n_pos = int(y.sum())
    parent = 1.0 - (n_pos / n) ** 2 - ((n - n_pos) / n) ** 2
    best = (-1.0, -1, 0.0)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        pos_left = np.cumsum(y[order])[:-1]
        n_left = np.arange(1, n)
        valid = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        nl = n_left[valid].astype(float)
        pl = pos_left[valid].astype(float)
        nr = n - nl
        pr = n_pos - pl
        gl = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
        gr = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
        gain = parent - (nl * gl + nr * gr) / n
        k = int(np.argmax(gain))
        if gain[k] > best[0] + _GAIN_EPS:
            pos = np.flatnonzero(valid)[k]
            best = (float(gain[k]), int(f), float((xs[pos] + xs[pos + 1]) / 2.0))
    return best


def _grow(X, y, depth, max_depth, min_leaf, feature_picker) -> TreeNode:
    if depth >= max_depth or y.size < 2 * min_leaf or y.min() == y.max():
        return _leaf(y)
    gain, f, thr = _best_split(X, y, feature_picker(), min_leaf)
    if f < 0:
        return _leaf(y)
    left = X[:, f] <= thr
    return TreeNode(
        feature=f,
        threshold=thr,
        left=_grow(X[left], y[left], depth + 1, max_depth, min_leaf, feature_picker),
        right=_grow(X[~left], y[~left], depth + 1, max_depth, min_leaf, feature_picker),
    )


def train_tree(X, y, max_depth: int = DEFAULT_MAX_DEPTH, min_leaf: int = 1,
               features_per_split: int | None = None, rng: np.random.Generator | None = None) -> TreeNode:
    """Greedy CART tree with Gini gain and midpoint thresholds.

    With ``features_per_split`` set, each split looks at a random subset of
    that many features (drawn from ``rng``); otherwise all features are tried.
    """
    X, y = _check_xy(X, y)
    n_feat = X.shape[1]
    if features_per_split is None or features_per_split >= n_feat:
        all_features = list(range(n_feat))
        picker = lambda: all_features  # noqa: E731
    else:
        if rng is None:
            raise TrainingError("feature subsampling needs an rng")
        picker = lambda: sorted(rng.choice(n_feat, features_per_split, replace=False).tolist())  # noqa: E731
    return _grow(X, y, 0, max_depth, max(1, int(min_leaf)), picker)


@dataclass
class TreeModel:
    root: TreeNode
    max_depth: int = DEFAULT_MAX_DEPTH
    min_leaf: int = 1
    n_features: int = N_FEATURES
    kind: str = field(default="tree", init=False)

    def predict_proba(self, X) -> np.ndarray:
        return self.root.predict_proba(X)

    def hyper(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf}

    def params(self) -> dict:
        return {"n_features": self.n_features, "root": self.root.to_dict()}


@dataclass
class ForestModel:
    trees: list[TreeNode]
    seeds: list[int]
    features_per_split: int = DEFAULT_FEATURES_PER_SPLIT
    max_depth: int = DEFAULT_MAX_DEPTH
    min_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0
    n_features: int = N_FEATURES
    kind: str = field(default="forest", init=False)

    def predict_proba(self, X) -> np.ndarray:
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def hyper(self) -> dict:
        return {
            "n_trees": len(self.trees),
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "features_per_split": self.features_per_split,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }

    def params(self) -> dict:
        return {"n_features": self.n_features, "tree_seeds": self.seeds, "trees": [t.to_dict() for t in self.trees]}


def train_forest(X, y, n_trees: int = DEFAULT_N_TREES, max_depth: int = DEFAULT_MAX_DEPTH,
                 features_per_split: int = DEFAULT_FEATURES_PER_SPLIT, seed: int = 0,
                 min_leaf: int = 1, bootstrap: bool = True) -> ForestModel:
    """Random forest: bootstrap resamples plus per-split feature subsampling.

    Tree ``t`` draws everything from its own seed ``sub_seed(seed, t)``.
    """
    X, y = _check_xy(X, y)
    if n_trees < 1:
        raise TrainingError("a forest needs at least one tree")
    trees, seeds = [], []
    n = X.shape[0]
    for t in range(n_trees):
        s = sub_seed(seed, t)
        rng = np.random.default_rng(s)
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(train_tree(X[idx], y[idx], max_depth, min_leaf, features_per_split, rng))
        seeds.append(s)
    return ForestModel(trees, seeds, features_per_split, max_depth, min_leaf, bootstrap, seed, X.shape[1])


# ---------------------------------------------------------------------------
# logistic regression


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logreg_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 * |w|^2``, with its gradient."""
    z = X @ w + b
    # log(1 + e^z) - y z, stable for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))
    r = (_sigmoid(z) - y) / X.shape[0]
    return loss, X.T @ r + l2 * w, float(r.sum())


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    normalizer: Normalizer | None = None
    learning_rate: float = DEFAULT_LR
    l2: float = DEFAULT_L2
    epochs: int = DEFAULT_EPOCHS
    loss_history: list[float] = field(default_factory=list)
    kind: str = field(default="logreg", init=False)

    @property
    def n_features(self) -> int:
        return self.weights.size

    def predict_proba(self, X) -> np.ndarray:
        Z = self.normalizer.apply(X) if self.normalizer is not None else X
        return _sigmoid(Z @ self.weights + self.bias)

    def hyper(self) -> dict:
        return {"learning_rate": self.learning_rate, "l2": self.l2, "epochs": self.epochs}

    def params(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "normalizer": None if self.normalizer is None else self.normalizer.to_dict(),
        }


def train_logreg(X, y, learning_rate: float = DEFAULT_LR, l2: float = DEFAULT_L2,
                 epochs: int = DEFAULT_EPOCHS, normalize: bool = True) -> LinearModel:
    """Full-batch gradient descent on L2-regularized cross-entropy.

    With ``normalize`` a z-score normalizer is fitted and stored in the model.

    Raises:
        TrainingError: if the loss becomes NaN or infinite.
    """
    X, y = _check_xy(X, y)
    norm = fit_normalizer(X, "ZScore") if normalize else None
    Z = norm.apply(X) if norm is not None else X
    w = np.zeros(Z.shape[1])
    b = 0.0
    history = []
    for epoch in range(epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gw, gb = logreg_loss_grad(w, b, Z, y, l2)
        if not math.isfinite(loss):
            raise TrainingError(f"logistic regression diverged at epoch {epoch}; use a smaller learning rate")
        history.append(loss)
        with np.errstate(over="ignore", invalid="ignore"):
            w = w - learning_rate * gw
            b = b - learning_rate * gb
    with np.errstate(over="ignore", invalid="ignore"):
        loss, _, _ = logreg_loss_grad(w, b, Z, y, l2)
    if not (math.isfinite(loss) and np.all(np.isfinite(w))):
        raise TrainingError("logistic regression diverged; use a smaller learning rate")
    history.append(loss)
    return LinearModel(w, float(b), norm, learning_rate, l2, epochs, history)


# ---------------------------------------------------------------------------
# Gaussian naive Bayes and k-nearest neighbours


@dataclass
class GnbModel:
    means: np.ndarray  # (2, d)
    variances: np.ndarray  # (2, d)
    priors: np.ndarray  # (2,)
    kind: str = field(default="gnb", init=False)

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def posterior(self, X) -> np.ndarray:
        """(n, 2) class posteriors."""
        X = np.asarray(X, dtype=float)
        ll = -0.5 * np.sum(
            np.log(2 * np.pi * self.variances)[None, :, :]
            + (X[:, None, :] - self.means[None, :, :]) ** 2 / self.variances[None, :, :],
            axis=2,
        ) + np.log(self.priors)[None, :]
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(axis=1, keepdims=True)

    def predict_proba(self, X) -> np.ndarray:
        return self.posterior(X)[:, 1]

    def hyper(self) -> dict:
        return {"var_floor": GNB_VAR_FLOOR}

    def params(self) -> dict:
        return {"means": self.means.tolist(), "variances": self.variances.tolist(), "priors": self.priors.tolist()}


def train_gnb(X, y) -> GnbModel:
    """Per-class Gaussian statistics; variances floored at 1e-9 x feature range."""
    X, y = _check_xy(X, y)
    if y.min() == y.max():
        raise TrainingError("naive Bayes needs samples of both classes")
    span = X.max(axis=0) - X.min(axis=0)
    floor = GNB_VAR_FLOOR * np.where(span > 0, span, 1.0)
    means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([np.maximum(X[y == c].var(axis=0), floor) for c in (0, 1)])
    priors = np.array([np.mean(y == 0), np.mean(y == 1)])
    return GnbModel(means, variances, priors)


@dataclass
class KnnModel:
    train_matrix: np.ndarray  # normalized
    labels: np.ndarray
    k: int
    normalizer: Normalizer
    kind: str = field(default="knn", init=False)

    @property
    def n_features(self) -> int:
        return self.train_matrix.shape[1]

    def predict_proba(self, X) -> np.ndarray:
        Z = self.normalizer.apply(np.asarray(X, dtype=float))
        out = np.empty(Z.shape[0])
        for start in range(0, Z.shape[0], 512):
            block = Z[start:start + 512]
            d2 = ((block[:, None, :] - self.train_matrix[None, :, :]) ** 2).sum(axis=2)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[start:start + 512] = self.labels[nearest].mean(axis=1)
        return out

    def hyper(self) -> dict:
        return {"k": self.k}

    def params(self) -> dict:
        return {
            "train_matrix": self.train_matrix.tolist(),
            "labels": self.labels.tolist(),
            "normalizer": self.normalizer.to_dict(),
        }


def fit_knn(X, y, k: int = DEFAULT_KNN_K) -> KnnModel:
    """Store the min-max normalized training matrix; ties in distance go to the lower index."""
    X, y = _check_xy(X, y)
    if y.min() == y.max():
        raise TrainingError("k-NN needs samples of both classes")
    if not 1 <= k <= X.shape[0]:
        raise TrainingError(f"k must be in [1, {X.shape[0]}], got {k}")
    norm = fit_normalizer(X, "MinMax")
    return KnnModel(norm.apply(X), y.copy(), int(k), norm)


# ---------------------------------------------------------------------------

Classifier = Union[TreeModel, ForestModel, LinearModel, GnbModel, KnnModel]


def predict_score(model, x):
    """P(jam) for one feature vector (returns float) or a matrix (returns array)."""
    dim = getattr(model, "n_features", N_FEATURES)
    X, single = _as_rows(dim, x)
    s = np.clip(model.predict_proba(X), 0.0, 1.0)
    return float(s[0]) if single else s


def decide(score, eta: float):
    """H1 (True) iff score > eta; a score equal to eta decides H0."""
    return np.asarray(score) > eta if np.ndim(score) else bool(score > eta)


TRAINERS = {
    "tree": lambda X, y, **kw: TreeModel(train_tree(X, y, **kw), kw.get("max_depth", DEFAULT_MAX_DEPTH),
                                         kw.get("min_leaf", 1), np.asarray(X).shape[1]),
    "forest": train_forest,
    "logreg": train_logreg,
    "gnb": train_gnb,
    "knn": fit_knn,
}


def train_classifier(kind: str, X, y, **hyper) -> Classifier:
    """Dispatch to the trainer for ``kind`` (tree, forest, logreg, gnb, knn)."""
    try:
        trainer = TRAINERS[kind]
    except KeyError:
        raise ModelError(f"unknown classifier kind {kind!r}") from None
    return trainer(X, y, **hyper)
