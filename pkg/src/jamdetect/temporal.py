"""Single-layer LSTM detector over k-step windows, trained with BPTT.

Architecture: LSTM(H) -> final hidden state -> ReLU dense(F) -> softmax(2).
Everything is plain numpy in float64 so the analytic gradients can be checked
against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from jamdetect.errors import ModelError, TrainingError
from jamdetect.telemetry import Dataset, N_FEATURES, Normalizer, Window, fit_normalizer

GATES = ("input", "forget", "output", "candidate")
DEFAULT_HIDDEN = 16
DEFAULT_FC = 16
DEFAULT_LR = 0.1
DEFAULT_EPOCHS = 60
DEFAULT_BATCH = 32
CLIP_NORM = 5.0
FD_STEP = 1e-5

PARAM_NAMES = ("W", "b", "W1", "b1", "W2", "b2")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmModel:
    """Parameters of the detector.

    ``W`` has shape (4, H, D + H) with gates ordered input, forget, output,
    candidate; each gate acts on the concatenation ``[x_t, h_{t-1}]``.
    """

    W: np.ndarray
    b: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    seed: int = 0
    normalizer: Normalizer | None = None
    loss_history: list[float] = field(default_factory=list)
    hyper: dict = field(default_factory=dict)
    kind: str = field(default="lstm", init=False)

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[2] - self.hidden

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> LstmModel:
        return LstmModel(**{k: v.copy() for k, v in self.params().items()}, seed=self.seed,
                         normalizer=self.normalizer, loss_history=list(self.loss_history), hyper=dict(self.hyper))

    @classmethod
    def init(cls, input_dim: int = N_FEATURES, hidden: int = DEFAULT_HIDDEN, fc: int = DEFAULT_FC,
             seed: int = 0) -> LstmModel:
        """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias +1, zero other biases."""
        rng = np.random.default_rng(seed)
        a = 1.0 / math.sqrt(hidden)
        W = rng.uniform(-a, a, (4, hidden, input_dim + hidden))
        b = np.zeros((4, hidden))
        b[1] = 1.0
        W1 = rng.uniform(-a, a, (fc, hidden))
        b1 = np.zeros(fc)
        a2 = 1.0 / math.sqrt(fc)
        W2 = rng.uniform(-a2, a2, (2, fc))
        b2 = np.zeros(2)
        return cls(W, b, W1, b1, W2, b2, seed=seed, hyper={"hidden": hidden, "fc": fc})

    @classmethod
    def zeros(cls, input_dim: int = N_FEATURES, hidden: int = DEFAULT_HIDDEN, fc: int = DEFAULT_FC) -> LstmModel:
        return cls(np.zeros((4, hidden, input_dim + hidden)), np.zeros((4, hidden)), np.zeros((fc, hidden)),
                   np.zeros(fc), np.zeros((2, fc)), np.zeros(2), hyper={"hidden": hidden, "fc": fc})


def _forward(model: LstmModel, X: np.ndarray):
    """Batch forward pass. ``X`` is (B, k, D); returns probabilities and a cache."""
    B, k, D = X.shape
    H = model.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(k):
        z = np.concatenate([X[:, t, :], h], axis=1)
        a = np.einsum("bj,ghj->gbh", z, model.W) + model.b[:, None, :]
        i, f, o = _sigmoid(a[0]), _sigmoid(a[1]), _sigmoid(a[2])
        g = np.tanh(a[3])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((z, i, f, o, g, c_prev, tc))
    pre1 = h @ model.W1.T + model.b1
    u = np.maximum(pre1, 0.0)
    logits = u @ model.W2.T + model.b2
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    return p, (steps, h, pre1, u)


def _check_input(model: LstmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] < 1 or X.shape[2] != model.input_dim:
        raise ModelError(f"expected windows of shape (k, {model.input_dim}), got {X.shape[1:]}")
    return X


def predict_proba(model: LstmModel, X) -> np.ndarray:
    """(B, 2) probabilities for raw (un-normalized) windows ``X`` of shape (B, k, D)."""
    X = _check_input(model, X)
    if model.normalizer is not None:
        X = model.normalizer.apply(X)
    return _forward(model, X)[0]


def lstm_forward(model: LstmModel, window: Window | np.ndarray) -> tuple[float, float]:
    """(P(H0), P(H1)) for one window."""
    rows = window.rows if isinstance(window, Window) else window
    p = predict_proba(model, np.asarray(rows)[None])
    return float(p[0, 0]), float(p[0, 1])


def predict_score(model: LstmModel, X) -> np.ndarray:
    return predict_proba(model, X)[:, 1]


def loss_and_grads(model: LstmModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradient for every parameter.

    ``X`` must already be normalized.
    """
    B = X.shape[0]
    p, (steps, h_last, pre1, u) = _forward(model, X)
    loss = float(-np.mean(np.log(np.clip(p[np.arange(B), y], 1e-300, None))))

    dlogits = p.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    gW2 = dlogits.T @ u
    gb2 = dlogits.sum(axis=0)
    du = dlogits @ model.W2
    dpre1 = du * (pre1 > 0)
    gW1 = dpre1.T @ h_last
    gb1 = dpre1.sum(axis=0)
    dh = dpre1 @ model.W1

    H = model.hidden
    D = model.input_dim
    gW = np.zeros_like(model.W)
    gb = np.zeros_like(model.b)
    dc = np.zeros_like(dh)
    for z, i, f, o, g, c_prev, tc in reversed(steps):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * f
        da = np.stack([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)])
        gW += np.einsum("gbh,bj->ghj", da, z)
        gb += da.sum(axis=1)
        dz = np.einsum("gbh,ghj->bj", da, model.W)
        dh = dz[:, D:D + H]
    grads = {"W": gW, "b": gb, "W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}
    return loss, grads


def _loss_and_mask(model: LstmModel, X: np.ndarray, y: np.ndarray):
    p, (_, _, pre1, _) = _forward(model, X)
    loss = -np.mean(np.log(p[np.arange(X.shape[0]), y]))
    return loss, pre1 > 0


def gradient_check(model: LstmModel, X, y, n_samples: int = 200, seed: int = 0, step: float = FD_STEP,
                   grad_fn: Callable | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_samples`` parameter entries (at least 200, spread over every
    parameter array). Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    The analytic side runs in float64; the finite differences are evaluated
    in extended precision so that roundoff does not swamp gradients near
    1e-8. Entries whose perturbation moves a dense-layer ReLU across its kink
    are skipped, since the loss is not differentiable there.
    ``grad_fn`` replaces :func:`loss_and_grads` for the analytic side.
    """
    X = _check_input(model, X)
    y = np.asarray(y, dtype=int)
    grad_fn = grad_fn or loss_and_grads
    _, analytic = grad_fn(model, X, y)
    rng = np.random.default_rng(seed)
    sizes = np.array([getattr(model, n).size for n in PARAM_NAMES])
    # every array gets some samples, the rest proportional to size
    per = np.maximum(4, np.round(max(n_samples, 200) * sizes / sizes.sum()).astype(int))
    per = np.minimum(per, sizes)
    work = model.copy()
    for name in PARAM_NAMES:
        setattr(work, name, getattr(work, name).astype(np.longdouble))
    Xl = X.astype(np.longdouble)
    h = np.longdouble(step)
    worst = 0.0
    for name, count in zip(PARAM_NAMES, per):
        flat = getattr(work, name).reshape(-1)
        for idx in rng.choice(flat.size, int(count), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, mask_p = _loss_and_mask(work, Xl, y)
            flat[idx] = orig - h
            lm, mask_m = _loss_and_mask(work, Xl, y)
            flat[idx] = orig
            if not np.array_equal(mask_p, mask_m):
                continue
            num = float((lp - lm) / (2 * h))
            ana = float(analytic[name].reshape(-1)[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return float(worst)


def windows_to_arrays(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise TrainingError("no windows")
    X = np.stack([w.rows for w in windows])
    y = np.array([1 if w.label.is_jam else 0 for w in windows])
    return X, y


def lstm_train(windows: Sequence[Window] | tuple[np.ndarray, np.ndarray], hidden: int = DEFAULT_HIDDEN,
               fc: int = DEFAULT_FC, lr: float = DEFAULT_LR, epochs: int = DEFAULT_EPOCHS,
               batch: int = DEFAULT_BATCH, seed: int = 0, normalize: bool = True,
               full_batch_history: bool = False) -> LstmModel:
    """Mini-batch gradient descent with global gradient-norm clipping at 5.

    Inputs are min-max normalized with statistics of the training windows
    (stored in the model). ``loss_history`` records the mean training loss per
    epoch; with ``full_batch_history`` it is the full-batch loss after each
    epoch instead.

    Raises:
        TrainingError: if only one class is present or the loss turns NaN.
    """
    X, y = windows if isinstance(windows, tuple) else windows_to_arrays(windows)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if y.min() == y.max():
        raise TrainingError("LSTM training needs both classes present")
    model = LstmModel.init(X.shape[2], hidden, fc, seed)
    model.hyper.update({"lr": lr, "epochs": epochs, "batch": batch})
    if normalize:
        model.normalizer = fit_normalizer(X.reshape(-1, X.shape[2]), "MinMax")
        X = model.normalizer.apply(X)
    rng = np.random.default_rng(seed + 1)
    n = X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = loss_and_grads(model, X[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"LSTM loss became NaN at epoch {epoch}")
            total += loss * idx.size
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = lr * (CLIP_NORM / norm if norm > CLIP_NORM else 1.0)
            for name, g in grads.items():
                getattr(model, name)[...] -= scale * g
        if full_batch_history:
            model.loss_history.append(loss_and_grads(model, X, y)[0])
        else:
            model.loss_history.append(total / n)
    return model


def pair_cells(data: Dataset) -> list[Window]:
    """k=2 windows pairing the LTE and NR records that share a timestamp.

    Rows are ordered (LTE, NR); the label is that of the NR record.
    """
    lte: dict[int, int] = {}
    for i, rec in enumerate(data.records):
        if rec.cell == "LTE":
            lte[rec.timestamp_ms] = i
    X = data.features
    out = []
    for i, rec in enumerate(data.records):
        if rec.cell == "NR" and rec.timestamp_ms in lte:
            j = lte[rec.timestamp_ms]
            out.append(Window(np.stack([X[j], X[i]]), data.labels[i], "LTE+NR", max(i, j)))
    out.sort(key=lambda w: w.end_index)
    return out
