"""Versioned JSON model files shared by every detector.

Envelope::

    {"format": "jamdetect-model", "version": 1, "kind": "<kind>",
     "hyper": {...}, "params": {...}}

Floats are written with ``repr`` precision, so a save/load round trip gives
bitwise-identical predictions.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from jamdetect.anomaly import AutoEncoder, EnsembleAE, FeatureClustering
from jamdetect.classifiers import ForestModel, GnbModel, KnnModel, LinearModel, TreeModel, TreeNode
from jamdetect.errors import DataError, ModelError
from jamdetect.telemetry import Normalizer
from jamdetect.temporal import PARAM_NAMES, LstmModel

FORMAT = "jamdetect-model"
VERSION = 1
KINDS = ("tree", "forest", "logreg", "gnb", "knn", "lstm", "ensemble_ae")


def _schema() -> dict:
    return json.loads(resources.files("jamdetect.data").joinpath("model_schema.json").read_text())


def _norm(d):
    return None if d is None else Normalizer.from_dict(d)


def _norm_dict(n):
    return None if n is None else n.to_dict()


def model_to_dict(model) -> dict:
    kind = getattr(model, "kind", None)
    if kind not in KINDS:
        raise ModelError(f"cannot serialize object of type {type(model).__name__}")
    if kind in ("tree", "forest", "logreg", "gnb", "knn"):
        hyper, params = model.hyper(), model.params()
    elif kind == "lstm":
        hyper = dict(model.hyper)
        params = {name: getattr(model, name).tolist() for name in PARAM_NAMES}
        params.update(seed=model.seed, normalizer=_norm_dict(model.normalizer),
                      loss_history=list(model.loss_history))
    else:
        hyper = dict(model.hyper)
        params = {
            "clusters": [list(c) for c in model.clustering.clusters],
            "ensemble": [ae.to_dict() for ae in model.ensemble],
            "output": model.output.to_dict(),
            "eta": model.eta,
            "eta_scale": model.eta_scale,
            "fm_fraction": model.fm_fraction,
            "n_fm": model.n_fm,
            "n_train": model.n_train,
            "seed": model.seed,
        }
    return {"format": FORMAT, "version": VERSION, "kind": kind, "hyper": hyper, "params": params}


def model_from_dict(d: dict):
    try:
        jsonschema.validate(d, _schema())
    except jsonschema.ValidationError as exc:
        raise DataError(f"invalid model file: {exc.message}") from None
    if d["version"] != VERSION:
        raise DataError(f"unsupported model file version {d['version']}")
    kind, h, p = d["kind"], d["hyper"], d["params"]
    try:
        if kind == "tree":
            return TreeModel(TreeNode.from_dict(p["root"]), h["max_depth"], h["min_leaf"], p["n_features"])
        if kind == "forest":
            return ForestModel([TreeNode.from_dict(t) for t in p["trees"]], list(p["tree_seeds"]),
                               h["features_per_split"], h["max_depth"], h["min_leaf"], h["bootstrap"], h["seed"],
                               p["n_features"])
        if kind == "logreg":
            return LinearModel(np.array(p["weights"], dtype=float), float(p["bias"]), _norm(p["normalizer"]),
                               h["learning_rate"], h["l2"], h["epochs"])
        if kind == "gnb":
            return GnbModel(np.array(p["means"], dtype=float), np.array(p["variances"], dtype=float),
                            np.array(p["priors"], dtype=float))
        if kind == "knn":
            return KnnModel(np.array(p["train_matrix"], dtype=float), np.array(p["labels"], dtype=int), h["k"],
                            Normalizer.from_dict(p["normalizer"]))
        if kind == "lstm":
            arrays = {name: np.array(p[name], dtype=float) for name in PARAM_NAMES}
            return LstmModel(**arrays, seed=p["seed"], normalizer=_norm(p["normalizer"]),
                             loss_history=list(p["loss_history"]), hyper=dict(h))
        return EnsembleAE(
            clustering=FeatureClustering(tuple(tuple(c) for c in p["clusters"])),
            ensemble=[AutoEncoder.from_dict(a) for a in p["ensemble"]],
            output=AutoEncoder.from_dict(p["output"]),
            eta=float(p["eta"]),
            eta_scale=float(p["eta_scale"]),
            fm_fraction=float(p["fm_fraction"]),
            n_fm=int(p["n_fm"]),
            n_train=int(p["n_train"]),
            seed=int(p["seed"]),
            hyper=dict(h),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid {kind} model parameters: {exc}") from None


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), allow_nan=False) + "\n")


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    return model_from_dict(d)
