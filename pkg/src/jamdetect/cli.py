"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 training or other runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from jamdetect import anomaly, bnm, classifiers, evaluation, simulator, temporal
from jamdetect.errors import DataError, JamDetectError, ZeroProbabilityError
from jamdetect.persistence import load_model, save_model
from jamdetect.telemetry import read_dataset, write_dataset

log = logging.getLogger("jamdetect")

DEFAULT_SEED = 7
DEFAULT_ETA = 0.5
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _hyper(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _write_json(payload, path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    if args.config:
        config = simulator.CampaignConfig.load(args.config)
        if args.seed is not None:
            config.seed = args.seed
    else:
        config = simulator.CampaignConfig(per_scenario_n=args.per_scenario_n,
                                          seed=DEFAULT_SEED if args.seed is None else args.seed,
                                          clean_n=args.clean_n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    campaign = simulator.generate_campaign(config=config)
    write_dataset(campaign, out / f"campaign.{args.format}")
    log.info("wrote %d campaign records", len(campaign))
    if args.clean_train:
        # separate sub-seed index so the training stream never repeats campaign noise
        spec = simulator.ScenarioSpec.clean(simulator.sub_seed(config.seed, 10_000))
        write_dataset(simulator.generate_scenario(spec, n=args.clean_train), out / f"clean_train.{args.format}")
    return EXIT_OK


def _train(kind: str, data, hyper: dict, seed: int):
    if kind == "ensemble_ae":
        return anomaly.train_ensemble(data, seed=seed, **hyper)
    if kind == "lstm":
        return temporal.lstm_train(temporal.pair_cells(data), seed=seed, **hyper)
    if kind in ("forest",):
        hyper = {"seed": seed, **hyper}
    return classifiers.train_classifier(kind, data.features, data.y, **hyper)


def cmd_train(args) -> int:
    data = read_dataset(args.input)
    hyper = _hyper(args.set)
    try:
        model = _train(args.kind, data, hyper, args.seed)
    except TypeError as exc:
        raise UsageError(f"bad hyperparameter for {args.kind}: {exc}") from None
    if args.kind == "ensemble_ae" and args.calibrate:
        eta = anomaly.calibrate_threshold(model, read_dataset(args.calibrate), args.quantile)
        log.info("calibrated eta=%.6f", eta)
    save_model(model, args.out)
    return EXIT_OK


def _scores(model, data):
    """Scores plus the dataset row each one belongs to."""
    if model.kind == "ensemble_ae":
        return anomaly.score(model, data.features), np.arange(len(data))
    if model.kind == "lstm":
        windows = temporal.pair_cells(data)
        if not windows:
            raise DataError("dataset has no LTE/NR pairs to window")
        X = np.stack([w.rows for w in windows])
        return temporal.predict_score(model, X), np.array([w.end_index for w in windows])
    return classifiers.predict_score(model, data.features), np.arange(len(data))


def _eta(args, model) -> float:
    if args.eta is not None:
        return args.eta
    return model.eta if model.kind == "ensemble_ae" else DEFAULT_ETA


def cmd_detect(args) -> int:
    model = load_model(args.model)
    data = read_dataset(args.input)
    scores, rows = _scores(model, data)
    eta = _eta(args, model)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "timestamp_ms", "cell", "score", "decision"])
        for s, i in zip(scores, rows):
            rec = data.records[i]
            w.writerow([int(i), rec.timestamp_ms, rec.cell, repr(float(s)), int(s > eta)])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    data = read_dataset(args.input)
    scores, rows = _scores(model, data)
    y = data.y[rows]
    eta = _eta(args, model)
    report = evaluation.metrics(scores, y, eta, scenario=data.source)
    extra = {"kind": model.kind}
    if 0 < y.sum() < y.size:
        curve = evaluation.roc(scores, y)
        extra["auc"] = curve.auc
        if args.roc:
            evaluation.write_roc_csv(curve, args.roc)
    evaluation.write_report(report, args.report, extra)
    return EXIT_OK


def cmd_per_type(args) -> int:
    data = read_dataset(args.input)
    study = evaluation.per_type_study(data, args.kind, _hyper(args.set), args.seed, args.negatives,
                                      args.train_fraction)
    evaluation.write_type_study(study, args.out, args.roc)
    return EXIT_OK


def cmd_poison_study(args) -> int:
    clean = read_dataset(args.clean)
    jam = read_dataset(args.jam)
    test = read_dataset(args.test)
    cells = evaluation.poison_study(clean, jam, test, args.fractions, args.stages, args.seed, _hyper(args.set))
    evaluation.write_grid_csv(cells, args.out)
    return EXIT_OK


def _network(path):
    return bnm.default_network() if path is None else bnm.load_network(path)


def cmd_bnm_query(args) -> int:
    net = _network(args.net)
    evidence = bnm.parse_evidence(args.evidence)
    p = bnm.query(net, args.target, evidence)
    _write_json({"target": args.target, "evidence": evidence, "probability": p}, args.out)
    return EXIT_OK


def cmd_bnm_root_cause(args) -> int:
    net = _network(args.net)
    evidence = bnm.parse_evidence(args.evidence)
    dist = bnm.posterior_root(net, evidence)
    _write_json({"root": net.root, "evidence": evidence, "posterior": dist}, args.out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    """Fuse a scores CSV with BNM evidence.

    Columns named after network nodes give per-row evidence; ``--evidence``
    applies to every row and is overridden by a row value.
    """
    net = _network(args.net)
    shared = bnm.parse_evidence(args.evidence)
    try:
        with open(args.scores, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"{args.scores}: {exc.strerror}") from None
    if not rows or "score" not in rows[0]:
        raise DataError(f"{args.scores}: needs a 'score' column")
    node_cols = [c for c in rows[0] if c in net.names]
    eta = DEFAULT_ETA if args.eta is None else args.eta
    out_fields = list(rows[0]) + ["fused_score", "fused_decision"]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=out_fields)
        w.writeheader()
        for i, row in enumerate(rows):
            try:
                s = float(row["score"])
            except ValueError:
                raise DataError(f"row {i}: score: not a number") from None
            ev = dict(shared)
            ev.update({c: row[c] for c in node_cols if row[c] != ""})
            f = bnm.fuse(s, net, ev)
            w.writerow({**row, "fused_score": repr(f), "fused_decision": int(f > eta)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jamdetect", description="Jamming detection toolkit for cellular KPI telemetry.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a labeled campaign dataset")
    s.add_argument("--config", help="campaign JSON file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--per-scenario-n", type=int, default=100)
    s.add_argument("--clean-n", type=int)
    s.add_argument("--clean-train", type=int, default=0, help="also write this many clean training records")
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train a detector and save it as JSON")
    s.add_argument("--kind", required=True, choices=evaluation.STUDY_KINDS)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="hyperparameter (repeatable)")
    s.add_argument("--calibrate", metavar="CLEAN_FILE", help="ensemble_ae: set eta on clean validation data")
    s.add_argument("--quantile", type=float, default=anomaly.DEFAULT_QUANTILE)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="score a dataset with a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eta", type=float)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="metrics and ROC of a saved model on a labeled dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--report", default="-")
    s.add_argument("--roc")
    s.add_argument("--eta", type=float)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("per-type", help="one-vs-rest AUC per jamming type")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--kind", default="forest", choices=evaluation.STUDY_KINDS)
    s.add_argument("--negatives", default="rest", choices=("rest", "clean"))
    s.add_argument("--train-fraction", type=float, default=evaluation.DEFAULT_TRAIN_FRACTION)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True, help="AUC table CSV")
    s.add_argument("--roc", help="ROC points CSV")
    s.set_defaults(func=cmd_per_type)

    s = sub.add_parser("poison-study", help="AUC grid over poison fraction and stage")
    s.add_argument("--clean", required=True, help="clean training stream")
    s.add_argument("--jam", required=True, help="jam records used as poison")
    s.add_argument("--test", required=True, help="labeled test set")
    s.add_argument("--fractions", type=_float_list, default=[0.0, 0.05, 0.1, 0.2, 0.3])
    s.add_argument("--stages", type=_float_list, default=[0.0, 0.1, 0.35, 0.7])
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_poison_study)

    b = sub.add_parser("bnm", help="Bayesian network queries")
    bsub = b.add_subparsers(dest="bnm_command", required=True, parser_class=_Parser)
    q = bsub.add_parser("query", help="P(target | evidence)")
    q.add_argument("--net", help="network JSON (default: bundled network)")
    q.add_argument("--target", required=True, metavar="NODE=STATE")
    q.add_argument("--evidence", nargs="*", default=[], metavar="NODE=STATE")
    q.add_argument("--out", default="-")
    q.set_defaults(func=cmd_bnm_query)
    r = bsub.add_parser("root-cause", help="posterior over root-cause states")
    r.add_argument("--net")
    r.add_argument("--evidence", nargs="*", default=[], metavar="NODE=STATE")
    r.add_argument("--out", default="-")
    r.set_defaults(func=cmd_bnm_root_cause)

    s = sub.add_parser("fuse", help="reweight detector scores with BNM evidence")
    s.add_argument("--scores", required=True, help="CSV with a 'score' column")
    s.add_argument("--net")
    s.add_argument("--evidence", nargs="*", default=[], metavar="NODE=STATE")
    s.add_argument("--eta", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"jamdetect: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ZeroProbabilityError) as exc:
        print(f"jamdetect: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (JamDetectError, ArithmeticError) as exc:
        print(f"jamdetect: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
