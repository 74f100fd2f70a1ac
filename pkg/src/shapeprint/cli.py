"""Command-line interface: ``shapeprint <command> ...``.

Reports go to ``--out`` or, when omitted, to ``$SHAPEPRINT_OUT`` (default
``./reports``). The exit status is 0 only when the command completed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import report, store
from .aggregate import estimate_count, fsbc, full_comparison_check, learn_count_thresholds, subset_metrics
from .anomaly import ATTACKS, detect, fit, inject_attack, window_histograms
from .core import size_histogram
from .experiments import EXPERIMENTS, ExperimentConfig, load_specs, run_experiment
from .fingerprint import confusion_matrix, diagonal_rate, learn_profile, rank_devices
from .obfuscation import PaddingScheme, StpParams, ilp_shape, stp_shape
from .param_estimation import (
    Q_GRID,
    W_GRID,
    QThresholds,
    WGridModels,
    build_q_thresholds,
    build_w_grid,
    estimate_q,
    estimate_w,
)
from .synth import synth_device
from .windows import classify_windows, label_training_windows, train_knn, window_set

log = logging.getLogger("shapeprint")

OUT_ENV = "SHAPEPRINT_OUT"
DEFAULT_OUT = "reports"


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def _out(args) -> Path:
    out = Path(args.out) if args.out else default_out()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stp(args) -> StpParams:
    return StpParams(inject_prob=args.q, period=args.T, rate=args.R, max_pad=args.W)


def _add_stp(p):
    p.add_argument("--q", type=float, default=0.1, help="cover injection probability per period")
    p.add_argument("--T", type=float, default=1.0, help="period in seconds")
    p.add_argument("--R", type=float, default=100.0, help="emission rate in packets per second")
    p.add_argument("--W", type=int, default=80, help="random padding bound in bytes")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=report._json_default))


# --- commands -------------------------------------------------------------


def cmd_synth(args) -> None:
    specs = load_specs(args.corpus)
    out = _out(args)
    for i, spec in enumerate(specs):
        trace = synth_device(spec, args.duration, (args.seed, 0, i))
        store.save_trace(trace, out / f"{spec.device_id}.csv")
    store.save_corpus(specs, out / "corpus.json")
    log.info("wrote %d traces to %s", len(specs), out)


def cmd_shape(args) -> None:
    trace = store.load_trace(args.input)
    if args.scheme == "ilp":
        shaped = ilp_shape(trace, args.R, args.pad_to, rng=args.seed)
    else:
        params = _stp(args)
        if args.cover:
            params = params.with_(cover_distribution=size_histogram(store.load_trace(args.cover)))
        padding = PaddingScheme.level100() if args.padding == "level100" else PaddingScheme.random(args.W)
        shaped = stp_shape(trace, params, padding, rng=args.seed)
    store.save_trace(shaped, args.output)
    log.info("%d packets in, %d out", len(trace), len(shaped))


def cmd_learn(args) -> None:
    profiles = []
    for path in args.inputs:
        trace = store.load_trace(path)
        profiles.append(learn_profile(trace, args.device_id if len(args.inputs) == 1 else None))
    for p in store.save_profiles(profiles, args.profiles):
        log.info("wrote %s", p)


def cmd_classify(args) -> None:
    profiles = store.load_profiles(args.profiles)
    test = size_histogram(store.load_trace(args.input))
    for dev, d in rank_devices(profiles, test)[: args.top]:
        print(f"{dev},{d:.6f}")


def cmd_confusion(args) -> None:
    profiles = {p.device_id: p for p in store.load_profiles(args.profiles)}
    tests = {}
    for path in args.tests:
        trace = store.load_trace(path)
        ids = trace.devices()
        tests[ids[0] if len(ids) == 1 else Path(path).stem] = size_histogram(trace)
    missing = sorted(set(tests) - set(profiles))
    if missing:
        raise ValueError(f"no profile for test traces of {missing}")
    models = {d: profiles[d] for d in tests}
    m = confusion_matrix(models, tests)
    out = _out(args)
    report.write_matrix_csv(out / "confusion.csv", m.entries, m.labels, m.labels)
    report.write_heatmap(out / "confusion", m.entries, m.labels)
    print(report.ascii_heatmap(m.entries, m.labels), end="")
    _emit({"diagonal_rate": diagonal_rate(m), "devices": len(m.labels)})


def cmd_count(args) -> None:
    profiles = store.load_profiles(args.profiles)
    trace = store.load_trace(args.input)
    thr = learn_count_thresholds(profiles)
    _emit({"rate_pps": trace.rate, "estimate": estimate_count(trace.rate, thr)})


def cmd_subset(args) -> None:
    profiles = store.load_profiles(args.profiles)
    trace = store.load_trace(args.input)
    thr = learn_count_thresholds(profiles)
    hist = size_histogram(trace)
    if args.method == "full":
        est = full_comparison_check(profiles, hist, thr, trace.duration)
    else:
        est = fsbc(profiles, hist, args.f1, args.f2, thr, trace.duration)
    out = {"method": est.method, "devices": sorted(est.devices),
           "estimated_count": est.score_detail["estimated_count"]}
    if args.truth:
        truth = set(args.truth.split(","))
        out.update(subset_metrics(truth, est.devices)._asdict())
    _emit(out)


def _save_w_grid(models: WGridModels, directory: Path) -> None:
    named = [replace(p, device_id=f"{dev}@W{w}") for (dev, w), p in models.models.items()]
    store.save_profiles(named, directory)


def _load_w_grid(directory) -> WGridModels:
    models = {}
    for p in store.load_profiles(directory):
        dev, sep, w = p.device_id.rpartition("@W")
        if not sep:
            raise ValueError(f"{p.device_id!r} is not a W-grid profile (expected <device>@W<int>)")
        models[(dev, int(w))] = replace(p, device_id=dev)
    grid = tuple(sorted({w for _, w in models}))
    return WGridModels(grid, models)


def cmd_estimate_w(args) -> None:
    store_dir = Path(args.store)
    if args.lab:
        traces = {}
        for path in args.lab:
            t = store.load_trace(path)
            traces[(t.devices() or [Path(path).stem])[0]] = t
        models = build_w_grid(traces, W_GRID, _stp(args), rng=args.seed)
        _save_w_grid(models, store_dir)
        log.info("stored %d grid profiles in %s", len(models.models), store_dir)
    if args.test:
        est = estimate_w(_load_w_grid(store_dir), size_histogram(store.load_trace(args.test)))
        _emit({"w": est.w, "margin": est.margin, "device": est.device_id, "distance": est.distance})


Q_FILE = "q_thresholds.json"


def cmd_estimate_q(args) -> None:
    store_dir = Path(args.store)
    path = store_dir / Q_FILE
    if args.lab:
        traces = {}
        for p in args.lab:
            t = store.load_trace(p)
            traces[(t.devices() or [Path(p).stem])[0]] = t
        th = build_q_thresholds(traces, Q_GRID, _stp(args), rng=args.seed)
        store_dir.mkdir(parents=True, exist_ok=True)
        report.write_json(path, {d: {"grid": list(t.grid), "rates": list(t.rates)} for d, t in th.items()})
    if args.test:
        data = json.loads(path.read_text(encoding="utf-8"))
        trace = store.load_trace(args.test)
        device = args.device or (trace.devices() or [None])[0]
        if device not in data:
            raise SystemExit(f"no q thresholds for device {device!r}; pass --device")
        th = QThresholds(tuple(data[device]["grid"]), tuple(data[device]["rates"]))
        _emit({"device": device, "observed_pps": trace.rate, "q": estimate_q(th, trace.rate)})


def cmd_windows(args) -> None:
    params = StpParams(period=args.T, rate=args.R)
    offset = args.offset
    if args.train:
        labeled = label_training_windows(store.load_trace(args.train), params, offset)
        model = train_knn(labeled, args.k_min, args.k_max, args.folds, rng=args.seed)
        store.save_knn(model, args.model)
        _emit({"k": model.k, "cv_accuracy": model.cv_accuracy[model.k], "windows": len(labeled),
               "real_fraction": labeled.real_fraction})
    if args.classify:
        model = store.load_knn(args.model)
        ws = window_set(store.load_trace(args.classify), params, offset)
        pred, score = classify_windows(model, ws)
        out = _out(args)
        report.write_rows_csv(out / "windows.csv", [
            {"start_s": float(s), "predicted_real": int(p), "real": int(t)}
            for s, p, t in zip(ws.starts, pred, ws.labels)
        ])
        _emit({"windows": len(ws), "periods": ws.n_periods, "predicted_real": int(pred.sum()),
               **(score._asdict() if score is not None else {})})


def cmd_anomaly(args) -> None:
    profile = ATTACKS[args.inject]
    normal = store.load_trace(args.normal)
    val = inject_attack(store.load_trace(args.validation), profile, args.fraction, (args.seed, 0))
    test = store.load_trace(args.test)
    if not args.clean_test:
        test = inject_attack(test, profile, args.fraction, (args.seed, 1))
    model = fit(args.method, normal, val, args.window, args.neighbors)
    d = detect(model, test)
    hists = window_histograms(test, args.window)
    out = _out(args)
    report.write_rows_csv(out / f"anomaly_{args.method}_scores.csv", [
        {"window": i, "packets": h.total, "score": float(s), "flagged": int(f)}
        for i, (h, s, f) in enumerate(zip(hists, d.scores, d.flags))
    ])
    _emit({"method": args.method, "attack": args.inject, "threshold": model.threshold,
           "validation_auc": model.validation.auc, "precision": d.precision, "recall": d.recall,
           "false_alarms": d.false_alarms})


def cmd_run(args) -> None:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8")).get("config", {})
    cfg = ExperimentConfig.from_dict(base, out_dir=str(_out(args))) if base else ExperimentConfig(out_dir=str(_out(args)))
    over = {k: v for k, v in (("seed", args.seed), ("corpus", args.corpus), ("trials", args.trials)) if v is not None}
    if over:
        cfg = replace(cfg, **over)
    names = list(EXPERIMENTS) if args.name == "all" else [args.name]
    for name in names:
        for p in run_experiment(name, cfg):
            print(p)


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapeprint", description="Fingerprint IoT traffic under padding and shaping.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate device traces from a corpus")
    p.add_argument("--corpus", default="default")
    p.add_argument("--duration", type=float, default=10800.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("shape", help="apply STP or ILP to a trace")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--scheme", choices=("stp", "ilp"), default="stp")
    p.add_argument("--padding", choices=("random", "level100"), default="random")
    p.add_argument("--cover", help="trace whose sizes define the cover distribution (default: the input)")
    p.add_argument("--pad-to", type=int, default=1600, help="ILP packet size")
    p.add_argument("--seed", type=int, default=0)
    _add_stp(p)
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("learn", help="learn size profiles from traces")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--profiles", required=True, help="profile directory")
    p.add_argument("--device-id")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("classify", help="rank devices for a test trace")
    p.add_argument("--profiles", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("confusion", help="confusion matrix of profiles vs test traces")
    p.add_argument("--profiles", required=True)
    p.add_argument("tests", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("count", help="estimate how many devices are active")
    p.add_argument("--profiles", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("subset", help="estimate the set of active devices")
    p.add_argument("--profiles", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--method", choices=("full", "fsbc"), default="fsbc")
    p.add_argument("--f1", type=float, default=80.0)
    p.add_argument("--f2", type=float, default=90.0)
    p.add_argument("--truth", help="comma-separated true device ids, for scoring")
    p.set_defaults(func=cmd_subset)

    for name, func, doc in (("estimate-w", cmd_estimate_w, "estimate the padding bound W"),
                            ("estimate-q", cmd_estimate_q, "estimate the injection probability q")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--store", required=True, help="directory holding the simulated grid")
        p.add_argument("--lab", nargs="+", help="lab traces (unshaped) to build the grid from")
        p.add_argument("--test", help="shaped test trace")
        p.add_argument("--seed", type=int, default=0)
        if name == "estimate-q":
            p.add_argument("--device")
        _add_stp(p)
        p.set_defaults(func=func)

    p = sub.add_parser("windows", help="train or apply the real-vs-cover window classifier")
    p.add_argument("--train", help="shaped trace with cover flags")
    p.add_argument("--classify", help="shaped trace to label")
    p.add_argument("--model", required=True, help="labelled-vector model file")
    p.add_argument("--offset", type=float, help="window offset in seconds (default T/2)")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=150)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--R", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("anomaly", help="detect injected attack traffic")
    p.add_argument("--method", choices=("lof", "js"), default="lof")
    p.add_argument("--inject", choices=sorted(ATTACKS), default="syn_flood")
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--normal", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--clean-test", action="store_true", help="do not inject into the test trace")
    p.add_argument("--window", type=float, default=120.0)
    p.add_argument("--neighbors", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_anomaly)

    p = sub.add_parser("run", help="run a named experiment end to end")
    p.add_argument("name", choices=list(EXPERIMENTS) + ["all"])
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus")
    p.add_argument("--trials", type=int)
    p.add_argument("--config", help="JSON report whose embedded config to re-run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "windows" and not (args.train or args.classify):
        print("shapeprint: error: windows needs --train or --classify", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, KeyError, RuntimeError, OSError) as e:
        print(f"shapeprint: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
