"""End-to-end experiment pipelines on a synthetic corpus.

Every pipeline is a pure function of an :class:`ExperimentConfig`: random
streams are keyed by ``(seed, phase, ...)`` so any single trace can be
regenerated on its own, and reports never contain wall-clock data. Running
the same config twice writes byte-identical files.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import report
from .aggregate import (
    FastScoreIndex,
    estimate_count,
    full_comparison_check,
    fsbc,
    learn_count_thresholds,
    nat_aggregate,
    subset_metrics,
)
from .anomaly import ATTACKS, detect, fit, inject_attack
from .core import SizeHistogram, Trace, size_histogram
from .fingerprint import ConfusionMatrix, confusion_matrix, diagonal_rate, learn_profile
from .metrics import IndependenceUntestableError, chi2_critical_value, chi_squared_independence
from .obfuscation import PaddingScheme, StpParams, stp_rate, stp_shape
from .param_estimation import Q_GRID, W_GRID, build_q_thresholds, build_w_grid, estimate_q, estimate_w
from .synth import DeviceSpec, default_corpus, synth_device
from .windows import WindowSet, classify_windows, label_training_windows, train_knn

log = logging.getLogger(__name__)

# Random-stream phases. A trace is keyed by (seed, phase, ..., device index).
LEARN, LEARN_SHAPE, TEST, TEST_SHAPE, SAMPLE = 0, 1, 2, 3, 4
VALIDATION, INJECT, HOLDOUT, GRID, PERMUTE = 5, 6, 7, 8, 9

ANOMALY_TRACE_SECONDS = 3600.0
W_SWEEP = (40, 160)
W_EXACT_CHECKS = (50, 90, 130)


class UnknownExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment depends on; embedded in every report."""

    seed: int = 0
    stp: StpParams = StpParams()
    corpus: str = "default"  # "default" or a corpus JSON file
    learn_seconds: float = 10800.0
    test_seconds: float = 1800.0
    out_dir: str = "."
    trials: int = 200
    f1: float = 80.0
    f2: float = 90.0
    corpus_sizes: tuple = (5, 10, 14)
    repeats: int = 1

    def __post_init__(self):
        if self.stp.cover_distribution is not None:
            raise ValueError("cover distributions are derived per device; leave stp.cover_distribution unset")
        if self.learn_seconds <= 0 or self.test_seconds <= 0:
            raise ValueError("durations must be positive")
        if self.trials < 1 or self.repeats < 1:
            raise ValueError("trials and repeats must be >= 1")
        object.__setattr__(self, "corpus_sizes", tuple(int(n) for n in self.corpus_sizes))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("stp", "out_dir")}
        d["stp"] = {k: v for k, v in asdict(self.stp).items() if k != "cover_distribution"}
        d["corpus_sizes"] = list(self.corpus_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict, out_dir: str = ".") -> "ExperimentConfig":
        d = dict(d)
        stp = StpParams(**d.pop("stp", {}))
        d["corpus_sizes"] = tuple(d.get("corpus_sizes", (5, 10, 14)))
        return cls(stp=stp, out_dir=out_dir, **d)


@dataclass
class Result:
    """Summary numbers, row tables and confusion matrices of one run."""

    summary: dict
    tables: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)


def load_specs(corpus: str) -> list:
    if corpus == "default":
        return default_corpus()
    from .store import load_corpus

    return load_corpus(corpus)


def padding_scheme(name: str, max_pad: int) -> PaddingScheme:
    if name == "random":
        return PaddingScheme.random(max_pad)
    if name == "level100":
        return PaddingScheme.level100()
    raise ValueError(f"unknown padding {name!r}")


class Lab:
    """Deterministic trace factory for one config; learning artefacts cached."""

    def __init__(self, config: ExperimentConfig, specs: Optional[Sequence[DeviceSpec]] = None):
        self.config = config
        self.specs = list(specs) if specs is not None else load_specs(config.corpus)
        if not self.specs:
            raise ValueError("corpus is empty")
        self._profiles: dict = {}

    @property
    def n(self) -> int:
        return len(self.specs)

    @property
    def ids(self) -> list:
        return [s.device_id for s in self.specs]

    def raw(self, i: int, seconds: float, *key) -> Trace:
        return synth_device(self.specs[i], seconds, (self.config.seed, *key, i))

    @cached_property
    def learn_raw(self) -> list:
        return [self.raw(i, self.config.learn_seconds, LEARN) for i in range(self.n)]

    @cached_property
    def covers(self) -> list:
        """Per-device cover distribution: the device's own unpadded sizes."""
        return [size_histogram(t) for t in self.learn_raw]

    def params(self, i: int, **overrides) -> StpParams:
        return self.config.stp.with_(cover_distribution=self.covers[i], **overrides)

    def shape(self, i: int, trace: Trace, padding: str, *key, **overrides) -> Trace:
        p = self.params(i, **overrides)
        return stp_shape(trace, p, padding_scheme(padding, p.max_pad), rng=(self.config.seed, *key, i))

    def learn_shaped(self, i: int, padding: str = "random") -> Trace:
        return self.shape(i, self.learn_raw[i], padding, LEARN_SHAPE)

    def profiles(self, padding: str = "random") -> list:
        if padding not in self._profiles:
            self._profiles[padding] = [learn_profile(self.learn_shaped(i, padding), self.ids[i]) for i in range(self.n)]
        return self._profiles[padding]

    def test_shaped(self, i: int, padding: str = "random", *key) -> Trace:
        return self.shape(i, self.raw(i, self.config.test_seconds, TEST, *key), padding, TEST_SHAPE, *key)


def _padding_label(padding: str) -> str:
    return "random padding" if padding == "random" else "Level-100"


# --- fingerprinting -------------------------------------------------------


def run_dominant(lab: Lab, padding: str = "random") -> Result:
    """Each device's 30-min test, device ids erased, against all profiles."""
    profiles = {p.device_id: p for p in lab.profiles(padding)}
    rates, mats = [], []
    for r in range(lab.config.repeats):
        tests = {d: size_histogram(nat_aggregate([lab.test_shaped(i, padding, r)])) for i, d in enumerate(lab.ids)}
        m = confusion_matrix(profiles, tests)
        rates.append(diagonal_rate(m))
        mats.append(m.entries)
    mean = ConfusionMatrix(np.mean(mats, axis=0), tuple(lab.ids))
    summary = {
        "padding": padding,
        "diagonal_rate": rates[0] if len(rates) == 1 else float(np.mean(rates)),
        "diagonal_rates": rates,
        "diagonal_rate_of_mean_matrix": diagonal_rate(mean),
        "correct_devices": int(round(diagonal_rate(mean) * lab.n)),
        "devices": lab.n,
    }
    return Result(summary, matrices={"confusion": mean})


def run_local(lab: Lab) -> Result:
    """Per-device traces compared by packet sizes, inter-arrival gaps and both."""
    models = {d: lab.learn_shaped(i) for i, d in enumerate(lab.ids)}
    tests = {d: lab.test_shaped(i) for i, d in enumerate(lab.ids)}
    summary, mats = {}, {}
    for feature in ("size", "interarrival", "joint"):
        m = confusion_matrix(models, tests, feature)
        summary[f"{feature}_diagonal_rate"] = diagonal_rate(m)
        mats[feature] = m
    return Result(summary, matrices=mats)


# --- aggregate traffic ----------------------------------------------------


def subset_trials(lab: Lab, members: Sequence[int], trials: int, padding: str = "random", key: int = 0):
    """Random active subsets of ``members`` and their aggregated test histograms.

    Yields ``(member positions, histogram)``; subset size is uniform in 1..n.
    """
    rng = np.random.default_rng((lab.config.seed, SAMPLE, key))
    n = len(members)
    for t in range(trials):
        k = int(rng.integers(1, n + 1))
        active = sorted(int(x) for x in rng.choice(n, k, replace=False))
        hist = SizeHistogram.from_values([])
        for pos in active:
            i = members[pos]
            hist = hist + size_histogram(lab.test_shaped(i, padding, key, t))
        yield active, hist


def run_count(lab: Lab, padding: str = "random") -> Result:
    profiles = lab.profiles(padding)
    thr = learn_count_thresholds(profiles)
    rows = []
    for t, (active, hist) in enumerate(subset_trials(lab, range(lab.n), lab.config.trials, padding)):
        k_hat = estimate_count(hist.total / lab.config.test_seconds, thr)
        rows.append({"trial": t, "true_count": len(active), "estimate": k_hat,
                     "rate_pps": hist.total / lab.config.test_seconds})
    err = np.array([r["estimate"] - r["true_count"] for r in rows])
    summary = {
        "padding": padding,
        "trials": len(rows),
        "exact": float(np.mean(err == 0)),
        "within_one": float(np.mean(np.abs(err) <= 1)),
        "thresholds": list(thr.thresholds),
    }
    return Result(summary, tables={"trials": rows})


def _members(lab: Lab, n: int) -> list:
    if n > lab.n:
        raise ValueError(f"corpus has only {lab.n} devices")
    if n == lab.n:
        return list(range(n))
    rng = np.random.default_rng((lab.config.seed, SAMPLE, 1000 + n))
    return sorted(int(x) for x in rng.choice(lab.n, n, replace=False))


def evaluate_subsets(lab: Lab, n: int, methods: Sequence[str], padding: str = "random", trials=None) -> dict:
    """Per-method trial scores on a corpus of ``n`` devices.

    Returns ``{method: [(truth, estimate, SubsetScore, detail), ...]}``.
    """
    members = _members(lab, n)
    all_profiles = lab.profiles(padding)
    profiles = [all_profiles[i] for i in members]
    thr = learn_count_thresholds(profiles)
    index = FastScoreIndex.build(profiles, lab.config.f1) if "fsbc" in methods else None
    out = {m: [] for m in methods}
    trials = lab.config.trials if trials is None else trials
    for active, hist in subset_trials(lab, members, trials, padding, key=n):
        truth = frozenset(profiles[p].device_id for p in active)
        for m in methods:
            if m == "full":
                est = full_comparison_check(profiles, hist, thr, lab.config.test_seconds)
            elif m == "fsbc":
                est = fsbc(index, hist, lab.config.f1, lab.config.f2, thr, lab.config.test_seconds)
            else:
                raise ValueError(f"unknown subset method {m!r}")
            out[m].append((truth, est.devices, subset_metrics(truth, est.devices), est.score_detail))
    return out


def _subset_rows(n: int, method: str, results) -> dict:
    scores = np.array([r[2][:3] for r in results])
    return {
        "devices": n,
        "method": method,
        "trials": len(results),
        "recall_pct": 100 * float(scores[:, 0].mean()),
        "precision_pct": 100 * float(scores[:, 1].mean()),
        "exact_pct": 100 * float(scores[:, 2].mean()),
        "mean_operations": float(np.mean([r[3]["operations"] for r in results])),
    }


def run_subset(lab: Lab, methods: Sequence[str], padding: str = "random") -> Result:
    """Recall / precision / exact identification per corpus size."""
    rows = []
    for n in lab.config.corpus_sizes:
        res = evaluate_subsets(lab, n, methods, padding)
        rows.extend(_subset_rows(n, m, res[m]) for m in methods)
    summary = {"padding": padding, "methods": list(methods), "rows": rows}
    return Result(summary, tables={"table": rows})


def run_level100(lab: Lab) -> Result:
    """Dominant-device rate and subset detection, random padding vs Level-100."""
    summary, rows, mats = {}, [], {}
    n = lab.n
    for padding in ("random", "level100"):
        dom = run_dominant(lab, padding)
        summary[f"{padding}_diagonal_rate"] = dom.summary["diagonal_rate"]
        mats[f"{padding}_confusion"] = dom.matrices["confusion"]
        res = evaluate_subsets(lab, n, ("full", "fsbc"), padding)
        for m in ("full", "fsbc"):
            row = _subset_rows(n, m, res[m])
            row["padding"] = padding
            rows.append(row)
            summary[f"{padding}_{m}_exact_pct"] = row["exact_pct"]
    for m in ("full", "fsbc"):
        summary[f"{m}_exact_drop_points"] = summary[f"random_{m}_exact_pct"] - summary[f"level100_{m}_exact_pct"]
    return Result(summary, tables={"subsets": rows}, matrices=mats)


# --- parameter estimation -------------------------------------------------


def run_estimate_w(lab: Lab, trials: int = 100) -> Result:
    """Sweep the true W over 40..160 and estimate it from 30-min tests."""
    traces = dict(zip(lab.ids, lab.learn_raw))
    models = build_w_grid(traces, W_GRID, lab.config.stp, rng=(lab.config.seed, GRID))
    lo, hi = W_SWEEP
    rows = []
    for t in range(trials):
        w = lo + round((hi - lo) * t / max(trials - 1, 1))
        i = t % lab.n
        test = lab.shape(i, lab.raw(i, lab.config.test_seconds, TEST, t), "random", TEST_SHAPE, t, max_pad=w)
        est = estimate_w(models, size_histogram(test))
        rows.append({"trial": t, "device": lab.ids[i], "true_w": w, "estimate": est.w,
                     "estimated_device": est.device_id, "distance": est.distance, "within_20": abs(est.w - w) <= 20})
    grid_rows = []
    for w in W_EXACT_CHECKS:
        for i in range(lab.n):
            test = lab.shape(i, lab.raw(i, lab.config.test_seconds, TEST, 10_000 + w), "random",
                             TEST_SHAPE, 10_000 + w, max_pad=w)
            est = estimate_w(models, size_histogram(test))
            grid_rows.append({"device": lab.ids[i], "true_w": w, "estimate": est.w, "distance": est.distance})
    summary = {
        "trials": trials,
        "within_20": float(np.mean([r["within_20"] for r in rows])),
        "grid_exact": float(np.mean([r["estimate"] == r["true_w"] for r in grid_rows])),
        "grid_max_distance": float(max(r["distance"] for r in grid_rows)),
        "grid": list(W_GRID),
    }
    return Result(summary, tables={"sweep": rows, "grid": grid_rows})


def run_estimate_q(lab: Lab) -> Result:
    """Estimate q for every device at every grid value from the shaped rate."""
    traces = dict(zip(lab.ids, lab.learn_raw))
    thresholds = build_q_thresholds(traces, Q_GRID, lab.config.stp, rng=(lab.config.seed, GRID))
    rows = []
    for i, dev in enumerate(lab.ids):
        for j, q in enumerate(Q_GRID):
            raw = lab.raw(i, lab.config.test_seconds, TEST, j)
            rate = stp_rate(raw, lab.params(i, inject_prob=q), rng=(lab.config.seed, TEST_SHAPE, j, i))
            est = estimate_q(thresholds[dev], rate)
            rows.append({"device": dev, "true_q": q, "observed_pps": rate, "estimate": est,
                         "error": round(abs(est - q), 10)})
    err = np.array([r["error"] for r in rows])
    summary = {"cases": len(rows), "exact": float(np.mean(err < 1e-9)),
               "within_0_1": float(np.mean(err <= 0.1 + 1e-9)), "max_error": float(err.max())}
    return Result(summary, tables={"estimates": rows})


# --- windows --------------------------------------------------------------


def run_windows(lab: Lab, devices: Optional[Sequence[int]] = None) -> Result:
    """Per device: train the window KNN on 3 h of shaped traffic, test on 30 min.

    The control retrains on permuted training labels; it should land near 0.5.
    """
    rows = []
    for i in range(lab.n) if devices is None else devices:
        p = lab.params(i)
        train = label_training_windows(lab.learn_shaped(i), p)
        test = label_training_windows(lab.test_shaped(i), p)
        model = train_knn(train, rng=(lab.config.seed, SAMPLE, i))
        _, score = classify_windows(model, test)
        perm_rng = np.random.default_rng((lab.config.seed, PERMUTE, i))
        shuffled = WindowSet(train.features, train.starts, perm_rng.permutation(train.labels), train.n_periods)
        control = train_knn(shuffled, rng=(lab.config.seed, PERMUTE, 1, i))
        _, cscore = classify_windows(control, test)
        rows.append({
            "device": lab.ids[i],
            "train_windows": len(train),
            "train_periods": train.n_periods,
            "test_windows": len(test),
            "test_periods": test.n_periods,
            "real_fraction": train.real_fraction,
            "k": model.k,
            "cv_accuracy": model.cv_accuracy[model.k],
            "accuracy": score.accuracy,
            "recall": score.recall,
            "precision": score.precision,
            "permuted_accuracy": cscore.accuracy,
        })
    counts_ok = all(r["train_periods"] <= r["train_windows"] <= 2 * r["train_periods"]
                    and r["test_periods"] <= r["test_windows"] <= 2 * r["test_periods"] for r in rows)
    summary = {
        "devices": len(rows),
        "mean_accuracy": float(np.mean([r["accuracy"] for r in rows])),
        "min_accuracy": float(min(r["accuracy"] for r in rows)),
        "mean_permuted_accuracy": float(np.mean([r["permuted_accuracy"] for r in rows])),
        "mean_real_fraction": float(np.mean([r["real_fraction"] for r in rows])),
        "window_counts_in_range": counts_ok,
    }
    return Result(summary, tables={"devices": rows})


# --- anomaly --------------------------------------------------------------


def run_anomaly(
    lab: Lab,
    attacks: Optional[Sequence[str]] = None,
    methods: Sequence[str] = ("lof", "js"),
    fraction: float = 0.5,
    devices: Optional[Sequence[int]] = None,
) -> Result:
    """Thresholds from a validation hour, scored on an injected test hour and a clean hour.

    The normal reference is the device's learning trace.
    """
    attacks = list(ATTACKS) if attacks is None else list(attacks)
    seconds = ANOMALY_TRACE_SECONDS
    rows = []
    for a, name in enumerate(attacks):
        profile = ATTACKS[name]
        for i in range(lab.n) if devices is None else devices:
            normal = lab.learn_raw[i]
            seed = lab.config.seed
            val = inject_attack(lab.raw(i, seconds, VALIDATION), profile, fraction, (seed, INJECT, 0, a, i))
            test = inject_attack(lab.raw(i, seconds, TEST, 0), profile, fraction, (seed, INJECT, 1, a, i))
            clean = lab.raw(i, seconds, HOLDOUT)
            for method in methods:
                model = fit(method, normal, val)
                d = detect(model, test)
                h = detect(model, clean)
                rows.append({
                    "attack": name, "device": lab.ids[i], "method": method,
                    "threshold": model.threshold, "validation_auc": model.validation.auc,
                    "validation_eer": model.validation.eer,
                    "recall": d.recall, "precision": d.precision, "false_alarms": d.false_alarms,
                    "holdout_false_alarms": h.false_alarms,
                })
    summary = {"fraction": fraction, "attacks": attacks}
    for method in methods:
        mine = [r for r in rows if r["method"] == method]
        summary[method] = {
            "mean_recall": float(np.mean([r["recall"] for r in mine])),
            "min_recall": float(min(r["recall"] for r in mine)),
            "test_false_alarms": int(sum(r["false_alarms"] for r in mine)),
            "holdout_false_alarms": int(sum(r["holdout_false_alarms"] for r in mine)),
            "min_validation_auc": float(min(r["validation_auc"] for r in mine)),
        }
    return Result(summary, tables={"devices": rows})


# --- chi-squared ----------------------------------------------------------


def run_chi2(lab: Lab) -> Result:
    """Size/timing independence per device on the unshaped learning traces."""
    rows = []
    for dev, trace in zip(lab.ids, lab.learn_raw):
        try:
            r = chi_squared_independence(trace)
            rows.append({"device": dev, "statistic": r.statistic, "df": r.degrees_of_freedom,
                         "critical_value_95": r.critical_value_95, "reject_independence": r.reject_independence,
                         "time_bin_s": r.final_time_bin_width, "size_bin_bytes": r.final_size_bin_width,
                         "pct_expected_ge_5": r.pct_expected_ge_5})
        except IndependenceUntestableError as e:
            rows.append({"device": dev, "untestable": str(e)})
    summary = {
        "devices": len(rows),
        "rejected": sum(bool(r.get("reject_independence")) for r in rows),
        "critical_values": {str(df): round(chi2_critical_value(df), 2) for df in (1, 2, 4, 6, 15)},
    }
    return Result(summary, tables={"devices": rows})


EXPERIMENTS: dict = {
    "dominant": run_dominant,
    "local": run_local,
    "count": run_count,
    "subset-full": lambda lab: run_subset(lab, ("full",)),
    "subset-fsbc": lambda lab: run_subset(lab, ("fsbc", "full")),
    "level100": run_level100,
    "estimate-w": run_estimate_w,
    "estimate-q": run_estimate_q,
    "windows": run_windows,
    "anomaly": run_anomaly,
    "chi2": run_chi2,
}


def run_experiment(name: str, config: ExperimentConfig, lab: Optional[Lab] = None) -> list:
    """Run ``name`` and write its reports to ``config.out_dir``; returns the paths."""
    if name not in EXPERIMENTS:
        raise UnknownExperimentError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    lab = lab or Lab(config)
    log.info("running %s (seed %d)", name, config.seed)
    result = EXPERIMENTS[name](lab)
    return write_result(name, config, result)


def write_result(name: str, config: ExperimentConfig, result: Result) -> list:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = name.replace("-", "_")
    paths = []
    for tname, rows in result.tables.items():
        path = out / f"{stem}_{tname}.csv"
        report.write_rows_csv(path, rows)
        paths.append(path)
    for mname, m in result.matrices.items():
        path = out / f"{stem}_{mname}.csv"
        report.write_matrix_csv(path, m.entries, m.labels, m.labels)
        paths.append(path)
        paths.extend(report.write_heatmap(out / f"{stem}_{mname}", m.entries, m.labels))
    path = out / f"{stem}.json"
    report.write_json(path, {"experiment": name, "seed": config.seed, "config": config.to_dict(),
                             "summary": result.summary})
    paths.append(path)
    return paths
