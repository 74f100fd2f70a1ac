"""Reading and writing traces, profiles, corpora and window models.

Trace files are line-oriented CSV::

    timestamp_s,size_bytes,device_id,is_cover,is_attack
    # duration_s=10800.0
    0.0123,134,01-tplink-plug,0,0

``device_id`` is ``-`` for aggregated traffic and the flags are ``0``/``1``.
Lines starting with ``#`` carry metadata; only ``duration_s`` is understood
(without it the duration is the last timestamp). Floats are written with
``repr`` so a save/load round trip is bit-identical.

Profiles are one JSON file per device (``<device_id>.json``)::

    {"device_id": ..., "duration_s": ..., "mean_rate": ...,
     "histogram": {"<size>": <count>, ...}}
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import SizeHistogram, Trace
from .fingerprint import DeviceProfile
from .synth import DeviceSpec
from .windows import KnnModel

TRACE_HEADER = "timestamp_s,size_bytes,device_id,is_cover,is_attack"
AGGREGATE_ID = "-"
PROFILE_SUFFIX = ".json"


class TraceParseError(ValueError):
    """Malformed trace file; the message names the offending line."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def _flag(text: str, path, line_no: int) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise TraceParseError(path, line_no, f"flag must be 0 or 1, got {text!r}")


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(TRACE_HEADER + "\n")
        f.write(f"# duration_s={trace.duration!r}\n")
        for t, s, d, c, a in zip(trace.timestamps, trace.sizes, trace.device_ids, trace.is_cover, trace.is_attack):
            dev = AGGREGATE_ID if d is None else d
            if not dev or "," in dev or "\n" in dev or (d is not None and d == AGGREGATE_ID):
                raise ValueError(f"device id {d!r} cannot be stored")
            f.write(f"{float(t)!r},{int(s)},{dev},{int(c)},{int(a)}\n")


def load_trace(path) -> Trace:
    ts, sizes, devs, cover, attack = [], [], [], [], []
    duration = None
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
        if first != TRACE_HEADER:
            raise TraceParseError(path, 1, f"expected header {TRACE_HEADER!r}")
        for line_no, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "duration_s":
                    try:
                        duration = float(value)
                    except ValueError:
                        raise TraceParseError(path, line_no, f"bad duration {value!r}") from None
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise TraceParseError(path, line_no, f"expected 5 fields, got {len(parts)}")
            try:
                t = float(parts[0])
                s = int(parts[1])
            except ValueError as e:
                raise TraceParseError(path, line_no, str(e)) from None
            if not parts[2]:
                raise TraceParseError(path, line_no, "empty device_id")
            ts.append(t)
            sizes.append(s)
            devs.append(None if parts[2] == AGGREGATE_ID else parts[2])
            cover.append(_flag(parts[3], path, line_no))
            attack.append(_flag(parts[4], path, line_no))
    if duration is None:
        duration = ts[-1] if ts else 0.0
    try:
        return Trace(
            np.array(ts, np.float64),
            np.array(sizes, np.int64),
            np.array(devs, dtype=object),
            np.array(cover, bool),
            np.array(attack, bool),
            duration,
        )
    except ValueError as e:
        raise TraceParseError(path, 0, str(e)) from None


def profile_to_dict(p: DeviceProfile) -> dict:
    return {
        "device_id": p.device_id,
        "duration_s": p.duration,
        "mean_rate": p.mean_rate,
        "histogram": {str(s): c for s, c in p.histogram.items()},
    }


def profile_from_dict(d: dict) -> DeviceProfile:
    try:
        hist = SizeHistogram.from_mapping({int(s): int(c) for s, c in d["histogram"].items()})
        return DeviceProfile(str(d["device_id"]), hist, float(d["mean_rate"]), float(d["duration_s"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed profile: {e}") from None


def save_profiles(profiles: Iterable[DeviceProfile], directory) -> list:
    """One JSON file per profile; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in profiles:
        if os.sep in p.device_id or p.device_id.startswith("."):
            raise ValueError(f"device id {p.device_id!r} is not a valid file name")
        path = directory / (p.device_id + PROFILE_SUFFIX)
        path.write_text(json.dumps(profile_to_dict(p), indent=1) + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def load_profiles(directory) -> list:
    """All profiles in ``directory``, sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"profile directory {directory} not found")
    paths = sorted(directory.glob("*" + PROFILE_SUFFIX))
    if not paths:
        raise FileNotFoundError(f"no profiles in {directory}")
    out = []
    for path in paths:
        try:
            out.append(profile_from_dict(json.loads(path.read_text(encoding="utf-8"))))
        except (ValueError, json.JSONDecodeError) as e:
            raise ValueError(f"{path}: {e}") from None
    return out


def spec_to_dict(spec: DeviceSpec) -> dict:
    return {
        "device_id": spec.device_id,
        "size_distribution": [[s, p] for s, p in spec.size_distribution],
        "rate": spec.rate,
        "burst_seconds": spec.burst_seconds,
        "duty_cycle": spec.duty_cycle,
        "lead_distribution": None if spec.lead_distribution is None else [[s, p] for s, p in spec.lead_distribution],
        "poll_interval": spec.poll_interval,
        "poll_packets": spec.poll_packets,
        "poll_spacing": spec.poll_spacing,
    }


def spec_from_dict(d: dict) -> DeviceSpec:
    lead = d.get("lead_distribution")
    return DeviceSpec(
        str(d["device_id"]),
        tuple((int(s), float(p)) for s, p in d["size_distribution"]),
        float(d["rate"]),
        float(d.get("burst_seconds", 0.4)),
        float(d.get("duty_cycle", 0.02)),
        None if lead is None else tuple((int(s), float(p)) for s, p in lead),
        d.get("poll_interval"),
        int(d.get("poll_packets", 6)),
        float(d.get("poll_spacing", 0.5)),
    )


def save_corpus(specs: Sequence[DeviceSpec], path) -> None:
    Path(path).write_text(json.dumps([spec_to_dict(s) for s in specs], indent=1) + "\n", encoding="utf-8")


def load_corpus(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file {path} not found")
    try:
        return [spec_from_dict(d) for d in json.loads(path.read_text(encoding="utf-8"))]
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"{path}: malformed corpus: {e}") from None


def save_knn(model: KnnModel, path) -> None:
    """Flat labelled-vector file: a ``# k=..`` line, then ``label,v1,..,vn`` rows."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# k={model.k}\n")
        for label, row in zip(model.labels, model.features):
            f.write(",".join([str(int(label))] + [str(int(v)) for v in row]) + "\n")


def load_knn(path) -> KnnModel:
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
        if not first.startswith("# k="):
            raise ValueError(f"{path}:1: expected '# k=<int>'")
        k = int(first[4:])
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no training vectors")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows differ in length")
    data = np.array(rows, dtype=np.int64)
    return KnnModel(data[:, 1:], data[:, 0].astype(bool), k)
