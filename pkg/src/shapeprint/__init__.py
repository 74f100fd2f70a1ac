"""Fingerprinting, counting and anomaly detection on padded and shaped IoT traffic."""

from .aggregate import estimate_count, fsbc, full_comparison_check, learn_count_thresholds, nat_aggregate
from .core import SizeHistogram, Trace, interarrival_histogram, joint_histogram, size_histogram, split_windows
from .fingerprint import DeviceProfile, classify_dominant, confusion_matrix, diagonal_rate, learn_profile
from .metrics import chi_squared_independence, cosine_distance, jsd, kl_divergence
from .obfuscation import PaddingScheme, StpParams, ilp_shape, stp_shape
from .synth import DeviceSpec, default_corpus, synth_device

__all__ = [
    "DeviceProfile",
    "DeviceSpec",
    "PaddingScheme",
    "SizeHistogram",
    "StpParams",
    "Trace",
    "chi_squared_independence",
    "classify_dominant",
    "confusion_matrix",
    "cosine_distance",
    "default_corpus",
    "diagonal_rate",
    "estimate_count",
    "fsbc",
    "full_comparison_check",
    "ilp_shape",
    "interarrival_histogram",
    "jsd",
    "joint_histogram",
    "kl_divergence",
    "learn_count_thresholds",
    "learn_profile",
    "nat_aggregate",
    "size_histogram",
    "split_windows",
    "stp_shape",
    "synth_device",
]
