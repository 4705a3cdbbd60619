"""Post-processing of time-continuous annotation traces.

Raw traces are irregularly-timed (timestamp, value) samples captured per
annotator and per dimension (valence or arousal).  This module resamples them
onto the video frame grid with nearest-neighbor interpolation, computes
inter-annotator agreement statistics (MAC-A over all annotators, MAC-S over
the selected subset), averages the selected traces into final per-frame
labels, builds cumulative-distribution curves of the MAC values, and measures
the first canonical correlation between landmark trajectories and labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import DegenerateSeriesError, pearson

DIMENSIONS = ("valence", "arousal")

TRACE_HEADER = "trace-v1"
LABELS_HEADER = "labels-v1"


class TraceFormatError(ValueError):
    """Malformed annotation trace or label file."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class AnnotationTrace:
    """One annotator's raw samples for one dimension."""

    annotator_id: str
    dimension: str
    samples: tuple  # of (timestamp_seconds, value) pairs

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        if not self.samples:
            raise ValueError("trace must contain at least one sample")
        ts = np.array([t for t, _ in self.samples], dtype=np.float64)
        vs = np.array([v for _, v in self.samples], dtype=np.float64)
        if np.any(np.diff(ts) <= 0):
            raise ValueError("trace timestamps must be strictly increasing")
        if np.any(vs < -1.0) or np.any(vs > 1.0):
            raise ValueError("trace values must lie in [-1, 1]")

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples], dtype=np.float64)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples], dtype=np.float64)


@dataclass
class VideoAnnotations:
    """All traces (and optional landmarks) attached to one video."""

    video_id: str
    frame_rate: float
    frame_count: int
    traces: list[AnnotationTrace] = field(default_factory=list)
    selected_ids: dict[str, list[str]] = field(default_factory=dict)  # per dimension
    landmarks: np.ndarray | None = None  # frame_count x (2*L)

    def __post_init__(self):
        if self.frame_rate <= 0 or self.frame_count < 1:
            raise ValueError("frame_rate must be positive and frame_count >= 1")
        if self.landmarks is not None:
            self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
            if self.landmarks.shape[0] != self.frame_count:
                raise ValueError("landmark rows must equal frame_count")
        present = {t.annotator_id for t in self.traces}
        for dim, ids in self.selected_ids.items():
            if dim not in DIMENSIONS:
                raise ValueError(f"unknown dimension {dim!r} in selection")
            missing = set(ids) - present
            if missing:
                raise ValueError(f"selected annotators not present: {sorted(missing)}")

    def traces_for(self, dimension: str) -> list[AnnotationTrace]:
        return [t for t in self.traces if t.dimension == dimension]


@dataclass
class MacReport:
    """Mean-of-average-correlations agreement statistics for one video."""

    video_id: str
    dimension: str
    per_annotator: dict[str, float]
    mac_a: float
    mac_s: float | None = None
    excluded_pairs: list[tuple[str, str]] = field(default_factory=list)


# ------------------------------------------------------------------ resampling

def resample(trace: AnnotationTrace, frame_rate: float, frame_count: int) -> np.ndarray:
    """Nearest-neighbor resample onto the frame grid t_f = f / frame_rate.

    Frames before the first sample take the first value, frames after the
    last take the last; an exact midpoint tie resolves to the earlier sample.
    """
    if frame_count < 1 or frame_rate <= 0:
        raise ValueError("frame_count >= 1 and frame_rate > 0 required")
    times = trace.times
    values = trace.values
    frame_times = np.arange(frame_count, dtype=np.float64) / frame_rate
    right = np.searchsorted(times, frame_times, side="left")
    left = np.clip(right - 1, 0, len(times) - 1)
    right = np.clip(right, 0, len(times) - 1)
    d_left = np.abs(frame_times - times[left])
    d_right = np.abs(times[right] - frame_times)
    pick = np.where(d_left <= d_right, left, right)
    return values[pick]


# ------------------------------------------------------------------- agreement

def inter_annotator_correlations(video: VideoAnnotations, dimension: str):
    """Pairwise Pearson matrix across resampled traces.

    Returns ``(ids, matrix, excluded)`` where ``matrix[i, j]`` is the Pearson
    correlation of annotators i and j (NaN on the diagonal and for undefined
    pairs) and ``excluded`` lists pairs skipped because a trace was constant.
    """
    traces = video.traces_for(dimension)
    if len(traces) < 2:
        raise ValueError(f"need at least 2 traces for {dimension}, have {len(traces)}")
    ids = [t.annotator_id for t in traces]
    series = [resample(t, video.frame_rate, video.frame_count) for t in traces]
    k = len(ids)
    matrix = np.full((k, k), np.nan)
    excluded: list[tuple[str, str]] = []
    for i in range(k):
        for j in range(i + 1, k):
            try:
                r = pearson(series[i], series[j])
            except DegenerateSeriesError:
                excluded.append((ids[i], ids[j]))
                continue
            matrix[i, j] = matrix[j, i] = r
    return ids, matrix, excluded


def _mean_of_row_averages(ids, matrix, subset) -> tuple[dict[str, float], float]:
    averages: dict[str, float] = {}
    idx = {a: i for i, a in enumerate(ids)}
    rows = [idx[a] for a in subset]
    for a in subset:
        i = idx[a]
        others = [matrix[i, j] for j in rows if j != i and np.isfinite(matrix[i, j])]
        if others:
            averages[a] = float(np.mean(others))
    if not averages:
        raise DegenerateSeriesError("no defined inter-annotator correlations")
    return averages, float(np.mean(list(averages.values())))


def mac(video: VideoAnnotations, dimension: str) -> MacReport:
    """MAC-A over all annotators; MAC-S over the selected subset when set.

    Undefined pairs (constant traces) are excluded from the averages and
    recorded, never treated as zero.
    """
    ids, matrix, excluded = inter_annotator_correlations(video, dimension)
    per_annotator, mac_a = _mean_of_row_averages(ids, matrix, ids)
    mac_s = None
    selection = video.selected_ids.get(dimension)
    if selection:
        _, mac_s = _mean_of_row_averages(ids, matrix, selection)
    return MacReport(video.video_id, dimension, per_annotator, mac_a, mac_s, excluded)


def final_labels(video: VideoAnnotations, dimension: str) -> np.ndarray:
    """Frame-wise mean of the selected, resampled traces, clamped to [-1, 1]."""
    selection = video.selected_ids.get(dimension)
    if not selection:
        raise ValueError(f"no annotator selection for {dimension} on {video.video_id}")
    by_id = {t.annotator_id: t for t in video.traces_for(dimension)}
    stacked = np.stack([resample(by_id[a], video.frame_rate, video.frame_count)
                        for a in selection])
    return np.clip(stacked.mean(axis=0), -1.0, 1.0)


def mac_cdf(values, thresholds) -> np.ndarray:
    """Fraction of videos whose MAC value is >= each threshold."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("mac_cdf of empty value list")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    return np.array([(values >= t).mean() for t in thresholds])


# ------------------------------------------------------------------------- CCA

def cca_first(landmarks: np.ndarray, annotation: np.ndarray, ridge: float = 1e-6) -> float:
    """First canonical correlation between landmark rows and a label series.

    Both view covariances receive a ridge of ``ridge`` before whitening;
    with the 1-D annotation view this is the (regularized) multiple
    correlation of the annotation on the landmark columns.
    """
    x = np.asarray(landmarks, dtype=np.float64)
    y = np.asarray(annotation, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"landmarks {x.shape} incompatible with annotation length {y.size}")
    t = x.shape[0]
    if t < 3:
        raise ValueError("cca_first requires at least 3 frames")
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    cyy = float((yc * yc).mean())
    if cyy == 0.0:
        raise DegenerateSeriesError("cca_first undefined for a constant annotation")
    cxx = xc.T @ xc / t + ridge * np.eye(x.shape[1])
    cxy = xc.T @ yc / t
    evals, evecs = np.linalg.eigh(cxx)
    inv_sqrt = evecs @ (evecs / np.sqrt(evals)).T
    m = inv_sqrt @ cxy / np.sqrt(cyy + ridge)
    return float(np.linalg.norm(m))


# ------------------------------------------------------------------- file I/O

def write_trace(path, trace: AnnotationTrace, video_id: str) -> None:
    """Trace file: one header line, then one "timestamp,value" pair per line."""
    lines = [f"{TRACE_HEADER},{trace.annotator_id},{video_id},{trace.dimension}"]
    lines += [f"{float(t)!r},{float(v)!r}" for t, v in trace.samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_trace(path) -> tuple[AnnotationTrace, str]:
    """Parse a trace file; returns the trace and the video id from the header."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise TraceFormatError(path, 1, "empty trace file")
    header = lines[0].split(",")
    if len(header) != 4 or header[0] != TRACE_HEADER:
        raise TraceFormatError(path, 1, f"bad header {lines[0]!r}")
    _, annotator_id, video_id, dimension = header
    samples = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceFormatError(path, ln, f"expected 'timestamp,value', got {line!r}")
        try:
            samples.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise TraceFormatError(path, ln, f"non-numeric sample {line!r}") from None
    try:
        trace = AnnotationTrace(annotator_id, dimension, tuple(samples))
    except ValueError as exc:
        raise TraceFormatError(path, 1, str(exc)) from None
    return trace, video_id


def write_labels(path, labels: np.ndarray, video_id: str, dimension: str) -> None:
    """Label file: one header line, then one value per frame per line."""
    lines = [f"{LABELS_HEADER},{video_id},{dimension}"]
    lines += [repr(float(v)) for v in np.asarray(labels).ravel()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_labels(path) -> tuple[np.ndarray, str, str]:
    """Parse a label file; returns (labels, video_id, dimension)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise TraceFormatError(path, 1, "empty label file")
    header = lines[0].split(",")
    if len(header) != 3 or header[0] != LABELS_HEADER:
        raise TraceFormatError(path, 1, f"bad header {lines[0]!r}")
    try:
        labels = np.array([float(v) for v in lines[1:] if v.strip()], dtype=np.float64)
    except ValueError:
        raise TraceFormatError(path, 1, "non-numeric label value") from None
    return labels, header[1], header[2]
