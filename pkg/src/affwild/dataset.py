"""Dataset assembly: labeled sequences, quadrant statistics, duplication-based
oversampling toward target valence-arousal quadrant proportions, and
fixed-length sequence batching.

Quadrants are ordered (V+A+, V-A+, V+A-, V-A-); frames exactly on an axis
(V=0 or A=0) count as positive.  Oversampling appends duplicated contiguous
segments as new sequences and never modifies the originals.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import read_labels

QUADRANT_NAMES = ("v+a+", "v-a+", "v+a-", "v-a-")

MANIFEST_HEADER = "manifest-v1"


class BalanceError(RuntimeError):
    """Oversampling could not reach the target proportions."""

    def __init__(self, message: str, achieved: tuple | None = None):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    """Per-frame features and labels for one (possibly duplicated) video."""

    video_id: str
    frames: np.ndarray      # T x H x W x C, values in [-1, 1]
    landmarks: np.ndarray   # T x 2L, values in [0, 1]
    valence: np.ndarray     # T, values in [-1, 1]
    arousal: np.ndarray     # T, values in [-1, 1]
    classes: np.ndarray | None = None  # T, int labels for the categorical head

    def __post_init__(self):
        t = self.frames.shape[0]
        for name in ("landmarks", "valence", "arousal"):
            arr = getattr(self, name)
            if arr.shape[0] != t:
                raise ValueError(f"{name} length {arr.shape[0]} != frame count {t}")
        if self.classes is not None and self.classes.shape[0] != t:
            raise ValueError("classes length != frame count")
        for name in ("valence", "arousal"):
            arr = getattr(self, name)
            if np.any(np.abs(arr) > 1.0):
                raise ValueError(f"{name} outside [-1, 1]")
        if np.any(np.abs(self.frames) > 1.0):
            raise ValueError("frame intensities outside [-1, 1]")
        if np.any(self.landmarks < 0.0) or np.any(self.landmarks > 1.0):
            raise ValueError("landmarks outside [0, 1]")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def segment(self, start: int, length: int, new_id: str) -> "LabeledSequence":
        sl = slice(start, start + length)
        return LabeledSequence(
            new_id,
            self.frames[sl].copy(),
            self.landmarks[sl].copy(),
            self.valence[sl].copy(),
            self.arousal[sl].copy(),
            None if self.classes is None else self.classes[sl].copy(),
        )


@dataclass(frozen=True)
class AffectDataset:
    sequences: tuple

    def __len__(self) -> int:
        return len(self.sequences)

    def total_frames(self) -> int:
        return sum(len(s) for s in self.sequences)


@dataclass(frozen=True)
class QuadrantStats:
    counts: tuple       # frames per quadrant, order QUADRANT_NAMES
    proportions: tuple

    def __post_init__(self):
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise ValueError("quadrant proportions must sum to 1")


def quadrant_index(valence: np.ndarray, arousal: np.ndarray) -> np.ndarray:
    """0 = V+A+, 1 = V-A+, 2 = V+A-, 3 = V-A-; zeros count as positive."""
    vneg = np.asarray(valence) < 0
    aneg = np.asarray(arousal) < 0
    return vneg.astype(np.intp) + 2 * aneg.astype(np.intp)


def quadrant_stats(dataset: AffectDataset) -> QuadrantStats:
    if not dataset.sequences:
        raise ValueError("quadrant_stats of empty dataset")
    counts = np.zeros(4, dtype=np.int64)
    for seq in dataset.sequences:
        counts += np.bincount(quadrant_index(seq.valence, seq.arousal), minlength=4)
    total = counts.sum()
    return QuadrantStats(tuple(int(c) for c in counts), tuple(counts / total))


# ------------------------------------------------------------------- balancing

def _segment_candidates(sequences, segment_len: int):
    """Per-quadrant list of (sequence index, start) whose majority quadrant is
    that quadrant.  Ties resolve to the lowest quadrant index."""
    per_quadrant: list[list[tuple[int, int]]] = [[], [], [], []]
    for si, seq in enumerate(sequences):
        t = len(seq)
        if t < segment_len:
            continue
        quad = quadrant_index(seq.valence, seq.arousal)
        onehot = np.zeros((t + 1, 4), dtype=np.int64)
        onehot[1:] = np.eye(4, dtype=np.int64)[quad].cumsum(axis=0)
        for start in range(t - segment_len + 1):
            window = onehot[start + segment_len] - onehot[start]
            per_quadrant[int(window.argmax())].append((si, start))
    return per_quadrant


def balance(dataset: AffectDataset, targets, segment_len: int, tolerance: float,
            seed: int, max_iters: int | None = None) -> AffectDataset:
    """Duplicate contiguous segments until quadrant proportions reach targets.

    Each round picks a seeded-random segment whose majority quadrant is the
    currently most under-represented one and appends it as a new sequence.
    Originals are never modified.  Raises :class:`BalanceError` (reporting the
    achieved proportions) if the iteration cap is hit first.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (4,) or abs(targets.sum() - 1.0) > 1e-9:
        raise ValueError("targets must be 4 proportions summing to 1")
    stats = quadrant_stats(dataset)
    counts = np.array(stats.counts, dtype=np.float64)
    for q in range(4):
        if targets[q] > 0 and counts[q] == 0:
            raise BalanceError(f"no frames available in quadrant {QUADRANT_NAMES[q]}")

    candidates = _segment_candidates(dataset.sequences, segment_len)
    rng = np.random.default_rng(seed)
    cap = max_iters if max_iters is not None else max(1, 10 * dataset.total_frames() // segment_len)
    new_seqs = list(dataset.sequences)
    dup_counter = 0
    for _ in range(cap):
        props = counts / counts.sum()
        if np.all(np.abs(props - targets) <= tolerance):
            return AffectDataset(tuple(new_seqs))
        needed = int((targets - props).argmax())
        pool = candidates[needed]
        if not pool:
            raise BalanceError(
                f"no candidate segments with majority quadrant {QUADRANT_NAMES[needed]}",
                achieved=tuple(props),
            )
        si, start = pool[rng.integers(len(pool))]
        src = dataset.sequences[si]
        dup_counter += 1
        dup = src.segment(start, segment_len, f"{src.video_id}~dup{dup_counter}")
        new_seqs.append(dup)
        counts += np.bincount(quadrant_index(dup.valence, dup.arousal), minlength=4)

    props = counts / counts.sum()
    if np.all(np.abs(props - targets) <= tolerance):
        return AffectDataset(tuple(new_seqs))
    raise BalanceError(
        f"iteration cap {cap} reached; achieved proportions {tuple(props)}",
        achieved=tuple(props),
    )


# -------------------------------------------------------------------- batching

@dataclass(frozen=True, eq=False)
class Batch:
    frames: np.ndarray      # B x T x H x W x C
    landmarks: np.ndarray   # B x T x 2L
    valence: np.ndarray     # B x T
    arousal: np.ndarray     # B x T
    classes: np.ndarray | None = None  # B x T


def enumerate_windows(dataset: AffectDataset, seq_len: int) -> list[tuple[int, int]]:
    """All non-overlapping windows aligned to frame 0 of each sequence."""
    windows = []
    for si, seq in enumerate(dataset.sequences):
        for start in range(0, len(seq) - seq_len + 1, seq_len):
            windows.append((si, start))
    return windows


def batch_sequences(dataset: AffectDataset, seq_len: int, batch_size: int, seed):
    """One epoch of batches over seeded-shuffled fixed-length windows.

    Windows never cross video boundaries; trailing remainders shorter than
    ``seq_len`` are dropped.  The final batch may hold fewer than
    ``batch_size`` windows so that each epoch is exhaustive.
    """
    if seq_len < 1 or batch_size < 1:
        raise ValueError("seq_len and batch_size must be >= 1")
    windows = enumerate_windows(dataset, seq_len)
    if not windows:
        raise ValueError(f"no video has at least seq_len={seq_len} frames")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(windows))
    for chunk_start in range(0, len(order), batch_size):
        chunk = [windows[i] for i in order[chunk_start:chunk_start + batch_size]]
        segs = [dataset.sequences[si].segment(start, seq_len, "batch") for si, start in chunk]
        yield Batch(
            frames=np.stack([s.frames for s in segs]),
            landmarks=np.stack([s.landmarks for s in segs]),
            valence=np.stack([s.valence for s in segs]),
            arousal=np.stack([s.arousal for s in segs]),
            classes=(np.stack([s.classes for s in segs])
                     if all(s.classes is not None for s in segs) else None),
        )


# ----------------------------------------------------------------- disk layout

def _load_frames(frames_dir: Path) -> tuple[np.ndarray, tuple[int, int]]:
    files = sorted(frames_dir.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG frames in {frames_dir}")
    images = []
    for f in files:
        with Image.open(f) as im:
            images.append(np.asarray(im.convert("RGB"), dtype=np.float64))
    stack = np.stack(images)
    h, w = stack.shape[1:3]
    return stack / 127.5 - 1.0, (w, h)


def _load_landmarks(path: Path, extent: tuple[int, int]) -> np.ndarray:
    """Landmark file: one line per frame of comma-separated x,y pixel
    coordinates; normalized to [0, 1] by the image extent."""
    rows = [
        [float(v) for v in line.split(",")]
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    arr = np.asarray(rows, dtype=np.float64)
    w, h = extent
    arr[:, 0::2] /= w
    arr[:, 1::2] /= h
    return np.clip(arr, 0.0, 1.0)


def load_manifest(path) -> AffectDataset:
    """Dataset manifest: header line, then one tab-separated record per video:
    video_id, frames_dir, landmarks_file, valence_labels, arousal_labels.
    Paths are relative to the manifest's directory."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ValueError(f"{path}: expected '{MANIFEST_HEADER}' header")
    base = path.parent
    sequences = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{ln}: expected 5 tab-separated fields")
        video_id, frames_dir, lm_file, v_file, a_file = parts
        frames, extent = _load_frames(base / frames_dir)
        landmarks = _load_landmarks(base / lm_file, extent)
        valence, _, _ = read_labels(base / v_file)
        arousal, _, _ = read_labels(base / a_file)
        sequences.append(LabeledSequence(video_id, frames, landmarks, valence, arousal))
    if not sequences:
        raise ValueError(f"{path}: manifest lists no videos")
    return AffectDataset(tuple(sequences))


def save_dataset(dataset: AffectDataset, out_dir) -> Path:
    """Materialize a dataset under ``out_dir`` and return the manifest path.

    Landmarks are written back as pixel coordinates against the frame extent.
    """
    from .annotations import write_labels

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for seq in dataset.sequences:
        vid_dir = out_dir / seq.video_id.replace("/", "_")
        frames_dir = vid_dir / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        h, w = seq.frames.shape[1:3]
        for i, frame in enumerate(seq.frames):
            # round (not truncate) so that save -> load -> save is idempotent
            img = np.rint(np.clip((frame + 1.0) * 127.5, 0, 255)).astype(np.uint8)
            Image.fromarray(img, mode="RGB").save(frames_dir / f"{i:06d}.png")
        px = seq.landmarks.copy()
        px[:, 0::2] *= w
        px[:, 1::2] *= h
        lm_path = vid_dir / "landmarks.csv"
        lm_path.write_text(
            "\n".join(",".join(repr(float(v)) for v in row) for row in px) + "\n",
            encoding="utf-8",
        )
        v_path = vid_dir / "valence.labels"
        a_path = vid_dir / "arousal.labels"
        write_labels(v_path, seq.valence, seq.video_id, "valence")
        write_labels(a_path, seq.arousal, seq.video_id, "arousal")
        records.append("\t".join([
            seq.video_id,
            str(frames_dir.relative_to(out_dir)),
            str(lm_path.relative_to(out_dir)),
            str(v_path.relative_to(out_dir)),
            str(a_path.relative_to(out_dir)),
        ]))
    manifest = out_dir / "manifest.tsv"
    manifest.write_text(MANIFEST_HEADER + "\n" + "\n".join(records) + "\n", encoding="utf-8")
    return manifest
