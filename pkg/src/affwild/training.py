"""End-to-end training with Adam on the CCC loss (or MSE / cross-entropy),
a finite-difference gradient-check harness, and the evaluation protocol:
per-video and concatenated CCC/Pearson/MSE plus 2-D valence-arousal
histograms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from . import tensor as T
from .dataset import AffectDataset, Batch, batch_sequences
from .model import (CATEGORICAL_HEAD, REGRESSION_HEAD, ModelInstance, forward,
                    load_model)
from .tensor import Tensor

LOSSES = ("ccc", "mse", "cross-entropy")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    seq_len: int = 80
    epochs: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    loss: str = "ccc"

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("rates and sizes must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")


class Adam:
    """Standard Adam with bias correction; zero gradient leaves parameters
    unchanged."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, skip: set[str] = frozenset()) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if name in skip or p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.epsilon)


def _batch_loss(model: ModelInstance, batch: Batch, loss_name: str,
                train: bool, rng: np.random.Generator | None = None) -> Tensor:
    out = forward(model, batch.frames,
                  batch.landmarks if model.config.use_landmarks else None,
                  train=train, rng=rng)
    b, t = batch.frames.shape[:2]
    if loss_name == "ccc":
        if model.config.head != REGRESSION_HEAD:
            raise ValueError("ccc loss requires the regression head")
        pred_v = T.reshape(T.narrow(out, 2, 0, 1), (b * t,))
        pred_a = T.reshape(T.narrow(out, 2, 1, 1), (b * t,))
        return metrics.ccc_loss(pred_v, batch.valence.ravel(),
                                pred_a, batch.arousal.ravel())
    if loss_name == "mse":
        if model.config.head != REGRESSION_HEAD:
            raise ValueError("mse loss requires the regression head")
        labels = np.stack([batch.valence, batch.arousal], axis=-1)
        diff = out - Tensor(labels)
        return T.tmean(diff * diff)
    # cross-entropy over softmax probabilities from the categorical head
    if model.config.head != CATEGORICAL_HEAD:
        raise ValueError("cross-entropy requires the categorical head")
    if batch.classes is None:
        raise ValueError("cross-entropy needs per-frame class labels")
    flat = T.reshape(out, (b * t, model.config.head_units))
    picked = T.gather_rows(flat, batch.classes.ravel())
    return T.tmean(T.neg(T.log(picked)))


@dataclass
class TrainResult:
    model: ModelInstance
    loss_curve: list  # mean training loss per epoch


def train(model: ModelInstance, dataset: AffectDataset, cfg: TrainConfig,
          freeze: str = "none") -> TrainResult:
    """Adam updates over batched fixed-length windows; deterministic under a
    fixed seed.  ``freeze='backbone'`` exempts the conv parameters from
    updates.  Aborts with a diagnostic if the loss turns non-finite."""
    if freeze not in ("none", "backbone"):
        raise ValueError("freeze must be 'none' or 'backbone'")
    skip = {n for n in model.params if n.startswith("conv")} if freeze == "backbone" else set()
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0])
        dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
        epoch_losses = []
        for batch in batch_sequences(dataset, cfg.seq_len, cfg.batch_size, shuffle_rng):
            loss = _batch_loss(model, batch, cfg.loss, train=True, rng=dropout_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}")
            loss.backward()
            opt.step(skip=skip)
            epoch_losses.append(value)
        curve.append(float(np.mean(epoch_losses)))
    return TrainResult(model, curve)


# ------------------------------------------------------------------ grad check

def gradcheck(model: ModelInstance, batch: Batch, loss_name: str,
              eps: float = 1e-4) -> float:
    """Central finite differences on every parameter element vs the analytic
    gradient; returns the worst relative error.  Intended for tiny models."""
    loss = _batch_loss(model, batch, loss_name, train=False)
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in model.params.items()}

    worst = 0.0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _batch_loss(model, batch, loss_name, train=False).item()
            flat[i] = orig - eps
            down = _batch_loss(model, batch, loss_name, train=False).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(grad[i] - numeric) / max(abs(grad[i]) + abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ------------------------------------------------------------------ evaluation

@dataclass
class VideoScores:
    ccc_v: float
    ccc_a: float
    pearson_v: float
    pearson_a: float
    mse_v: float
    mse_a: float
    degenerate: bool = False


@dataclass
class EvaluationReport:
    mode: str                       # "per-video" or "concatenated"
    per_video: dict                 # video_id -> VideoScores
    concat_ccc_v: float
    concat_ccc_a: float
    concat_mse_v: float
    concat_mse_a: float
    mean_ccc: float                 # (ccc_v + ccc_a) / 2 for the reported mode
    pred_hist: np.ndarray           # 20 x 20 over [-1, 1]^2
    ann_hist: np.ndarray
    predictions: dict = field(default_factory=dict)  # video_id -> N x 2 array

    def to_text(self) -> str:
        lines = [f"evaluation report (mode={self.mode})", ""]
        lines.append("video\tccc_v\tccc_a\tpearson_v\tpearson_a\tmse_v\tmse_a\tdegenerate")
        for vid, s in self.per_video.items():
            lines.append(
                f"{vid}\t{s.ccc_v:.6f}\t{s.ccc_a:.6f}\t{s.pearson_v:.6f}"
                f"\t{s.pearson_a:.6f}\t{s.mse_v:.6f}\t{s.mse_a:.6f}\t{s.degenerate}")
        lines.append("")
        for key, value in self.key_values().items():
            lines.append(f"{key}={value!r}")
        return "\n".join(lines) + "\n"

    def key_values(self) -> dict:
        return {
            "mode": self.mode,
            "concat_ccc_valence": self.concat_ccc_v,
            "concat_ccc_arousal": self.concat_ccc_a,
            "concat_mse_valence": self.concat_mse_v,
            "concat_mse_arousal": self.concat_mse_a,
            "mean_ccc": self.mean_ccc,
        }


def _safe_ccc(x, y) -> tuple[float, bool]:
    try:
        return metrics.ccc(x, y), False
    except metrics.DegenerateSeriesError:
        return 0.0, True


def _safe_pearson(x, y) -> tuple[float, bool]:
    try:
        return metrics.pearson(x, y), False
    except metrics.DegenerateSeriesError:
        return 0.0, True


def predict_video(model: ModelInstance, seq, seq_len: int) -> np.ndarray:
    """Full-length predictions with per-window state reset; the final partial
    window is zero-padded and its predictions truncated to the true length."""
    t = len(seq)
    outputs = []
    for start in range(0, t, seq_len):
        length = min(seq_len, t - start)
        frames = seq.frames[start:start + length]
        lms = seq.landmarks[start:start + length]
        if length < seq_len:
            pad = seq_len - length
            frames = np.concatenate([frames, np.zeros((pad,) + frames.shape[1:])])
            lms = np.concatenate([lms, np.zeros((pad, lms.shape[1]))])
        out = forward(model, frames[None],
                      lms[None] if model.config.use_landmarks else None,
                      train=False)
        outputs.append(out.data[0, :length])
    return np.concatenate(outputs)


def evaluate(model: ModelInstance, dataset: AffectDataset, mode: str = "concatenated",
             seq_len: int = 80) -> EvaluationReport:
    """Pure function of (parameters, dataset, mode).  Degenerate CCC/Pearson
    on a collapsed model is reported as 0 with a flag, never raised."""
    if mode not in ("per-video", "concatenated"):
        raise ValueError("mode must be 'per-video' or 'concatenated'")
    if model.config.head != REGRESSION_HEAD:
        raise ValueError("evaluation requires the regression head")
    if not dataset.sequences:
        raise ValueError("evaluate on empty dataset")

    per_video: dict[str, VideoScores] = {}
    predictions: dict[str, np.ndarray] = {}
    all_pv, all_pa, all_av, all_aa = [], [], [], []
    for seq in dataset.sequences:
        preds = predict_video(model, seq, seq_len)
        predictions[seq.video_id] = preds
        pv, pa = preds[:, 0], preds[:, 1]
        ccc_v, d1 = _safe_ccc(pv, seq.valence)
        ccc_a, d2 = _safe_ccc(pa, seq.arousal)
        pe_v, d3 = _safe_pearson(pv, seq.valence)
        pe_a, d4 = _safe_pearson(pa, seq.arousal)
        per_video[seq.video_id] = VideoScores(
            ccc_v, ccc_a, pe_v, pe_a,
            metrics.mse(pv, seq.valence), metrics.mse(pa, seq.arousal),
            degenerate=d1 or d2 or d3 or d4)
        all_pv.append(pv)
        all_pa.append(pa)
        all_av.append(seq.valence)
        all_aa.append(seq.arousal)

    cat_pv, cat_pa = np.concatenate(all_pv), np.concatenate(all_pa)
    cat_av, cat_aa = np.concatenate(all_av), np.concatenate(all_aa)
    concat_ccc_v, _ = _safe_ccc(cat_pv, cat_av)
    concat_ccc_a, _ = _safe_ccc(cat_pa, cat_aa)
    if mode == "concatenated":
        mean_ccc = (concat_ccc_v + concat_ccc_a) / 2.0
    else:
        mean_v = float(np.mean([s.ccc_v for s in per_video.values()]))
        mean_a = float(np.mean([s.ccc_a for s in per_video.values()]))
        mean_ccc = (mean_v + mean_a) / 2.0

    grid = [np.linspace(-1.0, 1.0, 21)] * 2
    pred_hist, _, _ = np.histogram2d(np.clip(cat_pv, -1, 1), np.clip(cat_pa, -1, 1), bins=grid)
    ann_hist, _, _ = np.histogram2d(cat_av, cat_aa, bins=grid)

    return EvaluationReport(
        mode=mode,
        per_video=per_video,
        concat_ccc_v=concat_ccc_v,
        concat_ccc_a=concat_ccc_a,
        concat_mse_v=metrics.mse(cat_pv, cat_av),
        concat_mse_a=metrics.mse(cat_pa, cat_aa),
        mean_ccc=mean_ccc,
        pred_hist=pred_hist,
        ann_hist=ann_hist,
        predictions=predictions,
    )


# ------------------------------------------------------------------ finetuning

def rescale_labels(values, src_min: float = -10.0, src_max: float = 10.0) -> np.ndarray:
    """Affine rescale of labels from [src_min, src_max] to [-1, 1]."""
    values = np.asarray(values, dtype=np.float64)
    return 2.0 * (values - src_min) / (src_max - src_min) - 1.0


def finetune(checkpoint_path, dataset: AffectDataset, cfg: TrainConfig,
             freeze: str = "none") -> TrainResult:
    """Continue training from a saved checkpoint; ``freeze='backbone'`` keeps
    the conv parameters bit-identical."""
    model = load_model(checkpoint_path)
    return train(model, dataset, cfg, freeze=freeze)


# ----------------------------------------------------------------- file output

def write_predictions(path, preds: np.ndarray) -> None:
    """Per-video prediction dump: one "valence,arousal" pair per frame."""
    lines = [f"{float(v)!r},{float(a)!r}" for v, a in np.asarray(preds)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path) -> np.ndarray:
    rows = [[float(x) for x in line.split(",")]
            for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    return np.asarray(rows, dtype=np.float64)


def write_loss_curve(path, curve) -> None:
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(curve)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
