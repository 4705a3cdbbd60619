"""Shared synthetic-data builders and a finite-difference helper."""

from __future__ import annotations

import numpy as np
import pytest

from affwild import dataset as ds
from affwild import tensor as T


def fd_check(fn, arrays, eps: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` maps a list of Tensors to a scalar Tensor; ``arrays`` are the
    leaf values (all treated as differentiable).
    """
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(tensors)
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn(tensors).item()
            flat[i] = orig - eps
            down = fn(tensors).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(numeric - gflat[i]) / max(abs(numeric) + abs(gflat[i]), 1e-8)
            worst = max(worst, err)
    return worst


def signal_video(video_id: str, frame_count: int, hwc=(32, 32, 3), landmark_dim=10,
                 phase: float = 0.0, noise: float = 0.05, seed: int = 0,
                 lag: int = 0, landmark_driven: bool = False) -> ds.LabeledSequence:
    """Synthetic video whose labels are smooth sinusoids.

    The label signal is painted into the frame channels (or into the landmark
    vector when ``landmark_driven``), optionally delayed by ``lag`` frames so
    that only a temporal model can recover the current label from the frames.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(frame_count)
    valence = 0.7 * np.sin(2 * np.pi * t / 80.0 + phase)
    arousal = 0.7 * np.sin(2 * np.pi * t / 50.0 + 1.0 + phase)
    h, w, c = hwc
    frames = np.zeros((frame_count, h, w, c))
    landmarks = np.tile(rng.uniform(0.2, 0.8, (1, landmark_dim)), (frame_count, 1))
    if landmark_driven:
        landmarks = rng.uniform(0.0, 1.0, (frame_count, landmark_dim))
        valence = np.clip(2.0 * (landmarks[:, 0] - 0.5), -1, 1)
        arousal = np.clip(2.0 * (landmarks[:, 1] - 0.5), -1, 1)
    else:
        vis_v = np.roll(valence, lag)
        vis_a = np.roll(arousal, lag)
        frames[:, :, :, 0] = vis_v[:, None, None]
        frames[:, :, :, 1 % c] = vis_a[:, None, None]
    frames = np.clip(frames + rng.normal(0.0, noise, frames.shape), -1.0, 1.0)
    return ds.LabeledSequence(video_id, frames, landmarks, valence, arousal)


def quadrant_video(video_id: str, quadrant_runs, hwc=(8, 8, 3), landmark_dim=4,
                   seed: int = 0) -> ds.LabeledSequence:
    """Video made of contiguous runs of frames, one (quadrant, length) pair per
    run.  Quadrant order: v+a+, v-a+, v+a-, v-a-."""
    rng = np.random.default_rng(seed)
    signs = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
    valence, arousal = [], []
    for quadrant, length in quadrant_runs:
        sv, sa = signs[quadrant]
        valence.extend(sv * rng.uniform(0.1, 0.9, length))
        arousal.extend(sa * rng.uniform(0.1, 0.9, length))
    t = len(valence)
    frames = np.clip(rng.normal(0, 0.1, (t, *hwc)), -1, 1)
    landmarks = rng.uniform(0, 1, (t, landmark_dim))
    return ds.LabeledSequence(video_id, frames, landmarks,
                              np.array(valence), np.array(arousal))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
