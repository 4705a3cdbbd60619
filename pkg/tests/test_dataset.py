"""Quadrant statistics, duplication-based balancing, batching, manifest I/O."""

import numpy as np
import pytest

from affwild import dataset as ds
from affwild.dataset import (AffectDataset, BalanceError, LabeledSequence,
                             balance, batch_sequences, enumerate_windows,
                             load_manifest, quadrant_index, quadrant_stats,
                             save_dataset)

from conftest import quadrant_video, signal_video


def tiny_seq(video_id, valence, arousal, seed=0):
    rng = np.random.default_rng(seed)
    t = len(valence)
    return LabeledSequence(video_id,
                           np.clip(rng.normal(0, 0.1, (t, 4, 4, 3)), -1, 1),
                           rng.uniform(0, 1, (t, 4)),
                           np.asarray(valence, float),
                           np.asarray(arousal, float))


class TestQuadrantStats:
    def test_all_positive(self):
        data = AffectDataset((tiny_seq("v", [0.5] * 6, [0.5] * 6),))
        assert quadrant_stats(data).proportions == (1.0, 0.0, 0.0, 0.0)

    def test_one_per_quadrant(self):
        data = AffectDataset((tiny_seq("v", [0.5, -0.5, 0.5, -0.5],
                                       [0.5, 0.5, -0.5, -0.5]),))
        assert quadrant_stats(data).proportions == (0.25,) * 4

    def test_boundary_counts_positive(self):
        idx = quadrant_index(np.array([0.0, 0.0, -0.1]), np.array([0.0, -0.1, 0.0]))
        assert list(idx) == [0, 2, 1]

    def test_counting_oracle(self, rng):
        valence = rng.uniform(-1, 1, 1000)
        arousal = rng.uniform(-1, 1, 1000)
        data = AffectDataset((tiny_seq("v", valence, arousal),))
        stats = quadrant_stats(data)
        expected = [0, 0, 0, 0]
        for v, a in zip(valence, arousal):
            expected[(1 if v < 0 else 0) + (2 if a < 0 else 0)] += 1
        assert list(stats.counts) == expected
        assert sum(stats.proportions) == pytest.approx(1.0, abs=1e-9)


class TestBalance:
    def test_already_at_targets_unchanged(self):
        data = AffectDataset((tiny_seq("v", [0.5, -0.5], [0.5, 0.5]),))
        out = balance(data, (0.5, 0.5, 0.0, 0.0), segment_len=1,
                      tolerance=0.01, seed=0)
        assert out.sequences == data.sequences

    def test_two_quadrant_toy(self, rng):
        runs = [(0, 900), (1, 100)]
        data = AffectDataset((quadrant_video("v", runs, seed=3),))
        out = balance(data, (0.5, 0.5, 0.0, 0.0), segment_len=20,
                      tolerance=0.02, seed=7)
        props = quadrant_stats(out).proportions
        assert abs(props[0] - 0.5) <= 0.02 and abs(props[1] - 0.5) <= 0.02
        # originals preserved, untouched
        assert out.sequences[:1] == data.sequences

    def test_unreachable_target(self):
        data = AffectDataset((tiny_seq("v", [0.5, 0.5], [0.5, 0.5]),))
        with pytest.raises(BalanceError):
            balance(data, (0.25, 0.25, 0.25, 0.25), segment_len=1,
                    tolerance=0.01, seed=0)

    def test_cap_reports_achieved(self):
        data = AffectDataset((quadrant_video("v", [(0, 90), (1, 10)], seed=1),))
        with pytest.raises(BalanceError) as exc:
            balance(data, (0.5, 0.5, 0.0, 0.0), segment_len=10,
                    tolerance=0.001, seed=0, max_iters=1)
        assert exc.value.achieved is not None

    def test_duplicates_never_modify_originals(self, rng):
        runs = [(0, 300), (1, 80), (2, 60), (3, 40)]
        data = AffectDataset((quadrant_video("v", runs, seed=5),))
        before = [s.frames.copy() for s in data.sequences]
        out = balance(data, (0.43, 0.24, 0.19, 0.14), segment_len=20,
                      tolerance=0.02, seed=1)
        for seq, frames in zip(data.sequences, before):
            assert np.array_equal(seq.frames, frames)
        assert set(id(s) for s in data.sequences) <= set(id(s) for s in out.sequences)


class TestBatching:
    def test_two_windows_from_160_frames(self):
        data = AffectDataset((signal_video("v", 160, hwc=(4, 4, 3), landmark_dim=4),))
        batches = list(batch_sequences(data, seq_len=80, batch_size=4, seed=0))
        assert sum(b.frames.shape[0] for b in batches) == 2

    def test_too_short_video_errors(self):
        data = AffectDataset((signal_video("v", 79, hwc=(4, 4, 3), landmark_dim=4),))
        with pytest.raises(ValueError):
            list(batch_sequences(data, seq_len=80, batch_size=4, seed=0))

    def test_enumeration_oracle(self):
        data = AffectDataset((
            signal_video("v1", 25, hwc=(4, 4, 3), landmark_dim=4, seed=1),
            signal_video("v2", 19, hwc=(4, 4, 3), landmark_dim=4, seed=2),
            signal_video("v3", 7, hwc=(4, 4, 3), landmark_dim=4, seed=3),
        ))
        seq_len = 8
        expected = set()
        for si, seq in enumerate(data.sequences):
            expected.update((si, s) for s in range(0, len(seq) - seq_len + 1, seq_len))
        assert set(enumerate_windows(data, seq_len)) == expected

        emitted = []
        for batch in batch_sequences(data, seq_len, batch_size=2, seed=5):
            for i in range(batch.frames.shape[0]):
                emitted.append(batch.valence[i].tobytes())
        oracle = [data.sequences[si].valence[s:s + seq_len].tobytes()
                  for si, s in sorted(expected)]
        assert sorted(emitted) == sorted(oracle)

    def test_seeded_shuffle_deterministic(self):
        data = AffectDataset((signal_video("v", 64, hwc=(4, 4, 3), landmark_dim=4),))
        def epoch(seed):
            return [b.valence.tobytes() for b in
                    batch_sequences(data, 8, 2, seed)]
        assert epoch(3) == epoch(3)
        assert epoch(3) != epoch(4)


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        data = AffectDataset((
            signal_video("vidA", 12, hwc=(8, 8, 3), landmark_dim=6, seed=1),
            signal_video("vidB", 9, hwc=(8, 8, 3), landmark_dim=6, seed=2),
        ))
        manifest = save_dataset(data, tmp_path / "out")
        loaded = load_manifest(manifest)
        assert [s.video_id for s in loaded.sequences] == ["vidA", "vidB"]
        for orig, back in zip(data.sequences, loaded.sequences):
            assert np.array_equal(back.valence, orig.valence)
            assert np.array_equal(back.arousal, orig.arousal)
            # frames survive 8-bit quantization
            assert np.max(np.abs(back.frames - orig.frames)) <= 1.0 / 127.5
            assert np.allclose(back.landmarks, orig.landmarks, atol=1e-9)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("wrong\n")
        with pytest.raises(ValueError):
            load_manifest(p)

    def test_sequence_validation(self, rng):
        with pytest.raises(ValueError):
            LabeledSequence("v", rng.uniform(-1, 1, (3, 2, 2, 3)),
                            rng.uniform(0, 1, (2, 4)),
                            np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            LabeledSequence("v", rng.uniform(-1, 1, (3, 2, 2, 3)),
                            rng.uniform(0, 1, (3, 4)),
                            np.array([0.0, 2.0, 0.0]), np.zeros(3))
