"""Annotation post-processing: resampling, MAC statistics, final labels,
CDF curves, CCA, and the trace/label file formats."""

import numpy as np
import pytest

from affwild import annotations as ann
from affwild.annotations import (AnnotationTrace, TraceFormatError,
                                 VideoAnnotations, cca_first, final_labels,
                                 inter_annotator_correlations, mac, mac_cdf,
                                 read_labels, read_trace, resample,
                                 write_labels, write_trace)
from affwild.metrics import DegenerateSeriesError, pearson


def trace_from_values(annotator, dim, times, values):
    return AnnotationTrace(annotator, dim, tuple(zip(times, values)))


def random_trace(annotator, dim, rng, duration=2.0, n=12):
    times = np.sort(rng.uniform(0, duration, n))
    times += np.arange(n) * 1e-6  # enforce strict monotonicity
    values = rng.uniform(-1, 1, n)
    return trace_from_values(annotator, dim, times, values)


def brute_force_resample(trace, frame_rate, frame_count):
    """Exhaustive nearest-neighbor scan; midpoint ties to the earlier sample."""
    out = np.empty(frame_count)
    times, values = trace.times, trace.values
    for f in range(frame_count):
        ft = f / frame_rate
        dists = np.abs(times - ft)
        out[f] = values[np.argmin(dists)]  # argmin keeps the first (earlier)
    return out


class TestResample:
    def test_constant_extension(self):
        trace = trace_from_values("a", "valence", [0.0], [0.5])
        assert np.array_equal(resample(trace, 25, 3), [0.5, 0.5, 0.5])

    def test_midpoint_tie_takes_earlier(self):
        trace = trace_from_values("a", "valence", [0.0, 1.0], [0.0, 1.0])
        # frames at t = 0, 0.5, 1, 1.5; the 0.5 midpoint resolves to t=0
        assert np.array_equal(resample(trace, 2, 4), [0.0, 0.0, 1.0, 1.0])

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            trace = random_trace("a", "valence", rng, duration=0.8, n=7)
            got = resample(trace, 25, 20)
            assert np.array_equal(got, brute_force_resample(trace, 25, 20))

    def test_idempotent_on_frame_aligned(self, rng):
        values = rng.uniform(-1, 1, 10)
        trace = trace_from_values("a", "arousal", np.arange(10) / 25.0, values)
        assert np.array_equal(resample(trace, 25, 10), values)

    def test_validation(self):
        with pytest.raises(ValueError):
            AnnotationTrace("a", "valence", ())
        with pytest.raises(ValueError):
            trace_from_values("a", "valence", [0.0, 0.0], [0.1, 0.2])
        with pytest.raises(ValueError):
            trace_from_values("a", "valence", [0.0], [1.5])


def make_video(traces, frame_count=50, frame_rate=25.0, selected=None, landmarks=None):
    return VideoAnnotations("vid", frame_rate, frame_count, traces,
                            selected or {}, landmarks)


class TestInterAnnotator:
    def test_identical_pair(self, rng):
        t1 = random_trace("a", "valence", rng)
        t2 = AnnotationTrace("b", "valence", t1.samples)
        ids, matrix, excluded = inter_annotator_correlations(make_video([t1, t2]), "valence")
        assert ids == ["a", "b"]
        assert matrix[0, 1] == pytest.approx(1.0)
        assert not excluded

    def test_negated_pair(self):
        times = np.arange(6) / 25.0
        values = np.array([-0.6, -0.2, 0.0, 0.2, 0.4, 0.2])
        t1 = trace_from_values("a", "valence", times, values)
        t2 = trace_from_values("b", "valence", times, -values)
        _, matrix, _ = inter_annotator_correlations(make_video([t1, t2], 6), "valence")
        assert matrix[0, 1] == pytest.approx(-1.0)

    def test_matches_pairwise_oracle(self, rng):
        traces = [random_trace(f"a{i}", "valence", rng) for i in range(4)]
        video = make_video(traces)
        ids, matrix, _ = inter_annotator_correlations(video, "valence")
        series = [resample(t, video.frame_rate, video.frame_count) for t in traces]
        for i in range(4):
            for j in range(4):
                if i == j:
                    assert np.isnan(matrix[i, j])
                else:
                    assert matrix[i, j] == pytest.approx(
                        pearson(series[i], series[j]), abs=1e-12)

    def test_constant_trace_excluded(self, rng):
        t1 = random_trace("a", "valence", rng)
        t2 = trace_from_values("b", "valence", [0.0], [0.3])
        t3 = random_trace("c", "valence", rng)
        _, matrix, excluded = inter_annotator_correlations(
            make_video([t1, t2, t3]), "valence")
        assert ("a", "b") in excluded and ("b", "c") in excluded
        assert np.isfinite(matrix[0, 2])


class TestMac:
    def test_all_identical(self, rng):
        base = random_trace("a", "valence", rng)
        traces = [AnnotationTrace(f"a{i}", "valence", base.samples) for i in range(4)]
        video = make_video(traces, selected={"valence": ["a0", "a1"]})
        report = mac(video, "valence")
        assert report.mac_a == pytest.approx(1.0)
        assert report.mac_s == pytest.approx(1.0)

    def test_selected_identical_among_noisy(self, rng):
        base = random_trace("s", "valence", rng)
        traces = [AnnotationTrace("s1", "valence", base.samples),
                  AnnotationTrace("s2", "valence", base.samples)]
        traces += [random_trace(f"n{i}", "valence", rng, n=15) for i in range(4)]
        video = make_video(traces, selected={"valence": ["s1", "s2"]})
        report = mac(video, "valence")
        assert report.mac_s == pytest.approx(1.0)
        assert report.mac_s > report.mac_a

    def test_matches_brute_force(self, rng):
        traces = [random_trace(f"a{i}", "valence", rng, n=20) for i in range(6)]
        selected = ["a1", "a3", "a4"]
        video = make_video(traces, selected={"valence": selected})
        report = mac(video, "valence")

        ids, matrix, _ = inter_annotator_correlations(video, "valence")
        per = {a: np.mean([matrix[i, j] for j in range(6) if j != i])
               for i, a in enumerate(ids)}
        assert report.mac_a == pytest.approx(np.mean(list(per.values())), abs=1e-12)
        idx = {a: i for i, a in enumerate(ids)}
        sel_rows = [idx[a] for a in selected]
        sel_avgs = [np.mean([matrix[i, j] for j in sel_rows if j != i])
                    for i in sel_rows]
        assert report.mac_s == pytest.approx(np.mean(sel_avgs), abs=1e-12)
        for a, v in per.items():
            assert report.per_annotator[a] == pytest.approx(v, abs=1e-12)

    def test_mac_s_absent_without_selection(self, rng):
        video = make_video([random_trace(f"a{i}", "valence", rng) for i in range(3)])
        assert mac(video, "valence").mac_s is None

    def test_reorder_invariance(self, rng):
        traces = [random_trace(f"a{i}", "valence", rng) for i in range(5)]
        v1 = make_video(list(traces))
        v2 = make_video(list(reversed(traces)))
        assert mac(v1, "valence").mac_a == pytest.approx(
            mac(v2, "valence").mac_a, abs=1e-12)


class TestFinalLabels:
    def test_single_selected_equals_resample(self, rng):
        trace = random_trace("a", "valence", rng)
        video = make_video([trace], selected={"valence": ["a"]})
        assert np.array_equal(final_labels(video, "valence"),
                              resample(trace, video.frame_rate, video.frame_count))

    def test_mean_of_constants(self):
        t1 = trace_from_values("a", "arousal", [0.0], [0.2])
        t2 = trace_from_values("b", "arousal", [0.0], [0.6])
        video = make_video([t1, t2], selected={"arousal": ["a", "b"]})
        assert np.allclose(final_labels(video, "arousal"), 0.4)

    def test_elementwise_mean_oracle(self, rng):
        traces = [random_trace(f"a{i}", "valence", rng) for i in range(3)]
        video = make_video(traces, selected={"valence": ["a0", "a1", "a2"]})
        expected = np.mean([resample(t, 25.0, 50) for t in traces], axis=0)
        assert np.allclose(final_labels(video, "valence"), expected, atol=1e-15)

    def test_negation_commutes(self, rng):
        traces = [random_trace(f"a{i}", "valence", rng) for i in range(2)]
        video = make_video(traces, selected={"valence": ["a0", "a1"]})
        negated = [AnnotationTrace(t.annotator_id, t.dimension,
                                   tuple((ts, -v) for ts, v in t.samples))
                   for t in traces]
        nvideo = make_video(negated, selected={"valence": ["a0", "a1"]})
        assert np.allclose(final_labels(nvideo, "valence"),
                           -final_labels(video, "valence"), atol=1e-15)

    def test_requires_selection(self, rng):
        video = make_video([random_trace("a", "valence", rng)])
        with pytest.raises(ValueError):
            final_labels(video, "valence")


class TestMacCdf:
    def test_single_value(self):
        assert np.array_equal(mac_cdf([0.7], [0.5, 0.7, 0.9]), [1.0, 1.0, 0.0])

    def test_half(self):
        assert mac_cdf([0.2, 0.4, 0.6, 0.8], [0.5])[0] == 0.5

    def test_counting_oracle_and_monotonicity(self, rng):
        values = rng.uniform(-1, 1, 50)
        grid = np.linspace(-1, 1, 21)
        curve = mac_cdf(values, grid)
        expected = [(values >= t).sum() / 50 for t in grid]
        assert np.array_equal(curve, expected)
        assert np.all(np.diff(curve) <= 0)
        assert np.all((curve >= 0) & (curve <= 1))


class TestCcaFirst:
    def test_annotation_equals_column(self, rng):
        x = rng.normal(size=(40, 6))
        assert cca_first(x, x[:, 2]) == pytest.approx(1.0, abs=1e-4)

    def test_orthogonal_by_construction(self):
        t = np.arange(8)
        x = np.stack([np.cos(2 * np.pi * t / 8), np.sin(2 * np.pi * t / 8)], axis=1)
        y = np.cos(2 * np.pi * 2 * t / 8)  # orthogonal harmonic
        assert cca_first(x, y) == pytest.approx(0.0, abs=1e-4)

    def test_regression_r_oracle(self, rng):
        x = rng.normal(size=(40, 6))
        y = x @ rng.normal(size=6) + 0.1 * rng.normal(size=40)
        xc = x - x.mean(axis=0)
        yc = y - y.mean()
        beta, *_ = np.linalg.lstsq(xc, yc, rcond=None)
        fitted = xc @ beta
        r = np.sqrt((fitted ** 2).sum() / (yc ** 2).sum())
        assert cca_first(x, y) == pytest.approx(r, abs=1e-4)

    def test_column_rescale_invariance(self, rng):
        x = rng.normal(size=(50, 4))
        y = x @ rng.normal(size=4) + 0.2 * rng.normal(size=50)
        scaled = x.copy()
        scaled[:, 1] = 3.5 * scaled[:, 1] + 2.0
        assert cca_first(scaled, y) == pytest.approx(cca_first(x, y), abs=1e-4)

    def test_constant_annotation(self, rng):
        with pytest.raises(DegenerateSeriesError):
            cca_first(rng.normal(size=(10, 3)), np.zeros(10))


class TestFileFormats:
    def test_trace_roundtrip(self, rng, tmp_path):
        trace = random_trace("annot-1", "arousal", rng)
        path = tmp_path / "t.trace"
        write_trace(path, trace, "video-9")
        loaded, video_id = read_trace(path)
        assert video_id == "video-9"
        assert loaded.annotator_id == "annot-1"
        assert loaded.dimension == "arousal"
        assert loaded.samples == trace.samples

    def test_trace_file_is_lf_utf8(self, rng, tmp_path):
        path = tmp_path / "t.trace"
        write_trace(path, random_trace("a", "valence", rng), "v")
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.decode("utf-8").startswith(f"{ann.TRACE_HEADER},a,v,valence\n")

    def test_labels_roundtrip(self, rng, tmp_path):
        labels = rng.uniform(-1, 1, 30)
        path = tmp_path / "v.labels"
        write_labels(path, labels, "vid", "valence")
        loaded, video_id, dim = read_labels(path)
        assert (video_id, dim) == ("vid", "valence")
        assert np.array_equal(loaded, labels)

    def test_malformed_trace_reports_line(self, tmp_path):
        path = tmp_path / "bad.trace"
        path.write_text("trace-v1,a,v,valence\n0.0,0.1\nnot-a-number\n")
        with pytest.raises(TraceFormatError) as exc:
            read_trace(path)
        assert exc.value.line_no == 3

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.trace"
        path.write_text("something-else\n")
        with pytest.raises(TraceFormatError):
            read_trace(path)
