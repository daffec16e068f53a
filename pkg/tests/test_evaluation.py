import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eauq import evaluation as ev
from eauq.evaluation import MethodRun, RejectionCurve, ScoredPrediction


def brute_force_aac(correct, uncertainty, ids):
    """AAC straight from the definition with plain Python sorting."""
    rows = sorted(zip(uncertainty, ids, correct), key=lambda r: (-r[0], r[1]))
    n = len(rows)
    total = 0.0
    for m in range(n):
        kept = rows[m:]
        total += 1.0 - sum(r[2] for r in kept) / len(kept)
    return total / n


def preds_from(correct, uncertainty):
    return [
        ScoredPrediction(f"x{i}", 0.9, 1 if c else 0, u)
        for i, (c, u) in enumerate(zip(correct, uncertainty))
    ]


class TestCurve:
    def test_wrong_prediction_rejected_first(self):
        curve = ev.rejection_curve(preds_from([False, True, True, True], [0.9, 0.1, 0.2, 0.3]))
        np.testing.assert_array_equal(curve.accuracy, [0.75, 1.0, 1.0, 1.0])
        np.testing.assert_array_equal(curve.rejected_fraction, [0.0, 0.25, 0.5, 0.75])
        assert ev.aac(curve) == 0.0625
        assert ev.accuracy_at_discard(curve, 0.25) == 1.0
        assert ev.fraction_to_accuracy(curve, 0.99) == 0.25
        assert curve.rejection_ids[0] == "x0"

    def test_all_correct(self):
        curve = ev.curve_from_arrays([True] * 5, np.arange(5.0))
        assert ev.aac(curve) == 0.0
        assert ev.fraction_to_accuracy(curve) == 0.0

    def test_all_wrong_is_unreachable(self):
        curve = ev.curve_from_arrays([False] * 5, np.arange(5.0))
        assert ev.aac(curve) == 1.0
        assert ev.fraction_to_accuracy(curve) is None
        assert ev.metrics(curve, "X").to_dict()["fraction_to_99pct"] == "unreachable"

    def test_predicted_class_threshold(self):
        assert ScoredPrediction("a", 0.5, 1, 0.0).correct
        assert not ScoredPrediction("a", 0.4999, 1, 0.0).correct

    def test_ties_broken_by_id(self):
        curve = ev.curve_from_arrays([True, False, True], [0.5, 0.5, 0.5], ids=["c", "a", "b"])
        assert curve.rejection_ids == ("a", "b", "c")
        np.testing.assert_allclose(curve.accuracy, [2 / 3, 1.0, 1.0])

    def test_constant_scores_follow_id_order(self):
        correct = [True, False, False, True]
        a = ev.curve_from_arrays(correct, np.zeros(4), ids=["d", "c", "b", "a"])
        assert a.rejection_ids == ("a", "b", "c", "d")

    def test_ten_percent_uses_floor(self):
        curve = ev.curve_from_arrays([True] * 95 + [False] * 5, np.linspace(1, 0, 100))
        # 29% of 100 must index point 29, not 28
        assert ev._discard_index(curve, 0.29) == 29
        assert ev._discard_index(curve, 0.10) == 10

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            ev.curve_from_arrays([], [])
        with pytest.raises(ValueError):
            ev.curve_from_arrays([True], [np.nan])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 6)), min_size=1, max_size=30))
    def test_matches_brute_force(self, rows):
        correct = [r[0] for r in rows]
        u = [r[1] / 6 for r in rows]
        ids = [f"{i:03d}" for i in range(len(rows))]
        curve = ev.curve_from_arrays(correct, u, ids)
        assert ev.aac(curve) == pytest.approx(brute_force_aac(correct, u, ids), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), min_size=1, max_size=30))
    def test_invariant_under_monotone_transform(self, rows):
        correct = [r[0] for r in rows]
        u = np.array([r[1] for r in rows])
        a = ev.curve_from_arrays(correct, u)
        b = ev.curve_from_arrays(correct, 3 * u**3 + 1)
        # strict monotone maps can merge float-distinct values only through rounding
        if len(np.unique(u)) == len(np.unique(3 * u**3 + 1)):
            np.testing.assert_array_equal(a.accuracy, b.accuracy)


def fixed_curve(acc):
    acc = np.asarray(acc, dtype=float)
    return RejectionCurve(np.arange(len(acc)) / len(acc), acc, len(acc))


POOL = frozenset("abcde")


class TestCompare:
    def test_mean_over_seeds(self):
        runs = [
            MethodRun("M", 0, fixed_curve([0.9, 1, 1, 1, 1]), POOL),
            MethodRun("M", 1, fixed_curve([0.9, 0.9, 1, 1, 1]), POOL),
        ]
        assert [r.report.aac for r in runs] == pytest.approx([0.02, 0.04], abs=1e-15)
        (s,) = ev.compare_report(runs)
        assert s.mean_aac == pytest.approx(0.03, abs=1e-15)
        assert s.n_seeds == 2
        np.testing.assert_allclose(s.mean_curve.accuracy, [0.9, 0.95, 1, 1, 1])

    def test_unreachable_counted_separately(self):
        runs = [
            MethodRun("M", 0, fixed_curve([0.5, 1, 1, 1]), POOL),
            MethodRun("M", 1, fixed_curve([0.5, 0.5, 0.5, 0.5]), POOL),
        ]
        (s,) = ev.compare_report(runs)
        assert s.mean_fraction_to_99pct == 0.25
        assert s.n_unreachable_99pct == 1
        all_bad = ev.compare_report([runs[1]])[0]
        assert all_bad.to_dict()["mean_fraction_to_99pct"] == "unreachable"

    def test_different_test_sets_rejected(self):
        runs = [
            MethodRun("A", 0, fixed_curve([1, 1, 1, 1, 1]), POOL),
            MethodRun("B", 0, fixed_curve([1, 1, 1, 1, 1]), frozenset("abcdf")),
        ]
        with pytest.raises(ev.AggregationError, match="different test set"):
            ev.compare_report(runs)

    def test_methods_kept_in_first_seen_order(self):
        runs = [MethodRun(m, 0, fixed_curve([1, 1]), POOL) for m in ("Z", "A", "M")]
        assert [s.method for s in ev.compare_report(runs)] == ["Z", "A", "M"]


class TestOutputs:
    def test_curve_csv(self):
        text = ev.curve_csv(fixed_curve([0.75, 1, 1, 1]))
        assert text.splitlines() == ["rejected_fraction,accuracy", "0.0,0.75", "0.25,1.0", "0.5,1.0", "0.75,1.0"]

    def test_svg_is_deterministic(self, tmp_path):
        curves = {"A": fixed_curve([0.8, 0.9, 1.0]), "B": fixed_curve([0.7, 0.8, 1.0])}
        ev.render_svg(curves, tmp_path / "a.svg")
        ev.render_svg(curves, tmp_path / "b.svg")
        a = (tmp_path / "a.svg").read_bytes()
        assert a.startswith(b"<?xml") and b"<svg" in a
        assert a == (tmp_path / "b.svg").read_bytes()

    def test_report_json_sorted(self):
        assert ev.report_json({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'
