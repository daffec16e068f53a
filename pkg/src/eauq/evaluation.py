"""Accuracy-rejection curves and the scalar metrics derived from them.

Predictions are rejected most-uncertain first. Point ``m`` of a curve is the
accuracy on the ``N - m`` examples that remain after ``m`` rejections, for
``m = 0 .. N-1``. Equal uncertainties are broken by ascending example id so
that curves are reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ._io import atomic_write_text

__all__ = [
    "TIE_POLICY",
    "ScoredPrediction",
    "RejectionCurve",
    "MetricsReport",
    "MethodRun",
    "MethodSummary",
    "AggregationError",
    "rejection_order",
    "curve_from_arrays",
    "rejection_curve",
    "aac",
    "accuracy_at_discard",
    "fraction_to_accuracy",
    "metrics",
    "compare_report",
    "curve_csv",
    "render_svg",
]

TIE_POLICY = "uncertainty descending, ties by example_id ascending"


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredPrediction:
    example_id: str
    predicted_prob: float
    label: int
    uncertainty: float

    @property
    def predicted_class(self) -> int:
        return int(self.predicted_prob >= 0.5)

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.label


@dataclass(frozen=True, eq=False)
class RejectionCurve:
    rejected_fraction: np.ndarray
    accuracy: np.ndarray
    n_total: int
    rejection_ids: tuple[str, ...] = ()
    tie_policy: str = TIE_POLICY

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.rejected_fraction.tolist(), self.accuracy.tolist()))


def rejection_order(uncertainty, ids) -> np.ndarray:
    """Indices in rejection order: most uncertain first, ties by id."""
    u = np.asarray(uncertainty, dtype=np.float64)
    return np.lexsort((np.asarray(ids), -u))


def curve_from_arrays(correct, uncertainty, ids=None) -> RejectionCurve:
    """Rejection curve from per-example correctness and uncertainty.

    ``ids`` defaults to the zero-padded positions, which makes ties resolve
    by position.
    """
    correct = np.asarray(correct, dtype=bool)
    u = np.asarray(uncertainty, dtype=np.float64)
    n = correct.shape[0]
    if n == 0:
        raise ValueError("cannot build a rejection curve from no predictions")
    if u.shape != (n,):
        raise ValueError("need one uncertainty per prediction")
    if not np.all(np.isfinite(u)):
        raise ValueError("uncertainties must be finite")
    if ids is None:
        width = len(str(n))
        ids = [str(i).zfill(width) for i in range(n)]
    order = rejection_order(u, ids)
    kept_correct = np.cumsum(correct[order][::-1])[::-1]
    m = np.arange(n)
    accuracy = kept_correct / (n - m)
    id_list = [ids[i] for i in order]
    return RejectionCurve(m / n, accuracy, n, tuple(str(i) for i in id_list))


def rejection_curve(preds: Sequence[ScoredPrediction]) -> RejectionCurve:
    """Curve for a list of scored predictions (class 1 iff ``p >= 0.5``)."""
    preds = list(preds)
    if not preds:
        raise ValueError("cannot build a rejection curve from no predictions")
    return curve_from_arrays(
        [p.correct for p in preds],
        [p.uncertainty for p in preds],
        [p.example_id for p in preds],
    )


def aac(curve: RejectionCurve) -> float:
    """Area above the curve: mean gap to perfect accuracy over rejection steps."""
    return float(np.sum(1.0 - curve.accuracy) / curve.n_total)


def _discard_index(curve: RejectionCurve, fraction: float) -> int:
    if not 0.0 <= fraction < 1.0:
        raise ValueError("discard fraction must lie in [0, 1)")
    # The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
    return min(math.floor(fraction * curve.n_total + 1e-9), curve.n_total - 1)


def accuracy_at_discard(curve: RejectionCurve, fraction: float = 0.10) -> float:
    return float(curve.accuracy[_discard_index(curve, fraction)])


def fraction_to_accuracy(curve: RejectionCurve, target: float = 0.99) -> float | None:
    """Smallest rejected fraction reaching ``target`` accuracy, or ``None`` if never reached."""
    if not 0.0 < target <= 1.0:
        raise ValueError("target accuracy must lie in (0, 1]")
    hits = np.flatnonzero(curve.accuracy >= target)
    return float(curve.rejected_fraction[hits[0]]) if hits.size else None


@dataclass(frozen=True)
class MetricsReport:
    estimator: str
    aac: float
    acc_at_10pct_discard: float
    fraction_to_99pct: float | None
    seed: int | None
    n_test: int

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["fraction_to_99pct"] is None:
            d["fraction_to_99pct"] = "unreachable"
        return d


def metrics(curve: RejectionCurve, estimator: str, seed: int | None = None) -> MetricsReport:
    return MetricsReport(
        estimator=estimator,
        aac=aac(curve),
        acc_at_10pct_discard=accuracy_at_discard(curve, 0.10),
        fraction_to_99pct=fraction_to_accuracy(curve, 0.99),
        seed=seed,
        n_test=curve.n_total,
    )


@dataclass(frozen=True, eq=False)
class MethodRun:
    """One estimator evaluated on the test pool under one seed."""

    method: str
    seed: int
    curve: RejectionCurve
    test_ids: frozenset

    @property
    def report(self) -> MetricsReport:
        return metrics(self.curve, self.method, self.seed)


@dataclass(frozen=True, eq=False)
class MethodSummary:
    method: str
    n_seeds: int
    mean_aac: float
    mean_acc_at_10pct_discard: float
    mean_fraction_to_99pct: float | None
    n_unreachable_99pct: int
    mean_curve: RejectionCurve

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_seeds": self.n_seeds,
            "mean_aac": self.mean_aac,
            "mean_acc_at_10pct_discard": self.mean_acc_at_10pct_discard,
            "mean_fraction_to_99pct": (
                "unreachable" if self.mean_fraction_to_99pct is None else self.mean_fraction_to_99pct
            ),
            "n_unreachable_99pct": self.n_unreachable_99pct,
        }


def compare_report(runs: Sequence[MethodRun]) -> list[MethodSummary]:
    """Average metrics and curves per method over seeds.

    All runs must share one test pool. The mean fraction-to-99% is taken over
    the seeds where 99% was reached; the count of other seeds is reported
    separately.
    """
    runs = list(runs)
    if not runs:
        raise AggregationError("no runs to aggregate")
    pool = runs[0].test_ids
    for r in runs[1:]:
        if r.test_ids != pool:
            raise AggregationError(
                f"{r.method} seed {r.seed} was evaluated on a different test set than "
                f"{runs[0].method} seed {runs[0].seed}"
            )
    by_method: dict[str, list[MethodRun]] = {}
    for r in runs:
        by_method.setdefault(r.method, []).append(r)

    summaries = []
    for method, group in by_method.items():
        reports = [r.report for r in group]
        reached = [m.fraction_to_99pct for m in reports if m.fraction_to_99pct is not None]
        acc = np.mean([r.curve.accuracy for r in group], axis=0)
        mean_curve = RejectionCurve(group[0].curve.rejected_fraction.copy(), acc, group[0].curve.n_total)
        summaries.append(MethodSummary(
            method=method,
            n_seeds=len(group),
            mean_aac=float(np.mean([m.aac for m in reports])),
            mean_acc_at_10pct_discard=float(np.mean([m.acc_at_10pct_discard for m in reports])),
            mean_fraction_to_99pct=float(np.mean(reached)) if reached else None,
            n_unreachable_99pct=len(reports) - len(reached),
            mean_curve=mean_curve,
        ))
    return summaries


def curve_csv(curve: RejectionCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rejected_fraction", "accuracy"])
    for f, a in curve.points:
        w.writerow([repr(f), repr(a)])
    return buf.getvalue()


def render_svg(curves: dict[str, RejectionCurve], path, title: str = "Accuracy-rejection curves") -> None:
    """Overlay rejection curves in one SVG figure."""
    import matplotlib
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7, 5))
    ax = fig.add_subplot()
    for name, curve in curves.items():
        ax.plot(curve.rejected_fraction, curve.accuracy, label=name, linewidth=1.2)
    ax.set_xlabel("Fraction of rejected samples")
    ax.set_ylabel("Accuracy")
    ax.set_xlim(0, 1)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, loc="lower right")
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "eauq", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    atomic_write_text(path, buf.getvalue())


def report_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
