"""Rejection curves and their summary metrics on a toy prediction set."""

import numpy as np

from eauq import evaluation as ev

# four predictions, one wrong; the wrong one is the most uncertain
preds = [
    ev.ScoredPrediction("a", 0.2, 1, 0.9),
    ev.ScoredPrediction("b", 0.8, 1, 0.1),
    ev.ScoredPrediction("c", 0.7, 1, 0.2),
    ev.ScoredPrediction("d", 0.1, 0, 0.3),
]
curve = ev.rejection_curve(preds)
print("points:", curve.points)
print("AAC %.4f, acc@25%% %.2f, fraction to 99%%: %s" % (
    ev.aac(curve), ev.accuracy_at_discard(curve, 0.25), ev.fraction_to_accuracy(curve)))

# the same set with the scores reversed
bad = ev.curve_from_arrays([p.correct for p in preds], [-p.uncertainty for p in preds], [p.example_id for p in preds])
print("reversed scores AAC %.4f" % ev.aac(bad))

# oracle scores against random scores on a larger set
rng = np.random.default_rng(0)
correct = rng.random(500) < 0.9
oracle = ev.curve_from_arrays(correct, (~correct).astype(float))
noise = ev.curve_from_arrays(correct, rng.random(500))
print("oracle AAC %.4f  random AAC %.4f  base error %.3f" % (ev.aac(oracle), ev.aac(noise), 1 - correct.mean()))

ev.render_svg({"oracle": oracle, "random": noise}, "demo_curves.svg")
print("wrote demo_curves.svg")
