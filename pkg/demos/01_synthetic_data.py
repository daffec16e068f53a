"""Synthetic data with a known posterior and simulated expert votes."""

import numpy as np

from eauq import data
from eauq.estimators import expert_mp_batch, model_mp

cfg = data.SyntheticConfig(n_examples=2000, seed=0)
ds = data.synthesize(cfg)
print(f"{len(ds)} examples, {ds.n_features} features, {ds.votes.shape[1]} experts")

# votes live on the quarter grid
print("distinct vote values:", np.unique(ds.votes))

# mean vote tracks the generating posterior
means = ds.expert_means()
print("corr(mean vote, true p) = %.3f" % np.corrcoef(means, ds.true_prob)[0, 1])

# the aleatoric band holds most of the genuinely ambiguous examples
ambiguous = model_mp(ds.true_prob) > 0.25
print("examples with true MP > 0.25: %d" % ambiguous.sum())
print("expert MP on those: mean %.3f" % expert_mp_batch(ds.votes[ambiguous]).mean())
print("expert MP elsewhere: mean %.3f" % expert_mp_batch(ds.votes[~ambiguous]).mean())

# a single example and its panel
ex = ds.example(0)
print(ex.id, "label", ex.label, "votes", ex.expert_votes, "p = %.3f" % ex.true_positive_prob)

# splits: the test pool is shared by every run seed
tr, va, te = data.split(ds, data.SplitSpec(seed=0), run_seed=1)
print("train/val/test:", len(tr), len(va), len(te))
