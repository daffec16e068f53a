"""Every uncertainty estimator on one trained ensemble."""

import numpy as np

from eauq import data, nn
from eauq import estimators as est

ds = data.synthesize(data.SyntheticConfig(n_examples=600, n_features=8, seed=3))
spec = data.SplitSpec(seed=0)
splits = [data.split(ds, spec, run_seed=i) for i in range(5)]
train_sets = [s[0] for s in splits]
test = splits[0][2]

cfg = nn.TrainConfig(epochs=100, initial_lr=0.01)
ce = est.build_ce(train_sets, cfg, master_seed=0, hidden_sizes=(16, 16))
eae = est.build_eae(ce, train_sets, nn.finetune_config(cfg, initial_lr=1e-3))
mcmc = est.build_mcmc_ensemble(
    nn.init_mlp([ds.n_features, 16, 16, 1], seed=9, dropout_rate=0.2),
    train_sets[0], cfg.replace(epochs=150), interval=15, keep=10,
)
print("MCMC snapshots from epochs", mcmc.info["epochs"])

ctx = est.EstimationContext(test.features, ce=ce, eae=eae, mcmc=mcmc, votes=test.votes, true_prob=test.true_prob)
for method in est.METHODS + ("ORACLE_MP",):
    u = est.estimate(method, ctx)
    print(f"{method:<16} mean {u.mean():.4f}  max {u.max():.4f}")

# sums are plain sums of components
both = est.estimate("EXP_MP+CE_STD", ctx)
print("sum identity holds:", np.allclose(both, est.estimate("EXP_MP", ctx) + est.estimate("CE_STD", ctx)))

# an undecided panel of experts
print("MP of votes (0.5, 0.5, 0.5, 0.5):", est.expert_mp([0.5] * 4))
print("MP of votes (0.75, 1.0):", est.expert_mp([0.75, 1.0]))
