"""The full method comparison on synthetic data, reduced for a quick look.

The command-line equivalent is ``eauq run config.json``; see the README for
the config layout. This script uses 5 ensemble members and 3 seeds.
"""

from eauq import data
from eauq.pipeline import RunConfig, format_summary, run_experiment, write_outputs

cfg = RunConfig(
    synthetic=data.SyntheticConfig(n_examples=2000, seed=0),
    k_ce=5,
    n_seeds=3,
    dropout_passes=20,
)
eff = cfg.train_config()
print(f"effective schedule: {eff.epochs} epochs, initial lr {eff.initial_lr:g}, MCMC run {cfg.mcmc_config().epochs} epochs")

result = run_experiment(cfg, jobs=3)
doc = write_outputs(result, "demo-run")
print(format_summary(doc["summary"]))
for d in doc["diagnostics"]:
    print("seed %d: CE test accuracy %.3f, EAN val MSE %.4f -> %.4f" % (
        d["seed"], d["ce_test_accuracy"], d["ean_val_mse_before"], d["ean_val_mse_after"]))
print("outputs in demo-run/")
