"""End-to-end comparison of uncertainty estimators over repeated seeds.

Every run seed re-splits the train/validation pool for each ensemble member,
trains the classification ensemble (and whatever else the requested methods
need), scores the fixed test pool and records one rejection curve per
method. Randomness is drawn from named substreams of the master seed, so
requesting an extra method never changes the numbers of another.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import estimators as est
from . import nn
from ._io import atomic_write_text
from ._seeding import derive_seed
from .data import Dataset, SplitSpec, SyntheticConfig, load_csv, split, synthesize
from .evaluation import (
    TIE_POLICY,
    MethodRun,
    compare_report,
    curve_csv,
    curve_from_arrays,
    render_svg,
    report_json,
)

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "SeedResult",
    "ExperimentResult",
    "ConfigError",
    "load_run_config",
    "load_dataset",
    "check_methods",
    "run_seed",
    "run_experiment",
    "write_outputs",
]

REPORT_FORMAT = "eauq-report"
REPORT_VERSION = 1

# Plain SGD on a small MLP needs far larger steps than the nominal
# schedule; the multiplier keeps the 10:1 ratio between classification and
# fine-tuning learning rates.
DEFAULT_LR_MULTIPLIER = 100.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines an experiment.

    ``train`` carries the nominal classification schedule; the effective
    schedule multiplies its epochs by ``desk_scale`` and its learning rate by
    ``lr_multiplier``. Fine-tuning keeps its epoch count and decay and takes
    the same learning-rate multiplier.
    """

    synthetic: SyntheticConfig | None = field(default_factory=SyntheticConfig)
    csv_path: str | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    finetune_epochs: int = 40
    finetune_lr: float = 1e-5
    finetune_decay: float = 0.99
    hidden_sizes: tuple[int, ...] = est.DEFAULT_HIDDEN
    dropout_rate: float = 0.2
    k_ce: int = 20
    mcmc_keep: int = 10
    mcmc_interval: int = 15
    dropout_passes: int = 50
    methods: tuple[str, ...] = est.METHODS
    n_seeds: int = 20
    master_seed: int = 0
    desk_scale: float = 0.125
    lr_multiplier: float = DEFAULT_LR_MULTIPLIER

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if (self.synthetic is None) == (self.csv_path is None):
            raise ConfigError("give exactly one data source: synthetic or csv_path")
        if not self.methods:
            raise ConfigError("no methods requested")
        for m in self.methods:
            est.method_needs_votes(m)  # validates the name
        if self.k_ce < 2:
            raise ConfigError("k_ce must be at least 2")
        if self.n_seeds <= 0:
            raise ConfigError("n_seeds must be positive")
        if not 0 < self.desk_scale <= 1:
            raise ConfigError("desk_scale must lie in (0, 1]")
        if not self.lr_multiplier > 0:
            raise ConfigError("lr_multiplier must be positive")
        if self.mcmc_keep < 2 or self.mcmc_interval <= 0:
            raise ConfigError("mcmc_keep must be at least 2 and mcmc_interval positive")
        if self.dropout_passes < 2:
            raise ConfigError("dropout_passes must be at least 2")

    def train_config(self) -> nn.TrainConfig:
        return self.train.replace(
            epochs=max(1, math.floor(self.train.epochs * self.desk_scale + 0.5)),
            initial_lr=self.train.initial_lr * self.lr_multiplier,
            checkpoint_interval=None,
        )

    def finetune_config(self) -> nn.TrainConfig:
        return nn.finetune_config(
            self.train_config(),
            epochs=self.finetune_epochs,
            initial_lr=self.finetune_lr * self.lr_multiplier,
            decay_factor=self.finetune_decay,
        )

    def mcmc_config(self) -> nn.TrainConfig:
        """Classification schedule extended by ``mcmc_keep`` snapshot intervals.

        Every kept snapshot then lies past the point where a classification
        member stops training, as with the tail of a full-length run.
        """
        base = self.train_config()
        return base.replace(epochs=base.epochs + self.mcmc_interval * self.mcmc_keep)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            if doc.get("synthetic") is not None:
                doc["synthetic"] = SyntheticConfig(**doc["synthetic"])
            elif "csv_path" in doc and "synthetic" not in doc:
                doc["synthetic"] = None
            if "split" in doc:
                doc["split"] = SplitSpec(**doc["split"])
            if "train" in doc:
                doc["train"] = nn.TrainConfig(**doc["train"])
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = RunConfig.from_dict(doc)
    if cfg.csv_path is not None and not Path(cfg.csv_path).is_absolute():
        cfg = dataclasses.replace(cfg, csv_path=str(path.parent / cfg.csv_path))
    return cfg


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.synthetic is not None:
        return synthesize(cfg.synthetic)
    if not Path(cfg.csv_path).exists():
        raise ConfigError(f"data file {cfg.csv_path} does not exist")
    return load_csv(cfg.csv_path)


def _needs_training_votes(method: str) -> bool:
    return any(part in method for part in ("EAE_", "EAN_"))


def check_methods(cfg: RunConfig, dataset: Dataset) -> None:
    """Fail before any training if a method cannot run on ``dataset``."""
    for m in cfg.methods:
        if (est.method_needs_votes(m) or _needs_training_votes(m)) and not dataset.has_votes():
            raise est.MissingAnnotationError(f"method {m} needs expert votes but the dataset has none")
        if "ORACLE_MP" in m and dataset.true_prob is None:
            raise est.MissingAnnotationError(f"method {m} needs the generating posterior (synthetic data only)")


@dataclass(eq=False)
class SeedResult:
    seed: int
    runs: list[MethodRun]
    diagnostics: dict


def run_seed(cfg: RunConfig, dataset: Dataset, seed: int) -> SeedResult:
    """Train everything one repetition needs and score the test pool."""
    run_master = derive_seed(cfg.master_seed, "run", seed)
    splits = [
        split(dataset, cfg.split, run_seed=derive_seed(run_master, "member-split", i))
        for i in range(cfg.k_ce)
    ]
    train_sets = [s[0] for s in splits]
    test = splits[0][2]

    ce = est.build_ce(
        train_sets, cfg.train_config(), derive_seed(run_master, "ce"),
        hidden_sizes=cfg.hidden_sizes, dropout_rate=cfg.dropout_rate,
    )
    ctx = est.EstimationContext(
        test.features,
        ce=ce,
        votes=test.votes,
        true_prob=test.true_prob,
        dropout_passes=cfg.dropout_passes,
        dropout_rate=cfg.dropout_rate,
        dropout_seed=derive_seed(run_master, "mc-dropout"),
    )
    diagnostics: dict = {"seed": seed}

    if any(_needs_training_votes(m) for m in cfg.methods):
        ctx.eae = est.build_eae(ce, train_sets, cfg.finetune_config())
        val = splits[0][1]
        target = val.expert_means()
        if not np.any(np.isnan(target)):
            diagnostics["ean_val_mse_before"] = float(np.mean((nn.forward(ce.members[0], val.features) - target) ** 2))
            diagnostics["ean_val_mse_after"] = float(np.mean((nn.forward(ctx.eae.members[0], val.features) - target) ** 2))

    if any("MCMC" in m for m in cfg.methods):
        mseed = derive_seed(run_master, "mcmc")
        init = nn.init_mlp([dataset.n_features, *cfg.hidden_sizes, 1], derive_seed(mseed, "init"), cfg.dropout_rate)
        ctx.mcmc = est.build_mcmc_ensemble(
            init, train_sets[0], cfg.mcmc_config().replace(seed=derive_seed(mseed, "sgd")),
            interval=cfg.mcmc_interval, keep=cfg.mcmc_keep,
        )

    prob = est.ensemble_mean(ce, test.features)
    correct = (prob >= 0.5) == (test.labels == 1)
    diagnostics["ce_test_accuracy"] = float(np.mean(correct))
    test_ids = frozenset(test.ids)
    runs = []
    for m in cfg.methods:
        scores = est.estimate(m, ctx)
        runs.append(MethodRun(m, seed, curve_from_arrays(correct, scores, list(test.ids)), test_ids))
    return SeedResult(seed, runs, diagnostics)


def _run_seed_job(args):
    cfg, dataset, seed = args
    return run_seed(cfg, dataset, seed)


@dataclass(eq=False)
class ExperimentResult:
    config: RunConfig
    seeds: list[SeedResult]

    @property
    def runs(self) -> list[MethodRun]:
        return [r for s in self.seeds for r in s.runs]

    def aac_table(self) -> dict[str, np.ndarray]:
        """Per-method AAC values indexed by seed order."""
        out: dict[str, list] = {m: [] for m in self.config.methods}
        for s in self.seeds:
            for r in s.runs:
                out[r.method].append(r.report.aac)
        return {m: np.array(v) for m, v in out.items()}


def run_experiment(cfg: RunConfig, jobs: int = 1, dataset: Dataset | None = None) -> ExperimentResult:
    if dataset is None:
        dataset = load_dataset(cfg)
    check_methods(cfg, dataset)
    seeds = list(range(cfg.n_seeds))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_job, [(cfg, dataset, s) for s in seeds]))
    else:
        results = []
        for s in seeds:
            log.info("seed %d/%d", s + 1, cfg.n_seeds)
            results.append(run_seed(cfg, dataset, s))
    return ExperimentResult(cfg, results)


def _safe_name(method: str) -> str:
    return method.replace("+", "_plus_")


def build_report(result: ExperimentResult) -> dict:
    cfg = result.config
    summaries = compare_report(result.runs)
    train, ft, mcmc = cfg.train_config(), cfg.finetune_config(), cfg.mcmc_config()
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "effective_schedule": {
            "note": (
                f"classification epochs scaled by desk_scale={cfg.desk_scale}; "
                f"learning rates multiplied by {cfg.lr_multiplier}"
            ),
            "train": asdict(train),
            "finetune": asdict(ft),
            "mcmc_epochs": mcmc.epochs,
        },
        "tie_policy": TIE_POLICY,
        "n_test": result.runs[0].curve.n_total,
        "records": [r.report.to_dict() for r in result.runs],
        "summary": [s.to_dict() for s in summaries],
        "diagnostics": [s.diagnostics for s in result.seeds],
    }


def format_summary(summary: Sequence[dict]) -> str:
    """Plain-text table in the layout of the usual method comparison."""
    lines = [f"{'method':<18} {'AAC x1e-4':>10} {'acc@10%':>9} {'omit->99%':>10} {'seeds':>6}"]
    for row in summary:
        f99 = row["mean_fraction_to_99pct"]
        f99 = "unreach." if f99 == "unreachable" else f"{100 * f99:.1f}%"
        lines.append(
            f"{row['method']:<18} {1e4 * row['mean_aac']:>10.1f} "
            f"{100 * row['mean_acc_at_10pct_discard']:>8.2f}% {f99:>10} {row['n_seeds']:>6}"
        )
    return "\n".join(lines) + "\n"


def write_outputs(result: ExperimentResult, out_dir) -> dict:
    """Write report.json, summary.txt, per-method curve CSVs and an SVG plot.

    The report is written last and atomically, so its presence means the run
    completed.
    """
    out = Path(out_dir)
    doc = build_report(result)
    summaries = compare_report(result.runs)
    for s in summaries:
        atomic_write_text(out / "curves" / f"{_safe_name(s.method)}.csv", curve_csv(s.mean_curve))
    render_svg({s.method: s.mean_curve for s in summaries}, out / "rejection_curves.svg")
    atomic_write_text(out / "summary.txt", format_summary(doc["summary"]))
    atomic_write_text(out / "report.json", report_json(doc))
    return doc
