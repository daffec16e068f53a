"""Uncertainty estimators built from ensembles and expert votes.

Epistemic uncertainty is the population standard deviation of member
outputs; aleatoric uncertainty is the maximum-probability complexity
``1 - max(q, 1 - q)`` of a probability ``q``, where ``q`` is either the mean
expert vote or the output of a network fine-tuned to imitate it. Combined
estimators add the two.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import nn
from ._seeding import derive_seed, substream
from .data import Dataset, on_grid

__all__ = [
    "EnsembleKind",
    "Ensemble",
    "UncertaintyScores",
    "MissingAnnotationError",
    "MemberTrainingError",
    "EnsembleConfigError",
    "METHODS",
    "COMPONENTS",
    "member_outputs",
    "ensemble_mean",
    "population_std",
    "std_uncertainty",
    "expert_mp",
    "expert_mp_batch",
    "model_mp",
    "build_ce",
    "build_mcmc_ensemble",
    "mc_dropout_ensemble",
    "mc_dropout_uncertainty",
    "build_eae",
    "EstimationContext",
    "estimate",
    "method_needs_votes",
    "save_ensemble",
    "load_ensemble",
    "write_scores_csv",
    "read_scores_csv",
]


class MissingAnnotationError(ValueError):
    """An estimator needs expert votes that the data does not carry."""


class MemberTrainingError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"ensemble member {index}: {cause}")
        self.index = index


class EnsembleConfigError(ValueError):
    pass


class EnsembleKind(str, enum.Enum):
    CLASSIFICATION = "classification"
    MCMC_SNAPSHOTS = "mcmc_snapshots"
    DROPOUT_PASSES = "dropout_passes"
    EXPERT_AWARE = "expert_aware"


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Ordered ensemble members plus how they were produced.

    A ``DROPOUT_PASSES`` ensemble holds a single base model; its effective
    members are ``info["n_passes"]`` stochastic forward passes seeded from
    ``info["seed"]``.
    """

    members: tuple[nn.MlpModel, ...]
    kind: EnsembleKind
    member_seeds: tuple[int, ...] = ()
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "member_seeds", tuple(int(s) for s in self.member_seeds))
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if not self.members:
            raise ValueError("ensemble has no members")

    def __len__(self) -> int:
        return len(self.members)

    @property
    def effective_size(self) -> int:
        if self.kind is EnsembleKind.DROPOUT_PASSES:
            return int(self.info["n_passes"])
        return len(self.members)


@dataclass(frozen=True, eq=False)
class UncertaintyScores:
    """One nonnegative score per example, tagged with the estimator name."""

    estimator: str
    example_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.example_ids),):
            raise ValueError("need exactly one value per example id")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError(f"{self.estimator}: scores must be finite and nonnegative")
        object.__setattr__(self, "example_ids", tuple(self.example_ids))
        object.__setattr__(self, "values", v)


# -- elementary estimators ---------------------------------------------------

def member_outputs(ensemble: Ensemble, X) -> np.ndarray:
    """Member probabilities, shape ``(k, n)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if ensemble.kind is EnsembleKind.DROPOUT_PASSES:
        base = ensemble.members[0]
        seed = int(ensemble.info["seed"])
        return np.stack([
            nn.forward(base, X, dropout=substream(seed, "dropout-pass", j))
            for j in range(int(ensemble.info["n_passes"]))
        ])
    return np.stack([nn.forward(m, X) for m in ensemble.members])


def ensemble_mean(ensemble: Ensemble, X) -> np.ndarray:
    """Average member probability per example."""
    return member_outputs(ensemble, X).mean(axis=0)


def population_std(outputs, axis: int = 0) -> np.ndarray:
    """Standard deviation with divisor ``k`` (not ``k - 1``)."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.shape[axis] < 2:
        raise ValueError(f"standard deviation needs at least 2 members, got {outputs.shape[axis]}")
    return np.std(outputs, axis=axis, ddof=0)


def std_uncertainty(ensemble: Ensemble, X) -> np.ndarray:
    if ensemble.effective_size < 2:
        raise ValueError(f"standard deviation needs at least 2 members, got {ensemble.effective_size}")
    return population_std(member_outputs(ensemble, X))


def expert_mp(votes: Sequence[float]) -> float:
    """Maximum-probability complexity of the mean vote.

    Equal to ``1 - max(m, 1 - m)`` and to ``|round(m) - m|`` for the mean
    vote ``m``. Votes are multiples of 1/4, so the value is computed in exact
    integer arithmetic and rounded once.
    """
    votes = list(votes)
    if not votes:
        raise ValueError("expert_mp needs at least one vote")
    for v in votes:
        if not on_grid(float(v)):
            raise ValueError(f"off-grid vote {v}")
    quarters = sum(round(4 * float(v)) for v in votes)
    denom = 4 * len(votes)
    return min(quarters, denom - quarters) / denom


def expert_mp_batch(votes) -> np.ndarray:
    """Row-wise :func:`expert_mp` over a vote matrix with NaN for missing votes."""
    V = np.asarray(votes, dtype=np.float64)
    present = ~np.isnan(V)
    counts = present.sum(axis=1)
    if np.any(counts == 0):
        raise MissingAnnotationError(f"{int(np.sum(counts == 0))} examples have no expert votes")
    q = np.where(present, V * 4.0, 0.0)
    if np.any(np.abs(q - np.round(q)) > 1e-9) or np.any((q < 0) | (q > 4)):
        raise ValueError("off-grid vote in vote matrix")
    s = np.round(q).sum(axis=1)
    denom = 4.0 * counts
    return np.minimum(s, denom - s) / denom


def model_mp(p):
    """``1 - max(p, 1 - p)`` for a probability or an array of them."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr >= 0.0) | ~(arr <= 1.0)):
        raise ValueError("model_mp expects probabilities in [0, 1]")
    out = np.minimum(arr, 1.0 - arr)
    return float(out) if out.ndim == 0 else out


# -- ensemble construction ---------------------------------------------------

DEFAULT_HIDDEN = (16, 16)


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.features, data.labels.astype(np.float64)
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def build_ce(
    train_sets: Sequence,
    config: nn.TrainConfig,
    master_seed: int,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    dropout_rate: float = 0.2,
) -> Ensemble:
    """Train one classifier per entry of ``train_sets``.

    Each member gets its own seed derived from ``master_seed``; that seed
    drives both initialisation and the SGD stream. ``train_sets`` entries are
    :class:`Dataset` objects or ``(X, y)`` pairs, typically different
    train/validation splits of a shared pool.
    """
    if len(train_sets) < 2:
        raise EnsembleConfigError(f"a classification ensemble needs at least 2 members, got {len(train_sets)}")
    members, seeds = [], []
    for i, data in enumerate(train_sets):
        X, y = _xy(data)
        seed = derive_seed(master_seed, "ce-member", i)
        model = nn.init_mlp([X.shape[1], *hidden_sizes, 1], derive_seed(seed, "init"), dropout_rate)
        try:
            trained, _ = nn.train(model, X, y, config.replace(seed=derive_seed(seed, "sgd"), checkpoint_interval=None))
        except nn.TrainingDivergedError as exc:
            raise MemberTrainingError(i, exc) from exc
        members.append(trained)
        seeds.append(seed)
    return Ensemble(tuple(members), EnsembleKind.CLASSIFICATION, tuple(seeds))


def build_mcmc_ensemble(model: nn.MlpModel, data, config: nn.TrainConfig, interval: int = 15, keep: int = 10) -> Ensemble:
    """Snapshot ensemble: the last ``keep`` checkpoints of a single training run."""
    if keep < 2:
        raise EnsembleConfigError("keep must be at least 2 for a standard deviation")
    if config.epochs < interval * keep:
        raise EnsembleConfigError(
            f"{config.epochs} epochs at a {interval}-epoch interval give fewer than {keep} checkpoints"
        )
    X, y = _xy(data)
    _, checkpoints = nn.train(model, X, y, config.replace(checkpoint_interval=interval))
    kept = checkpoints[-keep:]
    return Ensemble(
        tuple(c.model for c in kept),
        EnsembleKind.MCMC_SNAPSHOTS,
        (config.seed,) * len(kept),
        {"epochs": [c.epoch for c in kept], "interval": interval},
    )


def mc_dropout_ensemble(model: nn.MlpModel, n_passes: int = 50, seed: int = 0) -> Ensemble:
    if n_passes < 2:
        raise ValueError("MC dropout needs at least 2 passes")
    return Ensemble((model,), EnsembleKind.DROPOUT_PASSES, (seed,), {"n_passes": n_passes, "seed": seed})


def mc_dropout_uncertainty(model: nn.MlpModel, X, n_passes: int = 50, p: float = 0.2, seed: int = 0) -> np.ndarray:
    """Spread of ``n_passes`` stochastic forward passes with dropout active."""
    if abs(model.dropout_rate - p) > 1e-12:
        raise ValueError(f"model was built with dropout {model.dropout_rate}, requested {p}")
    return std_uncertainty(mc_dropout_ensemble(model, n_passes, seed), X)


def build_eae(ce: Ensemble, train_data, config: nn.TrainConfig) -> Ensemble:
    """Fine-tune every classification member to the mean expert vote.

    ``train_data`` is one :class:`Dataset` shared by all members or one per
    member. Member order and seeds are preserved.
    """
    if ce.kind is not EnsembleKind.CLASSIFICATION:
        raise EnsembleConfigError(f"expert-aware ensembles start from a classification ensemble, got {ce.kind.value}")
    per_member = [train_data] * len(ce) if isinstance(train_data, Dataset) else list(train_data)
    if len(per_member) != len(ce):
        raise EnsembleConfigError(f"{len(per_member)} training sets for {len(ce)} members")
    seeds = ce.member_seeds or tuple(range(len(ce)))
    tuned = []
    for i, (model, data) in enumerate(zip(ce.members, per_member)):
        if not data.has_votes():
            raise MissingAnnotationError(f"member {i}: training data lacks expert votes")
        cfg = config.replace(seed=derive_seed(seeds[i], "finetune"))
        try:
            tuned.append(nn.finetune_to_experts(model, data.features, data.expert_means(), cfg))
        except nn.TrainingDivergedError as exc:
            raise MemberTrainingError(i, exc) from exc
    return Ensemble(tuple(tuned), EnsembleKind.EXPERT_AWARE, ce.member_seeds, {"finetune_epochs": config.epochs})


# -- method dispatch ---------------------------------------------------------

@dataclass(eq=False)
class EstimationContext:
    """Everything an estimator may need for one batch of inputs.

    Only the fields a requested method uses have to be filled in.
    """

    X: np.ndarray
    ce: Ensemble | None = None
    eae: Ensemble | None = None
    mcmc: Ensemble | None = None
    votes: np.ndarray | None = None
    true_prob: np.ndarray | None = None
    dropout_passes: int = 50
    dropout_rate: float = 0.2
    dropout_seed: int = 0
    ean_index: int = 0
    _cache: dict = field(default_factory=dict, repr=False)


def _need(ctx, name, method):
    value = getattr(ctx, name)
    if value is None:
        raise EnsembleConfigError(f"{method} needs a {name} ensemble")
    return value


def _ce_std(ctx):
    return std_uncertainty(_need(ctx, "ce", "CE_STD"), ctx.X)


def _eae_std(ctx):
    return std_uncertainty(_need(ctx, "eae", "EAE_STD"), ctx.X)


def _eae_mp(ctx):
    return model_mp(ensemble_mean(_need(ctx, "eae", "EAE_MP"), ctx.X))


def _ean_mp(ctx):
    eae = _need(ctx, "eae", "EAN_MP")
    return model_mp(nn.forward(eae.members[ctx.ean_index], ctx.X))


def _exp_mp(ctx):
    if ctx.votes is None:
        raise MissingAnnotationError("EXP_MP needs expert votes at inference time")
    return expert_mp_batch(ctx.votes)


def _oracle_mp(ctx):
    if ctx.true_prob is None:
        raise MissingAnnotationError("ORACLE_MP needs the generating posterior")
    return model_mp(ctx.true_prob)


def _mcmc_std(ctx):
    return std_uncertainty(_need(ctx, "mcmc", "MCMC"), ctx.X)


def _mc_dropout(ctx):
    # One dropout ensemble per classification member, averaged over members.
    ce = _need(ctx, "ce", "MC_DROPOUT")
    scores = [
        mc_dropout_uncertainty(m, ctx.X, ctx.dropout_passes, ctx.dropout_rate, derive_seed(ctx.dropout_seed, "member", i))
        for i, m in enumerate(ce.members)
    ]
    return np.mean(scores, axis=0)


COMPONENTS = {
    "CE_STD": _ce_std,
    "EAE_STD": _eae_std,
    "EAE_MP": _eae_mp,
    "EAN_MP": _ean_mp,
    "EXP_MP": _exp_mp,
    "ORACLE_MP": _oracle_mp,
    "MCMC": _mcmc_std,
    "MC_DROPOUT": _mc_dropout,
}

# Rows of the comparison table, in reporting order.
METHODS = (
    "CE_STD",
    "MCMC",
    "MC_DROPOUT",
    "EAE_MP",
    "EAN_MP+CE_STD",
    "EAE_MP+CE_STD",
    "EAE_MP+EAE_STD",
    "EXP_MP",
    "EXP_MP+CE_STD",
)


def _components(method: str) -> list[str]:
    parts = [p.strip() for p in method.split("+")]
    unknown = [p for p in parts if p not in COMPONENTS]
    if unknown or not parts:
        raise ValueError(f"unknown estimator component(s) {unknown} in {method!r}; known: {sorted(COMPONENTS)}")
    return parts


def method_needs_votes(method: str) -> bool:
    """True when ``method`` reads expert votes at inference time."""
    return "EXP_MP" in _components(method)


def estimate(method: str, ctx: EstimationContext, normalize: bool = False) -> np.ndarray:
    """Scores for every row of ``ctx.X`` under ``method``.

    ``method`` is a single component such as ``"CE_STD"`` or a sum such as
    ``"EAE_MP+CE_STD"``. Sums add raw component values; ``normalize=True``
    divides each component by its maximum over the batch first (ablation
    only).
    """
    total = np.zeros(np.atleast_2d(ctx.X).shape[0])
    for name in _components(method):
        if name not in ctx._cache:
            ctx._cache[name] = np.asarray(COMPONENTS[name](ctx), dtype=np.float64)
        part = ctx._cache[name]
        if normalize:
            top = part.max()
            part = part / top if top > 0 else part
        total = total + part
    return total


# -- persistence -------------------------------------------------------------

def save_ensemble(ensemble: Ensemble, directory) -> None:
    """Write members as ``member_XXX.json`` plus a ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(ensemble.members):
        name = f"member_{i:03d}.json"
        nn.save_model(m, directory / name)
        files.append(name)
    manifest = {
        "kind": ensemble.kind.value,
        "members": files,
        "member_seeds": list(ensemble.member_seeds),
        "info": dict(ensemble.info),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_ensemble(directory) -> Ensemble:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    members = tuple(nn.load_model(directory / f) for f in manifest["members"])
    return Ensemble(members, EnsembleKind(manifest["kind"]), tuple(manifest["member_seeds"]), manifest["info"])


def write_scores_csv(scores: Sequence[UncertaintyScores], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_id", "estimator", "value"])
        for s in scores:
            for eid, v in zip(s.example_ids, s.values):
                w.writerow([eid, s.estimator, repr(float(v))])


def read_scores_csv(path) -> list[UncertaintyScores]:
    """Group rows of a scores CSV by estimator, keeping file order."""
    grouped: dict[str, tuple[list, list]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"example_id", "estimator", "value"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: scores file lacks columns {sorted(missing)}")
        for row in reader:
            ids, vals = grouped.setdefault(row["estimator"], ([], []))
            ids.append(row["example_id"])
            vals.append(float(row["value"]))
    return [UncertaintyScores(name, tuple(ids), np.array(vals)) for name, (ids, vals) in grouped.items()]
