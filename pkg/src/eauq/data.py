"""Datasets with ground-truth labels and optional expert votes.

Experts annotate each example on a five-point grid of reaction
probabilities (0, 1/4, 1/2, 3/4, 1). Synthetic data comes from two Gaussian
blobs whose Bayes posterior is known exactly, so the true aleatoric noise of
every example is available as a reference.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit, logit

from ._seeding import substream

__all__ = [
    "VOTE_GRID",
    "Example",
    "Dataset",
    "SplitSpec",
    "SyntheticConfig",
    "CsvValidationError",
    "snap_to_grid",
    "on_grid",
    "load_csv",
    "write_csv",
    "split",
    "synthesize",
    "simulate_experts",
    "expert_votes_for",
    "write_manifest",
]

VOTE_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
_GRID_STEPS = 4
_GRID_TOL = 1e-9


class CsvValidationError(ValueError):
    """A CSV row failed validation; the message names the row."""


def on_grid(v: float) -> bool:
    if not math.isfinite(v) or v < -_GRID_TOL or v > 1.0 + _GRID_TOL:
        return False
    scaled = v * _GRID_STEPS
    return abs(scaled - round(scaled)) < _GRID_TOL


def snap_to_grid(v):
    """Nearest grid value after clamping to [0, 1]; exact ties go up."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    out = np.floor(v * _GRID_STEPS + 0.5) / _GRID_STEPS
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Example:
    id: str
    features: tuple[float, ...]
    label: int
    expert_votes: tuple[float, ...] | None = None
    true_positive_prob: float | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"example {self.id}: label must be 0 or 1, got {self.label}")
        if not all(math.isfinite(f) for f in self.features):
            raise ValueError(f"example {self.id}: features must be finite")
        if self.expert_votes is not None:
            bad = [v for v in self.expert_votes if not on_grid(v)]
            if bad:
                raise ValueError(f"example {self.id}: off-grid vote {bad[0]}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of examples.

    ``votes`` has one column per expert with NaN where a vote is missing; it
    is ``None`` when the dataset carries no expert annotation at all.
    ``true_prob`` is the generating posterior, present only for synthetic
    data, and must never be used for training.
    """

    ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    votes: np.ndarray | None = None
    true_prob: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2 or X.shape[0] != n:
            raise ValueError(f"features must have shape ({n}, d), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        y = np.array(self.labels, dtype=np.int64, copy=True)
        if y.shape != (n,) or np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be a 0/1 vector with one entry per example")
        if len(set(self.ids)) != n:
            raise ValueError("example ids must be unique")
        V = None
        if self.votes is not None:
            V = np.array(self.votes, dtype=np.float64, copy=True)
            if V.ndim != 2 or V.shape[0] != n:
                raise ValueError(f"votes must have shape ({n}, n_experts)")
            present = V[~np.isnan(V)]
            bad = [v for v in present if not on_grid(v)]
            if bad:
                raise ValueError(f"off-grid vote {bad[0]}")
        P = None
        if self.true_prob is not None:
            P = np.array(self.true_prob, dtype=np.float64, copy=True)
            if P.shape != (n,) or np.any((P < 0) | (P > 1)):
                raise ValueError("true_prob must be a vector of probabilities")
        for a in (X, y, V, P):
            if a is not None:
                a.flags.writeable = False
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "votes", V)
        object.__setattr__(self, "true_prob", P)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_experts(self) -> int:
        return 0 if self.votes is None else self.votes.shape[1]

    def has_votes(self) -> bool:
        """True when every example has at least one expert vote."""
        if self.votes is None or len(self) == 0:
            return False
        return bool(np.all(np.any(~np.isnan(self.votes), axis=1)))

    def expert_means(self) -> np.ndarray:
        """Mean vote per example; NaN where an example has no votes."""
        if self.votes is None:
            return np.full(len(self), np.nan)
        counts = np.sum(~np.isnan(self.votes), axis=1)
        sums = np.nansum(self.votes, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            ids=tuple(self.ids[i] for i in index),
            features=self.features[index],
            labels=self.labels[index],
            votes=None if self.votes is None else self.votes[index],
            true_prob=None if self.true_prob is None else self.true_prob[index],
        )

    def with_votes(self, votes) -> "Dataset":
        return Dataset(self.ids, self.features, self.labels, votes, self.true_prob)

    def example(self, i: int) -> Example:
        votes = None
        if self.votes is not None:
            row = self.votes[i]
            row = row[~np.isnan(row)]
            votes = tuple(float(v) for v in row) if row.size else None
        return Example(
            id=self.ids[i],
            features=tuple(float(v) for v in self.features[i]),
            label=int(self.labels[i]),
            expert_votes=votes,
            true_positive_prob=None if self.true_prob is None else float(self.true_prob[i]),
        )

    def examples(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self.example(i)

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Dataset":
        examples = list(examples)
        if not examples:
            raise ValueError("no examples")
        n_experts = max((len(e.expert_votes or ()) for e in examples), default=0)
        votes = None
        if n_experts:
            votes = np.full((len(examples), n_experts), np.nan)
            for i, e in enumerate(examples):
                if e.expert_votes:
                    votes[i, :len(e.expert_votes)] = e.expert_votes
        probs = [e.true_positive_prob for e in examples]
        return cls(
            ids=tuple(e.id for e in examples),
            features=np.array([e.features for e in examples], dtype=np.float64),
            labels=np.array([e.label for e in examples]),
            votes=votes,
            true_prob=None if any(p is None for p in probs) else np.array(probs),
        )


# -- CSV ---------------------------------------------------------------------

_FEATURE_RE = re.compile(r"^f(\d+)$")
_VOTE_RE = re.compile(r"^e(\d+)$")
ORACLE_COLUMN = "true_positive_prob"


def _numbered(header, pattern):
    found = [(int(m.group(1)), name) for name in header if (m := pattern.match(name))]
    return [name for _, name in sorted(found)]


def load_csv(
    path,
    feature_columns: Sequence[str] | None = None,
    label_column: str = "label",
    vote_columns: Sequence[str] | None = None,
    id_column: str = "id",
) -> Dataset:
    """Read a dataset from CSV.

    Without explicit column lists, features are the ``f<i>`` columns and
    votes the ``e<k>`` columns, both in numeric order. An empty vote cell
    means that expert did not annotate the row. A ``true_positive_prob``
    column, if present, is read as the synthetic oracle.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if feature_columns is None:
            feature_columns = _numbered(header, _FEATURE_RE)
        if vote_columns is None:
            vote_columns = _numbered(header, _VOTE_RE)
        required = [id_column, label_column, *feature_columns, *vote_columns]
        missing = [c for c in required if c not in header]
        if missing:
            raise CsvValidationError(f"{path}: header lacks columns {missing}")
        if not feature_columns:
            raise CsvValidationError(f"{path}: no feature columns")
        has_oracle = ORACLE_COLUMN in header

        ids, X, y, V, P = [], [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            where = f"{path}, line {row_no}"
            try:
                X.append([float(row[c]) for c in feature_columns])
            except (TypeError, ValueError):
                bad = next(c for c in feature_columns if not _is_float(row[c]))
                raise CsvValidationError(f"{where}: non-numeric feature {bad}={row[bad]!r}") from None
            if not all(math.isfinite(v) for v in X[-1]):
                raise CsvValidationError(f"{where}: non-finite feature value")
            label = (row[label_column] or "").strip()
            if label not in ("0", "1"):
                raise CsvValidationError(f"{where}: label must be 0 or 1, got {label!r}")
            y.append(int(label))
            votes = []
            for c in vote_columns:
                cell = (row[c] or "").strip()
                if not cell:
                    votes.append(math.nan)
                    continue
                if not _is_float(cell) or not on_grid(float(cell)):
                    raise CsvValidationError(f"{where}: off-grid vote {c}={cell!r}; allowed {VOTE_GRID}")
                votes.append(float(cell))
            V.append(votes)
            if has_oracle and (row[ORACLE_COLUMN] or "").strip():
                P.append(float(row[ORACLE_COLUMN]))
            ids.append(row[id_column])

    if not ids:
        raise CsvValidationError(f"{path}: no data rows")
    return Dataset(
        ids=tuple(ids),
        features=np.array(X, dtype=np.float64),
        labels=np.array(y),
        votes=np.array(V, dtype=np.float64) if vote_columns else None,
        true_prob=np.array(P) if has_oracle and len(P) == len(ids) else None,
    )


def _is_float(s) -> bool:
    try:
        float(s)
    except (TypeError, ValueError):
        return False
    return True


def write_csv(dataset: Dataset, path, include_oracle: bool = True) -> None:
    """Write ``dataset`` in the layout :func:`load_csv` reads back exactly."""
    header = ["id", *(f"f{j}" for j in range(dataset.n_features)), "label"]
    header += [f"e{k + 1}" for k in range(dataset.n_experts)]
    oracle = include_oracle and dataset.true_prob is not None
    if oracle:
        header.append(ORACLE_COLUMN)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [dataset.ids[i], *(repr(float(v)) for v in dataset.features[i]), str(dataset.labels[i])]
            if dataset.votes is not None:
                row += ["" if math.isnan(v) else f"{v:.2f}" for v in dataset.votes[i]]
            if oracle:
                row.append(repr(float(dataset.true_prob[i])))
            w.writerow(row)


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.1
    val_fraction: float = 0.1
    test_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if not all(0.0 < f < 1.0 for f in fr):
            raise ValueError(f"split fractions must each lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = math.floor(self.train_fraction * n + 0.5)
        n_val = math.floor(self.val_fraction * n + 0.5)
        return n_train, n_val, n - n_train - n_val


def split_indices(n: int, spec: SplitSpec, run_seed: int | None = None):
    """Index form of :func:`split`."""
    if n < 10:
        raise ValueError(f"need at least 10 examples to split, got {n}")
    n_train, n_val, n_test = spec.sizes(n)
    perm = substream(spec.seed, "test-pool").permutation(n)
    test, pool = perm[:n_test], perm[n_test:]
    pool = substream(spec.seed if run_seed is None else run_seed, "train-val").permutation(pool)
    return np.sort(pool[:n_train]), np.sort(pool[n_train:]), np.sort(test)


def split(dataset: Dataset, spec: SplitSpec, run_seed: int | None = None) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into train, validation and test sets.

    The test set depends only on ``spec.seed``; train and validation are
    drawn from the remaining pool with ``run_seed`` (default ``spec.seed``).
    Repeated runs with different run seeds therefore share one test pool.
    """
    tr, va, te = split_indices(len(dataset), spec, run_seed)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Two unit-covariance Gaussian blobs plus simulated experts.

    ``aleatoric_band_fraction`` of the examples are placed near the decision
    midplane, where the posterior lies between 0.1 and 0.9.
    """

    n_examples: int = 2000
    n_features: int = 32
    class_separation: float = 4.0
    aleatoric_band_fraction: float = 0.2
    n_experts: int = 6
    expert_noise_sd: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.n_examples <= 0 or self.n_features <= 0:
            raise ValueError("n_examples and n_features must be positive")
        if not self.class_separation > 0:
            raise ValueError("class_separation must be positive")
        if not 0.0 <= self.aleatoric_band_fraction <= 1.0:
            raise ValueError("aleatoric_band_fraction must lie in [0, 1]")
        if self.n_experts <= 0:
            raise ValueError("n_experts must be positive")
        if self.expert_noise_sd < 0:
            raise ValueError("expert_noise_sd must be nonnegative")


# Band examples have posterior within [1 - _BAND_EDGE, _BAND_EDGE].
_BAND_EDGE = 0.9


def synthesize(config: SyntheticConfig) -> Dataset:
    """Sample a labelled dataset with a known posterior and expert votes.

    Class means sit at ``±separation/2`` along a random unit direction ``u``,
    so the posterior of class one is ``sigmoid(separation * <x, u>)``. Labels
    are drawn from that posterior. Examples in the aleatoric band have their
    coordinate along ``u`` redrawn so that the posterior lies in [0.1, 0.9].
    """
    n, d, sep = config.n_examples, config.n_features, config.class_separation
    rng = substream(config.seed, "synthesize")
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)

    n_band = math.floor(config.aleatoric_band_fraction * n + 0.5)
    in_band = rng.permutation(n) < n_band

    cls = rng.random(n) < 0.5
    X = rng.normal(size=(n, d)) + np.where(cls, 0.5, -0.5)[:, None] * sep * u
    half_width = logit(_BAND_EDGE) / sep
    along = rng.uniform(-half_width, half_width, size=n)
    Xb = X - np.outer(X @ u, u) + np.outer(along, u)
    X = np.where(in_band[:, None], Xb, X)

    p = expit(sep * (X @ u))
    labels = (rng.random(n) < p).astype(np.int64)
    ids = tuple(f"s{i:05d}" for i in range(n))
    votes = expert_votes_for(ids, p, config.n_experts, config.expert_noise_sd, config.seed)
    return Dataset(ids=ids, features=X, labels=labels, votes=votes, true_prob=p)


def simulate_experts(example: Example, n_experts: int, noise_sd: float, seed: int) -> tuple[float, ...]:
    """Votes of ``n_experts`` calibrated but noisy annotators.

    Expert ``k`` reports the grid value nearest to
    ``clamp(p + eps_k, 0, 1)`` with ``eps_k ~ Normal(0, noise_sd)``, where
    ``p`` is the example's true posterior. The noise is keyed on
    ``(seed, example.id)`` and the expert index, so a vote does not change
    when other examples or additional experts are generated.
    """
    if example.true_positive_prob is None:
        raise ValueError(f"example {example.id} has no true_positive_prob to observe")
    return tuple(float(v) for v in _votes_one(example.id, example.true_positive_prob, n_experts, noise_sd, seed))


def _votes_one(example_id, p, n_experts, noise_sd, seed):
    if n_experts <= 0:
        raise ValueError("n_experts must be positive")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    eps = substream(seed, "experts", example_id).normal(0.0, 1.0, size=n_experts) * noise_sd
    return snap_to_grid(p + eps)


def expert_votes_for(ids, probs, n_experts: int, noise_sd: float, seed: int) -> np.ndarray:
    """Vote matrix ``(n, n_experts)`` for many examples at once."""
    return np.array([_votes_one(i, p, n_experts, noise_sd, seed) for i, p in zip(ids, probs)]).reshape(len(ids), n_experts)


def write_manifest(path, **fields) -> None:
    """Write a JSON manifest; dataclass values are expanded into dicts."""
    doc = {k: asdict(v) if hasattr(v, "__dataclass_fields__") else v for k, v in fields.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
