"""Crogging (k-fold ensemble training), prediction aggregation, and the
regularization post-layer (RPL).

Aggregation happens in the probability domain (arithmetic mean of member
posteriors), which gives the Jensen guarantee that the ensemble's
cross-entropy never exceeds the mean member cross-entropy. The RPL is a
per-class diagonal affine transform on log posteriors followed by a softmax,
trained once on the folds' held-out predictions and reused by every +RPL
scenario.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import atomic_write_text
from .errors import ConfigError, DataError
from .network import RecurrentNetwork, load_model
from .numeric import Rng, log_softmax

SCENARIOS = ("master", "master+rpl", "folds", "folds+rpl",
             "master+folds", "master+folds+rpl")

_PROB_FLOOR = 1e-30


@dataclass
class FoldSplit:
    k: int
    assignment: dict[str, int]

    def members(self, fold: int) -> list[str]:
        return [utt_id for utt_id, j in self.assignment.items() if j == fold]


def split_folds(utt_ids: list[str], k: int, rng: Rng) -> FoldSplit:
    """Balanced random partition; fold sizes differ by at most one."""
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if k > len(utt_ids):
        raise ConfigError(f"cannot split {len(utt_ids)} utterances into {k} folds")
    order = rng.permutation(len(utt_ids))
    assignment = {utt_ids[int(idx)]: pos % k for pos, idx in enumerate(order)}
    return FoldSplit(k=k, assignment=assignment)


def train_crogging(utterances, split: FoldSplit, fit_fn, rng: Rng
                   ) -> tuple[list[RecurrentNetwork], dict[str, np.ndarray]]:
    """Train one net per fold on the fold's complement.

    Fold j is net j's early-stopping dev set; the returned dictionary maps
    every utterance id to the eval-mode log-posteriors of the one net that
    never saw it.
    """
    by_id = {u.utt_id: u for u in utterances}
    missing = [utt_id for utt_id in split.assignment if utt_id not in by_id]
    if missing:
        raise DataError(f"fold split references unknown utterances: {missing[:3]}")
    children = rng.split(split.k)
    nets: list[RecurrentNetwork] = []
    held_out: dict[str, np.ndarray] = {}
    for j in range(split.k):
        train_j = [u for u in utterances if split.assignment[u.utt_id] != j]
        dev_j = [u for u in utterances if split.assignment[u.utt_id] == j]
        net = fit_fn(train_j, dev_j, children[j])
        nets.append(net)
        for u in dev_j:
            held_out[u.utt_id] = net.log_posteriors(u.features)
    return nets, held_out


def aggregate(fold_posteriors: list[np.ndarray] | None,
              master_posterior: np.ndarray | None,
              master_weight: float = 0.5) -> np.ndarray:
    """Combine member posteriors (probability domain, arrays share a shape).

    Folds only: arithmetic mean. Master only: unchanged. Both: weighted
    combination of the master and the fold mean.
    """
    if not fold_posteriors and master_posterior is None:
        raise ConfigError("aggregate needs at least one member")
    if not 0.0 <= master_weight <= 1.0:
        raise ConfigError(f"master weight must be in [0,1], got {master_weight}")
    if fold_posteriors:
        folds_mean = sum(fold_posteriors) / len(fold_posteriors)
        if master_posterior is None:
            return folds_mean
        return master_weight * master_posterior + (1.0 - master_weight) * folds_mean
    return master_posterior


@dataclass
class RplParams:
    """Diagonal scale d and bias b applied to log posteriors before a softmax."""

    d: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.d.shape != self.b.shape or self.d.ndim != 1:
            raise ConfigError(f"RPL parameter shapes differ: {self.d.shape} vs {self.b.shape}")

    @classmethod
    def identity(cls, num_classes: int) -> "RplParams":
        return cls(d=np.ones(num_classes), b=np.zeros(num_classes))


def apply_rpl(rpl: RplParams, posteriors: np.ndarray) -> np.ndarray:
    """softmax(d * log(posteriors) + b); input rows are probability vectors."""
    logp = np.log(np.maximum(posteriors, _PROB_FLOOR))
    return np.exp(log_softmax(rpl.d * logp + rpl.b))


def _rpl_ce(rpl: RplParams, logp: np.ndarray, labels: np.ndarray) -> float:
    z = log_softmax(rpl.d * logp + rpl.b)
    return float(-np.mean(z[np.arange(len(labels)), labels]))


def train_rpl(log_posteriors: np.ndarray, labels: np.ndarray, rng: Rng, *,
              lr: float = 0.1, max_iter: int = 200, holdout: float = 0.1) -> RplParams:
    """Fit (d, b) by full-batch gradient descent from the identity.

    A seeded ``holdout`` fraction of the frames is held aside; the returned
    parameters are the best of every iterate (identity included) on that
    slice, so the result is never worse than the identity there.
    """
    labels = np.asarray(labels)
    n, num_classes = log_posteriors.shape
    if labels.shape != (n,):
        raise DataError(f"{len(labels)} labels for {n} frames")
    if np.unique(labels).size < 2:
        raise DataError("post-layer training needs at least two distinct classes")
    order = rng.permutation(n)
    n_hold = max(1, int(round(holdout * n)))
    hold_idx = order[:n_hold]
    fit_idx = order[n_hold:]
    if fit_idx.size == 0:
        raise DataError("post-layer training set is empty after the holdout split")
    lp_fit, y_fit = log_posteriors[fit_idx], labels[fit_idx]
    lp_hold, y_hold = log_posteriors[hold_idx], labels[hold_idx]

    rpl = RplParams.identity(num_classes)
    best = RplParams(d=rpl.d.copy(), b=rpl.b.copy())
    best_ce = _rpl_ce(best, lp_hold, y_hold)
    rows = np.arange(len(y_fit))
    for _ in range(max_iter):
        probs = np.exp(log_softmax(rpl.d * lp_fit + rpl.b))
        probs[rows, y_fit] -= 1.0
        probs /= len(y_fit)
        rpl.d -= lr * (probs * lp_fit).sum(axis=0)
        rpl.b -= lr * probs.sum(axis=0)
        hold_ce = _rpl_ce(rpl, lp_hold, y_hold)
        if hold_ce < best_ce:
            best_ce = hold_ce
            best = RplParams(d=rpl.d.copy(), b=rpl.b.copy())
    return best


def evaluate_scenarios(master_logp: np.ndarray | None,
                       fold_logps: list[np.ndarray] | None,
                       rpl: RplParams | None, master_weight: float = 0.5,
                       scenarios=SCENARIOS) -> dict[str, np.ndarray]:
    """Posterior streams (T x C probabilities) for the requested scenarios."""
    out: dict[str, np.ndarray] = {}
    master_post = None if master_logp is None else np.exp(master_logp)
    fold_posts = None if not fold_logps else [np.exp(lp) for lp in fold_logps]
    for scenario in scenarios:
        base = scenario.removesuffix("+rpl")
        wants_rpl = scenario.endswith("+rpl")
        if base not in ("master", "folds", "master+folds"):
            raise ConfigError(f"unknown scenario {scenario!r}")
        if "master" in base and master_post is None:
            raise ConfigError(f"scenario {scenario!r} needs a master network")
        if "folds" in base and not fold_posts:
            raise ConfigError(f"scenario {scenario!r} needs fold networks")
        if wants_rpl and rpl is None:
            raise ConfigError(f"scenario {scenario!r} needs trained RPL parameters")
        combined = aggregate(fold_posts if "folds" in base else None,
                             master_post if "master" in base else None,
                             master_weight)
        out[scenario] = apply_rpl(rpl, combined) if wants_rpl else combined
    return out


def frame_ce(posteriors: np.ndarray, labels: np.ndarray) -> float:
    """Mean frame cross-entropy of a posterior stream against integer labels."""
    probs = np.maximum(posteriors[np.arange(len(labels)), labels], _PROB_FLOOR)
    return float(-np.mean(np.log(probs)))


def jensen_check(fold_logps: list[np.ndarray], labels: np.ndarray,
                 tol: float = 1e-12) -> tuple[float, float]:
    """(ensemble CE, mean member CE); raises if the Jensen bound is violated."""
    posts = [np.exp(lp) for lp in fold_logps]
    ens = frame_ce(aggregate(posts, None), labels)
    mean_members = float(np.mean([frame_ce(p, labels) for p in posts]))
    if ens > mean_members + tol:
        raise AssertionError(
            f"ensemble CE {ens} exceeds mean member CE {mean_members}")
    return ens, mean_members


# ---------------------------------------------------------------------------
# Ensemble manifest and RPL parameter files
# ---------------------------------------------------------------------------

_RPL_MAGIC = "nnam-rpl v1"
_MANIFEST_MAGIC = "nnam-ensemble v1"


def save_rpl(path, rpl: RplParams) -> None:
    lines = [f"{_RPL_MAGIC} {rpl.d.shape[0]}",
             " ".join(f"{v:.17g}" for v in rpl.d),
             " ".join(f"{v:.17g}" for v in rpl.b)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_rpl(path) -> RplParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_RPL_MAGIC):
        raise DataError(f"{path}: not an RPL parameter file")
    num_classes = int(lines[0].split()[-1])
    d = np.array(lines[1].split(), dtype=np.float64)
    b = np.array(lines[2].split(), dtype=np.float64)
    if d.shape != (num_classes,) or b.shape != (num_classes,):
        raise DataError(f"{path}: expected {num_classes} values per parameter row")
    return RplParams(d=d, b=b)


@dataclass
class EnsembleManifest:
    fold_files: list[str]
    master_file: str | None = None
    master_weight: float = 0.5
    rpl_file: str | None = None


def save_manifest(path, manifest: EnsembleManifest) -> None:
    lines = [_MANIFEST_MAGIC, f"master_weight {manifest.master_weight:.17g}"]
    if manifest.master_file:
        lines.append(f"master {manifest.master_file}")
    for f in manifest.fold_files:
        lines.append(f"fold {f}")
    if manifest.rpl_file:
        lines.append(f"rpl {manifest.rpl_file}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path) -> EnsembleManifest:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if not lines or lines[0] != _MANIFEST_MAGIC:
        raise DataError(f"{path}: not an ensemble manifest")
    manifest = EnsembleManifest(fold_files=[])
    for ln in lines[1:]:
        key, _, value = ln.partition(" ")
        if key == "master_weight":
            manifest.master_weight = float(value)
        elif key == "master":
            manifest.master_file = value
        elif key == "fold":
            manifest.fold_files.append(value)
        elif key == "rpl":
            manifest.rpl_file = value
        else:
            raise DataError(f"{path}: unknown manifest entry {key!r}")
    return manifest


@dataclass
class Ensemble:
    master: RecurrentNetwork | None
    folds: list[RecurrentNetwork]
    rpl: RplParams | None
    master_weight: float = 0.5

    def __post_init__(self):
        members = ([] if self.master is None else [self.master]) + self.folds
        if not members:
            raise ConfigError("an ensemble needs a master or at least one fold")
        dims = {(m.num_classes, m.input_dim, m.context) for m in members}
        if len(dims) != 1:
            raise ConfigError(f"ensemble members disagree on dimensions: {dims}")

    @property
    def num_classes(self) -> int:
        member = self.master if self.master is not None else self.folds[0]
        return member.num_classes


def load_ensemble(manifest_path) -> Ensemble:
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    master = load_model(base / manifest.master_file) if manifest.master_file else None
    folds = [load_model(base / f) for f in manifest.fold_files]
    rpl = load_rpl(base / manifest.rpl_file) if manifest.rpl_file else None
    return Ensemble(master=master, folds=folds, rpl=rpl,
                    master_weight=manifest.master_weight)
