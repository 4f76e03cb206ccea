"""Scikit-learn style estimators over variable-length labeled sequences.

``X`` is a list of (T_i, D) float arrays and ``y`` a parallel list of length-T_i
integer frame-label arrays (the hmmlearn-style convention for sequence data).
Both classes follow the sklearn contract: constructors only store
hyperparameters, ``fit`` returns ``self``, and ``get_params``/``set_params``/
``clone`` work as usual, so model selection utilities compose with them.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone

from . import ensemble as ens
from .cells import ZoneoutConfig
from .corpus import Utterance
from .errors import ConfigError
from .network import init_network
from .numeric import Rng
from .regularization import DropoutSchedule
from .training import (StagePlan, fit_normalizer, stack_frames,
                       train_feedforward, train_recurrent)


def check_sequences(X, y=None, *, feature_dim: int | None = None):
    """Validate ragged sequence data; returns (X, y) as float64/int64 arrays."""
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("X must be a nonempty list of (T, D) arrays")
    xs = []
    for i, seq in enumerate(X):
        arr = np.asarray(seq, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError(f"X[{i}] must be a nonempty 2-D array, got shape {arr.shape}")
        if feature_dim is None:
            feature_dim = arr.shape[1]
        elif arr.shape[1] != feature_dim:
            raise ValueError(f"X[{i}] has {arr.shape[1]} features, expected {feature_dim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"X[{i}] contains non-finite values")
        xs.append(arr)
    if y is None:
        return xs, None
    if len(y) != len(xs):
        raise ValueError(f"got {len(xs)} sequences but {len(y)} label arrays")
    ys = []
    for i, (arr, labels) in enumerate(zip(xs, y)):
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (arr.shape[0],):
            raise ValueError(f"y[{i}] has shape {lab.shape}, expected ({arr.shape[0]},)")
        if np.any(lab < 0):
            raise ValueError(f"y[{i}] contains negative labels")
        ys.append(lab)
    return xs, ys


class SequenceNetClassifier(BaseEstimator):
    """Recurrent (or feed-forward) frame classifier with the staged trainer.

    Parameters mirror the toolkit configuration; ``cell`` selects
    lstm | gru | zoneout | ff. After ``fit`` the trained network is available
    as ``net_`` and the per-epoch log as ``train_log_``.
    """

    def __init__(self, cell="lstm", layers=4, hidden=512, context=1, delay=5,
                 dropout=0.2, dropout_kind="constant", dropout_peak=0.15,
                 dropout_total_epochs=20, zoneout_c=0.5, zoneout_h=0.5,
                 stages=None, lr=1e-2, momentum=0.9, max_epochs=50,
                 scale_batches=1.0, clip=5.0, dev_fraction=0.1, seed=0):
        self.cell = cell
        self.layers = layers
        self.hidden = hidden
        self.context = context
        self.delay = delay
        self.dropout = dropout
        self.dropout_kind = dropout_kind
        self.dropout_peak = dropout_peak
        self.dropout_total_epochs = dropout_total_epochs
        self.zoneout_c = zoneout_c
        self.zoneout_h = zoneout_h
        self.stages = stages
        self.lr = lr
        self.momentum = momentum
        self.max_epochs = max_epochs
        self.scale_batches = scale_batches
        self.clip = clip
        self.dev_fraction = dev_fraction
        self.seed = seed

    def _schedule(self) -> DropoutSchedule:
        return DropoutSchedule(kind=self.dropout_kind, p_const=self.dropout,
                               peak_p=self.dropout_peak,
                               total_epochs=self.dropout_total_epochs)

    def fit(self, X, y, dev=None):
        """Train on sequences; ``dev`` is an optional (X_dev, y_dev) pair used
        for early stopping (a seeded slice of the training data otherwise)."""
        xs, ys = check_sequences(X, y)
        rng = Rng(self.seed)
        if dev is not None:
            dev_x, dev_y = check_sequences(dev[0], dev[1], feature_dim=xs[0].shape[1])
        else:
            n_dev = max(1, int(round(self.dev_fraction * len(xs))))
            if n_dev >= len(xs):
                raise ValueError("not enough sequences to carve out a dev slice")
            order = rng.permutation(len(xs))
            dev_idx = set(int(i) for i in order[:n_dev])
            dev_x = [xs[i] for i in sorted(dev_idx)]
            dev_y = [ys[i] for i in sorted(dev_idx)]
            xs = [x for i, x in enumerate(xs) if i not in dev_idx]
            ys = [t for i, t in enumerate(ys) if i not in dev_idx]
        num_classes = 1 + max(int(t.max()) for t in ys + dev_y)
        context = self.context
        train_pairs = [(stack_frames(x, context), t) for x, t in zip(xs, ys)]
        dev_pairs = [(stack_frames(x, context), t) for x, t in zip(dev_x, dev_y)]

        zoneout = ZoneoutConfig(self.zoneout_c, self.zoneout_h) \
            if self.cell == "zoneout" else None
        net = init_network(self.cell, train_pairs[0][0].shape[1],
                           [self.hidden] * self.layers, num_classes, rng.child(),
                           context=context,
                           output_delay=0 if self.cell == "ff" else self.delay,
                           dropout_p=self.dropout, zoneout=zoneout)
        net.normalizer = fit_normalizer([x for x, _ in train_pairs])
        common = dict(momentum=self.momentum, schedule=self._schedule(),
                      max_epochs=self.max_epochs, scale_batches=self.scale_batches,
                      clip=self.clip)
        if self.cell == "ff":
            log = train_feedforward(net, train_pairs, dev_pairs, rng.child(),
                                    lr0=self.lr, **common)
        else:
            plan = StagePlan.parse(self.stages) if isinstance(self.stages, str) \
                else (self.stages or StagePlan.default_recurrent())
            log = train_recurrent(net, train_pairs, dev_pairs, rng.child(),
                                  plan=plan, **common)
        self.net_ = net
        self.train_log_ = log
        self.classes_ = np.arange(num_classes)
        return self

    def predict_log_proba(self, X):
        """Per-sequence (T, C) log-posterior arrays."""
        xs, _ = check_sequences(X)
        return [self.net_.log_posteriors(x) for x in xs]

    def predict(self, X):
        return [lp.argmax(axis=1) for lp in self.predict_log_proba(X)]

    def score(self, X, y):
        """Mean frame accuracy over all frames."""
        _, ys = check_sequences(X, y)
        preds = self.predict(X)
        hit = sum(int((p == t).sum()) for p, t in zip(preds, ys))
        total = sum(len(t) for t in ys)
        return hit / total


class CroggingEnsemble(BaseEstimator):
    """K-fold crogging ensemble with optional master network and post-layer.

    Clones ``base`` (a :class:`SequenceNetClassifier`) once per fold, trains
    each clone on the fold's complement with the fold as its early-stopping
    set, and averages member posteriors at prediction time. The post-layer is
    fit on the folds' held-out predictions.
    """

    def __init__(self, base=None, folds=5, master=True, master_weight=0.5,
                 rpl=True, rpl_lr=0.1, rpl_max_iter=200, rpl_holdout=0.1,
                 scenario="master+folds", seed=0):
        self.base = base
        self.folds = folds
        self.master = master
        self.master_weight = master_weight
        self.rpl = rpl
        self.rpl_lr = rpl_lr
        self.rpl_max_iter = rpl_max_iter
        self.rpl_holdout = rpl_holdout
        self.scenario = scenario
        self.seed = seed

    def _base(self) -> SequenceNetClassifier:
        return clone(self.base) if self.base is not None else SequenceNetClassifier()

    def fit(self, X, y, dev=None):
        xs, ys = check_sequences(X, y)
        rng = Rng(self.seed)
        utts = [Utterance(utt_id=f"u{i:05d}", features=x, frame_labels=t,
                          transcript=("_",))
                for i, (x, t) in enumerate(zip(xs, ys))]
        split = ens.split_folds([u.utt_id for u in utts], self.folds, rng.child())

        def fit_fold(train_utts, dev_utts, child_rng):
            est = self._base()
            est.set_params(seed=int(child_rng.integers(0, 2 ** 31)))
            est.fit([u.features for u in train_utts],
                    [u.frame_labels for u in train_utts],
                    dev=([u.features for u in dev_utts],
                         [u.frame_labels for u in dev_utts]))
            return est.net_

        fold_nets, held_out = ens.train_crogging(utts, split, fit_fold, rng.child())
        self.fold_nets_ = fold_nets
        self.split_ = split

        if self.master:
            est = self._base()
            est.set_params(seed=int(rng.integers(0, 2 ** 31)))
            est.fit(xs, ys, dev=dev)
            self.master_net_ = est.net_
        else:
            self.master_net_ = None

        if self.rpl:
            lp = np.vstack([held_out[u.utt_id] for u in utts])
            labels = np.concatenate([u.frame_labels for u in utts])
            self.rpl_ = ens.train_rpl(lp, labels, rng.child(), lr=self.rpl_lr,
                                      max_iter=self.rpl_max_iter,
                                      holdout=self.rpl_holdout)
        else:
            self.rpl_ = None
        self.classes_ = np.arange(fold_nets[0].num_classes)
        return self

    def _streams(self, x, scenario):
        parts = scenario.removesuffix("+rpl").split("+")
        master_lp = None
        if "master" in parts:
            if self.master_net_ is None:
                raise ConfigError(f"scenario {scenario!r} needs a master network")
            master_lp = self.master_net_.log_posteriors(x)
        fold_lps = [net.log_posteriors(x) for net in self.fold_nets_] \
            if "folds" in parts else None
        return ens.evaluate_scenarios(master_lp, fold_lps, self.rpl_,
                                      self.master_weight, scenarios=(scenario,))

    def predict_proba(self, X, scenario: str | None = None):
        """Per-sequence (T, C) posterior arrays for the configured scenario."""
        xs, _ = check_sequences(X)
        scenario = scenario or self.scenario
        return [self._streams(x, scenario)[scenario] for x in xs]

    def predict(self, X, scenario: str | None = None):
        return [p.argmax(axis=1) for p in self.predict_proba(X, scenario)]

    def score(self, X, y):
        _, ys = check_sequences(X, y)
        preds = self.predict(X)
        hit = sum(int((p == t).sum()) for p, t in zip(preds, ys))
        return hit / sum(len(t) for t in ys)
