"""Optimizers, batching, input preparation, and the staged training loops.

Recurrent nets train in four stages (Adam first, then SGD with momentum at
decaying learning rates); feed-forward nets train with SGD throughout,
reducing the learning rate tenfold and growing the batch size whenever the
development criterion rises. Every stage stops on a strict increase of the
development cross-entropy and rolls the parameters back to the best
development snapshot seen in that stage (the stage-entry model included).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError
from .network import Normalizer, RecurrentNetwork
from .numeric import Rng
from .regularization import DropoutSchedule, StopState, schedule_p, should_stop


@dataclass
class Stage:
    optimizer: str
    batch_size: int
    lr: float

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


@dataclass
class StagePlan:
    stages: list[Stage]

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("a stage plan needs at least one stage")

    @classmethod
    def default_recurrent(cls) -> "StagePlan":
        """Adam with batch 512 first, then momentum SGD at 1e-3, 1e-4, 1e-5."""
        return cls([Stage("adam", 512, 1e-3),
                    Stage("sgd", 128, 1e-3),
                    Stage("sgd", 128, 1e-4),
                    Stage("sgd", 128, 1e-5)])

    @classmethod
    def feedforward(cls, lr0: float = 1e-2, base_batch: int = 256) -> "StagePlan":
        """Three tenfold lr reductions; batch grows 256 -> 1024 -> 2048 and holds
        (scaled proportionally from ``base_batch``)."""
        batches = (base_batch, 4 * base_batch, 8 * base_batch, 8 * base_batch)
        return cls([Stage("sgd", b, lr0 * 0.1 ** i) for i, b in enumerate(batches)])

    @classmethod
    def parse(cls, text: str) -> "StagePlan":
        stages = []
        for part in text.split(","):
            fields = part.strip().split(":")
            if len(fields) != 3:
                raise ConfigError(f"stage must be optimizer:batch:lr, got {part!r}")
            stages.append(Stage(fields[0], int(fields[1]), float(fields[2])))
        return cls(stages)


class SgdMomentum:
    """v <- momentum * v - lr * g ; theta <- theta + v."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self._velocity: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v -= self.lr * g
            p += v


class Adam:
    """Bias-corrected Adam with beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(stage: Stage, momentum: float) -> SgdMomentum | Adam:
    if stage.optimizer == "adam":
        return Adam(stage.lr)
    return SgdMomentum(stage.lr, momentum)


# ---------------------------------------------------------------------------
# Input preparation
# ---------------------------------------------------------------------------


def stack_frames(features: np.ndarray, context: int) -> np.ndarray:
    """Concatenate each frame with its neighbours; edges repeat the end frames.

    ``context`` must be odd; context=1 is the identity.
    """
    if context % 2 != 1 or context < 1:
        raise ConfigError(f"context must be odd and positive, got {context}")
    if context == 1:
        return features
    half = context // 2
    t_len = features.shape[0]
    idx = np.clip(np.arange(-half, t_len + half), 0, t_len - 1)
    windows = [features[idx[k:k + t_len]] for k in range(context)]
    return np.hstack(windows)


def fit_normalizer(sequences: list[np.ndarray]) -> Normalizer:
    """Per-dimension mean/std over all frames; std floored at 1e-6."""
    if not sequences:
        raise DataError("cannot fit a normalizer on an empty dataset")
    stacked = np.vstack(sequences)
    shift = stacked.mean(axis=0)
    scale = np.maximum(stacked.std(axis=0), 1e-6)
    return Normalizer(shift=shift, scale=scale)


def make_batches(items: list, batch_size: int, rng: Rng) -> list[list]:
    """Shuffle whole utterances and chunk them into groups of batch_size."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    train_ce: float
    dev_ce: float
    dropout_p: float

    def line(self) -> str:
        return (f"{self.stage} {self.epoch} {self.train_ce:.6f} "
                f"{self.dev_ce:.6f} {self.dropout_p:.6f}")


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    stage_best_dev: list[float] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [r.line() for r in self.records]


def dataset_ce(net: RecurrentNetwork, data: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Eval-mode mean frame cross-entropy over all frames of a dataset."""
    total = 0.0
    frames = 0
    for x, y in data:
        logp = net.forward_sequence(x, "eval")
        total += float(-logp[np.arange(len(y)), y].sum())
        frames += len(y)
    return total / frames


def _batch_step(net: RecurrentNetwork, batch: list[tuple[np.ndarray, np.ndarray]],
                rng: Rng, clip: float) -> tuple[float, list[np.ndarray]]:
    """Mean per-frame loss over the batch and its clipped gradient."""
    total_frames = sum(len(y) for _, y in batch)
    acc: list[np.ndarray] | None = None
    loss_sum = 0.0
    for x, y in batch:
        loss, grads = net.backward_sequence(x, y, "train", rng)
        w = len(y)
        loss_sum += loss * w
        if acc is None:
            acc = [g * w for _, g in grads]
        else:
            for a, (_, g) in zip(acc, grads):
                a += g * w
    for a in acc:
        a /= total_frames
    if clip > 0:
        norm = float(np.sqrt(sum(float((a * a).sum()) for a in acc)))
        if norm > clip:
            for a in acc:
                a *= clip / norm
    return loss_sum / total_frames, acc


def _run_stages(net: RecurrentNetwork, train, dev, rng: Rng, plan: StagePlan, *,
                momentum: float, schedule: DropoutSchedule | None, max_epochs: int,
                scale_batches: float, clip: float) -> TrainLog:
    if not train or not dev:
        raise DataError("training and development sets must be nonempty")
    log = TrainLog()
    global_epoch = 0
    for stage_idx, stage in enumerate(plan.stages):
        optimizer = make_optimizer(stage, momentum)
        batch_size = max(1, int(round(stage.batch_size * scale_batches)))
        params = [arr for _, arr in net.parameter_blocks()]
        best_dev = dataset_ce(net, dev)
        best_snap = net.snapshot()
        stop_state = StopState()
        for epoch in range(max_epochs):
            if schedule is not None:
                p = schedule_p(schedule, min(global_epoch, schedule.total_epochs - 1))
                net.dropout_p = p
            else:
                p = net.dropout_p
            epoch_rng = rng.child()
            train_sum = 0.0
            frames = 0
            for batch in make_batches(train, batch_size, epoch_rng):
                loss, grads = _batch_step(net, batch, epoch_rng, clip)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"stage {stage_idx} epoch {epoch}: training loss is {loss}")
                optimizer.step(params, grads)
                n = sum(len(y) for _, y in batch)
                train_sum += loss * n
                frames += n
            dev_ce = dataset_ce(net, dev)
            if not np.isfinite(dev_ce):
                raise TrainingDivergedError(
                    f"stage {stage_idx} epoch {epoch}: dev criterion is {dev_ce}")
            log.records.append(EpochRecord(stage_idx, epoch, train_sum / frames,
                                           dev_ce, p))
            global_epoch += 1
            if dev_ce < best_dev:
                best_dev = dev_ce
                best_snap = net.snapshot()
            stop_state, stop = should_stop(stop_state, dev_ce)
            if stop:
                break
        net.restore(best_snap)
        log.stage_best_dev.append(best_dev)
    return log


def train_recurrent(net: RecurrentNetwork, train, dev, rng: Rng, *,
                    plan: StagePlan | None = None, momentum: float = 0.9,
                    schedule: DropoutSchedule | None = None, max_epochs: int = 50,
                    scale_batches: float = 1.0, clip: float = 5.0) -> TrainLog:
    """Four-stage recurrent training; mutates ``net`` and returns the epoch log.

    ``train``/``dev`` are lists of (stacked features, frame labels) pairs.
    """
    return _run_stages(net, train, dev, rng, plan or StagePlan.default_recurrent(),
                       momentum=momentum, schedule=schedule, max_epochs=max_epochs,
                       scale_batches=scale_batches, clip=clip)


def train_feedforward(net: RecurrentNetwork, train, dev, rng: Rng, *,
                      lr0: float = 1e-2, base_batch: int = 256,
                      momentum: float = 0.9,
                      schedule: DropoutSchedule | None = None, max_epochs: int = 50,
                      scale_batches: float = 1.0, clip: float = 5.0) -> TrainLog:
    """Feed-forward training: SGD+momentum, lr /10 per dev increase, batch
    sizes 256 -> 1024 -> 2048 -> 2048."""
    if net.kind != "ff":
        raise ConfigError(f"train_feedforward needs a feed-forward net, got {net.kind!r}")
    return _run_stages(net, train, dev, rng, StagePlan.feedforward(lr0, base_batch),
                       momentum=momentum, schedule=schedule, max_epochs=max_epochs,
                       scale_batches=scale_batches, clip=clip)


def prepare(utterances, context: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stack corpus utterances into (features, labels) training pairs."""
    return [(stack_frames(u.features, context), u.frame_labels) for u in utterances]
