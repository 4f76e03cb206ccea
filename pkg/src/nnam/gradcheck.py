"""Finite-difference verification of the analytic BPTT gradients.

The check rebuilds the exact training loss as a pure function of a flat
parameter vector (stochastic masks are replayed from a fixed seed) and
compares central differences against ``backward_sequence`` block by block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import ZoneoutConfig
from .network import RecurrentNetwork, init_network
from .numeric import Rng, finite_diff_gradient

DEFAULT_TOLERANCE = 1e-4
GRADCHECK_KINDS = ("lstm", "gru", "zoneout", "ff")


def flatten_blocks(blocks: list[tuple[str, np.ndarray]]) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in blocks])


def set_flat_params(net: RecurrentNetwork, theta: np.ndarray) -> None:
    pos = 0
    for _, arr in net.parameter_blocks():
        arr[...] = theta[pos:pos + arr.size].reshape(arr.shape)
        pos += arr.size
    if pos != theta.size:
        raise ValueError(f"flat vector has {theta.size} entries, network needs {pos}")


def sequence_loss(net: RecurrentNetwork, x: np.ndarray, y: np.ndarray,
                  mode: str, mask_seed: int) -> float:
    logp = net.forward_sequence(x, mode, Rng(mask_seed))
    return float(-np.mean(logp[np.arange(len(y)), y]))


@dataclass
class BlockReport:
    name: str
    rel_error: float


@dataclass
class GradcheckResult:
    kind: str
    seed: int
    max_rel_error: float
    worst_block: str
    blocks: list[BlockReport]

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_rel_error < tolerance


def check_network(net: RecurrentNetwork, x: np.ndarray, y: np.ndarray, *,
                  mode: str = "train", mask_seed: int = 0, h: float = 1e-5,
                  seed: int = 0, corrupt_block: str | None = None) -> GradcheckResult:
    """Compare analytic and central-difference gradients of the sequence loss.

    ``corrupt_block`` perturbs one analytic gradient block before comparison;
    it exists so the failure path itself can be tested.
    """
    _, analytic = net.backward_sequence(x, y, mode, Rng(mask_seed))
    analytic = dict(analytic)
    if corrupt_block is not None:
        if corrupt_block not in analytic:
            raise KeyError(f"unknown parameter block {corrupt_block!r}")
        analytic[corrupt_block] = analytic[corrupt_block] + 1.0

    theta0 = flatten_blocks(net.parameter_blocks())

    def f(theta: np.ndarray) -> float:
        set_flat_params(net, theta)
        return sequence_loss(net, x, y, mode, mask_seed)

    try:
        numeric = finite_diff_gradient(f, theta0, h)
    finally:
        set_flat_params(net, theta0)

    # Per-block norm comparison: elementwise ratios are dominated by the
    # O(h^2) truncation floor wherever a single coordinate's true gradient
    # is tiny, so the parameter-level error is measured on whole tensors.
    reports = []
    pos = 0
    for name, arr in net.parameter_blocks():
        num = numeric[pos:pos + arr.size]
        ana = analytic[name].ravel()
        rel = np.linalg.norm(ana - num) / (np.linalg.norm(ana) + np.linalg.norm(num) + 1e-8)
        reports.append(BlockReport(name=name, rel_error=float(rel)))
        pos += arr.size
    worst = max(reports, key=lambda r: r.rel_error)
    return GradcheckResult(kind=net.kind, seed=seed, max_rel_error=worst.rel_error,
                           worst_block=worst.name, blocks=reports)


def random_case(kind: str, seed: int) -> tuple[RecurrentNetwork, np.ndarray, np.ndarray]:
    """Small randomized network and sequence for one gradcheck trial."""
    rng = Rng(seed)
    draw = rng.integers
    input_dim = int(draw(2, 5))
    hidden = [int(draw(3, 7)), int(draw(3, 7))]
    num_classes = int(draw(3, 6))
    t_len = int(draw(2, 8))
    delay = 0 if kind == "ff" else int(draw(0, 3))
    dropout_p = float(rng.uniform(0.0, 0.4)) if draw(0, 2) else 0.0
    zc = ZoneoutConfig(float(rng.uniform(0.1, 0.6)), float(rng.uniform(0.1, 0.6))) \
        if kind == "zoneout" else None
    net = init_network(kind, input_dim, hidden, num_classes, rng.child(),
                       output_delay=delay, dropout_p=dropout_p, zoneout=zc)
    # Nudge all parameters off the init manifold (zero biases etc.).
    for _, arr in net.parameter_blocks():
        arr += 0.3 * rng.normal(arr.shape)
    x = rng.normal((t_len, input_dim))
    y = draw(0, num_classes, t_len)
    return net, x, np.asarray(y)


def run_battery(kinds=GRADCHECK_KINDS, n_seeds: int = 20, *, h: float = 1e-5,
                tolerance: float = DEFAULT_TOLERANCE, corrupt_block: str | None = None
                ) -> dict[str, GradcheckResult]:
    """Worst result over ``n_seeds`` randomized trials per cell kind."""
    worst: dict[str, GradcheckResult] = {}
    for kind in kinds:
        for seed in range(n_seeds):
            net, x, y = random_case(kind, 1000 * (GRADCHECK_KINDS.index(kind) + 1) + seed)
            res = check_network(net, x, y, mode="train", mask_seed=seed, h=h,
                                seed=seed, corrupt_block=corrupt_block)
            if kind not in worst or res.max_rel_error > worst[kind].max_rel_error:
                worst[kind] = res
    return worst
