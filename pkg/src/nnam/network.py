"""Stacked recurrent / feed-forward networks with an output softmax layer.

A network owns its input normalizer, a frame-stacking context width, an
output time delay, and per-layer dropout. ``forward_sequence`` consumes
already-stacked features (T x input_dim); ``log_posteriors`` is the pipeline
convenience that stacks raw corpus frames first.

Output delay: the log-posteriors for frame t are read from the recurrence at
time t + delay, with inputs past the end repeating the final frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells
from .errors import DataError, ShapeError
from .numeric import Rng, log_softmax
from .regularization import dropout_apply_seq

KINDS = ("lstm", "gru", "zoneout", "ff")


@dataclass
class Normalizer:
    """Per-dimension affine input transform: (x - shift) / scale."""

    shift: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) / self.scale

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(shift=np.zeros(dim), scale=np.ones(dim))


class RecurrentNetwork:
    """Stack of one cell kind plus an affine softmax output layer."""

    def __init__(self, kind: str, layers: list, w_out: np.ndarray, b_out: np.ndarray,
                 normalizer: Normalizer, output_delay: int = 0, context: int = 1,
                 dropout_p: float = 0.0, zoneout: cells.ZoneoutConfig | None = None):
        if kind not in KINDS:
            raise ValueError(f"unknown network kind {kind!r}")
        if kind == "zoneout" and zoneout is None:
            zoneout = cells.ZoneoutConfig()
        if kind == "ff" and output_delay != 0:
            raise ValueError("feed-forward networks do not support an output delay")
        if output_delay < 0:
            raise ValueError(f"output delay must be >= 0, got {output_delay}")
        self.kind = kind
        self.layers = layers
        self.w_out = w_out
        self.b_out = b_out
        self.normalizer = normalizer
        self.output_delay = output_delay
        self.context = context
        self.dropout_p = dropout_p
        self.zoneout = zoneout
        dims = [layers[0].input_dim] + [p.hidden_dim for p in layers]
        for lo, hi in zip(dims[1:-1], [p.input_dim for p in layers[1:]]):
            if lo != hi:
                raise ShapeError(f"layer dims do not chain: {dims}")
        if w_out.shape[1] != dims[-1] or w_out.shape[0] != b_out.shape[0]:
            raise ShapeError(f"output layer {w_out.shape} does not fit top dim {dims[-1]}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def num_classes(self) -> int:
        return self.w_out.shape[0]

    @property
    def hidden_dims(self) -> list[int]:
        return [p.hidden_dim for p in self.layers]

    # -- parameters -------------------------------------------------------

    def parameter_blocks(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.blocks():
                named.append((f"layer{idx}.{name}", arr))
        named.append(("out.w", self.w_out))
        named.append(("out.b", self.b_out))
        return named

    def snapshot(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.parameter_blocks()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for (_, arr), saved in zip(self.parameter_blocks(), snap):
            arr[...] = saved

    # -- forward / backward -------------------------------------------------

    def _extended_input(self, features: np.ndarray) -> np.ndarray:
        if features.ndim != 2 or features.shape[0] == 0:
            raise DataError(f"expected a nonempty T x D sequence, got shape {features.shape}")
        if features.shape[1] != self.input_dim:
            raise ShapeError(
                f"sequence dim {features.shape[1]} != network input dim {self.input_dim}")
        xn = self.normalizer.apply(features)
        if self.output_delay:
            tail = np.repeat(xn[-1:], self.output_delay, axis=0)
            xn = np.vstack([xn, tail])
        return xn

    def _forward(self, features: np.ndarray, mode: str, rng: Rng | None
                 ) -> tuple[np.ndarray, dict]:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        needs_rng = mode == "train" and (
            self.dropout_p > 0.0 or (self.kind == "zoneout" and self.zoneout is not None))
        if needs_rng and rng is None:
            raise ValueError("train-mode forward with dropout/zoneout needs an rng")
        x = self._extended_input(features)
        layer_caches = []
        drop_masks = []
        for layer in self.layers:
            if self.kind == "lstm":
                x, cache = cells.lstm_layer_forward(layer, x, None, mode, rng)
            elif self.kind == "zoneout":
                x, cache = cells.lstm_layer_forward(layer, x, self.zoneout, mode, rng)
            elif self.kind == "gru":
                x, cache = cells.gru_layer_forward(layer, x, mode, rng)
            else:
                x, cache = cells.ff_layer_forward(layer, x)
            x, mask = dropout_apply_seq(x, self.dropout_p, mode, rng)
            layer_caches.append(cache)
            drop_masks.append(mask)
            x = np.ascontiguousarray(x)
        logits = x[self.output_delay:] @ self.w_out.T + self.b_out
        logp = log_softmax(logits)
        fwd = {"layers": layer_caches, "drop_masks": drop_masks, "top": x, "logp": logp}
        return logp, fwd

    def forward_sequence(self, features: np.ndarray, mode: str = "eval",
                         rng: Rng | None = None) -> np.ndarray:
        """T x C log-posteriors for a stacked T x input_dim sequence."""
        logp, _ = self._forward(features, mode, rng)
        return logp

    def log_posteriors(self, raw_features: np.ndarray) -> np.ndarray:
        """Eval-mode log-posteriors for raw corpus frames (stacks by context first)."""
        from .training import stack_frames

        return self.forward_sequence(stack_frames(raw_features, self.context), "eval", None)

    def backward_sequence(self, features: np.ndarray, targets: np.ndarray,
                          mode: str = "train", rng: Rng | None = None
                          ) -> tuple[float, list[tuple[str, np.ndarray]]]:
        """Mean frame cross-entropy and its exact gradients (sampled masks held fixed)."""
        targets = np.asarray(targets)
        t_len = features.shape[0]
        if targets.shape != (t_len,):
            raise ShapeError(f"targets shape {targets.shape} != ({t_len},)")
        logp, fwd = self._forward(features, mode, rng)
        loss = float(-np.mean(logp[np.arange(t_len), targets]))

        dlogits = np.exp(logp)
        dlogits[np.arange(t_len), targets] -= 1.0
        dlogits /= t_len

        top = fwd["top"]
        d_top = np.zeros_like(top)
        d_top[self.output_delay:] = dlogits @ self.w_out
        grads: dict[str, np.ndarray] = {
            "out.w": dlogits.T @ top[self.output_delay:],
            "out.b": dlogits.sum(axis=0),
        }
        d_cur = d_top
        for idx in reversed(range(len(self.layers))):
            mask = fwd["drop_masks"][idx]
            if mask is not None:
                d_cur = d_cur * mask
            layer = self.layers[idx]
            cache = fwd["layers"][idx]
            if self.kind in ("lstm", "zoneout"):
                d_cur, layer_grads = cells.lstm_layer_backward(layer, cache, d_cur)
            elif self.kind == "gru":
                d_cur, layer_grads = cells.gru_layer_backward(layer, cache, d_cur)
            else:
                d_cur, layer_grads = cells.ff_layer_backward(layer, cache, d_cur)
            for name, g in layer_grads.items():
                grads[f"layer{idx}.{name}"] = g
        ordered = [(name, grads[name]) for name, _ in self.parameter_blocks()]
        return loss, ordered


def init_network(kind: str, input_dim: int, hidden_dims: list[int], num_classes: int,
                 rng: Rng, *, context: int = 1, output_delay: int = 0,
                 dropout_p: float = 0.0, zoneout: cells.ZoneoutConfig | None = None,
                 normalizer: Normalizer | None = None) -> RecurrentNetwork:
    """Build a freshly initialized network; ``input_dim`` is the stacked dimension."""
    if kind not in KINDS:
        raise ValueError(f"unknown network kind {kind!r}")
    if not hidden_dims:
        raise ValueError("at least one hidden layer is required")
    param_cls = {"lstm": cells.LstmParams, "zoneout": cells.LstmParams,
                 "gru": cells.GruParams, "ff": cells.FfParams}[kind]
    layers = []
    prev = input_dim
    for hd in hidden_dims:
        layers.append(param_cls.init(prev, hd, rng))
        prev = hd
    w_out = cells.glorot(rng, num_classes, prev)
    b_out = np.zeros(num_classes)
    if normalizer is None:
        normalizer = Normalizer.identity(input_dim)
    return RecurrentNetwork(kind, layers, w_out, b_out, normalizer,
                            output_delay=output_delay, context=context,
                            dropout_p=dropout_p, zoneout=zoneout)


# ---------------------------------------------------------------------------
# Model file format: header line
#   nnam-model v1 <kind> <num_layers> <input_dim> <hidden...> <num_classes> k=v...
# followed by one block per tensor ("tensor <name> <rows> <cols>" plus row-major
# values, 17 significant digits), ending with "end". Round-trips bit-exactly.
# ---------------------------------------------------------------------------

_MAGIC = "nnam-model"
_VERSION = "v1"


def _format_row(row: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in row)


def _tensor_block(name: str, arr: np.ndarray) -> list[str]:
    if arr.ndim == 1:
        lines = [f"tensor {name} 1 {arr.shape[0]}", _format_row(arr)]
    else:
        lines = [f"tensor {name} {arr.shape[0]} {arr.shape[1]}"]
        lines.extend(_format_row(row) for row in arr)
    return lines


def model_to_text(net: RecurrentNetwork) -> str:
    dims = [net.input_dim] + net.hidden_dims + [net.num_classes]
    meta = [f"delay={net.output_delay}", f"context={net.context}",
            f"dropout={net.dropout_p:.17g}"]
    if net.zoneout is not None:
        meta.append(f"zoneout_c={net.zoneout.d_c:.17g}")
        meta.append(f"zoneout_h={net.zoneout.d_h:.17g}")
    header = " ".join([_MAGIC, _VERSION, net.kind, str(len(net.layers))]
                      + [str(d) for d in dims] + meta)
    lines = [header]
    lines.extend(_tensor_block("norm.shift", net.normalizer.shift))
    lines.extend(_tensor_block("norm.scale", net.normalizer.scale))
    for name, arr in net.parameter_blocks():
        lines.extend(_tensor_block(name, arr))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(net: RecurrentNetwork, path) -> None:
    from .config import atomic_write_text

    atomic_write_text(path, model_to_text(net))


def model_from_text(text: str) -> RecurrentNetwork:
    lines = text.splitlines()
    if not lines:
        raise DataError("empty model file")
    head = lines[0].split()
    if head[:2] != [_MAGIC, _VERSION]:
        raise DataError(f"bad model header: {lines[0]!r}")
    kind = head[2]
    n_layers = int(head[3])
    dims = [int(tok) for tok in head[4:4 + n_layers + 2]]
    meta = dict(tok.split("=", 1) for tok in head[4 + n_layers + 2:])

    tensors: dict[str, np.ndarray] = {}
    pos = 1
    while pos < len(lines):
        if lines[pos] == "end":
            break
        fields = lines[pos].split()
        if fields[0] != "tensor" or len(fields) != 4:
            raise DataError(f"bad tensor block at line {pos + 1}: {lines[pos]!r}")
        name, rows, cols = fields[1], int(fields[2]), int(fields[3])
        arr = np.empty((rows, cols))
        for r in range(rows):
            row = np.array(lines[pos + 1 + r].split(), dtype=np.float64)
            if row.shape[0] != cols:
                raise DataError(f"tensor {name} row {r} has {row.shape[0]} values, want {cols}")
            arr[r] = row
        tensors[name] = arr
        pos += 1 + rows
    else:
        raise DataError("model file missing 'end' marker")

    def fetch(key: str, vector: bool) -> np.ndarray:
        if key not in tensors:
            raise DataError(f"model file missing tensor {key}")
        return tensors[key][0] if vector else tensors[key]

    param_cls = {"lstm": cells.LstmParams, "zoneout": cells.LstmParams,
                 "gru": cells.GruParams, "ff": cells.FfParams}[kind]
    layers = []
    for idx in range(n_layers):
        fieldvals = {fname: fetch(f"layer{idx}.{fname}", fname.startswith("b"))
                     for fname in param_cls.FIELDS}
        layers.append(param_cls(**fieldvals))
    w_out = fetch("out.w", vector=False)
    b_out = fetch("out.b", vector=True)
    normalizer = Normalizer(shift=fetch("norm.shift", True), scale=fetch("norm.scale", True))
    zoneout = None
    if "zoneout_c" in meta:
        zoneout = cells.ZoneoutConfig(float(meta["zoneout_c"]), float(meta["zoneout_h"]))
    return RecurrentNetwork(kind, layers, w_out, b_out, normalizer,
                            output_delay=int(meta.get("delay", 0)),
                            context=int(meta.get("context", 1)),
                            dropout_p=float(meta.get("dropout", 0.0)),
                            zoneout=zoneout)


def load_model(path) -> RecurrentNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_text(fh.read())
