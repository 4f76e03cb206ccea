"""Flat key=value configuration with documented defaults.

Precedence: built-in defaults < config file < command-line flags. Unknown
keys abort before any work. Values are coerced to the type of the default.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from .errors import ConfigError

# key: (default, help)
DEFAULTS: dict[str, tuple[object, str]] = {
    "synth.phones": (10, "number of synthetic phone symbols"),
    "synth.states": (2, "HMM states per phone"),
    "synth.dim": (12, "feature dimension"),
    "synth.train": (120, "training utterance count"),
    "synth.dev": (20, "development utterance count"),
    "synth.test": (20, "test utterance count"),
    "synth.len_min": (30, "minimum target frames per utterance"),
    "synth.len_max": (80, "maximum target frames per utterance"),
    "synth.noise": (0.5, "feature noise standard deviation"),
    "net.cell": ("lstm", "cell kind: lstm|gru|zoneout|ff"),
    "net.layers": (4, "hidden layer count"),
    "net.hidden": (512, "units per hidden layer"),
    "net.zoneout_c": (0.5, "zoneout keep probability for the cell state"),
    "net.zoneout_h": (0.5, "zoneout keep probability for the hidden state"),
    "train.stages": ("adam:512:1e-3,sgd:128:1e-3,sgd:128:1e-4,sgd:128:1e-5",
                     "recurrent stage plan as optimizer:batch:lr triples"),
    "train.batch": (256, "initial feed-forward batch size"),
    "train.lr": (1e-2, "initial feed-forward learning rate"),
    "train.momentum": (0.9, "SGD momentum"),
    "train.seed": (7, "random seed"),
    "train.context": (11, "stacked input frames (odd)"),
    "train.delay": (5, "output time delay for recurrent nets"),
    "train.max_epochs": (50, "safety cap on epochs per stage"),
    "train.scale_batches": (1.0, "multiplier applied to all stage batch sizes"),
    "train.clip": (5.0, "global gradient norm clip, 0 disables"),
    "dropout.kind": ("constant", "dropout schedule kind: constant|dynamic"),
    "dropout.p": (0.2, "constant dropout probability"),
    "dropout.peak": (0.15, "peak probability of the dynamic schedule"),
    "dropout.total_epochs": (20, "epoch span of the dynamic schedule"),
    "ensemble.folds": (5, "number of cross-validation folds"),
    "ensemble.master_weight": (0.5, "master weight in master+folds combination"),
    "rpl.lr": (0.1, "post-layer gradient descent step size"),
    "rpl.max_iter": (200, "post-layer gradient descent iterations"),
    "rpl.holdout": (0.1, "held-aside fraction for post-layer early stopping"),
    "decode.use_priors": (True, "divide posteriors by class priors"),
    "decode.acoustic_scale": (1.0, "acoustic log-score scale"),
    "decode.lm_weight": (1.0, "language model weight"),
    "experiment.repeats": (5, "training repetitions per scenario table"),
}


def _coerce(key: str, raw: object) -> object:
    default = DEFAULTS[key][0]
    if isinstance(raw, str):
        text = raw.strip()
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {text!r}")
        if isinstance(default, int):
            try:
                return int(text)
            except ValueError as exc:
                raise ConfigError(f"{key}: expected an integer, got {text!r}") from exc
        if isinstance(default, float):
            try:
                return float(text)
            except ValueError as exc:
                raise ConfigError(f"{key}: expected a number, got {text!r}") from exc
        return text
    if isinstance(default, bool) and not isinstance(raw, bool):
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, float) and isinstance(raw, (int, float)) \
            and not isinstance(raw, bool):
        return float(raw)
    if type(raw) is not type(default):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}")
    return raw


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment."""
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def build_config(file_values: dict | None = None, overrides: dict | None = None
                 ) -> dict[str, object]:
    """Merge defaults, config-file values, and explicit overrides (in that order)."""
    merged = {key: default for key, (default, _) in DEFAULTS.items()}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                merged[key] = _coerce(key, value)
    return merged


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
