"""Dataset container, text ingestion format, and the synthetic corpus generator.

A corpus directory holds ``train.txt`` / ``dev.txt`` / ``test.txt`` (utterance
records), ``phones.txt`` (one symbol per line, order defines phone indices),
and the decoder sidecars ``hmm.txt``, ``bigram.txt``, ``phone_map.txt``.

Utterance record format (UTF-8 text)::

    #utt <id> <T> <D>
    ... T lines of D space-separated reals ...
    #labels
    <T space-separated integer class labels>
    #phones
    <transcript symbols>

All invariants are checked at load time; downstream modules trust the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import atomic_write_text
from .decoder import (BigramLm, HmmState, PhoneHmmSet, PhoneSet, load_bigram,
                      load_hmms, load_phone_map, save_bigram, save_hmms,
                      save_phone_map)
from .errors import ConfigError, DataError
from .numeric import Rng

SPLITS = ("train", "dev", "test")


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    frame_labels: np.ndarray
    transcript: tuple[str, ...]

    def validate(self, num_classes: int, feature_dim: int, phones: set[str]) -> None:
        t_len = self.features.shape[0]
        if self.features.ndim != 2 or self.features.shape[1] != feature_dim:
            raise DataError(f"utterance {self.utt_id}: features shaped "
                            f"{self.features.shape}, want (T, {feature_dim})")
        if self.frame_labels.shape != (t_len,):
            raise DataError(f"utterance {self.utt_id}: {len(self.frame_labels)} labels "
                            f"for {t_len} frames")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"utterance {self.utt_id}: non-finite feature values")
        if t_len == 0:
            raise DataError(f"utterance {self.utt_id}: empty feature matrix")
        if not self.transcript:
            raise DataError(f"utterance {self.utt_id}: empty transcript")
        if np.any(self.frame_labels < 0) or np.any(self.frame_labels >= num_classes):
            raise DataError(f"utterance {self.utt_id}: label out of range "
                            f"[0, {num_classes})")
        unknown = [p for p in self.transcript if p not in phones]
        if unknown:
            raise DataError(f"utterance {self.utt_id}: unknown phones {unknown}")


@dataclass
class Corpus:
    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]
    phones: list[str]
    num_classes: int
    feature_dim: int

    def split(self, name: str) -> list[Utterance]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def validate(self) -> None:
        phones = set(self.phones)
        seen: set[str] = set()
        for name in SPLITS:
            for utt in self.split(name):
                utt.validate(self.num_classes, self.feature_dim, phones)
                if utt.utt_id in seen:
                    raise DataError(f"duplicate utterance id {utt.utt_id!r}")
                seen.add(utt.utt_id)


def _utterance_text(utt: Utterance) -> str:
    t_len, dim = utt.features.shape
    lines = [f"#utt {utt.utt_id} {t_len} {dim}"]
    for row in utt.features:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    lines.append("#labels")
    lines.append(" ".join(str(int(v)) for v in utt.frame_labels))
    lines.append("#phones")
    lines.append(" ".join(utt.transcript))
    return "\n".join(lines) + "\n"


def save_split(path, utterances: list[Utterance]) -> None:
    atomic_write_text(path, "".join(_utterance_text(u) for u in utterances))


def load_split(path) -> list[Utterance]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    utts: list[Utterance] = []
    pos = 0

    def fail(lineno: int, msg: str, utt_id: str = "?"):
        raise DataError(f"{path}:{lineno}: utterance {utt_id}: {msg}")

    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        head = lines[pos].split()
        if head[0] != "#utt" or len(head) != 4:
            fail(pos + 1, f"expected '#utt <id> <T> <D>', got {lines[pos]!r}")
        utt_id = head[1]
        try:
            t_len, dim = int(head[2]), int(head[3])
        except ValueError:
            fail(pos + 1, "T and D must be integers", utt_id)
        if pos + t_len + 4 > len(lines):
            fail(pos + 1, "truncated utterance record", utt_id)
        feats = np.empty((t_len, dim))
        for r in range(t_len):
            lineno = pos + 1 + r
            try:
                row = np.array(lines[lineno].split(), dtype=np.float64)
            except ValueError:
                fail(lineno + 1, "unparseable feature value", utt_id)
            if row.shape[0] != dim:
                fail(lineno + 1, f"{row.shape[0]} values in frame row, want {dim}", utt_id)
            feats[r] = row
        cursor = pos + 1 + t_len
        if lines[cursor].strip() != "#labels":
            fail(cursor + 1, f"expected '#labels', got {lines[cursor]!r}", utt_id)
        try:
            labels = np.array(lines[cursor + 1].split(), dtype=np.int64)
        except ValueError:
            fail(cursor + 2, "unparseable label value", utt_id)
        if labels.shape[0] != t_len:
            fail(cursor + 2, f"{labels.shape[0]} labels for {t_len} frames", utt_id)
        if lines[cursor + 2].strip() != "#phones":
            fail(cursor + 3, f"expected '#phones', got {lines[cursor + 2]!r}", utt_id)
        transcript = tuple(lines[cursor + 3].split())
        utts.append(Utterance(utt_id=utt_id, features=feats, frame_labels=labels,
                              transcript=transcript))
        pos = cursor + 4
    return utts


def save_corpus(directory, corpus: Corpus) -> None:
    directory = Path(directory)
    for name in SPLITS:
        save_split(directory / f"{name}.txt", corpus.split(name))
    atomic_write_text(directory / "phones.txt",
                      "".join(p + "\n" for p in corpus.phones))


def load_corpus(directory) -> Corpus:
    """Load and fully validate a corpus directory (requires the hmm sidecar,
    which declares the class alphabet size)."""
    directory = Path(directory)
    phones_path = directory / "phones.txt"
    if not phones_path.exists():
        raise DataError(f"missing {phones_path}")
    phones = [ln.strip() for ln in phones_path.read_text(encoding="utf-8").splitlines()
              if ln.strip()]
    hmms = load_hmms(directory / "hmm.txt", phones)
    splits = {name: load_split(directory / f"{name}.txt") for name in SPLITS}
    dims = {u.features.shape[1] for split in splits.values() for u in split}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dimensions across corpus: {sorted(dims)}")
    corpus = Corpus(train=splits["train"], dev=splits["dev"], test=splits["test"],
                    phones=phones, num_classes=hmms.num_classes,
                    feature_dim=dims.pop())
    corpus.validate()
    return corpus


def load_sidecars(directory, phones: list[str]) -> tuple[PhoneHmmSet, BigramLm, PhoneSet]:
    directory = Path(directory)
    hmms = load_hmms(directory / "hmm.txt", phones)
    lm = load_bigram(directory / "bigram.txt", phones)
    ps = load_phone_map(directory / "phone_map.txt", phones)
    return hmms, lm, ps


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    phones: int = 10
    states: int = 2
    dim: int = 12
    n_train: int = 120
    n_dev: int = 20
    n_test: int = 20
    len_min: int = 30
    len_max: int = 80
    noise: float = 0.5

    def __post_init__(self):
        if self.phones < 2 or self.dim < 1 or self.states < 1:
            raise ConfigError("synthetic corpus needs >= 2 phones, >= 1 state, >= 1 dim")
        if self.len_min < self.states or self.len_max < self.len_min:
            raise ConfigError("invalid utterance length range")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one utterance")
        if self.noise < 0:
            raise ConfigError("noise level must be >= 0")


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    hmms: PhoneHmmSet
    lm: BigramLm
    phone_map: PhoneSet

    def save(self, directory) -> None:
        directory = Path(directory)
        save_corpus(directory, self.corpus)
        save_hmms(directory / "hmm.txt", self.hmms)
        save_bigram(directory / "bigram.txt", self.lm)
        save_phone_map(directory / "phone_map.txt", self.phone_map)


def generate_synthetic(spec: SynthSpec, rng: Rng) -> SyntheticCorpus:
    """Sample a bigram-driven HMM corpus with state-dependent Gaussian features.

    Every utterance consists of whole phones: generation walks complete
    left-to-right HMMs until the sampled target length is reached, so the
    final utterance may run a few frames past the target. Class index =
    phone_index * states + state_index; features are the class mean plus
    ``noise`` times standard normal draws.
    """
    width = max(2, len(str(spec.phones - 1)))
    phones = [f"p{idx:0{width}d}" for idx in range(spec.phones)]
    num_classes = spec.phones * spec.states

    initial = rng.dirichlet(np.full(spec.phones, 2.0))
    trans = np.vstack([rng.dirichlet(np.full(spec.phones, 2.0))
                       for _ in range(spec.phones)])
    lm = BigramLm(phones=phones, initial=np.log(initial), trans=np.log(trans))

    half = np.log(0.5)
    states = {p: [HmmState(class_index=i * spec.states + s, selfloop=half, forward=half)
                  for s in range(spec.states)]
              for i, p in enumerate(phones)}
    hmms = PhoneHmmSet(phones=phones, states=states)

    means = rng.normal((num_classes, spec.dim))

    def sample_phone(dist: np.ndarray) -> int:
        idx = int(np.searchsorted(np.cumsum(dist), rng.random()))
        return min(idx, spec.phones - 1)

    def make_utterance(utt_id: str) -> Utterance:
        target = int(rng.integers(spec.len_min, spec.len_max + 1))
        labels: list[int] = []
        transcript: list[str] = []
        phone = sample_phone(initial)
        while True:
            transcript.append(phones[phone])
            for s in range(spec.states):
                labels.append(phone * spec.states + s)
                while rng.random() < 0.5:  # self-loop probability
                    labels.append(phone * spec.states + s)
            if len(labels) >= target:
                break
            phone = sample_phone(trans[phone])
        label_arr = np.array(labels, dtype=np.int64)
        feats = means[label_arr] + spec.noise * rng.normal((len(labels), spec.dim))
        return Utterance(utt_id=utt_id, features=feats, frame_labels=label_arr,
                         transcript=tuple(transcript))

    corpus = Corpus(
        train=[make_utterance(f"train-{k:04d}") for k in range(spec.n_train)],
        dev=[make_utterance(f"dev-{k:04d}") for k in range(spec.n_dev)],
        test=[make_utterance(f"test-{k:04d}") for k in range(spec.n_test)],
        phones=phones, num_classes=num_classes, feature_dim=spec.dim)
    corpus.validate()
    return SyntheticCorpus(corpus=corpus, hmms=hmms, lm=lm,
                           phone_map=PhoneSet.identity(phones))


def split_dev(utterances: list[Utterance], fraction: float, rng: Rng
              ) -> tuple[list[Utterance], list[Utterance]]:
    """Deterministic seeded utterance-level split into (rest, dev)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"dev fraction must be in (0,1), got {fraction}")
    n = len(utterances)
    k = int(round(fraction * n))
    if k == 0 or k == n:
        raise ConfigError(f"dev fraction {fraction} leaves an empty split for {n} utterances")
    order = rng.permutation(n)
    dev_idx = set(int(i) for i in order[:k])
    dev = [utterances[i] for i in sorted(dev_idx)]
    rest = [utterances[i] for i in range(n) if i not in dev_idx]
    return rest, dev
