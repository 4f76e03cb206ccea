"""Bigram phone-level Viterbi decoding, phone mapping, and PER scoring.

The decode graph is a set of left-to-right phone HMMs. A path starts in
state 0 of any phone (paying the weighted initial LM log-probability), moves
via per-state self-loop/forward log-probabilities, crosses phone boundaries
through the last state's forward arc (paying the weighted bigram
log-probability), and must end in the last state of its final phone. No exit
cost is charged at the end of the utterance.

Ties in path score are broken toward the lexicographically smallest phone
index sequence, then the smallest state path; `brute_force_decode` applies
the same rule globally by enumeration, which is what makes the
Viterbi-vs-oracle equivalence exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DecodeError, MappingError, OracleError, ScoringError

_LOGSUM_TOL = 1e-10


@dataclass
class PhoneSet:
    """Source phone alphabet plus the scoring-time mapping table."""

    phones: list[str]
    mapping: dict[str, str]

    def __post_init__(self):
        missing = [p for p in self.phones if p not in self.mapping]
        if missing:
            raise DataError(f"phones without mapping target: {missing}")

    @classmethod
    def identity(cls, phones: list[str]) -> "PhoneSet":
        return cls(phones=list(phones), mapping={p: p for p in phones})


@dataclass
class HmmState:
    class_index: int
    selfloop: float
    forward: float


@dataclass
class PhoneHmmSet:
    """Left-to-right HMM per phone; transition log-probs must normalize."""

    phones: list[str]
    states: dict[str, list[HmmState]]

    def __post_init__(self):
        for phone in self.phones:
            if phone not in self.states or not self.states[phone]:
                raise DataError(f"phone {phone!r} has no HMM states")
            for k, st in enumerate(self.states[phone]):
                total = np.logaddexp(st.selfloop, st.forward)
                if abs(total) > _LOGSUM_TOL:
                    raise DataError(
                        f"phone {phone!r} state {k}: transition probs sum to "
                        f"exp({total}) != 1")

    @property
    def num_classes(self) -> int:
        return 1 + max(st.class_index for phone in self.phones
                       for st in self.states[phone])


@dataclass
class BigramLm:
    """log P(next | prev) table plus initial log P(phone)."""

    phones: list[str]
    initial: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        n = len(self.phones)
        if self.initial.shape != (n,) or self.trans.shape != (n, n):
            raise DataError(f"bigram tables have shapes {self.initial.shape}/"
                            f"{self.trans.shape} for {n} phones")
        rows = [self.initial] + [self.trans[i] for i in range(n)]
        for i, row in enumerate(rows):
            total = float(np.logaddexp.reduce(row))
            if abs(total) > _LOGSUM_TOL:
                raise DataError(f"bigram row {i - 1 if i else 'initial'} sums to exp({total})")


@dataclass
class ClassPrior:
    log_prior: np.ndarray

    def __post_init__(self):
        total = float(np.logaddexp.reduce(self.log_prior))
        if abs(total) > _LOGSUM_TOL:
            raise DataError(f"class prior sums to exp({total}) != 1")


def posteriors_to_scores(log_posteriors: np.ndarray, priors: ClassPrior | None,
                         scale: float = 1.0) -> np.ndarray:
    """Hybrid scaled-likelihood conversion: scale * (log p(c|x) - log p(c))."""
    if scale <= 0:
        raise ValueError(f"acoustic scale must be positive, got {scale}")
    if priors is None:
        return scale * log_posteriors
    return scale * (log_posteriors - priors.log_prior)


def _lm_indexed(lm: BigramLm, phones: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Reorder LM tables to a phone list (decode graph order)."""
    try:
        idx = np.array([lm.phones.index(p) for p in phones])
    except ValueError as exc:
        raise DecodeError(f"phone missing from language model: {exc}") from exc
    return lm.initial[idx], lm.trans[np.ix_(idx, idx)]


def viterbi_decode(scores: np.ndarray, hmms: PhoneHmmSet, lm: BigramLm,
                   lm_weight: float = 1.0) -> tuple[tuple[str, ...], float]:
    """Exact best-path decode of a T x C acoustic score matrix.

    Returns the phone sequence of the single best complete-phone path and its
    total log score.
    """
    t_len = scores.shape[0]
    if t_len < 1:
        raise DecodeError("cannot decode an empty score matrix")
    if not hmms.phones:
        raise DecodeError("empty phone set")
    if hmms.num_classes > scores.shape[1]:
        raise DecodeError(f"HMM references class {hmms.num_classes - 1} but scores "
                          f"have only {scores.shape[1]} columns")
    phones = hmms.phones
    initial, trans = _lm_indexed(lm, phones)
    states = [hmms.states[p] for p in phones]

    def better(a, b):
        # a, b: (score, phone_seq, state_path); None loses to anything.
        if b is None:
            return True
        if a[0] != b[0]:
            return a[0] > b[0]
        return (a[1], a[2]) < (b[1], b[2])

    cur: dict[tuple[int, int], tuple] = {}
    for p, plist in enumerate(states):
        st = plist[0]
        entry = (lm_weight * initial[p] + scores[0, st.class_index], (p,), ((p, 0),))
        if better(entry, cur.get((p, 0))):
            cur[(p, 0)] = entry

    for t in range(1, t_len):
        nxt: dict[tuple[int, int], tuple] = {}

        def offer(key, cand):
            if better(cand, nxt.get(key)):
                nxt[key] = cand

        for (p, s), (sc, phs, path) in cur.items():
            st = states[p][s]
            offer((p, s), (sc + st.selfloop + scores[t, st.class_index],
                           phs, path + ((p, s),)))
            if s + 1 < len(states[p]):
                st2 = states[p][s + 1]
                offer((p, s + 1), (sc + st.forward + scores[t, st2.class_index],
                                   phs, path + ((p, s + 1),)))
            else:
                base = sc + st.forward
                for q in range(len(phones)):
                    st2 = states[q][0]
                    offer((q, 0), (base + lm_weight * trans[p, q]
                                   + scores[t, st2.class_index],
                                   phs + (q,), path + ((q, 0),)))
        cur = nxt

    best = None
    for (p, s), cand in cur.items():
        if s == len(states[p]) - 1 and better(cand, best):
            best = cand
    if best is None:
        raise DecodeError(f"no complete-phone path exists for {t_len} frames")
    return tuple(phones[p] for p in best[1]), float(best[0])


def brute_force_decode(scores: np.ndarray, hmms: PhoneHmmSet, lm: BigramLm,
                       lm_weight: float = 1.0, guard: int = 10 ** 7
                       ) -> tuple[tuple[str, ...], float]:
    """Enumerate every legal state path and return the maximum.

    Test oracle for :func:`viterbi_decode`; refuses to run past ``guard``
    enumerated complete paths.
    """
    t_len = scores.shape[0]
    if t_len < 1:
        raise DecodeError("cannot decode an empty score matrix")
    if not hmms.phones:
        raise DecodeError("empty phone set")
    phones = hmms.phones
    initial, trans = _lm_indexed(lm, phones)
    states = [hmms.states[p] for p in phones]

    best = None
    count = 0

    def extend(t, p, s, score, phs, path):
        nonlocal best, count
        if t == t_len - 1:
            count += 1
            if count > guard:
                raise OracleError(f"brute force path count exceeded guard {guard}")
            if s == len(states[p]) - 1:
                cand = (score, phs, path)
                if best is None or cand[0] > best[0] or \
                        (cand[0] == best[0] and (cand[1], cand[2]) < (best[1], best[2])):
                    best = cand
            return
        st = states[p][s]
        extend(t + 1, p, s, score + st.selfloop + scores[t + 1, st.class_index],
               phs, path + ((p, s),))
        if s + 1 < len(states[p]):
            st2 = states[p][s + 1]
            extend(t + 1, p, s + 1, score + st.forward + scores[t + 1, st2.class_index],
                   phs, path + ((p, s + 1),))
        else:
            for q in range(len(phones)):
                st2 = states[q][0]
                extend(t + 1, q, 0,
                       score + st.forward + lm_weight * trans[p, q]
                       + scores[t + 1, st2.class_index],
                       phs + (q,), path + ((q, 0),))

    for p in range(len(phones)):
        st = states[p][0]
        extend(0, p, 0, lm_weight * initial[p] + scores[0, st.class_index],
               (p,), ((p, 0),))
    if best is None:
        raise DecodeError(f"no complete-phone path exists for {t_len} frames")
    return tuple(phones[p] for p in best[1]), float(best[0])


def map_phones(seq, ps: PhoneSet) -> tuple[str, ...]:
    """Apply the phone mapping, merging adjacent duplicates the mapping creates.

    Runs that were already duplicated in the source stay duplicated.
    """
    out: list[str] = []
    last_src: str | None = None
    for sym in seq:
        if sym not in ps.mapping:
            raise MappingError(f"phone {sym!r} has no mapping entry")
        tgt = ps.mapping[sym]
        if out and out[-1] == tgt and sym != last_src:
            last_src = sym  # merged into the previous emission
            continue
        out.append(tgt)
        last_src = sym
    return tuple(out)


@dataclass
class PerCounts:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def percent(self) -> float:
        return 100.0 * self.errors / self.ref_len

    def __add__(self, other: "PerCounts") -> "PerCounts":
        return PerCounts(self.substitutions + other.substitutions,
                         self.deletions + other.deletions,
                         self.insertions + other.insertions,
                         self.ref_len + other.ref_len)


def per(reference, hypothesis) -> PerCounts:
    """Phone error rate from a minimal Levenshtein alignment (unit costs).

    On cost ties the backtrace prefers substitution, then deletion, then
    insertion.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ScoringError("reference transcript is empty")
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)
    s = d = ins_count = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins_count += 1
            j -= 1
    return PerCounts(substitutions=int(s), deletions=d, insertions=ins_count, ref_len=n)


def estimate_bigram(transcripts, phones: list[str]) -> BigramLm:
    """Add-one smoothed phone bigram and initial distribution."""
    transcripts = list(transcripts)
    if not transcripts:
        raise DataError("cannot estimate a bigram from an empty corpus")
    n = len(phones)
    index = {p: i for i, p in enumerate(phones)}
    pair = np.ones((n, n))
    first = np.ones(n)
    for tr in transcripts:
        if not tr:
            raise DataError("cannot estimate a bigram from an empty transcript")
        first[index[tr[0]]] += 1
        for a, b in zip(tr, tr[1:]):
            pair[index[a], index[b]] += 1
    return BigramLm(phones=list(phones),
                    initial=np.log(first / first.sum()),
                    trans=np.log(pair / pair.sum(axis=1, keepdims=True)))


def estimate_priors(label_arrays, num_classes: int) -> ClassPrior:
    """Add-one smoothed class frequencies over all training frames."""
    counts = np.ones(num_classes)
    total = 0
    for labels in label_arrays:
        counts += np.bincount(np.asarray(labels), minlength=num_classes)
        total += len(labels)
    if total == 0:
        raise DataError("cannot estimate priors from an empty corpus")
    return ClassPrior(log_prior=np.log(counts / counts.sum()))


# ---------------------------------------------------------------------------
# Sidecar text formats (whitespace-delimited, '#' comments).
# ---------------------------------------------------------------------------


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if stripped:
                yield lineno, stripped.split()


def save_phone_map(path, ps: PhoneSet) -> None:
    from .config import atomic_write_text

    atomic_write_text(path, "".join(f"{p} {ps.mapping[p]}\n" for p in ps.phones))


def load_phone_map(path, phones: list[str]) -> PhoneSet:
    mapping = {}
    for lineno, fields in _data_lines(path):
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected '<source> <target>'")
        mapping[fields[0]] = fields[1]
    return PhoneSet(phones=list(phones), mapping=mapping)


def save_bigram(path, lm: BigramLm) -> None:
    from .config import atomic_write_text

    lines = []
    for j, p in enumerate(lm.phones):
        lines.append(f"<s> {p} {lm.initial[j]:.17g}\n")
    for i, a in enumerate(lm.phones):
        for j, b in enumerate(lm.phones):
            lines.append(f"{a} {b} {lm.trans[i, j]:.17g}\n")
    atomic_write_text(path, "".join(lines))


def load_bigram(path, phones: list[str]) -> BigramLm:
    n = len(phones)
    index = {p: i for i, p in enumerate(phones)}
    initial = np.full(n, -np.inf)
    trans = np.full((n, n), -np.inf)
    for lineno, fields in _data_lines(path):
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected '<prev> <next> <logprob>'")
        prev, nxt, lp = fields
        if nxt not in index or (prev != "<s>" and prev not in index):
            raise DataError(f"{path}:{lineno}: unknown phone in {fields[:2]}")
        if prev == "<s>":
            initial[index[nxt]] = float(lp)
        else:
            trans[index[prev], index[nxt]] = float(lp)
    return BigramLm(phones=list(phones), initial=initial, trans=trans)


def save_hmms(path, hmms: PhoneHmmSet) -> None:
    from .config import atomic_write_text

    lines = []
    for p in hmms.phones:
        for k, st in enumerate(hmms.states[p]):
            lines.append(f"{p} {k} {st.class_index} {st.selfloop:.17g} {st.forward:.17g}\n")
    atomic_write_text(path, "".join(lines))


def load_hmms(path, phones: list[str]) -> PhoneHmmSet:
    table: dict[str, dict[int, HmmState]] = {p: {} for p in phones}
    for lineno, fields in _data_lines(path):
        if len(fields) != 5:
            raise DataError(
                f"{path}:{lineno}: expected '<phone> <state> <class> <selfloop> <forward>'")
        phone, state, cls, selfloop, forward = fields
        if phone not in table:
            raise DataError(f"{path}:{lineno}: unknown phone {phone!r}")
        table[phone][int(state)] = HmmState(class_index=int(cls),
                                            selfloop=float(selfloop),
                                            forward=float(forward))
    states = {}
    for p in phones:
        if not table[p]:
            raise DataError(f"{path}: phone {p!r} has no states")
        ordered = [table[p][k] for k in range(len(table[p]))]
        states[p] = ordered
    return PhoneHmmSet(phones=list(phones), states=states)
