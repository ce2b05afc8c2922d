"""DNA sequence primitives: validation, complements, generation, mutation
and one-hot pair encoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

ALPHABET = "ACGT"
_COMPLEMENT = str.maketrans("ACGT", "TGCA")
_INDEX = {base: i for i, base in enumerate(ALPHABET)}

MAX_LENGTH = 64
LIBRARY_MIN_LENGTH = 18
LIBRARY_MAX_LENGTH = 26
DEFAULT_N_MAX = 26
LENGTH_RETRY_CAP = 16
SEVERE_COUNT_CAP = 8


class SequenceError(ValueError):
    """Base class for sequence validation problems."""


class InvalidBase(SequenceError):
    def __init__(self, symbol, position):
        super().__init__(f"invalid base {symbol!r} at index {position}")
        self.symbol = symbol
        self.position = position


class EmptySequence(SequenceError):
    pass


class BadLength(SequenceError):
    pass


class TooLong(SequenceError):
    pass


class DnaSeq(str):
    """An uppercase ACGT string.

    Behaves like ``str`` everywhere; construction validates the content.
    """

    __slots__ = ()

    def __new__(cls, text):
        if isinstance(text, DnaSeq):
            return text
        text = str(text).strip().upper()
        if not text:
            raise EmptySequence("empty sequence")
        if len(text) > MAX_LENGTH:
            raise TooLong(f"sequence of length {len(text)} exceeds {MAX_LENGTH}")
        for i, base in enumerate(text):
            if base not in _INDEX:
                raise InvalidBase(base, i)
        return super().__new__(cls, text)

    def __repr__(self):
        return f"DnaSeq({str(self)})"


def parse(text) -> DnaSeq:
    """Validate ``text`` and return it as an uppercase :class:`DnaSeq`."""
    return DnaSeq(text)


def reverse_complement(s) -> DnaSeq:
    return DnaSeq(str(s).translate(_COMPLEMENT)[::-1])


def gc_content(s) -> float:
    s = str(s)
    return (s.count("G") + s.count("C")) / len(s)


def max_run(s) -> int:
    """Length of the longest homopolymer run in ``s``."""
    best = run = 1
    for prev, cur in zip(s, s[1:]):
        run = run + 1 if cur == prev else 1
        best = max(best, run)
    return best


def random_seq(length: int, rng: np.random.Generator) -> DnaSeq:
    """Draw a sequence uniformly from those without a homopolymer run of 3.

    Sampling is exact: a backward pass counts admissible completions for
    each (position, last base, current run) state, and the forward pass
    picks each base with probability proportional to those counts.
    """
    if not LIBRARY_MIN_LENGTH <= length <= LIBRARY_MAX_LENGTH:
        raise BadLength(
            f"length must be in [{LIBRARY_MIN_LENGTH}, {LIBRARY_MAX_LENGTH}], got {length}"
        )
    # completions[i][r] = admissible suffixes of length i given the last
    # emitted base has run length r (1 or 2); the count is base-independent.
    completions = [[1, 1]]
    for _ in range(length - 1):
        c1, c2 = completions[-1]
        # same base extends the run (only from r=1), any of 3 others resets it
        completions.append([c2 + 3 * c1, 3 * c1])
    u = rng.random(length)
    out = [ALPHABET[min(int(u[0] * 4), 3)]]
    run = 1
    for pos in range(1, length):
        remaining = length - pos - 1
        c_new = completions[remaining][0]
        c_same = 0 if run == 2 else completions[remaining][1]
        # candidates in ALPHABET order; the repeated base gets c_same
        target = u[pos] * (3 * c_new + c_same)
        for base in ALPHABET:
            w = c_same if base == out[-1] else c_new
            if target < w:
                break
            target -= w
        else:
            base = next(b for b in reversed(ALPHABET) if b != out[-1] or c_same)
        run = run + 1 if base == out[-1] else 1
        out.append(base)
    return DnaSeq("".join(out))


# ---------------------------------------------------------------- mutation

OPS = ("insert", "delete", "substitute")


@dataclass(frozen=True)
class MutationProfile:
    kind: str
    ops: tuple = OPS
    count_range: tuple = (1, 2)

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad count_range {self.count_range}")
        if not self.ops or any(op not in OPS for op in self.ops):
            raise ValueError(f"ops must be a non-empty subset of {OPS}")
        if self.kind == "minor":
            if len(self.ops) != 1 or hi > 2:
                raise ValueError("minor profiles use one op kind applied at most twice")
        elif self.kind == "severe":
            if set(self.ops) != set(OPS) or lo < 5:
                raise ValueError("severe profiles use all op kinds at least five times")
        else:
            raise ValueError(f"unknown profile kind {self.kind!r}")

    @classmethod
    def minor(cls, op: str, count_range=(1, 2)):
        return cls("minor", (op,), tuple(count_range))

    @classmethod
    def severe(cls, cap: int = SEVERE_COUNT_CAP):
        return cls("severe", OPS, (5, cap))


def _apply_op(s: str, op: str, rng: np.random.Generator) -> str:
    if op == "substitute":
        i = int(rng.integers(len(s)))
        choices = [b for b in ALPHABET if b != s[i]]
        return s[:i] + choices[rng.integers(3)] + s[i + 1:]
    if op == "insert":
        i = int(rng.integers(len(s) + 1))
        return s[:i] + ALPHABET[rng.integers(4)] + s[i:]
    i = int(rng.integers(len(s)))
    return s[:i] + s[i + 1:]


def mutate(s, profile: MutationProfile, rng: np.random.Generator,
           min_len: int = LIBRARY_MIN_LENGTH, max_len: int = LIBRARY_MAX_LENGTH) -> DnaSeq:
    """Apply a random edit script drawn from ``profile``.

    The number of edits is uniform over ``profile.count_range``. Each edit
    picks an op from ``profile.ops``; ops that would leave the length window
    are redrawn up to ``LENGTH_RETRY_CAP`` times, then skipped.
    """
    lo, hi = profile.count_range
    count = int(rng.integers(lo, hi + 1))
    out = str(s)
    for _ in range(count):
        for _attempt in range(LENGTH_RETRY_CAP):
            op = profile.ops[rng.integers(len(profile.ops))]
            delta = {"insert": 1, "delete": -1, "substitute": 0}[op]
            if min_len <= len(out) + delta <= max_len:
                out = _apply_op(out, op, rng)
                break
    return DnaSeq(out)


# ---------------------------------------------------------------- encoding

def one_hot(s, n_max: int = DEFAULT_N_MAX) -> np.ndarray:
    if len(s) > n_max:
        raise TooLong(f"sequence of length {len(s)} exceeds n_max={n_max}")
    grid = np.zeros((4, n_max), dtype=np.float32)
    idx = [_INDEX[b] for b in s]
    grid[idx, np.arange(len(idx))] = 1.0
    return grid


def one_hot_pair(s1, s2, n_max: int = DEFAULT_N_MAX) -> np.ndarray:
    """Encode a pair as a ``(2, 4, n_max)`` grid: channel, base (A,C,G,T), position.

    Shorter strands are right-padded with all-zero columns.
    """
    return np.stack([one_hot(s1, n_max), one_hot(s2, n_max)])


def one_hot_pairs(pairs: Sequence, n_max: int = DEFAULT_N_MAX,
                  dtype=np.float32) -> np.ndarray:
    """Batch version of :func:`one_hot_pair`, shape ``(n, 2, 4, n_max)``."""
    n = len(pairs)
    codes = np.full((n, 2, n_max), -1, dtype=np.int8)
    for row, (s1, s2) in enumerate(pairs):
        for ch, s in enumerate((s1, s2)):
            if len(s) > n_max:
                raise TooLong(f"sequence of length {len(s)} exceeds n_max={n_max}")
            codes[row, ch, :len(s)] = encode(s)
    out = np.zeros((n, 2, 4, n_max), dtype=dtype)
    for b in range(4):
        out[:, :, b, :] = codes == b
    return out


def decode_one_hot(grid: np.ndarray) -> tuple:
    """Invert :func:`one_hot_pair`, dropping pad columns."""
    seqs = []
    for channel in grid:
        cols = channel.sum(axis=0) > 0
        seqs.append(DnaSeq("".join(ALPHABET[i] for i in channel[:, cols].argmax(axis=0))))
    return tuple(seqs)


def encode(s) -> np.ndarray:
    """Integer codes 0..3 for A, C, G, T."""
    return _ASCII_LUT[np.frombuffer(str(s).encode("ascii"), dtype=np.uint8)]


_ASCII_LUT = np.full(256, -1, dtype=np.int8)
for _i, _b in enumerate(ALPHABET):
    _ASCII_LUT[ord(_b)] = _i


# ------------------------------------------------------------------- FASTA

@dataclass
class FastaRecord:
    id: str
    seq: DnaSeq
    description: str = field(default="")


def read_fasta(path) -> list:
    return list(iter_fasta(path))


def iter_fasta(path) -> Iterator[FastaRecord]:
    header, chunks = None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                if header is not None:
                    yield _fasta_record(header, chunks)
                header, chunks = line[1:], []
            elif header is None:
                raise ValueError(f"{path}:{lineno}: sequence data before first header")
            else:
                chunks.append(line)
    if header is not None:
        yield _fasta_record(header, chunks)


def _fasta_record(header, chunks):
    ident, _, desc = header.partition(" ")
    return FastaRecord(ident, DnaSeq("".join(chunks)), desc)


def write_fasta(seqs: Iterable, path, ids: Iterable | None = None) -> None:
    """Write one record per sequence; ids default to ``seq0, seq1, ...``."""
    seqs = list(seqs)
    ids = list(ids) if ids is not None else [f"seq{i}" for i in range(len(seqs))]
    with open(Path(path), "w") as fh:
        for ident, s in zip(ids, seqs):
            fh.write(f">{ident}\n{s}\n")
