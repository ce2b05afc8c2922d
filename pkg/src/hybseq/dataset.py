"""Synthetic hybridisation datasets: generation, labels, splits and CSV I/O.

A round draws random root sequences, derives a mutation family from each
root and from its reverse complement, pairs family members with each other
and scores every pair with a yield oracle at all temperatures.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seq import (LIBRARY_MAX_LENGTH, LIBRARY_MIN_LENGTH, OPS, DnaSeq,
                  MutationProfile, SequenceError, mutate, random_seq,
                  reverse_complement)
from .thermo import REFERENCE_TEMP, TEMPS, YieldOracle

log = logging.getLogger(__name__)

THRESHOLD = 0.2
LOW, HIGH = "Low", "High"
HEADER = ("s1", "s2", "y37", "y42", "y47", "y52", "y57", "y62", "label")


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class TooFew(DatasetError):
    pass


class OracleFailure(RuntimeError):
    def __init__(self, pair, cause):
        super().__init__(f"oracle failed on pair {pair[0]} / {pair[1]}: {cause}")
        self.pair = pair


def label(y: float, threshold: float = THRESHOLD) -> str:
    """``High`` when ``y >= threshold``, else ``Low``."""
    if not 0.0 <= y <= 1.0 or math.isnan(y):
        raise ValueError(f"yield must lie in [0, 1], got {y}")
    return HIGH if y >= threshold else LOW


@dataclass(frozen=True)
class YieldRecord:
    s1: DnaSeq
    s2: DnaSeq
    yields: dict  # temperature in C -> yield
    label: str

    def __post_init__(self):
        if any(not 0.0 <= y <= 1.0 for y in self.yields.values()):
            raise ValueError("yields must lie in [0, 1]")
        if self.label not in (LOW, HIGH):
            raise ValueError(f"bad label {self.label!r}")

    @property
    def y(self) -> float:
        return self.yields[REFERENCE_TEMP]

    @property
    def pair(self):
        return self.s1, self.s2


@dataclass
class DatasetConfig:
    """Generation settings.

    Each root yields a family of ``n_minor`` single-op mutants (one or two
    edits) and ``n_severe`` heavy mutants, for the root and, when
    ``rc_mutation`` is on, for its reverse complement too.
    """

    n_roots: int = 500
    n_minor: int = 6
    n_severe: int = 2
    minor_counts: tuple = (1, 2)
    severe_cap: int = 8
    rc_mutation: bool = True
    self_pairs: bool = False
    target_size: int = 50_000
    seed: int = 0
    temps: tuple = TEMPS
    reference_temp: float = REFERENCE_TEMP
    max_rounds: int = 20

    def __post_init__(self):
        self.temps = tuple(float(t) for t in self.temps)
        self.minor_counts = tuple(self.minor_counts)
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if self.reference_temp not in self.temps:
            raise ValueError("reference_temp must be one of temps")
        if self.n_roots < 1 or self.n_minor < 0 or self.n_severe < 0:
            raise ValueError("n_roots >= 1 and non-negative mutant counts required")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)


def _family(root, cfg: DatasetConfig, rng):
    members = [root]
    bases = [root, reverse_complement(root)] if cfg.rc_mutation else [root]
    if cfg.rc_mutation:
        members.append(bases[1])
    for base in bases:
        for _ in range(cfg.n_minor):
            op = OPS[rng.integers(len(OPS))]
            members.append(mutate(base, MutationProfile.minor(op, cfg.minor_counts), rng))
        for _ in range(cfg.n_severe):
            members.append(mutate(base, MutationProfile.severe(cfg.severe_cap), rng))
    return members


def _pairings(members, self_pairs):
    out = []
    for i in range(len(members)):
        for j in range(i if self_pairs else i + 1, len(members)):
            out.append((members[i], members[j]))
    return out


def generate(cfg: DatasetConfig, oracle=None) -> list:
    """Generate yield records; deterministic for a given config.

    ``oracle`` must provide ``yields(pairs, temps) -> (n, len(temps))``;
    the thermodynamic :class:`~hybseq.thermo.YieldOracle` is the default.
    Rounds of ``n_roots`` new roots run until ``target_size`` distinct
    pairs exist, then the pool is subsampled to exactly that size.
    """
    oracle = oracle or YieldOracle()
    rng = np.random.default_rng(cfg.seed)
    seen_seqs, seen_pairs, pairs = set(), set(), []
    for _round in range(cfg.max_rounds):
        for _ in range(cfg.n_roots):
            length = int(rng.integers(LIBRARY_MIN_LENGTH, LIBRARY_MAX_LENGTH + 1))
            root = random_seq(length, rng)
            if root in seen_seqs:
                continue
            fam = []
            for s in _family(root, cfg, rng):
                # a sequence enters the pool once, in the first family that makes it
                if s not in seen_seqs:
                    seen_seqs.add(s)
                    fam.append(s)
            for p in _pairings(fam, cfg.self_pairs):
                key = (p[0], p[1]) if p[0] <= p[1] else (p[1], p[0])
                if key not in seen_pairs:
                    seen_pairs.add(key)
                    pairs.append(p)
        if len(pairs) >= cfg.target_size:
            break
    if not pairs:
        log.warning("configuration produced no pairs")
        return []
    if len(pairs) > cfg.target_size:
        keep = np.sort(rng.choice(len(pairs), cfg.target_size, replace=False))
        pairs = [pairs[i] for i in keep]
    elif len(pairs) < cfg.target_size:
        log.warning("only %d of %d requested pairs generated", len(pairs), cfg.target_size)
    return score_pairs(pairs, oracle, cfg.temps, cfg.reference_temp)


def score_pairs(pairs, oracle=None, temps=TEMPS, reference_temp=REFERENCE_TEMP,
                chunk: int = 20_000) -> list:
    """Attach oracle yields and labels to pairs."""
    oracle = oracle or YieldOracle()
    temps = tuple(float(t) for t in temps)
    ref = temps.index(float(reference_temp))
    records = []
    for start in range(0, len(pairs), chunk):
        part = pairs[start:start + chunk]
        try:
            ys = np.asarray(oracle.yields(part, temps), dtype=float)
        except Exception as exc:  # locate the offending pair
            for p in part:
                try:
                    oracle.yields([p], temps)
                except Exception as inner:
                    raise OracleFailure(p, inner) from inner
            raise
        # stored values are rounded like the CSV so records survive a round trip
        ys = np.round(ys, 6)
        for (s1, s2), row in zip(part, ys):
            records.append(YieldRecord(DnaSeq(s1), DnaSeq(s2), dict(zip(temps, row.tolist())),
                                       label(row[ref])))
    return records


# ------------------------------------------------------------------ splits

def _allocate(n, fractions):
    """Largest-remainder apportionment of ``n`` items."""
    raw = np.asarray(fractions) * n
    base = np.floor(raw).astype(int)
    short = n - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def yield_bins(y, bins: int = 10):
    return np.minimum((np.asarray(y) * bins).astype(int), bins - 1)


def stratified_split(records, fractions=(0.8, 0.1, 0.1), bins: int = 10, seed: int = 0):
    """Split into train/val/test preserving the per-bin share of the
    reference-temperature yield (bins of width ``1/bins``)."""
    n = len(records)
    if n < 10:
        raise TooFew(f"need at least 10 records, got {n}")
    if not math.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    which = yield_bins([r.y for r in records], bins)
    parts = [[] for _ in fractions]
    for b in range(bins):
        idx = np.flatnonzero(which == b)
        if not len(idx):
            continue
        idx = rng.permutation(idx)
        counts = _allocate(len(idx), fractions)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(len(fractions)):
            parts[k].extend(idx[bounds[k]:bounds[k + 1]].tolist())
    # per-bin rounding can drift the totals; move surplus items between
    # parts so overall sizes equal the apportionment of n
    want = _allocate(n, fractions)
    parts = [sorted(p) for p in parts]
    pool = []
    for k, p in enumerate(parts):
        while len(p) > want[k]:
            pool.append(p.pop(rng.integers(len(p))))
    for k, p in enumerate(parts):
        while len(p) < want[k]:
            p.append(pool.pop())
    return tuple([records[i] for i in sorted(p)] for p in parts)


# ----------------------------------------------------------------------- CSV

def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow([r.s1, r.s2, *(f"{r.yields[t]:.6f}" for t in TEMPS), r.label])


def read_csv(path) -> list:
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "missing header")
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(path, 1, f"expected header {','.join(HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise ParseError(path, lineno, f"expected {len(HEADER)} fields, got {len(row)}")
            try:
                s1, s2 = DnaSeq(row[0]), DnaSeq(row[1])
                ys = [float(v) for v in row[2:8]]
            except (SequenceError, ValueError) as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if any(not 0.0 <= y <= 1.0 for y in ys):
                raise ParseError(path, lineno, "yield out of range [0, 1]")
            lab = row[8].strip()
            if lab not in (LOW, HIGH):
                raise ParseError(path, lineno, f"bad label {lab!r}")
            if lab != label(ys[TEMPS.index(REFERENCE_TEMP)]):
                raise ParseError(path, lineno, "label disagrees with y57")
            try:
                records.append(YieldRecord(s1, s2, dict(zip(TEMPS, ys)), lab))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return records


def records_to_arrays(records, temps=TEMPS):
    """Pairs list, yield matrix ``(n, len(temps))`` and High indicator."""
    pairs = [r.pair for r in records]
    y = np.array([[r.yields[t] for t in temps] for r in records]) if records else np.zeros((0, len(temps)))
    high = np.array([r.label == HIGH for r in records], dtype=int)
    return pairs, y, high
