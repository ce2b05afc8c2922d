"""Orthogonal library screening.

Candidate pairs come from an exact k-mer filter: ``(i, j)`` is a candidate
when some k-mer of ``s_i`` also occurs in the reverse complement of
``s_j``, i.e. when their longest common substring with the reverse
complement is at least ``k``. Candidates are then scored by any yield
predictor and conflicting sequences pruned greedily.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

import numba
import numpy as np

from .align import annealing_scores
from .seq import DnaSeq, encode, reverse_complement

DEFAULT_K = 5
MIN_K = 4
MAX_K = 15  # k-mer codes must fit in int32


class KTooLarge(ValueError):
    pass


def brute_lcs(a, b) -> int:
    """Length of the longest common contiguous substring (exact DP)."""
    a, b = str(a), str(b)
    best = 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


def brute_candidates(seqs, k=DEFAULT_K):
    """Reference filter: all ``i < j`` with ``brute_lcs(s_i, rc(s_j)) >= k``."""
    rcs = [reverse_complement(s) for s in seqs]
    return {(i, j) for i in range(len(seqs)) for j in range(i + 1, len(seqs))
            if brute_lcs(seqs[i], rcs[j]) >= k}


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True)
def _kmer_codes(codes, lens, k):
    """Per-sequence k-mer codes, flattened, with owner ids; duplicates within
    one sequence are kept here and removed by the caller."""
    total = 0
    for r in range(lens.shape[0]):
        if lens[r] >= k:
            total += lens[r] - k + 1
    kmers = np.empty(total, dtype=np.int32)
    owner = np.empty(total, dtype=np.int32)
    pos = 0
    for r in range(lens.shape[0]):
        v = 0
        for t in range(lens[r]):
            v = ((v << 2) | codes[r, t]) & ((1 << (2 * k)) - 1)
            if t >= k - 1:
                kmers[pos] = v
                owner[pos] = r
                pos += 1
    return kmers, owner


@numba.njit(cache=True)
def _probe(starts, postings, q_codes, q_lens, k, lo, hi, stamp, out_i, out_j):
    """Candidates for queries ``lo..hi``; returns (n_written, raw_hits, n_self)."""
    n = 0
    raw = 0
    n_self = 0
    mask = (1 << (2 * k)) - 1
    for j in range(lo, hi):
        v = 0
        for t in range(q_lens[j]):
            v = ((v << 2) | q_codes[j, t]) & mask
            if t < k - 1:
                continue
            for p in range(starts[v], starts[v + 1]):
                i = postings[p]
                raw += 1
                if stamp[i] == j:
                    continue
                stamp[i] = j
                if i == j:
                    n_self += 1
                elif i < j:
                    out_i[n] = i
                    out_j[n] = j
                    n += 1
    return n, raw, n_self


@numba.njit(cache=True)
def _count(starts, postings, q_codes, q_lens, k, stamp):
    n = 0
    mask = (1 << (2 * k)) - 1
    for j in range(q_lens.shape[0]):
        v = 0
        for t in range(q_lens[j]):
            v = ((v << 2) | q_codes[j, t]) & mask
            if t < k - 1:
                continue
            for p in range(starts[v], starts[v + 1]):
                i = postings[p]
                if stamp[i] != j:
                    stamp[i] = j
                    if i < j:
                        n += 1
    return n


def _pack(seqs):
    lens = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    codes = np.zeros((len(seqs), int(lens.max()) if len(seqs) else 0), dtype=np.int64)
    for r, s in enumerate(seqs):
        codes[r, :len(s)] = encode(s)
    return codes, lens


class KmerIndex:
    """Postings lists from k-mer code to the ids of sequences containing it.

    Stored in CSR form: ``postings[starts[c]:starts[c + 1]]`` are the sorted
    ids for k-mer code ``c``, each id at most once.
    """

    def __init__(self, seqs, k: int = DEFAULT_K):
        if not MIN_K <= k <= MAX_K:
            raise KTooLarge(f"k must lie in [{MIN_K}, {MAX_K}], got {k}")
        short = [i for i, s in enumerate(seqs) if len(s) < k]
        if short:
            raise KTooLarge(f"k={k} exceeds the length of sequence {short[0]}")
        self.k = k
        self.n_seqs = len(seqs)
        codes, lens = _pack(seqs)
        kmers, owner = _kmer_codes(codes, lens, k)
        pairs = np.unique(kmers.astype(np.int64) << 32 | owner.astype(np.int64))
        kmers, owner = (pairs >> 32).astype(np.int32), (pairs & 0xFFFFFFFF).astype(np.int32)
        self.postings = owner
        self.starts = np.zeros(4 ** k + 1, dtype=np.int64)
        np.add.at(self.starts, kmers.astype(np.int64) + 1, 1)
        np.cumsum(self.starts, out=self.starts)

    def lookup(self, kmer: str):
        if len(kmer) != self.k:
            raise ValueError(f"expected a {self.k}-mer")
        c = 0
        for b in encode(DnaSeq(kmer)):
            c = (c << 2) | int(b)
        return self.postings[self.starts[c]:self.starts[c + 1]].tolist()

    def __len__(self):
        return len(self.postings)


@dataclass
class CandidateSet:
    """Unordered candidate pairs ``(i, j)`` with ``i < j`` plus provenance counts.

    ``raw_hits`` counts every posting visited while probing; ``self_pairs``
    the sequences matching their own reverse complement; ``symmetric_dups``
    the pairs found from both sides and kept once.
    """

    i: np.ndarray
    j: np.ndarray
    n_seqs: int
    raw_hits: int = 0
    self_pairs: int = 0
    symmetric_dups: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.i)

    def pairs(self):
        return set(zip(self.i.tolist(), self.j.tolist()))

    @property
    def all_pairs(self):
        return self.n_seqs * (self.n_seqs - 1) // 2

    @property
    def fraction(self):
        return len(self) / self.all_pairs if self.all_pairs else 0.0


def iter_candidate_chunks(seqs, k=DEFAULT_K, chunk: int = 2048, index=None):
    """Stream candidates query block by query block.

    Yields ``(i, j, raw_hits, self_pairs)`` per block of ``chunk`` query
    sequences, so memory stays bounded by the densest block.
    """
    index = index or KmerIndex(seqs, k)
    q_codes, q_lens = _pack([reverse_complement(s) for s in seqs])
    stamp = np.full(len(seqs), -1, dtype=np.int64)
    for lo in range(0, len(seqs), chunk):
        hi = min(lo + chunk, len(seqs))
        # each query can add at most ``lo`` + block partners
        cap = (hi - lo) * hi
        out_i = np.empty(cap, dtype=np.int32)
        out_j = np.empty(cap, dtype=np.int32)
        n, raw, n_self = _probe(index.starts, index.postings, q_codes, q_lens, index.k,
                                lo, hi, stamp, out_i, out_j)
        yield out_i[:n].copy(), out_j[:n].copy(), int(raw), int(n_self)


def candidate_pairs(seqs, k: int = DEFAULT_K, min_score: int | None = None) -> CandidateSet:
    """All pairs whose longest common substring with the partner's reverse
    complement is at least ``k``.

    Parameters
    ----------
    min_score : int, optional
        Second stage: keep only pairs with an annealing alignment score of
        at least this value.
    """
    seqs = [DnaSeq(s) for s in seqs]
    index = KmerIndex(seqs, k)
    parts_i, parts_j = [], []
    raw = n_self = 0
    for ci, cj, r, s in iter_candidate_chunks(seqs, k, index=index):
        parts_i.append(ci)
        parts_j.append(cj)
        raw += r
        n_self += s
    i = np.concatenate(parts_i) if parts_i else np.zeros(0, dtype=np.int32)
    j = np.concatenate(parts_j) if parts_j else np.zeros(0, dtype=np.int32)
    order = np.lexsort((j, i))
    cs = CandidateSet(i[order], j[order], len(seqs), raw, n_self, symmetric_dups=len(i))
    if min_score is not None and len(cs):
        scores = annealing_scores([(seqs[a], seqs[b]) for a, b in zip(cs.i, cs.j)])
        keep = scores >= min_score
        cs.extra["stage1"] = len(cs)
        cs.i, cs.j = cs.i[keep], cs.j[keep]
    return cs


def count_candidates(seqs, k: int = DEFAULT_K) -> int:
    """Number of candidate pairs without materialising them."""
    seqs = [DnaSeq(s) for s in seqs]
    index = KmerIndex(seqs, k)
    q_codes, q_lens = _pack([reverse_complement(s) for s in seqs])
    stamp = np.full(len(seqs), -1, dtype=np.int64)
    return int(_count(index.starts, index.postings, q_codes, q_lens, k, stamp))


# ----------------------------------------------------------------- conflicts

@dataclass(frozen=True, order=True)
class Conflict:
    sort_key: tuple = field(repr=False)
    i: int
    j: int
    yield_: float

    @classmethod
    def make(cls, i, j, y):
        return cls((-float(y), int(i), int(j)), int(i), int(j), float(y))


def conflict_scan(seqs, candidates, predictor, threshold: float = 0.2,
                  chunk: int = 50_000) -> list:
    """Score candidates in chunks and keep those with yield ``>= threshold``.

    ``candidates`` is a :class:`CandidateSet` or an iterable of ``(i, j)``;
    ``predictor`` maps a list of sequence pairs to an array of yields.
    Results are sorted by descending yield, ties by ids.
    """
    seqs = list(seqs)
    if isinstance(candidates, CandidateSet):
        stream = zip(candidates.i.tolist(), candidates.j.tolist())
    else:
        stream = iter(candidates)
    out = []
    while True:
        block = []
        for pair in stream:
            block.append(pair)
            if len(block) == chunk:
                break
        if not block:
            break
        ys = np.asarray(predictor([(seqs[i], seqs[j]) for i, j in block]), dtype=float)
        for (i, j), y in zip(block, ys):
            if y >= threshold:
                out.append(Conflict.make(i, j, y))
        if len(block) < chunk:
            break
    out.sort()
    return out


def greedy_prune(n_seqs: int, conflicts) -> list:
    """Drop the sequence in the most conflicts (lowest id on ties) until
    none remain; returns the surviving ids in order."""
    adj = {}
    for c in conflicts:
        i, j = (c.i, c.j) if isinstance(c, Conflict) else c
        if i == j:
            continue
        adj.setdefault(i, set()).add(j)
        adj.setdefault(j, set()).add(i)
    heap = [(-len(nb), v) for v, nb in adj.items()]
    heapq.heapify(heap)
    removed = set()
    while heap:
        neg, v = heapq.heappop(heap)
        if v in removed or -neg != len(adj[v]):
            continue  # stale entry
        if not adj[v]:
            break
        removed.add(v)
        for u in adj.pop(v):
            adj[u].discard(v)
            heapq.heappush(heap, (-len(adj[u]), u))
    return [v for v in range(n_seqs) if v not in removed]


def write_conflicts(conflicts, ids, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id1", "id2", "yield"))
        for c in conflicts:
            w.writerow((ids[c.i], ids[c.j], f"{c.yield_:.6f}"))


def read_conflicts(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id1", "id2", "yield"]:
            raise ValueError(f"{path}: expected header id1,id2,yield")
        return [(a, b, float(y)) for a, b, y in reader]
