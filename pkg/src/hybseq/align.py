"""Semi-global affine-gap alignment.

Leading and trailing gaps are free: an alignment path starts anywhere on
the top row or left column of the DP grid and ends anywhere on the bottom
row or right column. Interior gaps of length ``L`` cost
``gap_open + (L - 1) * gap_extend``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .seq import DnaSeq, encode, reverse_complement

NEG = -(1 << 28)

# column ops in traces
OP_MATCH, OP_MISMATCH, OP_GAP_B, OP_GAP_A = 0, 1, 2, 3
_OP_CHARS = "=XID"

# traceback states
_H, _M, _X, _Y = 0, 1, 2, 3


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class AlignParams:
    match: int = 5
    mismatch: int = -4
    gap_open: int = 5
    gap_extend: int = 2

    def __post_init__(self):
        if not self.gap_open >= self.gap_extend >= 0:
            raise ValueError("need gap_open >= gap_extend >= 0")
        if not self.match > self.mismatch:
            raise ValueError("need match > mismatch")

    def as_tuple(self):
        return self.match, self.mismatch, self.gap_open, self.gap_extend


DEFAULT_PARAMS = AlignParams()


@dataclass(frozen=True)
class AlignResult:
    """Score plus one optimal alignment.

    ``rows`` holds the two gapped strings (end gaps included) and ``cigar``
    the run-length encoded column ops: ``=`` match, ``X`` mismatch, ``I`` a
    base of the first sequence against a gap, ``D`` a base of the second
    sequence against a gap.
    """

    score: int
    cigar: str
    rows: tuple


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True)
def _fill(a, b, match, mismatch, go, ge):
    n, m = a.shape[0], b.shape[0]
    M = np.full((n + 1, m + 1), NEG, dtype=np.int32)
    X = np.full((n + 1, m + 1), NEG, dtype=np.int32)  # a[i-1] against a gap
    Y = np.full((n + 1, m + 1), NEG, dtype=np.int32)  # b[j-1] against a gap
    H = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            s = match if a[i - 1] == b[j - 1] else mismatch
            M[i, j] = H[i - 1, j - 1] + s
            X[i, j] = max(H[i - 1, j] - go, X[i - 1, j] - ge)
            Y[i, j] = max(H[i, j - 1] - go, Y[i, j - 1] - ge)
            H[i, j] = max(M[i, j], X[i, j], Y[i, j])
    return H, M, X, Y


@numba.njit(cache=True)
def _best_end(H):
    n, m = H.shape[0] - 1, H.shape[1] - 1
    bi, bj, best = n, m, H[n, m]
    for j in range(m - 1, -1, -1):
        if H[n, j] > best:
            bi, bj, best = n, j, H[n, j]
    for i in range(n - 1, -1, -1):
        if H[i, m] > best:
            bi, bj, best = i, m, H[i, m]
    return bi, bj, best


@numba.njit(cache=True)
def _score(a, b, match, mismatch, go, ge):
    H, _, _, _ = _fill(a, b, match, mismatch, go, ge)
    return _best_end(H)[2]


@numba.njit(cache=True)
def _trace(a, b, match, mismatch, go, ge):
    """Return (score, ops) with ops listing alignment columns left to right."""
    H, M, X, Y = _fill(a, b, match, mismatch, go, ge)
    n, m = a.shape[0], b.shape[0]
    i, j, best = _best_end(H)
    rev = np.empty(n + m, dtype=np.int8)
    k = 0
    # free trailing gaps
    for jj in range(m, j, -1):
        rev[k] = OP_GAP_A
        k += 1
    for ii in range(n, i, -1):
        rev[k] = OP_GAP_B
        k += 1
    state = _H
    while i > 0 and j > 0:
        if state == _H:
            # tie-break: diagonal > up > left
            if H[i, j] == M[i, j]:
                state = _M
            elif H[i, j] == X[i, j]:
                state = _X
            else:
                state = _Y
        if state == _M:
            rev[k] = OP_MATCH if a[i - 1] == b[j - 1] else OP_MISMATCH
            k += 1
            i -= 1
            j -= 1
            state = _H
        elif state == _X:
            rev[k] = OP_GAP_B
            k += 1
            state = _H if X[i, j] == H[i - 1, j] - go else _X
            i -= 1
        else:
            rev[k] = OP_GAP_A
            k += 1
            state = _H if Y[i, j] == H[i, j - 1] - go else _Y
            j -= 1
    # free leading gaps
    for ii in range(i):
        rev[k] = OP_GAP_B
        k += 1
    for jj in range(j):
        rev[k] = OP_GAP_A
        k += 1
    return best, rev[:k][::-1].copy()


@numba.njit(cache=True)
def _batch_scores(codes_a, lens_a, codes_b, lens_b, match, mismatch, go, ge):
    out = np.empty(codes_a.shape[0], dtype=np.int32)
    for r in range(codes_a.shape[0]):
        out[r] = _score(codes_a[r, :lens_a[r]], codes_b[r, :lens_b[r]],
                        match, mismatch, go, ge)
    return out


# ---------------------------------------------------------------- public API

def _codes(s):
    return encode(DnaSeq(s))


def semi_global_score(a, b, params: AlignParams = DEFAULT_PARAMS) -> int:
    """Optimal semi-global alignment score of ``a`` against ``b``."""
    return int(_score(_codes(a), _codes(b), *params.as_tuple()))


def semi_global_trace(a, b, params: AlignParams = DEFAULT_PARAMS) -> AlignResult:
    a, b = DnaSeq(a), DnaSeq(b)
    score, ops = _trace(encode(a), encode(b), *params.as_tuple())
    row_a, row_b = [], []
    i = j = 0
    for op in ops:
        if op in (OP_MATCH, OP_MISMATCH):
            row_a.append(a[i])
            row_b.append(b[j])
            i += 1
            j += 1
        elif op == OP_GAP_B:
            row_a.append(a[i])
            row_b.append("-")
            i += 1
        else:
            row_a.append("-")
            row_b.append(b[j])
            j += 1
    return AlignResult(int(score), _cigar(ops), ("".join(row_a), "".join(row_b)))


def _cigar(ops) -> str:
    out = []
    prev, run = None, 0
    for op in ops:
        if op == prev:
            run += 1
            continue
        if prev is not None:
            out.append(f"{run}{_OP_CHARS[prev]}")
        prev, run = op, 1
    if prev is not None:
        out.append(f"{run}{_OP_CHARS[prev]}")
    return "".join(out)


def annealing_score(s1, s2, params: AlignParams = DEFAULT_PARAMS) -> int:
    """Alignment score of ``s1`` against the reverse complement of ``s2``."""
    return semi_global_score(s1, reverse_complement(s2), params)


def pack_codes(seqs, width=None):
    """Stack sequences into a padded int8 code matrix plus a length vector."""
    lens = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    width = width or (int(lens.max()) if len(seqs) else 0)
    codes = np.zeros((len(seqs), width), dtype=np.int8)
    for r, s in enumerate(seqs):
        codes[r, :len(s)] = encode(s)
    return codes, lens


def annealing_scores(pairs, params: AlignParams = DEFAULT_PARAMS) -> np.ndarray:
    """Vectorised :func:`annealing_score` over a sequence of pairs."""
    if not len(pairs):
        return np.zeros(0, dtype=np.int32)
    codes_a, lens_a = pack_codes([p[0] for p in pairs])
    codes_b, lens_b = pack_codes([reverse_complement(p[1]) for p in pairs])
    return _batch_scores(codes_a, lens_a, codes_b, lens_b, *params.as_tuple())


def rescore_rows(row_a: str, row_b: str, params: AlignParams = DEFAULT_PARAMS) -> int:
    """Score a gapped alignment under the semi-global convention.

    The leading run of same-kind gap columns and the trailing one are free,
    matching the DP's free start/end on a single grid border.
    """
    kinds = []
    for x, y in zip(row_a, row_b):
        kinds.append("I" if y == "-" else "D" if x == "-" else "M")
    lo, hi = 0, len(kinds)
    if kinds and kinds[0] != "M":
        while lo < hi and kinds[lo] == kinds[0]:
            lo += 1
    if hi > lo and kinds[-1] != "M":
        last = kinds[-1]
        while hi > lo and kinds[hi - 1] == last:
            hi -= 1
    score, prev = 0, "M"
    for c in range(lo, hi):
        kind = kinds[c]
        if kind == "M":
            score += params.match if row_a[c] == row_b[c] else params.mismatch
        else:
            score -= params.gap_extend if prev == kind else params.gap_open
        prev = kind
    return score


def brute_force_score(a, b, params: AlignParams = DEFAULT_PARAMS) -> int:
    """Exhaustive optimum over all alignment paths (memoised recursion).

    Enumerates every start cell on the top/left border, every column
    sequence, and every end cell on the bottom/right border. Test oracle
    for :func:`semi_global_score`; limited to ``len(a) * len(b) <= 200``.
    """
    a, b = str(DnaSeq(a)), str(DnaSeq(b))
    n, m = len(a), len(b)
    if n * m > 200:
        raise TooLarge(f"brute force limited to len(a)*len(b) <= 200, got {n * m}")
    match, mismatch, go, ge = params.as_tuple()

    @lru_cache(maxsize=None)
    def best_from(i, j, last):
        # option: stop here if on the bottom or right border; the rest is free
        options = [0] if i == n or j == m else []
        if i < n and j < m:
            sub = match if a[i] == b[j] else mismatch
            options.append(sub + best_from(i + 1, j + 1, "M"))
        if i < n:
            cost = ge if last == "I" else go
            options.append(-cost + best_from(i + 1, j, "I"))
        if j < m:
            cost = ge if last == "D" else go
            options.append(-cost + best_from(i, j + 1, "D"))
        return max(options)

    starts = [(i, 0) for i in range(n + 1)] + [(0, j) for j in range(1, m + 1)]
    return max(best_from(i, j, "start") for i, j in starts)
