"""Two-state nearest-neighbour hybridisation oracle.

Duplex geometry comes from the semi-global alignment of one strand against
the reverse complement of the other. Matched runs contribute stacking
terms; internal unmatched stretches contribute an entropic loop penalty.
Yields come from solving mass action for the two-strand test tube with
species ``A, B, AA, BB, AB``.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from .align import DEFAULT_PARAMS, AlignParams, _trace, pack_codes, OP_MATCH
from .seq import DnaSeq, encode, reverse_complement

R_KCAL = 1.9872e-3  # kcal/(mol K)
KELVIN = 273.15
LOOP_REF_K = 310.15
LOOP_BASE = 3.0  # kcal/mol at LOOP_REF_K
LOOP_PER_COLUMN = 0.4
DEFAULT_CONC = 1e-6
TEMPS = (37.0, 42.0, 47.0, 52.0, 57.0, 62.0)
REFERENCE_TEMP = 57.0
MAX_ITER = 200
TOL = 1e-13  # relative mass-balance residual

_STEP_KEYS = ("AA/TT", "AT/TA", "TA/AT", "CA/GT", "GT/CA",
              "CT/GA", "GA/CT", "CG/GC", "GC/CG", "GG/CC")


class ThermoError(ValueError):
    pass


class NoConvergence(ThermoError):
    pass


class ChecksumMismatch(ThermoError):
    pass


class TooShort(ThermoError):
    pass


# -------------------------------------------------------------- parameters

@dataclass(frozen=True)
class NnParamTable:
    stacks: dict
    init: tuple
    terminal_at: tuple

    def __post_init__(self):
        if set(self.stacks) != set(_STEP_KEYS):
            raise ValueError(f"stack table must cover exactly {_STEP_KEYS}")
        if any(dh >= 0 for dh, _ in self.stacks.values()):
            raise ValueError("stack enthalpies must be negative")

    def lookup_arrays(self):
        """4x4 arrays of (dH, dS) indexed by the top-strand dinucleotide codes."""
        dh = np.zeros((4, 4))
        ds = np.zeros((4, 4))
        for key, (h, s) in self.stacks.items():
            top = key.split("/")[0]
            for step in (top, str(reverse_complement(top))):
                x, y = encode(step)
                dh[x, y], ds[x, y] = h, s
        return dh, ds


def _body_lines(table: NnParamTable):
    lines = [f"stack {k} {table.stacks[k][0]!r} {table.stacks[k][1]!r}" for k in _STEP_KEYS]
    lines.append(f"init {table.init[0]!r} {table.init[1]!r}")
    lines.append(f"terminal_at {table.terminal_at[0]!r} {table.terminal_at[1]!r}")
    return lines


def _checksum(lines) -> str:
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def dump_params(table: NnParamTable, path) -> None:
    body = _body_lines(table)
    with open(path, "w") as fh:
        fh.write("# Watson-Crick nearest-neighbour stacks, 1 M NaCl.\n")
        fh.write("# stack <top 5'->3'>/<bottom 3'->5'> <dH kcal/mol> <dS cal/(mol K)>\n")
        for line in body:
            fh.write(line + "\n")
        fh.write(f"checksum {_checksum(body)}\n")


def parse_params(text: str, source: str = "<string>") -> NnParamTable:
    stacks, init, term, checksum, body = {}, None, None, None, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "checksum":
                checksum = fields[1]
                continue
            body.append(" ".join(fields))
            if fields[0] == "stack":
                stacks[fields[1]] = (float(fields[2]), float(fields[3]))
            elif fields[0] == "init":
                init = (float(fields[1]), float(fields[2]))
            elif fields[0] == "terminal_at":
                term = (float(fields[1]), float(fields[2]))
            else:
                raise ValueError(f"unknown key {fields[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ThermoError(f"{source}:{lineno}: {exc}") from None
    if init is None or term is None:
        raise ThermoError(f"{source}: missing init or terminal_at entry")
    table = NnParamTable(stacks, init, term)
    if checksum is not None and checksum != _checksum(_body_lines(table)):
        raise ChecksumMismatch(f"{source}: checksum does not match parameter values")
    return table


def load_params(path=None) -> NnParamTable:
    """Load a parameter file; ``None`` means ``$HYBSEQ_PARAMS`` or the bundled table."""
    if path is None:
        path = os.environ.get("HYBSEQ_PARAMS")
    if path is None:
        text = resources.files("hybseq.data").joinpath("unified_nn.txt").read_text()
        return parse_params(text, "unified_nn.txt")
    return parse_params(Path(path).read_text(), str(path))


_DEFAULT = None


def default_params() -> NnParamTable:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_params()
    return _DEFAULT


# ------------------------------------------------------------------ energy

@dataclass(frozen=True)
class DuplexEnergy:
    dh: float  # kcal/mol
    ds: float  # cal/(mol K)
    n_pairs: int = 0

    @property
    def bound(self) -> bool:
        return self.n_pairs > 0

    def dg(self, temp_c: float) -> float:
        return self.dh - (temp_c + KELVIN) * self.ds / 1000.0

    def association_constant(self, temp_c: float) -> float:
        if not self.bound:
            return 0.0
        return math.exp(-self.dg(temp_c) / (R_KCAL * (temp_c + KELVIN)))


@numba.njit(cache=True)
def _energy_from_ops(a, ops, stack_dh, stack_ds, init_dh, init_ds, term_dh, term_ds, sel_k):
    """Energy of the most stable helix range in an alignment trace.

    Helices are maximal runs of matched columns. A candidate duplex spans
    helices ``p..q``: their stacks, one entropic loop per unmatched stretch
    between them, initiation and terminal A-T terms. The range with the
    lowest free energy at ``sel_k`` kelvin is returned.
    """
    n_ops = ops.shape[0]
    h_dh = np.zeros(n_ops)
    h_ds = np.zeros(n_ops)
    h_bp = np.zeros(n_ops, dtype=np.int64)
    h_first = np.zeros(n_ops, dtype=np.int64)
    h_last = np.zeros(n_ops, dtype=np.int64)
    loop_after = np.zeros(n_ops)  # dS of the loop following helix h
    nh = 0
    i = 0
    in_helix = False
    gap_run = 0
    for op in ops:
        if op == OP_MATCH:
            base = a[i]
            if in_helix:
                h = nh - 1
                h_dh[h] += stack_dh[h_last[h], base]
                h_ds[h] += stack_ds[h_last[h], base]
                h_bp[h] += 1
                h_last[h] = base
            else:
                if nh > 0:
                    loop_after[nh - 1] = -(LOOP_BASE + LOOP_PER_COLUMN * gap_run) * 1000.0 / LOOP_REF_K
                h_first[nh] = base
                h_last[nh] = base
                h_bp[nh] = 1
                nh += 1
                in_helix = True
            gap_run = 0
        else:
            in_helix = False
            gap_run += 1
        if op != 3:  # all ops but a gap in the first row consume a base of a
            i += 1
    if nh == 0:
        return 0.0, 0.0, 0
    best_dg = np.inf
    best = (0.0, 0.0, 0)
    for p in range(nh):
        dh = 0.0
        ds = 0.0
        bp = 0
        for q in range(p, nh):
            if q > p:
                ds += loop_after[q - 1]
            dh += h_dh[q]
            ds += h_ds[q]
            bp += h_bp[q]
            tot_dh = dh + init_dh
            tot_ds = ds + init_ds
            # A=0, T=3
            if h_first[p] == 0 or h_first[p] == 3:
                tot_dh += term_dh
                tot_ds += term_ds
            if h_last[q] == 0 or h_last[q] == 3:
                tot_dh += term_dh
                tot_ds += term_ds
            dg = tot_dh - sel_k * tot_ds / 1000.0
            if dg < best_dg:
                best_dg = dg
                best = (tot_dh, tot_ds, bp)
    return best


@numba.njit(cache=True)
def _duplex_batch(codes_x, lens_x, codes_y, lens_y, match, mismatch, go, ge,
                  stack_dh, stack_ds, init_dh, init_ds, term_dh, term_ds, sel_k):
    n = codes_x.shape[0]
    dh = np.empty(n)
    ds = np.empty(n)
    npairs = np.empty(n, dtype=np.int64)
    for r in range(n):
        a = codes_x[r, :lens_x[r]]
        _, ops = _trace(a, codes_y[r, :lens_y[r]], match, mismatch, go, ge)
        dh[r], ds[r], npairs[r] = _energy_from_ops(
            a, ops, stack_dh, stack_ds, init_dh, init_ds, term_dh, term_ds, sel_k)
    return dh, ds, npairs


def _canonical(s1, s2):
    s1, s2 = DnaSeq(s1), DnaSeq(s2)
    return (s1, s2) if s1 <= s2 else (s2, s1)


def duplex_energies(pairs, params: AlignParams = DEFAULT_PARAMS, nn: NnParamTable | None = None,
                    select_temp: float = REFERENCE_TEMP):
    """Vectorised duplex (dH, dS, n_pairs) for a list of pairs."""
    nn = nn or default_params()
    pairs = [_canonical(s1, s2) for s1, s2 in pairs]
    if not pairs:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64)
    codes_x, lens_x = pack_codes([p[0] for p in pairs])
    codes_y, lens_y = pack_codes([reverse_complement(p[1]) for p in pairs])
    stack_dh, stack_ds = nn.lookup_arrays()
    return _duplex_batch(codes_x, lens_x, codes_y, lens_y, *params.as_tuple(),
                         stack_dh, stack_ds, *nn.init, *nn.terminal_at, select_temp + KELVIN)


def duplex_energy(s1, s2, params: AlignParams = DEFAULT_PARAMS,
                  nn: NnParamTable | None = None,
                  select_temp: float = REFERENCE_TEMP) -> DuplexEnergy:
    """Nearest-neighbour energy of the duplex implied by the alignment trace.

    Of the helix ranges in the trace, the one most stable at ``select_temp``
    is kept; isolated matches that cannot pay for their loop drop out. The
    pair is put in lexicographic order first so the result does not depend
    on argument order (alignment ties would otherwise break
    differently). A pair without any Watson-Crick column is unbound.
    """
    dh, ds, npairs = duplex_energies([(s1, s2)], params, nn, select_temp)
    return DuplexEnergy(float(dh[0]), float(ds[0]), int(npairs[0]))


def association_constants(dh, ds, npairs, temp_c):
    """Element-wise association constants (1/M); zero where unbound."""
    t_k = temp_c + KELVIN
    dg = np.asarray(dh) - t_k * np.asarray(ds) / 1000.0
    with np.errstate(over="ignore"):
        k = np.exp(-dg / (R_KCAL * t_k))
    return np.where(np.asarray(npairs) > 0, k, 0.0)


# ------------------------------------------------------- single structure

@numba.njit(cache=True)
def _nussinov(codes, min_loop):
    n = codes.shape[0]
    best = np.zeros((n, n), dtype=np.int32)
    for span in range(min_loop + 1, n):
        for i in range(n - span):
            j = i + span
            v = best[i, j - 1]
            if best[i + 1, j] > v:
                v = best[i + 1, j]
            for k in range(i, j - min_loop):
                if codes[k] + codes[j] == 3:  # A-T (0+3) or C-G (1+2)
                    left = best[i, k - 1] if k > i else 0
                    inner = best[k + 1, j - 1] if k + 1 <= j - 1 else 0
                    if left + inner + 1 > v:
                        v = left + inner + 1
            best[i, j] = v
    return best[0, n - 1] if n > 0 else 0


def max_base_pairs(s, min_loop: int = 3) -> int:
    return int(_nussinov(encode(s), min_loop))


def single_structure_score(s, min_loop: int = 3, pair_energy: float = -1.0) -> float:
    """Pseudo-MFE of a single strand: ``pair_energy`` per base pair in the
    maximum Watson-Crick pairing with hairpin loops of at least ``min_loop``."""
    s = DnaSeq(s)
    if len(s) < 8:
        raise TooShort(f"need at least 8 nt, got {len(s)}")
    pairs = max_base_pairs(s, min_loop)
    return pair_energy * pairs if pairs else 0.0


# ------------------------------------------------------------- equilibrium

@dataclass(frozen=True)
class TubeSpec:
    a0: float = DEFAULT_CONC
    b0: float = DEFAULT_CONC
    temp_c: float = REFERENCE_TEMP
    k_aa: float = 0.0
    k_bb: float = 0.0
    k_ab: float = 0.0


@dataclass(frozen=True)
class TubeState:
    a: float
    b: float
    c_aa: float
    c_bb: float
    c_ab: float
    yield_: float
    iterations: int = 0

    def as_dict(self):
        return {"A": self.a, "B": self.b, "AA": self.c_aa, "BB": self.c_bb, "AB": self.c_ab}


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _initial_guess(a0, b0, kaa, kbb, kab):
    """Start below the solution: min of the homodimer-only and heterodimer-only solves."""
    a_hom = 2 * a0 / (1 + np.sqrt(1 + 8 * kaa * a0))
    b_hom = 2 * b0 / (1 + np.sqrt(1 + 8 * kbb * b0))
    lim0 = np.minimum(a0, b0)
    excess = np.abs(a0 - b0)
    q = 1 + kab * excess
    lim = 2 * lim0 / (q + np.sqrt(q * q + 4 * kab * lim0))
    a_het = np.where(a0 <= b0, lim, lim + excess)
    b_het = np.where(a0 <= b0, lim + excess, lim)
    return np.minimum(a_hom, a_het), np.minimum(b_hom, b_het)


def solve_tubes(a0, b0, k_aa, k_bb, k_ab, max_iter=MAX_ITER, tol=TOL):
    """Vectorised equilibrium for many two-strand tubes.

    Minimises the strictly convex dual
    ``f(x) = sum_j exp(log K_j + N_j . x) - a0 x_a - b0 x_b`` over the log
    free-monomer concentrations ``x`` with damped Newton steps; the gradient
    of ``f`` is the mass-balance residual. Returns free monomer
    concentrations ``(a, b)`` and the iteration count.
    """
    a0, b0, k_aa, k_bb, k_ab = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (a0, b0, k_aa, k_bb, k_ab)))
    if np.any(a0 <= 0) or np.any(b0 <= 0):
        raise ValueError("initial concentrations must be positive")
    if np.any(k_aa < 0) or np.any(k_bb < 0) or np.any(k_ab < 0):
        raise ValueError("association constants must be non-negative")
    scale = np.maximum(a0, b0)
    ca, cb = a0 / scale, b0 / scale
    kaa, kbb, kab = k_aa * scale, k_bb * scale, k_ab * scale
    lkaa, lkbb, lkab = _log(kaa), _log(kbb), _log(kab)
    a_init, b_init = _initial_guess(ca, cb, kaa, kbb, kab)
    xa, xb = np.log(a_init), np.log(b_init)

    def terms(xa, xb):
        with np.errstate(over="ignore"):
            return (np.exp(xa), np.exp(xb), np.exp(lkaa + 2 * xa),
                    np.exp(lkbb + 2 * xb), np.exp(lkab + xa + xb))

    def objective(xa, xb):
        a, b, aa, bb, ab = terms(xa, xb)
        return a + b + aa + bb + ab - ca * xa - cb * xb

    for it in range(max_iter + 1):
        a, b, aa, bb, ab = terms(xa, xb)
        ga = a + 2 * aa + ab - ca
        gb = b + 2 * bb + ab - cb
        resid = np.maximum(np.abs(ga) / ca, np.abs(gb) / cb)
        active = resid > tol
        if not active.any():
            break
        if it == max_iter:
            raise NoConvergence(
                f"{int(active.sum())} tube(s) not converged after {max_iter} iterations; "
                f"worst relative residual {resid.max():.3e}")
        haa = a + 4 * aa + ab
        hbb = b + 4 * bb + ab
        hab = ab
        det = haa * hbb - hab * hab
        da = -(hbb * ga - hab * gb) / det
        db = -(haa * gb - hab * ga) / det
        # log-space steps beyond a few e-folds are never trusted in one go
        big = np.maximum(np.abs(da), np.abs(db))
        shrink = 20.0 / np.maximum(big, 20.0)
        da, db = da * shrink, db * shrink
        f0 = objective(xa, xb)
        slope = ga * da + gb * db
        step = np.ones_like(xa)
        for _ in range(60):
            trial = objective(xa + step * da, xb + step * db)
            bad = active & ~(trial <= f0 + 1e-4 * step * slope)
            # near the optimum rounding dominates; accept the full step
            bad &= np.abs(trial - f0) > 1e-15 * (np.abs(f0) + 1)
            if not bad.any():
                break
            step = np.where(bad, step * 0.5, step)
        xa = np.where(active, xa + step * da, xa)
        xb = np.where(active, xb + step * db, xb)
    return np.exp(xa) * scale, np.exp(xb) * scale, it


def _bisect_tube(spec: TubeSpec):
    """Fallback: bisection on log(a) with b solved exactly for each trial a."""
    a0, b0, kaa, kbb, kab = spec.a0, spec.b0, spec.k_aa, spec.k_bb, spec.k_ab

    def b_of(a):
        q = 1 + kab * a
        return 2 * b0 / (q + math.sqrt(q * q + 8 * kbb * b0))

    lo, hi = -800.0, math.log(a0)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        a = math.exp(mid)
        if a + 2 * kaa * a * a + kab * a * b_of(a) > a0:
            hi = mid
        else:
            lo = mid
    a = math.exp(0.5 * (lo + hi))
    return a, b_of(a)


def equilibrate(spec: TubeSpec) -> TubeState:
    """Equilibrium concentrations (mol/L) for one two-strand tube."""
    try:
        a, b, iters = solve_tubes(spec.a0, spec.b0, spec.k_aa, spec.k_bb, spec.k_ab)
        a, b = float(a), float(b)
    except NoConvergence:
        a, b = _bisect_tube(spec)
        iters = -1
        resid = abs(a + 2 * spec.k_aa * a * a + spec.k_ab * a * b - spec.a0) / spec.a0
        if resid > 1e-9:
            raise
    c_aa, c_bb, c_ab = spec.k_aa * a * a, spec.k_bb * b * b, spec.k_ab * a * b
    y = min(max(c_ab / min(spec.a0, spec.b0), 0.0), 1.0)
    return TubeState(a, b, c_aa, c_bb, c_ab, y, iters)


def single_tube(k_aa, a0=DEFAULT_CONC):
    """Free monomer and homodimer concentrations for one strand alone."""
    k_aa = np.asarray(k_aa, dtype=float)
    a = 2 * a0 / (1 + np.sqrt(1 + 8 * k_aa * a0))
    return a, k_aa * a * a


# ------------------------------------------------------------------ yields

class YieldOracle:
    """Callable yield oracle with a per-sequence homodimer cache."""

    def __init__(self, nn: NnParamTable | None = None, params: AlignParams = DEFAULT_PARAMS,
                 conc: float = DEFAULT_CONC):
        self.nn = nn or default_params()
        self.params = params
        self.conc = conc
        self._homo = {}

    def homodimer_energies(self, seqs):
        missing = sorted({str(s) for s in seqs} - self._homo.keys())
        if missing:
            dh, ds, npairs = duplex_energies([(s, s) for s in missing], self.params, self.nn)
            for s, h, e, p in zip(missing, dh, ds, npairs):
                self._homo[s] = (h, e, p)
        rows = [self._homo[str(s)] for s in seqs]
        if not rows:
            return np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64)
        dh, ds, npairs = (np.array(col) for col in zip(*rows))
        return dh, ds, npairs

    def yields(self, pairs, temps=TEMPS) -> np.ndarray:
        """Yield matrix of shape ``(len(pairs), len(temps))``."""
        temps = list(np.atleast_1d(temps))
        if not temps:
            raise ValueError("need at least one temperature")
        if any(not 0 <= t <= 100 for t in temps):
            raise ValueError("temperatures must lie in [0, 100] C")
        n = len(pairs)
        out = np.zeros((n, len(temps)))
        if n == 0:
            return out
        dh_ab, ds_ab, p_ab = duplex_energies(pairs, self.params, self.nn)
        dh_a, ds_a, p_a = self.homodimer_energies([p[0] for p in pairs])
        dh_b, ds_b, p_b = self.homodimer_energies([p[1] for p in pairs])
        for c, t in enumerate(temps):
            k_ab = association_constants(dh_ab, ds_ab, p_ab, t)
            k_aa = association_constants(dh_a, ds_a, p_a, t)
            k_bb = association_constants(dh_b, ds_b, p_b, t)
            a, b, _ = solve_tubes(self.conc, self.conc, k_aa, k_bb, k_ab)
            out[:, c] = np.clip(k_ab * a * b / self.conc, 0.0, 1.0)
        return out

    def __call__(self, s1, s2, temp_c=REFERENCE_TEMP) -> float:
        return float(self.yields([(s1, s2)], [temp_c])[0, 0])


def tube_state(s1, s2, temp_c=REFERENCE_TEMP, nn=None, params=DEFAULT_PARAMS,
               conc=DEFAULT_CONC) -> TubeState:
    """Full species table for one pair."""
    e_ab = duplex_energy(s1, s2, params, nn)
    e_aa = duplex_energy(s1, s1, params, nn)
    e_bb = duplex_energy(s2, s2, params, nn)
    spec = TubeSpec(conc, conc, temp_c, e_aa.association_constant(temp_c),
                    e_bb.association_constant(temp_c), e_ab.association_constant(temp_c))
    return equilibrate(spec)


def pair_yield(s1, s2, temp_c=REFERENCE_TEMP, nn=None) -> float:
    if not 0 <= temp_c <= 100:
        raise ValueError("temperature must lie in [0, 100] C")
    return tube_state(s1, s2, temp_c, nn).yield_


def yield_profile(s1, s2, temps=TEMPS, nn=None) -> np.ndarray:
    return YieldOracle(nn).yields([(s1, s2)], temps)[0]


def temp_similarity(yields: np.ndarray):
    """Pairwise MAE and MSE between the temperature columns of ``yields``."""
    y = np.asarray(yields, dtype=float)
    diff = y[:, :, None] - y[:, None, :]
    return np.abs(diff).mean(axis=0), (diff ** 2).mean(axis=0)
