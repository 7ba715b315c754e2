"""Two-level (sum-of-products) Boolean minimization.

Two routes:
  * ``qm_minimize``       - exact minimum-cube cover (prime generation,
                            essential selection, branch-and-bound), for
                            small widths; serves as the quality oracle.
  * ``espresso_minimize`` - the heuristic EXPAND / IRREDUNDANT / REDUCE
                            loop against an explicit OFF-set cover.

Cubes are immutable literal vectors encoded as two bitmasks (``pos`` for
variables fixed to 1, ``neg`` for variables fixed to 0; dash elsewhere).
Variable v corresponds to bit v of a minterm index; in the text form the
leftmost character is the highest variable index.

Processing orders are fixed (size-descending, then the text form) so
results are reproducible regardless of caller threading.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Cube:
    width: int
    pos: int  # bitmask: variables that must be 1
    neg: int  # bitmask: variables that must be 0

    def __post_init__(self):
        if self.pos & self.neg:
            raise ValueError("cube has conflicting literals")
        full = (1 << self.width) - 1
        if (self.pos | self.neg) & ~full:
            raise ValueError("literal outside cube width")

    @classmethod
    def from_string(cls, text: str) -> "Cube":
        pos = neg = 0
        n = len(text)
        for col, ch in enumerate(text):
            var = n - 1 - col
            if ch == "1":
                pos |= 1 << var
            elif ch == "0":
                neg |= 1 << var
            elif ch != "-":
                raise ValueError(f"invalid cube character {ch!r}")
        return cls(width=n, pos=pos, neg=neg)

    def to_string(self) -> str:
        chars = []
        for var in range(self.width - 1, -1, -1):
            bit = 1 << var
            chars.append("1" if self.pos & bit else "0" if self.neg & bit else "-")
        return "".join(chars)

    @property
    def literal_count(self) -> int:
        return bin(self.pos | self.neg).count("1")

    @property
    def minterm_count(self) -> int:
        return 1 << (self.width - self.literal_count)

    def covers(self, minterm: int) -> bool:
        return (minterm & self.pos) == self.pos and (minterm & self.neg) == 0

    def covers_array(self, minterms: np.ndarray) -> np.ndarray:
        return ((minterms & self.pos) == self.pos) & ((minterms & self.neg) == 0)

    def contains(self, other: "Cube") -> bool:
        """True when every minterm of ``other`` is covered by this cube."""
        return (self.pos & ~other.pos) == 0 and (self.neg & ~other.neg) == 0

    def intersects(self, other: "Cube") -> bool:
        return (self.pos & other.neg) == 0 and (self.neg & other.pos) == 0

    def minterms(self) -> list[int]:
        free = [v for v in range(self.width) if not ((self.pos | self.neg) >> v) & 1]
        out = []
        for combo in range(1 << len(free)):
            m = self.pos
            for i, v in enumerate(free):
                if (combo >> i) & 1:
                    m |= 1 << v
            out.append(m)
        return out


@dataclass
class Cover:
    width: int
    cubes: list[Cube] = field(default_factory=list)

    def __post_init__(self):
        for c in self.cubes:
            if c.width != self.width:
                raise ValueError("all cubes in a cover must share its width")

    def __len__(self) -> int:
        return len(self.cubes)

    @property
    def literal_count(self) -> int:
        return sum(c.literal_count for c in self.cubes)


def cover_function(cover: Cover) -> set[int]:
    """The set of minterms realized by the cover (union over its cubes)."""
    out: set[int] = set()
    for c in cover.cubes:
        out.update(c.minterms())
    return out


def minterm_cover(width: int, minterms) -> Cover:
    """One fully-specified cube per minterm, ascending order."""
    full = (1 << width) - 1
    return Cover(width, [Cube(width, m, full & ~m) for m in sorted(set(minterms))])


def complement_minterms(width: int, on_set) -> list[int]:
    on = set(on_set)
    return [m for m in range(1 << width) if m not in on]


def _sort_key(cube: Cube):
    return (-cube.minterm_count, cube.to_string())


def cover_cost(cubes: list[Cube]) -> tuple[int, int]:
    return (len(cubes), sum(c.literal_count for c in cubes))


# --- exact minimization (Quine-McCluskey + branch and bound) -----------------

def _prime_implicants(width: int, terms: list[int]) -> list[Cube]:
    full = (1 << width) - 1
    current = {(m, 0) for m in terms}  # (value, dash mask)
    primes = set()
    while current:
        by_dash: dict[int, dict[int, list[int]]] = {}
        for value, dash in current:
            by_dash.setdefault(dash, {}).setdefault(bin(value).count("1"), []).append(value)
        used = set()
        nxt = set()
        for dash, groups in by_dash.items():
            for ones, values in groups.items():
                uppers = groups.get(ones + 1, ())
                for v1 in values:
                    for v2 in uppers:
                        diff = v1 ^ v2
                        if diff and (diff & (diff - 1)) == 0:
                            used.add((v1, dash))
                            used.add((v2, dash))
                            nxt.add((v1 & v2, dash | diff))
        primes.update(current - used)
        current = nxt
    out = []
    for value, dash in primes:
        out.append(Cube(width, pos=value, neg=full & ~value & ~dash))
    return out


def _greedy_disjoint_bound(rows: list[frozenset]) -> int:
    taken: set[int] = set()
    count = 0
    for row in sorted(rows, key=lambda s: (len(s), sorted(s))):
        if not (row & taken):
            count += 1
            taken |= row
    return count


def _reduce_cover_problem(rows: list[frozenset]) -> tuple[int, list[frozenset]]:
    """Essential-column and dominance reductions of a unate covering problem.

    Returns (forced column count, reduced rows). Column dominance is safe
    here because only the cover's SIZE is being computed.
    """
    forced_total = 0
    rows = list(rows)
    while True:
        forced = {next(iter(s)) for s in rows if len(s) == 1}
        if forced:
            forced_total += len(forced)
            rows = [s for s in rows if not (s & forced)]
            continue
        if not rows:
            break
        # row dominance: a row whose candidate set contains another's is free
        uniq = sorted(set(rows), key=lambda s: (len(s), sorted(s)))
        kept = []
        for s in uniq:
            if not any(t < s for t in uniq):
                kept.append(s)
        changed = len(kept) != len(rows)
        rows = kept
        # column dominance: drop a column whose rows are a subset of another's
        col_rows: dict[int, set[int]] = {}
        for ri, s in enumerate(rows):
            for c in s:
                col_rows.setdefault(c, set()).add(ri)
        cols = sorted(col_rows)
        dominated: set[int] = set()
        for a in cols:
            if a in dominated:
                continue
            for b in cols:
                if a == b or b in dominated:
                    continue
                if col_rows[a] < col_rows[b] or (col_rows[a] == col_rows[b] and b < a):
                    dominated.add(a)
                    break
        if dominated:
            rows = [frozenset(s - dominated) for s in rows]
            changed = True
        if not changed:
            break
    return forced_total, rows


def _min_cover_size(rows: list[frozenset], cap: int | None) -> int | None:
    """Minimum number of columns covering all rows, or None if above cap.

    Branch and bound: reduce, bound with greedy disjoint rows, branch on the
    row with the fewest candidates.
    """
    forced, rows = _reduce_cover_problem(rows)
    if cap is not None and forced > cap:
        return None
    if not rows:
        return forced
    lb = _greedy_disjoint_bound(rows)
    if cap is not None and forced + lb > cap:
        return None
    branch_row = min(rows, key=lambda s: (len(s), sorted(s)))
    best: int | None = None
    sub_cap = None if cap is None else cap - forced - 1
    for c in sorted(branch_row):
        if best is not None:
            limit = best - 2  # need 1 + sub < best
            sub_cap = limit if sub_cap is None else min(sub_cap, limit)
            if sub_cap < 0:
                break
        sub = _min_cover_size([s for s in rows if c not in s], sub_cap)
        if sub is not None:
            total = 1 + sub
            if best is None or total < best:
                best = total
    return None if best is None else forced + best


def _min_cover_indices(primes: list[Cube], on: list[int]) -> list[int]:
    """Exact minimum-cardinality prime selection; among all minimum covers
    the lexicographically smallest (in the primes' fixed order) is returned."""
    rows_by_m: dict[int, frozenset] = {}
    for m in on:
        cand = frozenset(i for i, p in enumerate(primes) if p.covers(m))
        if not cand:
            raise RuntimeError(f"minterm {m} not covered by any prime")
        rows_by_m[m] = cand

    # essentials and row dominance preserve the full set of minimum covers,
    # so the lexicographic refinement below still sees every tie
    chosen: set[int] = set()
    rows = [rows_by_m[m] for m in sorted(rows_by_m)]
    while True:
        forced = {next(iter(s)) for s in rows if len(s) == 1}
        if forced:
            chosen |= forced
            rows = [s for s in rows if not (s & forced)]
            continue
        uniq = sorted(set(rows), key=lambda s: (len(s), sorted(s)))
        kept = [s for s in uniq if not any(t < s for t in uniq)]
        if len(kept) == len(rows):
            break
        rows = kept
    if not rows:
        return sorted(chosen)

    budget = _min_cover_size(rows, None)
    cands = sorted({i for row in rows for i in row})
    picked: list[int] = []
    for pos, c in enumerate(cands):
        if not rows:
            break
        if budget == 0:
            raise RuntimeError("unreachable: rows left but budget exhausted")
        allowed = set(cands[pos + 1:])
        remaining = [s for s in rows if c not in s]
        filtered = [frozenset(s & allowed) for s in remaining]
        if any(len(s) == 0 for s in filtered):
            need = None  # some row only coverable by already-rejected columns
        else:
            need = _min_cover_size(filtered, budget - 1)
        if need is not None:
            picked.append(c)
            rows = remaining
            budget -= 1
    if rows:
        raise RuntimeError("unreachable: lexicographic refinement failed to cover")
    return sorted(chosen | set(picked))


def qm_minimize(table, dc=()) -> Cover:
    """Exact minimum-cube cover of a completely specified function.

    ``table`` provides ``num_inputs`` and ``on_set``. Don't-care minterms
    (``dc``) may be merged into primes but never need covering. Ties between
    minimum covers resolve to the lexicographically smallest cube list.
    """
    width = table.num_inputs
    if width > 12:
        raise ValueError(f"qm_minimize is limited to 12 inputs, got {width}")
    on = sorted(set(table.on_set))
    if any(m < 0 or m >= (1 << width) for m in on):
        raise ValueError("minterm index out of range")
    if not on:
        return Cover(width, [])
    terms = sorted(set(on) | set(dc))
    primes = [p for p in _prime_implicants(width, terms)
              if any(p.covers(m) for m in on)]
    primes.sort(key=lambda c: c.to_string())
    picked = _min_cover_indices(primes, on)
    cubes = sorted((primes[i] for i in picked), key=_sort_key)
    return Cover(width, cubes)


# --- espresso-style heuristic loop --------------------------------------------

def _offset_arrays(offset: Cover):
    pos = np.array([c.pos for c in offset.cubes], dtype=np.int64)
    neg = np.array([c.neg for c in offset.cubes], dtype=np.int64)
    return pos, neg


def _expand_cube(cube: Cube, off_pos: np.ndarray, off_neg: np.ndarray,
                 on_pos: np.ndarray, on_neg: np.ndarray) -> Cube:
    """Raise literals to dash one at a time until prime w.r.t. the offset.

    A literal is hard-blocked when some offset cube conflicts with the cube
    at that variable alone. Among the rest, the raise absorbing the most
    other onset cubes goes first; ties prefer the literal involved in the
    fewest offset conflicts, then the lower variable index.
    """
    pos, neg = cube.pos, cube.neg
    width = cube.width
    while True:
        specified = pos | neg
        if specified == 0:
            break
        conflicts = (pos & off_neg) | (neg & off_pos)
        singles = conflicts[(conflicts != 0) & ((conflicts & (conflicts - 1)) == 0)]
        hard_blocked = int(np.bitwise_or.reduce(singles)) if singles.size else 0
        raisable = specified & ~hard_blocked
        if raisable == 0:
            break
        best_v, best_key = -1, None
        for v in range(width):
            if not (raisable >> v) & 1:
                continue
            blockers = int(np.count_nonzero((conflicts >> v) & 1))
            bit = 1 << v
            p2, n2 = pos & ~bit, neg & ~bit
            absorbed = int(np.count_nonzero(((p2 & ~on_pos) == 0) & ((n2 & ~on_neg) == 0)))
            key = (-absorbed, blockers, v)
            if best_key is None or key < best_key:
                best_v, best_key = v, key
        pos &= ~(1 << best_v)
        neg &= ~(1 << best_v)
    return Cube(cube.width, pos, neg)


def expand(cover: Cover, offset: Cover) -> Cover:
    """EXPAND: make each cube prime against the offset; drop cubes that an
    expanded cube absorbs."""
    if not cover.cubes:
        return Cover(cover.width, [])
    off_pos, off_neg = _offset_arrays(offset) if offset.cubes else (
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    work: list[Cube | None] = [c for c in sorted(cover.cubes, key=_sort_key)]
    for i in range(len(work)):
        if work[i] is None:
            continue
        others = [c for j, c in enumerate(work) if j != i and c is not None]
        on_pos = np.array([c.pos for c in others], dtype=np.int64)
        on_neg = np.array([c.neg for c in others], dtype=np.int64)
        expanded = _expand_cube(work[i], off_pos, off_neg, on_pos, on_neg)
        work[i] = expanded
        for j in range(len(work)):
            if j != i and work[j] is not None and expanded.contains(work[j]):
                work[j] = None
    return Cover(cover.width, [c for c in work if c is not None])


def _required_minterms(onset: Cover) -> np.ndarray:
    return np.array(sorted(cover_function(onset)), dtype=np.int64)


def _coverage_matrix(cubes: list[Cube], minterms: np.ndarray) -> np.ndarray:
    if not len(minterms):
        return np.zeros((len(cubes), 0), dtype=bool)
    return np.array([c.covers_array(minterms) for c in cubes], dtype=bool)


def irredundant(cover: Cover, onset: Cover) -> Cover:
    """IRREDUNDANT: greedily drop cubes (smallest first, so the largest are
    attempted last) while the remaining cover still covers the onset."""
    required = _required_minterms(onset)
    if not cover.cubes:
        if required.size:
            raise ValueError("cover does not cover the onset")
        return Cover(cover.width, [])
    rows = _coverage_matrix(cover.cubes, required)
    counts = rows.sum(axis=0)
    if required.size and counts.min() == 0:
        missing = int(required[int(np.argmin(counts))])
        raise ValueError(f"cover does not cover the onset (minterm {missing})")
    alive = [True] * len(cover.cubes)
    order = sorted(range(len(cover.cubes)),
                   key=lambda i: (cover.cubes[i].minterm_count, cover.cubes[i].to_string()))
    for i in order:
        mine = rows[i]
        if not mine.any() or np.all(counts[mine] >= 2):
            alive[i] = False
            counts = counts - mine
    return Cover(cover.width, [c for c, a in zip(cover.cubes, alive) if a])


def _supercube(minterms: np.ndarray, width: int) -> Cube:
    full = (1 << width) - 1
    v_and = full
    v_or = 0
    for m in minterms:
        v_and &= int(m)
        v_or |= int(m)
    return Cube(width, pos=v_and, neg=full & ~v_or)


def reduce(cover: Cover, onset: Cover) -> Cover:
    """REDUCE: shrink each cube to the smallest cube covering the onset
    minterms only it covers (processing larger cubes first); cubes left
    with no unique minterms are dropped."""
    required = _required_minterms(onset)
    cubes: list[Cube | None] = list(cover.cubes)
    rows = _coverage_matrix(cover.cubes, required)
    counts = rows.sum(axis=0)
    order = sorted(range(len(cubes)), key=lambda i: _sort_key(cubes[i]))
    for i in order:
        mine = rows[i]
        unique = mine & (counts == 1)
        if not unique.any():
            cubes[i] = None
            counts = counts - mine
            rows[i] = np.zeros_like(mine)
            continue
        reduced = _supercube(required[unique], cover.width)
        new_row = reduced.covers_array(required)
        counts = counts - mine + new_row
        rows[i] = new_row
        cubes[i] = reduced
    return Cover(cover.width, [c for c in cubes if c is not None])


def _check_disjoint(onset: Cover, offset: Cover) -> None:
    for a in onset.cubes:
        for b in offset.cubes:
            if a.intersects(b):
                witness = a.pos | b.pos
                raise ValueError(f"onset and offset overlap (witness minterm {witness})")


def espresso_minimize(onset: Cover, offset: Cover, dc: Cover | None = None) -> Cover:
    """Heuristic two-level minimization.

    Runs EXPAND + IRREDUNDANT, then repeats REDUCE -> EXPAND -> IRREDUNDANT
    while the (cube count, literal count) cost improves; the kept result is
    always a freshly expanded, irredundant cover. The don't-care cover may
    be absorbed into cubes but never needs covering.
    """
    if onset.width != offset.width:
        raise ValueError("onset and offset widths differ")
    if dc is not None and dc.width != onset.width:
        raise ValueError("don't-care cover width differs")
    _check_disjoint(onset, offset)
    if dc is not None:
        _check_disjoint(dc, offset)
    if not onset.cubes:
        return Cover(onset.width, [])
    required = Cover(onset.width, list(onset.cubes))

    work = irredundant(expand(onset, offset), required)
    while True:
        before = cover_cost(work.cubes)
        trial = irredundant(expand(reduce(work, required), offset), required)
        if cover_cost(trial.cubes) < before:
            work = trial
        else:
            break

    result = Cover(onset.width, sorted(work.cubes, key=_sort_key))
    # cheap exactness guard: never ship an invalid cover
    req = _required_minterms(required)
    if req.size:
        covered = np.zeros(len(req), dtype=bool)
        for c in result.cubes:
            covered |= c.covers_array(req)
        if not covered.all():
            raise RuntimeError("internal error: minimized cover lost onset minterms")
    for a in result.cubes:
        for b in offset.cubes:
            if a.intersects(b):
                raise RuntimeError("internal error: minimized cover touches the offset")
    return result
