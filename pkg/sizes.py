"""sizes.py - sizes and energies of tile collections

Implements:
- SizeEnergyExponents: the theta simplex of the generic size-energy estimate
- SizeReport: value plus the witness tree(s) that produce it, with reevaluate()
- size_j: sup over j-lacunary trees of the L2 tree average
- energy_j: strongly disjoint tree packing per dyadic level, exact over minimal trees on families of at
  most six tiles and greedy above; energy_j_exhaustive is the brute-force optimum it is checked against
- ssize / ssize_q: sup of chi_tilde-weighted averages over the spatial intervals of a family
- size_e / size_m: energy and density sizes of multi-tile families
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np

from grid import CutoffSpec, DyadicInterval, GridSpec, as_signal, chi_tilde, weighted_average
from operators import LinearizationData
from packets import PacketBackend, multi_tile_coefficients, tri_tile_coefficients
from tiles import (FAST, MultiTileFamily, RankOneFamily, TileOrder, Tree, candidate_tops, circular_contains,
                   circular_point_in, dilate, strongly_disjoint, tree_matrix, var_tops, var_tree_matrices,
                   _strong_pair_ok)

log = logging.getLogger(__name__)

GREEDY = 'GREEDY'
EXHAUSTIVE = 'EXHAUSTIVE'
ENERGY_FLOOR = 1e-14
EXHAUSTIVE_ENERGY_CAP = 6


@dataclass(frozen=True)
class SizeEnergyExponents:
    theta1: float = 1 / 3
    theta2: float = 1 / 3
    theta3: float = 1 / 3

    def __post_init__(self):
        thetas = self.as_tuple()
        if any(not 0 <= t < 1 for t in thetas):
            raise ValueError(f'each theta must lie in [0, 1), got {thetas}')
        if abs(sum(thetas) - 1) > 1e-12:
            raise ValueError(f'thetas must sum to 1, got {sum(thetas)}')

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.theta1, self.theta2, self.theta3)

    @classmethod
    def from_tuple(cls, thetas: Sequence[float]) -> 'SizeEnergyExponents':
        if len(thetas) != 3:
            raise ValueError(f'need three thetas, got {thetas}')
        return cls(*(float(t) for t in thetas))


@dataclass(frozen=True)
class SizeReport:
    value: float
    witness_tree: Optional[Tree]
    method: str
    witness_trees: Tuple[Tree, ...] = ()
    level: Optional[int] = None

    def to_json(self) -> Dict[str, Any]:
        return {'value': self.value, 'method': self.method, 'level': self.level,
                'witness_tree': self.witness_tree.to_json() if self.witness_tree else None,
                'witness_trees': [t.to_json() for t in self.witness_trees]}


def level_of(x: float) -> int:
    """Smallest integer n with x <= 2^n."""
    if not x > 0:
        raise ValueError(f'level of a non-positive value {x}')
    m, e = math.frexp(x)
    return e - 1 if m == 0.5 else e


def tree_l2(weights: np.ndarray, members: Sequence[int], top_k: int) -> float:
    """((1/|I_T|) sum_{P in T} |a_P|^2)^(1/2) given weights |a_P|^2."""
    idx = np.sort(np.asarray(members, dtype=np.int64))
    return math.sqrt(float(np.sum(weights[idx])) * 2.0 ** top_k)


@dataclass(frozen=True, eq=False)
class LacunaryTable:
    """Candidate tops over every kind i != j, sorted by (k, n, xi, kind), with memberships."""

    tops: np.ndarray
    kinds: np.ndarray
    members: np.ndarray

    def values(self, weights: np.ndarray, active: Optional[np.ndarray] = None) -> np.ndarray:
        mask = self.members if active is None else self.members & active[None, :]
        sums = np.where(mask, weights[None, :], 0.0).sum(axis=1)
        return np.sqrt(sums * 2.0 ** self.tops[:, 0])

    def tree(self, row: int, active: Optional[np.ndarray] = None) -> Tree:
        mask = self.members[row] if active is None else self.members[row] & active
        k, n, xi = (int(v) for v in self.tops[row])
        return Tree(tuple(np.flatnonzero(mask)), DyadicInterval(k, n), xi, int(self.kinds[row]))


def lacunary_table(fam: RankOneFamily, j: int, policy: str, order: TileOrder) -> LacunaryTable:
    if j not in (1, 2, 3):
        raise ValueError(f'j must be 1, 2 or 3, got {j}')
    tops, kinds, mats = [], [], []
    for i in (1, 2, 3):
        if i == j:
            continue
        t = candidate_tops(fam, i, policy, order)
        tops.append(t)
        kinds.append(np.full(len(t), i, dtype=np.int64))
        mats.append(tree_matrix(fam, t, i))
    tops_a = np.concatenate(tops)
    kinds_a = np.concatenate(kinds)
    mats_a = np.concatenate(mats)
    rank = np.lexsort((kinds_a, tops_a[:, 2], tops_a[:, 1], tops_a[:, 0]))
    return LacunaryTable(tops_a[rank], kinds_a[rank], mats_a[rank])


def size_j(fam: RankOneFamily, f: Any, j: int, backend: PacketBackend = PacketBackend(),
           policy: str = FAST, order: TileOrder = TileOrder()) -> SizeReport:
    """sup over j-lacunary trees of ((1/|I_T|) sum_{P in T} |<f, phi^j_Pj>|^2)^(1/2)."""
    if len(fam) == 0:
        return SizeReport(0.0, None, policy)
    weights = np.abs(tri_tile_coefficients(fam, f, j, backend)) ** 2
    table = lacunary_table(fam, j, policy, order)
    vals = table.values(weights)
    best = int(np.argmax(vals))
    return SizeReport(float(vals[best]), table.tree(best), policy)


def _prune_overlaps(fam: RankOneFamily, members: np.ndarray, j: int, used: List[int]) -> List[int]:
    """Members whose j-components avoid each other and every component already used."""
    lo, length = fam.component_bounds(j)
    kept: List[int] = []
    for p in members:
        clash = False
        for q in used + kept:
            if fam[int(p)].space.intersects(fam[q].space) and \
                    lo[p] < lo[q] + length[q] and lo[q] < lo[p] + length[p]:
                clash = True
                break
        if not clash:
            kept.append(int(p))
    return kept


def energy_j(fam: RankOneFamily, f: Any, j: int, backend: PacketBackend = PacketBackend(),
             order: TileOrder = TileOrder(), floor: float = ENERGY_FLOOR,
             exact_tiles: int = EXHAUSTIVE_ENERGY_CAP) -> SizeReport:
    """sup_n 2^n (sum_{T in T_n} |I_T|)^(1/2) over strongly disjoint trees.

    Families of at most exact_tiles tiles are packed exactly over minimal qualifying trees, which
    reaches the same sup as energy_j_exhaustive. Larger families use the greedy: at level n a tree
    qualifies when 2^(n-1) < S2(T) and the remaining tiles have size at most 2^n; trees are
    extracted with the largest top frequency first. Members whose j-components would overlap an
    earlier selection stay in the stock but are left out of the tree.
    """
    if len(fam) == 0:
        return SizeReport(0.0, None, GREEDY)
    weights = np.abs(tri_tile_coefficients(fam, f, j, backend)) ** 2
    table = lacunary_table(fam, j, FAST, order)
    if len(fam) <= exact_tiles:
        return _minimal_tree_energy(fam, weights, table, j)
    remaining = np.ones(len(fam), dtype=bool)
    top = float(table.values(weights).max())
    if top <= 0:
        return SizeReport(0.0, None, GREEDY)
    best = SizeReport(0.0, None, GREEDY)
    n = level_of(top)
    while np.any(remaining & (weights > 0)) and 2.0 ** n >= floor:
        threshold = 2.0 ** (n - 1)
        selected: List[Tree] = []
        used: List[int] = []
        while True:
            vals = table.values(weights, remaining)
            eligible = np.flatnonzero(vals > threshold)
            if len(eligible) == 0:
                break
            xis = table.tops[eligible, 2]
            row = int(eligible[np.flatnonzero(xis == xis.max())[0]])
            members = np.flatnonzero(table.members[row] & remaining)
            kept = _prune_overlaps(fam, members, j, used)
            if not kept:
                # nothing of this row fits at this level any more
                remaining[members] = False
                continue
            remaining[kept] = False
            k, pos, xi = (int(v) for v in table.tops[row])
            tree = Tree(tuple(kept), DyadicInterval(k, pos), xi, int(table.kinds[row]))
            if tree_l2(weights, kept, k) > threshold and strongly_disjoint(fam, selected + [tree], j):
                selected.append(tree)
                used.extend(kept)
        if selected:
            value = 2.0 ** n * math.sqrt(sum(t.top_space.length for t in selected))
            log.debug('energy level n=%d: %d trees, value %.6g', n, len(selected), value)
            if value > best.value:
                best = SizeReport(value, selected[0], GREEDY, tuple(selected), n)
        n -= 1
    return best


def _minimal_tree_energy(fam: RankOneFamily, weights: np.ndarray, table: LacunaryTable, j: int) -> SizeReport:
    """Exact energy packing over trees none of whose one-smaller subtrees qualify at the same level.

    Any qualifying tree contains such a minimal one with the same top, and shrinking members never
    breaks disjointness or strong disjointness, so the packing optimum is unchanged.
    """
    P = len(fam)
    sub_size: Dict[Tuple[int, ...], float] = {}

    def size_of(key: Tuple[int, ...]) -> float:
        if key not in sub_size:
            active = np.zeros(P, dtype=bool)
            active[list(key)] = True
            sub_size[key] = float(table.values(weights, active).max())
        return sub_size[key]

    def level(key: Tuple[int, ...], k: int) -> Optional[int]:
        s2 = tree_l2(weights, key, k)
        if s2 <= 0:
            return None
        n = level_of(s2)
        return n if size_of(key) <= 2.0 ** n else None

    by_level: Dict[int, Dict[Tuple[Tuple[int, ...], DyadicInterval], Tree]] = {}
    for row in range(len(table.tops)):
        row_members = [int(p) for p in np.flatnonzero(table.members[row])]
        k, pos, xi = (int(v) for v in table.tops[row])
        for r in range(1, len(row_members) + 1):
            for key in combinations(row_members, r):
                n = level(key, k)
                if n is None:
                    continue
                if any(level(key[:i] + key[i + 1:], k) == n for i in range(r)):
                    continue
                top = DyadicInterval(k, pos)
                by_level.setdefault(n, {}).setdefault((key, top), Tree(key, top, xi, int(table.kinds[row])))
    best = SizeReport(0.0, None, EXHAUSTIVE)
    for n in sorted(by_level):
        cands = sorted(by_level[n].values(), key=lambda t: (t.members, t.top_space))
        total, chosen = _best_packing(fam, cands, j, P)
        if total > 0:
            value = 2.0 ** n * math.sqrt(total)
            if value > best.value:
                best = SizeReport(value, chosen[0], EXHAUSTIVE, tuple(chosen), n)
    return best


def energy_j_exhaustive(fam: RankOneFamily, f: Any, j: int, backend: PacketBackend = PacketBackend(),
                        order: TileOrder = TileOrder(), max_tiles: int = EXHAUSTIVE_ENERGY_CAP) -> SizeReport:
    """The exact energy sup: every (subset, top) tree qualifying at its own level, packed by search."""
    P = len(fam)
    if P > max_tiles:
        raise ValueError(f'exhaustive energy is capped at {max_tiles} tiles, family has {P}')
    if P == 0:
        return SizeReport(0.0, None, EXHAUSTIVE)
    weights = np.abs(tri_tile_coefficients(fam, f, j, backend)) ** 2
    table = lacunary_table(fam, j, FAST, order)
    subsets = [np.array(c) for r in range(1, P + 1) for c in combinations(range(P), r)]
    sub_size: Dict[Tuple[int, ...], float] = {}
    for s in subsets:
        active = np.zeros(P, dtype=bool)
        active[s] = True
        sub_size[tuple(s)] = float(table.values(weights, active).max())
    by_level: Dict[int, Dict[Tuple[Tuple[int, ...], DyadicInterval], Tree]] = {}
    for row in range(len(table.tops)):
        row_set = set(np.flatnonzero(table.members[row]).tolist())
        k, pos, xi = (int(v) for v in table.tops[row])
        for s in subsets:
            key = tuple(int(i) for i in s)
            if not row_set.issuperset(key):
                continue
            s2 = tree_l2(weights, key, k)
            if s2 <= 0:
                continue
            n = level_of(s2)
            if sub_size[key] > 2.0 ** n:
                continue
            top = DyadicInterval(k, pos)
            by_level.setdefault(n, {}).setdefault((key, top), Tree(key, top, xi, int(table.kinds[row])))
    best = SizeReport(0.0, None, EXHAUSTIVE)
    for n in sorted(by_level):
        cands = sorted(by_level[n].values(), key=lambda t: (t.members, t.top_space))
        total, chosen = _best_packing(fam, cands, j, P)
        if total > 0:
            value = 2.0 ** n * math.sqrt(total)
            if value > best.value:
                best = SizeReport(value, chosen[0], EXHAUSTIVE, tuple(chosen), n)
    return best


def _best_packing(fam: RankOneFamily, cands: List[Tree], j: int, P: int) -> Tuple[float, List[Tree]]:
    """Max sum |I_T| over pairwise disjoint, strongly disjoint sub-collections."""
    by_low: Dict[int, List[Tree]] = {}
    for t in cands:
        by_low.setdefault(t.members[0], []).append(t)
    best: List[Any] = [0.0, []]

    def compatible(t: Tree, chosen: List[Tree]) -> bool:
        return all(_strong_pair_ok(fam, t, c, j) and _strong_pair_ok(fam, c, t, j) for c in chosen)

    def search(pos: int, used: frozenset, chosen: List[Tree], total: float) -> None:
        if total > best[0]:
            best[0], best[1] = total, list(chosen)
        if pos >= P:
            return
        if pos not in used:
            for t in by_low.get(pos, []):
                if used.isdisjoint(t.members) and compatible(t, chosen):
                    chosen.append(t)
                    search(pos + 1, used | set(t.members), chosen, total + t.top_space.length)
                    chosen.pop()
        search(pos + 1, used, chosen, total)

    search(0, frozenset(), [], 0.0)
    return best[0], best[1]


def reevaluate(report: SizeReport, fam: RankOneFamily, f: Any, j: int,
               backend: PacketBackend = PacketBackend()) -> float:
    """Recompute a report's value from its witnesses alone."""
    if report.witness_tree is None:
        return 0.0
    weights = np.abs(tri_tile_coefficients(fam, f, j, backend)) ** 2
    if report.level is None:
        t = report.witness_tree
        return tree_l2(weights, t.members, t.top_space.k)
    return 2.0 ** report.level * math.sqrt(sum(t.top_space.length for t in report.witness_trees))


def ssize(fam, f: Any, s: float = 1.0, c: CutoffSpec = CutoffSpec(),
          localized_to: Optional[DyadicInterval] = None) -> float:
    """sup over I in {I_P} (and I0 when localized) of weighted_average(f, I, s)."""
    intervals = sorted(set(fam.spaces))
    if localized_to is not None:
        outside = [I for I in intervals if not localized_to.contains(I)]
        if outside:
            raise ValueError(f'family is not localized to {localized_to}: {outside[0]} sticks out')
        intervals.append(localized_to)
    if not intervals:
        return 0.0
    return max(weighted_average(f, I, s, c) for I in intervals)


def ssize_q(fam, f: Any, q: float, c: CutoffSpec = CutoffSpec(),
            localized_to: Optional[DyadicInterval] = None) -> float:
    """(ssize(|f|^q))^(1/q)."""
    if q <= 0:
        raise ValueError(f'q must be positive, got {q}')
    return ssize(fam, np.abs(as_signal(f)) ** q, 1.0, c, localized_to) ** (1.0 / q)


@lru_cache(maxsize=16)
def _var_tops(j_levels: int) -> np.ndarray:
    return var_tops(GridSpec(j_levels))


def size_e_tree(mfam: MultiTileFamily, f: Any, backend: PacketBackend = PacketBackend(),
                active: Optional[np.ndarray] = None) -> Tuple[float, Optional[Tree]]:
    """Largest l-overlapping tree average of |<f, phi_P>|^2, and its tree."""
    if len(mfam) == 0 or (active is not None and not active.any()):
        return 0.0, None
    weights = np.abs(multi_tile_coefficients(mfam, f, backend)) ** 2
    tops = _var_tops(mfam.grid.j_levels)
    _, overlap = var_tree_matrices(mfam, tops)
    if active is not None:
        overlap = overlap & active[None, :]
    sums = np.where(overlap, weights[None, :], 0.0).sum(axis=1)
    vals = np.sqrt(sums * 2.0 ** tops[:, 0])
    best = int(np.argmax(vals))
    k, pos, xi = (int(v) for v in tops[best])
    tree = Tree(tuple(np.flatnonzero(overlap[best])), DyadicInterval(k, pos), xi, 0, overlapping=True)
    return float(vals[best]), tree


def size_e(mfam: MultiTileFamily, f: Any, backend: PacketBackend = PacketBackend()) -> float:
    return size_e_tree(mfam, f, backend)[0]


def enlarged_intervals(I: DyadicInterval, g: GridSpec) -> List[DyadicInterval]:
    """Ancestors-or-self of I that lie inside the periodic 9 I."""
    lo, length = dilate(I.start(g), I.size(g), 9)
    return [A for A in I.ancestors()
            if circular_contains(lo, length, A.start(g), A.size(g), g.n_samples)]


def _density_by_interval(mfam: MultiTileFamily, g_abs_rp: np.ndarray, lin: LinearizationData,
                         A: DyadicInterval, c: CutoffSpec) -> np.ndarray:
    """((1/|A|) sum_x |g|^r' chi_A sum_k |a_k|^r' 1(xi_(k-1)(x) in omega))^(1/r') for every top xi."""
    grid = mfam.grid
    N = grid.n_samples
    rp = lin.r_prime
    half = (mfam.constants.c2 - 1) * 2.0 ** A.k / 4
    base = g_abs_rp * chi_tilde(A, c, grid)
    weighted = base[:, None] * np.abs(lin.a) ** rp
    xi_top = np.arange(N, dtype=float)[:, None, None]
    hit = circular_point_in(xi_top - half, 2 * half, lin.xi[None, :, :-1], N)
    totals = np.sum(np.where(hit, weighted[None, :, :], 0.0), axis=(1, 2))
    return (totals / A.size(grid)) ** (1.0 / rp)


def size_m_witness(mfam: MultiTileFamily, g: Any, lin: LinearizationData, c: CutoffSpec = CutoffSpec(),
                   active: Optional[np.ndarray] = None) -> Tuple[float, Optional[Tuple[int, DyadicInterval, int]]]:
    """size_m together with the maximizing (tile index, enlarged interval, top frequency)."""
    grid = mfam.grid
    arr = as_signal(g, grid)
    if lin.xi.shape[0] != grid.n_samples:
        raise ValueError('linearization lives on a different grid')
    if len(mfam) == 0:
        return 0.0, None
    g_abs_rp = np.abs(arr) ** lin.r_prime
    N = grid.n_samples
    half_scale = (mfam.constants.c2 - 1) / 4
    cache: Dict[DyadicInterval, np.ndarray] = {}
    best_val, best_key = 0.0, None
    xi_all = np.arange(N, dtype=float)
    for p in range(len(mfam)):
        if active is not None and not active[p]:
            continue
        block_lo = float(mfam.block_lo[p])
        block_len = float(mfam.block_len[p])
        for A in enlarged_intervals(mfam[p].space, grid):
            half = half_scale * 2.0 ** A.k
            ok = circular_contains(block_lo, block_len, xi_all - half, 2 * half, N)
            if not ok.any():
                continue
            if A not in cache:
                cache[A] = _density_by_interval(mfam, g_abs_rp, lin, A, c)
            vals = np.where(ok, cache[A], -1.0)
            xi = int(np.argmax(vals))
            key = (p, A, xi)
            if vals[xi] > best_val or best_key is None:
                best_val, best_key = float(max(vals[xi], 0.0)), key
    return best_val, best_key


def size_m(mfam: MultiTileFamily, g: Any, r: float, lin: LinearizationData,
           c: CutoffSpec = CutoffSpec()) -> float:
    """Density size: sup over enlarged tiles P' >= P of the r'-average of g weighted by
    sum_k |a_k|^r' 1(xi_(k-1)(x) in omega_P')."""
    if not math.isclose(r, lin.r) and not (math.isinf(r) and math.isinf(lin.r)):
        raise ValueError(f'r={r} differs from the linearization exponent {lin.r}')
    return size_m_witness(mfam, g, lin, c)[0]
