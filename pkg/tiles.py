"""tiles.py - tiles, tri-tiles, multi-tiles, rank-1 families and trees

Implements:
- Tile / TriTile / MultiTile: phase-space rectangles on the periodic grid (frequencies are
  integers mod 2^J, a tile at spatial scale k owns a frequency interval of 2^k units)
- RankOneFamily / MultiTileFamily with gen_rank1_family, gen_multitile_family, localize
- tile_leq, tile_lesssim, tile_lesssim_prime: the order relations
- Tree, enumerate_trees (FULL / FAST candidate tops), maximal_trees, strongly_disjoint
- var_tree_members: trees of multi-tiles, with the l-overlapping flag
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import numpy as np

from grid import DyadicInterval, GridSpec

log = logging.getLogger(__name__)

FULL = 'FULL'
FAST = 'FAST'
POLICIES = (FULL, FAST)
# kind of trees built from multi-tiles
VARIATIONAL = 0


class MultiTileGeometryError(ValueError):
    """A multi-tile violates one of the low/mid/high containment relations."""


@dataclass(frozen=True)
class TileOrder:
    """Dilation constant C0 of the ``lesssim`` relation and the FULL enumeration cap."""

    c0: float = 1.0
    full_cap: int = 64

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError(f'c0 must be positive, got {self.c0}')
        if self.full_cap < 1:
            raise ValueError(f'full_cap must be >= 1, got {self.full_cap}')


# -- circular interval arithmetic (frequency circle of period N) --------------------

def circular_contains(outer_lo, outer_len, inner_lo, inner_len, period):
    off = np.mod(np.subtract(inner_lo, outer_lo), period)
    return np.logical_or(np.greater_equal(outer_len, period), off + inner_len <= outer_len)


def circular_intersects(lo1, len1, lo2, len2, period):
    off = np.mod(np.subtract(lo2, lo1), period)
    hit = np.logical_or(off < len1, off + len2 > period)
    return np.logical_and(hit, np.logical_and(np.greater(len1, 0), np.greater(len2, 0)))


def circular_point_in(lo, length, x, period):
    return np.mod(np.subtract(x, lo), period) < length


def dilate(lo, length, factor):
    """factor * [lo, lo + length) about its center."""
    return lo - (factor - 1) * length / 2, factor * length


# -- tiles ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Tile:
    """I_P x omega_P. ``freq`` is a dyadic interval of the frequency circle with
    space.k + freq.k == J, so |omega_P| = 2^k grid frequencies."""

    space: DyadicInterval
    freq: DyadicInterval

    def validate(self, g: GridSpec) -> 'Tile':
        self.space.validate(g)
        self.freq.validate(g)
        if self.space.k + self.freq.k != g.j_levels:
            raise ValueError(f'{self} does not have unit area on J={g.j_levels}')
        return self

    def freq_bounds(self, g: GridSpec) -> Tuple[int, int]:
        """(first frequency, number of frequencies)."""
        return self.freq.start(g), self.freq.size(g)


def _dilation_contains(P1: Tile, P2: Tile, factor: float, g: GridSpec) -> bool:
    P1.validate(g)
    P2.validate(g)
    if not P2.space.contains(P1.space):
        return False
    lo1, len1 = P1.freq_bounds(g)
    lo2, len2 = P2.freq_bounds(g)
    d_lo, d_len = dilate(lo1, len1, factor)
    return bool(circular_contains(d_lo, d_len, lo2, len2, g.n_samples))


def tile_leq(P1: Tile, P2: Tile, g: GridSpec) -> bool:
    """P1 <= P2 iff I_P1 in I_P2 and omega_P2 in 3 omega_P1."""
    return _dilation_contains(P1, P2, 3, g)


def tile_lesssim(P1: Tile, P2: Tile, g: GridSpec, order: TileOrder = TileOrder()) -> bool:
    return _dilation_contains(P1, P2, 100 * order.c0, g)


def tile_lesssim_prime(P1: Tile, P2: Tile, g: GridSpec, order: TileOrder = TileOrder()) -> bool:
    return tile_lesssim(P1, P2, g, order) and not tile_leq(P1, P2, g)


@dataclass(frozen=True, order=True)
class TriTile:
    """Spatial interval with a frequency block of 4 * 2^k units; component j is quarter j."""

    space: DyadicInterval
    block: int

    def validate(self, g: GridSpec) -> 'TriTile':
        self.space.validate(g)
        k = self.space.k
        if k > g.j_levels - 2:
            raise ValueError(f'tri-tile scale {k} exceeds J-2 = {g.j_levels - 2}')
        if not 0 <= self.block < 1 << (g.j_levels - k - 2):
            raise ValueError(f'frequency block {self.block} out of range at scale {k}')
        return self

    def component(self, j: int, g: GridSpec) -> Tile:
        if j not in (1, 2, 3):
            raise ValueError(f'component index must be 1, 2 or 3, got {j}')
        return Tile(self.space, DyadicInterval(g.j_levels - self.space.k, 4 * self.block + j - 1))

    def block_interval(self, g: GridSpec) -> DyadicInterval:
        return DyadicInterval(g.j_levels - self.space.k - 2, self.block)

    def to_json(self) -> Dict[str, int]:
        return {'k': self.space.k, 'n': self.space.n, 'freq_block_n': self.block}

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> 'TriTile':
        return cls(DyadicInterval(int(d['k']), int(d['n'])), int(d['freq_block_n']))


@dataclass(frozen=True)
class MultiTileConstants:
    c1: float = 8.0
    c2: float = 2.0
    c3: float = 1.0

    def __post_init__(self):
        if not self.c1 > self.c2 > self.c3 >= 1:
            raise ValueError(f'need c1 > c2 > c3 >= 1, got {self}')


@dataclass(frozen=True, order=True)
class MultiTile:
    """Spatial interval with an 8 * 2^k frequency block: omega_l is eighth 0,
    omega_u eighth 2 and omega_h the top quarter. Packets live on omega_u."""

    space: DyadicInterval
    block: int

    def validate(self, g: GridSpec) -> 'MultiTile':
        self.space.validate(g)
        k = self.space.k
        if k > g.j_levels - 3:
            raise ValueError(f'multi-tile scale {k} exceeds J-3 = {g.j_levels - 3}')
        if not 0 <= self.block < 1 << (g.j_levels - k - 3):
            raise ValueError(f'frequency block {self.block} out of range at scale {k}')
        return self

    def low(self, g: GridSpec) -> DyadicInterval:
        return DyadicInterval(g.j_levels - self.space.k, 8 * self.block)

    def mid(self, g: GridSpec) -> DyadicInterval:
        return DyadicInterval(g.j_levels - self.space.k, 8 * self.block + 2)

    def high(self, g: GridSpec) -> DyadicInterval:
        return DyadicInterval(g.j_levels - self.space.k - 1, 4 * self.block + 3)

    def block_interval(self, g: GridSpec) -> DyadicInterval:
        return DyadicInterval(g.j_levels - self.space.k - 3, self.block)

    def packet_tile(self, g: GridSpec) -> Tile:
        return Tile(self.space, self.mid(g))

    def to_json(self) -> Dict[str, int]:
        return {'k': self.space.k, 'n': self.space.n, 'block_n': self.block}

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> 'MultiTile':
        return cls(DyadicInterval(int(d['k']), int(d['n'])), int(d['block_n']))


def check_multitile_geometry(mt: MultiTile, g: GridSpec, consts: MultiTileConstants) -> None:
    """Raise MultiTileGeometryError unless the five low/mid/high relations hold."""
    N = g.n_samples
    bounds = {name: (iv.start(g), iv.size(g)) for name, iv in
              (('l', mt.low(g)), ('u', mt.mid(g)), ('h', mt.high(g)))}

    def dil(name, c):
        return dilate(*bounds[name], c)

    lo_u, len_u = bounds['u']
    checks = [
        ('packet support in C3 omega_u', bool(circular_contains(*dil('u', consts.c3), lo_u, len_u, N))),
        ('C2 omega_u disjoint from C2 omega_l', not circular_intersects(*dil('u', consts.c2), *dil('l', consts.c2), N)),
        ('C2 omega_u disjoint from C2 omega_h', not circular_intersects(*dil('u', consts.c2), *dil('h', consts.c2), N)),
        ('C2 omega_l in C1 omega_u', bool(circular_contains(*dil('u', consts.c1), *dil('l', consts.c2), N))),
        ('C2 omega_u in C1 omega_l', bool(circular_contains(*dil('l', consts.c1), *dil('u', consts.c2), N))),
    ]
    for name, ok in checks:
        if not ok:
            raise MultiTileGeometryError(f'{mt}: {name} fails for {consts}')


# -- families ------------------------------------------------------------------------

def _inside(ks, ns, K, n):
    """Mask of intervals (ks, ns) contained in the dyadic interval (K, n); broadcasts."""
    shift = np.maximum(ks - K, 0)
    return (ks >= K) & (np.right_shift(ns, shift) == n)


class _FamilyBase:
    grid: GridSpec

    def _items(self) -> Tuple[Any, ...]:
        raise NotImplementedError

    def __len__(self) -> int:
        return len(self._items())

    def __iter__(self) -> Iterator[Any]:
        return iter(self._items())

    def __getitem__(self, i: int) -> Any:
        return self._items()[i]

    @cached_property
    def ks(self) -> np.ndarray:
        return np.array([t.space.k for t in self._items()], dtype=np.int64)

    @cached_property
    def ns(self) -> np.ndarray:
        return np.array([t.space.n for t in self._items()], dtype=np.int64)

    @cached_property
    def blocks(self) -> np.ndarray:
        return np.array([t.block for t in self._items()], dtype=np.int64)

    @property
    def spaces(self) -> List[DyadicInterval]:
        return [t.space for t in self._items()]

    def inside_mask(self, I: DyadicInterval) -> np.ndarray:
        return _inside(self.ks, self.ns, I.k, I.n)

    def subset(self, indices: Iterable[int]):
        items = self._items()
        return self._rebuild(tuple(items[int(i)] for i in indices))

    def _rebuild(self, items):
        raise NotImplementedError


@dataclass(frozen=True)
class RankOneFamily(_FamilyBase):
    """Indexed collection of tri-tiles on one grid."""

    tri_tiles: Tuple[TriTile, ...]
    grid: GridSpec

    def __post_init__(self):
        object.__setattr__(self, 'tri_tiles', tuple(self.tri_tiles))
        if len(set(self.tri_tiles)) != len(self.tri_tiles):
            raise ValueError('duplicate tri-tiles in family')
        for t in self.tri_tiles:
            t.validate(self.grid)

    def _items(self):
        return self.tri_tiles

    def _rebuild(self, items):
        return RankOneFamily(items, self.grid)

    def component_bounds(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """(first frequency, length) of omega_{P_j} for every tile."""
        if j not in (1, 2, 3):
            raise ValueError(f'component index must be 1, 2 or 3, got {j}')
        length = np.left_shift(1, self.ks)
        return (4 * self.blocks + j - 1) * length, length

    def components(self, j: int) -> List[Tile]:
        return [t.component(j, self.grid) for t in self.tri_tiles]

    def to_json(self) -> List[Dict[str, int]]:
        return [t.to_json() for t in self.tri_tiles]

    @classmethod
    def from_json(cls, data: Sequence[Dict[str, Any]], g: GridSpec) -> 'RankOneFamily':
        return cls(tuple(TriTile.from_json(d) for d in data), g)


@dataclass(frozen=True)
class MultiTileFamily(_FamilyBase):
    multi_tiles: Tuple[MultiTile, ...]
    grid: GridSpec
    constants: MultiTileConstants = field(default_factory=MultiTileConstants)

    def __post_init__(self):
        object.__setattr__(self, 'multi_tiles', tuple(self.multi_tiles))
        if len(set(self.multi_tiles)) != len(self.multi_tiles):
            raise ValueError('duplicate multi-tiles in family')
        for t in self.multi_tiles:
            t.validate(self.grid)
            check_multitile_geometry(t, self.grid, self.constants)

    def _items(self):
        return self.multi_tiles

    def _rebuild(self, items):
        return MultiTileFamily(items, self.grid, self.constants)

    @cached_property
    def unit(self) -> np.ndarray:
        """2^k, the length of omega_l and omega_u in grid frequencies."""
        return np.left_shift(1, self.ks)

    @property
    def low_lo(self) -> np.ndarray:
        return 8 * self.blocks * self.unit

    @property
    def mid_lo(self) -> np.ndarray:
        return (8 * self.blocks + 2) * self.unit

    @property
    def high_lo(self) -> np.ndarray:
        return (8 * self.blocks + 6) * self.unit

    @property
    def block_lo(self) -> np.ndarray:
        return self.low_lo

    @property
    def block_len(self) -> np.ndarray:
        return 8 * self.unit

    def packet_tiles(self) -> List[Tile]:
        return [t.packet_tile(self.grid) for t in self.multi_tiles]

    def to_json(self) -> List[Dict[str, int]]:
        return [t.to_json() for t in self.multi_tiles]

    @classmethod
    def from_json(cls, data: Sequence[Dict[str, Any]], g: GridSpec) -> 'MultiTileFamily':
        return cls(tuple(MultiTile.from_json(d) for d in data), g)


def _check_scales(g: GridSpec, scales: Iterable[int], top: int) -> List[int]:
    ks = sorted(set(int(k) for k in scales))
    if not ks:
        raise ValueError('empty scale range')
    if ks[0] < 0 or ks[-1] > top:
        raise ValueError(f'scales must lie in [0, {top}], got {ks}')
    return ks


def gen_rank1_family(g: GridSpec, scales: Iterable[int]) -> RankOneFamily:
    """All tri-tiles at the given scales, scale-major then position then block."""
    tiles = []
    for k in _check_scales(g, scales, g.j_levels - 2):
        for n in range(1 << k):
            for b in range(1 << (g.j_levels - k - 2)):
                tiles.append(TriTile(DyadicInterval(k, n), b))
    return RankOneFamily(tuple(tiles), g)


def gen_multitile_family(g: GridSpec, scales: Iterable[int],
                         constants: MultiTileConstants = MultiTileConstants()) -> MultiTileFamily:
    tiles = []
    for k in _check_scales(g, scales, g.j_levels - 3):
        for n in range(1 << k):
            for b in range(1 << (g.j_levels - k - 3)):
                tiles.append(MultiTile(DyadicInterval(k, n), b))
    return MultiTileFamily(tuple(tiles), g, constants)


def random_subfamily(fam, size: int, rng: np.random.Generator | None = None):
    """Seeded sample of ``size`` tiles, kept in family order."""
    rng = rng if rng is not None else np.random.default_rng()
    size = min(int(size), len(fam))
    idx = np.sort(rng.choice(len(fam), size=size, replace=False))
    return fam.subset(idx)


def localize(fam, I0: DyadicInterval):
    """The tiles with I_P inside I0, order preserved."""
    I0.validate(fam.grid)
    return fam.subset(np.flatnonzero(fam.inside_mask(I0)))


def family_to_json(fam) -> List[Dict[str, int]]:
    return fam.to_json()


def family_from_json(data: Sequence[Dict[str, Any]], g: GridSpec):
    if data and 'block_n' in data[0]:
        return MultiTileFamily.from_json(data, g)
    return RankOneFamily.from_json(data, g)


# -- trees ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tree:
    """Tile indices under a top (I_T, xi_T).

    ``kind`` is j in {1, 2, 3} for trees of tri-tiles (the tree is i-lacunary for i != j)
    and VARIATIONAL for trees of multi-tiles, where ``overlapping`` records l-overlap.
    """

    members: Tuple[int, ...]
    top_space: DyadicInterval
    top_freq: int
    kind: int
    overlapping: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, 'members', tuple(sorted(int(m) for m in self.members)))
        if self.kind not in (VARIATIONAL, 1, 2, 3):
            raise ValueError(f'tree kind must be 0..3, got {self.kind}')

    @property
    def lacunary_slots(self) -> Tuple[int, ...]:
        if self.kind == VARIATIONAL:
            return ()
        return tuple(j for j in (1, 2, 3) if j != self.kind)

    def __len__(self) -> int:
        return len(self.members)

    def to_json(self) -> Dict[str, Any]:
        return {'members': list(self.members), 'top': self.top_space.to_json(),
                'xi': int(self.top_freq), 'kind': self.kind, 'overlapping': self.overlapping}

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> 'Tree':
        return cls(tuple(d['members']), DyadicInterval.from_json(d['top']), int(d['xi']),
                   int(d['kind']), d.get('overlapping'))


def tree_matrix(fam: RankOneFamily, tops: np.ndarray, kind: int) -> np.ndarray:
    """Membership (T x P) of every tile in the kind-tree of every top row (k, n, xi)."""
    tops = np.asarray(tops, dtype=np.int64).reshape(-1, 3)
    K, n, xi = tops[:, 0:1], tops[:, 1:2], tops[:, 2:3]
    inside = _inside(fam.ks, fam.ns, K, n)
    lo, length = fam.component_bounds(kind)
    top_len = np.left_shift(1, K)
    top_lo = xi - np.mod(xi, top_len)
    freq_ok = circular_contains(lo - length, 3 * length, top_lo, top_len, fam.grid.n_samples)
    return inside & freq_ok


def tree_members(fam: RankOneFamily, top_space: DyadicInterval, xi: int, kind: int) -> np.ndarray:
    return tree_matrix(fam, np.array([[top_space.k, top_space.n, xi]]), kind)[0]


def make_tree(fam: RankOneFamily, top_space: DyadicInterval, xi: int, kind: int,
              members: Optional[Iterable[int]] = None) -> Tree:
    """Tree of the given top; with explicit members, each one is checked against the top."""
    mask = tree_members(fam, top_space, xi, kind)
    if members is None:
        return Tree(tuple(np.flatnonzero(mask)), top_space, int(xi), kind)
    members = tuple(int(m) for m in members)
    bad = [m for m in members if not mask[m]]
    if bad:
        raise ValueError(f'tiles {bad} are not in the kind-{kind} tree topped by {top_space}, xi={xi}')
    return Tree(members, top_space, int(xi), kind)


def candidate_tops(fam: RankOneFamily, kind: int, policy: str = FAST,
                   order: TileOrder = TileOrder()) -> np.ndarray:
    """Rows (k, n, xi) of tree tops, sorted lexicographically.

    FULL pairs every dyadic interval with every grid frequency. FAST keeps the ancestors
    of member intervals paired with the starts of the three dyadic pieces of
    3 omega_{P_kind}; every FULL member set is contained in a FAST one.
    """
    g = fam.grid
    N = g.n_samples
    if policy == FULL:
        if len(fam) > order.full_cap:
            raise ValueError(f'FULL enumeration capped at {order.full_cap} tiles, family has {len(fam)}')
        rows = [(k, n, xi) for k in range(g.j_levels + 1) for n in range(1 << k) for xi in range(N)]
        return np.array(rows, dtype=np.int64).reshape(-1, 3)
    if policy != FAST:
        raise ValueError(f'unknown candidate policy {policy!r}')
    if len(fam) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    lo, length = fam.component_bounds(kind)
    rows = []
    for p in range(len(fam)):
        kp, npos = int(fam.ks[p]), int(fam.ns[p])
        starts = [int(s) % N for s in (lo[p] - length[p], lo[p], lo[p] + length[p])]
        for k in range(kp + 1):
            unit = 1 << k
            for s in starts:
                rows.append((k, npos >> (kp - k), s - s % unit))
    return np.unique(np.array(rows, dtype=np.int64), axis=0)


def enumerate_trees(fam: RankOneFamily, kind: int, policy: str = FAST,
                    order: TileOrder = TileOrder()) -> List[Tree]:
    """Distinct non-empty kind-trees; each member set is reported once, with its smallest top."""
    if len(fam) == 0:
        return []
    tops = candidate_tops(fam, kind, policy, order)
    M = tree_matrix(fam, tops, kind)
    seen = set()
    trees = []
    for row, mask in zip(tops, M):
        if not mask.any():
            continue
        key = mask.tobytes()
        if key in seen:
            continue
        seen.add(key)
        trees.append(Tree(tuple(np.flatnonzero(mask)), DyadicInterval(int(row[0]), int(row[1])),
                          int(row[2]), kind))
    log.debug('enumerate_trees kind=%d policy=%s: %d tops, %d trees', kind, policy, len(tops), len(trees))
    return trees


def maximal_trees(trees: Sequence[Tree]) -> List[Tree]:
    """Trees whose member sets are not strictly contained in another one's."""
    sets = [frozenset(t.members) for t in trees]
    out = []
    for t, s in zip(trees, sets):
        if any(s < other for other in sets):
            continue
        out.append(t)
    return out


def _strong_pair_ok(fam: RankOneFamily, T: Tree, T2: Tree, j: int) -> bool:
    """No P in T, P' in T2 with |omega_Pj| < |omega_P'j|, 2 omega_Pj meeting 2 omega_P'j
    and I_P' meeting I_T."""
    if not T.members or not T2.members:
        return True
    lo, length = fam.component_bounds(j)
    a = np.array(T.members)
    b = np.array(T2.members)
    a_lo, a_len = dilate(lo[a].astype(float), length[a].astype(float), 2)
    b_lo, b_len = dilate(lo[b].astype(float), length[b].astype(float), 2)
    smaller = length[a][:, None] < length[b][None, :]
    meets = circular_intersects(a_lo[:, None], a_len[:, None], b_lo[None, :], b_len[None, :],
                                fam.grid.n_samples)
    offending = b[(smaller & meets).any(axis=0)]
    return not any(fam[int(p)].space.intersects(T.top_space) for p in offending)


def strongly_disjoint(fam: RankOneFamily, trees: Sequence[Tree], j: int) -> bool:
    for a, T in enumerate(trees):
        for T2 in trees[a + 1:]:
            if set(T.members) & set(T2.members):
                return False
            if not (_strong_pair_ok(fam, T, T2, j) and _strong_pair_ok(fam, T2, T, j)):
                return False
    return True


# -- multi-tile trees ----------------------------------------------------------------

def var_tree_matrices(mfam: MultiTileFamily, tops: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(membership, l-overlap) masks, T x P, for top rows (k, n, xi).

    P belongs to the tree when I_P is inside I_T and
    omega_T = [xi - (C2-1) 2^K / 4, xi + (C2-1) 2^K / 4) lies in conv(C2 omega_l, C2 omega_u);
    it is l-overlapping when xi lies in C2 omega_l.
    """
    tops = np.asarray(tops, dtype=np.int64).reshape(-1, 3)
    K, n, xi = tops[:, 0:1], tops[:, 1:2], tops[:, 2:3].astype(float)
    N = mfam.grid.n_samples
    c2 = mfam.constants.c2
    unit = mfam.unit.astype(float)
    l_lo, l_len = dilate(mfam.low_lo.astype(float), unit, c2)
    u_lo, u_len = dilate(mfam.mid_lo.astype(float), unit, c2)
    m_lo = np.minimum(l_lo, u_lo)
    m_hi = np.maximum(l_lo + l_len, u_lo + u_len)
    half = (c2 - 1) * np.left_shift(1, K).astype(float) / 4
    inside = _inside(mfam.ks, mfam.ns, K, n)
    freq_ok = circular_contains(m_lo, m_hi - m_lo, xi - half, 2 * half, N)
    overlap = circular_point_in(l_lo, l_len, xi, N)
    members = inside & freq_ok
    return members, members & overlap


def var_tree_members(mfam: MultiTileFamily, top_space: DyadicInterval, xi: int) -> Tuple[np.ndarray, np.ndarray]:
    members, overlap = var_tree_matrices(mfam, np.array([[top_space.k, top_space.n, xi]]))
    return members[0], overlap[0]


def var_tops(g: GridSpec) -> np.ndarray:
    """Every (dyadic interval, grid frequency) pair; the admissible tops are all frequencies."""
    rows = [(k, n, xi) for k in range(g.j_levels + 1) for n in range(1 << k) for xi in range(g.n_samples)]
    return np.array(rows, dtype=np.int64)
