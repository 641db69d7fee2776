"""outer.py - outer measure spaces on tile collections

Implements:
- OuterSpace: the j-components of a rank-1 family with the j-lacunary trees as generators and
  sigma(T) = |I_T|; TileFunction and tile_function for F(P) = <f, phi_Pj>
- mu: the cover outer measure, GREEDY (exact up to eight tiles, weighted set cover above) or
  EXHAUSTIVE (exact)
- tree_size_S / super_level_measure / outer_lp: S2, S_INF and S = S2 + S_INF, the measure of
  the super level sets and the outer L^p, L^(p,inf) quasi-norms over a dyadic lambda grid
- lq_mock: ssize^theta energy^(1-theta) with 1/q = (1-theta)/2
- embedding_checks / outer_holder_ratio: the numerical Carleson embeddings
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence
import numpy as np

from grid import CutoffSpec, DyadicInterval, as_signal
from operators import lambda_bht
from packets import PacketBackend, tri_tile_coefficients
from sizes import LacunaryTable, energy_j, lacunary_table, ssize
from tiles import FAST, RankOneFamily, Tile, TileOrder, Tree, localize

log = logging.getLogger(__name__)

GREEDY = 'GREEDY'
EXHAUSTIVE = 'EXHAUSTIVE'
MODES = (GREEDY, EXHAUSTIVE)
EXHAUSTIVE_CAP = 12
EXACT_COVER_TILES = 8
S2 = 'S2'
S_INF = 'S_INF'
S = 'S'


@dataclass(frozen=True, eq=False)
class OuterSpace:
    family: RankOneFamily
    slot: int
    backend: PacketBackend
    table: LacunaryTable
    localized_to: Optional[DyadicInterval] = None

    @classmethod
    def from_family(cls, fam: RankOneFamily, j: int, backend: PacketBackend = PacketBackend(),
                    order: TileOrder = TileOrder(), localized_to: Optional[DyadicInterval] = None) -> 'OuterSpace':
        return cls(fam, j, backend, lacunary_table(fam, j, FAST, order), localized_to)

    def __len__(self) -> int:
        return len(self.family)

    @property
    def tiles(self) -> List[Tile]:
        return self.family.components(self.slot)

    @property
    def members(self) -> np.ndarray:
        return self.table.members

    @property
    def costs(self) -> np.ndarray:
        """sigma(T) = |I_T| of every generator."""
        return 2.0 ** -self.table.tops[:, 0]

    def generators(self) -> List[Tree]:
        return [self.table.tree(r) for r in range(len(self.table.tops))]

    def localize(self, I0: DyadicInterval) -> 'OuterSpace':
        return OuterSpace.from_family(localize(self.family, I0), self.slot, self.backend, localized_to=I0)


@dataclass(frozen=True, eq=False)
class TileFunction:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError('tile function has non-finite values')
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return len(self.values)


def tile_function(space: OuterSpace, f: Any) -> TileFunction:
    return TileFunction(tri_tile_coefficients(space.family, f, space.slot, space.backend))


def _values(space: OuterSpace, F: Any) -> np.ndarray:
    values = F.values if isinstance(F, TileFunction) else TileFunction(F).values
    if len(values) != len(space):
        raise ValueError(f'tile function has {len(values)} values for {len(space)} tiles')
    return values


def _subset_indices(space: OuterSpace, subset: Any) -> np.ndarray:
    arr = np.asarray([] if subset is None else subset)
    if arr.dtype == bool:
        if len(arr) != len(space):
            raise ValueError('subset mask does not match the space')
        return np.flatnonzero(arr)
    idx = np.unique(arr.astype(np.int64))
    if len(idx) and (idx[0] < 0 or idx[-1] >= len(space)):
        raise ValueError(f'subset indices out of range for {len(space)} tiles')
    return idx


def _cover_table(members: np.ndarray, costs: np.ndarray) -> np.ndarray:
    """Minimal sum of costs of rows covering each bitmask of the columns of ``members``."""
    n = members.shape[1]
    bits = (members.astype(np.int64) << np.arange(n, dtype=np.int64)).sum(axis=1) if n else np.zeros(0, np.int64)
    cheapest: Dict[int, float] = {}
    for cov, cost in zip(bits.tolist(), costs.tolist()):
        if cov and cost < cheapest.get(cov, math.inf):
            cheapest[cov] = cost
    by_bit: List[List[tuple]] = [[] for _ in range(n)]
    for cov, cost in cheapest.items():
        for b in range(n):
            if cov >> b & 1:
                by_bit[b].append((cov, cost))
    best = [0.0] * (1 << n)
    for mask in range(1, 1 << n):
        low = (mask & -mask).bit_length() - 1
        value = math.inf
        for cov, cost in by_bit[low]:
            candidate = cost + best[mask & ~cov]
            if candidate < value:
                value = candidate
        best[mask] = value
    return np.array(best)


def _greedy_cover(members: np.ndarray, costs: np.ndarray) -> float:
    covered = np.zeros(members.shape[1], dtype=bool)
    total = 0.0
    while not covered.all():
        gain = (members & ~covered[None, :]).sum(axis=1) / costs
        r = int(np.argmax(gain))
        if gain[r] == 0:
            raise ValueError('tiles outside every generator')
        total += float(costs[r])
        covered |= members[r]
    return total


def mu(space: OuterSpace, subset: Any, mode: str = GREEDY) -> float:
    """inf of sum |I_T| over generator covers of the subset.

    GREEDY solves subsets of at most EXACT_COVER_TILES tiles exactly. Larger subsets take the
    generator covering the most new tiles per unit of |I_T| until covered, an upper bound.
    """
    idx = _subset_indices(space, subset)
    if len(idx) == 0:
        return 0.0
    members = space.members[:, idx]
    if mode == EXHAUSTIVE:
        if len(idx) > EXHAUSTIVE_CAP:
            raise ValueError(f'exhaustive outer measure is capped at {EXHAUSTIVE_CAP} tiles, got {len(idx)}')
        return float(_cover_table(members, space.costs)[-1])
    if mode != GREEDY:
        raise ValueError(f'unknown outer measure mode {mode!r}')
    if len(idx) <= EXACT_COVER_TILES:
        value = float(_cover_table(members, space.costs)[-1])
        if math.isinf(value):
            raise ValueError('tiles outside every generator')
        return value
    return _greedy_cover(members, space.costs)


def tree_size_S(space: OuterSpace, F: Any, T: Tree, which: str = S) -> float:
    """S2 = ((1/|I_T|) sum |F(P)|^2)^(1/2), S_INF = sup |F(P)| / |I_P|^(1/2), S = S2 + S_INF."""
    values = _values(space, F)
    members = np.asarray(T.members, dtype=np.int64)
    if len(members) == 0:
        return 0.0
    s2 = math.sqrt(float(np.sum(np.abs(values[members]) ** 2)) * 2.0 ** T.top_space.k)
    s_inf = float(np.max(np.abs(values[members]) * 2.0 ** (space.family.ks[members] / 2)))
    if which == S2:
        return s2
    if which == S_INF:
        return s_inf
    if which == S:
        return s2 + s_inf
    raise ValueError(f'unknown tree size {which!r}')


def _row_sizes(space: OuterSpace, values: np.ndarray, active: np.ndarray) -> np.ndarray:
    """S(F 1_active)(T) for every generator."""
    if len(space.table.tops) == 0:
        return np.zeros(0)
    mask = space.members & active[None, :]
    s2 = np.sqrt(np.where(mask, np.abs(values[None, :]) ** 2, 0.0).sum(axis=1) * 2.0 ** space.table.tops[:, 0])
    peaks = np.abs(values) * 2.0 ** (space.family.ks / 2)
    s_inf = np.where(mask, peaks[None, :], 0.0).max(axis=1) if len(values) else np.zeros(len(s2))
    return s2 + s_inf


def linf_norm(space: OuterSpace, F: Any) -> float:
    """sup over generators of S(F)(T)."""
    values = _values(space, F)
    sizes = _row_sizes(space, values, np.ones(len(values), dtype=bool))
    return float(sizes.max()) if len(sizes) else 0.0


def _greedy_trace(space: OuterSpace, values: np.ndarray) -> tuple:
    """Largest S and removed cost after each greedy step.

    The greedy step removes the generator with the largest S(F 1_kept)(T); the removal order does
    not depend on lambda.
    """
    remaining = np.ones(len(values), dtype=bool)
    tops, totals = [], [0.0]
    while True:
        sizes = _row_sizes(space, values, remaining)
        r = int(np.argmax(sizes)) if len(sizes) else 0
        top = float(sizes[r]) if len(sizes) else 0.0
        tops.append(top)
        if top == 0:
            return np.array(tops), np.array(totals)
        totals.append(totals[-1] + float(space.costs[r]))
        remaining &= ~space.members[r]


def _greedy_lookup(trace: tuple, lam: float) -> float:
    tops, totals = trace
    return float(totals[int(np.argmax(tops <= lam))])


def super_level_measure(space: OuterSpace, F: Any, lam: float, mode: str = GREEDY) -> float:
    """inf of mu(P') over subsets P' whose removal leaves S(F)(T) <= lam on every generator."""
    if not lam > 0:
        raise ValueError(f'lambda must be positive, got {lam}')
    values = _values(space, F)
    P = len(values)
    if P == 0:
        return 0.0
    if mode == GREEDY:
        return _greedy_lookup(_greedy_trace(space, values), lam)
    if mode != EXHAUSTIVE:
        raise ValueError(f'unknown outer measure mode {mode!r}')
    if P > EXHAUSTIVE_CAP:
        raise ValueError(f'exhaustive super level measure is capped at {EXHAUSTIVE_CAP} tiles, got {P}')
    masks = np.arange(1 << P, dtype=np.int64)
    kept = ((masks[:, None] >> np.arange(P)) & 1).astype(bool)
    weights = np.abs(values) ** 2
    s2 = np.sqrt((kept * weights) @ space.members.T.astype(float) * 2.0 ** space.table.tops[:, 0])
    peaks = np.abs(values) * 2.0 ** (space.family.ks / 2)
    s_inf = np.zeros_like(s2)
    for p in range(P):
        np.maximum(s_inf, np.outer(kept[:, p] * peaks[p], space.members[:, p]), out=s_inf)
    feasible = np.all(s2 + s_inf <= lam, axis=1)
    table = _cover_table(space.members, space.costs)
    removed = (masks[-1] ^ masks)[feasible]
    return float(table[removed].min())


def outer_lp(space: OuterSpace, F: Any, p: float, weak: bool = False, mode: str = GREEDY,
             resolution: int = 4) -> float:
    """Outer L^p (or L^(p,inf) when ``weak``) quasi-norm over lambda = ||F||_inf 2^(-i/res).

    The level-set map is evaluated on a grid of 2 * ``resolution`` points per octave and the
    coarse grid is kept as a self-check.
    """
    if not p > 0:
        raise ValueError(f'p must be positive, got {p}')
    if resolution < 1:
        raise ValueError(f'resolution must be >= 1, got {resolution}')
    values = _values(space, F)
    top = linf_norm(space, values)
    if math.isinf(p) or top == 0:
        return top
    peaks = np.abs(values) * 2.0 ** (space.family.ks / 2)
    # levels below 1e-6 of the top carry a negligible share of the norm
    floor = max(float(peaks[peaks > 0].min()), 1e-6 * top)
    trace = _greedy_trace(space, values) if mode == GREEDY else None
    cache: Dict[int, float] = {}

    def level(i: int, fine: int) -> float:
        if i not in cache:
            lam = top * 2.0 ** (-i / fine)
            cache[i] = _greedy_lookup(trace, lam) if trace is not None else super_level_measure(space, values, lam, mode)
        return cache[i]

    def norm(res: int) -> float:
        fine = 2 * resolution
        step = fine // res
        lams, ms = [], []
        i = 0
        while True:
            lam = top * 2.0 ** (-i / res)
            lams.append(lam)
            ms.append(level(i * step, fine))
            if lam < floor:
                break
            i += 1
        # super level measures can only grow as lambda decreases
        ms = np.minimum.accumulate(np.array(ms)[::-1])[::-1]
        lams = np.array(lams)
        if weak:
            return float(np.max(lams * ms ** (1.0 / p)))
        upper = np.append(ms[1:], ms[-1])
        lower_lam = np.append(lams[1:], 0.0)
        return float(np.sum((lams ** p - lower_lam ** p) * (ms + upper) / 2)) ** (1.0 / p)

    fine = norm(2 * resolution)
    coarse = norm(resolution)
    if fine > 0 and abs(fine - coarse) > 0.01 * fine:
        log.warning('outer L^%s norm: lambda grids disagree by %.2f%% (%.6g vs %.6g)',
                    p, 100 * abs(fine - coarse) / fine, coarse, fine)
    return fine


def lq_mock(space: OuterSpace, f: Any, q: float, c: CutoffSpec = CutoffSpec()) -> float:
    """ssize^theta energy^(1-theta) with 1/q = (1-theta)/2; q = inf gives ssize."""
    if not q > 2:
        raise ValueError(f'mock norms need q > 2, got {q}')
    size = ssize(space.family, f, 1.0, c, space.localized_to)
    if math.isinf(q):
        return size
    theta = 1 - 2 / q
    energy = energy_j(space.family, f, space.slot, space.backend).value
    return size ** theta * energy ** (1 - theta)


@dataclass(frozen=True)
class CheckRow:
    name: str
    lhs: float
    rhs: float
    ratio: float
    witnesses: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def compare(cls, name: str, lhs: float, rhs: float, **witnesses) -> 'CheckRow':
        if rhs > 0:
            ratio = lhs / rhs
        else:
            ratio = 0.0 if lhs == 0 else math.inf
        return cls(name, float(lhs), float(rhs), float(ratio), dict(witnesses))

    def to_json(self) -> Dict[str, Any]:
        return {'name': self.name, 'lhs': self.lhs, 'rhs': self.rhs, 'ratio': self.ratio,
                'witnesses': dict(self.witnesses)}


@dataclass(frozen=True, eq=False)
class EmbeddingTrial:
    """A restricted-type input |f| <= 1_E with the exponent q and the localization interval."""

    f: np.ndarray
    E: np.ndarray
    q: float
    I0: DyadicInterval
    c: CutoffSpec = CutoffSpec()
    mode: str = GREEDY

    def __post_init__(self):
        f = as_signal(self.f)
        E = as_signal(np.asarray(self.E, dtype=float))
        if len(f) != len(E):
            raise ValueError('f and E live on different grids')
        if not np.all((E == 0) | (E == 1)):
            raise ValueError('E must be an indicator')
        if np.any(np.abs(f) > E + 1e-12):
            raise ValueError('|f| must be bounded by the indicator of E')
        if not self.q > 2:
            raise ValueError(f'embeddings are checked for q > 2, got {self.q}')
        object.__setattr__(self, 'f', f)
        object.__setattr__(self, 'E', E)


def embedding_checks(space: OuterSpace, trial: EmbeddingTrial) -> List[CheckRow]:
    """lhs / rhs rows for the mock and outer Carleson embeddings of a restricted-type input."""
    f, q, I0, c, mode = trial.f, trial.q, trial.I0, trial.c, trial.mode
    inv_q = 0.0 if math.isinf(q) else 1 / q
    measure = float(trial.E.mean())
    F = tile_function(space, f)
    size = ssize(space.family, f, 1.0, c)
    energy = energy_j(space.family, f, space.slot, space.backend).value
    mock = lq_mock(space, f, q, c)
    outer_q = outer_lp(space, F, q, False, mode)
    weak2 = outer_lp(space, F, 2.0, True, mode)
    local = space.localize(I0)
    local_size = ssize(local.family, f, 1.0, c, I0)
    local_mock = lq_mock(local, f, q, c)
    local_outer = outer_lp(local, tile_function(local, f), q, False, mode)
    local_rhs = min(local_size, 1.0) ** (1 - inv_q) * I0.length ** inv_q
    return [
        CheckRow.compare('above_l2_mock', mock, measure ** inv_q, measure=measure),
        CheckRow.compare('below_l2_mock', mock, min(size, 1.0) ** (1 - 2 * inv_q) * measure ** inv_q,
                         ssize=size, measure=measure),
        CheckRow.compare('localized_mock', local_mock, local_rhs, ssize=local_size, tiles=len(local)),
        CheckRow.compare('mock_larger', outer_q, mock, mode=mode),
        CheckRow.compare('energy_control', weak2, energy, mode=mode),
        CheckRow.compare('above_l2_outer', outer_q, measure ** inv_q, mode=mode),
        CheckRow.compare('localized_outer', local_outer, local_rhs, ssize=local_size, mode=mode),
    ]


def outer_holder_ratio(fam: RankOneFamily, signals: Sequence[Any], qs: Sequence[float],
                       backend: PacketBackend = PacketBackend(), mode: str = GREEDY) -> CheckRow:
    """|Lambda(f1, f2, f3)| against the product of the outer L^(q_j) norms of the three slots."""
    if len(signals) != 3 or len(qs) != 3:
        raise ValueError('need three signals and three exponents')
    total = sum(0.0 if math.isinf(q) else 1 / q for q in qs)
    if abs(total - 1) > 1e-12:
        raise ValueError(f'exponents {tuple(qs)} are not Holder dual')
    norms = []
    for j, (f, q) in enumerate(zip(signals, qs), start=1):
        space = OuterSpace.from_family(fam, j, backend)
        norms.append(outer_lp(space, tile_function(space, f), q, False, mode))
    lhs = abs(lambda_bht(fam, *signals, backend=backend))
    return CheckRow.compare('outer_holder', lhs, float(np.prod(norms)), norms=norms)
