"""stopping.py - stopping-time selections over tile families

Implements:
- StoppingConfig: threshold constant, adaptive doubling, average exponents and range checks
- vvst: top-down generations of maximal intervals with halving thresholds (Generations)
- sst: bottom-up sparse family with witness sets and the induced tile partition (SparseFamily)
- verify_sparse: the sparse certificate (containment, disjointness, eta, partition, packing)
- tree_decompose_energy / tree_decompose_density / decompose_to_exhaustion: peeling multi-tile
  families into disjoint trees until the energy (or density) size halves
- d_decomposition, transfer_exponent, choose_tau, as_fraction: exponent and shell helpers
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple
import numpy as np

from grid import CutoffSpec, DyadicInterval, GridSpec, UNIT, as_signal, chi_tilde, hull, interval_distance, \
    lp_norm, weighted_average
from operators import LinearizationData
from packets import PacketBackend
from sizes import size_e_tree, size_m_witness, ssize
from tiles import MultiTileFamily, RankOneFamily, Tree, VARIATIONAL, circular_contains, var_tree_matrices

log = logging.getLogger(__name__)

C_MAX = 2 ** 20


class SparseBuildError(RuntimeError):
    """The adaptive threshold constant outgrew its cap before the family became sparse."""

    def __init__(self, message: str, threshold_c: float, node: Optional[DyadicInterval]):
        super().__init__(message)
        self.threshold_c = threshold_c
        self.node = node


class StoppingInvariantError(AssertionError):
    """A post-condition of a stopping-time or decomposition routine failed."""


@dataclass(frozen=True)
class StoppingConfig:
    """Knobs shared by vvst and sst.

    Parameters
    ----------
    threshold_c : float
        Jump constant C of the sparse selection; doubled on failure when ``adaptive``.
    k_max : int, optional
        Last vvst generation; None means J + 60.
    s : tuple
        Average exponents (s1, s2, s3).
    strict_child : bool
        sst children must strictly contain the spatial interval of some tile.
    range_check : bool
        Validate ``s`` against ``theta`` and ``q`` before running.
    d_shell : int, optional
        Restrict vvst to one dyadic distance shell of ``d_decomposition``.
    """

    threshold_c: float = 10.0
    adaptive: bool = True
    k_max: Optional[int] = None
    s: Tuple[float, float, float] = (2.0, 2.0, 2.0)
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    strict_child: bool = True
    range_check: bool = False
    theta: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    q: float = 1.0
    c_max: float = C_MAX
    eta: float = 0.5
    d_shell: Optional[int] = None

    def __post_init__(self):
        if not self.threshold_c > 1:
            raise ValueError(f'threshold constant must exceed 1, got {self.threshold_c}')
        if self.c_max < self.threshold_c:
            raise ValueError(f'c_max={self.c_max} is below threshold_c={self.threshold_c}')
        if self.k_max is not None and self.k_max < 1:
            raise ValueError(f'k_max must be >= 1, got {self.k_max}')
        if len(self.s) != 3 or any(not s >= 1 for s in self.s):
            raise ValueError(f'average exponents must be three values >= 1, got {self.s}')
        if not 0 < self.eta <= 1:
            raise ValueError(f'eta must lie in (0, 1], got {self.eta}')
        if self.range_check:
            check_s_exponents(self.s, self.theta, self.q)

    def last_generation(self, g: GridSpec) -> int:
        return g.j_levels + 60 if self.k_max is None else self.k_max


def check_s_exponents(s: Sequence[float], theta: Sequence[float], q: float) -> None:
    """1/s1 < (1+t1)/2, 1/s2 < (1+t2)/2 and 1/s3 < 1/q - (t1+t2)/2, else ValueError."""
    s1, s2, s3 = (float(x) for x in s)
    t1, t2, _ = (float(t) for t in theta)
    if not 1 / s1 < (1 + t1) / 2:
        raise ValueError(f'1/s1 = {1 / s1:.6g} is not below (1+theta1)/2 = {(1 + t1) / 2:.6g}')
    if not 1 / s2 < (1 + t2) / 2:
        raise ValueError(f'1/s2 = {1 / s2:.6g} is not below (1+theta2)/2 = {(1 + t2) / 2:.6g}')
    if not 1 / s3 < 1 / q - (t1 + t2) / 2:
        raise ValueError(f'1/s3 = {1 / s3:.6g} is not below 1/q - (theta1+theta2)/2 = {1 / q - (t1 + t2) / 2:.6g}')


def _maximal(intervals: Iterable[DyadicInterval]) -> List[DyadicInterval]:
    """Intervals not strictly contained in another one of the collection, coarsest first."""
    out: List[DyadicInterval] = []
    for I in sorted(set(intervals)):
        if not any(J.contains(I) for J in out):
            out.append(I)
    return out


def carleson_constant(intervals: Sequence[DyadicInterval]) -> float:
    """max over S0 of sum_{S in S, S inside S0} |S| / |S0|."""
    items = sorted(set(intervals))
    best = 0.0
    for S0 in items:
        total = sum(S.length for S in items if S0.contains(S))
        best = max(best, total / S0.length)
    return best


# -- vector-valued stopping time -----------------------------------------------------

@dataclass
class Generations:
    base: float
    thresholds: List[float]
    levels: List[List[DyadicInterval]]
    buckets: Dict[DyadicInterval, List[int]]
    generation_of: Dict[DyadicInterval, int]
    residual: List[int]
    carleson_constant: float = 0.0

    def selected(self) -> List[DyadicInterval]:
        return [I for level in self.levels for I in level]

    def to_json(self) -> Dict[str, Any]:
        return {
            'base': self.base,
            'thresholds': list(self.thresholds),
            'generations': [[I.to_json() for I in level] for level in self.levels],
            'buckets': [{'interval': I.to_json(), 'generation': self.generation_of[I], 'tiles': list(tiles)}
                        for I, tiles in sorted(self.buckets.items())],
            'residual': list(self.residual),
            'carleson_constant': self.carleson_constant,
        }


def d_decomposition(fam, omega: Any) -> Dict[int, List[int]]:
    """Tile indices by the shell d = floor(log2(1 + dist(I_P, complement of omega) / |I_P|))."""
    mask = np.asarray(as_signal(np.asarray(omega, dtype=float), fam.grid)) != 0
    outside = np.flatnonzero(~mask)
    if len(outside) == 0:
        raise ValueError('omega covers the whole grid, its complement is empty')
    g = fam.grid
    shells: Dict[int, List[int]] = {}
    for p, t in enumerate(fam):
        dist = float(interval_distance(t.space, g)[outside].min())
        d = int(math.floor(math.log2(1 + dist / t.space.size(g))))
        shells.setdefault(d, []).append(p)
    return shells


def vvst(fam: RankOneFamily, f: Any, base: float, cfg: StoppingConfig = StoppingConfig(),
         omega: Any = None) -> Generations:
    """Generation k collects the maximal dyadic intervals above some remaining tile whose average
    of |f| exceeds base 2^-k; the tiles below them leave the stock."""
    if not base > 0:
        raise ValueError(f'base level must be positive, got {base}')
    g = fam.grid
    arr = as_signal(f, g)
    c = cfg.cutoff
    stock = list(range(len(fam)))
    residual: List[int] = []
    if cfg.d_shell is not None:
        if omega is None:
            raise ValueError('d_shell needs the omega mask')
        shell = set(d_decomposition(fam, omega).get(cfg.d_shell, []))
        residual = [p for p in stock if p not in shell]
        stock = [p for p in stock if p in shell]
    averages: Dict[DyadicInterval, float] = {}

    def avg(I: DyadicInterval) -> float:
        if I not in averages:
            averages[I] = weighted_average(arr, I, 1.0, c)
        return averages[I]

    out = Generations(base, [], [], {}, {}, residual)
    k = 1
    while stock and k <= cfg.last_generation(g):
        threshold = base * 2.0 ** -k
        candidates = {A for p in stock for A in fam[p].space.ancestors()}
        values = {A: avg(A) for A in candidates}
        if max(values.values()) == 0:
            break
        chosen = _maximal(A for A, v in values.items() if v > threshold)
        out.thresholds.append(threshold)
        out.levels.append(chosen)
        left = []
        for p in stock:
            home = next((S for S in chosen if S.contains(fam[p].space)), None)
            if home is None:
                left.append(p)
            else:
                out.buckets.setdefault(home, []).append(p)
        for S in chosen:
            out.generation_of[S] = k
        log.debug('vvst generation %d: threshold %.6g, %d intervals, %d tiles left', k, threshold, len(chosen), len(left))
        stock = left
        k += 1
    out.residual = sorted(out.residual + stock)
    out.carleson_constant = carleson_constant(out.selected())
    _check_generations(fam, arr, out, cfg, len(fam))
    return out


def _check_generations(fam: RankOneFamily, f: np.ndarray, gens: Generations, cfg: StoppingConfig, n_tiles: int) -> None:
    seen = sorted([p for tiles in gens.buckets.values() for p in tiles] + gens.residual)
    if seen != list(range(n_tiles)):
        raise StoppingInvariantError('vvst buckets do not partition the family')
    overall = ssize(fam, f, 1.0, cfg.cutoff)
    for S, tiles in gens.buckets.items():
        k = gens.generation_of[S]
        bound = gens.base * 2.0 ** -(k - 1) if k >= 2 else max(gens.base, overall)
        value = ssize(fam.subset(tiles), f, 1.0, cfg.cutoff)
        if value > bound * (1 + 1e-12):
            raise StoppingInvariantError(f'bucket {S} of generation {k} has ssize {value:.6g} > {bound:.6g}')


# -- sparse stopping time ------------------------------------------------------------

@dataclass
class SparseFamily:
    grid: GridSpec
    nodes: List[DyadicInterval]
    generation: Dict[DyadicInterval, int]
    children: Dict[DyadicInterval, List[DyadicInterval]]
    witness: Dict[DyadicInterval, np.ndarray]
    tiles: Dict[DyadicInterval, List[int]]
    averages: Dict[DyadicInterval, Tuple[float, float, float]]
    kappa: Dict[DyadicInterval, Tuple[float, float, float]]
    n_tiles: int
    eta: float = 0.5
    threshold_c: float = 10.0

    def __len__(self) -> int:
        return len(self.nodes)

    def sparse_form(self, power: float = 1.0) -> float:
        """sum over Q of (a1 a2 a3)^power |Q| with the stored averages."""
        return float(sum(math.prod(self.averages[Q]) ** power * Q.length for Q in self.nodes))

    def to_json(self) -> Dict[str, Any]:
        return {
            'threshold_c': self.threshold_c,
            'eta': self.eta,
            'n_tiles': self.n_tiles,
            'nodes': [{'interval': Q.to_json(), 'generation': self.generation[Q],
                       'children': [c.to_json() for c in self.children.get(Q, [])],
                       'witness': self.witness[Q].tolist(), 'tiles': list(self.tiles[Q]),
                       'averages': list(self.averages[Q]), 'kappa': list(self.kappa[Q])}
                      for Q in self.nodes],
        }


def _empty_sparse(g: GridSpec, cfg: StoppingConfig) -> SparseFamily:
    return SparseFamily(g, [], {}, {}, {}, {}, {}, {}, 0, cfg.eta, cfg.threshold_c)


def sst(fam: RankOneFamily, f: Any, g: Any, h: Any, cfg: StoppingConfig = StoppingConfig()) -> SparseFamily:
    """Sparse family: roots are the maximal tile intervals, children of Q0 are the maximal Q
    inside Q0 above some tile where an average jumps by more than C times its Q0 value."""
    grid = fam.grid
    signals = [as_signal(x, grid) for x in (f, g, h)]
    if len(fam) == 0:
        return _empty_sparse(grid, cfg)
    C = float(cfg.threshold_c)
    while True:
        try:
            out = _build_sparse(fam, signals, cfg, C)
            break
        except _NotSparse as exc:
            if not cfg.adaptive:
                raise SparseBuildError(f'children of {exc.node} cover more than half of it at C={C}', C, exc.node)
            C *= 2
            log.warning('sst: children of %s too large, doubling C to %g', exc.node, C)
            if C > cfg.c_max:
                raise SparseBuildError(f'threshold constant exceeded {cfg.c_max} at {exc.node}', C, exc.node)
    return out


class _NotSparse(Exception):
    def __init__(self, node: DyadicInterval):
        super().__init__(str(node))
        self.node = node


def _build_sparse(fam: RankOneFamily, signals: List[np.ndarray], cfg: StoppingConfig, C: float) -> SparseFamily:
    grid = fam.grid
    c = cfg.cutoff
    cache: Dict[DyadicInterval, Tuple[float, float, float]] = {}

    def averages(Q: DyadicInterval) -> Tuple[float, float, float]:
        if Q not in cache:
            cache[Q] = tuple(weighted_average(x, Q, s, c) for x, s in zip(signals, cfg.s))
        return cache[Q]

    out = SparseFamily(grid, [], {}, {}, {}, {}, {}, {}, len(fam), cfg.eta, C)
    queue = [(Q, 0) for Q in _maximal(fam.spaces)]
    while queue:
        Q0, gen = queue.pop(0)
        inside = np.flatnonzero(fam.inside_mask(Q0))
        parent = averages(Q0)
        candidates = set()
        for p in inside:
            I = fam[int(p)].space
            for A in I.ancestors():
                if A.k <= Q0.k or (cfg.strict_child and A == I):
                    continue
                candidates.add(A)
        jumps = [A for A in candidates if any(a > C * b for a, b in zip(averages(A), parent))]
        kids = _maximal(jumps)
        if sum(A.length for A in kids) > Q0.length / 2:
            raise _NotSparse(Q0)
        covered = np.zeros(len(fam), dtype=bool)
        for A in kids:
            covered |= fam.inside_mask(A)
        own = [int(p) for p in inside if not covered[p]]
        samples = np.arange(Q0.start(grid), Q0.start(grid) + Q0.size(grid))
        keep = np.ones(len(samples), dtype=bool)
        for A in kids:
            keep[A.start(grid) - Q0.start(grid):A.start(grid) - Q0.start(grid) + A.size(grid)] = False
        out.nodes.append(Q0)
        out.generation[Q0] = gen
        out.children[Q0] = kids
        out.witness[Q0] = samples[keep]
        out.tiles[Q0] = own
        out.averages[Q0] = parent
        sub = fam.subset(own)
        out.kappa[Q0] = tuple(ssize(sub, x, s, c) / a if a > 0 else 0.0
                              for x, s, a in zip(signals, cfg.s, parent))
        queue.extend((A, gen + 1) for A in kids)
    log.debug('sst: %d nodes at C=%g', len(out.nodes), C)
    return out


@dataclass(frozen=True)
class SparseCertificate:
    ok: bool
    eta: Fraction
    carleson_constant: float
    violation: Optional[str] = None

    def to_json(self) -> Dict[str, Any]:
        return {'ok': self.ok, 'eta': float(self.eta), 'eta_exact': str(self.eta),
                'carleson_constant': self.carleson_constant, 'violation': self.violation}


def verify_sparse(S: SparseFamily) -> SparseCertificate:
    """Check the sparse family; the certificate names the first violated predicate."""
    grid = S.grid
    C = carleson_constant(S.nodes)
    if not S.nodes:
        ok = S.n_tiles == 0
        return SparseCertificate(ok, Fraction(1), C, None if ok else 'tiles without any interval')
    for Q in S.nodes:
        w = S.witness[Q]
        if len(w) and (w.min() < Q.start(grid) or w.max() >= Q.start(grid) + Q.size(grid)):
            return SparseCertificate(False, Fraction(0), C, f'witness set of {Q} leaves the interval')
    allw = np.concatenate([S.witness[Q] for Q in S.nodes])
    if len(np.unique(allw)) != len(allw):
        return SparseCertificate(False, Fraction(0), C, 'witness sets overlap')
    eta = min(Fraction(len(S.witness[Q]), Q.size(grid)) for Q in S.nodes)
    if eta < Fraction(S.eta).limit_denominator(1 << 30):
        return SparseCertificate(False, eta, C, f'eta {eta} below {S.eta}')
    tiles = sorted(p for Q in S.nodes for p in S.tiles[Q])
    if tiles != list(range(S.n_tiles)):
        return SparseCertificate(False, eta, C, 'tile partition is not exact')
    if C > 1 / float(eta) + 1e-12:
        return SparseCertificate(False, eta, C, f'Carleson constant {C:.6g} exceeds 1/eta')
    return SparseCertificate(True, eta, C)


# -- multi-tile decompositions -------------------------------------------------------

@dataclass
class Decomposition:
    remaining: MultiTileFamily
    trees: List[Tree]
    kept_indices: List[int]
    total_top_length: float
    reference: float

    @property
    def constant(self) -> float:
        """sum |I_T| over the reference bound."""
        if self.reference == 0:
            return 0.0 if self.total_top_length == 0 else math.inf
        return self.total_top_length / self.reference


def _default_top(mfam: MultiTileFamily) -> DyadicInterval:
    return hull(mfam.spaces) if len(mfam) else UNIT


def tree_decompose_energy(mfam: MultiTileFamily, f: Any, energy: float, backend: PacketBackend = PacketBackend(),
                          I0: Optional[DyadicInterval] = None, c: CutoffSpec = CutoffSpec()) -> Decomposition:
    """Remove whole trees around l-overlapping witnesses until size_e drops to energy / 2."""
    grid = mfam.grid
    arr = as_signal(f, grid)
    value, _ = size_e_tree(mfam, arr, backend)
    if energy < value * (1 - 1e-12):
        raise ValueError(f'energy bound {energy:.6g} is below size_e {value:.6g}')
    active = np.ones(len(mfam), dtype=bool)
    trees: List[Tree] = []
    while True:
        value, witness = size_e_tree(mfam, arr, backend, active)
        if witness is None or value <= energy / 2:
            break
        top = np.array([[witness.top_space.k, witness.top_space.n, witness.top_freq]])
        members, _ = var_tree_matrices(mfam, top)
        removed = members[0] & active
        trees.append(Tree(tuple(np.flatnonzero(removed)), witness.top_space, witness.top_freq, VARIATIONAL, False))
        active &= ~removed
    kept = [int(p) for p in np.flatnonzero(active)]
    total = sum(t.top_space.length for t in trees)
    I0 = I0 if I0 is not None else _default_top(mfam)
    reference = 0.0 if energy == 0 else lp_norm(arr * chi_tilde(I0, c, grid), 2) ** 2 / energy ** 2
    return Decomposition(mfam.subset(kept), trees, kept, total, reference)


def tree_decompose_density(mfam: MultiTileFamily, g: Any, lam: float, r: float, lin: LinearizationData,
                           c: CutoffSpec = CutoffSpec(), I0: Optional[DyadicInterval] = None) -> Decomposition:
    """Remove the tiles P'' with I_P'' inside the witness interval and omega_P' inside their block
    until size_m drops to lam / 2."""
    grid = mfam.grid
    arr = as_signal(g, grid)
    if not math.isclose(r, lin.r) and not (math.isinf(r) and math.isinf(lin.r)):
        raise ValueError(f'r={r} differs from the linearization exponent {lin.r}')
    value, _ = size_m_witness(mfam, arr, lin, c)
    if lam < value * (1 - 1e-12):
        raise ValueError(f'density bound {lam:.6g} is below size_m {value:.6g}')
    N = grid.n_samples
    active = np.ones(len(mfam), dtype=bool)
    trees: List[Tree] = []
    while True:
        value, key = size_m_witness(mfam, arr, lin, c, active)
        if key is None or value <= lam / 2:
            break
        _, A, xi = key
        half = (mfam.constants.c2 - 1) * 2.0 ** A.k / 4
        below = mfam.inside_mask(A) & circular_contains(mfam.block_lo, mfam.block_len, xi - half, 2 * half, N)
        removed = below & active
        trees.append(Tree(tuple(np.flatnonzero(removed)), A, xi, VARIATIONAL))
        active &= ~removed
    kept = [int(p) for p in np.flatnonzero(active)]
    total = sum(t.top_space.length for t in trees)
    I0 = I0 if I0 is not None else _default_top(mfam)
    rp = lin.r_prime
    reference = 0.0 if lam == 0 else lp_norm(arr * chi_tilde(I0, c, grid), rp) ** rp / lam ** rp
    return Decomposition(mfam.subset(kept), trees, kept, total, reference)


@dataclass
class Exhaustion:
    layers: List[Tuple[int, float, List[Tree]]]
    leftover: List[int]


def decompose_to_exhaustion(mfam: MultiTileFamily, f: Any, backend: PacketBackend = PacketBackend(),
                            max_layers: int = 64) -> Exhaustion:
    """Iterate the energy decomposition with E_n = size_e 2^-n; tree members refer to ``mfam``."""
    index = np.arange(len(mfam))
    current = mfam
    energy, _ = size_e_tree(mfam, f, backend)
    layers: List[Tuple[int, float, List[Tree]]] = []
    n = 0
    while len(current) and energy > 0 and n < max_layers:
        dec = tree_decompose_energy(current, f, energy, backend)
        if dec.trees:
            trees = [Tree(tuple(int(index[m]) for m in t.members), t.top_space, t.top_freq, t.kind, t.overlapping)
                     for t in dec.trees]
            layers.append((n, energy, trees))
        index = index[dec.kept_indices]
        current = dec.remaining
        energy /= 2
        n += 1
    return Exhaustion(layers, [int(i) for i in index])


# -- exponent helpers ----------------------------------------------------------------

def as_fraction(x: Any) -> Fraction:
    """Exact rational of a Fraction or int; floats go through their shortest repr."""
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    return Fraction(repr(float(x)))


def choose_tau(q: float, r_exponents: Sequence[float]) -> float:
    """q itself when the q-th power of the l^R norm is subadditive (q <= min r), else min r."""
    if not r_exponents:
        raise ValueError('need at least one r exponent')
    smallest = min(r_exponents)
    return smallest if q > smallest else q


def transfer_exponent(s3: Any, tau: Any, q: Any, margin: Fraction = Fraction(1, 100)) -> Fraction:
    """s3~ with 1/s3~ = (1/s3 - 1/tau + 1/q)(1 - margin), exact for rational inputs."""
    s3, tau, q = (as_fraction(x) for x in (s3, tau, q))
    if q < tau:
        raise ValueError(f'q={q} must be at least tau={tau}')
    if not 0 < margin < 1:
        raise ValueError(f'margin must lie in (0, 1), got {margin}')
    bound = 1 / s3 - 1 / tau + 1 / q
    if bound <= 0:
        raise ValueError(f'1/s3 - 1/tau + 1/q = {bound} leaves no room for s3~')
    return 1 / (bound * (1 - margin))
