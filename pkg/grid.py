"""grid.py - the periodic dyadic grid every other module samples on

Implements:
- GridSpec / DyadicInterval / CutoffSpec: 2^J samples of the circle [0,1), dyadic intervals, the decay exponent M
- chi_tilde, weighted_average: the adapted cutoff and the cutoff-weighted L^s averages used by ssize
- maximal_fn, bilinear_maximal: dyadic Hardy-Littlewood maximal operators
- lp_norm: Riemann-sum L^p quasi-norms
- exceptional_set: H' = H minus the level sets of the maximal functions of 1_F and 1_G
- signal_to_json / signal_from_json: [re, im] pair serialization
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import numpy as np

log = logging.getLogger(__name__)

MIN_J = 2
MAX_J = 20


@dataclass(frozen=True)
class GridSpec:
    """2^J equispaced samples of the unit circle.

    Parameters
    ----------
    j_levels : int
        Depth J of the grid, at least 2. Sample i sits at x_i = i / 2^J.
    """

    j_levels: int

    def __post_init__(self):
        if isinstance(self.j_levels, bool) or not isinstance(self.j_levels, (int, np.integer)):
            raise ValueError(f'j_levels must be an integer, got {self.j_levels!r}')
        if not MIN_J <= int(self.j_levels) <= MAX_J:
            raise ValueError(f'j_levels must lie in [{MIN_J}, {MAX_J}], got {self.j_levels}')
        object.__setattr__(self, 'j_levels', int(self.j_levels))

    @property
    def n_samples(self) -> int:
        return 1 << self.j_levels

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_samples

    def points(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.n_samples

    @classmethod
    def for_signal(cls, f: Any) -> 'GridSpec':
        n = len(f)
        if n < 1 << MIN_J or n & (n - 1):
            raise ValueError(f'signal length must be a power of two >= {1 << MIN_J}, got {n}')
        return cls(n.bit_length() - 1)


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """[n 2^-k, (n+1) 2^-k). Ordering is scale-major, position-minor."""

    k: int
    n: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f'scale must be >= 0, got {self.k}')
        if not 0 <= self.n < (1 << self.k):
            raise ValueError(f'position {self.n} out of range for scale {self.k}')

    @property
    def length(self) -> float:
        return 2.0 ** -self.k

    def validate(self, g: GridSpec) -> 'DyadicInterval':
        if self.k > g.j_levels:
            raise ValueError(f'{self} is finer than the grid (J={g.j_levels})')
        return self

    def size(self, g: GridSpec) -> int:
        """Number of samples in the interval."""
        return 1 << (g.j_levels - self.k)

    def start(self, g: GridSpec) -> int:
        return self.n << (g.j_levels - self.k)

    def indices(self, g: GridSpec) -> slice:
        s = self.start(g)
        return slice(s, s + self.size(g))

    def contains(self, other: 'DyadicInterval') -> bool:
        return other.k >= self.k and (other.n >> (other.k - self.k)) == self.n

    def intersects(self, other: 'DyadicInterval') -> bool:
        return self.contains(other) or other.contains(self)

    def parent(self) -> Optional['DyadicInterval']:
        if self.k == 0:
            return None
        return DyadicInterval(self.k - 1, self.n >> 1)

    def children(self) -> Tuple['DyadicInterval', 'DyadicInterval']:
        return DyadicInterval(self.k + 1, 2 * self.n), DyadicInterval(self.k + 1, 2 * self.n + 1)

    def ancestor(self, k: int) -> 'DyadicInterval':
        if not 0 <= k <= self.k:
            raise ValueError(f'no ancestor of {self} at scale {k}')
        return DyadicInterval(k, self.n >> (self.k - k))

    def ancestors(self) -> List['DyadicInterval']:
        """Ancestors-or-self, coarsest first."""
        return [self.ancestor(k) for k in range(self.k + 1)]

    def to_json(self) -> Dict[str, int]:
        return {'k': self.k, 'n': self.n}

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> 'DyadicInterval':
        return cls(int(d['k']), int(d['n']))


UNIT = DyadicInterval(0, 0)


@dataclass(frozen=True)
class CutoffSpec:
    """Decay exponent M of chi_tilde_I(x) = (1 + dist(x, I)/|I|)^-M."""

    decay_exponent: float = 10.0

    def __post_init__(self):
        if not self.decay_exponent > 0 or not math.isfinite(self.decay_exponent):
            raise ValueError(f'decay exponent must be positive and finite, got {self.decay_exponent}')


def dyadic_intervals(g: GridSpec, scales: Optional[Iterable[int]] = None) -> Iterator[DyadicInterval]:
    ks = range(g.j_levels + 1) if scales is None else sorted(set(scales))
    for k in ks:
        if not 0 <= k <= g.j_levels:
            raise ValueError(f'scale {k} outside [0, {g.j_levels}]')
        for n in range(1 << k):
            yield DyadicInterval(k, n)


def hull(intervals: Iterable[DyadicInterval]) -> DyadicInterval:
    """Smallest dyadic interval containing all the given ones."""
    items = list(intervals)
    if not items:
        raise ValueError('hull of an empty collection')
    k = min(I.k for I in items)
    while k > 0:
        anc = {I.n >> (I.k - k) for I in items}
        if len(anc) == 1:
            return DyadicInterval(k, anc.pop())
        k -= 1
    return UNIT


def interval_distance(I: DyadicInterval, g: GridSpec) -> np.ndarray:
    """Periodic distance in samples from each grid point to the closure of I."""
    I.validate(g)
    N = g.n_samples
    a = I.start(g)
    b = a + I.size(g)
    i = np.arange(N)
    inside = (i >= a) & (i < b)
    d = np.minimum((a - i) % N, (i - b) % N)
    return np.where(inside, 0, d)


@lru_cache(maxsize=4096)
def _chi_tilde(k: int, n: int, j_levels: int, m: float) -> np.ndarray:
    g = GridSpec(j_levels)
    I = DyadicInterval(k, n)
    ratio = interval_distance(I, g) / I.size(g)
    out = (1.0 + ratio) ** (-m)
    out.setflags(write=False)
    return out


def chi_tilde(I: DyadicInterval, c: CutoffSpec, g: GridSpec) -> np.ndarray:
    I.validate(g)
    return _chi_tilde(I.k, I.n, g.j_levels, float(c.decay_exponent))


def as_signal(f: Any, g: Optional[GridSpec] = None) -> np.ndarray:
    arr = np.asarray(f)
    if arr.ndim != 1:
        raise ValueError(f'signals are one-dimensional, got shape {arr.shape}')
    grid = GridSpec.for_signal(arr)
    if g is not None and grid != g:
        raise ValueError(f'signal has {len(arr)} samples, grid expects {g.n_samples}')
    if not np.all(np.isfinite(arr)):
        raise ValueError('signal contains non-finite samples')
    return arr


def weighted_average(f: Any, I: DyadicInterval, s: float = 1.0, c: CutoffSpec = CutoffSpec()) -> float:
    """((1/|I|) * integral of |f|^s chi_tilde_I)^(1/s) as a Riemann sum."""
    if s < 1:
        raise ValueError(f'average exponent must be >= 1, got {s}')
    arr = as_signal(f)
    g = GridSpec.for_signal(arr)
    w = chi_tilde(I, c, g)
    # |I| * N == I.size(g), so the Riemann weight cancels exactly
    total = float(np.sum(np.abs(arr) ** s * w)) / I.size(g)
    return total ** (1.0 / s)


def _block_means(a: np.ndarray, k: int) -> np.ndarray:
    """Mean of a over each dyadic interval of scale k, broadcast back to samples."""
    n_blocks = 1 << k
    means = a.reshape(n_blocks, -1).mean(axis=1)
    return np.repeat(means, len(a) // n_blocks)


def maximal_fn(f: Any, s: float = 1.0) -> np.ndarray:
    """Dyadic M_s f(x) = sup over dyadic Q containing x of (avg_Q |f|^s)^(1/s)."""
    if s < 1:
        raise ValueError(f'maximal exponent must be >= 1, got {s}')
    arr = np.abs(as_signal(f)).astype(float) ** s
    g = GridSpec.for_signal(arr)
    best = arr.copy()
    for k in range(g.j_levels):
        np.maximum(best, _block_means(arr, k), out=best)
    return best ** (1.0 / s)


def bilinear_maximal(f: Any, g: Any, s1: float = 1.0, s2: float = 1.0) -> np.ndarray:
    """sup over dyadic Q containing x of (avg_Q |f|^s1)^(1/s1) (avg_Q |g|^s2)^(1/s2)."""
    if s1 < 1 or s2 < 1:
        raise ValueError(f'maximal exponents must be >= 1, got ({s1}, {s2})')
    a = np.abs(as_signal(f)).astype(float) ** s1
    b = np.abs(as_signal(g)).astype(float) ** s2
    if len(a) != len(b):
        raise ValueError('signals live on different grids')
    grid = GridSpec.for_signal(a)
    best = a ** (1.0 / s1) * b ** (1.0 / s2)
    for k in range(grid.j_levels):
        prod = _block_means(a, k) ** (1.0 / s1) * _block_means(b, k) ** (1.0 / s2)
        np.maximum(best, prod, out=best)
    return best


def lp_norm(f: Any, p: float) -> float:
    if not p > 0:
        raise ValueError(f'p must be positive, got {p}')
    arr = np.abs(as_signal(f))
    if math.isinf(p):
        return float(arr.max())
    return float(np.mean(arr ** p)) ** (1.0 / p)


def indicator(g: GridSpec, intervals: Iterable[DyadicInterval]) -> np.ndarray:
    out = np.zeros(g.n_samples)
    for I in intervals:
        out[I.validate(g).indices(g)] = 1.0
    return out


def exceptional_set(F: Any, G: Any, H: Any, C: float = 10.0) -> Tuple[np.ndarray, bool]:
    """Mask of H' = H \\ {M1_F > C|F|/|H|} \\ {M1_G > C|G|/|H|} and whether |H'| > |H|/2."""
    masks = [as_signal(np.asarray(m, dtype=float)) for m in (F, G, H)]
    for m in masks:
        if not np.all((m == 0) | (m == 1)):
            raise ValueError('exceptional_set expects {0,1} masks')
    f_mask, g_mask, h_mask = masks
    h_measure = float(h_mask.mean())
    if h_measure == 0:
        return np.zeros_like(h_mask), False
    omega = (maximal_fn(f_mask) > C * f_mask.mean() / h_measure) | (maximal_fn(g_mask) > C * g_mask.mean() / h_measure)
    h_prime = np.where(omega, 0.0, h_mask)
    is_major = float(h_prime.mean()) > h_measure / 2
    log.debug('exceptional set: |H|=%.6g |H\'|=%.6g major=%s', h_measure, h_prime.mean(), is_major)
    return h_prime, is_major


def signal_to_json(f: Any) -> List[List[float]]:
    arr = np.asarray(f, dtype=complex)
    return [[float(z.real), float(z.imag)] for z in arr]


def signal_from_json(data: Sequence[Sequence[float]]) -> np.ndarray:
    arr = np.array([complex(re, im) for re, im in data])
    return as_signal(arr)
