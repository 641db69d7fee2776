"""operators.py - model operators and their forms

Implements:
- lambda_bht / bht_model: the trilinear form and the bilinear model operator over a rank-1 family,
  with restriction masks (F, G, H') and localization to a dyadic interval
- LinearizationData / var_carleson_form: the linearized variational Carleson model over multi-tiles
- rdf_iterated: the Rubio de Francia operator for iterated Fourier integrals, by direct double sums
- VectorFamily / vv_lambda / vv_lr_norm / holder_check: vector-valued wrappers (depth 1 or 2)
- factorize_g: g = g1 * g2 with |g2|^r' = |g|
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np

from grid import DyadicInterval, GridSpec, as_signal
from packets import PacketBackend, multi_tile_coefficients, packet_matrix, tri_tile_coefficients
from tiles import MultiTileFamily, RankOneFamily, localize

log = logging.getLogger(__name__)


def dual_exponent(r: float) -> float:
    if math.isinf(r):
        return 1.0
    if r <= 1:
        raise ValueError(f'dual exponent needs r > 1, got {r}')
    return r / (r - 1)


def lambda_bht(fam: RankOneFamily, f: Any, g: Any, h: Any, backend: PacketBackend = PacketBackend(),
               permutation: Sequence[int] = (0, 1, 2)) -> complex:
    """sum_P |I_P|^(-1/2) <f, phi1> <g, phi2> <h, phi3>.

    ``permutation`` routes the inputs to the three slots, so the adjoint forms are
    lambda_bht(fam, f, g, h, permutation=(2, 1, 0)) and friends. Packets are conjugated
    in every pairing; for WALSH they are real and the choice is immaterial.
    """
    if sorted(permutation) != [0, 1, 2]:
        raise ValueError(f'permutation must reorder (0, 1, 2), got {permutation}')
    if len(fam) == 0:
        return 0j
    inputs = (f, g, h)
    routed = [inputs[i] for i in permutation]
    a1, a2, a3 = (tri_tile_coefficients(fam, routed[j - 1], j, backend) for j in (1, 2, 3))
    terms = 2.0 ** (fam.ks / 2) * a1 * a2 * a3
    return complex(np.sum(terms))


def _check_mask(m: Any, g: GridSpec, name: str) -> np.ndarray:
    arr = as_signal(np.asarray(m), g)
    if np.iscomplexobj(arr) or not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f'mask {name} must be {{0,1}}-valued')
    return arr.astype(float)


def bht_model(fam: RankOneFamily, f: Any, g: Any, backend: PacketBackend = PacketBackend(),
              masks: Optional[Tuple[Any, Any, Any]] = None,
              localized_to: Optional[DyadicInterval] = None) -> np.ndarray:
    """BHT(f, g) = sum_P |I_P|^(-1/2) <f, phi1> <g, phi2> conj(phi3), so <BHT(f, g), conj(h)> = Lambda.

    With masks (F, G, H') this is BHT(f 1_F, g 1_G) 1_H'; ``localized_to`` keeps the tiles inside I0.
    """
    grid = fam.grid
    f = as_signal(f, grid)
    g = as_signal(g, grid)
    if localized_to is not None:
        fam = localize(fam, localized_to)
    h_mask = None
    if masks is not None:
        F, G, h_mask = (_check_mask(m, grid, name) for m, name in zip(masks, ('F', 'G', "H'")))
        f = f * F
        g = g * G
    if len(fam) == 0:
        return np.zeros(grid.n_samples, dtype=complex)
    coef = 2.0 ** (fam.ks / 2) * tri_tile_coefficients(fam, f, 1, backend) * tri_tile_coefficients(fam, g, 2, backend)
    out = coef @ np.conj(packet_matrix(fam.components(3), backend, grid))
    if h_mask is not None:
        out = out * h_mask
    return out


@dataclass(frozen=True, eq=False)
class LinearizationData:
    """Per-sample frequencies xi_0(x) <= ... <= xi_K(x) and weights a_1(x) ... a_K(x)
    with sum_k |a_k(x)|^r' = 1."""

    xi: np.ndarray
    a: np.ndarray
    r: float

    def __post_init__(self):
        xi = np.array(self.xi, dtype=np.int64)
        a = np.array(self.a, dtype=complex)
        if xi.ndim != 2 or a.ndim != 2 or xi.shape[1] != a.shape[1] + 1 or xi.shape[0] != a.shape[0]:
            raise ValueError(f'need xi of shape (N, K+1) and a of shape (N, K), got {xi.shape} and {a.shape}')
        if a.shape[1] < 1:
            raise ValueError('K must be at least 1')
        GridSpec.for_signal(xi[:, 0])
        if not self.r > 2:
            raise ValueError(f'variation exponent must exceed 2, got {self.r}')
        N = xi.shape[0]
        if np.any(xi < 0) or np.any(xi >= N):
            raise ValueError('frequencies must lie on the grid [0, N)')
        if np.any(np.diff(xi, axis=1) < 0):
            raise ValueError('xi sequences must be non-decreasing')
        norm = np.sum(np.abs(a) ** dual_exponent(self.r), axis=1)
        if np.max(np.abs(norm - 1)) > 1e-9:
            raise ValueError(f'sum_k |a_k|^r\' must be 1 at every sample (worst {norm.max():.3g})')
        xi.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, 'xi', xi)
        object.__setattr__(self, 'a', a)

    @property
    def K(self) -> int:
        return self.a.shape[1]

    @property
    def r_prime(self) -> float:
        return dual_exponent(self.r)

    @property
    def grid(self) -> GridSpec:
        return GridSpec.for_signal(self.xi[:, 0])

    @classmethod
    def random(cls, g: GridSpec, K: int, r: float, rng: np.random.Generator | None = None) -> 'LinearizationData':
        rng = rng if rng is not None else np.random.default_rng()
        xi = np.sort(rng.integers(0, g.n_samples, size=(g.n_samples, K + 1)), axis=1)
        a = rng.normal(size=(g.n_samples, K)) + 1j * rng.normal(size=(g.n_samples, K))
        a = a / (np.sum(np.abs(a) ** dual_exponent(r), axis=1, keepdims=True) ** (1 / dual_exponent(r)))
        return cls(xi, a, r)

    @classmethod
    def constant(cls, g: GridSpec, xi: Sequence[int], r: float) -> 'LinearizationData':
        """Same sequence at every sample with a_k = K^(-1/r')."""
        K = len(xi) - 1
        xs = np.tile(np.asarray(xi, dtype=np.int64), (g.n_samples, 1))
        a = np.full((g.n_samples, K), K ** (-1 / dual_exponent(r)), dtype=complex)
        return cls(xs, a, r)

    def to_json(self) -> Dict[str, Any]:
        return {'K': self.K, 'xi': self.xi.tolist(),
                'a': [[[float(z.real), float(z.imag)] for z in row] for row in self.a],
                'r': self.r}

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> 'LinearizationData':
        a = np.array([[complex(re, im) for re, im in row] for row in d['a']])
        out = cls(np.array(d['xi']), a, float(d['r']))
        if out.K != int(d['K']):
            raise ValueError(f'K={d["K"]} does not match the stored sequences')
        return out


def selection_weights(mfam: MultiTileFamily, lin: LinearizationData) -> np.ndarray:
    """a_P(x): a_k(x) for the k with xi_(k-1)(x) in omega_l and xi_k(x) in omega_h, else 0."""
    unit = mfam.unit[:, None, None]
    prev = lin.xi[None, :, :-1]
    curr = lin.xi[None, :, 1:]
    low_lo = mfam.low_lo[:, None, None]
    high_lo = mfam.high_lo[:, None, None]
    match = (prev >= low_lo) & (prev < low_lo + unit) & (curr >= high_lo) & (curr < high_lo + 2 * unit)
    if np.any(match.sum(axis=2) > 1):
        raise AssertionError('more than one k selected for a multi-tile; xi is not monotone')
    return np.sum(np.where(match, lin.a[None, :, :], 0), axis=2)


def var_carleson_form(mfam: MultiTileFamily, f: Any, g: Any, lin: LinearizationData,
                      backend: PacketBackend = PacketBackend()) -> complex:
    """integral of sum_P <f, phi_P> phi_P a_P g."""
    grid = mfam.grid
    g = as_signal(g, grid)
    if lin.xi.shape[0] != grid.n_samples:
        raise ValueError('linearization lives on a different grid')
    if len(mfam) == 0:
        return 0j
    coef = multi_tile_coefficients(mfam, f, backend)
    Phi = packet_matrix(mfam.packet_tiles(), backend, grid)
    weights = selection_weights(mfam, lin)
    per_tile = np.sum(Phi * weights * g[None, :], axis=1) / grid.n_samples
    return complex(np.sum(coef * per_tile))


def factorize_g(g: Any, r: float) -> Tuple[np.ndarray, np.ndarray]:
    """g1 = |g|^(1/r), g2 = sgn(g) |g|^(1/r'), so g = g1 g2 and |g2|^r' = |g|."""
    arr = as_signal(g)
    mod = np.abs(arr)
    rp = dual_exponent(r)
    phase = np.divide(arr, mod, out=np.zeros_like(arr, dtype=complex), where=mod > 0)
    g1 = mod ** (0.0 if math.isinf(r) else 1.0 / r)
    g1 = np.where(mod > 0, g1, 0.0)
    g2 = phase * mod ** (1.0 / rp)
    return g1, g2


def _open_modes(a: int, b: int) -> range:
    return range(a + 1, b)


def rdf_iterated(f: Any, g: Any, intervals: Sequence[Tuple[int, int]], r: float) -> np.ndarray:
    """(sum_k |sum over a_k < xi1 < xi2 < b_k of fhat(xi1) ghat(xi2) e^(2 pi i x (xi1 + xi2))|^r)^(1/r).

    Frequencies are the integers of fftfreq, in [-N/2, N/2); fhat = fft(f) / N.
    """
    fa = as_signal(f)
    ga = as_signal(g)
    if len(fa) != len(ga):
        raise ValueError('signals live on different grids')
    if not r >= 1:
        raise ValueError(f'r must be >= 1, got {r}')
    ivs = sorted((int(a), int(b)) for a, b in intervals)
    for a, b in ivs:
        if a >= b:
            raise ValueError(f'empty interval ({a}, {b})')
    for (a1, b1), (a2, b2) in zip(ivs, ivs[1:]):
        if set(_open_modes(a1, b1)) & set(_open_modes(a2, b2)):
            raise ValueError(f'intervals ({a1}, {b1}) and ({a2}, {b2}) overlap on the grid')
    N = len(fa)
    freqs = np.rint(np.fft.fftfreq(N, d=1.0 / N)).astype(np.int64)
    fhat = np.fft.fft(fa) / N
    ghat = np.fft.fft(ga) / N
    t = np.arange(N)
    moduli = []
    for a, b in ivs:
        sel = np.flatnonzero((freqs > a) & (freqs < b))
        sel = sel[np.argsort(freqs[sel])]
        v = freqs[sel]
        if len(v) < 2:
            moduli.append(np.zeros(N))
            continue
        upper = np.triu_indices(len(v), k=1)
        sums = (v[:, None] + v[None, :])[upper]
        coeffs = np.outer(fhat[sel], ghat[sel])[upper]
        s_values, inverse = np.unique(sums, return_inverse=True)
        c = np.zeros(len(s_values), dtype=complex)
        np.add.at(c, inverse, coeffs)
        E = np.exp(2j * np.pi * np.outer(t, s_values) / N)
        moduli.append(np.abs(E @ c))
    if not moduli:
        return np.zeros(N)
    stack = np.vstack(moduli)
    if math.isinf(r):
        return stack.max(axis=0)
    return np.sum(stack ** r, axis=0) ** (1.0 / r)


# -- vector-valued ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VectorFamily:
    """Signals indexed by tuples of depth 1 or 2 (counting measure), with exponents R."""

    signals: Dict[Tuple[int, ...], np.ndarray]
    exponents: Tuple[float, ...]

    def __post_init__(self):
        exps = tuple(float(e) for e in self.exponents)
        if len(exps) not in (1, 2):
            raise ValueError(f'depth must be 1 or 2, got {len(exps)}')
        if any(not e > 0 for e in exps):
            raise ValueError(f'exponents must lie in (0, inf], got {exps}')
        if not self.signals:
            raise ValueError('empty vector family')
        sigs = {}
        n = None
        for key, f in self.signals.items():
            key = tuple(int(i) for i in (key if isinstance(key, tuple) else (key,)))
            if len(key) != len(exps):
                raise ValueError(f'index {key} does not have depth {len(exps)}')
            arr = as_signal(f)
            if n is not None and len(arr) != n:
                raise ValueError('signals live on different grids')
            n = len(arr)
            sigs[key] = arr
        object.__setattr__(self, 'signals', dict(sorted(sigs.items())))
        object.__setattr__(self, 'exponents', exps)

    @property
    def depth(self) -> int:
        return len(self.exponents)

    @property
    def index_set(self) -> List[Tuple[int, ...]]:
        return list(self.signals)

    @classmethod
    def from_list(cls, signals: Sequence[Any], r: float) -> 'VectorFamily':
        return cls({(i,): f for i, f in enumerate(signals)}, (r,))

    def pointwise_norm(self) -> np.ndarray:
        """The iterated l^R norm at every sample; the first exponent is the outer one."""

        def lr(values: List[np.ndarray], r: float) -> np.ndarray:
            stack = np.abs(np.vstack(values))
            if math.isinf(r):
                return stack.max(axis=0)
            return np.sum(stack ** r, axis=0) ** (1.0 / r)

        if self.depth == 1:
            return lr(list(self.signals.values()), self.exponents[0])
        outer: Dict[int, List[np.ndarray]] = {}
        for (w1, _), f in self.signals.items():
            outer.setdefault(w1, []).append(f)
        inner = [lr(group, self.exponents[1]) for _, group in sorted(outer.items())]
        return lr(inner, self.exponents[0])


def vv_lr_norm(V: VectorFamily, x: int) -> float:
    return float(V.pointwise_norm()[int(x)])


def holder_check(F: VectorFamily, G: VectorFamily, H: VectorFamily) -> None:
    """1/r_F + 1/r_G + 1/r_H = 1 at every depth level, else ValueError."""
    if not F.depth == G.depth == H.depth:
        raise ValueError('vector families of different depth')
    for level, (a, b, c) in enumerate(zip(F.exponents, G.exponents, H.exponents)):
        total = sum(0.0 if math.isinf(e) else 1.0 / e for e in (a, b, c))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f'exponents ({a}, {b}, {c}) at level {level} are not Holder dual')


def vv_lambda(fam: RankOneFamily, F: VectorFamily, G: VectorFamily, H: VectorFamily,
              backend: PacketBackend = PacketBackend(), validate: bool = False) -> complex:
    """sum over w of Lambda(f_w, g_w, h_w), in sorted index order."""
    if not F.index_set == G.index_set == H.index_set:
        raise ValueError('vector families have different index sets')
    if validate:
        holder_check(F, G, H)
    terms = [lambda_bht(fam, F.signals[w], G.signals[w], H.signals[w], backend) for w in F.index_set]
    return complex(np.sum(np.array(terms)))
