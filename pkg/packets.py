"""packets.py - wave packets phi_P on the periodic grid and the pairings with signals

Implements:
- PacketBackend: WALSH (exact, real, supported on I_P) or FOURIER (raised-cosine spectral bump)
- wave_packet: the L2-normalized packet of a tile, memoized and returned read-only
- inner_product: <f, g> = sum f conj(g) / N
- packet_matrix / coefficients / tri_tile_coefficients: stacked packets and <f, phi_P> for families
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Sequence, Tuple
import numpy as np
from scipy.signal import windows

from grid import GridSpec, as_signal
from tiles import MultiTileFamily, RankOneFamily, Tile

log = logging.getLogger(__name__)

WALSH = 'WALSH'
FOURIER = 'FOURIER'


@dataclass(frozen=True)
class PacketBackend:
    """Wave packet model.

    Parameters
    ----------
    kind : str
        WALSH or FOURIER.
    rho : float
        FOURIER only: the spectrum keeps the modes within rho * |omega| of the center
        of omega, so rho = 1/2 uses the whole interval.
    order : int
        FOURIER only: power applied to the Hann window across the kept modes.
    """

    kind: str = WALSH
    rho: float = 0.5
    order: int = 2

    def __post_init__(self):
        if self.kind not in (WALSH, FOURIER):
            raise ValueError(f'unknown packet backend {self.kind!r}')
        if not 0 < self.rho <= 0.5:
            raise ValueError(f'rho must lie in (0, 1/2], got {self.rho}')
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f'window order must be a positive integer, got {self.order}')

    @classmethod
    def from_name(cls, name: str) -> 'PacketBackend':
        return cls(kind=str(name).upper())


def _bit_reverse(t: np.ndarray, bits: int) -> np.ndarray:
    out = np.zeros_like(t)
    for b in range(bits):
        out |= ((t >> b) & 1) << (bits - 1 - b)
    return out


def _popcount(x: np.ndarray) -> np.ndarray:
    count = np.zeros_like(x)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


@lru_cache(maxsize=1 << 16)
def _walsh(k: int, n: int, l: int, j_levels: int) -> np.ndarray:
    N = 1 << j_levels
    bits = j_levels - k
    t = np.arange(1 << bits, dtype=np.int64)
    # Paley-ordered Walsh function W_l evaluated at t / 2^bits
    sign = 1 - 2 * (_popcount(l & _bit_reverse(t, bits)) & 1)
    out = np.zeros(N)
    start = n << bits
    out[start:start + len(t)] = 2.0 ** (k / 2) * sign
    out.setflags(write=False)
    return out


@lru_cache(maxsize=1 << 16)
def _fourier(k: int, n: int, lo: int, length: int, j_levels: int, rho: float, order: int) -> np.ndarray:
    N = 1 << j_levels
    modes = np.arange(lo, lo + length)
    center = lo + (length - 1) / 2
    half_width = rho * length - 0.5
    kept = modes[np.abs(modes - center) <= half_width + 1e-12]
    if len(kept) == 0:
        raise ValueError(f'rho={rho} keeps no frequency mode of a {length}-mode interval')
    weights = windows.hann(len(kept) + 2)[1:-1] ** order
    x_center = ((n << (j_levels - k)) + (1 << (j_levels - k)) / 2) / N
    spectrum = np.zeros(N, dtype=complex)
    spectrum[np.mod(kept, N)] = weights * np.exp(-2j * np.pi * kept * x_center)
    psi = np.fft.ifft(spectrum) * N
    psi /= np.sqrt(np.mean(np.abs(psi) ** 2))
    psi.setflags(write=False)
    return psi


def wave_packet(P: Tile, b: PacketBackend, g: GridSpec) -> np.ndarray:
    P.validate(g)
    if b.kind == WALSH:
        return _walsh(P.space.k, P.space.n, P.freq.n, g.j_levels)
    lo, length = P.freq_bounds(g)
    return _fourier(P.space.k, P.space.n, lo, length, g.j_levels, float(b.rho), int(b.order))


def inner_product(f: Any, g: Any) -> complex:
    a = np.asarray(f)
    c = np.asarray(g)
    if a.shape != c.shape:
        raise ValueError(f'cannot pair signals of shapes {a.shape} and {c.shape}')
    return complex(np.sum(a * np.conj(c)) / len(a))


@lru_cache(maxsize=256)
def _packet_matrix(tiles: Tuple[Tile, ...], b: PacketBackend, g: GridSpec) -> np.ndarray:
    if not tiles:
        return np.zeros((0, g.n_samples), dtype=complex if b.kind == FOURIER else float)
    out = np.stack([wave_packet(P, b, g) for P in tiles])
    out.setflags(write=False)
    return out


def packet_matrix(tiles: Sequence[Tile], b: PacketBackend, g: GridSpec) -> np.ndarray:
    """Packets of ``tiles`` as rows."""
    return _packet_matrix(tuple(tiles), b, g)


def coefficients(tiles: Sequence[Tile], f: Any, b: PacketBackend, g: GridSpec) -> np.ndarray:
    """<f, phi_P> for every tile, in tile order."""
    arr = as_signal(f, g)
    Phi = packet_matrix(tiles, b, g)
    if len(Phi) == 0:
        return np.zeros(0, dtype=complex)
    return (np.conj(Phi) @ arr) / g.n_samples


def tri_tile_coefficients(fam: RankOneFamily, f: Any, j: int, b: PacketBackend) -> np.ndarray:
    """<f, phi^j_{P_j}> over a rank-1 family."""
    return coefficients(fam.components(j), f, b, fam.grid)


def multi_tile_coefficients(mfam: MultiTileFamily, f: Any, b: PacketBackend) -> np.ndarray:
    """<f, phi_P> over a multi-tile family; packets live on omega_u."""
    return coefficients(mfam.packet_tiles(), f, b, mfam.grid)
