from __future__ import annotations
import math

import numpy as np
import pytest

from grid import DyadicInterval, GridSpec, UNIT, lp_norm
from packets import (FOURIER, WALSH, PacketBackend, coefficients, inner_product, packet_matrix,
                     tri_tile_coefficients, wave_packet)
from tiles import Tile, gen_rank1_family


def _all_tiles(g):
    return [Tile(DyadicInterval(k, n), DyadicInterval(g.j_levels - k, l))
            for k in range(g.j_levels + 1) for n in range(1 << k) for l in range(1 << (g.j_levels - k))]


def test_walsh_unit_tile_is_constant_one():
    g = GridSpec(4)
    phi = wave_packet(Tile(UNIT, DyadicInterval(4, 0)), PacketBackend(), g)
    assert np.array_equal(phi, np.ones(16))


def test_walsh_packets_are_normalized_and_supported():
    g = GridSpec(4)
    b = PacketBackend(WALSH)
    for P in _all_tiles(g):
        phi = wave_packet(P, b, g)
        assert math.isclose(lp_norm(phi, 2), 1.0, rel_tol=1e-12)
        outside = np.ones(g.n_samples, dtype=bool)
        outside[P.space.indices(g)] = False
        assert np.all(phi[outside] == 0)


def test_walsh_inner_product_table():
    g = GridSpec(4)
    tiles = _all_tiles(g)
    Phi = packet_matrix(tiles, PacketBackend(WALSH), g)
    gram = Phi @ Phi.T / g.n_samples
    for a, P in enumerate(tiles):
        for b, Q in enumerate(tiles):
            meets = P.space.intersects(Q.space) and P.freq.intersects(Q.freq)
            expected = math.sqrt(min(P.space.length, Q.space.length) / max(P.space.length, Q.space.length)) if meets else 0.0
            assert abs(abs(gram[a, b]) - expected) <= 1e-12


def test_walsh_bessel_over_disjoint_tiles():
    g = GridSpec(5)
    b = PacketBackend(WALSH)
    rng = np.random.default_rng(7)
    scale2 = [P for P in _all_tiles(g) if P.space.k == 2]
    for _ in range(20):
        f = rng.normal(size=g.n_samples) + 1j * rng.normal(size=g.n_samples)
        norm2 = lp_norm(f, 2) ** 2
        full = np.sum(np.abs(coefficients(scale2, f, b, g)) ** 2)
        assert math.isclose(full, norm2, rel_tol=1e-12)
        pick = [scale2[i] for i in np.flatnonzero(rng.random(len(scale2)) < 0.5)]
        assert np.sum(np.abs(coefficients(pick, f, b, g)) ** 2) <= norm2 + 1e-12


def test_fourier_spectrum_sits_inside_component():
    g = GridSpec(5)
    b = PacketBackend(FOURIER, rho=0.4, order=2)
    for P in [Tile(DyadicInterval(3, 1), DyadicInterval(2, 1)), Tile(DyadicInterval(2, 0), DyadicInterval(3, 5))]:
        psi = wave_packet(P, b, g)
        assert math.isclose(lp_norm(psi, 2), 1.0, rel_tol=1e-12)
        spectrum = np.abs(np.fft.fft(psi))
        lo, length = P.freq_bounds(g)
        inside = np.zeros(g.n_samples, dtype=bool)
        inside[lo:lo + length] = True
        assert np.all(spectrum[~inside] < 1e-9)


def test_fourier_near_orthogonality_same_scale():
    g = GridSpec(5)
    b = PacketBackend(FOURIER)
    P = Tile(DyadicInterval(2, 1), DyadicInterval(3, 2))
    Q = Tile(DyadicInterval(2, 2), DyadicInterval(3, 3))
    assert abs(inner_product(wave_packet(P, b, g), wave_packet(Q, b, g))) <= 1e-3


def test_fourier_rejects_tiny_rho():
    g = GridSpec(4)
    with pytest.raises(ValueError):
        wave_packet(Tile(UNIT, DyadicInterval(4, 1)), PacketBackend(FOURIER, rho=0.1), g)


def test_translation_is_isometric():
    g = GridSpec(5)
    for kind in (WALSH, FOURIER):
        b = PacketBackend(kind)
        norms = {round(lp_norm(wave_packet(Tile(DyadicInterval(3, n), DyadicInterval(2, 1)), b, g), 2), 12)
                 for n in range(8)}
        assert norms == {1.0}


def test_inner_product_basics():
    rng = np.random.default_rng(5)
    f = rng.normal(size=8) + 1j * rng.normal(size=8)
    h = rng.normal(size=8) + 1j * rng.normal(size=8)
    assert math.isclose(inner_product(f, f).real, lp_norm(f, 2) ** 2, rel_tol=1e-12)
    assert inner_product(f, np.zeros(8)) == 0
    assert abs(inner_product(f, h) - np.conj(inner_product(h, f))) < 1e-15
    loop = sum(f[i] * np.conj(h[i]) for i in range(8)) / 8
    assert abs(inner_product(f, h) - loop) < 1e-12
    with pytest.raises(ValueError):
        inner_product(f, h[:4])


def test_tri_tile_coefficients_pick_components():
    g = GridSpec(4)
    fam = gen_rank1_family(g, [1])
    b = PacketBackend()
    phi = wave_packet(fam[3].component(2, g), b, g)
    a = tri_tile_coefficients(fam, phi, 2, b)
    assert math.isclose(abs(a[3]), 1.0, rel_tol=1e-12)
    assert np.all(tri_tile_coefficients(fam, np.zeros(16), 1, b) == 0)
