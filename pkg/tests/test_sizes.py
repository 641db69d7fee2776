from __future__ import annotations
import math
from itertools import combinations

import numpy as np
import pytest

from grid import (CutoffSpec, DyadicInterval, GridSpec, UNIT, chi_tilde, dyadic_intervals, indicator, lp_norm,
                  weighted_average)
from operators import LinearizationData
from packets import PacketBackend, wave_packet
from sizes import (SizeEnergyExponents, energy_j, energy_j_exhaustive, enlarged_intervals, level_of, reevaluate,
                   size_e, size_e_tree, size_j, size_m, size_m_witness, ssize, ssize_q)
from tiles import (FAST, FULL, MultiTile, MultiTileFamily, RankOneFamily, TriTile, gen_multitile_family,
                   gen_rank1_family, localize, random_subfamily)


def test_exponents_simplex():
    assert SizeEnergyExponents().as_tuple() == (1 / 3, 1 / 3, 1 / 3)
    SizeEnergyExponents.from_tuple([0.5, 0.25, 0.25])
    with pytest.raises(ValueError):
        SizeEnergyExponents(0.5, 0.5, 0.1)
    with pytest.raises(ValueError):
        SizeEnergyExponents(1.0, 0.0, 0.0)


def test_level_of():
    assert level_of(1.0) == 0
    assert level_of(1.5) == 1
    assert level_of(2.0) == 1
    assert level_of(0.3) == -1
    with pytest.raises(ValueError):
        level_of(0.0)


def test_size_of_zero_and_empty():
    g = GridSpec(4)
    fam = gen_rank1_family(g, range(3))
    assert size_j(fam, np.zeros(16), 1).value == 0
    empty = size_j(fam.subset([]), np.ones(16), 2)
    assert empty.value == 0 and empty.witness_tree is None


def test_single_tri_tile_size():
    g = GridSpec(4)
    fam = RankOneFamily((TriTile(DyadicInterval(2, 3), 0),), g)
    f = wave_packet(fam[0].component(1, g), PacketBackend(), g)
    report = size_j(fam, f, 1)
    assert math.isclose(report.value, 2.0, rel_tol=1e-12)
    assert report.witness_tree.members == (0,)
    assert report.witness_tree.kind in (2, 3)


def test_fast_size_equals_full():
    g = GridSpec(4)
    fam = gen_rank1_family(g, range(3))
    rng = np.random.default_rng(12)
    for _ in range(10):
        sub = random_subfamily(fam, 8, rng)
        f = rng.normal(size=16) + 1j * rng.normal(size=16)
        for j in (1, 2, 3):
            fast = size_j(sub, f, j, policy=FAST)
            full = size_j(sub, f, j, policy=FULL)
            assert math.isclose(fast.value, full.value, rel_tol=1e-12)


def test_witnesses_reproduce_values():
    g = GridSpec(4)
    fam = gen_rank1_family(g, range(3))
    rng = np.random.default_rng(13)
    f = rng.normal(size=16)
    for j in (1, 2, 3):
        for report in (size_j(fam, f, j), energy_j(fam, f, j)):
            assert math.isclose(reevaluate(report, fam, f, j), report.value, rel_tol=1e-12)
            assert report.to_json()['value'] == report.value


def test_energy_of_single_unit_tile():
    g = GridSpec(2)
    fam = RankOneFamily((TriTile(UNIT, 0),), g)
    for j in (1, 2, 3):
        f = wave_packet(fam[0].component(j, g), PacketBackend(), g)
        assert math.isclose(energy_j(fam, f, j).value, 1.0, rel_tol=1e-12)
        assert math.isclose(energy_j_exhaustive(fam, f, j).value, 1.0, rel_tol=1e-12)
    assert energy_j(fam, np.zeros(4), 1).value == 0


def test_energy_equals_exhaustive_on_small_families():
    g = GridSpec(4)
    fam = gen_rank1_family(g, range(3))
    rng = np.random.default_rng(14)
    for _ in range(20):
        sub = random_subfamily(fam, 6, rng)
        f = rng.normal(size=16)
        for j in (1, 2, 3):
            fast = energy_j(sub, f, j)
            exact = energy_j_exhaustive(sub, f, j)
            assert math.isclose(fast.value, exact.value, rel_tol=1e-12, abs_tol=1e-15)
            assert math.isclose(reevaluate(fast, sub, f, j), fast.value, rel_tol=1e-12)
    with pytest.raises(ValueError):
        energy_j_exhaustive(random_subfamily(fam, 7, rng), np.ones(16), 1)


def test_energy_equals_exhaustive_on_every_subfamily():
    g = GridSpec(4)
    rng = np.random.default_rng(19)
    sub = random_subfamily(gen_rank1_family(g, range(3)), 6, rng)
    f = rng.normal(size=16) + 1j * rng.normal(size=16)
    for size in range(1, 7):
        for idx in combinations(range(6), size):
            part = sub.subset(list(idx))
            assert math.isclose(energy_j(part, f, 1).value, energy_j_exhaustive(part, f, 1).value,
                                rel_tol=1e-12, abs_tol=1e-15)


def test_greedy_energy_on_large_families_stays_below_exhaustive_bound():
    g = GridSpec(4)
    fam = gen_rank1_family(g, range(3))
    rng = np.random.default_rng(20)
    for _ in range(3):
        sub = random_subfamily(fam, 8, rng)
        f = rng.normal(size=16)
        greedy = energy_j(sub, f, 2)
        assert greedy.method == 'GREEDY'
        assert math.isclose(reevaluate(greedy, sub, f, 2), greedy.value, rel_tol=1e-12)
        assert greedy.value <= energy_j(sub, f, 2, exact_tiles=len(sub)).value + 1e-12


def test_walsh_energy_bounded_by_twice_l2():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    rng = np.random.default_rng(15)
    for _ in range(5):
        f = rng.normal(size=32) + 1j * rng.normal(size=32)
        for j in (1, 2, 3):
            assert energy_j(fam, f, j).value <= 2 * lp_norm(f, 2) + 1e-12


def test_localized_energy_bound():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    rng = np.random.default_rng(16)
    c = CutoffSpec()
    for _ in range(3):
        f = rng.normal(size=32)
        for I0 in dyadic_intervals(g, range(4)):
            loc = localize(fam, I0)
            bound = 2 * lp_norm(f * chi_tilde(I0, c, g), 2)
            assert energy_j(loc, f, 1).value <= bound + 1e-12


def test_ssize_basics():
    g = GridSpec(4)
    I = DyadicInterval(2, 1)
    fam = RankOneFamily((TriTile(I, 0),), g)
    assert ssize(fam, np.zeros(16)) == 0
    assert math.isclose(ssize(fam, indicator(g, [I])), 1.0, rel_tol=1e-12)
    assert ssize(fam.subset([]), np.ones(16)) == 0


def test_ssize_matches_loop_and_localization():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    rng = np.random.default_rng(17)
    f = rng.normal(size=32)
    loop = max(weighted_average(f, t.space, 2) for t in fam)
    assert math.isclose(ssize(fam, f, 2), loop, rel_tol=1e-12)
    I0 = DyadicInterval(1, 1)
    I1 = DyadicInterval(2, 2)
    big = ssize(localize(fam, I0), f, 1, localized_to=I0)
    small = ssize(localize(fam, I1), f, 1, localized_to=I1)
    assert small <= big + 1e-12
    with pytest.raises(ValueError):
        ssize(fam, f, localized_to=I0)
    assert math.isclose(ssize_q(fam, f, 1), ssize(fam, np.abs(f)), rel_tol=1e-12)


def test_size_e_single_multitile():
    g = GridSpec(4)
    for k in (0, 1):
        mfam = MultiTileFamily((MultiTile(DyadicInterval(k, 0), 0),), g)
        f = wave_packet(mfam.packet_tiles()[0], PacketBackend(), g)
        value, tree = size_e_tree(mfam, f)
        assert math.isclose(value, 2 ** (k / 2), rel_tol=1e-12)
        assert tree.members == (0,) and tree.overlapping
    assert size_e(mfam, np.zeros(16)) == 0


def test_size_m_constant_linearization():
    g = GridSpec(4)
    mfam = gen_multitile_family(g, [0, 1])
    lin = LinearizationData.constant(g, [1, 7], 4.0)
    ones = np.ones(16)
    value, (p, A, xi) = size_m_witness(mfam, ones, lin)
    assert value > 0
    assert A in enlarged_intervals(mfam[p].space, g)
    assert math.isclose(value, weighted_average(ones, A, lin.r_prime), rel_tol=1e-12)
    assert size_m(mfam, np.zeros(16), 4.0, lin) == 0
    with pytest.raises(ValueError):
        size_m(mfam, ones, 3.0, lin)


def test_size_m_bounded_by_enlarged_averages():
    g = GridSpec(5)
    mfam = gen_multitile_family(g, [0, 1, 2])
    rng = np.random.default_rng(18)
    for _ in range(3):
        lin = LinearizationData.random(g, 3, 4.0, rng)
        gg = rng.normal(size=32)
        bound = max(weighted_average(gg, A, lin.r_prime)
                    for t in mfam for A in enlarged_intervals(t.space, g))
        assert size_m(mfam, gg, 4.0, lin) <= bound + 1e-12


def test_size_m_bounded_by_ssize_of_the_family():
    g = GridSpec(5)
    mfam = gen_multitile_family(g, [0, 1, 2])
    for seed in range(5):
        rng = np.random.default_rng([21, seed])
        lin = LinearizationData.random(g, 3, 4.0, rng)
        gg = rng.normal(size=32) + 1j * rng.normal(size=32)
        assert size_m(mfam, gg, 4.0, lin) <= ssize(mfam, np.abs(gg), lin.r_prime) * (1 + 1e-12)
