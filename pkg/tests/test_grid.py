from __future__ import annotations
import math

import numpy as np
import pytest

from grid import (CutoffSpec, DyadicInterval, GridSpec, UNIT, bilinear_maximal, chi_tilde,
                  dyadic_intervals, exceptional_set, hull, indicator, lp_norm, maximal_fn,
                  signal_from_json, signal_to_json, weighted_average)


def test_grid_rejects_non_power_of_two_signals():
    with pytest.raises(ValueError):
        GridSpec.for_signal(np.zeros(12))
    assert GridSpec.for_signal(np.zeros(16)).j_levels == 4


def test_grid_needs_two_levels():
    assert GridSpec(2).n_samples == 4
    for j in (0, 1):
        with pytest.raises(ValueError):
            GridSpec(j)
    with pytest.raises(ValueError):
        GridSpec.for_signal(np.zeros(2))


def test_dyadic_nesting_law_exhaustive():
    g = GridSpec(5)
    ivs = list(dyadic_intervals(g))
    for a in ivs:
        sa = set(range(*a.indices(g).indices(g.n_samples)))
        for b in ivs:
            sb = set(range(*b.indices(g).indices(g.n_samples)))
            inter = sa & sb
            assert inter == set() or inter == sa or inter == sb
            assert a.intersects(b) == bool(inter)


def test_dyadic_intervals_order_is_scale_major():
    g = GridSpec(3)
    ivs = list(dyadic_intervals(g))
    assert ivs == sorted(ivs)
    assert ivs[0] == UNIT and len(ivs) == 15


def test_hull_and_ancestors():
    a = DyadicInterval(3, 2)
    b = DyadicInterval(3, 3)
    assert hull([a, b]) == DyadicInterval(2, 1)
    assert hull([a, DyadicInterval(3, 5)]) == UNIT
    assert a.ancestors()[0] == UNIT and a.ancestors()[-1] == a


def test_chi_tilde_closed_form():
    g = GridSpec(4)
    I = DyadicInterval(2, 0)
    w = chi_tilde(I, CutoffSpec(2.0), g)
    assert np.all(w[:4] == 1.0)
    assert math.isclose(w[8], 0.25, rel_tol=1e-12)
    assert np.all(chi_tilde(UNIT, CutoffSpec(), g) == 1.0)


def test_chi_tilde_monotone_in_exponent():
    g = GridSpec(5)
    for I in dyadic_intervals(g, scales=[1, 3]):
        lo = chi_tilde(I, CutoffSpec(2.0), g)
        hi = chi_tilde(I, CutoffSpec(6.0), g)
        assert np.all(hi <= lo)
        assert np.all((lo > 0) & (lo <= 1))


def test_weighted_average_matches_loop():
    rng = np.random.default_rng(3)
    g = GridSpec(5)
    f = rng.normal(size=g.n_samples) + 1j * rng.normal(size=g.n_samples)
    c = CutoffSpec(4.0)
    I = DyadicInterval(2, 1)
    N = g.n_samples
    a, b = I.start(g), I.start(g) + I.size(g)
    total = 0.0
    for i in range(N):
        if a <= i < b:
            d = 0
        else:
            d = min((a - i) % N, (i - b) % N)
        total += abs(f[i]) ** 2 * (1 + d / I.size(g)) ** -4.0 / N
    expected = math.sqrt(total / I.length)
    assert math.isclose(weighted_average(f, I, 2, c), expected, rel_tol=1e-12)


def test_weighted_average_of_indicator_is_one():
    g = GridSpec(4)
    I = DyadicInterval(2, 3)
    assert weighted_average(indicator(g, [I]), I, 1) == 1.0
    assert weighted_average(np.zeros(g.n_samples), I, 1) == 0.0


def test_weighted_average_rejects_nan():
    f = np.zeros(8)
    f[2] = np.nan
    with pytest.raises(ValueError):
        weighted_average(f, UNIT)


def test_maximal_fn_half_indicator():
    g = GridSpec(4)
    f = indicator(g, [DyadicInterval(1, 0)])
    m = maximal_fn(f)
    assert np.all(m[:8] == 1.0)
    assert np.all(m[8:] == 0.5)


def test_maximal_fn_fixes_constants_and_dominates():
    rng = np.random.default_rng(0)
    assert np.allclose(maximal_fn(np.full(16, -2.0), 2), 2.0)
    f = rng.normal(size=32)
    assert np.all(maximal_fn(f, 1) >= np.abs(f) - 1e-15)
    assert np.allclose(maximal_fn(f, 2), np.sqrt(maximal_fn(np.abs(f) ** 2, 1)))


def test_maximal_fn_bounds_every_dyadic_density():
    rng = np.random.default_rng(1)
    g = GridSpec(5)
    E = (rng.random(g.n_samples) < 0.3).astype(float)
    m = maximal_fn(E)
    for Q in dyadic_intervals(g):
        sl = Q.indices(g)
        assert np.all(m[sl] >= E[sl].mean() - 1e-15)


def test_bilinear_maximal_is_bounded_by_product():
    rng = np.random.default_rng(2)
    f = rng.normal(size=32)
    h = rng.normal(size=32)
    b = bilinear_maximal(f, h, 2, 2)
    assert np.all(b <= maximal_fn(f, 2) * maximal_fn(h, 2) + 1e-12)
    assert np.all(bilinear_maximal(np.ones(8), np.ones(8)) == 1.0)
    assert np.all(bilinear_maximal(np.zeros(8), f[:8]) == 0.0)


def test_lp_norm():
    rng = np.random.default_rng(4)
    f = rng.normal(size=16)
    assert math.isclose(lp_norm(f, 2) ** 2, sum(x * x for x in f) / 16, rel_tol=1e-12)
    assert lp_norm(np.ones(8), 0.5) == 1.0
    assert lp_norm(f, math.inf) == np.abs(f).max()
    with pytest.raises(ValueError):
        lp_norm(f, 0)


def test_exceptional_set_is_major():
    g = GridSpec(6)
    F = indicator(g, [DyadicInterval(4, 0)])
    G = indicator(g, [DyadicInterval(4, 5)])
    H = np.ones(g.n_samples)
    h_prime, major = exceptional_set(F, G, H, C=10.0)
    assert major
    assert np.all(h_prime <= H)
    assert h_prime[0] == 0.0


def test_signal_json_pairs():
    f = np.array([1 + 2j, -0.5, 0, 3j])
    assert signal_to_json(f)[0] == [1.0, 2.0]
    assert np.array_equal(signal_from_json(signal_to_json(f)), f)
