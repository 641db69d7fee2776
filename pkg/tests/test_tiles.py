from __future__ import annotations

import numpy as np
import pytest

from grid import DyadicInterval, GridSpec, UNIT
from tiles import (FAST, FULL, MultiTile, MultiTileConstants, MultiTileFamily, MultiTileGeometryError,
                   RankOneFamily, Tile, TileOrder, Tree, TriTile, candidate_tops, enumerate_trees,
                   family_from_json, family_to_json, gen_multitile_family, gen_rank1_family, localize,
                   make_tree, maximal_trees, random_subfamily, strongly_disjoint, tile_leq,
                   tile_lesssim, tile_lesssim_prime, var_tree_members)


def _tile(k, n, fk, fn):
    return Tile(DyadicInterval(k, n), DyadicInterval(fk, fn))


def test_gen_rank1_family_counts():
    g = GridSpec(3)
    fam = gen_rank1_family(g, [0])
    assert len(fam) == 2
    assert [t.block for t in fam] == [0, 1]
    with pytest.raises(ValueError):
        gen_rank1_family(g, [])
    with pytest.raises(ValueError):
        gen_rank1_family(g, [2])


def test_rank1_family_is_ordered_and_rank_one():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    keys = [(t.space.k, t.space.n, t.block) for t in fam]
    assert keys == sorted(keys)
    seen = {}
    for t in fam:
        comps = tuple(t.component(j, g) for j in (1, 2, 3))
        assert comps[0].validate(g) and len({c.freq for c in comps}) == 3
        key = comps[0]
        assert seen.setdefault(key, comps) == comps


def test_components_of_one_scale_are_disjoint():
    g = GridSpec(5)
    fam = gen_rank1_family(g, [1])
    for j in (1, 2, 3):
        lo, length = fam.component_bounds(j)
        same_space = [(lo[i], length[i]) for i in range(len(fam)) if fam[i].space == DyadicInterval(1, 0)]
        freqs = [set(range(a, a + b)) for a, b in same_space]
        for a in range(len(freqs)):
            for b in range(a + 1, len(freqs)):
                assert not freqs[a] & freqs[b]


def test_duplicate_tri_tiles_rejected():
    g = GridSpec(4)
    t = TriTile(DyadicInterval(1, 0), 0)
    with pytest.raises(ValueError):
        RankOneFamily((t, t), g)


def test_order_relations_hand_table():
    g = GridSpec(3)
    A = _tile(0, 0, 3, 2)
    B = _tile(1, 0, 2, 1)
    C = _tile(1, 1, 2, 1)
    D = _tile(2, 0, 1, 1)
    E = _tile(1, 0, 2, 3)
    assert tile_leq(A, A, g)
    assert tile_leq(B, A, g) and tile_leq(C, A, g) and tile_leq(D, A, g) and tile_leq(D, B, g)
    assert not tile_leq(D, C, g)
    assert not tile_leq(A, B, g)
    assert not tile_leq(B, C, g)
    assert not tile_leq(E, A, g)
    assert tile_lesssim(E, A, g)
    assert tile_lesssim_prime(E, A, g)
    assert not tile_lesssim_prime(B, A, g)


def test_lesssim_respects_c0():
    g = GridSpec(10)
    A = _tile(0, 0, 10, 500)
    B = _tile(1, 0, 9, 150)
    assert not tile_lesssim(B, A, g, TileOrder(c0=1.0))
    assert tile_lesssim(B, A, g, TileOrder(c0=2.0))


def test_single_tri_tile_is_a_tree_of_every_kind():
    g = GridSpec(4)
    fam = RankOneFamily((TriTile(DyadicInterval(1, 1), 1),), g)
    for kind in (1, 2, 3):
        trees = enumerate_trees(fam, kind, FULL)
        assert any(t.members == (0,) for t in trees)
    assert enumerate_trees(fam.subset([]), 1) == []


def test_full_and_fast_maximal_trees_agree():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    rng = np.random.default_rng(11)
    for _ in range(6):
        sub = random_subfamily(fam, 8, rng)
        for kind in (1, 2, 3):
            full = {frozenset(t.members) for t in maximal_trees(enumerate_trees(sub, kind, FULL))}
            fast = {frozenset(t.members) for t in maximal_trees(enumerate_trees(sub, kind, FAST))}
            assert full == fast


def test_full_enumeration_is_capped():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    with pytest.raises(ValueError):
        candidate_tops(fam, 1, FULL, TileOrder(full_cap=8))


def test_make_tree_checks_members():
    g = GridSpec(4)
    fam = gen_rank1_family(g, [0, 1])
    tree = make_tree(fam, UNIT, 0, 1)
    assert tree.members
    outside = [i for i in range(len(fam)) if i not in tree.members]
    with pytest.raises(ValueError):
        make_tree(fam, UNIT, 0, 1, members=[outside[0]])
    assert make_tree(fam, UNIT, 0, 1, members=tree.members[:1]).members == tree.members[:1]


def test_tree_membership_is_closed_under_order():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    for tree in enumerate_trees(fam, 2, FAST)[:40]:
        top_len = 1 << tree.top_space.k
        top = Tile(tree.top_space, DyadicInterval(g.j_levels - tree.top_space.k, tree.top_freq // top_len))
        for p in range(len(fam)):
            if tile_leq(fam[p].component(2, g), top, g):
                assert p in tree.members


def test_localize():
    g = GridSpec(5)
    fam = gen_rank1_family(g, range(4))
    assert localize(fam, UNIT) == fam
    I0 = DyadicInterval(1, 0)
    I1 = DyadicInterval(2, 1)
    loc = localize(fam, I0)
    assert len(loc) == sum(1 for t in fam if I0.contains(t.space))
    assert localize(loc, I1) == localize(fam, I1)
    small = RankOneFamily((TriTile(DyadicInterval(2, 0), 0),), g)
    assert len(localize(small, DyadicInterval(1, 1))) == 0


def test_strong_disjointness():
    g = GridSpec(5)
    fam = gen_rank1_family(g, [1, 2])
    left = make_tree(fam, DyadicInterval(1, 0), 0, 1)
    right = make_tree(fam, DyadicInterval(1, 1), 0, 1)
    assert strongly_disjoint(fam, [left, right], 2)
    assert not strongly_disjoint(fam, [left, left], 2)
    coarse = Tree((0,), DyadicInterval(1, 0), 0, 1)
    fine = [i for i in range(len(fam)) if fam[i].space == DyadicInterval(2, 0) and fam[i].block == 0]
    # the finer tile sits under the coarse top with overlapping dilated components
    assert not strongly_disjoint(fam, [coarse, Tree(tuple(fine), DyadicInterval(2, 0), 0, 1)], 2)


def test_multitile_geometry_is_asserted():
    g = GridSpec(5)
    fam = gen_multitile_family(g, [0, 1, 2])
    assert len(fam) == 4 + 4 + 4
    mt = MultiTile(DyadicInterval(0, 0), 0)
    assert mt.low(g).start(g) == 0 and mt.mid(g).start(g) == 2 and mt.high(g).start(g) == 6
    with pytest.raises(MultiTileGeometryError):
        MultiTileFamily((mt,), g, MultiTileConstants(c1=2.5, c2=2.0, c3=1.0))
    with pytest.raises(MultiTileGeometryError):
        MultiTileFamily((mt,), g, MultiTileConstants(c1=8.0, c2=4.0, c3=1.0))


def test_var_tree_membership():
    g = GridSpec(4)
    fam = MultiTileFamily((MultiTile(UNIT, 0),), g)
    members, overlap = var_tree_members(fam, UNIT, 0)
    assert members[0] and overlap[0]
    members, overlap = var_tree_members(fam, UNIT, 3)
    assert members[0] and not overlap[0]
    members, _ = var_tree_members(fam, UNIT, 4)
    assert not members[0]


def test_family_json_keys():
    g = GridSpec(4)
    fam = gen_rank1_family(g, [1])
    data = family_to_json(fam)
    assert set(data[0]) == {'k', 'n', 'freq_block_n'}
    assert family_from_json(data, g) == fam
    mfam = gen_multitile_family(g, [0])
    assert family_from_json(family_to_json(mfam), g) == mfam
