import itertools
from collections import defaultdict

import numpy as np
import pytest

from fkmsle.fk import SwendsenWangChain, enumerate_exact, sample_independent
from fkmsle.interface import (ConnectionPattern, PatternCounter, connection_pattern,
                              disconnection_split, event_s_indicator, snapshot, trace_interface)
from fkmsle.lattice import (EXT, INTERIOR_ONLY, UnionFind, build_rect_domain, clusters,
                            dual_edge)


@pytest.fixture(scope="module")
def m22():
    return build_rect_domain(2, 2, 1.0, [0, 2, 4, 6])[1]


@pytest.fixture(scope="module")
def ens22(m22):
    return enumerate_exact(m22.region)


def test_exit_index_at_extreme_configurations():
    _, mk = build_rect_domain(3, 3, 1.0, [0, 3, 6, 9])
    assert trace_interface(mk, mk.permitted_edges).exit_index == 2
    assert trace_interface(mk, ()).exit_index == 4


def test_trace_is_deterministic(m22):
    rng = np.random.default_rng(1)
    bonds = [e for e in m22.permitted_edges if rng.random() < 0.5]
    a, b = trace_interface(m22, bonds), trace_interface(m22, bonds)
    assert a.steps == b.steps and a.to_json() == b.to_json()


def test_trace_rejects_foreign_bonds(m22):
    with pytest.raises(ValueError):
        trace_interface(m22, [next(iter(m22.free_crossing))])


def _side_colouring_holds(mk, path):
    reg = mk.region
    V = reg.vertices
    arc0 = mk.arc_dual_vertices(0)
    for t, c in enumerate(path.steps):
        opened, closed = path.revealed(t)
        labels, _ = clusters(reg, opened)
        if c.primal in V and labels[c.primal] != labels[EXT]:
            return False
        uf = UnionFind(reg.dual_vertices)
        for a, b in [dual_edge(e) for e in closed] + [dual_edge(e) for e in mk.free_crossing]:
            uf.union(a, b)
        if uf.find(c.dual) not in {uf.find(w) for w in arc0}:
            return False
    return True


def test_path_invariants_exhaustive(m22, ens22):
    exits = defaultdict(float)
    for mask, p in zip(ens22.masks, ens22.probabilities):
        path = trace_interface(m22, mask)
        assert set(path.turns()) <= {-1, 1}
        assert path.exit_index % 2 == 0
        assert _side_colouring_holds(m22, path)
        exits[path.exit_index] += p
    assert sum(exits.values()) == pytest.approx(1.0, abs=1e-14)
    assert set(exits) <= {2, 4}


def test_side_colouring_on_random_larger_domain():
    _, mk = build_rect_domain(6, 5, 1.0, [0, 4, 9, 12, 16, 19])
    chain = SwendsenWangChain(mk.region, seed=4)
    for mask in chain.samples(20, burn_in=50, spacing=5):
        path = trace_interface(mk, mask)
        assert path.exit_index in (2, 4, 6)
        assert _side_colouring_holds(mk, path)


def test_domain_markov_property_exhaustive(m22, ens22):
    """Given a prefix of the interface, the unrevealed edges follow the FK law
    of the explored domain with its induced boundary conditions."""
    P = m22.permitted_edges
    paths = [trace_interface(m22, mask) for mask in ens22.masks]
    probs = ens22.probabilities
    checked = 0
    for t in range(1, 6):
        groups = defaultdict(list)
        for i, path in enumerate(paths):
            if t < len(path):
                groups[path.revealed(t)].append(i)
        for (opened, closed), idx in groups.items():
            snap = snapshot(paths[idx[0]], t)
            sub = enumerate_exact(snap.region, cap=30)
            sub_index = {m.tobytes(): k for k, m in enumerate(sub.masks)}
            rest = [e for e in P if e not in opened and e not in closed]
            inner = [e for e in rest if e in snap.region.edge_index]
            # unrevealed edges joining two removed vertices are independent
            outer = [e for e in rest if e not in snap.region.edge_index]
            x = ens22.p / (1 - ens22.p)
            cond = probs[idx] / probs[idx].sum()
            for j, i in enumerate(idx):
                bonds = ens22.graph.bonds_of(ens22.masks[i])
                sub_mask = sub.graph.mask_of(bonds & set(inner))
                k_open = sum(e in bonds for e in outer)
                expect = sub.probabilities[sub_index[sub_mask.tobytes()]]
                expect *= x ** k_open / (1 + x) ** len(outer)
                assert cond[j] == pytest.approx(expect, rel=1e-12)
            checked += 1
    assert checked > 10


def test_disconnection_none_for_single_chord():
    _, mk = build_rect_domain(3, 3, 1.0, [0, 6])
    assert disconnection_split(trace_interface(mk, mk.permitted_edges)) is None


def test_disconnection_at_exit_for_full_configuration():
    _, mk = build_rect_domain(3, 3, 1.0, [0, 3, 6, 9])
    path = trace_interface(mk, mk.permitted_edges)
    split = disconnection_split(path)
    # the separating contact is the step just before the path leaves at b2
    assert split.tau == path.exit_step - 1 and split.J == 2


def test_disconnection_components_partition_exhaustive(m22, ens22):
    found = 0
    for mask in ens22.masks:
        path = trace_interface(m22, mask)
        split = disconnection_split(path)
        if split is None:
            continue
        found += 1
        assert split.tau <= path.exit_step and split.J in (2, 3)
        snap = split.snapshot
        parts = [C for C in split.right + split.left]
        union = frozenset().union(*parts) if parts else frozenset()
        assert union <= snap.region.vertices
        assert sum(len(C) for C in parts) == len(union)
        assert frozenset().union(*snap.components) == snap.region.vertices
    assert found > 0


def _pattern_by_clusters(mk, bonds):
    """Second route: interior-only clusters, then which wired arcs share a cluster."""
    labels, _ = clusters(mk.region, bonds, INTERIOR_ONLY)
    V = mk.region.vertices
    arc_roots = []
    for j in range(mk.n):
        roots = set()
        for e in mk.arc_crossing_edges(2 * j + 1):
            if e in bonds:
                inside = e[0] if e[0] in V else e[1]
                roots.add(labels[inside])
        arc_roots.append(roots)
    uf = UnionFind(range(mk.n))
    for i, j in itertools.combinations(range(mk.n), 2):
        if arc_roots[i] & arc_roots[j]:
            uf.union(i, j)
    return frozenset(frozenset(g) for g in uf.groups())


@pytest.mark.parametrize("shape", [(2, 2, [0, 2, 4, 6]), (3, 2, [0, 3, 5, 8]), (3, 2, [0, 2, 4, 6, 7, 9])])
def test_connection_patterns_agree_with_cluster_route(shape):
    cx, cy, offs = shape
    _, mk = build_rect_domain(cx, cy, 1.0, offs)
    reg = mk.region
    P = reg.permitted_edges
    counter = PatternCounter(mk)
    rng = np.random.default_rng(8)
    masks = (rng.random((300, len(P))) < 0.6).astype(np.uint8)
    fast = counter.rgs(masks)
    for mask, r in zip(masks, fast):
        bonds = frozenset(P[i] for i in np.flatnonzero(mask))
        pat = connection_pattern(mk, bonds)
        assert frozenset(pat.blocks) == _pattern_by_clusters(mk, bonds)
        assert pat.rgs == r


def test_connection_pattern_extremes(m22):
    assert connection_pattern(m22, ()).rgs == "01"
    assert connection_pattern(m22, m22.permitted_edges).rgs == "00"
    _, mk3 = build_rect_domain(3, 2, 1.0, [0, 2, 4, 6, 7, 9])
    assert connection_pattern(mk3, ()).rgs == "012"


def test_rgs_format():
    pat = ConnectionPattern((frozenset({0, 1, 3}), frozenset({2})), 4)
    assert pat.rgs == "0010"


def test_event_s_extremes_and_errors(m22):
    assert event_s_indicator(m22, (), [1, 3])
    assert not event_s_indicator(m22, m22.permitted_edges, [1, 3])
    for bad in ([], [1], [1, 2], [1, 5]):
        with pytest.raises(ValueError):
            event_s_indicator(m22, (), bad)


def test_event_s_is_the_separated_pattern_for_two_free_arcs(ens22, m22):
    for mask in ens22.masks:
        sep = connection_pattern(m22, mask).rgs == "01"
        assert event_s_indicator(m22, mask, [1, 3]) == sep


def test_event_s_probability_matches_monte_carlo(m22, ens22):
    exact = sum(p for mask, p in zip(ens22.masks, ens22.probabilities)
                if event_s_indicator(m22, mask, [1, 3]))
    S = sample_independent(m22.region, 20000, seed=3, burn_in=30)
    hits = np.mean([event_s_indicator(m22, m, [1, 3]) for m in S])
    sigma = np.sqrt(exact * (1 - exact) / len(S))
    assert abs(hits - exact) <= 3 * sigma
