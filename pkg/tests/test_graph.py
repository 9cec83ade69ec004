import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cip.graph import (Dag, GraphError, ancestors, build_duplicate_graph, check_ci_criterion, d_separated,
                       descendants, enumerate_paths, is_blocked, is_valid_adjustment, load_graph,
                       proper_causal_paths)
from oracles import adjustment_oracle, dsep_oracle, random_dag


def chain(*names):
    return Dag(names, list(zip(names, names[1:])))


CONFOUNDED = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("Z", "X"), ("Z", "Y"), ("A", "X"), ("A", "Y"), ("X", "Y")])


# construction and basic queries

def test_rejects_cycles_and_unknown_nodes():
    with pytest.raises(GraphError):
        Dag(["a", "b"], [("a", "b"), ("b", "a")])
    with pytest.raises(GraphError):
        Dag(["a"], [("a", "b")])
    with pytest.raises(GraphError):
        Dag(["a", "a"])


def test_descendants_include_roots():
    g = chain("A", "B", "C")
    assert descendants(g, ["B"]) == {"B", "C"}
    assert ancestors(g, ["B"]) == {"A", "B"}
    assert descendants(g, []) == frozenset()
    with pytest.raises(GraphError):
        descendants(g, ["Q"])


def test_topological_order_respects_edges():
    g = random_dag(np.random.default_rng(3), 7)
    pos = {n: i for i, n in enumerate(g.topological_order())}
    assert all(pos[p] < pos[c] for p, c in g.edges)


def test_is_blocked_examples():
    g = chain("A", "B", "C")
    assert is_blocked(g, ["A", "B", "C"], ["B"])
    assert not is_blocked(g, ["A", "B", "C"], [])
    col = Dag(["A", "B", "C", "D"], [("A", "B"), ("C", "B"), ("B", "D")])
    assert is_blocked(col, ["A", "B", "C"], [])
    assert not is_blocked(col, ["A", "B", "C"], ["D"])
    with pytest.raises(GraphError):
        is_blocked(g, ["A", "C"], [])


def test_dsep_examples():
    assert d_separated(chain("A", "B", "C"), ["A"], ["C"], ["B"])
    assert not d_separated(chain("A", "B", "C"), ["A"], ["C"], [])
    col = Dag(["A", "B", "C"], [("A", "B"), ("C", "B")])
    assert d_separated(col, ["A"], ["C"], [])
    assert not d_separated(col, ["A"], ["C"], ["B"])
    with pytest.raises(GraphError):
        d_separated(col, ["A"], ["A"], [])


def test_adjustment_examples():
    assert is_valid_adjustment(chain("A", "Y"), ["A"], ["Y"], [])
    g = Dag(["S", "A", "Y"], [("S", "A"), ("S", "Y"), ("A", "Y")])
    assert not is_valid_adjustment(g, ["A"], ["Y"], [])
    assert is_valid_adjustment(g, ["A"], ["Y"], ["S"])
    m = Dag(["A", "X", "Y"], [("A", "X"), ("X", "Y"), ("A", "Y")])
    assert not is_valid_adjustment(m, ["A"], ["Y"], ["X"])


def test_proper_causal_paths():
    m = Dag(["A", "X", "Y"], [("A", "X"), ("X", "Y"), ("A", "Y")])
    assert sorted(proper_causal_paths(m, ["A"], ["Y"])) == [("A", "X", "Y"), ("A", "Y")]
    # a directed path re-entering x is not proper
    assert sorted(proper_causal_paths(m, ["A", "X"], ["Y"])) == [("A", "Y"), ("X", "Y")]


def test_criterion_reports():
    with pytest.warns(UserWarning):
        rep = check_ci_criterion(chain("A", "X", "Y"), ["A"], ["A", "X"], ["Y"], [])
    assert rep.parent_closure and rep.injectivity_assumed
    g = Dag(["Z", "A", "X", "Y"], [("Z", "X"), ("A", "X"), ("X", "Y")])
    with pytest.warns(UserWarning):
        rep = check_ci_criterion(g, ["A"], ["A", "X"], ["Y"], ["Z"])
    assert not rep.parent_closure
    with pytest.raises(GraphError):
        check_ci_criterion(g, ["A"], ["Y"], ["Y"], [])


def test_criterion_confounded_per_clause():
    # literal reading: X <- A -> Y starts in x, is non-causal and open given {Z}
    with pytest.warns(UserWarning):
        rep = check_ci_criterion(CONFOUNDED, ["A"], ["A", "X", "Z"], ["Y"], ["Z"])
    assert not rep.valid_adjustment
    assert rep.parent_closure
    assert any(v.startswith("(ii)") for v in rep.violations)
    assert rep.valid_adjustment == adjustment_oracle(CONFOUNDED, {"A", "X", "Z"}, {"Y"}, {"Z"})
    with pytest.warns(UserWarning):
        rep = check_ci_criterion(CONFOUNDED, ["A"], ["A", "X", "Z"], ["Y"], ["Z"], proper=True)
    assert rep.valid_adjustment and rep.graphical_ok
    assert rep.valid_adjustment == adjustment_oracle(CONFOUNDED, {"A", "X", "Z"}, {"Y"}, {"Z"}, proper=True)


# oracle agreement

def _random_query(rng, g):
    nodes = list(g.nodes)
    lab = rng.integers(0, 4, len(nodes))  # 0 x, 1 y, 2 s, 3 free
    x = [n for n, l in zip(nodes, lab) if l == 0]
    y = [n for n, l in zip(nodes, lab) if l == 1]
    s = [n for n, l in zip(nodes, lab) if l == 2]
    return x, y, s


def test_dsep_matches_path_oracle():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 300:
        g = random_dag(rng, int(rng.integers(2, 6)), p=rng.uniform(0.2, 0.8))
        x, y, s = _random_query(rng, g)
        if not x or not y:
            continue
        assert d_separated(g, x, y, s) == dsep_oracle(g, x, y, s), (g, x, y, s)
        checked += 1


@pytest.mark.parametrize("proper", [False, True])
def test_adjustment_matches_oracle(proper):
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 300:
        g = random_dag(rng, int(rng.integers(2, 6)), p=rng.uniform(0.2, 0.8))
        x, y, s = _random_query(rng, g)
        if not x or not y:
            continue
        got = is_valid_adjustment(g, x, y, s, proper=proper)
        assert got == adjustment_oracle(g, x, y, s, proper=proper), (g, x, y, s)
        checked += 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.permutations(range(5)))
def test_dsep_invariant_under_relabeling(seed, perm):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 5)
    x, y, s = _random_query(rng, g)
    if not x or not y:
        return
    mapping = {f"V{i}": f"N{perm[i]}" for i in range(5)}
    h = g.relabel(mapping)
    r = lambda ns: [mapping[n] for n in ns]
    assert d_separated(g, x, y, s) == d_separated(h, r(x), r(y), r(s))


def test_enumerate_paths_stops_at_targets():
    g = chain("A", "B", "C")
    assert enumerate_paths(g, ["A"], ["B", "C"]) == [("A", "B")]
    assert enumerate_paths(g, ["C"], ["A"], directed=True) == []


# duplicate graph

def test_duplicate_with_latent_confounder():
    g = Dag(["U", "A", "X", "Y"], [("U", "A"), ("U", "X"), ("U", "Y"), ("A", "X"), ("X", "Y")])
    dup, mapping = build_duplicate_graph(g, ["A"], ["A", "X"])
    a, x = mapping["A"], mapping["X"]
    assert a == "Ā" and x == "X̄"
    for e in [("U", a), ("U", x), (a, x), ("U_A", "A"), ("U_A", a), ("U_X", "X"), ("U_X", x)]:
        assert dup.has_edge(*e)
    assert not dup.has_edge(a, "Y") and not dup.has_edge(x, "Y")


def test_duplicate_trivial_cases():
    g = chain("A", "X", "Y")
    same, mapping = build_duplicate_graph(g, [], [])
    assert same == g and mapping == {}
    dup, mapping = build_duplicate_graph(g, ["A"], [])
    assert set(dup.nodes) - set(g.nodes) == {"Ā", "U_A"}
    assert set(dup.edges) - set(g.edges) == {("U_A", "A"), ("U_A", "Ā")}


def test_duplicate_restricts_to_input_and_stays_acyclic():
    rng = np.random.default_rng(5)
    for _ in range(50):
        g = random_dag(rng, 5)
        aw = [n for n in g.nodes if rng.random() < 0.4]
        dup, mapping = build_duplicate_graph(g, aw[:1], aw)
        assert len(dup.topological_order()) == len(dup.nodes)
        orig = set(g.nodes)
        assert {e for e in dup.edges if e[0] in orig and e[1] in orig} == set(g.edges)


def test_duplicate_preserves_adjustment():
    rng = np.random.default_rng(7)
    found = 0
    while found < 100:
        g = random_dag(rng, int(rng.integers(3, 6)), p=rng.uniform(0.2, 0.7))
        nodes = list(g.nodes)
        y = nodes[int(rng.integers(len(nodes)))]
        rest = [n for n in nodes if n != y]
        a = [rest[int(rng.integers(len(rest)))]]
        w = [n for n in rest if rng.random() < 0.4]
        aw = sorted(set(a) | set(w))
        s = [n for n in rest if n not in aw and rng.random() < 0.5]
        if not is_valid_adjustment(g, aw, [y], s):
            continue
        dup, _ = build_duplicate_graph(g, a, w)
        assert is_valid_adjustment(dup, aw, [y], s)
        found += 1


def test_load_graph_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"nodes": ["A",\n ]}')
    with pytest.raises(GraphError, match="line 2"):
        load_graph(p)
    p.write_text(json.dumps({"nodes": ["A", "B"], "edges": [["A", "B"]]}))
    assert load_graph(p) == chain("A", "B")
