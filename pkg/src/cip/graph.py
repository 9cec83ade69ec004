"""Directed acyclic graphs and the graphical criteria used for counterfactual invariance.

Paths are sequences of distinct adjacent nodes, edges may be traversed in
either direction. Exogenous variables stay implicit in :class:`Dag`; they are
only materialised as nodes by :func:`build_duplicate_graph`.
"""
from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class GraphError(ValueError):
    """Raised for malformed graphs and invalid graph queries."""


class Dag:
    """Immutable DAG over named nodes.

    Parameters
    ----------
    nodes : sequence of str
        Node names, unique, in a caller-defined order.
    edges : iterable of (parent, child)
    """

    def __init__(self, nodes: Sequence[str], edges: Iterable[tuple[str, str]] = ()):
        nodes = tuple(nodes)
        if len(set(nodes)) != len(nodes):
            raise GraphError(f"duplicate node names in {nodes}")
        edge_list = [tuple(e) for e in edges]
        node_set = set(nodes)
        seen = set()
        for e in edge_list:
            if len(e) != 2:
                raise GraphError(f"edge {e} is not a (parent, child) pair")
            p, c = e
            if p not in node_set or c not in node_set:
                raise GraphError(f"edge {p}->{c} references an undeclared node")
            if p == c:
                raise GraphError(f"self-edge on {p}")
            if e in seen:
                raise GraphError(f"duplicate edge {p}->{c}")
            seen.add(e)
        self._nodes = nodes
        self._edges = frozenset(seen)
        self._parents = {n: [] for n in nodes}
        self._children = {n: [] for n in nodes}
        # keep adjacency in declaration order so traversals are deterministic
        for p, c in edge_list:
            self._parents[c].append(p)
            self._children[p].append(c)
        self._order = self._toposort()

    def _toposort(self) -> tuple[str, ...]:
        indeg = {n: len(self._parents[n]) for n in self._nodes}
        queue = deque(n for n in self._nodes if indeg[n] == 0)
        order = []
        while queue:
            n = queue.popleft()
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != len(self._nodes):
            raise GraphError("graph contains a directed cycle")
        return tuple(order)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def edges(self) -> frozenset:
        return self._edges

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def parents(self, node: str) -> tuple[str, ...]:
        self.check(node)
        return tuple(self._parents[node])

    def children(self, node: str) -> tuple[str, ...]:
        self.check(node)
        return tuple(self._children[node])

    def has_edge(self, parent: str, child: str) -> bool:
        return (parent, child) in self._edges

    def adjacent(self, node: str) -> tuple[str, ...]:
        return tuple(self._parents[node]) + tuple(self._children[node])

    def check(self, *names: str) -> None:
        for n in names:
            if n not in self._parents:
                raise GraphError(f"unknown node {n!r}")

    def remove_incoming(self, targets: Iterable[str]) -> "Dag":
        """The graph with all arrows into ``targets`` deleted."""
        targets = as_nodeset(self, targets)
        return Dag(self._nodes, [e for e in self._sorted_edges() if e[1] not in targets])

    def relabel(self, mapping: dict[str, str]) -> "Dag":
        return Dag([mapping[n] for n in self._nodes],
                   [(mapping[p], mapping[c]) for p, c in self._sorted_edges()])

    def _sorted_edges(self) -> list[tuple[str, str]]:
        return [(p, c) for c in self._nodes for p in self._parents[c]]

    def to_dict(self) -> dict:
        return {"nodes": list(self._nodes), "edges": [list(e) for e in self._sorted_edges()]}

    @classmethod
    def from_dict(cls, d: dict) -> "Dag":
        if not isinstance(d, dict) or "nodes" not in d or "edges" not in d:
            raise GraphError('graph JSON must be an object with "nodes" and "edges"')
        return cls(d["nodes"], [tuple(e) for e in d["edges"]])

    def __eq__(self, other):
        return (isinstance(other, Dag) and set(self._nodes) == set(other._nodes)
                and self._edges == other._edges)

    def __hash__(self):
        return hash((frozenset(self._nodes), self._edges))

    def __repr__(self):
        es = ", ".join(f"{p}->{c}" for p, c in self._sorted_edges())
        return f"Dag(nodes={list(self._nodes)}, edges=[{es}])"


def load_graph(path) -> Dag:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return Dag.from_dict(data)


def dump_graph(g: Dag, path) -> None:
    with open(path, "w") as fh:
        json.dump(g.to_dict(), fh, indent=2, ensure_ascii=False)


def as_nodeset(g: Dag, names: Iterable[str] | str | None) -> frozenset:
    if names is None:
        return frozenset()
    if isinstance(names, str):
        names = [names]
    names = frozenset(names)
    g.check(*names)
    return names


def descendants(g: Dag, roots) -> frozenset:
    """All nodes reachable from ``roots`` by directed paths, roots included."""
    roots = as_nodeset(g, roots)
    out = set(roots)
    stack = list(roots)
    while stack:
        n = stack.pop()
        for c in g._children[n]:
            if c not in out:
                out.add(c)
                stack.append(c)
    return frozenset(out)


def ancestors(g: Dag, roots) -> frozenset:
    """All nodes with a directed path into ``roots``, roots included."""
    roots = as_nodeset(g, roots)
    out = set(roots)
    stack = list(roots)
    while stack:
        n = stack.pop()
        for p in g._parents[n]:
            if p not in out:
                out.add(p)
                stack.append(p)
    return frozenset(out)


def check_path(g: Dag, path: Sequence[str]) -> None:
    if len(path) < 2:
        raise GraphError("a path needs at least two nodes")
    g.check(*path)
    if len(set(path)) != len(path):
        raise GraphError(f"path {list(path)} repeats a node")
    for a, b in zip(path, path[1:]):
        if not (g.has_edge(a, b) or g.has_edge(b, a)):
            raise GraphError(f"{a} and {b} are not adjacent")


def is_blocked(g: Dag, path: Sequence[str], s) -> bool:
    """Whether conditioning set ``s`` blocks ``path``.

    A triple ``a - m - b`` blocks when it is a chain or fork with ``m`` in ``s``,
    or a collider ``a -> m <- b`` with neither ``m`` nor any descendant of ``m``
    in ``s``. Single-edge paths are never blocked.
    """
    check_path(g, path)
    s = as_nodeset(g, s)
    for a, m, b in zip(path, path[1:], path[2:]):
        collider = g.has_edge(a, m) and g.has_edge(b, m)
        if collider:
            if not (descendants(g, [m]) & s):
                return True
        elif m in s:
            return True
    return False


def enumerate_paths(g: Dag, x, y, directed: bool = False) -> list[tuple[str, ...]]:
    """Every path (distinct nodes) from a node of ``x`` to a node of ``y``.

    Paths stop at the first ``y`` node reached. With ``directed=True`` only
    edges pointing away from the start are followed. Exponential in the worst
    case; intended for small graphs.
    """
    x = as_nodeset(g, x)
    y = as_nodeset(g, y)
    paths = []

    def extend(path, visited):
        last = path[-1]
        nxt = g._children[last] if directed else g.adjacent(last)
        for n in nxt:
            if n in visited:
                continue
            if n in y:
                paths.append(tuple(path + [n]))
                continue
            visited.add(n)
            path.append(n)
            extend(path, visited)
            path.pop()
            visited.discard(n)

    for start in (n for n in g.nodes if n in x):
        if start in y:
            continue
        extend([start], {start})
    return paths


def d_separated(g: Dag, x, y, s) -> bool:
    """d-separation of ``x`` and ``y`` given ``s`` via reachability (Bayes ball).

    Walks (node, direction) states; a trail may pass a collider only when the
    collider is an ancestor of ``s``, and a non-collider only when it is not
    in ``s``.
    """
    x = as_nodeset(g, x)
    y = as_nodeset(g, y)
    s = as_nodeset(g, s)
    if x & y:
        raise GraphError(f"x and y overlap on {sorted(x & y)}")
    anc_s = ancestors(g, s)
    # "up": arrived from a child (moving against edge direction), "down": from a parent.
    # Endpoints are never middle nodes, so the start nodes ignore s.
    queue = deque()
    for n in x:
        queue.extend((p, "up") for p in g._parents[n])
        queue.extend((c, "down") for c in g._children[n])
    visited = set()
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node in y:
            return False
        if direction == "up":
            if node not in s:
                queue.extend((p, "up") for p in g._parents[node])
                queue.extend((c, "down") for c in g._children[node])
        else:
            if node not in s:
                queue.extend((c, "down") for c in g._children[node])
            if node in anc_s:
                queue.extend((p, "up") for p in g._parents[node])
    return True


def proper_causal_paths(g: Dag, x, y) -> list[tuple[str, ...]]:
    """Directed paths from ``x`` to ``y`` touching ``x`` only at their first node."""
    x = as_nodeset(g, x)
    y = as_nodeset(g, y)
    if x & y:
        raise GraphError(f"x and y overlap on {sorted(x & y)}")
    return [p for p in enumerate_paths(g, x, y, directed=True) if not (set(p[1:]) & x)]


def _is_directed(g: Dag, path) -> bool:
    return all(g.has_edge(a, b) for a, b in zip(path, path[1:]))


def _forbidden_nodes(g: Dag, x, y) -> frozenset:
    """Descendants, in g with arrows into x removed, of non-x nodes on proper causal paths."""
    on_path = {n for p in proper_causal_paths(g, x, y) for n in p[1:]}
    return descendants(g.remove_incoming(x), on_path - set(x))


def adjustment_violations(g: Dag, x, y, s, proper: bool = False) -> list[str]:
    """Human-readable reasons why ``s`` fails the valid-adjustment criterion."""
    x = as_nodeset(g, x)
    y = as_nodeset(g, y)
    s = as_nodeset(g, s)
    if x & y:
        raise GraphError(f"x and y overlap on {sorted(x & y)}")
    out = []
    bad = _forbidden_nodes(g, x, y) & s
    for n in sorted(bad):
        out.append(f"(i) {n} descends from a node on a proper causal path from x to y")
    for p in enumerate_paths(g, x, y):
        if _is_directed(g, p):
            continue
        if proper and set(p[1:]) & x:
            continue
        if not is_blocked(g, p, s):
            out.append(f"(ii) non-causal path {_fmt_path(g, p)} is open")
    return out


def is_valid_adjustment(g: Dag, x, y, s, proper: bool = False) -> bool:
    """Valid adjustment set check.

    ``proper=False`` (default) requires ``s`` to block every non-causal path
    from ``x`` to ``y``; ``proper=True`` only those meeting ``x`` once.
    """
    x = as_nodeset(g, x)
    y = as_nodeset(g, y)
    s = as_nodeset(g, s)
    if x & y:
        raise GraphError(f"x and y overlap on {sorted(x & y)}")
    if _forbidden_nodes(g, x, y) & s:
        return False
    for p in enumerate_paths(g, x, y):
        if _is_directed(g, p) or (proper and set(p[1:]) & x):
            continue
        if not is_blocked(g, p, s):
            return False
    return True


def _fmt_path(g: Dag, path) -> str:
    parts = [path[0]]
    for a, b in zip(path, path[1:]):
        parts += ["->" if g.has_edge(a, b) else "<-", b]
    return " ".join(parts)


@dataclass
class CriterionReport:
    valid_adjustment: bool
    parent_closure: bool
    injectivity_assumed: bool = True
    violations: list = field(default_factory=list)

    @property
    def graphical_ok(self) -> bool:
        return self.valid_adjustment and self.parent_closure

    def to_dict(self) -> dict:
        return {
            "valid_adjustment": self.valid_adjustment,
            "parent_closure": self.parent_closure,
            "graphical_ok": self.graphical_ok,
            "injectivity_assumed": self.injectivity_assumed,
            "violations": list(self.violations),
        }


def check_ci_criterion(g: Dag, a, w, y, s, proper: bool = False) -> CriterionReport:
    """Graphically checkable part of the sufficient criterion for counterfactual invariance.

    A predictor with Y_hat independent of A u W given S is counterfactually
    invariant in A w.r.t. W when S is a valid adjustment set for (A u W, Y) and
    every parent of A u W lies in A u W. Injectivity of the structural map of
    W \\ A in its noise cannot be checked from the graph and is assumed.
    """
    a = as_nodeset(g, a)
    w = as_nodeset(g, w)
    y = as_nodeset(g, y)
    s = as_nodeset(g, s)
    aw = a | w
    if aw & y:
        raise GraphError(f"A u W overlaps Y on {sorted(aw & y)}")
    violations = adjustment_violations(g, aw, y, s, proper=proper)
    valid = not violations
    closure = True
    for n in sorted(aw):
        for p in g.parents(n):
            if p not in aw:
                closure = False
                violations.append(f"parent closure: {p} is a parent of {n} outside A u W")
    warnings.warn("injectivity of the structural equation for W \\ A in its noise is assumed, "
                  "not checked", stacklevel=2)
    return CriterionReport(valid, closure, True, violations)


DUPLICATE_MARK = "̄"  # combining macron, renders A -> Ā


def _fresh(name: str, taken: set) -> str:
    while name in taken:
        name += "'"
    taken.add(name)
    return name


def build_duplicate_graph(g: Dag, a, w) -> tuple[Dag, dict]:
    """Duplicate-node construction relating pre- and post-intervention worlds.

    Every node of ``a | w`` gets a copy; so does every ancestor of ``a | w``
    outside it that is also a descendant of ``a | w``. Copies take their
    parents' copies where available, the original parents otherwise. Each
    copied node N gains an explicit exogenous node ``U_N`` pointing to both N
    and its copy.

    Returns the extended graph and the mapping original -> copy name.
    """
    aw = as_nodeset(g, a) | as_nodeset(g, w)
    if not aw:
        return g, {}
    anc = set()
    for n in aw:
        anc |= ancestors(g, [n])
    extra = (anc - aw) & descendants(g, aw)
    dup = [n for n in g.topological_order() if n in aw or n in extra]
    taken = set(g.nodes)
    mapping = {n: _fresh(n + DUPLICATE_MARK, taken) for n in dup}
    exo = {n: _fresh(f"U_{n}", taken) for n in dup}

    nodes = list(g.nodes)
    edges = list(g._sorted_edges())
    for n in dup:
        nodes.append(exo[n])
        nodes.append(mapping[n])
    for n in dup:
        for p in g.parents(n):
            edges.append((mapping.get(p, p), mapping[n]))
        edges.append((exo[n], n))
        edges.append((exo[n], mapping[n]))
    return Dag(nodes, edges), mapping
