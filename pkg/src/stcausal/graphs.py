"""Temporal causal graphs over (variable, lag) nodes, with orientation logic.

A TemporalGraph is stationary: a stored edge between (i, tau) and (j, 0)
stands for all of its time-shifted copies. Every stored edge touches at
least one lag-0 node; edges from the past are always directed toward lag 0,
and only lag-0 pairs may carry undirected, bidirected, or genuine marks.

Orientation proceeds in the usual constraint-based order: collider
orientation from separating-set records, then propagation to a maximal
partially directed graph (Meek-style rules, with already-directed lagged
edges acting as background knowledge). A separate marking phase produces
IC*-style four-mark graphs when latent confounders are entertained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import GraphStructureError
from .panel import LaggedNode


class EdgeMark(str, Enum):
    """Edge annotation; bidirected and genuine appear only in latent mode."""

    UNDIRECTED = "undirected"
    DIRECTED = "directed"
    BIDIRECTED = "bidirected"
    GENUINE = "genuine-directed"


_SYMMETRIC = {EdgeMark.UNDIRECTED, EdgeMark.BIDIRECTED}
_ARROWS = {EdgeMark.DIRECTED, EdgeMark.GENUINE}


def _canon(a: LaggedNode, b: LaggedNode) -> tuple[LaggedNode, LaggedNode]:
    return (a, b) if (a.variable, a.lag) <= (b.variable, b.lag) else (b, a)


class TemporalGraph:
    """Graph over all LaggedNodes for n_variables and lags 0..max_lag.

    For DIRECTED / GENUINE marks the stored key is (tail, head); for
    UNDIRECTED / BIDIRECTED it is the canonical sorted pair.
    """

    def __init__(
        self,
        n_variables: int,
        max_lag: int,
        var_names: Sequence[str] | None = None,
        stationary: bool = True,
    ):
        if n_variables < 1 or max_lag < 0:
            raise GraphStructureError("need n_variables >= 1 and max_lag >= 0")
        self.n_variables = int(n_variables)
        self.max_lag = int(max_lag)
        self.var_names = list(var_names) if var_names is not None else None
        if self.var_names is not None and len(self.var_names) != n_variables:
            raise GraphStructureError("var_names length does not match n_variables")
        self.stationary = bool(stationary)
        self._edges: dict[tuple[LaggedNode, LaggedNode], EdgeMark] = {}
        self._adj: dict[LaggedNode, set[LaggedNode]] = {n: set() for n in self.nodes()}

    # ---- node / edge basics ------------------------------------------------

    def nodes(self) -> list[LaggedNode]:
        return [
            LaggedNode(v, lag)
            for v in range(self.n_variables)
            for lag in range(self.max_lag + 1)
        ]

    def lag0_nodes(self) -> list[LaggedNode]:
        return [LaggedNode(v, 0) for v in range(self.n_variables)]

    def lagged_nodes(self) -> list[LaggedNode]:
        return [n for n in self.nodes() if n.lag > 0]

    def _check_node(self, n: LaggedNode) -> None:
        if not (0 <= n.variable < self.n_variables and 0 <= n.lag <= self.max_lag):
            raise GraphStructureError(f"node {n} outside graph ({self.n_variables} vars, max lag {self.max_lag})")

    def add_edge(self, a: LaggedNode, b: LaggedNode, mark: EdgeMark = EdgeMark.UNDIRECTED) -> None:
        """Insert or overwrite the edge between a and b.

        For DIRECTED/GENUINE the edge points a -> b. Temporal constraints
        are enforced here: no lagged-lagged storage, no arrow into the past,
        no symmetric mark touching a lagged node.
        """
        self._check_node(a)
        self._check_node(b)
        if a == b:
            raise GraphStructureError("self-loops are not allowed")
        if a.lag > 0 and b.lag > 0:
            raise GraphStructureError(
                f"stationary storage forbids lagged-lagged edge {a}--{b}"
            )
        if mark in _SYMMETRIC:
            if a.lag > 0 or b.lag > 0:
                raise GraphStructureError(
                    f"{mark.value} mark requires two lag-0 endpoints, got {a}, {b}"
                )
            key = _canon(a, b)
        else:
            if b.lag > 0:
                raise GraphStructureError(f"edge {a} -> {b} points into the past")
            key = (a, b)
        self._remove_pair(a, b)
        self._edges[key] = mark
        self._adj[a].add(b)
        self._adj[b].add(a)

    def _remove_pair(self, a: LaggedNode, b: LaggedNode) -> None:
        for key in ((a, b), (b, a)):
            if key in self._edges:
                del self._edges[key]
        self._adj[a].discard(b)
        self._adj[b].discard(a)

    def remove_edge(self, a: LaggedNode, b: LaggedNode) -> None:
        if not self.has_edge(a, b):
            raise GraphStructureError(f"no edge between {a} and {b}")
        self._remove_pair(a, b)

    def has_edge(self, a: LaggedNode, b: LaggedNode) -> bool:
        return (a, b) in self._edges or (b, a) in self._edges

    def edge_mark(self, a: LaggedNode, b: LaggedNode) -> EdgeMark | None:
        """Mark of the edge between a and b, regardless of stored direction."""
        if (a, b) in self._edges:
            return self._edges[(a, b)]
        return self._edges.get((b, a))

    def points_to(self, a: LaggedNode, b: LaggedNode) -> bool:
        """True when an arrow a -> b exists (DIRECTED or GENUINE)."""
        return self._edges.get((a, b)) in _ARROWS

    def is_undirected(self, a: LaggedNode, b: LaggedNode) -> bool:
        return self.edge_mark(a, b) is EdgeMark.UNDIRECTED

    def neighbors(self, a: LaggedNode) -> set[LaggedNode]:
        return set(self._adj[a])

    def edges(self) -> list[tuple[LaggedNode, LaggedNode, EdgeMark]]:
        out = [(u, v, m) for (u, v), m in self._edges.items()]
        out.sort(key=lambda e: (e[0].variable, e[0].lag, e[1].variable, e[1].lag))
        return out

    def n_edges(self) -> int:
        return len(self._edges)

    def copy(self) -> "TemporalGraph":
        g = TemporalGraph(self.n_variables, self.max_lag, self.var_names, self.stationary)
        g._edges = dict(self._edges)
        g._adj = {n: set(s) for n, s in self._adj.items()}
        return g

    def with_max_lag(self, max_lag: int) -> "TemporalGraph":
        """Same canonical edges embedded in a window of at least the same depth."""
        if max_lag < self.max_lag:
            raise GraphStructureError(
                f"cannot shrink max_lag from {self.max_lag} to {max_lag}"
            )
        g = TemporalGraph(self.n_variables, max_lag, self.var_names, self.stationary)
        for (u, v), m in self._edges.items():
            g.add_edge(u, v, m)
        return g

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        return (
            self.n_variables == other.n_variables
            and self.max_lag == other.max_lag
            and self.stationary == other.stationary
            and self._edges == other._edges
        )

    def __repr__(self) -> str:
        return (
            f"TemporalGraph(p={self.n_variables}, max_lag={self.max_lag}, "
            f"edges={len(self._edges)})"
        )

    # ---- structure queries ---------------------------------------------------

    def is_fully_directed(self) -> bool:
        return all(m in _ARROWS for m in self._edges.values())

    def parents(self, n: LaggedNode) -> list[LaggedNode]:
        """Tails of arrows into n among stored (canonical) edges."""
        return sorted(u for (u, v), m in self._edges.items() if v == n and m in _ARROWS)

    def lag0_topological_order(self) -> list[int]:
        """Topological order of the directed lag-0 subgraph (variable indices)."""
        children: dict[int, set[int]] = {v: set() for v in range(self.n_variables)}
        indeg = {v: 0 for v in range(self.n_variables)}
        for (u, v), m in self._edges.items():
            if m in _ARROWS and u.lag == 0 and v.lag == 0:
                if v.variable not in children[u.variable]:
                    children[u.variable].add(v.variable)
                    indeg[v.variable] += 1
        order, queue = [], sorted(v for v, d in indeg.items() if d == 0)
        while queue:
            u = queue.pop(0)
            order.append(u)
            for w in sorted(children[u]):
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if len(order) != self.n_variables:
            raise GraphStructureError("directed lag-0 subgraph contains a cycle")
        return order

    def validate(self, latent: bool = False) -> None:
        """Assert the temporal invariants; called after every pipeline phase."""
        for (u, v), m in self._edges.items():
            if m in _ARROWS and v.lag > 0:
                raise GraphStructureError(f"edge {u} -> {v} points into the past")
            if m in _SYMMETRIC and (u.lag > 0 or v.lag > 0):
                raise GraphStructureError(f"{m.value} edge {u}--{v} touches a lagged node")
            if u.lag > 0 and v.lag > 0:
                raise GraphStructureError(f"lagged-lagged edge {u}--{v}")
            if not latent and m in (EdgeMark.BIDIRECTED, EdgeMark.GENUINE):
                raise GraphStructureError(f"{m.value} mark outside latent mode on {u}--{v}")
        self.lag0_topological_order()

    def expanded_parent_map(self) -> dict[LaggedNode, list[LaggedNode]]:
        """Parent map over the full lag window, materializing stationary copies.

        A stored edge ((i, tau) -> (j, 0)) is repeated as
        ((i, tau + s) -> (j, s)) for every shift s that stays inside the
        window; contemporaneous edges shift likewise. Requires a fully
        directed graph.
        """
        if not self.is_fully_directed():
            raise GraphStructureError("expansion requires a fully directed graph")
        parents: dict[LaggedNode, list[LaggedNode]] = {n: [] for n in self.nodes()}
        for (u, v), _ in self._edges.items():
            shifts = range(self.max_lag - u.lag + 1) if self.stationary else range(1)
            for s in shifts:
                parents[LaggedNode(v.variable, v.lag + s)].append(
                    LaggedNode(u.variable, u.lag + s)
                )
        return parents

    # ---- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        nodes = [{"var": n.variable, "lag": n.lag} for n in self.nodes()]
        edges = [
            {
                "from": {"var": u.variable, "lag": u.lag},
                "to": {"var": v.variable, "lag": v.lag},
                "mark": m.value,
            }
            for u, v, m in self.edges()
        ]
        payload = {"nodes": nodes, "edges": edges, "stationary": self.stationary}
        if self.var_names is not None:
            payload["variables"] = list(self.var_names)
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TemporalGraph":
        nodes = payload.get("nodes", [])
        if not nodes:
            raise GraphStructureError("graph JSON has no nodes")
        n_vars = max(n["var"] for n in nodes) + 1
        max_lag = max(n["lag"] for n in nodes)
        g = cls(
            n_vars,
            max_lag,
            payload.get("variables"),
            bool(payload.get("stationary", True)),
        )
        for e in payload.get("edges", []):
            u = LaggedNode(e["from"]["var"], e["from"]["lag"])
            v = LaggedNode(e["to"]["var"], e["to"]["lag"])
            g.add_edge(u, v, EdgeMark(e["mark"]))
        return g

    @classmethod
    def from_json(cls, text: str) -> "TemporalGraph":
        return cls.from_json_dict(json.loads(text))

    def node_label(self, n: LaggedNode) -> str:
        return n.label(self.var_names)

    def to_dot(self) -> str:
        """Graphviz export: dashed undirected, dir=both bidirected, bold genuine."""
        lines = ["digraph temporal {", "  rankdir=LR;"]
        for n in self.nodes():
            lines.append(f'  "{self.node_label(n)}";')
        for u, v, m in self.edges():
            attrs = {
                EdgeMark.UNDIRECTED: "dir=none, style=dashed",
                EdgeMark.DIRECTED: "dir=forward",
                EdgeMark.BIDIRECTED: "dir=both",
                EdgeMark.GENUINE: "dir=forward, style=bold",
            }[m]
            lines.append(f'  "{self.node_label(u)}" -> "{self.node_label(v)}" [{attrs}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


# ---- separating-set records ----------------------------------------------


@dataclass
class TestedSet:
    """One conditional-independence test run for a pair during search."""

    nodes: frozenset
    statistic: float
    p_value: float
    separating: bool


@dataclass
class SepsetRecord:
    """Everything tested for one unordered pair, in test order."""

    pair: tuple[LaggedNode, LaggedNode]
    tested: list[TestedSet] = field(default_factory=list)

    def separating_sets(self) -> list[TestedSet]:
        return [t for t in self.tested if t.separating]

    def first_separating(self) -> TestedSet | None:
        for t in self.tested:
            if t.separating:
                return t
        return None

    def was_tested(self, nodes: Iterable[LaggedNode]) -> bool:
        key = frozenset(nodes)
        return any(t.nodes == key for t in self.tested)


class SepsetRecords:
    """Pair-keyed log of every conditioning set tested during skeleton search."""

    def __init__(self) -> None:
        self._records: dict[frozenset, SepsetRecord] = {}

    @staticmethod
    def _key(a: LaggedNode, b: LaggedNode) -> frozenset:
        return frozenset((a, b))

    def log(
        self,
        a: LaggedNode,
        b: LaggedNode,
        cond: Iterable[LaggedNode],
        statistic: float,
        p_value: float,
        separating: bool,
    ) -> None:
        cond_set = frozenset(cond)
        if a in cond_set or b in cond_set:
            raise GraphStructureError("separating set must exclude both endpoints")
        key = self._key(a, b)
        record = self._records.get(key)
        if record is None:
            record = SepsetRecord(pair=_canon(a, b))
            self._records[key] = record
        record.tested.append(TestedSet(cond_set, statistic, p_value, separating))

    def get(self, a: LaggedNode, b: LaggedNode) -> SepsetRecord | None:
        return self._records.get(self._key(a, b))

    def pairs(self) -> Iterator[SepsetRecord]:
        return iter(self._records.values())

    def merged_with(self, other: "SepsetRecords") -> "SepsetRecords":
        out = SepsetRecords()
        for src in (self, other):
            for key, rec in src._records.items():
                dst = out._records.get(key)
                if dst is None:
                    out._records[key] = SepsetRecord(rec.pair, list(rec.tested))
                else:
                    dst.tested.extend(rec.tested)
        return out


# ---- d-separation -----------------------------------------------------------


def d_separated(
    g: TemporalGraph,
    i: LaggedNode,
    j: LaggedNode,
    cond: Iterable[LaggedNode],
    _parents: dict[LaggedNode, list[LaggedNode]] | None = None,
) -> bool:
    """True iff every path between i and j is blocked given the conditioning set.

    Standard blocking: a non-collider on the path blocks when conditioned
    on; a collider blocks unless it, or one of its descendants, is
    conditioned on. The graph must be fully directed; stationary graphs are
    expanded to their within-window time-shifted copies first.
    """
    cond_set = frozenset(cond)
    if i == j:
        raise GraphStructureError("d-separation needs two distinct nodes")
    if i in cond_set or j in cond_set:
        raise GraphStructureError("conditioning set must exclude both endpoints")
    parents = _parents if _parents is not None else g.expanded_parent_map()
    for n in (i, j, *cond_set):
        if n not in parents:
            raise GraphStructureError(f"node {n} absent from graph")

    children: dict[LaggedNode, list[LaggedNode]] = {n: [] for n in parents}
    for child, pars in parents.items():
        for p in pars:
            children[p].append(child)

    # ancestors of the conditioning set (inclusive)
    anc = set(cond_set)
    stack = list(cond_set)
    while stack:
        n = stack.pop()
        for p in parents[n]:
            if p not in anc:
                anc.add(p)
                stack.append(p)

    # reachability over active trails: state (node, entered_via_arrow_into_node)
    start = [(i, False), (i, True)]
    seen = set(start)
    stack = list(start)
    while stack:
        node, via_arrow_in = stack.pop()
        if node == j:
            return False
        moves: list[tuple[LaggedNode, bool]] = []
        if not via_arrow_in:
            # entered against an arrow (from a child); continue anywhere if
            # node is unconditioned
            if node not in cond_set:
                moves.extend((p, False) for p in parents[node])
                moves.extend((c, True) for c in children[node])
        else:
            # entered along an arrow: node is a collider for parent moves
            if node in anc:
                moves.extend((p, False) for p in parents[node])
            if node not in cond_set:
                moves.extend((c, True) for c in children[node])
        for state in moves:
            if state not in seen:
                seen.add(state)
                stack.append(state)
    return True


# ---- collider orientation -----------------------------------------------


@dataclass
class ConflictRecord:
    """Two triples demanded opposite arrowheads on the same lag-0 edge."""

    edge: tuple[LaggedNode, LaggedNode]
    triples: list[tuple[LaggedNode, LaggedNode, LaggedNode]]

    def to_json_dict(self, names: Sequence[str] | None = None) -> dict:
        return {
            "edge": [self.edge[0].label(names), self.edge[1].label(names)],
            "triples": [[a.label(names), k.label(names), b.label(names)] for a, k, b in self.triples],
        }


COLLIDER_RULES = ("default", "majority", "conservative")


def _collider_fires(record: SepsetRecord, k: LaggedNode, rule: str) -> bool:
    seps = record.separating_sets()
    if not seps:
        raise GraphStructureError(
            f"pair {record.pair} is nonadjacent but has no recorded separating set"
        )
    if rule == "default":
        return k not in seps[0].nodes
    if rule == "majority":
        absent = sum(1 for s in seps if k not in s.nodes)
        return absent * 2 > len(seps)
    if rule == "conservative":
        return all(k not in s.nodes for s in seps)
    raise GraphStructureError(f"unknown collider rule {rule!r}")


def unshielded_triples(g: TemporalGraph) -> list[tuple[LaggedNode, LaggedNode, LaggedNode]]:
    """Triples (a, k, b) with k at lag 0, a-k and k-b edges, a,b nonadjacent.

    Past nodes are never candidate colliders, so k is always contemporaneous;
    a or b may be lagged (their edges into k are already directed by time).
    Triples where both outer nodes are lagged carry no orientation content
    and are skipped.
    """
    triples = []
    for k in g.lag0_nodes():
        nbrs = sorted(g.neighbors(k))
        for ia in range(len(nbrs)):
            for ib in range(ia + 1, len(nbrs)):
                a, b = nbrs[ia], nbrs[ib]
                if a.lag > 0 and b.lag > 0:
                    continue
                if not g.has_edge(a, b):
                    triples.append((a, k, b))
    return triples


def orient_colliders(
    skeleton: TemporalGraph,
    sepsets: SepsetRecords,
    rule: str = "default",
) -> tuple[TemporalGraph, list[ConflictRecord]]:
    """Orient unshielded triples a-k-b into a -> k <- b when the rule fires.

    default: k absent from the first-found separating set; majority: k
    absent from a strict majority of recorded separating sets;
    conservative: k absent from every recorded separating set. Opposite
    arrowhead demands on one edge cancel out: the edge reverts to
    undirected and a conflict record is emitted.
    """
    if rule not in COLLIDER_RULES:
        raise GraphStructureError(f"unknown collider rule {rule!r}")
    g = skeleton.copy()
    demands: dict[tuple[LaggedNode, LaggedNode], list] = {}
    for a, k, b in unshielded_triples(g):
        record = sepsets.get(a, b)
        if record is None:
            raise GraphStructureError(
                f"no separating-set record for nonadjacent pair ({a}, {b})"
            )
        if not _collider_fires(record, k, rule):
            continue
        for tail in (a, b):
            if tail.lag > 0:
                continue  # lagged edge already points into k
            demands.setdefault((tail, k), []).append((a, k, b))

    conflicts: list[ConflictRecord] = []
    decided: set[tuple[LaggedNode, LaggedNode]] = set()
    for (tail, head), triples in sorted(
        demands.items(),
        key=lambda kv: (kv[0][0].variable, kv[0][0].lag, kv[0][1].variable, kv[0][1].lag),
    ):
        if (head, tail) in demands:
            pair = _canon(tail, head)
            if pair not in decided:
                decided.add(pair)
                conflicts.append(
                    ConflictRecord(pair, triples + demands[(head, tail)])
                )
            continue
        g.add_edge(tail, head, EdgeMark.DIRECTED)
    # conflicted edges stay undirected (they already are in the skeleton)
    conflicts.extend(_break_orientation_cycles(g, demands))
    return g, conflicts


def _break_orientation_cycles(
    g: TemporalGraph, demands: dict
) -> list[ConflictRecord]:
    """Revert collider orientations that jointly form a directed lag-0 cycle.

    Noisy tests can demand a consistent arrowhead on every edge of a cycle
    (no pairwise conflict), which no DAG can satisfy. Every directed lag-0
    edge inside a strongly connected component reverts to undirected, with
    a conflict record; remaining orientations are acyclic by construction.
    """
    children: dict[int, set[int]] = {}
    for (u, v), m in g._edges.items():
        if m in _ARROWS and u.lag == 0 and v.lag == 0:
            children.setdefault(u.variable, set()).add(v.variable)

    # iterative Tarjan strongly-connected components
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    component: dict[int, int] = {}
    counter = [0]
    comp_id = [0]

    def strongconnect(root: int) -> None:
        work = [(root, iter(sorted(children.get(root, ()))))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for child in it:
                if child not in index:
                    index[child] = low[child] = counter[0]
                    counter[0] += 1
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(sorted(children.get(child, ())))))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component[member] = comp_id[0]
                    if member == node:
                        break
                comp_id[0] += 1

    for v in range(g.n_variables):
        if v not in index:
            strongconnect(v)

    conflicts: list[ConflictRecord] = []
    for (u, v), m in sorted(
        g._edges.items(),
        key=lambda kv: (kv[0][0].variable, kv[0][0].lag, kv[0][1].variable, kv[0][1].lag),
    ):
        if m not in _ARROWS or u.lag > 0 or v.lag > 0:
            continue
        if component[u.variable] == component[v.variable]:
            triples = demands.get((u, v), [])
            g.add_edge(u, v, EdgeMark.UNDIRECTED)
            conflicts.append(ConflictRecord(_canon(u, v), list(triples)))
    return conflicts


# ---- orientation propagation ---------------------------------------------


def propagate_orientations(g: TemporalGraph) -> TemporalGraph:
    """Direct remaining lag-0 edges as far as the standard closure rules allow.

    Applies the Meek rules to a fixpoint, treating lagged edges (and any
    collider orientations) as background knowledge: an arrow a -> b counts
    as evidence whether a is lagged or contemporaneous, but only undirected
    lag-0 edges ever receive new orientations. No rule creates a new
    unshielded collider or a directed cycle, so remaining edges stay
    undirected. Idempotent.
    """
    g = g.copy()
    changed = True
    while changed:
        changed = False
        undirected = [
            (u, v)
            for (u, v), m in list(g._edges.items())
            if m is EdgeMark.UNDIRECTED
        ]
        for u, v in undirected:
            if g.edge_mark(u, v) is not EdgeMark.UNDIRECTED:
                continue
            for a, b in ((u, v), (v, u)):
                if _meek_fires(g, a, b) and not _has_directed_path(g, b, a):
                    g.add_edge(a, b, EdgeMark.DIRECTED)
                    changed = True
                    break
    return g


def _has_directed_path(g: TemporalGraph, src: LaggedNode, dst: LaggedNode) -> bool:
    """Directed lag-0 reachability; orienting dst -> src would close a cycle."""
    stack, seen = [src], {src}
    while stack:
        node = stack.pop()
        if node == dst:
            return True
        for nxt in g.neighbors(node):
            if nxt.lag == 0 and nxt not in seen and g.points_to(node, nxt):
                seen.add(nxt)
                stack.append(nxt)
    return False


def _meek_fires(g: TemporalGraph, a: LaggedNode, b: LaggedNode) -> bool:
    """Should the undirected edge a-b be oriented a -> b?"""
    nbrs_a = g.neighbors(a)
    nbrs_b = g.neighbors(b)
    # R1: x -> a, a-b, x and b nonadjacent
    for x in nbrs_a:
        if g.points_to(x, a) and x != b and not g.has_edge(x, b):
            return True
    # R2: a -> z -> b with a-b
    for z in nbrs_a & nbrs_b:
        if g.points_to(a, z) and g.points_to(z, b):
            return True
    # R3: a-z, a-w undirected; z -> b, w -> b; z,w nonadjacent
    into_b = [z for z in nbrs_a & nbrs_b if g.points_to(z, b) and g.is_undirected(a, z)]
    for iz in range(len(into_b)):
        for iw in range(iz + 1, len(into_b)):
            if not g.has_edge(into_b[iz], into_b[iw]):
                return True
    # R4: a adjacent c, c -> d, d -> b, c and b nonadjacent
    for c in nbrs_a:
        if c == b or g.has_edge(c, b):
            continue
        for d in g.neighbors(c):
            if d != a and d != b and g.points_to(c, d) and g.points_to(d, b):
                return True
    return False


# ---- IC*-style marked orientation (latent mode) ----------------------------


def ic_star_marks(
    skeleton: TemporalGraph,
    sepsets: SepsetRecords,
    rule: str = "default",
) -> tuple[TemporalGraph, list[ConflictRecord]]:
    """Orient the skeleton without assuming causal sufficiency.

    Output uses all four marks: genuine-directed asserts a genuine causal
    influence; directed means genuine-or-confounded; bidirected indicates a
    latent common cause; undirected is fully unresolved. Collider decisions
    reuse the configured sepset rule; arrowheads meeting head-to-head
    become bidirected edges rather than conflicts. The marking phase then
    iterates the two standard rules: an arrow into k plus an arrowhead-free
    k-b edge (with the far endpoints nonadjacent) yields a genuine k -> b,
    and an all-genuine directed path from a to b adds an (unmarked) arrow
    on an existing a-b edge. Lagged edges always stay plain directed.
    """
    if rule not in COLLIDER_RULES:
        raise GraphStructureError(f"unknown collider rule {rule!r}")

    # endpoint-mark bookkeeping for lag-0 edges: (head_at_u, head_at_v, genuine)
    lag0_edges: dict[tuple[LaggedNode, LaggedNode], list] = {}
    lagged_edges: list[tuple[LaggedNode, LaggedNode]] = []
    for u, v, m in skeleton.edges():
        if u.lag > 0 or v.lag > 0:
            lagged_edges.append((u, v))
        else:
            lag0_edges[_canon(u, v)] = [False, False, False]

    def head_at(edge: tuple[LaggedNode, LaggedNode], node: LaggedNode) -> bool:
        state = lag0_edges[edge]
        return state[0] if node == edge[0] else state[1]

    def set_head(edge: tuple[LaggedNode, LaggedNode], node: LaggedNode) -> bool:
        state = lag0_edges[edge]
        slot = 0 if node == edge[0] else 1
        if state[slot]:
            return False
        state[slot] = True
        return True

    def arrow_into(a: LaggedNode, k: LaggedNode) -> bool:
        """Arrowhead at k on the a-k edge (lagged edges always have one)."""
        if a.lag > 0:
            return True
        if k.lag > 0:
            return False
        return head_at(_canon(a, k), k)

    # collider phase
    for a, k, b in unshielded_triples(skeleton):
        record = sepsets.get(a, b)
        if record is None:
            raise GraphStructureError(
                f"no separating-set record for nonadjacent pair ({a}, {b})"
            )
        if not _collider_fires(record, k, rule):
            continue
        for tail in (a, b):
            if tail.lag == 0:
                set_head(_canon(tail, k), k)

    # marking phase: two rules to fixpoint
    genuine_children: dict[LaggedNode, set[LaggedNode]] = {}

    def genuine_reachable(src: LaggedNode, dst: LaggedNode) -> bool:
        stack, seen = [src], {src}
        while stack:
            n = stack.pop()
            for c in genuine_children.get(n, ()):
                if c == dst:
                    return True
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    ordered_edges = sorted(lag0_edges, key=lambda e: (e[0].variable, e[1].variable))
    changed = True
    while changed:
        changed = False
        # rule 1: a *-> k plus k-b with no arrowhead at k and a,b nonadjacent
        #         => arrowhead at b, marked genuine (k *-> b)
        for edge in ordered_edges:
            for k, b in (edge, edge[::-1]):
                if head_at(edge, k):
                    continue
                state = lag0_edges[edge]
                if state[2] and head_at(edge, b):
                    continue  # already genuine toward b
                if any(
                    a != b and not skeleton.has_edge(a, b) and arrow_into(a, k)
                    for a in skeleton.neighbors(k)
                ):
                    set_head(edge, b)
                    state[2] = True
                    genuine_children.setdefault(k, set()).add(b)
                    changed = True
        # rule 2: adjacent a, b with an all-genuine directed path a ~> b
        #         => arrowhead at b (unmarked)
        for edge in ordered_edges:
            for a, b in (edge, edge[::-1]):
                if head_at(edge, b):
                    continue
                if genuine_reachable(a, b) and set_head(edge, b):
                    changed = True

    out = TemporalGraph(
        skeleton.n_variables, skeleton.max_lag, skeleton.var_names, skeleton.stationary
    )
    for u, v in lagged_edges:
        out.add_edge(u, v, EdgeMark.DIRECTED)
    for (u, v), (head_u, head_v, genuine) in lag0_edges.items():
        if head_u and head_v:
            out.add_edge(u, v, EdgeMark.BIDIRECTED)
        elif head_u or head_v:
            tail, head = (v, u) if head_u else (u, v)
            out.add_edge(tail, head, EdgeMark.GENUINE if genuine else EdgeMark.DIRECTED)
        else:
            out.add_edge(u, v, EdgeMark.UNDIRECTED)
    return out, []
