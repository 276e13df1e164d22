"""Country-level trade graph: Louvain blocs, bridge centrality, transshipment index."""
from __future__ import annotations

import csv
import math
import os
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .ingest import Flow

DEFAULT_PSEUDO_PARTNERS = ("World",)
_MOVE_EPS = 1e-12

Node = Hashable
# Undirected weighted adjacency. adj[u][v] == adj[v][u]; a self-loop adj[u][u]
# holds the weight of edges collapsed into u, counted once.
Adjacency = dict[Node, dict[Node, float]]


@dataclass
class TradeGraph:
    nodes: list[str]
    count: dict[tuple[str, str], int]
    value: dict[tuple[str, str], float]
    import_value: dict[str, float] = field(default_factory=dict)
    export_value: dict[str, float] = field(default_factory=dict)

    def undirected(self, weight: str = "count") -> Adjacency:
        """Symmetrized view: w(u, v) = d(u->v) + d(v->u)."""
        src = self.count if weight == "count" else self.value
        adj: Adjacency = {n: {} for n in self.nodes}
        for (u, v), w in sorted(src.items()):
            adj[u][v] = adj[u].get(v, 0) + w
            adj[v][u] = adj[v].get(u, 0) + w
        return adj


@dataclass(frozen=True)
class FlaggedTrade:
    reporter: str
    partner: str
    flow: Flow
    primary_value_usd: float


def build_graph(
    trades: Iterable[FlaggedTrade], pseudo_partners: Sequence[str] = DEFAULT_PSEUDO_PARTNERS
) -> TradeGraph:
    """Aggregate flagged trades into reporter -> partner edges.

    Self-pairs and aggregate pseudo-partners are left out of the algorithmic
    graph; route reports work from the trades themselves.
    """
    pseudo = set(pseudo_partners)
    count: dict[tuple[str, str], int] = defaultdict(int)
    value: dict[tuple[str, str], list[float]] = defaultdict(list)
    imports: dict[str, list[float]] = defaultdict(list)
    exports: dict[str, list[float]] = defaultdict(list)
    for t in trades:
        if t.reporter == t.partner or t.partner in pseudo or t.reporter in pseudo:
            continue
        count[(t.reporter, t.partner)] += 1
        value[(t.reporter, t.partner)].append(t.primary_value_usd)
        if t.flow is Flow.IMPORT:
            importer, exporter = t.reporter, t.partner
        else:
            importer, exporter = t.partner, t.reporter
        imports[importer].append(t.primary_value_usd)
        exports[exporter].append(t.primary_value_usd)
    nodes = sorted({n for edge in count for n in edge})
    return TradeGraph(
        nodes=nodes,
        count=dict(sorted(count.items())),
        value={k: math.fsum(v) for k, v in sorted(value.items())},
        import_value={n: math.fsum(imports.get(n, ())) for n in nodes},
        export_value={n: math.fsum(exports.get(n, ())) for n in nodes},
    )


def _degrees(adj: Adjacency) -> dict[Node, float]:
    return {u: sum(w for v, w in nbrs.items() if v != u) + 2 * nbrs.get(u, 0) for u, nbrs in adj.items()}


def modularity(adj: Adjacency, partition: Mapping[Node, int]) -> float:
    """Newman modularity with weighted degrees; 0 for a graph without edges."""
    k = _degrees(adj)
    two_m = sum(k.values())
    if two_m == 0:
        return 0.0
    internal: dict[int, float] = defaultdict(float)
    total: dict[int, float] = defaultdict(float)
    for u, nbrs in adj.items():
        cu = partition[u]
        total[cu] += k[u]
        for v, w in nbrs.items():
            if partition[v] == cu:
                # Ordered-pair sum; a self-loop appears once but counts twice.
                internal[cu] += 2 * w if v == u else w
    return sum(internal[c] / two_m - (total[c] / two_m) ** 2 for c in total)


@dataclass
class CommunityPartition:
    membership: dict[Node, int]
    modularity: float
    history: list[float] = field(default_factory=list)

    @property
    def communities(self) -> list[list[Node]]:
        groups: dict[int, list[Node]] = defaultdict(list)
        for n, c in self.membership.items():
            groups[c].append(n)
        return [sorted(groups[c], key=str) for c in sorted(groups)]


def _local_moves(adj: Adjacency, order: list[Node]) -> tuple[dict[Node, Node], bool]:
    k = _degrees(adj)
    two_m = sum(k.values())
    comm = {u: u for u in adj}
    if two_m == 0:
        return comm, False
    tot = dict(k)
    moved_any = False
    improved = True
    while improved:
        improved = False
        for u in order:
            cu = comm[u]
            links: dict[Node, float] = defaultdict(float)
            for v, w in adj[u].items():
                if v != u:
                    links[comm[v]] += w
            tot[cu] -= k[u]

            def gain(c: Node) -> float:
                return links.get(c, 0.0) - tot[c] * k[u] / two_m

            best, best_gain = cu, gain(cu)
            for c in sorted(links, key=_order_key):
                g = gain(c)
                if g > best_gain + _MOVE_EPS:
                    best, best_gain = c, g
            tot[best] += k[u]
            if best != cu:
                comm[u] = best
                improved = True
                moved_any = True
    return comm, moved_any


def _order_key(x):
    return (type(x).__name__, x)


def _aggregate(adj: Adjacency, comm: Mapping[Node, Node]) -> tuple[Adjacency, dict[Node, int]]:
    labels = {c: i for i, c in enumerate(sorted(set(comm.values()), key=_order_key))}
    new: Adjacency = {i: {} for i in labels.values()}
    for u, nbrs in adj.items():
        cu = labels[comm[u]]
        for v, w in nbrs.items():
            cv = labels[comm[v]]
            if u == v:
                new[cu][cu] = new[cu].get(cu, 0) + w
            elif cu == cv:
                # Each internal edge is visited from both ends.
                new[cu][cu] = new[cu].get(cu, 0) + w / 2
            else:
                new[cu][cv] = new[cu].get(cv, 0) + w
    return new, {u: labels[comm[u]] for u in adj}


def louvain_partition(
    adj: Adjacency, seed: int | None = None, max_passes: int = 100
) -> CommunityPartition:
    """Two-phase Louvain on an undirected weighted graph.

    Nodes are swept in sorted order; passing ``seed`` shuffles the sweep
    order reproducibly instead. ``history`` holds modularity of the original
    graph after each pass, starting from the singleton partition.
    """
    nodes = sorted(adj, key=_order_key)
    membership = {u: i for i, u in enumerate(nodes)}
    history = [modularity(adj, membership)]
    if not nodes:
        return CommunityPartition({}, 0.0, history)
    rng = random.Random(seed) if seed is not None else None

    level = adj
    # level node -> set of original nodes
    members: dict[Node, list[Node]] = {u: [u] for u in nodes}
    for _ in range(max_passes):
        order = sorted(level, key=_order_key)
        if rng is not None:
            rng.shuffle(order)
        comm, moved = _local_moves(level, order)
        if not moved:
            break
        level, relabel = _aggregate(level, comm)
        new_members: dict[Node, list[Node]] = defaultdict(list)
        for u, c in relabel.items():
            new_members[c].extend(members[u])
        members = dict(new_members)
        membership = {orig: c for c, group in members.items() for orig in group}
        history.append(modularity(adj, membership))

    # Canonical ids: communities numbered by their smallest member.
    firsts = sorted(members.items(), key=lambda kv: min(map(_order_key, kv[1])))
    canon = {c: i for i, (c, _) in enumerate(firsts)}
    membership = {orig: canon[c] for c, group in members.items() for orig in group}
    return CommunityPartition(membership, modularity(adj, membership), history)


def betweenness(adj: Adjacency) -> dict[Node, float]:
    """Brandes betweenness over unweighted shortest paths, normalized to [0, 1]."""
    nodes = sorted(adj, key=_order_key)
    n = len(nodes)
    cb = {v: 0.0 for v in nodes}
    if n < 3:
        return cb
    nbrs = {u: sorted((v for v in adj[u] if v != u), key=_order_key) for u in nodes}
    for s in nodes:
        stack = []
        preds: dict[Node, list[Node]] = {v: [] for v in nodes}
        sigma = dict.fromkeys(nodes, 0)
        sigma[s] = 1
        dist = dict.fromkeys(nodes, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(nodes, 0.0)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1 + delta[w])
            if w != s:
                cb[w] += delta[w]
    # Each unordered pair was counted from both endpoints.
    # One division, not a reciprocal multiply: integer tallies stay correctly rounded.
    denom = float((n - 1) * (n - 2))
    return {v: c / denom for v, c in cb.items()}


@dataclass(frozen=True)
class CentralityRow:
    node: str
    betweenness: float
    flow_ratio: float
    import_value: float
    export_value: float
    avg_risk: float
    transshipment_index: float


def _minmax(values: Mapping[Node, float]) -> dict[Node, float]:
    if not values:
        return {}
    lo, hi = min(values.values()), max(values.values())
    if hi == lo:
        return {k: 0.0 for k in values}
    return {k: (v - lo) / (hi - lo) for k, v in values.items()}


def flow_ratio(import_value: float, export_value: float) -> float:
    if export_value <= 0:
        return 2.0
    return min(2.0, max(0.0, import_value / export_value))


def balance(ratio: float) -> float:
    return max(0.0, 1.0 - abs(ratio - 1.0))


def index_from_components(norm_betweenness: float, ratio: float, norm_avg_risk: float) -> float:
    return 0.4 * norm_betweenness + 0.3 * balance(ratio) + 0.3 * norm_avg_risk


def transshipment_index(
    graph: TradeGraph, centrality: Mapping[str, float], avg_risk: Mapping[str, float]
) -> list[CentralityRow]:
    """Per-node report, ordered by index descending then node name."""
    nb = _minmax({n: centrality.get(n, 0.0) for n in graph.nodes})
    nr = _minmax({n: avg_risk.get(n, 0.0) for n in graph.nodes})
    rows = []
    for n in graph.nodes:
        imp = graph.import_value.get(n, 0.0)
        exp = graph.export_value.get(n, 0.0)
        ratio = flow_ratio(imp, exp)
        rows.append(
            CentralityRow(
                node=n,
                betweenness=centrality.get(n, 0.0),
                flow_ratio=ratio,
                import_value=imp,
                export_value=exp,
                avg_risk=avg_risk.get(n, 0.0),
                transshipment_index=index_from_components(nb[n], ratio, nr[n]),
            )
        )
    rows.sort(key=lambda r: (-r.transshipment_index, r.node))
    return rows


def write_communities(partition: CommunityPartition, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# modularity={partition.modularity!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "community"])
        for node in sorted(partition.membership, key=_order_key):
            writer.writerow([node, partition.membership[node]])


def write_centrality(rows: Iterable[CentralityRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["node", "betweenness", "flow_ratio", "import_value", "export_value", "avg_risk", "transshipment_index"]
        )
        for r in rows:
            writer.writerow([
                r.node,
                repr(r.betweenness),
                repr(r.flow_ratio),
                repr(r.import_value),
                repr(r.export_value),
                repr(r.avg_risk),
                repr(r.transshipment_index),
            ])
