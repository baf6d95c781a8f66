"""Self-repairing overlay graph (DDSR) with neighbours-of-neighbour bookkeeping.

Every node knows its own peer set plus, for each peer, that peer's peer set as
last announced (``non_table``).  Deleting a node lets its former neighbours
connect pairwise, pruning keeps degrees under ``d_max`` and replenishment pulls
new peers from the NoN table when a node falls under ``d_min``.
"""

from __future__ import annotations

import base64
import copy
import random
from dataclasses import dataclass, field
from typing import Hashable, Iterable, TextIO

from .errors import CollisionError, GenerationError, NodeNotFound, ParameterError

MAX_GENERATION_ATTEMPTS = 1000


class NodeId(int):
    """80-bit overlay identity, printed as a 16 character base-32 onion name."""

    __slots__ = ()
    BITS = 80

    def __new__(cls, value):
        value = int(value)
        if not 0 <= value < 1 << cls.BITS:
            raise ParameterError(f"node id out of range: {value}")
        return super().__new__(cls, value)

    def __str__(self):
        raw = self.to_bytes(10, "big")
        return base64.b32encode(raw).decode("ascii").lower()

    def __repr__(self):
        return f"NodeId({int(self)})"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        if len(text) != 16:
            raise ParameterError(f"not a 16 character base-32 id: {text!r}")
        try:
            raw = base64.b32decode(text.upper())
        except ValueError as exc:
            raise ParameterError(f"bad base-32 id {text!r}: {exc}") from None
        return cls(int.from_bytes(raw, "big"))

    @classmethod
    def random(cls, rng: random.Random) -> "NodeId":
        return cls(rng.getrandbits(cls.BITS))


@dataclass(frozen=True)
class DegreeBounds:
    d_min: int
    d_max: int

    def __post_init__(self):
        if not 1 <= self.d_min <= self.d_max:
            raise ParameterError(f"need 1 <= d_min <= d_max, got [{self.d_min}, {self.d_max}]")

    @classmethod
    def around(cls, k: int) -> "DegreeBounds":
        """Default bounds for a k-regular start: [ceil(k/2), k + k//2]."""
        return cls(max(1, (k + 1) // 2), max(1, k + k // 2))


@dataclass(eq=False)
class OverlayNode:
    id: NodeId
    peers: set = field(default_factory=set)
    non_table: dict = field(default_factory=dict)
    alive: bool = True

    @property
    def degree(self) -> int:
        return len(self.peers)


@dataclass
class RepairReport:
    deleted: NodeId
    edges_added: list = field(default_factory=list)
    edges_pruned: list = field(default_factory=list)
    edges_replenished: list = field(default_factory=list)


class OverlayGraph:
    """The mutable simulation world.

    Besides benign peers the graph can hold attacker clones (``clones``), whose
    advertised degree may differ from the truth (``declared``), and host groups
    (``groups``) whose members must never peer with each other.
    """

    def __init__(self, bounds: DegreeBounds, seed: int = 0, k: int = 0, rng=None):
        self.nodes: dict[NodeId, OverlayNode] = {}
        self.bounds = bounds
        self.seed = seed
        self.k = k
        self.rng = rng if rng is not None else random.Random(seed)
        self.step = 0
        self.clones: set[NodeId] = set()
        self.declared: dict[NodeId, int] = {}
        self.groups: dict[NodeId, Hashable] = {}
        self._dirty: set[NodeId] = set()

    @classmethod
    def from_edges(cls, edges: Iterable, bounds: DegreeBounds, seed: int = 0,
                   nodes: Iterable = (), k: int = 0) -> "OverlayGraph":
        g = cls(bounds, seed=seed, k=k)
        for u in nodes:
            g.add_node(NodeId(u))
        for u, v in edges:
            u, v = NodeId(u), NodeId(v)
            for x in (u, v):
                if x not in g.nodes:
                    g.add_node(x)
            if u == v or g.has_edge(u, v):
                raise ParameterError(f"edge list is not simple at ({u}, {v})")
            g.add_edge(u, v)
        g.flush()
        return g

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id) -> OverlayNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NodeNotFound(f"no alive node {node_id!r}") from None

    def ids(self) -> list[NodeId]:
        return sorted(self.nodes)

    def peers(self, node_id) -> set:
        return self.node(node_id).peers

    def degree(self, node_id) -> int:
        return len(self.node(node_id).peers)

    def has_edge(self, u, v) -> bool:
        node = self.nodes.get(u)
        return node is not None and v in node.peers

    def edges(self) -> list[tuple[NodeId, NodeId]]:
        return sorted((u, v) for u, node in self.nodes.items() for v in node.peers if u < v)

    def edge_count(self) -> int:
        return sum(len(n.peers) for n in self.nodes.values()) // 2

    def max_degree(self) -> int:
        return max((len(n.peers) for n in self.nodes.values()), default=0)

    def is_clone(self, node_id) -> bool:
        return node_id in self.clones

    def can_link(self, u, v) -> bool:
        """Whether maintenance (repair, replenish, bootstrap) may join u and v.

        Clones are single-purpose: they only ever peer through their own
        SOAP requests, never through the overlay's maintenance.
        """
        if u == v or u in self.clones or v in self.clones:
            return False
        gu = self.groups.get(u)
        return gu is None or gu != self.groups.get(v)

    def perceived_degree(self, observer, peer) -> int:
        """Degree of ``peer`` as ``observer`` believes it to be.

        Clones advertise their declared degree; honest peers' announcements
        are truthful, so their current degree is used directly.
        """
        declared = self.declared.get(peer)
        if declared is not None:
            return declared
        return len(self.nodes[peer].peers)

    # -- low level mutation; announcements are deferred until flush() --

    def add_node(self, node_id) -> OverlayNode:
        node_id = NodeId(node_id)
        if node_id in self.nodes:
            raise CollisionError(f"node {node_id} already present")
        node = OverlayNode(node_id)
        self.nodes[node_id] = node
        return node

    def add_edge(self, u, v) -> None:
        nu, nv = self.node(u), self.node(v)
        if u == v:
            raise ParameterError("self-loops are not allowed")
        nu.peers.add(v)
        nv.peers.add(u)
        self._dirty.add(u)
        self._dirty.add(v)

    def remove_edge(self, u, v) -> None:
        """Drop an edge; both ends forget each other's address and peer list."""
        nu, nv = self.node(u), self.node(v)
        nu.peers.discard(v)
        nv.peers.discard(u)
        nu.non_table.pop(v, None)
        nv.non_table.pop(u, None)
        self._dirty.add(u)
        self._dirty.add(v)

    def remove_node(self, node_id) -> OverlayNode:
        node = self.node(node_id)
        for p in list(node.peers):
            self.remove_edge(node_id, p)
        del self.nodes[node_id]
        node.alive = False
        self.clones.discard(node_id)
        self.declared.pop(node_id, None)
        self.groups.pop(node_id, None)
        self._dirty.discard(node_id)
        return node

    def announce(self, node_id) -> None:
        node = self.nodes[node_id]
        snapshot = frozenset(node.peers)
        for p in node.peers:
            self.nodes[p].non_table[node_id] = snapshot

    def flush(self) -> None:
        """Deliver pending peer-list announcements (ends a maintenance round)."""
        dirty, self._dirty = self._dirty, set()
        for node_id in sorted(dirty):
            if node_id in self.nodes:
                self.announce(node_id)

    def non_candidates(self, node_id) -> set:
        """Every address ``node_id`` knows through its NoN table."""
        node = self.node(node_id)
        known = set()
        for p in node.peers:
            known.update(node.non_table.get(p, ()))
        known.difference_update(node.peers)
        known.discard(node_id)
        return known

    def copy(self) -> "OverlayGraph":
        return copy.deepcopy(self)

    def audit(self) -> list[str]:
        """Return every structural invariant violation (empty when healthy)."""
        problems = []
        for u, node in self.nodes.items():
            if node.id != u:
                problems.append(f"{u}: stored under wrong key")
            if u in node.peers:
                problems.append(f"{u}: self-loop")
            for v in node.peers:
                other = self.nodes.get(v)
                if other is None:
                    problems.append(f"{u}: peer {v} is not alive")
                elif u not in other.peers:
                    problems.append(f"asymmetric edge {u}->{v}")
                if u in self.groups and self.groups.get(u) == self.groups.get(v):
                    problems.append(f"forbidden same-group edge {u}-{v}")
            extra = set(node.non_table) - node.peers
            if extra:
                problems.append(f"{u}: NoN keys outside peer set {sorted(extra)}")
            for v in node.peers:
                if v in self.nodes and node.non_table.get(v) != self.nodes[v].peers:
                    problems.append(f"{u}: stale NoN entry for {v}")
        return problems


def _pair_stubs(labels: list, degree: int, rng: random.Random, groups=None):
    """One attempt at a simple graph where every label has ``degree`` stubs.

    Inadmissible pairs (loops, repeats, same group) go back into the pool and
    are re-shuffled; returns None once the pool cannot be paired any more.
    """
    edges = set()
    stubs = [x for x in labels for _ in range(degree)]

    def ok(a, b):
        if a == b or (a, b) in edges:
            return False
        return groups is None or groups[a] != groups[b]

    for _ in range(10 * len(labels) + 100):
        if not stubs:
            return edges
        rng.shuffle(stubs)
        leftover = []
        it = iter(stubs)
        for a, b in zip(it, it):
            if a > b:
                a, b = b, a
            if ok(a, b):
                edges.add((a, b))
            else:
                leftover += [a, b]
        if leftover:
            pool = sorted(set(leftover))
            if not any(ok(a, b) for i, a in enumerate(pool) for b in pool[i + 1:]):
                return None
        stubs = leftover
    return None


def _connected(labels: list, edges) -> bool:
    if not labels:
        return True
    adj = {x: [] for x in labels}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {labels[0]}
    stack = [labels[0]]
    while stack:
        for y in adj[stack.pop()]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(labels)


def random_simple_graph(count: int, degree: int, rng: random.Random, groups=None,
                        connected: bool = True):
    """Edges over ``range(count)``, every vertex with ``degree`` neighbours."""
    labels = list(range(count))
    for _ in range(MAX_GENERATION_ATTEMPTS):
        edges = _pair_stubs(labels, degree, rng, groups)
        if edges is None:
            continue
        if connected and not _connected(labels, edges):
            continue
        return sorted(edges)
    raise GenerationError(
        f"no {'connected ' if connected else ''}simple {degree}-regular graph on {count} "
        f"vertices after {MAX_GENERATION_ATTEMPTS} attempts")


def unique_ids(count: int, rng: random.Random) -> list[NodeId]:
    ids = set()
    while len(ids) < count:
        ids.add(NodeId.random(rng))
    return sorted(ids)


def build_k_regular(n: int, k: int, seed: int, bounds: DegreeBounds | None = None) -> OverlayGraph:
    """Connected simple k-regular overlay with random onion-style identities."""
    if not (n > k >= 1) or (n * k) % 2:
        raise ParameterError(f"no simple {k}-regular graph on {n} nodes")
    rng = random.Random(seed)
    ids = unique_ids(n, rng)
    edges = random_simple_graph(n, k, rng)
    g = OverlayGraph(bounds or DegreeBounds.around(k), seed=seed, k=k, rng=rng)
    for x in ids:
        g.add_node(x)
    for a, b in edges:
        g.add_edge(ids[a], ids[b])
    g.flush()
    return g


def prune(graph: OverlayGraph, node_id) -> list[NodeId]:
    """Drop highest-degree peers until ``node_id`` is back under ``d_max``."""
    node = graph.node(node_id)
    removed = []
    while len(node.peers) > graph.bounds.d_max:
        ranked = sorted(node.peers)
        degrees = [graph.perceived_degree(node_id, p) for p in ranked]
        top = max(degrees)
        tied = [p for p, d in zip(ranked, degrees) if d == top]
        victim = tied[0] if len(tied) == 1 else graph.rng.choice(tied)
        graph.remove_edge(node_id, victim)
        removed.append(victim)
    graph.flush()
    return removed


def replenish(graph: OverlayGraph, node_id) -> list[NodeId]:
    """Top a node up towards ``d_min`` using only NoN knowledge.

    Stops early when the NoN table offers nobody eligible; there is no global
    lookup.
    """
    graph.flush()
    node = graph.node(node_id)
    added = []
    while len(node.peers) < graph.bounds.d_min:
        candidates = sorted(
            c for c in graph.non_candidates(node_id)
            if c in graph.nodes
            and len(graph.nodes[c].peers) < graph.bounds.d_max
            and graph.can_link(node_id, c))
        if not candidates:
            break
        pick = candidates[0] if len(candidates) == 1 else graph.rng.choice(candidates)
        graph.add_edge(node_id, pick)
        graph.flush()
        added.append(pick)
    return added


def admit(graph: OverlayGraph, target, requester, declared: int):
    """Peering request from ``requester`` (advertising ``declared`` peers) to ``target``.

    Accepted when the target has room, or when the advertised degree is below
    the highest degree the target sees among its peers; a full target then
    forgets that highest-degree peer (ties broken by the graph RNG).  Returns
    ``(accepted, forgotten)`` where ``forgotten`` is the dropped peer or None.
    A forgotten honest peer left under ``d_min`` replenishes right away.
    """
    node = graph.node(target)
    degree = len(node.peers)
    ranked = sorted(node.peers)
    degrees = [graph.perceived_degree(target, p) for p in ranked]
    top = max(degrees, default=0)
    if degree < graph.bounds.d_max:
        graph.add_edge(target, requester)
        graph.flush()
        return True, None
    if declared >= top:
        return False, None
    tied = [p for p, d in zip(ranked, degrees) if d == top]
    victim = tied[0] if len(tied) == 1 else graph.rng.choice(tied)
    graph.remove_edge(target, victim)
    graph.add_edge(target, requester)
    graph.flush()
    if victim not in graph.clones and len(graph.nodes[victim].peers) < graph.bounds.d_min:
        replenish(graph, victim)
    return True, victim


def delete_node(graph: OverlayGraph, target, repair: bool = True, prune_degrees: bool = True,
                replenish_degrees: bool = True) -> RepairReport:
    """Remove ``target``; with ``repair`` run one full maintenance round.

    The round is: former neighbours connect pairwise (using what each learned
    about the others through its NoN entry for ``target``), every node pushed
    over ``d_max`` prunes, then nodes left under ``d_min`` replenish.
    Without repair nothing reacts, which models a simultaneous takedown.
    """
    node = graph.node(target)
    neighbours = sorted(node.peers)
    report = RepairReport(deleted=NodeId(target))
    known = {u: graph.nodes[u].non_table.get(target, frozenset()) for u in neighbours}
    graph.remove_node(target)
    graph.step += 1
    if not repair:
        graph.flush()
        return report

    for i, a in enumerate(neighbours):
        for b in neighbours[i + 1:]:
            if b not in known[a] or a not in known[b]:
                continue
            if not graph.has_edge(a, b) and graph.can_link(a, b):
                graph.add_edge(a, b)
                report.edges_added.append((a, b))

    touched = set(neighbours)
    if prune_degrees:
        # only repaired neighbours can have grown, so scanning them covers
        # every node above d_max
        for u in neighbours:
            if u in graph.nodes and len(graph.nodes[u].peers) > graph.bounds.d_max:
                for v in prune(graph, u):
                    report.edges_pruned.append((u, v))
                    touched.add(v)
    graph.flush()

    if replenish_degrees:
        for u in sorted(touched):
            if u in graph.nodes and len(graph.nodes[u].peers) < graph.bounds.d_min:
                for v in replenish(graph, u):
                    report.edges_replenished.append((u, v))
    graph.flush()
    return report


def rotate_address(graph: OverlayGraph, node_id, new_id) -> None:
    """Relabel a node and announce the new address to its peers."""
    new_id = NodeId(new_id)
    node = graph.node(node_id)
    if new_id in graph.nodes:
        raise CollisionError(f"address {new_id} already in use")
    graph.flush()
    del graph.nodes[node_id]
    node.id = new_id
    graph.nodes[new_id] = node
    for attr in (graph.declared, graph.groups):
        if node_id in attr:
            attr[new_id] = attr.pop(node_id)
    if node_id in graph.clones:
        graph.clones.discard(node_id)
        graph.clones.add(new_id)
    for p in node.peers:
        peer = graph.nodes[p]
        peer.peers.discard(node_id)
        peer.peers.add(new_id)
        peer.non_table[new_id] = peer.non_table.pop(node_id)
        graph._dirty.add(p)
    graph._dirty.add(new_id)
    graph.flush()


def bootstrap_subset(peer_list: list, p: float, seed: int) -> list:
    """Keep each entry independently with probability ``p``, order preserved."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"inclusion probability must be in [0, 1], got {p}")
    rng = random.Random(seed)
    return [x for x in peer_list if rng.random() < p]


def write_edgelist(graph: OverlayGraph, out: TextIO) -> None:
    """Header ``n k seed step`` then one ``u v`` line per edge.

    Isolated nodes are written as a line holding just their id so the node
    set survives a round trip.
    """
    out.write(f"{len(graph)} {graph.k} {graph.seed} {graph.step}\n")
    for u, v in graph.edges():
        out.write(f"{u} {v}\n")
    for u in graph.ids():
        if not graph.nodes[u].peers:
            out.write(f"{u}\n")


def read_edgelist(src: TextIO, bounds: DegreeBounds | None = None) -> OverlayGraph:
    lines = [ln.split() for ln in src.read().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 4:
        raise ParameterError("edge list must start with 'n k seed step'")
    try:
        n, k, seed, step = (int(x) for x in lines[0])
    except ValueError:
        raise ParameterError("malformed edge list header") from None
    nodes, edges = [], []
    for parts in lines[1:]:
        ids = [NodeId.parse(x) for x in parts]
        if len(ids) == 1:
            nodes.append(ids[0])
        elif len(ids) == 2:
            edges.append((ids[0], ids[1]))
        else:
            raise ParameterError(f"bad edge list line: {' '.join(parts)}")
    g = OverlayGraph.from_edges(edges, bounds or DegreeBounds.around(max(k, 1)), seed=seed,
                                nodes=nodes, k=k)
    g.step = step
    if len(g) != n:
        raise ParameterError(f"header says {n} nodes, found {len(g)}")
    return g
