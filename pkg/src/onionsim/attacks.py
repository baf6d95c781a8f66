"""Adversarial scenarios: deletion campaigns, SOAP sybil containment, and the
proof-of-work / rate-limit admission defenses against it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import NodeNotFound, ParameterError, PolicyError
from .metrics import MetricsSnapshot, snapshot
from .overlay import NodeId, OverlayGraph, admit, delete_node

GRADUAL = "gradual"
SIMULTANEOUS = "simultaneous"
SWEEP_STEP = Fraction(1, 20)


@dataclass(frozen=True)
class Campaign:
    mode: str = GRADUAL
    fraction: float = 0.9
    seed: int = 0
    record_every: int | None = None  # deletions between snapshots; None = 1% of n
    selection: str = "uniform-random"
    repair: bool = True
    prune: bool = True

    def __post_init__(self):
        if self.mode not in (GRADUAL, SIMULTANEOUS):
            raise ParameterError(f"unknown campaign mode {self.mode!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ParameterError("campaign fraction must be within [0, 1]")
        if self.selection != "uniform-random":
            raise ParameterError(f"unsupported selection {self.selection!r}")
        if self.record_every is not None and self.record_every < 1:
            raise ParameterError("record_every must be positive")


@dataclass
class CampaignResult:
    snapshots: list[MetricsSnapshot]
    initial_nodes: int


def takedown_order(graph: OverlayGraph, seed: int) -> list[NodeId]:
    order = graph.ids()
    random.Random(f"campaign:{seed}").shuffle(order)
    return order


def sweep_grid(fraction: float) -> list[Fraction]:
    """0, 0.05, 0.10, ... up to ``fraction`` inclusive."""
    limit = Fraction(fraction).limit_denominator(10**6)
    grid = []
    i = 0
    while i * SWEEP_STEP <= limit:
        grid.append(i * SWEEP_STEP)
        i += 1
    return grid


def run_deletion_campaign(graph: OverlayGraph, campaign: Campaign, observer=None) -> CampaignResult:
    """Delete nodes from ``graph`` in place and record metrics along the way.

    Gradual mode runs one full maintenance round after each deletion (unless
    ``repair`` is off); simultaneous mode walks the sweep grid, removing nodes
    with no repair and taking a snapshot at every grid fraction.  Both modes
    follow the same seeded takedown order, so fraction f always means the
    first floor(f*n) nodes of it.  ``observer(graph, snapshot)`` is called
    after every recorded snapshot.
    """
    n0 = len(graph)
    order = takedown_order(graph, campaign.seed)
    snaps = []

    def record(step):
        snap = snapshot(graph, step)
        snaps.append(snap)
        if observer is not None:
            observer(graph, snap)

    if campaign.mode == SIMULTANEOUS:
        removed = 0
        for f in sweep_grid(campaign.fraction):
            target = int(f * n0)
            while removed < target:
                delete_node(graph, order[removed], repair=False)
                removed += 1
            record(removed)
        return CampaignResult(snaps, n0)

    total = int(Fraction(campaign.fraction).limit_denominator(10**6) * n0)
    every = campaign.record_every or max(1, n0 // 100)
    record(0)
    for i in range(total):
        delete_node(graph, order[i], repair=campaign.repair, prune_degrees=campaign.prune)
        if (i + 1) % every == 0 or i + 1 == total:
            record(i + 1)
    return CampaignResult(snaps, n0)


def partition_onset(snapshots, initial_nodes: int) -> float | None:
    """Smallest recorded deletion fraction at which the survivors split."""
    for snap in snapshots:
        if snap.components >= 2:
            return snap.step / initial_nodes
    return None


# -- SOAP ---------------------------------------------------------------------

@dataclass(frozen=True)
class PowPolicy:
    base_work: float
    growth: float

    def __post_init__(self):
        if self.base_work <= 0:
            raise ParameterError("base_work must be positive")
        if self.growth < 1:
            raise ParameterError("growth must be at least 1")


@dataclass(frozen=True)
class RateLimitPolicy:
    base_delay: int
    per_peer_delay: int

    def __post_init__(self):
        if self.base_delay < 0 or self.per_peer_delay < 0:
            raise ParameterError("delays must be non-negative")


@dataclass(frozen=True)
class DefensePolicy:
    pow: PowPolicy | None = None
    rate_limit: RateLimitPolicy | None = None


NO_DEFENSE = DefensePolicy()


def pow_cost(current_degree: int, policy: DefensePolicy) -> float:
    """Work a newcomer must do to peer with a node that has ``current_degree`` peers."""
    if policy.pow is None:
        raise PolicyError("proof of work is off in this policy")
    return policy.pow.base_work * policy.pow.growth ** current_degree


def rate_limit_delay(current_degree: int, policy: DefensePolicy) -> int:
    if policy.rate_limit is None:
        raise PolicyError("rate limiting is off in this policy")
    return policy.rate_limit.base_delay + policy.rate_limit.per_peer_delay * current_degree


@dataclass(frozen=True)
class SoapAttacker:
    compromised: NodeId
    clone_budget: int
    declared_degree_range: tuple[int, int] | None = None  # None = [1, d_min]
    seed: int = 0
    total_budget: int | None = None  # clones across a whole soap_network run

    def __post_init__(self):
        if self.declared_degree_range is not None:
            lo, hi = self.declared_degree_range
            if not 1 <= lo <= hi:
                raise ParameterError("declared degree range must satisfy 1 <= lo <= hi")


@dataclass
class ContainmentResult:
    contained: bool
    steps: int = 0
    forgotten_benign: list = field(default_factory=list)
    final_neighbors: set = field(default_factory=set)
    work: float = 0.0
    requests: int = 0
    accepted: int = 0


class SoapSession:
    """Attacker-side state that persists across targets: RNG, clone counter, and
    every benign address the attacker's nodes have been told about."""

    def __init__(self, attacker: SoapAttacker):
        self.attacker = attacker
        self.rng = random.Random(f"soap:{attacker.seed}")
        self.clones_made = 0
        self.known: dict[NodeId, None] = {}  # insertion-ordered set
        self.keep = {attacker.compromised}  # never discarded, even when dropped

    def budget_left(self) -> bool:
        total = self.attacker.total_budget
        return total is None or self.clones_made < total

    def new_clone(self, graph: OverlayGraph) -> NodeId:
        while True:
            cid = NodeId.random(self.rng)
            if cid not in graph.nodes:
                break
        graph.add_node(cid)
        graph.clones.add(cid)
        self.clones_made += 1
        return cid

    def learn(self, graph: OverlayGraph, addresses) -> None:
        for a in sorted(addresses):
            if a not in graph.clones and a not in self.known:
                self.known[a] = None


def is_contained(graph: OverlayGraph, node_id) -> bool:
    """Every peer is a clone (vacuously true for an isolated node)."""
    return all(p in graph.clones for p in graph.nodes[node_id].peers)


def _check_bounds(graph, attacker):
    if attacker.clone_budget < graph.bounds.d_max:
        raise ParameterError("clone_budget must be at least d_max to fill a peer list")


def soap_target(graph: OverlayGraph, attacker: SoapAttacker, target, defense: DefensePolicy = NO_DEFENSE,
                session: SoapSession | None = None) -> ContainmentResult:
    """Surround one benign node with clones until every peer it has is a clone.

    Each round a fresh clone asks to peer, advertising a small random degree.
    The target accepts when it has room, or when the advertised degree is
    below the highest degree among its current peers; a full target then
    forgets that highest-degree peer first.  Defenses only add cost: rate
    limiting adds waiting steps and PoW adds work per request.
    """
    _check_bounds(graph, attacker)
    if target not in graph.nodes:
        raise NodeNotFound(f"no alive node {target!r}")
    if target in graph.clones:
        raise ParameterError("target must be a benign node")
    session = session or SoapSession(attacker)
    lo, hi = attacker.declared_degree_range or (1, graph.bounds.d_min)
    node = graph.nodes[target]
    result = ContainmentResult(contained=False)
    used = 0

    while not is_contained(graph, target):
        if used >= attacker.clone_budget or not session.budget_left():
            break
        clone = session.new_clone(graph)
        used += 1
        declared = session.rng.randint(lo, hi)
        degree = len(node.peers)
        result.requests += 1
        result.steps += 1
        if defense.rate_limit is not None:
            result.steps += rate_limit_delay(degree, defense)
        if defense.pow is not None:
            result.work += pow_cost(degree, defense)
        # peering handshake: the requester is shown the current peer list
        session.learn(graph, node.peers)

        graph.declared[clone] = declared
        accepted, victim = admit(graph, target, clone, declared)
        if not accepted:
            graph.remove_node(clone)
            continue
        result.accepted += 1
        if victim is None:
            continue
        if victim in graph.clones:
            # a dropped clone is useless to the attacker; it goes away
            if not graph.nodes[victim].peers and victim not in session.keep:
                graph.remove_node(victim)
        else:
            result.forgotten_benign.append(victim)

    result.contained = is_contained(graph, target)
    result.final_neighbors = set(node.peers)
    return result


def _merge(old: ContainmentResult | None, new: ContainmentResult) -> ContainmentResult:
    if old is None:
        return new
    return ContainmentResult(
        contained=new.contained,
        steps=old.steps + new.steps,
        forgotten_benign=old.forgotten_benign + new.forgotten_benign,
        final_neighbors=new.final_neighbors,
        work=old.work + new.work,
        requests=old.requests + new.requests,
        accepted=old.accepted + new.accepted,
    )


def soap_network(graph: OverlayGraph, attacker: SoapAttacker,
                 defense: DefensePolicy = NO_DEFENSE) -> dict:
    """Walk the overlay from the compromised node, soaping every benign node found.

    The attacker only knows what its own nodes were told: the compromised
    node's NoN table at the start, then the peer lists shown to clones during
    peering handshakes.  Passes repeat until every known benign node is
    contained or the budget runs out.
    """
    _check_bounds(graph, attacker)
    entry = attacker.compromised
    if entry not in graph.nodes or not graph.nodes[entry].peers:
        raise ParameterError("the compromised node must be alive and peered")
    graph.clones.add(entry)
    session = SoapSession(attacker)
    entry_node = graph.nodes[entry]
    session.learn(graph, entry_node.peers)
    session.learn(graph, graph.non_candidates(entry))

    results: dict[NodeId, ContainmentResult] = {}
    while True:
        progress = False
        pending = [u for u in session.known if u in graph.nodes and u not in graph.clones]
        for u in pending:
            if is_contained(graph, u):
                results.setdefault(u, ContainmentResult(True, final_neighbors=set(graph.nodes[u].peers)))
                continue
            if not session.budget_left():
                break
            res = soap_target(graph, attacker, u, defense, session=session)
            results[u] = _merge(results.get(u), res)
            progress = progress or res.accepted > 0
        # refresh verdicts: later soaping can change a node's neighbourhood
        for u in list(results):
            if u in graph.nodes:
                results[u].contained = is_contained(graph, u)
                results[u].final_neighbors = set(graph.nodes[u].peers)
        open_nodes = [u for u in session.known
                      if u in graph.nodes and u not in graph.clones and not is_contained(graph, u)]
        if not open_nodes or not progress or not session.budget_left():
            break
    return results


def benign_edges_among(graph: OverlayGraph, nodes) -> int:
    nodes = {u for u in nodes if u in graph.nodes}
    return sum(1 for u in nodes for v in graph.nodes[u].peers
               if v in nodes and v not in graph.clones and u < v)
