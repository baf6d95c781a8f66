"""SuperOnion: physical hosts that each run several virtual overlay nodes.

A host floods a maintenance probe from every virtual and expects its other
virtuals to hear it.  A virtual that neither hears a sibling nor is heard by
one is assumed soaped, abandoned, and replaced by a fresh virtual whose
address comes from the next key period and whose peers come from what the
healthy siblings know.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from .attacks import NO_DEFENSE, DefensePolicy, SoapAttacker, SoapSession, is_contained, soap_target
from .control import Message, MessageKind, propagate
from .errors import NodeNotFound, ParameterError, ReplacementImpossible
from .identity import SharedBotKey, derive_period_key
from .overlay import DegreeBounds, NodeId, OverlayGraph, admit, delete_node, random_simple_graph, replenish


@dataclass(frozen=True)
class SuperOnionConfig:
    n: int  # physical hosts
    m: int  # virtual nodes per host
    i: int  # peers per virtual node
    probe_period: int = 1
    probe_ttl: int = 64
    d_max: int | None = None  # defaults to 2 * i

    def __post_init__(self):
        errors = []
        if self.n < 2:
            errors.append("n must be at least 2")
        if self.m < 2:
            errors.append("m must be at least 2")
        if self.i < 1:
            errors.append("i must be at least 1")
        if (self.n * self.m * self.i) % 2:
            errors.append("n*m*i must be even")
        if self.i > (self.n - 1) * self.m:
            errors.append("i exceeds the number of virtuals on other hosts")
        if self.probe_period < 1 or self.probe_ttl < 1:
            errors.append("probe_period and probe_ttl must be positive")
        if self.d_max is not None and self.d_max < self.i:
            errors.append("d_max must be at least i")
        if errors:
            raise ParameterError("; ".join(errors))

    @property
    def bounds(self) -> DegreeBounds:
        return DegreeBounds(self.i, self.d_max or 2 * self.i)


@dataclass
class PhysicalHost:
    host_id: int
    virtuals: list
    suspected_soaped: set = field(default_factory=set)
    keys: list = field(default_factory=list)  # one SharedBotKey per virtual slot
    periods: list = field(default_factory=list)  # current key period per slot

    def slot(self, virtual) -> int:
        try:
            return self.virtuals.index(virtual)
        except ValueError:
            raise NodeNotFound(f"{virtual} is not a virtual of host {self.host_id}") from None


def _master_digest(seed: int) -> bytes:
    return hashlib.sha1(f"superonion-master:{seed}".encode()).digest()


def _fresh_id(graph: OverlayGraph, host: PhysicalHost, slot: int) -> NodeId:
    while True:
        host.periods[slot] += 1
        nid = NodeId(derive_period_key(host.keys[slot], host.periods[slot]).value)
        if nid not in graph.nodes:
            return nid


def build_superonion(config: SuperOnionConfig, seed: int) -> tuple[OverlayGraph, list[PhysicalHost]]:
    """Overlay of n*m virtuals, each with exactly i peers, none on its own host.

    The overlay is connected whenever i >= 2; with i = 1 it is a perfect
    matching across hosts, which can only be connected for two virtuals.
    """
    rng = random.Random(seed)
    graph = OverlayGraph(config.bounds, seed=seed, k=config.i, rng=rng)
    digest = _master_digest(seed)
    hosts = []
    for h in range(config.n):
        host = PhysicalHost(h, [], keys=[SharedBotKey.generate(rng, digest) for _ in range(config.m)],
                            periods=[0] * config.m)
        for slot in range(config.m):
            nid = _fresh_id(graph, host, slot)
            graph.add_node(nid)
            graph.groups[nid] = h
            host.virtuals.append(nid)
        hosts.append(host)
    labels = [v for host in hosts for v in host.virtuals]
    owner = [graph.groups[v] for v in labels]
    connected = config.i >= 2 or len(labels) == 2
    edges = random_simple_graph(len(labels), config.i, rng, groups=owner, connected=connected)
    for a, b in edges:
        graph.add_edge(labels[a], labels[b])
    graph.flush()
    return graph, hosts


def probe_round(graph: OverlayGraph, host: PhysicalHost, ttl: int) -> set:
    """Flood a probe from each virtual; suspect those cut off in both directions."""
    alive = [v for v in host.virtuals if v in graph.nodes]
    if len(alive) < 2:
        raise ParameterError("a host needs at least two virtuals to probe")
    heard_from = {v: set() for v in alive}
    reached = {}
    for v in alive:
        probe = Message(MessageKind.MAINTENANCE, b"probe", v)
        report = propagate(graph, probe, v, ttl, host_relay=True)
        reached[v] = {w for w in alive if w != v and w in report.reached}
        for w in reached[v]:
            heard_from[w].add(v)
    suspected = {v for v in alive if not heard_from[v] and not reached[v]}
    host.suspected_soaped = suspected
    return set(suspected)


def replace_virtual(graph: OverlayGraph, host: PhysicalHost, victim, seed: int) -> NodeId:
    """Abandon ``victim`` and bootstrap a new virtual in its slot.

    Candidates come from the NoN tables of the host's unsuspected virtuals,
    preferring nodes none of the host's virtuals already peers with.  When
    every sibling is suspected too the host cannot tell a soap from a
    partition, so it tries all of them; a sibling surrounded by clones only
    knows itself through its NoN table and contributes nothing.  Own
    virtuals, the victim's former peers and known clones are never chosen.
    """
    slot = host.slot(victim)
    siblings = [v for v in host.virtuals if v != victim and v in graph.nodes]
    healthy = [v for v in siblings if v not in host.suspected_soaped]
    i = graph.k
    former = set(graph.nodes[victim].peers) if victim in graph.nodes else set()
    taken = set()  # already peered with one of this host's virtuals
    for v in siblings:
        taken |= graph.nodes[v].peers

    def eligible(c):
        return (c in graph.nodes and c not in former and c not in graph.clones
                and graph.groups.get(c) != host.host_id)

    known = set()
    for s in healthy or siblings:
        for entry in graph.nodes[s].non_table.values():
            known |= entry
    # fresh neighbours keep the host's virtuals from sharing one neighbourhood
    candidates = sorted(c for c in known if eligible(c) and c not in taken)
    if not candidates and healthy:
        # a sibling that heard the probes has peers that relay, i.e. benign ones
        candidates = sorted(c for c in known | taken if eligible(c))
    if not candidates:
        raise ReplacementImpossible(f"host {host.host_id} knows no eligible peer to bootstrap from")

    # clones that were holding the victim have nothing left to do and leave
    for c in sorted(former):
        if c in graph.clones and graph.nodes[c].peers <= {victim}:
            graph.remove_node(c)
    if victim in graph.nodes:
        # leaving is an ordinary deletion, so benign former peers repair around it
        delete_node(graph, victim, repair=True)
    new_id = _fresh_id(graph, host, slot)
    graph.add_node(new_id)
    graph.groups[new_id] = host.host_id
    order = [c for c in candidates if c in graph.nodes]
    random.Random(f"replace:{seed}:{host.host_id}:{slot}").shuffle(order)
    node = graph.nodes[new_id]
    for c in order:
        if len(node.peers) >= i:
            break
        admit(graph, c, new_id, len(node.peers))
    if len(node.peers) < i:
        # short of peers: keep bootstrapping through what the new peers announce
        replenish(graph, new_id)
    host.virtuals[slot] = new_id
    host.suspected_soaped.discard(victim)
    return new_id


def has_benign_peer(graph: OverlayGraph, v) -> bool:
    return any(p not in graph.clones for p in graph.nodes[v].peers)


@dataclass
class RoundRecord:
    round: int
    soaped: int
    suspected: int
    replaced: int
    impossible: int
    min_unsoaped: int  # fewest virtuals with a benign peer on any host after the cycle
    replacement_degrees: list = field(default_factory=list)


def run_superonion(config: SuperOnionConfig, seed: int, rounds: int, clone_budget: int | None = None,
                   targets_per_round: int | None = None, defense: DefensePolicy = NO_DEFENSE):
    """Alternate attack and maintenance for ``rounds`` rounds.

    Each round the attacker soaps one virtual on each of ``targets_per_round``
    distinct hosts (default: every host).  Then, every ``probe_period``
    rounds, each host in host-id order probes and replaces what it suspects.
    Returns (graph, hosts, per-round records).
    """
    graph, hosts = build_superonion(config, seed)
    budget = clone_budget or 10 * config.bounds.d_max
    per_round = config.n if targets_per_round is None else targets_per_round
    if not 0 <= per_round <= config.n:
        raise ParameterError("targets_per_round must be within [0, n]")
    attacker = SoapAttacker(hosts[0].virtuals[0], budget, seed=seed)
    session = SoapSession(attacker)
    pick = random.Random(f"superonion-attack:{seed}")
    records = []
    for r in range(rounds):
        soaped = 0
        for host in sorted(pick.sample(hosts, per_round), key=lambda h: h.host_id):
            open_virtuals = [v for v in host.virtuals if not is_contained(graph, v)]
            if not open_virtuals:
                continue
            target = pick.choice(open_virtuals)
            if soap_target(graph, attacker, target, defense, session=session).contained:
                soaped += 1
        rec = RoundRecord(r, soaped, 0, 0, 0, 0)
        if (r + 1) % config.probe_period == 0:
            suspicions = [sorted(probe_round(graph, host, config.probe_ttl)) for host in hosts]
            for host, suspected in zip(hosts, suspicions):
                rec.suspected += len(suspected)
                for victim in suspected:
                    try:
                        new_id = replace_virtual(graph, host, victim, seed * 1_000_003 + r)
                    except ReplacementImpossible:
                        rec.impossible += 1
                        continue
                    rec.replaced += 1
                    rec.replacement_degrees.append(len(graph.nodes[new_id].peers))
        rec.min_unsoaped = min(sum(1 for v in h.virtuals if has_benign_peer(graph, v)) for h in hosts)
        records.append(rec)
    return graph, hosts, records
