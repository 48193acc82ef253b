"""Network data model: topologies, output ports, queues, links and routed paths.

A topology is a set of directed links.  Every link is fed by exactly one
output port on its source node, and that port owns an ordered list of queues
plus a scheduling policy.  Flows are mapped onto queues by their ToS class
through the port's ``tos_map``.

Queues are addressed globally by an integer id: ports are laid out in order
and each port's queues occupy a contiguous id range (see
:attr:`Topology.queue_offsets`).
"""
from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import numpy as np

N_TOS = 10
QUEUE_SIZES = (16, 32, 64)
MIN_QUEUES, MAX_QUEUES = 2, 5
WEIGHT_TOL = 1e-9

# Link capacities drawn by the random generator (bits per time unit).
DEFAULT_CAPACITIES = (1000.0, 1500.0, 2000.0)

# Node/link counts of the reference topologies, used only to sanity-check
# ingested topology files.
KNOWN_TOPOLOGIES = {
    "NSFNET": (14, 21),
    "GEANT": (24, 37),
    "GBN": (17, 26),
}


class Policy(str, enum.Enum):
    FIFO = "FIFO"
    SP = "SP"
    WFQ = "WFQ"
    DRR = "DRR"

    @property
    def index(self) -> int:
        return POLICIES.index(self)


POLICIES = (Policy.FIFO, Policy.SP, Policy.WFQ, Policy.DRR)


class TopologyError(ValueError):
    pass


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class QueueConfig:
    size_packets: int
    priority: int
    weight: float


@dataclass(frozen=True)
class Port:
    node: int
    link: int
    policy: Policy
    queues: tuple[QueueConfig, ...]
    tos_map: tuple[int, ...]

    def priority_order(self) -> list[int]:
        """Local queue indices sorted by priority rank (0 = highest first)."""
        return sorted(range(len(self.queues)), key=lambda i: (self.queues[i].priority, i))


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    capacity: float


@dataclass(frozen=True)
class Topology:
    n_nodes: int
    links: tuple[Link, ...]
    ports: tuple[Port, ...]

    @cached_property
    def queue_offsets(self) -> tuple[int, ...]:
        offsets = [0]
        for port in self.ports:
            offsets.append(offsets[-1] + len(port.queues))
        return tuple(offsets)

    @property
    def n_queues(self) -> int:
        return self.queue_offsets[-1]

    @cached_property
    def port_of_link(self) -> dict[int, int]:
        return {port.link: i for i, port in enumerate(self.ports)}

    @cached_property
    def link_between(self) -> dict[tuple[int, int], int]:
        return {(link.src, link.dst): i for i, link in enumerate(self.links)}

    def queue_ref(self, gid: int) -> tuple[int, int]:
        """Map a global queue id to ``(port index, local queue index)``."""
        if not 0 <= gid < self.n_queues:
            raise IndexError(f"queue id {gid} out of range")
        port = int(np.searchsorted(self.queue_offsets, gid, side="right")) - 1
        return port, gid - self.queue_offsets[port]

    def neighbors(self, node: int) -> list[int]:
        return sorted(link.dst for link in self.links if link.src == node)


@dataclass(frozen=True)
class Path:
    src: int
    dst: int
    tos: int
    elements: tuple[tuple[int, int], ...]  # (global queue id, link id) per hop

    @property
    def links(self) -> tuple[int, ...]:
        return tuple(link for _, link in self.elements)

    @property
    def queues(self) -> tuple[int, ...]:
        return tuple(q for q, _ in self.elements)


@dataclass(frozen=True)
class Scenario:
    """A topology plus its routing (next hop per node/destination) and the ToS of every flow."""

    topology: Topology
    next_hop: tuple[tuple[int, ...], ...]
    tos: tuple[tuple[int, ...], ...]

    @cached_property
    def paths(self) -> list[Path]:
        return resolve_paths(self.topology, self.next_hop, self.tos)


@dataclass(frozen=True)
class Violation:
    locator: str
    message: str

    def __str__(self) -> str:
        return f"{self.locator}: {self.message}"


def validate(topology: Topology) -> list[Violation]:
    out: list[Violation] = []
    if topology.n_nodes <= 0:
        return [Violation("topology", "empty topology")]
    n = topology.n_nodes
    for li, link in enumerate(topology.links):
        loc = f"link {li}"
        if not (0 <= link.src < n and 0 <= link.dst < n):
            out.append(Violation(loc, f"endpoint outside 0..{n - 1}"))
        elif link.src == link.dst:
            out.append(Violation(loc, "self loop"))
        if not (link.capacity > 0 and np.isfinite(link.capacity)):
            out.append(Violation(loc, f"capacity {link.capacity} must be positive"))

    feeders: dict[int, list[int]] = {}
    for pi, port in enumerate(topology.ports):
        loc = f"node {port.node} port {pi}"
        feeders.setdefault(port.link, []).append(pi)
        if not 0 <= port.link < len(topology.links):
            out.append(Violation(loc, f"unknown link {port.link}"))
        elif topology.links[port.link].src != port.node:
            out.append(Violation(loc, f"link {port.link} does not leave node {port.node}"))
        out.extend(_port_violations(port, loc))

    for li in range(len(topology.links)):
        count = len(feeders.get(li, []))
        if count != 1:
            out.append(Violation(f"link {li}", f"fed by {count} ports, expected exactly 1"))
    return out


def _port_violations(port: Port, loc: str) -> list[Violation]:
    out = []
    k = len(port.queues)
    try:
        policy = Policy(port.policy)
    except ValueError:
        return [Violation(loc, f"unknown policy {port.policy!r}")]
    if policy is Policy.FIFO:
        if k != 1:
            out.append(Violation(loc, f"FIFO queue count {k}, expected 1"))
    elif not MIN_QUEUES <= k <= MAX_QUEUES:
        out.append(Violation(loc, f"{policy.value} queue count {k}, expected {MIN_QUEUES}-{MAX_QUEUES}"))
    for qi, q in enumerate(port.queues):
        if q.size_packets not in QUEUE_SIZES:
            out.append(Violation(f"{loc} queue {qi}", f"size {q.size_packets} not in {QUEUE_SIZES}"))
        if not 0.0 <= q.weight <= 1.0:
            out.append(Violation(f"{loc} queue {qi}", f"weight {q.weight} outside [0, 1]"))
    if sorted(q.priority for q in port.queues) != list(range(k)):
        out.append(Violation(loc, "priorities must be a permutation of 0..k-1"))
    if policy in (Policy.WFQ, Policy.DRR):
        total = sum(q.weight for q in port.queues)
        if abs(total - 1.0) > WEIGHT_TOL:
            out.append(Violation(loc, f"weight sum {total:g}, expected 1"))
        if any(q.weight <= 0 for q in port.queues):
            out.append(Violation(loc, "weights must be positive"))
    if len(port.tos_map) != N_TOS:
        out.append(Violation(loc, f"tos_map has {len(port.tos_map)} entries, expected {N_TOS}"))
    for tos, qi in enumerate(port.tos_map):
        if not 0 <= qi < k:
            out.append(Violation(loc, f"tos {tos} maps to invalid queue {qi}"))
    return out


def validate_scenario(scenario: Scenario) -> list[Violation]:
    out = validate(scenario.topology)
    n = scenario.topology.n_nodes
    if len(scenario.tos) != n or any(len(row) != n for row in scenario.tos):
        out.append(Violation("tos", f"assignment must be {n}x{n}"))
    else:
        for s in range(n):
            for d in range(n):
                if s != d and not 0 <= scenario.tos[s][d] < N_TOS:
                    out.append(Violation(f"tos {s}->{d}", f"class {scenario.tos[s][d]} outside 0..9"))
    if not out:
        try:
            resolve_paths(scenario.topology, scenario.next_hop, scenario.tos)
        except RoutingError as exc:
            out.append(Violation("routing", str(exc)))
    return out


def resolve_paths(topology: Topology, routing_table: Sequence[Sequence[int]],
                  tos_assignment: Sequence[Sequence[int]]) -> list[Path]:
    """Expand next-hop routing into one path per ordered (src, dst) pair.

    Paths are returned in (src, dst) lexicographic order.
    """
    n = topology.n_nodes
    if len(routing_table) != n or any(len(row) != n for row in routing_table):
        raise RoutingError(f"routing table must be {n}x{n}")
    paths = []
    for src in range(n):
        for dst in range(n):
            if src == dst:
                continue
            tos = int(tos_assignment[src][dst])
            elements = []
            node = src
            while node != dst:
                if len(elements) >= n:
                    raise RoutingError(f"routing loop on path {src}->{dst}")
                nxt = routing_table[node][dst]
                if nxt is None or nxt < 0:
                    raise RoutingError(f"missing next hop at node {node} towards {dst}")
                link = topology.link_between.get((node, int(nxt)))
                if link is None:
                    raise RoutingError(f"next hop {nxt} of node {node} is not adjacent")
                pi = topology.port_of_link.get(link)
                if pi is None:
                    raise RoutingError(f"link {link} has no port")
                port = topology.ports[pi]
                elements.append((topology.queue_offsets[pi] + port.tos_map[tos], link))
                node = int(nxt)
            paths.append(Path(src, dst, tos, tuple(elements)))
    return paths


def queues_of_link(topology: Topology, link: int) -> list[int]:
    pi = topology.port_of_link.get(link)
    if pi is None:
        raise KeyError(f"unknown link {link}")
    base = topology.queue_offsets[pi]
    return [base + i for i in topology.ports[pi].priority_order()]


def shortest_path_routing(n_nodes: int, links: Iterable[Link]) -> tuple[tuple[int, ...], ...]:
    """Hop-count shortest paths; among equal-length options the lowest node id wins."""
    adj: dict[int, list[int]] = {u: [] for u in range(n_nodes)}
    radj: dict[int, list[int]] = {u: [] for u in range(n_nodes)}
    for link in links:
        adj[link.src].append(link.dst)
        radj[link.dst].append(link.src)
    table = [[-1] * n_nodes for _ in range(n_nodes)]
    for dst in range(n_nodes):
        dist = {dst: 0}
        frontier = deque([dst])
        while frontier:
            v = frontier.popleft()
            for u in radj[v]:
                if u not in dist:
                    dist[u] = dist[v] + 1
                    frontier.append(u)
        for u in range(n_nodes):
            if u == dst or u not in dist:
                continue
            table[u][dst] = min((v for v in adj[u] if dist.get(v) == dist[u] - 1))
    return tuple(tuple(row) for row in table)


def random_links(node_count: int, rng: np.random.Generator,
                 capacities: Sequence[float] = DEFAULT_CAPACITIES,
                 edge_ratio: float = 1.5) -> tuple[Link, ...]:
    """Connected random graph with about ``edge_ratio * n`` bidirectional edges."""
    n = node_count
    edges = set()
    order = rng.permutation(n)
    for i in range(1, n):
        a, b = int(order[i]), int(order[rng.integers(i)])
        edges.add((min(a, b), max(a, b)))
    target = min(int(round(edge_ratio * n)), n * (n - 1) // 2)
    while len(edges) < target:
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        edges.add((min(a, b), max(a, b)))
    links = []
    for a, b in sorted(edges):
        cap = float(capacities[rng.integers(len(capacities))])
        links.append(Link(a, b, cap))
        links.append(Link(b, a, cap))
    return tuple(links)


def random_port(node: int, link: int, rng: np.random.Generator) -> Port:
    policy = POLICIES[rng.integers(len(POLICIES))]
    k = 1 if policy is Policy.FIFO else int(rng.integers(MIN_QUEUES, MAX_QUEUES + 1))
    sizes = [QUEUE_SIZES[i] for i in rng.integers(len(QUEUE_SIZES), size=k)]
    priorities = [int(p) for p in rng.permutation(k)]
    if policy in (Policy.WFQ, Policy.DRR):
        raw = rng.uniform(0.0, 1.0, size=k)
        while raw.min() <= 0.0:
            raw = rng.uniform(0.0, 1.0, size=k)
        weights = [float(w) for w in raw / raw.sum()]
    elif policy is Policy.FIFO:
        weights = [1.0]
    else:
        weights = [0.0] * k
    tos_map = tuple(int(x) for x in rng.integers(k, size=N_TOS))
    queues = tuple(QueueConfig(s, p, w) for s, p, w in zip(sizes, priorities, weights))
    return Port(node, link, policy, queues, tos_map)


def random_ports(links: Sequence[Link], rng: np.random.Generator) -> tuple[Port, ...]:
    return tuple(random_port(link.src, li, rng) for li, link in enumerate(links))


def random_tos(n_nodes: int, rng: np.random.Generator) -> tuple[tuple[int, ...], ...]:
    tos = rng.integers(N_TOS, size=(n_nodes, n_nodes))
    np.fill_diagonal(tos, 0)
    return tuple(tuple(int(x) for x in row) for row in tos)


def random_scenario(node_count: int, rng_seed, capacities: Sequence[float] = DEFAULT_CAPACITIES) -> Scenario:
    """Random connected topology with randomized port configurations and ToS classes.

    ``rng_seed`` may be anything accepted by :func:`numpy.random.default_rng`.
    """
    if node_count < 2:
        raise ValueError(f"node_count must be >= 2, got {node_count}")
    rng = np.random.default_rng(rng_seed)
    links = random_links(node_count, rng, capacities)
    topology = Topology(node_count, links, random_ports(links, rng))
    return Scenario(topology, shortest_path_routing(node_count, links), random_tos(node_count, rng))


def randomize_scenario(links: Sequence[Link], n_nodes: int, rng_seed,
                       next_hop: Sequence[Sequence[int]] | None = None) -> Scenario:
    """Fresh queue configuration and ToS classes over a fixed set of links."""
    rng = np.random.default_rng(rng_seed)
    links = tuple(links)
    topology = Topology(n_nodes, links, random_ports(links, rng))
    routing = shortest_path_routing(n_nodes, links) if next_hop is None else tuple(tuple(r) for r in next_hop)
    return Scenario(topology, routing, random_tos(n_nodes, rng))


def relabel(scenario: Scenario, perm: Sequence[int]) -> Scenario:
    """Isomorphic copy with node ``u`` renamed ``perm[u]``; link and port order are kept."""
    topo = scenario.topology
    n = topo.n_nodes
    links = tuple(Link(perm[l.src], perm[l.dst], l.capacity) for l in topo.links)
    ports = tuple(Port(perm[p.node], p.link, p.policy, p.queues, p.tos_map) for p in topo.ports)
    inv = np.argsort(perm)
    next_hop = tuple(
        tuple(-1 if u == d else perm[scenario.next_hop[inv[u]][inv[d]]] for d in range(n))
        for u in range(n))
    tos = tuple(tuple(scenario.tos[inv[u]][inv[d]] for d in range(n)) for u in range(n))
    return Scenario(Topology(n, links, ports), next_hop, tos)


def matches_known(topology: Topology) -> str | None:
    """Name of the reference topology whose node/link counts match, if any.

    Link counts are in undirected edges; a bidirectional edge is two links.
    """
    edges = {(min(l.src, l.dst), max(l.src, l.dst)) for l in topology.links}
    for name, (nodes, n_edges) in KNOWN_TOPOLOGIES.items():
        if topology.n_nodes == nodes and len(edges) == n_edges:
            return name
    return None


# -- topology files ---------------------------------------------------------

FILE_FORMAT = "queuenet-topology"
FILE_VERSION = 1
_TOP_KEYS = {"format", "version", "nodes", "links", "ports", "routing", "tos"}
_LINK_KEYS = {"src", "dst", "capacity"}
_PORT_KEYS = {"node", "link", "policy", "queues", "tos_map"}
_QUEUE_KEYS = {"size", "priority", "weight"}


def _check_keys(obj, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise TopologyError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise TopologyError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise TopologyError(f"{where}: missing keys {sorted(missing)}")


def topology_to_dict(topology: Topology, next_hop=None, tos=None) -> dict:
    doc = {
        "format": FILE_FORMAT,
        "version": FILE_VERSION,
        "nodes": topology.n_nodes,
        "links": [{"src": l.src, "dst": l.dst, "capacity": l.capacity} for l in topology.links],
    }
    if topology.ports:
        doc["ports"] = [
            {
                "node": p.node,
                "link": p.link,
                "policy": Policy(p.policy).value,
                "queues": [{"size": q.size_packets, "priority": q.priority, "weight": q.weight}
                           for q in p.queues],
                "tos_map": list(p.tos_map),
            }
            for p in topology.ports
        ]
    if next_hop is not None:
        doc["routing"] = [[None if v < 0 else v for v in row] for row in next_hop]
    if tos is not None:
        doc["tos"] = [list(row) for row in tos]
    return doc


def topology_from_dict(doc: dict) -> tuple[Topology, tuple | None, tuple | None]:
    """Parse a topology document; returns ``(topology, next_hop or None, tos or None)``."""
    _check_keys(doc, _TOP_KEYS, {"nodes", "links"}, "topology")
    if doc.get("format", FILE_FORMAT) != FILE_FORMAT:
        raise TopologyError(f"not a topology file: format {doc['format']!r}")
    if doc.get("version", FILE_VERSION) != FILE_VERSION:
        raise TopologyError(f"unsupported topology version {doc['version']}")
    links = []
    for i, item in enumerate(doc["links"]):
        _check_keys(item, _LINK_KEYS, _LINK_KEYS, f"links[{i}]")
        links.append(Link(int(item["src"]), int(item["dst"]), float(item["capacity"])))
    ports = []
    for i, item in enumerate(doc.get("ports", [])):
        _check_keys(item, _PORT_KEYS, _PORT_KEYS, f"ports[{i}]")
        queues = []
        for j, q in enumerate(item["queues"]):
            _check_keys(q, _QUEUE_KEYS, _QUEUE_KEYS, f"ports[{i}].queues[{j}]")
            queues.append(QueueConfig(int(q["size"]), int(q["priority"]), float(q["weight"])))
        try:
            policy = Policy(item["policy"])
        except ValueError:
            raise TopologyError(f"ports[{i}]: unknown policy {item['policy']!r}") from None
        ports.append(Port(int(item["node"]), int(item["link"]), policy, tuple(queues),
                          tuple(int(x) for x in item["tos_map"])))
    next_hop = None
    if "routing" in doc:
        next_hop = tuple(tuple(-1 if v is None else int(v) for v in row) for row in doc["routing"])
    tos = None
    if "tos" in doc:
        tos = tuple(tuple(int(v) for v in row) for row in doc["tos"])
    return Topology(int(doc["nodes"]), tuple(links), tuple(ports)), next_hop, tos


def load_topology(path) -> tuple[Topology, tuple | None, tuple | None]:
    try:
        doc = json.loads(FsPath(path).read_text())
    except json.JSONDecodeError as exc:
        raise TopologyError(f"{path}: {exc}") from None
    return topology_from_dict(doc)


def save_topology(path, topology: Topology, next_hop=None, tos=None) -> None:
    FsPath(path).write_text(json.dumps(topology_to_dict(topology, next_hop, tos), indent=1) + "\n")


def load_scenario(path) -> Scenario:
    topology, next_hop, tos = load_topology(path)
    if next_hop is None:
        next_hop = shortest_path_routing(topology.n_nodes, topology.links)
    if tos is None:
        tos = tuple(tuple(0 for _ in range(topology.n_nodes)) for _ in range(topology.n_nodes))
    return Scenario(topology, next_hop, tos)


def save_scenario(path, scenario: Scenario) -> None:
    save_topology(path, scenario.topology, scenario.next_hop, scenario.tos)
