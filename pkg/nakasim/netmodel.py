# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Region-aware link model and peer-to-peer topology generation.

This module holds the default region tables (latency matrix, upload
throughput), the per-message link delay rule, random topology construction
with a bounded number of outbound connections, and diameter estimation.
"""

import logging
import math

from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Dict, FrozenSet, List, Sequence, Tuple

import networkx as nx
import numpy as np

import nakasim.error as error

from nakasim.model import NodeId, NodeProfile, RegionId, Role

if TYPE_CHECKING:
    from nakasim.scenario import ScenarioConfig


logger = logging.getLogger(__name__)

# fmt: off
DEFAULT_REGIONS: Tuple[str, ...] = ('NA', 'EU', 'SA', 'AS', 'AP', 'JAP', 'AUS')

# Latency between origin region (rows) and target region (columns), in ms
DEFAULT_LATENCY_MS: Tuple[Tuple[int, ...], ...] = (
    ( 24,  70,  79, 115, 140,  79, 122),  # NA
    ( 70,  12, 161, 129,  97, 152, 140),  # EU
    ( 79, 128,  30, 195, 207, 176, 201),  # SA
    (122, 129, 195,  24,  54,  24, 129),  # AS
    (122,  97, 207,  54,  36,  42,  85),  # AP
    (103, 152, 176,  48,  42,  18, 183),  # JAP
    (134, 158, 201, 128,  85, 192,  30),  # AUS
)

# Maximum upload throughput per region, in bytes per second
DEFAULT_UPLOAD_BPS: Tuple[int, ...] = (
    6_800_000,   # NA
    4_800_000,   # EU
    2_700_000,   # SA
    4_800_000,   # AS
    13_700_000,  # AP
    6_800_000,   # JAP
    2_400_000,   # AUS
)

# Share of nodes per region
DEFAULT_REGION_WEIGHTS: Tuple[float, ...] = (0.33, 0.47, 0.02, 0.05, 0.08, 0.03, 0.02)
# fmt: on

# Download throughput relative to upload throughput
DOWNLOAD_FACTOR: int = 5

DEFAULT_VERIFICATION_DELAY_MS: int = 50
DEFAULT_D_OUT: int = 8

# Dedicated links between validators: 10 ms latency, 1 Gb/s both ways
OVERLAY_LATENCY_MS: int = 10
OVERLAY_BPS: int = 125_000_000

MAX_TOPOLOGY_ATTEMPTS: int = 10

# Largest graph whose diameter is computed exactly
EXACT_DIAMETER_LIMIT: int = 2000
DIAMETER_SOURCES: int = 16

WEIGHT_TOLERANCE: float = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    """Region tables and link parameters of a scenario.

    Attributes:
        regions: Region names; a `RegionId` indexes this list.
        latency_ms: Square matrix of latencies between regions.
        upload_Bps: Upload throughput per region (bytes/s).
        download_Bps: Download throughput per region (bytes/s).
        region_weights: Probability of a node being placed in each region.
        verification_delay_ms: Time a node spends verifying a block before relaying it.
        overlay: If True, links between two validators use the dedicated network.
    """

    regions: Tuple[str, ...] = DEFAULT_REGIONS
    latency_ms: Tuple[Tuple[float, ...], ...] = DEFAULT_LATENCY_MS
    upload_Bps: Tuple[float, ...] = DEFAULT_UPLOAD_BPS
    download_Bps: Tuple[float, ...] = tuple(u * DOWNLOAD_FACTOR for u in DEFAULT_UPLOAD_BPS)
    region_weights: Tuple[float, ...] = DEFAULT_REGION_WEIGHTS
    verification_delay_ms: int = DEFAULT_VERIFICATION_DELAY_MS
    overlay: bool = False

    def __post_init__(self):
        """Freeze list inputs into tuples."""
        object.__setattr__(self, 'regions', tuple(self.regions))
        object.__setattr__(self, 'latency_ms', tuple(tuple(r) for r in self.latency_ms))
        object.__setattr__(self, 'upload_Bps', tuple(self.upload_Bps))
        object.__setattr__(self, 'download_Bps', tuple(self.download_Bps))
        object.__setattr__(self, 'region_weights', tuple(self.region_weights))

    def validate(self) -> None:
        """Raise `NakaConfigError` if the tables are inconsistent."""
        k = len(self.regions)
        if k == 0:
            raise error.NakaConfigError('network.regions must not be empty')
        if len(self.latency_ms) != k or any(len(row) != k for row in self.latency_ms):
            raise error.NakaConfigError('network.latency_ms must be a %dx%d matrix' % (k, k))
        if any(v < 0 for row in self.latency_ms for v in row):
            raise error.NakaConfigError('network.latency_ms must be non-negative')
        for name in ('upload_Bps', 'download_Bps', 'region_weights'):
            if len(getattr(self, name)) != k:
                raise error.NakaConfigError('network.%s must have %d entries' % (name, k))
        if any(not v > 0 for v in self.upload_Bps + self.download_Bps):
            raise error.NakaConfigError('network bandwidths must be positive')
        if any(w < 0 for w in self.region_weights):
            raise error.NakaConfigError('network.region_weights must be non-negative')
        if abs(math.fsum(self.region_weights) - 1.0) > WEIGHT_TOLERANCE:
            raise error.NakaConfigError('network.region_weights must sum to 1')
        if self.verification_delay_ms < 0:
            raise error.NakaConfigError('network.verification_delay_ms must be >= 0')


@dataclass(frozen=True)
class Topology:
    """Peer-to-peer graph of a scenario.

    Each node opens connections to its `adjacency` entries (outbound). A
    connection carries messages both ways, so the gossip peers of a node are
    its outbound neighbors followed by its inbound neighbors.

    Attributes:
        adjacency: Outbound neighbor ids per node.
        profiles: Node profiles, indexed by node id.
        overlay: Undirected links `(a, b)`, `a < b`, on the dedicated network.
    """

    adjacency: Tuple[Tuple[NodeId, ...], ...]
    profiles: Tuple[NodeProfile, ...]
    overlay: FrozenSet[Tuple[NodeId, NodeId]] = field(default_factory=frozenset)

    def __post_init__(self):
        """Freeze inputs and check structural invariants."""
        object.__setattr__(self, 'adjacency', tuple(tuple(a) for a in self.adjacency))
        object.__setattr__(self, 'profiles', tuple(self.profiles))
        object.__setattr__(self, 'overlay', frozenset(self.overlay))

        n = len(self.profiles)
        if len(self.adjacency) != n:
            raise error.NakaTopologyError('Adjacency and profiles differ in length')
        for i, p in enumerate(self.profiles):
            if p.id != i:
                raise error.NakaTopologyError('Node ids must be dense (%d at %d)' % (p.id, i))
        for u, outs in enumerate(self.adjacency):
            if u in outs:
                raise error.NakaTopologyError('Self-loop at node %d' % u)
            if len(set(outs)) != len(outs):
                raise error.NakaTopologyError('Duplicate edge at node %d' % u)
            if any(not 0 <= v < n for v in outs):
                raise error.NakaTopologyError('Edge out of range at node %d' % u)

    @property
    def n(self) -> int:
        """Number of nodes."""
        return len(self.profiles)

    @cached_property
    def neighbors(self) -> Tuple[Tuple[NodeId, ...], ...]:
        """Gossip peers per node: outbound first, then inbound by id."""
        inbound: List[List[NodeId]] = [[] for _ in range(self.n)]
        for u, outs in enumerate(self.adjacency):
            for v in outs:
                inbound[v].append(u)

        result = []
        for u, outs in enumerate(self.adjacency):
            known = set(outs)
            result.append(outs + tuple(v for v in inbound[u] if v not in known))
        return tuple(result)

    def degree(self, node: NodeId) -> int:
        """Number of gossip peers of a node."""
        return len(self.neighbors[node])

    def is_overlay(self, a: NodeId, b: NodeId) -> bool:
        """True if the link between two nodes is on the dedicated network."""
        return (min(a, b), max(a, b)) in self.overlay

    def validators(self) -> List[NodeId]:
        """Ids of the nodes with block production power."""
        return [p.id for p in self.profiles if p.is_validator]

    def graph(self) -> nx.Graph:
        """Return the undirected `networkx.Graph` of the topology."""
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from((u, v) for u, outs in enumerate(self.adjacency) for v in outs)
        return g

    def with_corrupted(self, corrupted: FrozenSet[NodeId]) -> 'Topology':
        """Return a copy whose profiles carry the given corruption flags."""
        profiles = tuple(
            NodeProfile(p.id, p.role, p.region, p.relative_power, p.id in corrupted)
            for p in self.profiles
        )
        return Topology(self.adjacency, profiles, self.overlay)


def default_network() -> NetworkConfig:
    """Return the default region tables."""
    return NetworkConfig()


def propagation_ms(sender: RegionId, receiver: RegionId, cfg: NetworkConfig, overlay: bool = False) -> int:
    """Return the propagation part of a link delay, in ms.

    The larger of the two directed region latencies is used.
    """
    if overlay:
        return OVERLAY_LATENCY_MS
    lat = cfg.latency_ms
    return int(math.ceil(max(lat[sender][receiver], lat[receiver][sender])))


def transmission_ms(
    sender: RegionId, receiver: RegionId, msg_bytes: int, cfg: NetworkConfig, overlay: bool = False
) -> int:
    """Return the transmission part of a link delay, in ms.

    The message is sent at the minimum of the sender's upload and the
    receiver's download throughput.
    """
    if msg_bytes < 0:
        raise error.NakaDomainError('Message size must be >= 0 (got %r)' % msg_bytes)
    if overlay:
        bps = OVERLAY_BPS
    else:
        bps = min(cfg.upload_Bps[sender], cfg.download_Bps[receiver])
    return int(math.ceil(msg_bytes * 1000 / bps))


def link_delay_ms(
    sender: NodeProfile,
    receiver: NodeProfile,
    msg_bytes: int,
    cfg: NetworkConfig,
    overlay: bool = False,
) -> int:
    """Return the delay of one message over a link, in ms.

    Args:
        sender: Profile of the sending node.
        receiver: Profile of the receiving node.
        msg_bytes: Message size in bytes.
        cfg: Network configuration with the region tables.
        overlay: True if the link is on the dedicated network.

    Returns:
        Propagation delay plus transmission delay, in ms.

    Examples:
        >>> eu = NodeProfile(0, Role.VALIDATOR, 1, 0.5)
        >>> link_delay_ms(eu, eu, 800_000, default_network())
        179
    """
    return propagation_ms(sender.region, receiver.region, cfg, overlay) + transmission_ms(
        sender.region, receiver.region, msg_bytes, cfg, overlay
    )


def _pick_peers(rng: np.random.Generator, n: int, node: NodeId, d_out: int) -> Tuple[NodeId, ...]:
    peers: List[NodeId] = []
    seen = {node}
    while len(peers) < d_out:
        for p in rng.integers(0, n, size=2 * d_out):
            p = int(p)
            if p in seen:
                continue
            seen.add(p)
            peers.append(p)
            if len(peers) == d_out:
                break
    return tuple(peers)


def _generate(cfg: 'ScenarioConfig', rng: np.random.Generator) -> Topology:
    n = cfg.n_val + cfg.n_zp
    net = cfg.network

    weights = np.asarray(net.region_weights, dtype=float)
    regions = rng.choice(len(net.regions), size=n, p=weights / weights.sum())

    # Zero-power nodes are spread uniformly over the network
    zero_power = set()
    if cfg.n_zp:
        zero_power = {int(i) for i in rng.choice(n, size=cfg.n_zp, replace=False)}

    power = 1.0 / cfg.n_val
    profiles = tuple(
        NodeProfile(
            id=i,
            role=Role.ZERO_POWER if i in zero_power else Role.VALIDATOR,
            region=int(regions[i]),
            relative_power=0.0 if i in zero_power else power,
        )
        for i in range(n)
    )

    adjacency = tuple(_pick_peers(rng, n, i, cfg.d_out) for i in range(n))

    overlay = frozenset()
    if net.overlay:
        overlay = frozenset(
            (min(u, v), max(u, v))
            for u, outs in enumerate(adjacency)
            for v in outs
            if profiles[u].is_validator and profiles[v].is_validator
        )

    return Topology(adjacency, profiles, overlay)


def build_topology(cfg: 'ScenarioConfig', seed: int) -> Topology:
    """Build a random connected topology for a scenario.

    Every node opens `d_out` connections to distinct, uniformly chosen peers.
    Regions are drawn from the region weights, zero-power nodes are placed
    uniformly at random, and validators share the power equally. If the
    resulting graph is disconnected, construction is retried with derived
    seeds.

    Args:
        cfg: The scenario.
        seed: Seed for all random choices.

    Returns:
        A connected `Topology`.

    Raises:
        NakaTopologyError: If `d_out >= n`, `n < 2` or no connected graph was
            found within `MAX_TOPOLOGY_ATTEMPTS` attempts.
    """
    n = cfg.n_val + cfg.n_zp
    if n < 2:
        raise error.NakaTopologyError('A topology needs at least 2 nodes (got %d)' % n)
    if not 1 <= cfg.d_out < n:
        raise error.NakaTopologyError('d_out must lie in [1, n) (got %d, n=%d)' % (cfg.d_out, n))

    for attempt in range(MAX_TOPOLOGY_ATTEMPTS):
        topology = _generate(cfg, np.random.default_rng([seed, attempt]))
        if nx.is_connected(topology.graph()):
            return topology
        logger.debug('Topology attempt %d (seed %d) is disconnected, retrying', attempt, seed)

    raise error.NakaTopologyError(
        'No connected topology after %d attempts (n=%d, d_out=%d)' % (MAX_TOPOLOGY_ATTEMPTS, n, cfg.d_out)
    )


def estimate_diameter(t: Topology, seed: int = 0) -> int:
    """Return the diameter of a topology in hops.

    Up to `EXACT_DIAMETER_LIMIT` nodes the exact value is computed from
    all-pairs BFS. Larger graphs get a lower bound from double-sweep BFS
    started at `DIAMETER_SOURCES` random nodes.

    Raises:
        NakaTopologyError: If the topology is disconnected.
    """
    g = t.graph()
    if not nx.is_connected(g):
        raise error.NakaTopologyError('Diameter of a disconnected topology is undefined')

    if t.n <= EXACT_DIAMETER_LIMIT:
        return int(nx.diameter(g))

    rng = np.random.default_rng(seed)
    best = 0
    for src in rng.choice(t.n, size=min(DIAMETER_SOURCES, t.n), replace=False):
        dist = nx.single_source_shortest_path_length(g, int(src))
        far = max(dist, key=dist.get)
        sweep = nx.single_source_shortest_path_length(g, far)
        best = max(best, dist[far], max(sweep.values()))
    return best


def region_frequencies(t: Topology, regions: Sequence[str]) -> Dict[str, float]:
    """Return the share of nodes placed in each region."""
    counts = np.bincount([p.region for p in t.profiles], minlength=len(regions))
    return {name: float(c) / t.n for name, c in zip(regions, counts)}
