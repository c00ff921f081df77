# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Discrete-event simulation of block production and block gossip.

This module exports a Simulation class executing one run of a scenario on a
topology, plus helpers to reduce per-block reception times to delay metrics.

Time is kept in integer milliseconds. Events are popped from one global
timeline in `(fire_at_ms, seq)` order, so a run is fully determined by its
scenario, topology and seed.
"""

import enum
import heapq
import logging
import math

from dataclasses import dataclass, field
from hashlib import blake2s
from typing import Dict, List, NamedTuple, Optional, Sequence, Set

import numpy as np

import nakasim.error as error
import nakasim.netmodel as netmodel
import nakasim.proto as proto

from nakasim.adversary import assign_corruption
from nakasim.model import Block, BlockId, NodeId, NodeProfile, seconds_to_ms
from nakasim.proto import Message, msgKind
from nakasim.scenario import ScenarioConfig


logger = logging.getLogger(__name__)

# Runs stop after this many expected block intervals per block
CUTOFF_FACTOR: int = 10

# Seed stream of the adversary's draws, separate from the engine stream
ADVERSARY_STREAM: int = 1

# Percentile reported next to the maximum and the mean delay
DELAY_PERCENTILE: float = 0.9


class EventKind(enum.IntEnum):
    """Kinds of events on the timeline."""

    BLOCK_GENERATED = 0
    MESSAGE_DELIVERED = 1
    TIMEOUT_FIRED = 2
    BLOCK_VERIFIED = 3


class Event(NamedTuple):
    """A timestamped action; `seq` breaks ties in insertion order."""

    fire_at_ms: int
    seq: int
    kind: EventKind
    node: NodeId
    peer: NodeId = -1
    message: Optional[Message] = None
    block_id: BlockId = -1
    token: int = 0


class Request(NamedTuple):
    """An outstanding block request."""

    peer: NodeId
    sent_at_ms: int
    token: int


@dataclass
class NodeState:
    """Mutable view of one node during a run.

    Attributes:
        tip: Head of the node's best chain.
        tip_height: Height of `tip`.
        known: Blocks whose whole ancestry is known.
        requested: Outstanding request per block.
        advertisers: Peers that announced a block, in arrival order.
        tried: Peers a block was already requested from.
        peer_has: Peers known to have a block that is not relayed yet.
        orphans: Received blocks waiting for their parent.
        relayed: Blocks this node has relayed.
        compact_peers: Peers that asked for compact blocks.
        served: `(block, peer)` pairs already answered.
        upload_free_ms: Time the node's uplink becomes free.
    """

    tip: BlockId = 0
    tip_height: int = 0
    known: Set[BlockId] = field(default_factory=lambda: {0})
    requested: Dict[BlockId, Request] = field(default_factory=dict)
    advertisers: Dict[BlockId, List[NodeId]] = field(default_factory=dict)
    tried: Dict[BlockId, Set[NodeId]] = field(default_factory=dict)
    peer_has: Dict[BlockId, Set[NodeId]] = field(default_factory=dict)
    orphans: Dict[BlockId, List[Block]] = field(default_factory=dict)
    relayed: Set[BlockId] = field(default_factory=set)
    compact_peers: Set[NodeId] = field(default_factory=set)
    served: Set[tuple] = field(default_factory=set)
    upload_free_ms: int = 0


class BlockRecord(NamedTuple):
    """Reception times of one block; `-1` marks a node that never got it."""

    block: Block
    receptions: np.ndarray
    stale: bool


class MetricSummary(NamedTuple):
    """Delay metrics (seconds) and stale rate of one or more runs."""

    delta_max_s: float
    delta_avg_s: float
    delta_p90_s: float
    stale_rate: float


@dataclass(frozen=True)
class RunMetrics:
    """Outcome of one run.

    Attributes:
        per_block: One record per created block, by block id.
        delta_max_s: Largest reception delay of a non-stale block.
        delta_avg_s: Mean reception delay over (block, node) pairs.
        delta_p90_s: 90th percentile (nearest rank) of the reception delays.
        stale_rate: Share of created blocks that ended off the best chain.
        partial: True if the run hit the cutoff with undelivered blocks.
        seed: Seed of the run.
        trace_digest: BLAKE2s digest of the event trace.
        events: Number of processed events.
        end_ms: Time of the last processed event.
    """

    per_block: tuple
    delta_max_s: float
    delta_avg_s: float
    delta_p90_s: float
    stale_rate: float
    partial: bool
    seed: int
    trace_digest: str
    events: int
    end_ms: int

    def summary(self) -> MetricSummary:
        """Return the four delay metrics."""
        return MetricSummary(self.delta_max_s, self.delta_avg_s, self.delta_p90_s, self.stale_rate)

    def summary_row(self) -> dict:
        """Return the run as one flat row."""
        return {
            'seed': self.seed,
            'blocks': len(self.per_block),
            'delta_max_s': self.delta_max_s,
            'delta_avg_s': self.delta_avg_s,
            'delta_p90_s': self.delta_p90_s,
            'stale_rate': self.stale_rate,
            'partial': self.partial,
            'events': self.events,
            'end_ms': self.end_ms,
            'trace_digest': self.trace_digest,
        }


def sample_next_block_time(node: NodeProfile, rho: float, rng: np.random.Generator) -> int:
    """Draw the time (ms) until a validator finds its next block.

    The time is exponential with rate `rho * relative_power`, rounded up to
    the next millisecond.

    Raises:
        NakaSimulationError: If the node has no block production power.
    """
    if not node.is_validator or node.relative_power <= 0.0:
        raise error.NakaSimulationError('Node %d has no power and cannot mine' % node.id)

    mean_s = 1.0 / (rho * node.relative_power)
    return int(math.ceil(rng.exponential(mean_s) * 1000.0))


def fork_choice(state: NodeState, candidate: Block) -> bool:
    """Return True if a node switches its tip to the candidate.

    The longest chain wins; at equal height the first-seen block stays.

    Raises:
        NakaSimulationError: If the candidate's parent is unknown to the node.
    """
    if candidate.parent is not None and candidate.parent not in state.known:
        raise error.NakaSimulationError('Block %d has an unknown parent' % candidate.id)
    return candidate.height > state.tip_height


def _nearest_rank(values: np.ndarray, q: float) -> float:
    ordered = np.sort(values)
    rank = max(1, int(math.ceil(q * len(ordered) - 1e-9)))
    return float(ordered[rank - 1])


def reduce_metrics(records: Sequence[BlockRecord]) -> MetricSummary:
    """Reduce per-block records to delay metrics and the stale rate.

    Delays are measured from block creation to reception at every node other
    than the miner. Stale blocks and nodes that never received a block are
    left out of the delays.

    Examples:
        >>> genesis = Block.genesis()
        >>> b = genesis.child(1, miner=0, now_ms=0, size_bytes=1)
        >>> reduce_metrics([BlockRecord(b, np.array([0, 250]), False)]).delta_max_s
        0.25
    """
    if not records:
        return MetricSummary(0.0, 0.0, 0.0, 0.0)

    latencies = []
    for r in records:
        if r.stale:
            continue
        mask = r.receptions >= 0
        mask[r.block.miner] = False
        latencies.append(r.receptions[mask] - r.block.created_at_ms)

    stale_rate = sum(1 for r in records if r.stale) / len(records)

    values = np.concatenate(latencies) if latencies else np.empty(0)
    if values.size == 0:
        return MetricSummary(0.0, 0.0, 0.0, stale_rate)

    return MetricSummary(
        delta_max_s=float(values.max()) / 1000.0,
        delta_avg_s=float(values.mean()) / 1000.0,
        delta_p90_s=_nearest_rank(values, DELAY_PERCENTILE) / 1000.0,
        stale_rate=stale_rate,
    )


def aggregate_metrics(runs: Sequence[RunMetrics]) -> MetricSummary:
    """Return the mean of the metrics of several runs."""
    if not runs:
        raise error.NakaSimulationError('Cannot aggregate an empty batch of runs')

    summaries = np.array([r.summary() for r in runs], dtype=float)
    return MetricSummary(*(float(v) for v in summaries.mean(axis=0)))


class Simulation:
    """One run of a scenario on a topology.

    An instance owns all mutable state of the run. It is used once: create
    it, then call `run()`.
    """

    def __init__(self, scenario: ScenarioConfig, topology: netmodel.Topology, seed: int, trace: bool = False):
        """Create a new run.

        Args:
            scenario: The validated scenario.
            topology: A connected topology with `scenario.n` nodes.
            seed: Seed of the engine's draws.
            trace: If True, log every event at DEBUG level.

        Raises:
            NakaSimulationError: If the topology does not match the scenario.
        """
        if topology.n != scenario.n:
            raise error.NakaSimulationError(
                'Topology has %d nodes, scenario expects %d' % (topology.n, scenario.n)
            )

        self.scenario = scenario
        self.seed = seed
        self.trace = trace and logger.isEnabledFor(logging.DEBUG)
        self.rng = np.random.default_rng(seed)

        self.plan = assign_corruption(
            topology, scenario.adversary, np.random.default_rng([seed, ADVERSARY_STREAM])
        )
        self.topology = topology.with_corrupted(self.plan.corrupted) if self.plan.corrupted else topology
        self.profiles = self.topology.profiles

        self.blocks: List[Block] = [Block.genesis(size_bytes=scenario.block_size_bytes)]
        self.reception = np.full((scenario.num_blocks + 1, topology.n), -1, dtype=np.int64)
        self.reception[0, :] = 0
        self.received = 0

        self.states = [NodeState() for _ in range(topology.n)]
        self.queue: List[Event] = []
        self.seq = 0
        self.token = 0
        self.now = 0
        self.events = 0
        self.digest = blake2s(digest_size=32)
        self.cutoff_ms = seconds_to_ms(CUTOFF_FACTOR * scenario.num_blocks / scenario.security.rho)

    def __repr__(self):
        """Get string representation of current instance."""
        return "{0}(protocol='{1}', n={2}, seed={3})".format(
            type(self).__name__, self.scenario.protocol.value, self.topology.n, self.seed
        )

    @property
    def created(self) -> int:
        """Number of blocks created so far (genesis excluded)."""
        return len(self.blocks) - 1

    @property
    def complete(self) -> bool:
        """True once every block is created and received by every node."""
        num_blocks = self.scenario.num_blocks
        return self.created == num_blocks and self.received == num_blocks * self.topology.n

    def run(self) -> RunMetrics:
        """Execute the run until completion, an empty timeline or the cutoff.

        Returns:
            The metrics of the run; `partial` is set if blocks were left
                undelivered at the cutoff.
        """
        self._start()

        while self.queue and not self.complete:
            if self.queue[0].fire_at_ms > self.cutoff_ms:
                break
            ev = heapq.heappop(self.queue)
            self.now = ev.fire_at_ms
            self._record(ev)
            self._dispatch(ev)

        metrics = self._metrics()
        if metrics.partial:
            logger.warning(
                'Run with seed %d stopped at %d ms with undelivered blocks (%d of %d created)',
                self.seed,
                self.now,
                self.created,
                self.scenario.num_blocks,
            )
        return metrics

    # Timeline
    # =================================================================

    def _push(self, at_ms: int, kind: EventKind, node: NodeId, **kwargs) -> None:
        self.seq += 1
        heapq.heappush(self.queue, Event(at_ms, self.seq, kind, node, **kwargs))

    def _record(self, ev: Event) -> None:
        self.events += 1
        what = ev.message.kind.name if ev.message is not None else ''
        block = ev.message.block.id if ev.message is not None and ev.message.block is not None else ev.block_id
        line = '%d,%d,%d,%d,%d,%s,%d\n' % (ev.fire_at_ms, ev.seq, ev.kind, ev.node, ev.peer, what, block)
        self.digest.update(line.encode())

        if self.trace:
            logger.debug(
                't=%d %s node=%d peer=%d %s block=%d', ev.fire_at_ms, ev.kind.name, ev.node, ev.peer, what, block
            )

    def _dispatch(self, ev: Event) -> None:
        if ev.kind is EventKind.BLOCK_GENERATED:
            self._on_block_generated(ev.node)
        elif ev.kind is EventKind.MESSAGE_DELIVERED:
            self._on_message(ev.node, ev.peer, ev.message)
        elif ev.kind is EventKind.TIMEOUT_FIRED:
            self.on_timeout(ev.node, ev.block_id, ev.token)
        elif ev.kind is EventKind.BLOCK_VERIFIED:
            self.on_block_adopted(ev.node, self.blocks[ev.block_id])

    def _start(self) -> None:
        for profile in self.profiles:
            if profile.is_validator:
                self._schedule_mining(profile.id)

        if proto.negotiates_compact(self.scenario.protocol):
            for u in range(self.topology.n):
                for v in self.topology.neighbors[u]:
                    self._send(u, v, proto.msgSendCmpct)

    def _schedule_mining(self, node: NodeId) -> None:
        if self.created >= self.scenario.num_blocks:
            return

        at = self.now + sample_next_block_time(self.profiles[node], self.scenario.security.rho, self.rng)
        self._push(at, EventKind.BLOCK_GENERATED, node)

    def _send(self, sender: NodeId, receiver: NodeId, kind: msgKind, block: Optional[Block] = None) -> None:
        """Queue a message on the sender's uplink and schedule its delivery."""
        gossip = self.scenario.gossip
        net = self.scenario.network
        size = proto.message_size(
            kind, self.scenario.block_size_bytes, gossip.compact_fraction, gossip.missing_tx_fraction
        )

        a = self.profiles[sender].region
        b = self.profiles[receiver].region
        overlay = self.topology.is_overlay(sender, receiver)
        tx = netmodel.transmission_ms(a, b, size, net, overlay)
        prop = netmodel.propagation_ms(a, b, net, overlay)

        # The uplink sends one message at a time
        state = self.states[sender]
        depart = max(self.now, state.upload_free_ms)
        state.upload_free_ms = depart + tx

        delay = self.plan.delay_ms(tx + prop, sender, receiver, kind.carries_block)
        self._push(depart + delay, EventKind.MESSAGE_DELIVERED, receiver, peer=sender, message=Message(kind, block))

    # Block handling
    # =================================================================

    def _on_block_generated(self, node: NodeId) -> None:
        if self.created >= self.scenario.num_blocks:
            return

        state = self.states[node]
        block = self.blocks[state.tip].child(self.created + 1, node, self.now, self.scenario.block_size_bytes)
        self.blocks.append(block)
        logger.debug('Node %d created block %d at height %d (t=%d)', node, block.id, block.height, self.now)

        self._schedule_mining(node)
        self._receive_block(node, block, None)

    def _receive_block(self, node: NodeId, block: Block, sender: Optional[NodeId]) -> None:
        """Handle complete block data arriving at a node."""
        state = self.states[node]
        if sender is not None and block.id not in state.relayed:
            state.peer_has.setdefault(block.id, set()).add(sender)

        if self.reception[block.id, node] >= 0:
            return

        self.reception[block.id, node] = self.now
        self.received += 1
        state.requested.pop(block.id, None)
        state.advertisers.pop(block.id, None)
        state.tried.pop(block.id, None)

        if block.parent not in state.known:
            state.orphans.setdefault(block.parent, []).append(block)
            parent = self.blocks[block.parent]
            if parent.id not in state.requested and self.reception[parent.id, node] < 0:
                state.advertisers.setdefault(parent.id, []).append(sender)
                self._request(node, parent, sender)
            return

        self._accept(node, block)

    def _accept(self, node: NodeId, block: Block) -> None:
        """Connect a block (and any orphans waiting on it) to the node's tree."""
        state = self.states[node]
        pending = [block]
        while pending:
            b = pending.pop()
            if fork_choice(state, b):
                state.tip = b.id
                state.tip_height = b.height
            state.known.add(b.id)

            delay = 0 if b.miner == node else self.scenario.network.verification_delay_ms
            self._push(self.now + delay, EventKind.BLOCK_VERIFIED, node, block_id=b.id)

            pending.extend(state.orphans.pop(b.id, ()))

    def on_block_adopted(self, node: NodeId, block: Block) -> None:
        """Relay a verified block according to the gossip protocol.

        Every peer not known to have the block gets the protocol's
        announcement: an inventory, the full block or, under hybrid push,
        the block for `ceil(sqrt(degree))` of them and its hash for the rest.
        """
        state = self.states[node]
        if block.id in state.relayed:
            return
        state.relayed.add(block.id)

        have = state.peer_has.pop(block.id, set())
        peers = [p for p in self.topology.neighbors[node] if p not in have]

        degree = len(self.topology.neighbors[node])
        for peer, kind in proto.announce(self.scenario.protocol, peers, self.rng, degree=degree):
            self._send(node, peer, kind, block)

    # Messages
    # =================================================================

    def _on_message(self, node: NodeId, sender: NodeId, message: Message) -> None:
        kind = message.kind
        if kind == proto.msgSendCmpct:
            self.states[node].compact_peers.add(sender)
        elif kind in proto.ANNOUNCEMENTS:
            self._on_announcement(node, sender, message.block)
        elif kind == proto.msgGetData:
            self._on_get_data(node, sender, message.block)
        elif kind == proto.msgCmpctBlock:
            self._on_compact_block(node, sender, message.block)
        elif kind == proto.msgGetBlockTxn:
            self._send(node, sender, proto.msgBlockTxn, message.block)
        elif kind in proto.DELIVERIES:
            self._receive_block(node, message.block, sender)
        else:
            raise error.NakaSimulationError('Unhandled message kind: %r' % (kind,))

    def _on_announcement(self, node: NodeId, sender: NodeId, block: Block) -> None:
        state = self.states[node]
        if block.id not in state.relayed:
            state.peer_has.setdefault(block.id, set()).add(sender)
        if self.reception[block.id, node] >= 0:
            return

        advertisers = state.advertisers.setdefault(block.id, [])
        if sender not in advertisers:
            advertisers.append(sender)

        # At most one outstanding request per block
        if block.id in state.requested:
            return
        self._request(node, block, sender)

    def _request(self, node: NodeId, block: Block, peer: NodeId) -> None:
        state = self.states[node]
        state.tried.setdefault(block.id, set()).add(peer)

        self.token += 1
        state.requested[block.id] = Request(peer, self.now, self.token)
        self._send(node, peer, proto.msgGetData, block)
        self._push(
            self.now + self.scenario.gossip.timeout_ms,
            EventKind.TIMEOUT_FIRED,
            node,
            block_id=block.id,
            token=self.token,
        )

    def _on_get_data(self, node: NodeId, requester: NodeId, block: Block) -> None:
        state = self.states[node]
        if block.id not in state.known:
            logger.debug('Node %d cannot serve block %d to %d', node, block.id, requester)
            return
        if (block.id, requester) in state.served:
            return
        state.served.add((block.id, requester))

        kind = proto.answer_request(self.scenario.protocol, requester, state.compact_peers)
        self._send(node, requester, kind, block)

    def _on_compact_block(self, node: NodeId, sender: NodeId, block: Block) -> None:
        if self.reception[block.id, node] >= 0:
            return
        if self.rng.random() < self.scenario.gossip.missing_tx_probability:
            self._send(node, sender, proto.msgGetBlockTxn, block)
            return
        self._receive_block(node, block, sender)

    def on_timeout(self, node: NodeId, block_id: BlockId, token: int) -> None:
        """Re-request a block whose request went unanswered.

        The next advertiser that was not asked yet gets the request. Without
        one, the request is dropped and the next announcement triggers a new
        one. A timeout of an answered or replaced request does nothing.
        """
        state = self.states[node]
        pending = state.requested.get(block_id)
        if pending is None or pending.token != token or self.reception[block_id, node] >= 0:
            return

        tried = state.tried.get(block_id, set())
        for peer in state.advertisers.get(block_id, ()):
            if peer not in tried:
                logger.debug('Node %d re-requests block %d from %d', node, block_id, peer)
                self._request(node, self.blocks[block_id], peer)
                return

        del state.requested[block_id]

    # Metrics
    # =================================================================

    def best_chain(self) -> Set[BlockId]:
        """Return the ids of the blocks on the best chain, genesis excluded.

        The best chain ends in the highest block; ties go to the block
        created first.
        """
        created = self.blocks[1:]
        if not created:
            return set()

        head = min(created, key=lambda b: (-b.height, b.created_at_ms, b.id))
        chain = set()
        while head.parent is not None:
            chain.add(head.id)
            head = self.blocks[head.parent]
        return chain

    def _metrics(self) -> RunMetrics:
        chain = self.best_chain()
        records = tuple(
            BlockRecord(b, self.reception[b.id].copy(), b.id not in chain) for b in self.blocks[1:]
        )
        summary = reduce_metrics(records)

        return RunMetrics(
            per_block=records,
            delta_max_s=summary.delta_max_s,
            delta_avg_s=summary.delta_avg_s,
            delta_p90_s=summary.delta_p90_s,
            stale_rate=summary.stale_rate,
            partial=not self.complete,
            seed=self.seed,
            trace_digest=self.digest.hexdigest(),
            events=self.events,
            end_ms=self.now,
        )


def run(scenario: ScenarioConfig, topology: netmodel.Topology, seed: int, trace: bool = False) -> RunMetrics:
    """Simulate one run of a scenario on a given topology.

    Examples:
        >>> from nakasim.scenario import preset
        >>> cfg = preset('bitcoin', n_val=50)
        >>> m = run(cfg, netmodel.build_topology(cfg, 1), seed=1)
        >>> m.partial
        False
    """
    return Simulation(scenario, topology, seed, trace=trace).run()


def simulate(scenario: ScenarioConfig, seed: Optional[int] = None, trace: bool = False) -> List[RunMetrics]:
    """Run every run of a scenario, each on its own topology.

    Run `i` builds its topology and draws its events with seed `seed + i`
    (`scenario.seed` if no seed is given).
    """
    scenario.validate()
    base = scenario.seed if seed is None else seed

    results = []
    for i in range(scenario.runs):
        s = base + i
        topology = netmodel.build_topology(scenario, s)
        logger.debug('Run %d/%d (seed %d)', i + 1, scenario.runs, s)
        results.append(run(scenario, topology, s, trace=trace))
    return results
