# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Gossip messages and the relay rules of the four block gossip protocols.

This module holds the table of message kinds with their sizes and the
per-protocol decisions of the engine: which messages announce a new block,
how a block request is answered and what a node does with an announcement.
"""

import math

from collections import namedtuple
from typing import List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

import nakasim.error as error

from nakasim.model import Block, NodeId, Protocol


# Named tuple for message kinds
msgKind = namedtuple('msgKind', ['name', 'size_bytes', 'carries_block'])
msgKind.__doc__ = """Gossip message kind, with its fixed size in bytes and whether it delivers block data."""

# Size of a hash announcement or request: header + one inventory entry
INV_BYTES = 61

# fmt: off
msgInv            = msgKind('Inv',              INV_BYTES, False)
msgGetData        = msgKind('GetData',          INV_BYTES, False)
msgNewBlockHashes = msgKind('NewBlockHashes',   INV_BYTES, False)
msgGetBlockTxn    = msgKind('GetBlockTxn',      100,       False)
msgSendCmpct      = msgKind('SendCmpct',        33,        False)
msgFullBlock      = msgKind('FullBlock',        None,      True)
msgNewBlock       = msgKind('NewBlockMsg',      None,      True)
msgCmpctBlock     = msgKind('CmpctBlock',       None,      True)
msgBlockTxn       = msgKind('BlockTxn',         None,      True)

MESSAGE_KINDS = (
    msgInv,
    msgGetData,
    msgNewBlockHashes,
    msgGetBlockTxn,
    msgSendCmpct,
    msgFullBlock,
    msgNewBlock,
    msgCmpctBlock,
    msgBlockTxn,
)
# fmt: on

# Kinds that make a receiver request the block from the sender
ANNOUNCEMENTS = (msgInv, msgNewBlockHashes)

# Kinds that complete the block data at the receiver
DELIVERIES = (msgFullBlock, msgNewBlock, msgBlockTxn)


class Message(NamedTuple):
    """A gossip message: its kind and the block it refers to (if any)."""

    kind: msgKind
    block: Optional[Block] = None


def message_size(
    kind: msgKind,
    block_size_bytes: int,
    compact_fraction: float = 0.02,
    missing_tx_fraction: float = 0.1,
) -> int:
    """Return the size of a message in bytes.

    Block-bearing messages scale with the block: full blocks carry all of it,
    a compact block `compact_fraction` of it and a missing-transactions
    reply `missing_tx_fraction` of it.

    Examples:
        >>> message_size(msgCmpctBlock, 800_000)
        16000
    """
    if kind.size_bytes is not None:
        return kind.size_bytes
    if kind in (msgFullBlock, msgNewBlock):
        return block_size_bytes
    if kind == msgCmpctBlock:
        return int(math.ceil(block_size_bytes * compact_fraction))
    if kind == msgBlockTxn:
        return int(math.ceil(block_size_bytes * missing_tx_fraction))

    raise error.NakaSimulationError('Unknown message kind: %r' % (kind,))


def push_count(peers: int) -> int:
    """Return how many peers get the full block under hybrid push."""
    return int(math.ceil(math.sqrt(peers)))


def announce(
    protocol: Protocol, peers: Sequence[NodeId], rng: np.random.Generator, degree: Optional[int] = None
) -> List[Tuple[NodeId, msgKind]]:
    """Return the messages a node sends when relaying a new block.

    Args:
        protocol: The gossip protocol.
        peers: Peers that may not have the block yet, in neighbor order.
        rng: Generator for the hybrid push subset.
        degree: Number of neighbors of the node; the hybrid push subset has
            `ceil(sqrt(degree))` peers, capped by `len(peers)`. Defaults to
            `len(peers)`.

    Returns:
        Pairs of peer and message kind, in sending order.
    """
    if not peers:
        return []

    if protocol in (Protocol.ADVERTISEMENT_BASED, Protocol.COMPACT_BLOCKS_LOW):
        return [(p, msgInv) for p in peers]

    if protocol is Protocol.DIRECT_PUSH:
        return [(p, msgFullBlock) for p in peers]

    if protocol is Protocol.HYBRID_PUSH:
        size = min(len(peers), push_count(len(peers) if degree is None else degree))
        chosen = set(int(i) for i in rng.choice(len(peers), size=size, replace=False))
        return [(p, msgNewBlock if i in chosen else msgNewBlockHashes) for i, p in enumerate(peers)]

    raise error.NakaSimulationError('Unknown protocol: %r' % (protocol,))


def answer_request(protocol: Protocol, requester: NodeId, compact_peers: Set[NodeId]) -> msgKind:
    """Return the kind that answers a block request.

    Under compact block relay a peer that announced `SendCmpct` gets a
    compact block; everyone else gets the full block.
    """
    if protocol is Protocol.COMPACT_BLOCKS_LOW and requester in compact_peers:
        return msgCmpctBlock
    return msgFullBlock


def negotiates_compact(protocol: Protocol) -> bool:
    """True if nodes announce `SendCmpct` to their peers at start."""
    return protocol is Protocol.COMPACT_BLOCKS_LOW
