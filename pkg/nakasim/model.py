# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Shared domain vocabulary: nodes, blocks, protocols and security parameters.

Simulation time is kept in integer milliseconds; analytical quantities are
real-valued seconds. Use `seconds_to_ms` and `ms_to_seconds` at the boundary.
"""

import enum
import math

from dataclasses import dataclass
from typing import Optional, Union

import nakasim.error as error

from nakasim.secmath import Characterization, effective_p_star


NodeId = int
RegionId = int
BlockId = int

# Tolerance on the total validator power
POWER_TOLERANCE: float = 1e-9


class Role(enum.Enum):
    """Role of a node in block production."""

    VALIDATOR = 'validator'
    ZERO_POWER = 'zero_power'


class Protocol(enum.Enum):
    """Block gossip protocols."""

    ADVERTISEMENT_BASED = 'advertisement_based'
    DIRECT_PUSH = 'direct_push'
    HYBRID_PUSH = 'hybrid_push'
    COMPACT_BLOCKS_LOW = 'compact_blocks_low'


@dataclass(frozen=True)
class NodeProfile:
    """Static description of one node.

    Attributes:
        id: Dense node index in `[0, n)`.
        role: Validator or zero-power node.
        region: Index into the configured region list.
        relative_power: Share of the total block production power.
        corrupted: True if the node is controlled by the adversary.
    """

    id: NodeId
    role: Role
    region: RegionId
    relative_power: float
    corrupted: bool = False

    def __post_init__(self):
        """Validate power against role."""
        if self.id < 0:
            raise error.NakaConfigError('Node id must be >= 0 (got %r)' % self.id)
        if not 0.0 <= self.relative_power <= 1.0:
            raise error.NakaConfigError(
                'Relative power must lie in [0, 1] (got %r)' % self.relative_power
            )
        if (self.role is Role.ZERO_POWER) != (self.relative_power == 0.0):
            raise error.NakaConfigError(
                'Node %d: zero power iff zero-power role' % self.id
            )

    @property
    def is_validator(self) -> bool:
        """True if the node produces blocks."""
        return self.role is Role.VALIDATOR


@dataclass(frozen=True)
class Block:
    """A block as seen by the simulator: an opaque payload of fixed size."""

    id: BlockId
    parent: Optional[BlockId]
    height: int
    miner: NodeId
    created_at_ms: int
    size_bytes: int

    @classmethod
    def genesis(cls, miner: NodeId = 0, size_bytes: int = 1) -> 'Block':
        """Return the genesis block (height 0, no parent)."""
        return cls(id=0, parent=None, height=0, miner=miner, created_at_ms=0, size_bytes=size_bytes)

    def child(self, block_id: BlockId, miner: NodeId, now_ms: int, size_bytes: int) -> 'Block':
        """Return a new block extending this one."""
        if now_ms < self.created_at_ms:
            raise error.NakaSimulationError('Block time must not decrease along a chain')
        return Block(
            id=block_id,
            parent=self.id,
            height=self.height + 1,
            miner=miner,
            created_at_ms=now_ms,
            size_bytes=size_bytes,
        )


@dataclass(frozen=True)
class SecurityParams:
    """Parameters of the security analysis.

    Attributes:
        rho: Block rate in blocks per second.
        e: Magnification factor (1 for classic proof-of-work/stake).
        p_star: Corruption probability, or a full characterization.
    """

    rho: float
    e: float = 1.0
    p_star: Union[float, Characterization] = 0.0

    def validate(self) -> None:
        """Raise `NakaConfigError` if a parameter is out of range."""
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise error.NakaConfigError('security.rho must be > 0 (got %r)' % self.rho)
        if not self.e >= 1:
            raise error.NakaConfigError('security.e must be >= 1 (got %r)' % self.e)
        try:
            effective_p_star(self.p_star)
        except error.NakaDomainError as e:
            raise error.NakaConfigError('security.p_star: %s' % e) from e

    @property
    def block_interval_s(self) -> float:
        """Expected time between blocks, in seconds."""
        return 1.0 / self.rho

    @property
    def effective_p_star(self) -> float:
        """Mean corruption probability."""
        return effective_p_star(self.p_star)


def seconds_to_ms(seconds: float) -> int:
    """Convert seconds to the nearest integer millisecond."""
    return int(round(seconds * 1000.0))


def ms_to_seconds(ms: int) -> float:
    """Convert milliseconds to seconds."""
    return ms / 1000.0
