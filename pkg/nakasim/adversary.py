# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Network-layer adversary: corruption assignment and delayed links.

A corrupted node keeps mining and relaying, but answers a fixed share of its
neighbors only after an artificial delay. The delay is additive; messages are
never dropped or reordered beyond that.
"""

import logging
import math

from dataclasses import dataclass, field
from typing import FrozenSet, Tuple

import numpy as np

import nakasim.error as error

from nakasim.model import NodeId
from nakasim.netmodel import Topology


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdversaryConfig:
    """Adversary section of a scenario.

    Attributes:
        enabled: If False, no node is corrupted.
        p_hat: Probability of each node getting corrupted.
        p_con: Share of a corrupted node's neighbors whose links are delayed.
        nt_delay_ms: Delay added on a delayed link.
        delay_all_messages: Delay every message kind, not only block-bearing ones.
    """

    enabled: bool = False
    p_hat: float = 0.0
    p_con: float = 0.0
    nt_delay_ms: int = 0
    delay_all_messages: bool = False

    def validate(self) -> None:
        """Raise `NakaConfigError` if a parameter is out of range."""
        for name in ('p_hat', 'p_con'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise error.NakaConfigError('adversary.%s must lie in [0, 1] (got %r)' % (name, value))
        if self.nt_delay_ms < 0:
            raise error.NakaConfigError('adversary.nt_delay_ms must be >= 0 (got %r)' % self.nt_delay_ms)


@dataclass(frozen=True)
class AttackPlan:
    """Corrupted nodes and delayed directed links of one run.

    Attributes:
        corrupted: Ids of corrupted nodes.
        delayed_links: Directed links `(corrupted node, victim)` that get delayed.
        nt_delay_ms: Delay added on a delayed link.
        delay_all_messages: If False, only block-bearing messages are delayed.
    """

    corrupted: FrozenSet[NodeId] = field(default_factory=frozenset)
    delayed_links: FrozenSet[Tuple[NodeId, NodeId]] = field(default_factory=frozenset)
    nt_delay_ms: int = 0
    delay_all_messages: bool = False

    @property
    def active(self) -> bool:
        """True if at least one link gets delayed."""
        return bool(self.delayed_links) and self.nt_delay_ms > 0

    def is_marked(self, sender: NodeId, receiver: NodeId) -> bool:
        """True if messages from `sender` to `receiver` are delayed."""
        return (sender, receiver) in self.delayed_links

    def delay_ms(self, base_ms: int, sender: NodeId, receiver: NodeId, carries_block: bool) -> int:
        """Return the delay of a message after the attack is applied."""
        marked = (carries_block or self.delay_all_messages) and self.is_marked(sender, receiver)
        return delayed_link_delay(base_ms, marked, self.nt_delay_ms)


def assign_corruption(topology: Topology, cfg: AdversaryConfig, seed) -> AttackPlan:
    """Draw the corrupted nodes and their delayed links.

    Each node is corrupted independently with probability `p_hat`. A corrupted
    node then delays its messages to `ceil(p_con * degree)` of its neighbors,
    chosen once for the whole run.

    Args:
        topology: The network.
        cfg: Adversary parameters.
        seed: Seed (or `numpy.random.Generator`) of the adversary's draws.

    Returns:
        An `AttackPlan`; empty if the adversary is disabled.
    """
    if not cfg.enabled:
        return AttackPlan()

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    flags = rng.random(topology.n) < cfg.p_hat
    corrupted = frozenset(int(i) for i in np.flatnonzero(flags))

    links = set()
    for u in sorted(corrupted):
        peers = topology.neighbors[u]
        k = min(len(peers), int(math.ceil(cfg.p_con * len(peers))))
        if k == 0:
            continue
        for idx in rng.choice(len(peers), size=k, replace=False):
            links.add((u, peers[int(idx)]))

    logger.debug('Adversary corrupted %d of %d nodes, %d delayed links', len(corrupted), topology.n, len(links))

    return AttackPlan(
        corrupted=corrupted,
        delayed_links=frozenset(links),
        nt_delay_ms=cfg.nt_delay_ms,
        delay_all_messages=cfg.delay_all_messages,
    )


def delayed_link_delay(base_ms: int, marked: bool, nt_delay_ms: int) -> int:
    """Return `base_ms + nt_delay_ms` on a marked link, `base_ms` otherwise.

    Examples:
        >>> delayed_link_delay(179, True, 600_000)
        600179
    """
    if base_ms < 0:
        raise error.NakaDomainError('Base delay must be >= 0 (got %r)' % base_ms)
    return base_ms + nt_delay_ms if marked else base_ms
