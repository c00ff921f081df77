# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only

import dataclasses
import math

import networkx as nx
import numpy as np
import pytest

from scipy import stats

import nakasim.error as error
import nakasim.netmodel as netmodel

from nakasim.model import NodeProfile, Protocol, Role, SecurityParams
from nakasim.scenario import ScenarioConfig


def create_profile(node_id=0, region=0, power=0.5):
    """
    Create a validator profile in the given region

    """
    return NodeProfile(node_id, Role.VALIDATOR, region, power)


def create_scenario(n_val=50, n_zp=0, d_out=8, overlay=False):
    """
    Create a scenario for topology tests

    """
    return ScenarioConfig(
        n_val=n_val,
        protocol=Protocol.DIRECT_PUSH,
        security=SecurityParams(rho=1 / 20),
        n_zp=n_zp,
        network=netmodel.NetworkConfig(overlay=overlay),
        d_out=d_out,
    )


def test_default_tables_are_consistent():
    """
    Assert that the default region tables validate

    """
    cfg = netmodel.default_network()

    cfg.validate()

    assert len(cfg.regions) == 7
    assert cfg.download_Bps[0] == netmodel.DOWNLOAD_FACTOR * cfg.upload_Bps[0]


def test_network_config_validation():
    """
    Assert that inconsistent tables are rejected with the offending key

    """
    bad = [
        (dict(regions=()), 'network.regions'),
        (dict(latency_ms=((1, 2),)), 'network.latency_ms'),
        (dict(region_weights=(1.0,)), 'network.region_weights'),
        (dict(region_weights=(0.5, 0.5, 0, 0, 0, 0, 0.5)), 'network.region_weights'),
        (dict(verification_delay_ms=-1), 'network.verification_delay_ms'),
    ]
    for kwargs, key in bad:
        with pytest.raises(error.NakaConfigError, match=key):
            dataclasses.replace(netmodel.default_network(), **kwargs).validate()


def test_link_delay_small_message():
    """
    Assert that an empty message only costs the region latency

    """
    na = create_profile(region=0)

    assert netmodel.link_delay_ms(na, na, 0, netmodel.default_network()) == 24


def test_link_delay_full_block():
    """
    Assert the delay of a full block inside a region

    """
    eu = create_profile(region=1)
    na = create_profile(region=0)
    cfg = netmodel.default_network()

    assert netmodel.link_delay_ms(eu, eu, 800_000, cfg) == 179
    assert netmodel.link_delay_ms(na, na, 800_000, cfg) == 142
    assert netmodel.link_delay_ms(na, na, 61, cfg) == 25


def test_link_delay_uses_larger_directed_latency():
    """
    Assert that propagation takes the larger of the two directed latencies

    """
    cfg = netmodel.default_network()

    assert netmodel.propagation_ms(0, 3, cfg) == 122
    assert netmodel.propagation_ms(3, 0, cfg) == 122


def test_link_delay_overlay():
    """
    Assert that dedicated links use their own latency and bandwidth

    """
    eu = create_profile(region=1)

    assert netmodel.link_delay_ms(eu, eu, 800_000, netmodel.default_network(), overlay=True) == 17


def test_transmission_negative_size():
    """
    Assert that negative message sizes are rejected

    """
    with pytest.raises(error.NakaDomainError):
        netmodel.transmission_ms(0, 0, -1, netmodel.default_network())


def test_topology_validation():
    """
    Assert that Topology rejects self-loops, duplicates and sparse ids

    """
    profiles = [create_profile(0), create_profile(1)]

    with pytest.raises(error.NakaTopologyError):
        netmodel.Topology(((0,), ()), profiles)

    with pytest.raises(error.NakaTopologyError):
        netmodel.Topology(((1, 1), ()), profiles)

    with pytest.raises(error.NakaTopologyError):
        netmodel.Topology(((2,), ()), profiles)

    with pytest.raises(error.NakaTopologyError):
        netmodel.Topology(((1,), ()), [create_profile(0), create_profile(2)])


def test_topology_neighbors_outbound_first():
    """
    Assert that gossip peers list outbound before inbound connections

    """
    profiles = [create_profile(i, power=0.25) for i in range(4)]
    t = netmodel.Topology(((1,), (2,), (), (1,)), profiles)

    assert t.neighbors[1] == (2, 0, 3)
    assert t.neighbors[2] == (1,)
    assert t.degree(1) == 3


def test_build_topology_is_connected_and_bounded():
    """
    Assert that every node opens d_out distinct connections in a connected graph

    """
    cfg = create_scenario(n_val=40, n_zp=10, d_out=4)

    t = netmodel.build_topology(cfg, seed=3)

    assert t.n == 50
    assert nx.is_connected(t.graph())
    assert all(len(outs) == 4 and len(set(outs)) == 4 for outs in t.adjacency)
    assert sum(1 for p in t.profiles if p.role is Role.ZERO_POWER) == 10
    assert sum(p.relative_power for p in t.profiles) == pytest.approx(1.0)


def test_build_topology_is_deterministic():
    """
    Assert that the same seed builds the same topology

    """
    cfg = create_scenario()

    assert netmodel.build_topology(cfg, 9) == netmodel.build_topology(cfg, 9)
    assert netmodel.build_topology(cfg, 9) != netmodel.build_topology(cfg, 10)


def test_build_topology_invalid_sizes():
    """
    Assert that too small networks and too many connections are rejected

    """
    with pytest.raises(error.NakaTopologyError):
        netmodel.build_topology(create_scenario(n_val=1, d_out=1), seed=0)

    with pytest.raises(error.NakaTopologyError):
        netmodel.build_topology(create_scenario(n_val=5, d_out=5), seed=0)


def test_build_topology_disconnected(monkeypatch):
    """
    Assert that construction gives up after repeated disconnected graphs

    """
    monkeypatch.setattr(netmodel.nx, 'is_connected', lambda g: False)

    with pytest.raises(error.NakaTopologyError):
        netmodel.build_topology(create_scenario(), seed=0)


def test_build_topology_overlay_links_validators_only():
    """
    Assert that only links between two validators use the dedicated network

    """
    cfg = create_scenario(n_val=20, n_zp=20, d_out=3, overlay=True)

    t = netmodel.build_topology(cfg, seed=1)

    assert t.overlay
    for a, b in t.overlay:
        assert t.profiles[a].is_validator and t.profiles[b].is_validator
        assert t.is_overlay(b, a)


def test_estimate_diameter_exact():
    """
    Assert the diameter of a line

    """
    profiles = [create_profile(i, power=0.25) for i in range(4)]
    t = netmodel.Topology(((1,), (2,), (3,), ()), profiles)

    assert netmodel.estimate_diameter(t) == 3


def test_estimate_diameter_sampled(monkeypatch):
    """
    Assert that double-sweep estimation finds the diameter of a line

    """
    monkeypatch.setattr(netmodel, 'EXACT_DIAMETER_LIMIT', 2)

    profiles = [create_profile(i, power=0.2) for i in range(5)]
    t = netmodel.Topology(((1,), (2,), (3,), (4,), ()), profiles)

    assert netmodel.estimate_diameter(t, seed=4) == 4


def test_estimate_diameter_disconnected():
    """
    Assert that a disconnected topology has no diameter

    """
    profiles = [create_profile(i, power=0.25) for i in range(4)]
    t = netmodel.Topology(((1,), (), (3,), ()), profiles)

    with pytest.raises(error.NakaTopologyError):
        netmodel.estimate_diameter(t)


def test_region_frequencies_follow_weights():
    """
    Assert that node placement follows the region weights

    """
    cfg = create_scenario(n_val=2000)

    freqs = netmodel.region_frequencies(netmodel.build_topology(cfg, 0), cfg.network.regions)

    assert freqs['NA'] == pytest.approx(0.33, abs=0.05)
    assert freqs['EU'] == pytest.approx(0.47, abs=0.05)
    assert sum(freqs.values()) == pytest.approx(1.0)


def test_region_frequencies_chi_square():
    """
    Assert that region counts are consistent with the weights under a chi-square test

    """
    cfg = create_scenario(n_val=5000)
    t = netmodel.build_topology(cfg, 3)

    freqs = netmodel.region_frequencies(t, cfg.network.regions)
    observed = np.array([round(freqs[r] * t.n) for r in cfg.network.regions])
    expected = np.array(cfg.network.region_weights) * t.n

    assert observed.sum() == t.n
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_estimate_diameter_complete_and_ring():
    """
    Assert the diameters of a complete graph and of a ring

    """
    complete = netmodel.Topology(
        tuple(tuple(range(i + 1, 5)) for i in range(5)), [create_profile(i, power=0.2) for i in range(5)]
    )
    ring = netmodel.Topology(
        tuple(((i + 1) % 6,) for i in range(6)), [create_profile(i, power=1 / 6) for i in range(6)]
    )

    assert netmodel.estimate_diameter(complete) == 1
    assert netmodel.estimate_diameter(ring) == 3


@pytest.mark.slow
def test_diameter_grows_with_log_of_size():
    """
    Assert that the diameter stays within a constant band around ln(n)

    """
    sizes = [10**2, 10**3, 10**4, 10**5]
    topologies = [netmodel.build_topology(create_scenario(n_val=n), 1) for n in sizes]
    diameters = [netmodel.estimate_diameter(t, seed=1) for t in topologies]
    ratios = [d / math.log(n) for d, n in zip(diameters, sizes)]

    assert max(ratios) / min(ratios) <= 3
    for small, large in zip(diameters, diameters[1:]):
        assert large - small <= small
