"""Package for simulating block propagation and analysing the security of Nakamoto-style blockchains.

Modules:
    secmath: Closed-form security condition, tolerable adversarial power and security probability.
    model: Shared vocabulary for nodes, blocks, gossip protocols and security parameters.
    netmodel: Region tables, link delays, random topologies and their diameter.
    adversary: Corruption assignment and delayed links of a network-layer adversary.
    scenario: Scenario configuration, chain presets and the YAML file format.
    proto: Gossip message kinds and the relay rules of the gossip protocols.
    simengine: Discrete-event engine and delay metrics.
    experiments: Sweeps, delay regressions and analytical reproduction pipelines.
    report: Output directories, CSV files, Markdown tables and manifests.
    plots: Line charts written next to CSV files.
    error: Exceptions used by the package modules.
"""
