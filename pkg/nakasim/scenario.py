# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Scenario configuration: presets, validation and the YAML file format.

A scenario file has the sections `scenario`, `security`, `network`, `gossip`
and `adversary`. An optional `scenario.preset` key selects one of the chain
presets as the base, and every other key overrides it. Every configuration,
whether it comes from a preset, a file or the command line, is checked by
`ScenarioConfig.validate`.
"""

import dataclasses
import logging
import re

from dataclasses import dataclass, field
from hashlib import blake2s
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

import yaml

import nakasim.error as error

from nakasim.adversary import AdversaryConfig
from nakasim.model import Protocol, SecurityParams
from nakasim.netmodel import DEFAULT_D_OUT, NetworkConfig
from nakasim.secmath import Characterization


logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE: int = 800_000
DEFAULT_N_VAL: int = 1000
DEFAULT_NUM_BLOCKS: int = 100
DEFAULT_RUNS: int = 5

MAX_SEED: int = 2**64

# fmt: off
# Block interval (seconds) and gossip protocol per chain
PRESETS: Dict[str, Tuple[float, Protocol]] = {
    'bitcoin':          (600.0, Protocol.COMPACT_BLOCKS_LOW),
    'cardano':          (20.0,  Protocol.ADVERTISEMENT_BASED),
    'monero':           (120.0, Protocol.DIRECT_PUSH),
    'ethereum_classic': (13.0,  Protocol.HYBRID_PUSH),
}
# fmt: on


@dataclass(frozen=True)
class GossipConfig:
    """Gossip knobs shared by the protocols.

    Attributes:
        timeout_ms: Time before an unanswered block request is sent to another peer.
        compact_fraction: Size of a compact block relative to the full block.
        missing_tx_probability: Probability that a compact block misses transactions.
        missing_tx_fraction: Size of the missing transactions relative to the block.
    """

    timeout_ms: int = 600_000
    compact_fraction: float = 0.02
    missing_tx_probability: float = 0.1
    missing_tx_fraction: float = 0.1

    def validate(self) -> None:
        """Raise `NakaConfigError` if a knob is out of range."""
        if self.timeout_ms <= 0:
            raise error.NakaConfigError('gossip.timeout_ms must be > 0 (got %r)' % self.timeout_ms)
        for name in ('compact_fraction', 'missing_tx_probability', 'missing_tx_fraction'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise error.NakaConfigError('gossip.%s must lie in [0, 1] (got %r)' % (name, value))


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of a simulation experiment."""

    n_val: int
    protocol: Protocol
    security: SecurityParams
    n_zp: int = 0
    block_size_bytes: int = DEFAULT_BLOCK_SIZE
    network: NetworkConfig = field(default_factory=NetworkConfig)
    gossip: GossipConfig = field(default_factory=GossipConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    d_out: int = DEFAULT_D_OUT
    seed: int = 0
    num_blocks: int = DEFAULT_NUM_BLOCKS
    runs: int = DEFAULT_RUNS

    @property
    def n(self) -> int:
        """Total number of nodes."""
        return self.n_val + self.n_zp

    def validate(self) -> 'ScenarioConfig':
        """Check every invariant of the scenario.

        Returns:
            The config itself, for chaining.

        Raises:
            NakaConfigError: Naming the offending `section.key`.
        """
        if self.n_val < 1:
            raise error.NakaConfigError('scenario.n_val must be >= 1 (got %r)' % self.n_val)
        if self.n_zp < 0:
            raise error.NakaConfigError('scenario.n_zp must be >= 0 (got %r)' % self.n_zp)
        if not isinstance(self.protocol, Protocol):
            raise error.NakaConfigError('scenario.protocol must be a Protocol (got %r)' % self.protocol)
        if self.block_size_bytes <= 0:
            raise error.NakaConfigError('scenario.block_size_bytes must be > 0 (got %r)' % self.block_size_bytes)
        if not 1 <= self.d_out < self.n:
            raise error.NakaConfigError('scenario.d_out must lie in [1, n) with n=%d (got %r)' % (self.n, self.d_out))
        if not 0 <= self.seed < MAX_SEED:
            raise error.NakaConfigError('scenario.seed must be a 64-bit unsigned integer (got %r)' % self.seed)
        if self.num_blocks < 1:
            raise error.NakaConfigError('scenario.num_blocks must be >= 1 (got %r)' % self.num_blocks)
        if self.runs < 1:
            raise error.NakaConfigError('scenario.runs must be >= 1 (got %r)' % self.runs)

        self.security.validate()
        self.network.validate()
        self.gossip.validate()
        self.adversary.validate()
        return self


def preset(chain_name: str, n_val: int = DEFAULT_N_VAL) -> ScenarioConfig:
    """Return the scenario of a chain.

    Args:
        chain_name: One of `bitcoin`, `cardano`, `monero` and `ethereum_classic`.
        n_val: Number of validators.

    Raises:
        NakaConfigError: If the chain is unknown.

    Examples:
        >>> preset('cardano').protocol
        <Protocol.ADVERTISEMENT_BASED: 'advertisement_based'>
    """
    return _preset_base(chain_name, n_val).validate()


def _preset_base(chain_name: str, n_val: int) -> ScenarioConfig:
    if chain_name not in PRESETS:
        raise error.NakaConfigError(
            'scenario.preset: unknown preset %r (choose from %s)' % (chain_name, ', '.join(sorted(PRESETS)))
        )

    interval_s, protocol = PRESETS[chain_name]
    return ScenarioConfig(
        n_val=n_val,
        protocol=protocol,
        security=SecurityParams(rho=1.0 / interval_s, e=1.0),
    )


# Sweepable knobs: key -> (section, field)
KNOBS: Dict[str, Tuple[Optional[str], str]] = {
    'n': (None, 'n_val'),
    'n_val': (None, 'n_val'),
    'n_zp': (None, 'n_zp'),
    'protocol': (None, 'protocol'),
    'd_out': (None, 'd_out'),
    'block_size_bytes': (None, 'block_size_bytes'),
    'num_blocks': (None, 'num_blocks'),
    'seed': (None, 'seed'),
    'overlay': ('network', 'overlay'),
    'verification_delay_ms': ('network', 'verification_delay_ms'),
    'p_hat': ('adversary', 'p_hat'),
    'p_con': ('adversary', 'p_con'),
    'nt_delay_ms': ('adversary', 'nt_delay_ms'),
    'adversary': ('adversary', 'enabled'),
}


def override(cfg: ScenarioConfig, key: str, value: Any) -> ScenarioConfig:
    """Return a copy of a scenario with one knob changed.

    Raises:
        NakaConfigError: If the knob is unknown.
    """
    if key not in KNOBS:
        raise error.NakaConfigError('Unknown knob %r (choose from %s)' % (key, ', '.join(sorted(KNOBS))))

    section, name = KNOBS[key]
    if name == 'protocol' and not isinstance(value, Protocol):
        value = _to_protocol(value, 'scenario.protocol')
    if section is None:
        return dataclasses.replace(cfg, **{name: value})

    sub = dataclasses.replace(getattr(cfg, section), **{name: value})
    return dataclasses.replace(cfg, **{section: sub})


# YAML file format
# =====================================================================
#
# Values are checked for their type while the file is converted; ranges and
# cross-field invariants are checked by ScenarioConfig.validate(). A
# NakaConfigError whose message starts with "<section>.<key>" is anchored to
# the line of that key.

_KEY_PATTERN = re.compile(r'^([a-z_]+)\.([A-Za-z_]+)')


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _to_int(value: Any, key: str) -> int:
    if not _is_int(value):
        raise error.NakaConfigError('%s must be an integer (got %r)' % (key, value))
    return value


def _to_float(value: Any, key: str) -> float:
    if not (_is_int(value) or isinstance(value, float)):
        raise error.NakaConfigError('%s must be a number (got %r)' % (key, value))
    return float(value)


def _to_number(value: Any, key: str) -> Union[int, float]:
    if not (_is_int(value) or isinstance(value, float)):
        raise error.NakaConfigError('%s must be a number (got %r)' % (key, value))
    return value


def _to_bool(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise error.NakaConfigError('%s must be true or false (got %r)' % (key, value))
    return value


def _to_protocol(value: Any, key: str) -> Protocol:
    try:
        return Protocol(value)
    except ValueError as e:
        raise error.NakaConfigError(
            '%s must be one of %s (got %r)' % (key, ', '.join(p.value for p in Protocol), value)
        ) from e


def _to_str_list(value: Any, key: str) -> Tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise error.NakaConfigError('%s must be a list of names' % key)
    return tuple(value)


def _to_vector(value: Any, key: str) -> Tuple[Union[int, float], ...]:
    if not isinstance(value, list):
        raise error.NakaConfigError('%s must be a list of numbers' % key)
    return tuple(_to_number(v, key) for v in value)


def _to_matrix(value: Any, key: str) -> Tuple[Tuple[Union[int, float], ...], ...]:
    if not isinstance(value, list):
        raise error.NakaConfigError('%s must be a list of rows' % key)
    return tuple(_to_vector(row, key) for row in value)


def _to_p_star(value: Any, key: str) -> Union[float, Characterization]:
    if isinstance(value, dict):
        if set(value) != {'characterization'}:
            raise error.NakaConfigError('%s must be a number or {characterization: [[q, c], ...]}' % key)
        entries = value['characterization']
        if not isinstance(entries, list) or not all(isinstance(e, list) and len(e) == 2 for e in entries):
            raise error.NakaConfigError('%s.characterization must be a list of [q, c] pairs' % key)
        try:
            return Characterization(tuple((_to_float(q, key), _to_float(c, key)) for q, c in entries))
        except error.NakaDomainError as e:
            raise error.NakaConfigError('%s: %s' % (key, e)) from e
    return _to_float(value, key)


# fmt: off
_SCHEMA: Dict[str, Dict[str, Callable[[Any, str], Any]]] = {
    'scenario': {
        'preset':           lambda v, k: v,
        'n_val':            _to_int,
        'n_zp':             _to_int,
        'protocol':         _to_protocol,
        'block_size_bytes': _to_int,
        'd_out':            _to_int,
        'seed':             _to_int,
        'num_blocks':       _to_int,
        'runs':             _to_int,
    },
    'security': {
        'rho':              _to_float,
        'e':                _to_float,
        'p_star':           _to_p_star,
    },
    'network': {
        'regions':               _to_str_list,
        'latency_ms':            _to_matrix,
        'upload_Bps':            _to_vector,
        'download_Bps':          _to_vector,
        'region_weights':        _to_vector,
        'verification_delay_ms': _to_int,
        'overlay':               _to_bool,
    },
    'gossip': {
        'timeout_ms':             _to_int,
        'compact_fraction':       _to_float,
        'missing_tx_probability': _to_float,
        'missing_tx_fraction':    _to_float,
    },
    'adversary': {
        'enabled':            _to_bool,
        'p_hat':              _to_float,
        'p_con':              _to_float,
        'nt_delay_ms':        _to_int,
        'delay_all_messages': _to_bool,
    },
}
# fmt: on


def from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    """Build and validate a scenario from its nested mapping form.

    Raises:
        NakaConfigError: On unknown keys, wrong types or failed validation.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise error.NakaConfigError('Configuration must be a mapping of sections')

    values: Dict[str, Dict[str, Any]] = {}
    for section, body in data.items():
        if section not in _SCHEMA:
            raise error.NakaConfigError('%s: unknown section' % section)
        if body is None:
            body = {}
        if not isinstance(body, dict):
            raise error.NakaConfigError('%s: section must be a mapping' % section)
        converted = {}
        for key, value in body.items():
            full_key = '%s.%s' % (section, key)
            if key not in _SCHEMA[section]:
                raise error.NakaConfigError('%s: unknown key' % full_key)
            converted[key] = _SCHEMA[section][key](value, full_key)
        values[section] = converted

    scen = dict(values.get('scenario', {}))
    security = values.get('security', {})

    chain = scen.pop('preset', None)
    if chain is not None:
        base = _preset_base(str(chain), scen.get('n_val', DEFAULT_N_VAL))
    else:
        for key in ('n_val', 'protocol'):
            if key not in scen:
                raise error.NakaConfigError('scenario.%s is required without a preset' % key)
        if 'rho' not in security:
            raise error.NakaConfigError('security.rho is required without a preset')
        base = ScenarioConfig(
            n_val=scen['n_val'],
            protocol=scen['protocol'],
            security=SecurityParams(rho=security['rho']),
        )

    cfg = dataclasses.replace(
        base,
        security=dataclasses.replace(base.security, **security),
        network=dataclasses.replace(base.network, **values.get('network', {})),
        gossip=dataclasses.replace(base.gossip, **values.get('gossip', {})),
        adversary=dataclasses.replace(base.adversary, **values.get('adversary', {})),
        **scen,
    )
    return cfg.validate()


def to_dict(cfg: ScenarioConfig) -> Dict[str, Dict[str, Any]]:
    """Return the fully explicit nested mapping form of a scenario."""
    p_star = cfg.security.p_star
    if isinstance(p_star, Characterization):
        p_star = {'characterization': [[q, c] for q, c in p_star.entries]}

    net = cfg.network
    return {
        'scenario': {
            'n_val': cfg.n_val,
            'n_zp': cfg.n_zp,
            'protocol': cfg.protocol.value,
            'block_size_bytes': cfg.block_size_bytes,
            'd_out': cfg.d_out,
            'seed': cfg.seed,
            'num_blocks': cfg.num_blocks,
            'runs': cfg.runs,
        },
        'security': {
            'rho': cfg.security.rho,
            'e': cfg.security.e,
            'p_star': p_star,
        },
        'network': {
            'regions': list(net.regions),
            'latency_ms': [list(row) for row in net.latency_ms],
            'upload_Bps': list(net.upload_Bps),
            'download_Bps': list(net.download_Bps),
            'region_weights': list(net.region_weights),
            'verification_delay_ms': net.verification_delay_ms,
            'overlay': net.overlay,
        },
        'gossip': dataclasses.asdict(cfg.gossip),
        'adversary': dataclasses.asdict(cfg.adversary),
    }


def _key_lines(text: str) -> Dict[str, int]:
    """Map `section` and `section.key` to their 1-based source lines."""
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    lines: Dict[str, int] = {}
    if not isinstance(root, yaml.MappingNode):
        return lines

    for section_node, body_node in root.value:
        section = str(section_node.value)
        lines[section] = section_node.start_mark.line + 1
        if isinstance(body_node, yaml.MappingNode):
            for key_node, _ in body_node.value:
                lines['%s.%s' % (section, key_node.value)] = key_node.start_mark.line + 1
    return lines


def loads_config(text: str, source: str = '<string>') -> ScenarioConfig:
    """Parse and validate a scenario from YAML text.

    Args:
        text: The YAML document.
        source: Name used in diagnostics.

    Returns:
        The validated `ScenarioConfig`.

    Raises:
        NakaConfigError: Formatted as `<source>:<line>: <message>` when the
            offending key can be located.
    """
    try:
        lines = _key_lines(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else None
        raise error.NakaConfigError('%s:%s: %s' % (source, line or '?', e), line=line) from e

    try:
        return from_dict(data)
    except error.NakaConfigError as e:
        line = None
        match = _KEY_PATTERN.match(str(e))
        if match:
            line = lines.get('%s.%s' % match.groups()) or lines.get(match.group(1))
        else:
            line = lines.get(str(e).split(':', 1)[0])
        raise error.NakaConfigError('%s:%s: %s' % (source, line or '?', e), line=line) from e


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises:
        NakaConfigError: If the file cannot be read or is invalid.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise error.NakaConfigError('Unable to read %s: %s' % (path, e)) from e

    logger.debug('Loading scenario from %s', path)
    return loads_config(text, source=str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    """Return the fully explicit YAML form of a scenario."""
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def config_hash(cfg: ScenarioConfig) -> str:
    """Return the BLAKE2s digest (hex) of the explicit YAML form."""
    return blake2s(dump_config(cfg).encode('utf-8'), digest_size=32).hexdigest()
