# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Closed-form security analysis of Nakamoto-style blockchains.

This module implements the analytical side of the package: the security
condition relating adversarial power, block rate and maximum delay, the
maximum tolerable adversarial power, the probabilistic corruption model
(characterizations, sampling, concentration bound) and the resulting
probability that a network of a given size is secure.

Analytical quantities are real-valued and expressed in seconds. All functions
are pure; sampling functions take an explicit seed or `numpy.random.Generator`.
"""

import logging
import math

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence, Tuple, Union

import numpy as np

from scipy import special, stats

import nakasim.error as error


logger = logging.getLogger(__name__)

# Allowed deviation of the type frequencies from a probability vector
FREQUENCY_TOLERANCE: float = 1e-12

# Largest validator count evaluated with log-space binomial terms
LOG_SPACE_LIMIT: int = 10**6

# Resolution of the grid searched for the turnaround point
POINTS_PER_DECADE: int = 20

# Absolute tolerance (seconds) of the maximum tolerable delay search
DELAY_TOLERANCE_S: float = 1e-3

# Delays beyond this value are reported as unbounded
UNBOUNDED_DELAY_S: float = 1e12

Seed = Union[int, np.random.Generator, None]
LogFit = Tuple[float, float]


@dataclass(frozen=True)
class Characterization:
    """Probabilistic corruption model of a validator population.

    Each entry is a pair `(q, c)`: a validator is of type `i` with probability
    `c_i`, and a validator of that type gets corrupted with probability `q_i`.

    Raises:
        NakaDomainError: If the list is empty, a value lies outside [0, 1] or
            the frequencies do not sum to one.

    Examples:
        >>> ch = Characterization([(0.1, 0.5), (0.2, 0.5)])
        >>> round(effective_p_star(ch), 6)
        0.15
    """

    entries: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        """Normalize entries to a tuple of float pairs and validate them."""
        entries = tuple((float(q), float(c)) for q, c in self.entries)
        object.__setattr__(self, 'entries', entries)

        if not entries:
            raise error.NakaDomainError('Characterization must not be empty')
        for q, c in entries:
            if not (0.0 <= q <= 1.0 and 0.0 <= c <= 1.0):
                raise error.NakaDomainError(
                    'Characterization values must lie in [0, 1] (%r, %r)' % (q, c)
                )
        total = math.fsum(c for _, c in entries)
        if abs(total - 1.0) > FREQUENCY_TOLERANCE:
            raise error.NakaDomainError(
                'Type frequencies must sum to 1 (got %.15g)' % total
            )

    @classmethod
    def single(cls, p_star: float) -> 'Characterization':
        """Return a characterization with one validator type."""
        return cls(((p_star, 1.0),))

    @property
    def probabilities(self) -> np.ndarray:
        """Corruption probability of each type."""
        return np.array([q for q, _ in self.entries], dtype=float)

    @property
    def frequencies(self) -> np.ndarray:
        """Frequency of each type."""
        return np.array([c for _, c in self.entries], dtype=float)


@dataclass(frozen=True)
class SecurityVerdict:
    """Outcome of the security condition for one parameter set.

    Attributes:
        secure: True if the security condition holds.
        lhs: Value of `f(beta) * rho * delta`; infinite at or beyond the pole.
        beta_max: Largest adversarial power tolerated for the same rate and delay.
    """

    secure: bool
    lhs: float
    beta_max: float


class Turnaround(NamedTuple):
    """Network size maximizing the security probability, and that probability."""

    n_star: int
    p_peak: float


class TolerableDelay(NamedTuple):
    """Result of a maximum tolerable delay search.

    `status` is one of `'bounded'`, `'unbounded'` (any delay is tolerated,
    `delay_s` is infinite) or `'unreachable'` (the target is missed even
    without delay, `delay_s` is zero).
    """

    delay_s: float
    status: str


def _check_e(e: float) -> None:
    if not e >= 1.0:
        raise error.NakaDomainError('Magnification factor must be >= 1 (got %r)' % e)


def _check_rate_delay(rho: float, delta_s: float) -> None:
    if not rho > 0.0:
        raise error.NakaDomainError('Block rate must be positive (got %r)' % rho)
    if not delta_s >= 0.0:
        raise error.NakaDomainError('Delay must be non-negative (got %r)' % delta_s)


def _check_probability(p: float, name: str = 'p_star') -> None:
    if not 0.0 <= p <= 1.0:
        raise error.NakaDomainError('%s must lie in [0, 1] (got %r)' % (name, p))


def generator(seed: Seed) -> np.random.Generator:
    """Return a `numpy.random.Generator` for a seed (or pass one through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def f_beta(beta: float, e: float = 1.0) -> float:
    """Return `f(beta) = e*beta*(1-beta) / (1 - beta*(1+e))`.

    The function is zero at `beta = 0`, strictly increasing and diverges at the
    pole `1/(1+e)`.

    Args:
        beta: Adversarial power, in `[0, 1/(1+e))`.
        e: Magnification factor (>= 1).

    Returns:
        The value of `f(beta)`.

    Raises:
        NakaDomainError: If `beta` lies outside `[0, 1/(1+e))` or `e < 1`.

    Examples:
        >>> f_beta(0.25)
        0.375
    """
    _check_e(e)
    if not 0.0 <= beta < 1.0 / (1.0 + e):
        raise error.NakaDomainError(
            'beta must lie in [0, 1/(1+e)) = [0, %.6g) (got %r)' % (1.0 / (1.0 + e), beta)
        )
    return e * beta * (1.0 - beta) / (1.0 - beta * (1.0 + e))


def beta_max(rho: float, delta_s: float, e: float = 1.0) -> float:
    """Return the largest adversarial power tolerated for a rate and a delay.

    This is the smaller root of `C*b^2 - (C+1+e)*b + 1 = 0` with
    `C = e*rho*delta`, i.e. the value where the security condition turns into
    an equality. It is evaluated as `2 / ((C+1+e) + sqrt((C+1+e)^2 - 4C))`,
    which equals the usual closed form but stays accurate for small `C` and
    yields the limit `1/(1+e)` at `delta = 0`.

    Args:
        rho: Block rate (blocks per second).
        delta_s: Maximum delay (seconds).
        e: Magnification factor.

    Returns:
        The maximum tolerable adversarial power, in `(0, 1/(1+e)]`.

    Raises:
        NakaDomainError: If `rho <= 0`, `delta_s < 0` or `e < 1`.

    Examples:
        >>> round(beta_max(1 / 20, 43.06), 4)
        0.2821
    """
    _check_e(e)
    _check_rate_delay(rho, delta_s)

    c = e * rho * delta_s
    s = c + 1.0 + e
    return 2.0 / (s + math.sqrt(s * s - 4.0 * c))


def is_secure(beta: float, rho: float, delta_s: float, e: float = 1.0) -> SecurityVerdict:
    """Decide the security condition `e*beta < (1-beta) / (1 + (1-beta)*rho*delta)`.

    Args:
        beta: Adversarial power, in `[0, 1)`.
        rho: Block rate (blocks per second).
        delta_s: Maximum delay (seconds).
        e: Magnification factor.

    Returns:
        A `SecurityVerdict`. Any `beta >= 1/(1+e)` is insecure with an
            infinite left-hand side.

    Raises:
        NakaDomainError: If an argument lies outside its domain.
    """
    _check_e(e)
    _check_rate_delay(rho, delta_s)
    if not 0.0 <= beta < 1.0:
        raise error.NakaDomainError('beta must lie in [0, 1) (got %r)' % beta)

    bmax = beta_max(rho, delta_s, e)

    if beta >= 1.0 / (1.0 + e):
        return SecurityVerdict(secure=False, lhs=math.inf, beta_max=bmax)

    lhs = f_beta(beta, e) * rho * delta_s
    return SecurityVerdict(secure=lhs < 1.0, lhs=lhs, beta_max=bmax)


def effective_p_star(ch: Union[Characterization, float]) -> float:
    """Return the mean corruption probability `p* = sum(c_i * q_i)`.

    A plain number is accepted as a single-type characterization.
    """
    if isinstance(ch, Characterization):
        return math.fsum(q * c for q, c in ch.entries)

    p = float(ch)
    _check_probability(p)
    return p


def sample_corruption(
    n_val: int, ch: Union[Characterization, float], seed: Seed = None
) -> Tuple[int, float]:
    """Sample the number and fraction of corrupted validators.

    Every validator independently draws its type from the type frequencies
    and is then corrupted with the probability of that type.

    Args:
        n_val: Number of validators (>= 1).
        ch: The characterization (or a plain corruption probability).
        seed: Seed or generator for the draws.

    Returns:
        Number of corrupted validators
        Fraction of corrupted validators

    Raises:
        NakaDomainError: If `n_val < 1`.
    """
    if n_val < 1:
        raise error.NakaDomainError('n_val must be >= 1 (got %r)' % n_val)
    if not isinstance(ch, Characterization):
        ch = Characterization.single(effective_p_star(ch))

    rng = generator(seed)
    freqs = ch.frequencies
    types = rng.choice(len(freqs), size=n_val, p=freqs / freqs.sum())
    corrupted = rng.random(n_val) < ch.probabilities[types]

    count = int(np.count_nonzero(corrupted))
    return count, count / n_val


def sample_corruption_fractions(
    n_val: int, p_star: Union[Characterization, float], trials: int, seed: Seed = None
) -> np.ndarray:
    """Sample corrupted fractions for many independent populations at once.

    Only the marginal corruption probability matters for the fraction, so
    each population is drawn as a single `Binomial(n_val, p*)` variate.

    Returns:
        An array of `trials` corrupted fractions.
    """
    if n_val < 1 or trials < 1:
        raise error.NakaDomainError('n_val and trials must be >= 1')

    rng = generator(seed)
    return rng.binomial(n_val, effective_p_star(p_star), size=trials) / n_val


def binomial_cdf(k: int, n: int, p: float) -> float:
    """Return `P(X <= k)` for `X ~ Binomial(n, p)`.

    Up to `LOG_SPACE_LIMIT` trials the terms are summed in log space; above
    that the regularized incomplete beta identity (`scipy.special.bdtr`) is
    used, which stays finite for populations of 10^9 and more.
    """
    _check_probability(p, 'p')
    if k < 0:
        return 0.0
    if k >= n or p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0

    if n <= LOG_SPACE_LIMIT:
        terms = stats.binom.logpmf(np.arange(k + 1), n, p)
        return float(min(1.0, math.exp(special.logsumexp(terms))))

    return float(special.bdtr(k, n, p))


def nakamoto_coefficient(n_val: int, rho: float, delta_s: float, e: float = 1.0) -> int:
    """Return `g(n) = floor(beta_max * n_val)`.

    This is the largest number of corrupted validators the network tolerates;
    one more validator is needed to threaten it.
    """
    if n_val < 1:
        raise error.NakaDomainError('n_val must be >= 1 (got %r)' % n_val)

    g = math.floor(beta_max(rho, delta_s, e) * n_val)
    return max(0, min(n_val, g))


def security_probability(
    n_val: int,
    p_star: Union[Characterization, float],
    rho: float,
    delta_s: float,
    e: float = 1.0,
) -> float:
    """Return the probability that the blockchain is secure.

    The network is secure if at most `g(n)` validators end up corrupted, so
    the probability is the binomial cumulative distribution
    `F(g(n); n_val, p*)`.

    Args:
        n_val: Number of validators.
        p_star: Corruption probability (or characterization).
        rho: Block rate (blocks per second).
        delta_s: Maximum delay (seconds).
        e: Magnification factor.

    Returns:
        The security probability, in `[0, 1]`.

    Examples:
        >>> round(security_probability(10, 0.125, 1 / 20, 101.04), 3)
        0.639
    """
    p = effective_p_star(p_star)
    g = nakamoto_coefficient(n_val, rho, delta_s, e)
    return binomial_cdf(g, n_val, p)


def chernoff_bound(n_val: int, p_star: float, eps: float) -> float:
    """Return the bound `2*exp(-n_val*eps^2 / (3*p*))` on `P(|fraction - p*| >= eps)`.

    The value is clamped to 1 for reporting.

    Raises:
        NakaDomainError: If `eps` lies outside `[0, p*)`.
    """
    p = effective_p_star(p_star)
    if not 0.0 <= eps < p:
        raise error.NakaDomainError('eps must lie in [0, p*) = [0, %r) (got %r)' % (p, eps))

    return min(1.0, 2.0 * math.exp(-n_val * eps * eps / (3.0 * p)))


def log_grid(lo: float, hi: float, points_per_decade: int = POINTS_PER_DECADE) -> np.ndarray:
    """Return distinct integers spaced logarithmically over `[lo, hi]`.

    Raises:
        NakaDomainError: If the range is empty or starts below 1.
    """
    if lo < 1 or hi < lo:
        raise error.NakaDomainError('Invalid range [%r, %r]' % (lo, hi))

    decades = math.log10(hi / lo)
    num = max(2, int(math.ceil(decades * points_per_decade)) + 1)
    grid = np.round(np.logspace(math.log10(lo), math.log10(hi), num))
    return np.unique(grid.astype(np.int64))


def adversarial_delay(n: int, fit: LogFit, nt_max_s: float = 0.0) -> float:
    """Return the delay bound `a*ln(n) + b + nt_max` (floored at zero).

    Args:
        n: Number of nodes.
        fit: Pair `(a, b)` of a logarithmic delay regression, in seconds.
        nt_max_s: Delay induced by a network-layer adversary, in seconds.

    Examples:
        >>> round(adversarial_delay(10, (0.1, -0.04), 600), 2)
        600.19
    """
    if n < 1:
        raise error.NakaDomainError('n must be >= 1 (got %r)' % n)
    if nt_max_s < 0:
        raise error.NakaDomainError('nt_max_s must be >= 0 (got %r)' % nt_max_s)

    a, b = fit
    return max(0.0, a * math.log(n) + b + nt_max_s)


def delay_function(fit: LogFit, nt_max_s: float = 0.0) -> Callable[[int], float]:
    """Return `n -> adversarial_delay(n, fit, nt_max_s)`."""

    def delay(n: int) -> float:
        return adversarial_delay(n, fit, nt_max_s)

    return delay


def turnaround(
    p_star: Union[Characterization, float],
    rho: float,
    e: float,
    delay_fn: Callable[[int], float],
    n_range: Sequence[float],
    n_zp: int = 0,
    points_per_decade: int = POINTS_PER_DECADE,
) -> Turnaround:
    """Find the validator count that maximizes the security probability.

    The search runs over a logarithmic grid; ties go to the larger network.
    The delay is evaluated for the whole network (`n + n_zp`) while the
    corruption tail runs over validators only.

    Args:
        p_star: Corruption probability (or characterization).
        rho: Block rate (blocks per second).
        e: Magnification factor.
        delay_fn: Maximum delay (seconds) as a function of the node count.
        n_range: Pair `(lo, hi)` of validator counts.
        n_zp: Zero-power nodes added to the network.
        points_per_decade: Grid resolution.

    Raises:
        NakaDomainError: If the range is empty.
    """
    lo, hi = n_range
    grid = log_grid(lo, hi, points_per_decade)
    probs = np.array(
        [
            security_probability(int(n), p_star, rho, delay_fn(int(n) + n_zp), e)
            for n in grid
        ]
    )

    idx = len(probs) - 1 - int(np.argmax(probs[::-1]))
    return Turnaround(n_star=int(grid[idx]), p_peak=float(probs[idx]))


def max_tolerable_delay(
    n_val: int,
    p_star: Union[Characterization, float],
    rho: float,
    e: float = 1.0,
    target: float = 0.9,
) -> TolerableDelay:
    """Return the largest delay for which the security probability meets a target.

    The security probability is non-increasing in the delay, so the boundary
    is bracketed by doubling and refined by bisection to `DELAY_TOLERANCE_S`.

    Args:
        n_val: Number of validators.
        p_star: Corruption probability (or characterization).
        rho: Block rate (blocks per second).
        e: Magnification factor.
        target: Required security probability, in `(0, 1)`.

    Returns:
        A `TolerableDelay`.

    Raises:
        NakaDomainError: If `target` lies outside `(0, 1)`.
    """
    if not 0.0 < target < 1.0:
        raise error.NakaDomainError('target must lie in (0, 1) (got %r)' % target)

    def prob(delta_s: float) -> float:
        return security_probability(n_val, p_star, rho, delta_s, e)

    if prob(0.0) < target:
        logger.warning(
            'Target %.3g unreachable for n_val=%d even without delay', target, n_val
        )
        return TolerableDelay(0.0, 'unreachable')

    lo, hi = 0.0, 1.0
    while prob(hi) >= target:
        lo, hi = hi, hi * 2.0
        if hi > UNBOUNDED_DELAY_S:
            return TolerableDelay(math.inf, 'unbounded')

    while hi - lo > DELAY_TOLERANCE_S:
        mid = (lo + hi) / 2.0
        if prob(mid) >= target:
            lo = mid
        else:
            hi = mid

    return TolerableDelay(lo, 'bounded')
