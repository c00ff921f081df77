# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only

import itertools
import math

import numpy as np
import pytest

from scipy import stats

import nakasim.error as error
import nakasim.secmath as secmath


CARDANO_FIT = (3.65, -7.37)
BITCOIN_FIT = (0.1, -0.04)


def test_f_beta_values():
    """
    Assert that f_beta() is zero at zero and matches the closed form

    """
    assert secmath.f_beta(0.0) == 0.0
    assert secmath.f_beta(0.25) == pytest.approx(0.375)
    assert secmath.f_beta(0.2, e=2) == pytest.approx(2 * 0.2 * 0.8 / 0.4)


def test_f_beta_outside_domain():
    """
    Assert that f_beta() rejects values at or beyond the pole

    """
    for beta in [-0.1, 0.5, 0.7]:
        with pytest.raises(error.NakaDomainError):
            secmath.f_beta(beta)

    with pytest.raises(error.NakaDomainError):
        secmath.f_beta(0.1, e=0.5)


def test_f_beta_strictly_increasing():
    """
    Assert that f_beta() grows strictly up to just below the pole

    """
    for e in [1, 2, 3]:
        grid = np.linspace(0.0, 1 / (1 + e) - 1e-6, 2001)
        values = np.array([secmath.f_beta(b, e) for b in grid])

        assert np.all(np.diff(values) > 0)


def test_f_beta_diverges_at_pole():
    """
    Assert that f_beta() exceeds 10^6 within 1e-7 of the pole

    """
    for e in [1, 2, 3]:
        assert secmath.f_beta(1 / (1 + e) - 1e-7, e) > 1e6


def test_beta_max_without_delay():
    """
    Assert that beta_max() is 1/(1+e) when there is no delay

    """
    assert secmath.beta_max(1 / 600, 0.0) == pytest.approx(0.5)
    assert secmath.beta_max(1 / 20, 0.0, e=3) == pytest.approx(0.25)


def test_beta_max_reference_values():
    """
    Assert that beta_max() reproduces the tabulated chain values

    """
    bitcoin = secmath.adversarial_delay(10, BITCOIN_FIT, 600)
    cardano = secmath.adversarial_delay(10**6, CARDANO_FIT)

    assert secmath.beta_max(1 / 600, bitcoin) == pytest.approx(0.3819, abs=1e-4)
    assert secmath.beta_max(1 / 20, cardano) == pytest.approx(0.2820, abs=1e-4)


def test_beta_max_is_boundary_of_security_condition():
    """
    Assert that f(beta_max) * rho * delta equals one

    """
    rho, delta = 1 / 20, 43.06
    bmax = secmath.beta_max(rho, delta)

    assert secmath.f_beta(bmax) * rho * delta == pytest.approx(1.0)


def test_beta_max_decreases_with_delay():
    """
    Assert that beta_max() decreases as the delay grows

    """
    values = [secmath.beta_max(1 / 20, d) for d in [0, 1, 10, 100, 1000]]

    assert all(a > b for a, b in zip(values, values[1:]))


def bisect_beta(rho, delta, e, steps=200):
    """
    Return the power where f(beta) * rho * delta reaches one, by bisection

    """
    lo, hi = 0.0, 1 / (1 + e)
    for _ in range(steps):
        mid = (lo + hi) / 2
        if secmath.f_beta(mid, e) * rho * delta < 1:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_beta_max_matches_bisection():
    """
    Assert that the closed form of beta_max() agrees with a numerical root

    """
    rng = np.random.default_rng(11)

    for _ in range(1000):
        rho = 10 ** rng.uniform(-3, 0)
        delta = 10 ** rng.uniform(-2, 4)
        e = rng.uniform(1, 5)

        assert secmath.beta_max(rho, delta, e) == pytest.approx(bisect_beta(rho, delta, e), abs=1e-9)


def test_beta_max_invalid_arguments():
    """
    Assert that beta_max() validates rate, delay and magnification

    """
    for args in [(0, 1), (-1, 1), (1, -1)]:
        with pytest.raises(error.NakaDomainError):
            secmath.beta_max(*args)

    with pytest.raises(error.NakaDomainError):
        secmath.beta_max(1, 1, e=0.9)


def test_is_secure_around_beta_max():
    """
    Assert that is_secure() accepts powers below beta_max and rejects those above

    """
    rho, delta = 1 / 20, 43.06

    below = secmath.is_secure(0.25, rho, delta)
    above = secmath.is_secure(0.3, rho, delta)

    assert below.secure and below.lhs == pytest.approx(0.375 * rho * delta)
    assert not above.secure and above.lhs > 1
    assert below.beta_max == above.beta_max == pytest.approx(0.2821, abs=1e-4)


def test_is_secure_beyond_pole():
    """
    Assert that is_secure() reports an infinite left-hand side beyond the pole

    """
    verdict = secmath.is_secure(0.6, 1 / 20, 10)

    assert not verdict.secure
    assert math.isinf(verdict.lhs)


def test_is_secure_invalid_beta():
    """
    Assert that is_secure() rejects powers outside [0, 1)

    """
    for beta in [-0.01, 1.0]:
        with pytest.raises(error.NakaDomainError):
            secmath.is_secure(beta, 1, 1)


def test_characterization_validation():
    """
    Assert that Characterization checks its values and frequencies

    """
    with pytest.raises(error.NakaDomainError):
        secmath.Characterization(())

    with pytest.raises(error.NakaDomainError):
        secmath.Characterization([(0.1, 0.5), (0.2, 0.4)])

    with pytest.raises(error.NakaDomainError):
        secmath.Characterization([(1.5, 1.0)])


def test_effective_p_star():
    """
    Assert that effective_p_star() weights type probabilities by frequency

    """
    ch = secmath.Characterization([(0.1, 0.25), (0.3, 0.75)])

    assert secmath.effective_p_star(ch) == pytest.approx(0.25)
    assert secmath.effective_p_star(0.125) == 0.125
    assert secmath.effective_p_star(secmath.Characterization.single(0.2)) == pytest.approx(0.2)

    with pytest.raises(error.NakaDomainError):
        secmath.effective_p_star(1.2)


def test_sample_corruption_is_deterministic():
    """
    Assert that sample_corruption() repeats itself for the same seed

    """
    first = secmath.sample_corruption(1000, 0.2, seed=7)
    second = secmath.sample_corruption(1000, 0.2, seed=7)

    assert first == second
    assert 0 <= first[0] <= 1000
    assert first[1] == first[0] / 1000


def test_sample_corruption_extremes():
    """
    Assert that sample_corruption() corrupts nobody at p=0 and everybody at p=1

    """
    assert secmath.sample_corruption(50, 0.0, seed=1) == (0, 0.0)
    assert secmath.sample_corruption(50, 1.0, seed=1) == (50, 1.0)

    with pytest.raises(error.NakaDomainError):
        secmath.sample_corruption(0, 0.1)


def test_sample_corruption_fractions_mean():
    """
    Assert that sampled corrupted fractions concentrate around p*

    """
    fractions = secmath.sample_corruption_fractions(10_000, 0.125, trials=200, seed=3)

    assert fractions.shape == (200,)
    assert abs(float(np.mean(fractions)) - 0.125) < 0.005


def test_sample_corruption_mixed_types_mean():
    """
    Assert that a population of several types is corrupted at rate p* on average

    """
    ch = secmath.Characterization([(0.02, 0.6), (0.5, 0.3), (0.9, 0.1)])
    fractions = [secmath.sample_corruption(5000, ch, seed=s)[1] for s in range(20)]

    assert secmath.effective_p_star(ch) == pytest.approx(0.252)
    assert float(np.mean(fractions)) == pytest.approx(0.252, abs=0.006)


def test_binomial_cdf_matches_scipy():
    """
    Assert that binomial_cdf() agrees with the binomial distribution

    """
    for k, n, p in [(0, 10, 0.3), (3, 10, 0.3), (12, 100, 0.125), (2636, 20000, 0.125)]:
        assert secmath.binomial_cdf(k, n, p) == pytest.approx(stats.binom.cdf(k, n, p), rel=1e-9)


def test_binomial_cdf_edges():
    """
    Assert that binomial_cdf() handles degenerate arguments

    """
    assert secmath.binomial_cdf(-1, 10, 0.5) == 0.0
    assert secmath.binomial_cdf(10, 10, 0.5) == 1.0
    assert secmath.binomial_cdf(3, 10, 0.0) == 1.0
    assert secmath.binomial_cdf(3, 10, 1.0) == 0.0


def test_binomial_cdf_large_population():
    """
    Assert that binomial_cdf() stays finite for a billion trials

    """
    n = 10**9

    assert secmath.binomial_cdf(int(0.2 * n), n, 0.1) == pytest.approx(1.0)
    assert secmath.binomial_cdf(int(0.05 * n), n, 0.1) == pytest.approx(0.0, abs=1e-12)


def test_nakamoto_coefficient(monkeypatch):
    """
    Assert that nakamoto_coefficient() floors beta_max times the validator count

    """
    monkeypatch.setattr(secmath, 'beta_max', lambda rho, delta_s, e=1.0: 0.13182)

    assert secmath.nakamoto_coefficient(20000, 1 / 20, 100) == 2636


def test_nakamoto_coefficient_invalid():
    """
    Assert that nakamoto_coefficient() needs at least one validator

    """
    with pytest.raises(error.NakaDomainError):
        secmath.nakamoto_coefficient(0, 1, 1)


def test_security_probability_small_network():
    """
    Assert the security probability of ten validators under a 100 second attack

    """
    delta = secmath.adversarial_delay(10, CARDANO_FIT, 100)

    assert secmath.security_probability(10, 0.125, 1 / 20, delta) == pytest.approx(0.639, abs=1e-3)


def test_security_probability_vanishes_beyond_limit():
    """
    Assert that the probability vanishes when p* exceeds the limiting beta_max

    """
    n = 10**9
    delta = secmath.adversarial_delay(n, CARDANO_FIT, 100)

    assert secmath.beta_max(1 / 20, delta) == pytest.approx(0.1049, abs=1e-4)
    assert secmath.security_probability(n, 0.11, 1 / 20, delta) < 1e-6


def test_security_probability_accepts_characterization():
    """
    Assert that a characterization gives the same result as its mean probability

    """
    ch = secmath.Characterization([(0.05, 0.5), (0.2, 0.5)])

    assert secmath.security_probability(1000, ch, 1 / 20, 20) == pytest.approx(
        secmath.security_probability(1000, 0.125, 1 / 20, 20)
    )


def test_security_probability_by_enumeration():
    """
    Assert that the probability equals the mass of all secure corruption patterns

    """
    rho = 1 / 20

    for n in [1, 5, 12, 20]:
        masks = np.arange(2**n)
        counts = sum((masks >> i) & 1 for i in range(n))

        for p, delta in itertools.product([0.05, 0.125, 0.3, 0.6], [0.0, 43.06, 300.0]):
            weights = p**counts * (1 - p) ** (n - counts)
            secure = counts <= secmath.beta_max(rho, delta) * n
            expected = math.fsum(weights[secure])

            assert secmath.security_probability(n, p, rho, delta) == pytest.approx(expected, abs=1e-12)


def test_security_probability_non_increasing():
    """
    Assert that more corruption or more delay never makes the network safer

    """
    by_p_star = [secmath.security_probability(200, p, 1 / 20, 43.06) for p in np.linspace(0, 1, 41)]
    by_delay = [secmath.security_probability(200, 0.2, 1 / 20, d) for d in [0, 1, 10, 43.06, 100, 1000, 1e4]]

    assert by_p_star[0] == 1.0 and by_p_star[-1] == 0.0
    assert all(a >= b for a, b in zip(by_p_star, by_p_star[1:]))
    assert all(a >= b for a, b in zip(by_delay, by_delay[1:]))


def test_chernoff_bound():
    """
    Assert that chernoff_bound() follows the closed form and validates eps

    """
    assert secmath.chernoff_bound(100, 0.1, 0.05) == pytest.approx(2 * math.exp(-100 * 0.0025 / 0.3))
    assert secmath.chernoff_bound(1, 0.1, 0.01) == 1.0

    with pytest.raises(error.NakaDomainError):
        secmath.chernoff_bound(100, 0.1, 0.1)


def test_chernoff_bound_covers_sampled_deviations():
    """
    Assert that sampled deviations from p* are no more frequent than the bound

    """
    fractions = secmath.sample_corruption_fractions(10_000, 0.125, trials=100_000, seed=5)

    for eps in [0.005, 0.01, 0.02]:
        observed = float(np.mean(np.abs(fractions - 0.125) >= eps))

        assert observed <= secmath.chernoff_bound(10_000, 0.125, eps)


def test_log_grid():
    """
    Assert that log_grid() returns sorted distinct integers covering the range

    """
    grid = secmath.log_grid(10, 1000, points_per_decade=10)

    assert grid[0] == 10 and grid[-1] == 1000
    assert np.all(np.diff(grid) > 0)

    with pytest.raises(error.NakaDomainError):
        secmath.log_grid(100, 10)


def test_adversarial_delay():
    """
    Assert that adversarial_delay() adds the attack delay and floors at zero

    """
    assert secmath.adversarial_delay(10, BITCOIN_FIT, 600) == pytest.approx(600.19, abs=0.01)
    assert secmath.adversarial_delay(1, (1.0, -5.0)) == 0.0
    assert secmath.delay_function(CARDANO_FIT, 100)(10) == secmath.adversarial_delay(10, CARDANO_FIT, 100)

    with pytest.raises(error.NakaDomainError):
        secmath.adversarial_delay(0, BITCOIN_FIT)


def test_turnaround_under_attack():
    """
    Assert that the security probability peaks between 10^4 and 4*10^4 validators

    """
    delay = secmath.delay_function(CARDANO_FIT, 100)

    t = secmath.turnaround(0.125, 1 / 20, 1.0, delay, (10, 10**7))

    assert 10**4 <= t.n_star <= 4 * 10**4
    assert t.p_peak > 0.639


def test_max_tolerable_delay_unbounded_without_corruption():
    """
    Assert that any delay is tolerated when nobody can be corrupted

    """
    result = secmath.max_tolerable_delay(1000, 0.0, 1 / 20)

    assert result.status == 'unbounded'
    assert math.isinf(result.delay_s)


def test_max_tolerable_delay_unreachable():
    """
    Assert that an unreachable target yields a zero delay

    """
    result = secmath.max_tolerable_delay(10, 0.9, 1 / 20)

    assert result == secmath.TolerableDelay(0.0, 'unreachable')


def test_max_tolerable_delay_meets_target():
    """
    Assert that the tolerable delay sits on the target boundary

    """
    result = secmath.max_tolerable_delay(1000, 0.1, 1 / 20, target=0.9)

    assert result.status == 'bounded'
    assert secmath.security_probability(1000, 0.1, 1 / 20, result.delay_s) >= 0.9
    assert secmath.security_probability(1000, 0.1, 1 / 20, result.delay_s + 1.0) < 0.9


def test_max_tolerable_delay_non_increasing_in_p_star():
    """
    Assert that a larger corruption probability never tolerates more delay

    """
    delays = [secmath.max_tolerable_delay(1000, p, 1 / 20).delay_s for p in [0.05, 0.1, 0.125]]

    assert all(a >= b for a, b in zip(delays, delays[1:]))


def test_max_tolerable_delay_invalid_target():
    """
    Assert that the target must lie strictly between zero and one

    """
    for target in [0.0, 1.0]:
        with pytest.raises(error.NakaDomainError):
            secmath.max_tolerable_delay(100, 0.1, 1, target=target)
