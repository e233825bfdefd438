import math

import numpy as np
import pytest

import oracles
from polymer_lab.environment import Environment, sample_environment, shift
from polymer_lab.errors import IncompatibleEnvironmentsError
from polymer_lab.polymer import (
    PolymerSpec,
    ScaledSpec,
    bridge_marginal,
    gibbs_marginals,
    log_normalized_partition,
    log_partition,
    quenched_overlap,
)
from polymer_lab.replica import annealed_tilted_mean_conditioned


def random_case(rng, N):
    env = sample_environment(N, int(rng.integers(0, 2**63)))
    e = int(rng.choice(np.arange(-N, N + 1, 2)))
    beta = float(rng.uniform(0, 2))
    return env, PolymerSpec.of(N, e, beta)


def test_beta_zero_and_zero_env():
    env = sample_environment(10, 1)
    assert log_partition(env, PolymerSpec.of(10, 2, 0.0)) == pytest.approx(0, abs=1e-12)
    assert log_partition(Environment.zeros(10), PolymerSpec.of(10, -4, 1.7)) == pytest.approx(0, abs=1e-12)


def test_two_step_closed_form():
    env = sample_environment(2, 42)
    b = 0.8
    expected = math.log(
        math.exp(b * env.value(2, 0)) * 0.5 * (math.exp(b * env.value(1, 1)) + math.exp(b * env.value(1, -1)))
    )
    assert log_partition(env, PolymerSpec.of(2, 0, b)) == pytest.approx(expected, rel=1e-13)


def test_normalized_partition():
    assert log_normalized_partition(Environment.zeros(64), ScaledSpec(1, 0, 64)) == pytest.approx(-0.5 * 64 * 64**-0.5)
    env = Environment.from_function(4, lambda i, y: math.sin(3 * i + y))
    expected = oracles.log_partition(env, 4, 4**-0.25, 0) - 0.5 * 4 * 4**-0.5
    assert log_normalized_partition(env, ScaledSpec(1, 0, 4)) == pytest.approx(expected, rel=1e-12)


def test_horizon_mismatch():
    with pytest.raises(IncompatibleEnvironmentsError):
        log_partition(sample_environment(5, 1), PolymerSpec.of(6, 0, 1.0))


@pytest.mark.parametrize("N", range(1, 9))
def test_brute_force_equivalence(N):
    rng = np.random.default_rng(1000 + N)
    for _ in range(50):
        env, spec = random_case(rng, N)
        lz = log_partition(env, spec)
        assert lz == pytest.approx(oracles.log_partition(env, N, spec.beta, spec.endpoint), rel=1e-10, abs=1e-12)
        prof = gibbs_marginals(env, spec)
        ref = oracles.marginals(env, N, spec.beta, spec.endpoint)
        for i in range(1, N + 1):
            for y in range(-i, i + 1, 2):
                assert prof.at(i, y) == pytest.approx(ref.get((i, y), 0.0), rel=1e-10, abs=1e-13)
        q = quenched_overlap(env, spec)
        assert q == pytest.approx(oracles.quenched_overlap(env, N, spec.beta, spec.endpoint), rel=1e-10)


def test_marginal_examples():
    env = sample_environment(2, 3)
    prof = gibbs_marginals(env, PolymerSpec.of(2, 0, 0.0))
    np.testing.assert_allclose(prof[1], [0.5, 0.5])
    assert quenched_overlap(env, PolymerSpec.of(2, 0, 0.0)) == pytest.approx(1.5)


@pytest.mark.parametrize("N, e", [(10, 0), (15, 3), (20, -8)])
def test_beta_zero_marginals_are_bridge_marginals(N, e):
    prof = gibbs_marginals(sample_environment(N, 11), PolymerSpec.of(N, e, 0.0))
    for i in range(1, N + 1):
        np.testing.assert_allclose(prof[i], bridge_marginal(N, e, i), atol=1e-12)


def test_marginal_profile_invariants():
    rng = np.random.default_rng(5)
    for N in (1, 7, 40):
        env, spec = random_case(rng, N)
        spec = PolymerSpec.of(N, spec.endpoint, 3.0)
        prof = gibbs_marginals(env, spec)
        for i in range(1, N + 1):
            assert abs(prof[i].sum() - 1) < 1e-10
        assert prof.at(N, spec.endpoint) == pytest.approx(1.0)


def test_overlap_bounds():
    rng = np.random.default_rng(6)
    for N in (1, 5, 30):
        env, spec = random_case(rng, N)
        q = quenched_overlap(env, spec)
        assert 1 - 1e-12 <= q <= N + 1e-12


def test_shift_covariance():
    rng = np.random.default_rng(8)
    for _ in range(10):
        env, spec = random_case(rng, 25)
        c = float(rng.normal())
        lhs = log_partition(shift(env, c), spec)
        assert lhs == pytest.approx(log_partition(env, spec) + spec.beta * c * 25, abs=1e-9)


def test_reflection():
    rng = np.random.default_rng(9)
    for _ in range(10):
        env, spec = random_case(rng, 17)
        mirrored = PolymerSpec.of(17, -spec.endpoint, spec.beta)
        assert log_partition(env.reflected(), mirrored) == log_partition(env, spec)


@pytest.mark.parametrize("N, e", [(2, 0), (9, 1), (24, 4)])
def test_beta_zero_overlap_equals_annealed(N, e):
    q = quenched_overlap(sample_environment(N, 4), PolymerSpec.of(N, e, 0.0))
    assert q == pytest.approx(annealed_tilted_mean_conditioned(N, 0.0, e), rel=1e-12)


def test_extreme_beta_stays_finite():
    env = sample_environment(300, 12)
    spec = PolymerSpec.of(300, 0, 50.0)
    assert math.isfinite(log_partition(env, spec))
    prof = gibbs_marginals(env, spec)
    assert all(np.isfinite(prof[i]).all() for i in range(1, 301))
    lz = log_normalized_partition(sample_environment(400, 3), ScaledSpec(1, 0, 400))
    assert math.isfinite(lz) and math.exp(lz) > 0
