import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polymer_lab.errors import InvalidEndpointError, InvalidHorizonError, UnreachableEndpointError
from polymer_lab.lattice import (
    BridgeSpec,
    LatticeSite,
    admissible_endpoint,
    log_bridge_probability,
    nearest_parity_point,
)


@pytest.mark.parametrize(
    "N, e, expected",
    [(2, 0, math.log(0.5)), (4, 0, math.log(6 / 16)), (5, 5, math.log(2.0**-5))],
)
def test_log_bridge_probability_examples(N, e, expected):
    assert log_bridge_probability(BridgeSpec(N, e)) == pytest.approx(expected, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("N, e", [(2, 1), (3, 5), (4, -6), (0, 0)])
def test_invalid_bridges_rejected(N, e):
    with pytest.raises((InvalidEndpointError, InvalidHorizonError)):
        log_bridge_probability((N, e))


def test_site_invariants():
    assert LatticeSite(3, -1).index == 1
    with pytest.raises(InvalidEndpointError):
        LatticeSite(3, 0)
    with pytest.raises(InvalidEndpointError):
        LatticeSite(2, 4)


@pytest.mark.parametrize("N", [1, 2, 7, 30, 60])
def test_bridge_probabilities_sum_to_one(N):
    total = sum(math.exp(log_bridge_probability((N, e))) for e in range(-N, N + 1, 2))
    assert abs(total - 1) < 1e-12


@given(st.integers(1, 200).flatmap(lambda N: st.tuples(st.just(N), st.integers(0, N))))
def test_reflection_symmetry(args):
    N, k = args
    e = 2 * k - N
    assert log_bridge_probability((N, e)) == log_bridge_probability((N, -e))


@pytest.mark.parametrize("N", range(1, 13))
def test_matches_path_enumeration(N):
    ends = [sum(s) for s in itertools.product((-1, 1), repeat=N)]
    for e in range(-N, N + 1, 2):
        p = ends.count(e) / 2**N
        assert math.exp(log_bridge_probability((N, e))) == pytest.approx(p, rel=1e-12)


def test_admissible_endpoint_examples():
    assert admissible_endpoint(1, 0, 100) == (100, 0)
    assert admissible_endpoint(1, 0.25, 100) == (100, 2)
    assert admissible_endpoint(0.5, 0, 101) == (50, 0)
    assert admissible_endpoint(1, -0.25, 100) == (100, -2)


def test_admissible_endpoint_parity_and_floor():
    h, e = admissible_endpoint(0.001, 0, 10)
    assert (h, e) == (1, 1) or (h, e) == (1, -1)
    h, e = admissible_endpoint(1, 0.3, 9)
    assert h == 9 and e % 2 == 1 and e == 1


def test_admissible_endpoint_errors():
    with pytest.raises(UnreachableEndpointError):
        admissible_endpoint(1, 5, 4)
    with pytest.raises(InvalidHorizonError):
        admissible_endpoint(-1, 0, 4)
    with pytest.raises(InvalidHorizonError):
        admissible_endpoint(1, 0, 0)


@given(st.floats(-50, 50, allow_nan=False), st.integers(0, 1))
def test_nearest_parity_point_is_nearest(v, parity):
    p = nearest_parity_point(v, parity)
    assert (p - parity) % 2 == 0
    assert abs(p - v) <= 1 + 1e-12
    if abs(p - v) == 1:
        assert abs(p) <= abs(2 * v - p)  # tie went toward zero


def test_admissible_endpoint_matches_bridge_invariants():
    for t in np.linspace(0.1, 2, 7):
        for x in np.linspace(-0.3, 0.3, 9):
            h, e = admissible_endpoint(t, x, 50)
            BridgeSpec(h, e)
