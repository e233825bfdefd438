"""Simple random walk bridge bookkeeping on the space-time lattice.

A site ``(i, y)`` is admissible when ``|y| <= i`` and ``y = i (mod 2)``.  Within
slice ``i`` the admissible positions are stored at index ``j = (y + i) // 2``,
``j = 0..i``; every DP kernel in the package uses this layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import gammaln

from .errors import InvalidEndpointError, InvalidHorizonError, UnreachableEndpointError

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class LatticeSite:
    time: int
    space: int

    def __post_init__(self):
        if self.time < 0 or abs(self.space) > self.time or (self.space - self.time) % 2:
            raise InvalidEndpointError(f"({self.time}, {self.space}) is not an admissible site")

    @property
    def index(self) -> int:
        return (self.space + self.time) // 2


@dataclass(frozen=True)
class BridgeSpec:
    horizon: int
    endpoint: int

    def __post_init__(self):
        check_bridge(self.horizon, self.endpoint)

    @property
    def end_index(self) -> int:
        return (self.endpoint + self.horizon) // 2


def check_bridge(horizon: int, endpoint: int) -> None:
    if int(horizon) != horizon or horizon < 1:
        raise InvalidHorizonError(f"horizon must be an integer >= 1, got {horizon!r}")
    if int(endpoint) != endpoint:
        raise InvalidEndpointError(f"endpoint must be an integer, got {endpoint!r}")
    if abs(endpoint) > horizon:
        raise InvalidEndpointError(f"|endpoint|={abs(endpoint)} exceeds horizon {horizon}")
    if (endpoint - horizon) % 2:
        raise InvalidEndpointError(
            f"endpoint {endpoint} has the wrong parity for horizon {horizon}"
        )


def log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def log_bridge_probability(spec: BridgeSpec | tuple[int, int]) -> float:
    """Return ``log P[S_N = e]`` for the simple symmetric random walk."""
    if not isinstance(spec, BridgeSpec):
        spec = BridgeSpec(*spec)
    n, e = spec.horizon, spec.endpoint
    # C(n, k) = C(n, n - k): use abs(e) so reflection symmetry holds bit-for-bit
    return float(log_binom(n, (n + abs(e)) // 2) - n * LOG2)


def nearest_parity_point(value: float, parity: int) -> int:
    """Nearest integer congruent to ``parity`` mod 2; ties go toward zero."""
    lo = 2 * math.floor((value - parity) / 2) + parity
    hi = lo + 2
    d_lo, d_hi = value - lo, hi - value
    if d_lo < d_hi:
        return lo
    if d_hi < d_lo:
        return hi
    return lo if abs(lo) < abs(hi) else hi


def admissible_endpoint(t: float, x: float, N: int) -> tuple[int, int]:
    """Lattice realization ``(round(tN), ~x*sqrt(N))`` of a macroscopic point.

    The horizon uses round-half-to-even and is at least 1.  The endpoint is the
    nearest integer to ``x*sqrt(N)`` with the parity of the horizon.
    """
    if not t > 0:
        raise InvalidHorizonError(f"t must be > 0, got {t!r}")
    if int(N) != N or N < 1:
        raise InvalidHorizonError(f"N must be an integer >= 1, got {N!r}")
    horizon = max(1, round(t * N))
    endpoint = nearest_parity_point(x * math.sqrt(N), horizon % 2)
    if abs(endpoint) > horizon:
        raise UnreachableEndpointError(
            f"endpoint {endpoint} (x*sqrt(N)={x * math.sqrt(N):.4g}) is unreachable in {horizon} steps"
        )
    return horizon, endpoint


def slice_positions(i: int):
    """Positions ``y`` of slice ``i`` in storage order."""
    return range(-i, i + 1, 2)
