"""Annealed two-replica quantities, computed exactly.

Two independent walks ``S1, S2`` overlap ``L_N = #{1 <= i <= N : S1_i = S2_i}``
times.  Conditioned on both walks ending at the same endpoint, the overlap law
is obtained from a DP over the pair state ``(y1, y2)``; the difference walk alone
is not enough there because double conditioning reweights it.  Without
conditioning, ``Y = S1 - S2`` is a lazy walk with steps -2, 0, +2 at
probabilities 1/4, 1/2, 1/4, and the overlap is its local time at zero (a
homogeneous pinning model).

Tilted means ``E[L exp(a L)]`` come from augmented recursions carrying the
pair ``(exp(a L) weight, L exp(a L) weight)`` per state.  All DPs rescale by the
running maximum after each step and keep the logarithm of the scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidHorizonError, PolymerLabError
from .lattice import BridgeSpec, admissible_endpoint, log_binom, log_bridge_probability


@dataclass(frozen=True)
class OverlapStats:
    mgf: float
    tilted_mean: float
    alpha: float
    horizon: int
    endpoint: int | None
    conditioned: bool


@dataclass(frozen=True)
class PinningResult:
    m: int
    beta: float
    z: float
    tilted_mean: float
    log_z: float


def _walk_step(a: np.ndarray, axis: int) -> np.ndarray:
    """One simple-random-walk step along ``axis`` in slice-index storage."""
    shape = list(a.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    out[tuple(lo)] += a
    out[tuple(hi)] += a
    out *= 0.5
    return out


def _pair_step(a: np.ndarray) -> np.ndarray:
    return _walk_step(_walk_step(a, 0), 1)


def _pair_dp(N: int, alpha: float, endpoint: int, tilt_until: int | None = None):
    """Exact conditioned ``(E[e^{a L}], E[L e^{a L}])`` for the pair of bridges.

    The tilt is applied on slices ``1..tilt_until`` (default ``N``); later slices
    only propagate, which gives half-horizon overlaps under full conditioning.
    """
    spec = BridgeSpec(N, endpoint)
    tilt_until = N if tilt_until is None else tilt_until
    tilt = math.exp(alpha)
    A = np.ones((1, 1))
    B = np.zeros((1, 1))
    log_scale = 0.0
    for i in range(1, N + 1):
        A = _pair_step(A)
        B = _pair_step(B)
        if i <= tilt_until:
            d = np.arange(i + 1)
            B[d, d] += A[d, d]
            B[d, d] *= tilt
            A[d, d] *= tilt
        s = A.max()
        A /= s
        B /= s
        log_scale += math.log(s)
    j = spec.end_index
    log_norm = 2 * log_bridge_probability(spec)
    with np.errstate(over="ignore", divide="ignore"):
        mgf = float(np.exp(np.log(A[j, j]) + log_scale - log_norm))
        tilted = float(np.exp(np.log(B[j, j]) + log_scale - log_norm))
    return mgf, tilted


def overlap_stats(N: int, alpha: float, endpoint: int, tilt_until: int | None = None) -> OverlapStats:
    mgf, tilted = _pair_dp(N, alpha, endpoint, tilt_until)
    return OverlapStats(mgf, tilted, alpha, N, endpoint, True)


def annealed_mgf_conditioned(N: int, alpha: float, endpoint: int) -> float:
    """``E[exp(alpha L_N) | S1_N = S2_N = endpoint]``."""
    return _pair_dp(N, alpha, endpoint)[0]


def annealed_tilted_mean_conditioned(N: int, alpha: float, endpoint: int) -> float:
    """``E[L_N exp(alpha L_N) | S1_N = S2_N = endpoint]``."""
    return _pair_dp(N, alpha, endpoint)[1]


@dataclass(frozen=True)
class OverlapRow:
    N: int
    horizon: int
    endpoint: int
    alpha: float
    mgf: float
    scaled_tilted_mean: float
    mgf_ceiling: float
    tilted_ceiling: float


def overlap_bound_table(N_list, t: float = 1.0, x: float = 0.0) -> list[OverlapRow]:
    """Overlap MGF and ``N^-1/2``-scaled tilted mean at ``alpha = N^-1/2``.

    The running maxima are the empirical stand-ins for the finite supremum over N.
    """
    rows = []
    mgf_max = tilted_max = -math.inf
    for N in N_list:
        horizon, endpoint = admissible_endpoint(t, x, N)
        alpha = N ** -0.5
        mgf, tilted = _pair_dp(horizon, alpha, endpoint)
        scaled = tilted / math.sqrt(N)
        mgf_max = max(mgf_max, mgf)
        tilted_max = max(tilted_max, scaled)
        rows.append(OverlapRow(N, horizon, endpoint, alpha, mgf, scaled, mgf_max, tilted_max))
    return rows


def _lazy_step(a: np.ndarray) -> np.ndarray:
    out = 0.5 * a
    out[1:] += 0.25 * a[:-1]
    out[:-1] += 0.25 * a[1:]
    return out


def pinning_partition(m: int, beta: float) -> PinningResult:
    """Homogeneous pinning partition function ``z_m(beta) = E[exp(beta L_m)]``.

    ``L_m`` is the time the lazy difference walk spends at 0 during steps 1..m.
    Also returns ``g'(beta) = E[L_m exp(beta L_m)]``.
    """
    if int(m) != m or m < 1:
        raise InvalidHorizonError(f"m must be an integer >= 1, got {m!r}")
    m = int(m)
    tilt = math.exp(beta)
    A = np.zeros(2 * m + 1)
    B = np.zeros(2 * m + 1)
    A[m] = 1.0
    log_scale = 0.0
    for _ in range(m):
        A = _lazy_step(A)
        B = _lazy_step(B)
        B[m] = (B[m] + A[m]) * tilt
        A[m] *= tilt
        s = A.max()
        A /= s
        B /= s
        log_scale += math.log(s)
    log_z = math.log(A.sum()) + log_scale
    with np.errstate(over="ignore", divide="ignore"):
        z = float(np.exp(log_z))
        tilted = float(np.exp(np.log(B.sum()) + log_scale))
    return PinningResult(m, float(beta), z, tilted, log_z)


def expected_local_time(m: int) -> float:
    """``E[L_m] = sum_{i<=m} P[Y_i = 0]`` with ``P[Y_i = 0] = C(2i, i) 4^-i``."""
    i = np.arange(1, m + 1)
    return float(np.exp(log_binom(2 * i, i) - 2 * i * math.log(2.0)).sum())


@dataclass(frozen=True)
class PinningFit:
    c1: float
    c2: float
    n_points: int

    def bound(self, m: int, beta: float) -> float:
        return self.c1 * math.exp(self.c2 * beta * beta * m)

    def holds(self, m: int, beta: float) -> bool:
        return pinning_partition(m, beta).z <= self.bound(m, beta)


def fit_pinning_constants(m_grid, beta_rule="scaling", scales=(1.0,), c2_grid=None) -> PinningFit:
    """Fit ``z_m(beta) <= c1 exp(c2 beta^2 m)`` over a grid of ``(m, beta)``.

    ``beta_rule`` is ``"scaling"`` (``beta = s / sqrt(m)`` for each ``s`` in
    ``scales``) or a fixed float.  For every ``c2`` on the search grid the least
    valid ``c1`` is ``max z exp(-c2 beta^2 m)``; the pair kept is the one giving
    the tightest bound at ``beta^2 m = 1``, the smallest ``c2`` on ties.
    """
    m_grid = list(m_grid)
    if not m_grid:
        raise PolymerLabError("m_grid must be nonempty")
    if c2_grid is None:
        c2_grid = np.round(np.arange(0.0, 5.0 + 1e-9, 0.01), 10)
    points = []
    for m in m_grid:
        if beta_rule == "scaling":
            betas = [s / math.sqrt(m) for s in scales]
        else:
            betas = [float(beta_rule)]
        for beta in betas:
            points.append((beta * beta * m, pinning_partition(m, beta).log_z))
    exposure = np.array([p[0] for p in points])
    log_z = np.array([p[1] for p in points])
    c2_grid = np.asarray(c2_grid, dtype=float)
    log_c1 = (log_z[None, :] - c2_grid[:, None] * exposure[None, :]).max(axis=1)
    score = log_c1 + c2_grid
    best = int(np.flatnonzero(score <= score.min() + 1e-12)[0])
    # pad c1 by a relative 1e-12 so re-evaluating the bound survives exp/log roundoff
    c1 = math.exp(log_c1[best]) * (1 + 1e-12)
    return PinningFit(max(c1, 1.0), float(c2_grid[best]), len(points))


DEFAULT_CHAIN_M_GRID = (4, 8, 16, 32, 64, 128, 256, 512, 1024)
DEFAULT_CHAIN_SCALES = tuple(np.round(np.arange(0.0, 4.0 + 1e-9, 0.25), 10))


@lru_cache(maxsize=None)
def default_chain_fit() -> PinningFit:
    """Pinning constants fitted over ``beta sqrt(m)`` in [0, 4], used by the chain check."""
    return fit_pinning_constants(DEFAULT_CHAIN_M_GRID, scales=DEFAULT_CHAIN_SCALES)


@dataclass(frozen=True)
class ChainResiduals:
    r1: float
    r2: float
    r3: float

    def all_nonnegative(self) -> bool:
        return self.r1 >= 0 and self.r2 >= 0 and self.r3 >= 0


def convexity_chain_check(m: int, u: float, fit: PinningFit | None = None) -> ChainResiduals:
    """Residuals of the chain bounding ``g'(u)`` for ``g = z_m``.

    ``r1 = g(2u) - 1 - u g'(u)``, ``r2 = (g(2u) - 1)/(2u) - g'(u)/2`` and
    ``r3 = c1 exp(4 c2 m u^2) - g(2u)``; each is nonnegative when the chain holds.
    """
    if not u > 0:
        raise PolymerLabError(f"u must be > 0, got {u!r}")
    fit = default_chain_fit() if fit is None else fit
    g2u = pinning_partition(m, 2 * u).z
    dg = pinning_partition(m, u).tilted_mean
    r1 = g2u - 1 - u * dg
    r2 = (g2u - 1) / (2 * u) - 0.5 * dg
    r3 = fit.c1 * math.exp(4 * fit.c2 * m * u * u) - g2u
    return ChainResiduals(r1, r2, r3)


def halving_inequality_check(N: int, beta: float, endpoint: int) -> tuple[float, float]:
    """Residuals of the half-horizon convexity reduction (both >= 0 when it holds).

    ``h1 = 2 E[e^{2b L_{N/2}}] E[e^{b L_{N/2}}] - E[e^{b L_N}]`` and
    ``h2 = 4 E[L_{N/2} e^{2b L_{N/2}}] E[e^{b L_{N/2}}] - E[L_N e^{b L_N}]``, every
    expectation conditioned on both walks ending at ``endpoint`` at time N.
    """
    if int(N) != N or N % 2:
        raise PolymerLabError(f"N must be even, got {N!r}")
    half = N // 2
    full_mgf, full_tilted = _pair_dp(N, beta, endpoint)
    half_mgf, _ = _pair_dp(N, beta, endpoint, tilt_until=half)
    half2_mgf, half2_tilted = _pair_dp(N, 2 * beta, endpoint, tilt_until=half)
    h1 = 2 * half2_mgf * half_mgf - full_mgf
    h2 = 4 * half2_tilted * half_mgf - full_tilted
    return h1, h2


def _bridge_probs(n: int, offsets: np.ndarray) -> np.ndarray:
    """``P[S_n = d]`` for each displacement ``d`` (zero when unreachable)."""
    d = np.asarray(offsets)
    ok = (np.abs(d) <= n) & ((d - n) % 2 == 0)
    k = np.where(ok, (n + d) // 2, 0)
    return np.where(ok, np.exp(log_binom(n, k) - n * math.log(2.0)), 0.0)


def local_time_distributions(N: int, endpoint: int) -> tuple[np.ndarray, np.ndarray]:
    """Laws of ``L_m`` (``m = N // 2``) with and without double-bridge conditioning.

    Returns ``(conditioned, unconditioned)``, arrays indexed by ``k = 0..m``.
    """
    spec = BridgeSpec(N, endpoint)
    m = N // 2
    # conditioned: pair state (j1, j2) with a local-time axis
    P = np.zeros((1, 1, m + 1))
    P[0, 0, 0] = 1.0
    for i in range(1, m + 1):
        P = _pair_step(P)
        d = np.arange(i + 1)
        diag = P[d, d, :].copy()
        P[d, d, :] = 0.0
        P[d, d, 1:] = diag[:, :-1]
    y = np.arange(-m, m + 1, 2)
    end = _bridge_probs(N - m, spec.endpoint - y)
    weight = np.outer(end, end) / math.exp(2 * log_bridge_probability(spec))
    conditioned = np.einsum("ab,abk->k", weight, P)
    # unconditioned: lazy difference walk with a local-time axis
    Q = np.zeros((2 * m + 1, m + 1))
    Q[m, 0] = 1.0
    for _ in range(m):
        Q = _lazy_step(Q)
        at_zero = Q[m].copy()
        Q[m] = 0.0
        Q[m, 1:] = at_zero[:-1]
    unconditioned = Q.sum(axis=0)
    return conditioned, unconditioned


def halftime_conditioning_ratio(N: int, endpoint: int) -> float:
    """``max_k P[L_m = k | both walks end at endpoint] / P[L_m = k]`` with ``m = N // 2``."""
    conditioned, unconditioned = local_time_distributions(N, endpoint)
    mask = unconditioned > 0
    return float((conditioned[mask] / unconditioned[mask]).max())
