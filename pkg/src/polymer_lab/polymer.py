"""Quenched point-to-point polymer computations by log-space transfer matrices.

The forward weight of site ``(i, y)`` is

    W(i, y) = sum over paths 0 -> (i, y) of 2^-i * exp(beta * sum_{k<=i} omega(k, S_k))

and obeys ``W(i+1, y) = exp(beta*omega(i+1, y)) * (W(i, y-1) + W(i, y+1)) / 2``.
All kernels carry ``log W`` and combine neighbours with ``logaddexp``, so the
recursion never overflows regardless of ``beta`` or ``N``.

The ``batch_*`` kernels take a 2-D array of environment values (one row per
environment, layout as in :mod:`polymer_lab.environment`) and are what the
Monte Carlo code uses; the single-environment functions are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import Environment, slice_offset
from .errors import IncompatibleEnvironmentsError
from .lattice import LOG2, BridgeSpec, admissible_endpoint, log_binom, log_bridge_probability


@dataclass(frozen=True)
class PolymerSpec:
    bridge: BridgeSpec
    beta: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta!r}")

    @classmethod
    def of(cls, N: int, endpoint: int, beta: float) -> "PolymerSpec":
        return cls(BridgeSpec(N, endpoint), float(beta))

    @property
    def horizon(self) -> int:
        return self.bridge.horizon

    @property
    def endpoint(self) -> int:
        return self.bridge.endpoint


@dataclass(frozen=True)
class ScaledSpec:
    """Macroscopic point ``(t, x)`` at scale ``N``: horizon ``tN``, beta ``N^-1/4``."""

    t: float
    x: float
    N: int

    def __post_init__(self):
        admissible_endpoint(self.t, self.x, self.N)

    @property
    def beta(self) -> float:
        return self.N ** -0.25

    @property
    def polymer(self) -> PolymerSpec:
        horizon, endpoint = admissible_endpoint(self.t, self.x, self.N)
        return PolymerSpec.of(horizon, endpoint, self.beta)

    @property
    def log_mean(self) -> float:
        """``log E Z = horizon * beta^2 / 2``."""
        return 0.5 * self.polymer.horizon * self.beta**2


@dataclass(frozen=True)
class MarginalProfile:
    horizon: int
    endpoint: int
    slices: tuple

    def __getitem__(self, i: int) -> np.ndarray:
        if not 1 <= i <= self.horizon:
            raise IndexError(f"slice {i} outside 1..{self.horizon}")
        return self.slices[i - 1]

    def positions(self, i: int) -> np.ndarray:
        return np.arange(-i, i + 1, 2)

    def at(self, i: int, y: int) -> float:
        if abs(y) > i or (y - i) % 2:
            return 0.0
        return float(self[i][(y + i) // 2])


def _step_forward(prev: np.ndarray) -> np.ndarray:
    """``log((W(y-1) + W(y+1)) / 2)`` for every site of the next slice."""
    m, width = prev.shape
    new = np.empty((m, width + 1))
    new[:, 0] = prev[:, 0]
    new[:, -1] = prev[:, -1]
    if width > 1:
        np.logaddexp(prev[:, :-1], prev[:, 1:], out=new[:, 1:-1])
    new -= LOG2
    return new


def _step_backward(nxt: np.ndarray) -> np.ndarray:
    return np.logaddexp(nxt[:, :-1], nxt[:, 1:]) - LOG2


def batch_log_forward(values: np.ndarray, N: int, beta: float, keep=False):
    """Run the forward recursion over a stack of environments.

    Returns the final slice of ``log W`` (shape ``(M, N+1)``), or the list of all
    slices when ``keep`` is set.
    """
    values = np.atleast_2d(values)
    F = np.zeros((values.shape[0], 1))
    kept = []
    for i in range(1, N + 1):
        start = slice_offset(i)
        F = _step_forward(F)
        F += beta * values[:, start:start + i + 1]
        if keep:
            kept.append(F)
    return kept if keep else F


def batch_log_partition(values: np.ndarray, N: int, beta: float, endpoint: int) -> np.ndarray:
    spec = BridgeSpec(N, endpoint)
    F = batch_log_forward(values, N, beta)
    return F[:, spec.end_index] - log_bridge_probability(spec)


def _batch_marginals(values: np.ndarray, N: int, beta: float, endpoint: int):
    """Yield ``(i, mu_i)`` from ``i = N`` down to 1 and return ``log Z`` at the end."""
    spec = BridgeSpec(N, endpoint)
    values = np.atleast_2d(values)
    forward = batch_log_forward(values, N, beta, keep=True)
    M = values.shape[0]
    B = np.full((M, N + 1), -np.inf)
    B[:, spec.end_index] = 0.0
    log_w = forward[-1][:, spec.end_index]
    for i in range(N, 0, -1):
        logits = forward[i - 1] + B
        mu = np.exp(logits - log_w[:, None])
        mu /= mu.sum(axis=1, keepdims=True)
        yield i, mu
        if i > 1:
            start = slice_offset(i)
            B = _step_backward(B + beta * values[:, start:start + i + 1])
    return log_w - log_bridge_probability(spec)


def batch_log_partition_and_overlap(values: np.ndarray, N: int, beta: float, endpoint: int):
    """``(log Z, <L_N>^(2))`` for each environment in the stack."""
    gen = _batch_marginals(values, N, beta, endpoint)
    overlap = 0.0
    while True:
        try:
            _, mu = next(gen)
        except StopIteration as stop:
            return stop.value, overlap
        overlap = overlap + np.einsum("ij,ij->i", mu, mu)


def _check_horizon(env: Environment, spec: PolymerSpec):
    if env.horizon != spec.horizon:
        raise IncompatibleEnvironmentsError(
            f"environment horizon {env.horizon} != polymer horizon {spec.horizon}"
        )


def log_partition(env: Environment, spec: PolymerSpec) -> float:
    """``log Z_N(omega, beta, e)``, the log of ``E[exp(beta H) | S_N = e]``."""
    _check_horizon(env, spec)
    return float(batch_log_partition(env.values, spec.horizon, spec.beta, spec.endpoint)[0])


def log_normalized_partition(env: Environment, scaled: ScaledSpec) -> float:
    """``log Z_N(t, x)``: partition function at the scaled point divided by its mean."""
    spec = scaled.polymer
    return log_partition(env, spec) - scaled.log_mean


def gibbs_marginals(env: Environment, spec: PolymerSpec) -> MarginalProfile:
    _check_horizon(env, spec)
    slices = [None] * spec.horizon
    for i, mu in _batch_marginals(env.values, spec.horizon, spec.beta, spec.endpoint):
        slices[i - 1] = mu[0]
    return MarginalProfile(spec.horizon, spec.endpoint, tuple(slices))


def quenched_overlap(env: Environment, spec: PolymerSpec) -> float:
    """Mean overlap of two independent replicas of the polymer in ``env``.

    Replicas are independent given the environment, so the expectation is
    ``sum_i sum_y mu_i(y)^2``.
    """
    _check_horizon(env, spec)
    _, overlap = batch_log_partition_and_overlap(env.values, spec.horizon, spec.beta, spec.endpoint)
    return float(overlap[0])


def bridge_marginal(N: int, endpoint: int, i: int) -> np.ndarray:
    """Marginal of a simple random walk bridge at slice ``i`` (the ``beta = 0`` profile)."""

    spec = BridgeSpec(N, endpoint)
    y = np.arange(-i, i + 1, 2)
    rest = N - i
    k = (endpoint - y + rest) / 2
    with np.errstate(invalid="ignore"):
        ok = (k >= 0) & (k <= rest)
        logp = np.where(
            ok,
            log_binom(i, (y + i) / 2) + log_binom(rest, np.clip(k, 0, rest)) - N * math.log(2.0),
            -np.inf,
        )
    return np.exp(logp - log_bridge_probability(spec))
