"""Monte Carlo concentration experiments over random environments.

Replicate ``i`` of a stream draws its environment from
``derive_seed(master, *stream, i)``.  Replicates are processed in fixed-size
chunks (independent of the worker count) and merged in index order, so every
number reported here is a pure function of the parameters and the master seed.
``PLAB_THREADS`` caps the number of worker threads (unset or 0 means one per CPU).
"""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import ks_2samp

from .environment import Environment, derive_seed, distance, sample_values
from .errors import IncompatibleEnvironmentsError, InsufficientReplicatesError, PolymerLabError
from .lattice import LOG2
from .polymer import (
    PolymerSpec,
    ScaledSpec,
    batch_log_partition,
    batch_log_partition_and_overlap,
    log_partition,
    quenched_overlap,
)
from .replica import annealed_mgf_conditioned, overlap_bound_table

CHUNK = 512
N_SIGMA = 3.0


def worker_count() -> int:
    raw = os.environ.get("PLAB_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise PolymerLabError(f"PLAB_THREADS must be >= 0, got {raw}")
    return n or (os.cpu_count() or 1)


def stream_id(name: str) -> int:
    """Stable integer tag for a named experiment stream."""
    return zlib.crc32(name.encode())


def map_replicates(fn, M: int, chunk: int = CHUNK):
    """Apply ``fn(start, stop)`` to consecutive chunks of ``range(M)`` and concatenate.

    ``fn`` may return one array or a tuple of arrays.
    """
    bounds = [(s, min(s + chunk, M)) for s in range(0, M, chunk)]
    workers = min(worker_count(), len(bounds)) or 1
    if workers == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*parts))
    return np.concatenate(parts)


def replicate_values(N: int, master: int, stream, start: int, stop: int) -> np.ndarray:
    seeds = [derive_seed(master, *stream, i) for i in range(start, stop)]
    return sample_values(N, seeds)


def sample_log_partition(spec: PolymerSpec, M: int, seed: int, stream=(0,), with_overlap=False):
    """``log Z`` (and optionally the quenched overlap) for ``M`` sampled environments."""
    N, beta, e = spec.horizon, spec.beta, spec.endpoint

    def work(a, b):
        values = replicate_values(N, seed, stream, a, b)
        if with_overlap:
            return batch_log_partition_and_overlap(values, N, beta, e)
        return batch_log_partition(values, N, beta, e)

    return map_replicates(work, M)


def sample_log_normalized(scaled: ScaledSpec, M: int, seed: int, stream=(0,)) -> np.ndarray:
    return sample_log_partition(scaled.polymer, M, seed, stream) - scaled.log_mean


def _check_replicates(M: int, minimum: int):
    if int(M) != M or M < minimum:
        raise InsufficientReplicatesError(f"M must be an integer >= {minimum}, got {M!r}")


def mean_and_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def wilson(successes: int, n: int, z: float = 1.0) -> tuple[float, float]:
    """Wilson score interval ``(center, half_width)`` at ``z`` standard errors."""
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return center, half


def proportion_se(successes: int, n: int) -> float:
    return wilson(successes, n)[1]


@dataclass
class ExperimentResult:
    experiment: str
    params: dict
    estimate: float
    std_error: float
    bound: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        missing = {"experiment", "params", "estimate", "std_error", "bound", "passed"} - set(d)
        if missing:
            raise ValueError(f"record missing fields: {sorted(missing)}")
        if not isinstance(d["passed"], bool):
            raise ValueError("field 'passed' must be a boolean")
        return cls(
            str(d["experiment"]), dict(d["params"]), float(d["estimate"]),
            float(d["std_error"]), float(d["bound"]), d["passed"], dict(d.get("details", {})),
        )


def _clean(obj):
    """Coerce numpy scalars to Python and non-finite floats to strings (JSON-safe)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


@dataclass(frozen=True)
class ConstantsLedger:
    """Constants of the lower-tail argument, derived from measured overlap ceilings.

    ``C = 32 K L`` makes the event-A bound ``1/(4L) - 4K/C`` equal ``1/(8L)``.
    """

    L_hat: float
    K_hat: float
    C: float
    delta: float
    C_prime: float
    C_dprime: float
    c1: float
    c2: float
    C2: float
    grid: tuple = ()
    t: float = 1.0
    x: float = 0.0

    @classmethod
    def from_ceilings(cls, L_hat: float, K_hat: float, grid=(), t=1.0, x=0.0) -> "ConstantsLedger":
        C = 32.0 * K_hat * L_hat
        delta = 1.0 / (4 * L_hat) - 4 * K_hat / C
        C_prime = math.sqrt(2 * math.log(1 / delta))
        C_dprime = math.sqrt(C)
        c1 = LOG2 + C_prime * C_dprime
        return cls(L_hat, K_hat, C, delta, C_prime, C_dprime, c1, C_dprime, math.exp(-c1),
                   tuple(grid), t, x)

    @property
    def log_C2(self) -> float:
        return -self.c1

    def event_bound(self, C: float) -> float:
        """Lower bound ``1/(4L) - 4K/C`` on the probability of event A."""
        if C <= 0:
            return -math.inf
        return 1 / (4 * self.L_hat) - (0.0 if math.isinf(C) else 4 * self.K_hat / C)

    def to_dict(self) -> dict:
        return _clean(asdict(self))


DEFAULT_GRID = (16, 32, 64, 128, 256)


def constants_pipeline(N_grid=DEFAULT_GRID, t: float = 1.0, x: float = 0.0) -> ConstantsLedger:
    rows = overlap_bound_table(N_grid, t, x)
    if not rows:
        raise PolymerLabError("N_grid must be nonempty")
    return ConstantsLedger.from_ceilings(
        rows[-1].mgf_ceiling, rows[-1].tilted_ceiling, tuple(N_grid), t, x
    )


def _polymer_at(N: int, beta: float | None, endpoint: int) -> PolymerSpec:
    return PolymerSpec.of(N, endpoint, N ** -0.25 if beta is None else beta)


def mean_partition_check(N: int, beta: float, endpoint: int, M: int, seed: int) -> ExperimentResult:
    """Sample mean of ``Z_N`` against ``exp(N beta^2 / 2)``."""
    _check_replicates(M, 100)
    spec = _polymer_at(N, beta, endpoint)
    z = np.exp(sample_log_partition(spec, M, seed, (stream_id("partition"),)))
    mean, se = mean_and_se(z)
    target = math.exp(0.5 * N * spec.beta**2)
    # roundoff allowance: at beta = 0 every sample is 1 up to a few ulps
    passed = abs(mean - target) <= N_SIGMA * se + 1e-12 * target
    return ExperimentResult(
        "partition", dict(N=N, beta=spec.beta, endpoint=endpoint, M=M, seed=seed),
        mean, se, target, passed,
    )


def second_moment_fubini_check(N: int, endpoint: int, M: int, seed: int) -> ExperimentResult:
    """Sample mean of the squared normalized partition function vs the exact overlap MGF."""
    _check_replicates(M, 100)
    spec = _polymer_at(N, None, endpoint)
    log_norm = 0.5 * N * spec.beta**2
    z2 = np.exp(2 * (sample_log_partition(spec, M, seed, (stream_id("fubini"),)) - log_norm))
    mean, se = mean_and_se(z2)
    exact = annealed_mgf_conditioned(N, N ** -0.5, endpoint)
    passed = abs(mean - exact) <= N_SIGMA * se + 1e-12 * exact
    return ExperimentResult(
        "fubini", dict(N=N, endpoint=endpoint, M=M, seed=seed), mean, se, exact, passed
    )


def paley_zygmund_check(N: int, endpoint: int, M: int, seed: int) -> ExperimentResult:
    """Empirical ``P[Z >= E Z / 2]`` against ``(E Z)^2 / (4 E Z^2)`` with the exact second moment."""
    _check_replicates(M, 100)
    spec = _polymer_at(N, None, endpoint)
    log_z = sample_log_partition(spec, M, seed, (stream_id("paley-zygmund"),))
    hits = int(np.count_nonzero(log_z >= 0.5 * N * spec.beta**2 - LOG2))
    p, se = hits / M, proportion_se(hits, M)
    bound = 0.25 / annealed_mgf_conditioned(N, N ** -0.5, endpoint)
    return ExperimentResult(
        "paley-zygmund", dict(N=N, endpoint=endpoint, M=M, seed=seed),
        p, se, bound, p >= bound - N_SIGMA * se,
    )


@dataclass(frozen=True)
class EventASample:
    N: int
    above_half_mean: np.ndarray
    overlap: np.ndarray

    def indicator(self, C: float) -> np.ndarray:
        return self.above_half_mean & (self.overlap <= C * math.sqrt(self.N))

    def probability(self, C: float) -> float:
        return float(self.indicator(C).mean())


def event_a_sample(N: int, endpoint: int, M: int, seed: int) -> EventASample:
    """Per-environment ingredients of event A at ``beta = N^-1/4``."""
    spec = _polymer_at(N, None, endpoint)
    log_z, overlap = sample_log_partition(
        spec, M, seed, (stream_id("event-a"),), with_overlap=True
    )
    return EventASample(N, log_z >= 0.5 * N * spec.beta**2 - LOG2, overlap)


def event_A_probability(N: int, endpoint: int, C: float | None, M: int, seed: int,
                        ledger: ConstantsLedger | None = None) -> ExperimentResult:
    """Empirical probability of event A against ``1/(4L) - 4K/C`` from the ledger.

    ``C=None`` takes the ledger's ``C``, for which the bound is ``delta = 1/(8L)``.
    """
    _check_replicates(M, 100)
    ledger = constants_pipeline() if ledger is None else ledger
    C = ledger.C if C is None else float(C)
    sample = event_a_sample(N, endpoint, M, seed)
    hits = int(np.count_nonzero(sample.indicator(C)))
    p, se = hits / M, proportion_se(hits, M)
    bound = ledger.event_bound(C)
    return ExperimentResult(
        "event-a", dict(N=N, endpoint=endpoint, C=C, M=M, seed=seed),
        p, se, bound, p >= bound - N_SIGMA * se,
        dict(L_hat=ledger.L_hat, K_hat=ledger.K_hat, max_overlap=float(sample.overlap.max())),
    )


def two_env_residual(envA: Environment, envB: Environment, spec: PolymerSpec) -> float:
    """``log Z(B) - log Z(A) + beta d(A, B) sqrt(<L>_A)``; nonnegative for every pair."""
    if envA.horizon != envB.horizon:
        raise IncompatibleEnvironmentsError(
            f"horizons differ: {envA.horizon} != {envB.horizon}"
        )
    return (
        log_partition(envB, spec) - log_partition(envA, spec)
        + spec.beta * distance(envA, envB) * math.sqrt(quenched_overlap(envA, spec))
    )


PAIR_PERTURBATIONS = (None, 1.0, 0.1, 0.01)


def two_env_experiment(N: int, beta: float | None, endpoint: int, n_pairs: int, seed: int,
                       tol: float = 1e-9) -> ExperimentResult:
    """Minimum two-environment residual over random pairs.

    Pair ``k`` uses an independent second environment when ``k % 4 == 0`` and
    otherwise ``B = A + s xi`` with ``s`` in ``(1, 0.1, 0.01)``, which probes the
    nearly tight regime.
    """
    spec = _polymer_at(N, beta, endpoint)
    sid = stream_id("two-env")

    def work(a, b):
        A = replicate_values(N, seed, (sid, 0), a, b)
        noise = replicate_values(N, seed, (sid, 1), a, b)
        scale = np.array([PAIR_PERTURBATIONS[k % 4] or 0.0 for k in range(a, b)])
        indep = np.array([PAIR_PERTURBATIONS[k % 4] is None for k in range(a, b)])
        B = np.where(indep[:, None], noise, A + scale[:, None] * noise)
        log_a, overlap = batch_log_partition_and_overlap(A, N, spec.beta, endpoint)
        log_b = batch_log_partition(B, N, spec.beta, endpoint)
        d = np.linalg.norm(A - B, axis=1)
        return log_b - log_a + spec.beta * d * np.sqrt(overlap)

    residuals = map_replicates(work, n_pairs, chunk=128)
    worst = float(residuals.min())
    violations = int(np.count_nonzero(residuals < -tol))
    return ExperimentResult(
        "two-env", dict(N=N, beta=spec.beta, endpoint=endpoint, n_pairs=n_pairs, seed=seed),
        worst, 0.0, -tol, violations == 0, dict(violations=violations),
    )


@dataclass
class TailCurve:
    u_grid: list
    empirical_prob: list
    std_error: list
    gaussian_bound: list
    threshold: list
    resolvable: list
    params: dict

    def passed(self) -> bool:
        return all(p <= g + N_SIGMA * s
                   for p, g, s in zip(self.empirical_prob, self.gaussian_bound, self.std_error))

    def result(self) -> ExperimentResult:
        excess = [p - g for p, g in zip(self.empirical_prob, self.gaussian_bound)]
        k = int(np.argmax(excess))
        return ExperimentResult(
            "tails", dict(self.params), self.empirical_prob[k], self.std_error[k],
            self.gaussian_bound[k], self.passed(),
            dict(worst_u=self.u_grid[k],
                 unresolvable_u=[u for u, r in zip(self.u_grid, self.resolvable) if not r]),
        )


def lower_tail_curve(N: int, t: float, x: float, u_grid, M: int, seed: int,
                     ledger: ConstantsLedger | None = None) -> TailCurve:
    """Empirical ``P[Z_N(t, x) < C2 exp(-c2 u)]`` against ``exp(-u^2 / 2)``.

    Points where ``M exp(-u^2/2) < 10`` are flagged unresolvable at this ``M``.
    """
    _check_replicates(M, 1000)
    ledger = constants_pipeline(t=t, x=x) if ledger is None else ledger
    log_z = sample_log_normalized(ScaledSpec(t, x, N), M, seed, (stream_id("tails"),))
    u_grid = [float(u) for u in u_grid]
    probs, ses, gauss, thresh, ok = [], [], [], [], []
    for u in u_grid:
        log_thr = ledger.log_C2 - ledger.c2 * u
        hits = int(np.count_nonzero(log_z < log_thr))
        probs.append(hits / M)
        ses.append(proportion_se(hits, M))
        gauss.append(math.exp(-0.5 * u * u))
        thresh.append(math.exp(log_thr))
        ok.append(M * math.exp(-0.5 * u * u) >= 10)
    params = dict(N=N, t=t, x=x, M=M, seed=seed, c2=ledger.c2, C2=ledger.C2)
    return TailCurve(u_grid, probs, ses, gauss, thresh, ok, params)


def log_negative_moment_ceiling(p: float, ledger: ConstantsLedger) -> float:
    """Log of the ``E Z^-p`` bound implied by the tail bound through the layer-cake formula.

    ``E Z^-p <= C2^-p (1 + p c2 sqrt(2 pi) exp((p c2)^2 / 2) Phi(p c2))``.
    """
    a = p * ledger.c2
    tail = math.log(a) + 0.5 * math.log(2 * math.pi) + 0.5 * a * a + float(log_ndtr(a))
    return -p * ledger.log_C2 + float(np.logaddexp(0.0, tail))


def layer_cake_moment(log_z: np.ndarray, p: float, n_grid: int = 4001) -> float:
    """``E Z^-p`` by integrating the empirical tail of ``V = -log Z`` on a grid.

    Uses ``E e^{pV} = e^{p v0} + int_{v0} p e^{pv} P[V > v] dv`` with trapezoids.
    """
    v = np.sort(-np.asarray(log_z, dtype=float))
    grid = np.linspace(v[0], v[-1], n_grid)
    survival = 1.0 - np.searchsorted(v, grid, side="right") / v.size
    integrand = p * np.exp(p * grid) * survival
    return float(np.exp(p * v[0]) + np.trapezoid(integrand, grid))


def negative_moment_estimate(N: int, t: float, x: float, p: float, M: int, seed: int,
                             ledger: ConstantsLedger | None = None) -> ExperimentResult:
    """Log of the sample mean of ``Z_N(t, x)^-p`` against the log of the layer-cake ceiling."""
    if not p > 0:
        raise PolymerLabError(f"p must be > 0, got {p!r}")
    _check_replicates(M, 1000)
    ledger = constants_pipeline(t=t, x=x) if ledger is None else ledger
    log_z = sample_log_normalized(ScaledSpec(t, x, N), M, seed, (stream_id("neg-moments"),))
    moment, se = mean_and_se(np.exp(-p * log_z))
    log_bound = log_negative_moment_ceiling(p, ledger)
    log_est = math.log(moment)
    log_se = se / moment
    return ExperimentResult(
        "neg-moments", dict(N=N, t=t, x=x, p=p, M=M, seed=seed),
        log_est, log_se, log_bound, log_est <= log_bound + N_SIGMA * log_se,
        dict(moment=moment, moment_se=se, layer_cake=layer_cake_moment(log_z, p), scale="log"),
    )


@dataclass
class ConvergenceRow:
    N: int
    mean: float
    std_error: float
    ks_to_next: float | None


@dataclass
class ConvergenceTable:
    rows: list
    params: dict

    def ks(self, N_a: int, N_b: int) -> float:
        for a, b in zip(self.rows, self.rows[1:]):
            if a.N == N_a and b.N == N_b:
                return a.ks_to_next
        raise KeyError((N_a, N_b))

    def means_ok(self) -> bool:
        return all(abs(r.mean - 1) <= N_SIGMA * r.std_error for r in self.rows)


def convergence_probe(N_list, t: float, x: float, M: int, seed: int,
                      samples: bool = False):
    """Two-sample KS distances between normalized partition functions at consecutive N.

    Each N draws from its own stream (keyed by N), so repeating an N repeats
    the sample exactly.
    """
    N_list = list(N_list)
    if len(N_list) < 2:
        raise PolymerLabError("convergence_probe needs at least two values of N")
    _check_replicates(M, 100)
    sid = stream_id("converge")
    draws = [np.exp(sample_log_normalized(ScaledSpec(t, x, N), M, seed, (sid, N))) for N in N_list]
    rows = []
    for k, (N, z) in enumerate(zip(N_list, draws)):
        mean, se = mean_and_se(z)
        ks = float(ks_2samp(z, draws[k + 1]).statistic) if k + 1 < len(draws) else None
        rows.append(ConvergenceRow(N, mean, se, ks))
    table = ConvergenceTable(rows, dict(t=t, x=x, M=M, seed=seed))
    return (table, draws) if samples else table
