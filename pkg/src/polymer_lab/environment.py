"""Gaussian environments on the lattice cone.

Values live in a flat, slice-major array: slice ``i`` (``1 <= i <= N``) starts at
``slice_offset(i) = (i - 1)(i + 2) / 2`` and holds ``i + 1`` values ordered by
position ``y = -i, -i + 2, ..., i``.

Seeding
-------
Every random stream is a ``numpy.random.Philox`` generator keyed by a 64-bit
seed.  Sub-stream seeds are derived with :func:`derive_seed`, which hashes
``(master, key_0, key_1, ...)`` through ``numpy.random.SeedSequence`` (the key
tuple is the spawn key).  Replicate ``i`` of an experiment therefore owns the
stream ``derive_seed(master, tag, i)`` no matter which worker runs it or in
what order.  Gaussians are drawn with ``Generator.standard_normal`` (ziggurat).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompatibleEnvironmentsError, InvalidHorizonError, InvalidEndpointError

MAGIC = b"PLABENV\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")
_NO_SEED = 0xFFFF_FFFF_FFFF_FFFF


def n_sites(N: int) -> int:
    """Number of admissible sites with ``1 <= i <= N``."""
    return N * (N + 3) // 2


def slice_offset(i: int) -> int:
    return (i - 1) * (i + 2) // 2


def derive_seed(master: int, *keys: int) -> int:
    """Counter-based 64-bit seed for the sub-stream ``(master, *keys)``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _check_horizon(N):
    if int(N) != N or N < 1:
        raise InvalidHorizonError(f"N must be an integer >= 1, got {N!r}")


@dataclass(frozen=True, eq=False)
class Environment:
    horizon: int
    values: np.ndarray = field(repr=False)
    seed: int | None = None
    derivation: str = ""

    def __post_init__(self):
        _check_horizon(self.horizon)
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if values.size != n_sites(self.horizon):
            raise ValueError(
                f"expected {n_sites(self.horizon)} values for horizon {self.horizon}, got {values.size}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_sites(self) -> int:
        return self.values.size

    def slice(self, i: int) -> np.ndarray:
        if not 1 <= i <= self.horizon:
            raise IndexError(f"slice {i} outside 1..{self.horizon}")
        start = slice_offset(i)
        return self.values[start:start + i + 1]

    def value(self, i: int, y: int) -> float:
        if abs(y) > i or (y - i) % 2:
            raise InvalidEndpointError(f"({i}, {y}) is not an admissible site")
        return float(self.slice(i)[(y + i) // 2])

    def reflected(self) -> "Environment":
        """Environment with ``y -> -y``."""
        out = np.empty_like(self.values)
        for i in range(1, self.horizon + 1):
            start = slice_offset(i)
            out[start:start + i + 1] = self.values[start:start + i + 1][::-1]
        return Environment(self.horizon, out, self.seed, _derived(self, "reflect"))

    def equals(self, other: "Environment") -> bool:
        return self.horizon == other.horizon and np.array_equal(self.values, other.values)

    @classmethod
    def from_function(cls, N: int, fn) -> "Environment":
        """Build an environment from ``fn(i, y)``; handy for hand-written fixtures."""
        _check_horizon(N)
        vals = [fn(i, y) for i in range(1, N + 1) for y in range(-i, i + 1, 2)]
        return cls(N, np.asarray(vals, dtype=np.float64), None, "explicit")

    @classmethod
    def zeros(cls, N: int) -> "Environment":
        _check_horizon(N)
        return cls(N, np.zeros(n_sites(N)), None, "zeros")


def _derived(env: Environment, op: str) -> str:
    base = env.derivation or (f"seed={env.seed}" if env.seed is not None else "explicit")
    return f"{op}({base})"


def sample_values(N: int, seeds) -> np.ndarray:
    """Stack of environment value arrays, one row per seed."""
    _check_horizon(N)
    seeds = list(seeds)
    out = np.empty((len(seeds), n_sites(N)))
    for row, seed in enumerate(seeds):
        out[row] = rng_from_seed(seed).standard_normal(out.shape[1])
    return out


def sample_environment(N: int, seed: int) -> Environment:
    """I.i.d. standard normal environment on the cone of horizon ``N``."""
    return Environment(N, sample_values(N, [seed])[0], int(seed))


def distance(a: Environment, b: Environment) -> float:
    """Euclidean distance between two environments over the cone."""
    if a.horizon != b.horizon:
        raise IncompatibleEnvironmentsError(
            f"horizons differ: {a.horizon} != {b.horizon}"
        )
    return float(np.linalg.norm(a.values - b.values))


def shift(env: Environment, c: float) -> Environment:
    return Environment(env.horizon, env.values + c, env.seed, _derived(env, f"shift{c:+g}"))


def dump_environment(env: Environment, path) -> None:
    """Write ``env`` as header + little-endian float64 payload (slice-major)."""
    seed = _NO_SEED if env.seed is None else int(env.seed)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, env.horizon, seed))
        fh.write(env.values.astype("<f8").tobytes())


def load_environment(path) -> Environment:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, N, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an environment file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != n_sites(N):
        raise ValueError(f"{path}: payload has {payload.size} values, expected {n_sites(N)}")
    return Environment(N, payload.astype(np.float64), None if seed == _NO_SEED else seed, "loaded")
