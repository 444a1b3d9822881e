"""Counter-based site RNG and reproducible worker streams.

Environment values are keyed per site: the uniform driving site x under
master seed s is a pure function of (s, x).  Any two windows drawn with the
same seed therefore agree bit-for-bit on shared sites, and windows can be
extended in either direction without replaying a sequential stream.

The per-site generator is SplitMix64 evaluated at counter x: the 64-bit
state is seed' + x * GOLDEN (wrapping), pushed through the standard
avalanche finalizer.  seed' is the pre-mixed master seed so that nearby
seeds give unrelated streams.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def _avalanche(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def mix64(value: int) -> int:
    """SplitMix64 finalizer of a single 64-bit integer."""
    with np.errstate(over="ignore"):
        return int(_avalanche(np.uint64(value & MASK64)))


def site_uniforms(seed: int, sites) -> np.ndarray:
    """Uniform(0,1) variates keyed by (seed, site), vectorized over sites.

    Values are strictly inside (0,1) (offset-by-half mantissa mapping), so
    they are safe inputs for inverse CDFs with unbounded tails.
    """
    xs = np.asarray(sites, dtype=np.int64)
    with np.errstate(over="ignore"):
        key = _avalanche(np.uint64(seed & MASK64))
        state = key + xs.astype(np.uint64) * _GOLDEN
        bits = _avalanche(state)
    return ((bits >> _S11).astype(np.float64) + 0.5) * 2.0**-53


def substream_seed(seed: int, *path: int) -> int:
    """Derive a 64-bit child seed from a master seed and an index path."""
    z = seed & MASK64
    for p in path:
        z = mix64(z ^ mix64(p & MASK64))
    return z


def worker_streams(seed: int, workers: int) -> list[np.random.Generator]:
    """Independent per-worker generators, deterministic in (seed, workers)."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=(seed & MASK64, w)))
        for w in range(workers)
    ]


def shard_sizes(n: int, workers: int) -> list[int]:
    """Split n replicates across workers, earlier workers taking the remainder."""
    base, extra = divmod(n, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]
