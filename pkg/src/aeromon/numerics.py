"""Deterministic small-scale linear algebra, statistics, and random numbers.

Everything is double precision. Matrices are C-order (row-major) float64
ndarrays. All functions are pure; results are bit-identical across platforms
for identical inputs, which is what makes whole pipeline runs replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    InsufficientDataError,
    NotPositiveDefiniteError,
    ShapeError,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Diagonal loading used by cholesky(): escalation starts at 1e-10 * trace/d
# (unless the caller supplies a start) and is capped at 1e-3 * trace/d.
JITTER_BASE_FACTOR = 1e-10
JITTER_CAP_FACTOR = 1e-3


def _splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (advanced state, output)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, (z ^ (z >> 31)) & _MASK64


def derive_seed(seed: int, index: int) -> int:
    """Stable child seed for stage / tree / fold streams.

    Mixing (seed, index) through SplitMix64 keeps child streams decorrelated
    even for consecutive indices.
    """
    x = (seed ^ (((index + 1) * _GOLDEN) & _MASK64)) & _MASK64
    _, out = _splitmix64(x)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator, seeded through SplitMix64.

    The 256-bit state is filled with four successive SplitMix64 outputs of
    the 64-bit seed, so every seed is valid. Equal seeds produce bit-identical
    streams on every platform. Instances are not thread-safe; use `spawn`
    to derive independent per-thread generators.
    """

    __slots__ = ("seed", "_s", "_spare_normal")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        state = []
        x = self.seed
        for _ in range(4):
            x, out = _splitmix64(x)
            state.append(out)
        if not any(state):
            state[0] = 1  # the all-zero state is the one forbidden state
        self._s = state
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Gaussian draw via Box-Muller; the paired value is cached."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
        else:
            u1 = 1.0 - self.random()  # (0, 1]: keeps log() finite
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return mean + std * z

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n) via bitmask rejection."""
        if n <= 0:
            raise DomainError("randrange needs n >= 1")
        mask = (1 << (n - 1).bit_length()) - 1 if n > 1 else 0
        while True:
            r = self.next_u64() & mask
            if r < n:
                return r

    def shuffle(self, seq) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-d array."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randrange(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n) via partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise DomainError(f"cannot sample {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randrange(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def uniforms(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(low, high) for _ in range(n)], dtype=np.float64)

    def normals(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return np.array([self.normal(mean, std) for _ in range(n)], dtype=np.float64)

    def spawn(self, index: int) -> "Rng":
        """Independent generator derived from (seed, index)."""
        return Rng(derive_seed(self.seed, index))


def _as_2d(rows) -> np.ndarray:
    try:
        x = np.asarray(rows, dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise ShapeError(f"rows are ragged or non-numeric: {exc}") from None
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d row collection, got ndim={x.ndim}")
    return x


def covariance(rows) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and sample covariance (divisor n-1).

    The returned matrix is exactly symmetric: the upper triangle is computed
    and mirrored, so cov[i, j] == cov[j, i] holds bit-for-bit.
    """
    x = _as_2d(rows)
    n, d = x.shape
    if n < 2:
        raise InsufficientDataError(f"covariance needs >= 2 rows, got {n}")
    if not np.isfinite(x).all():
        raise DomainError("covariance input contains non-finite values")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    iu, ju = np.triu_indices(d, k=1)
    cov[ju, iu] = cov[iu, ju]
    return mean, cov


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular L with (A + jitter*I) = L @ L.T."""

    dim: int
    lower: np.ndarray
    jitter: float = 0.0


def _factor_lower(a: np.ndarray) -> np.ndarray | None:
    """Plain Cholesky; returns None if any pivot is not strictly positive."""
    d = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(d):
        pivot = a[j, j] - np.dot(lower[j, :j], lower[j, :j])
        if not (pivot > 0.0 and np.isfinite(pivot)):
            return None
        lower[j, j] = math.sqrt(pivot)
        if j + 1 < d:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def cholesky(a, jitter: float = 0.0) -> CholeskyFactor:
    """Cholesky factorization with escalating diagonal jitter.

    The unjittered matrix is tried first. On failure, jitter starts at
    `jitter` (or 1e-10 * trace/d when `jitter` is 0), escalates by factors
    of 10, and gives up past the cap 1e-3 * trace/d. A matrix whose trace
    is not positive cannot be positive definite, so it fails immediately.
    """
    a = _as_2d(a)
    d = a.shape[0]
    if a.shape[1] != d:
        raise ShapeError(f"matrix is {a.shape}, expected square")
    if d > 0 and np.abs(a - a.T).max() > 1e-9:
        raise ShapeError("matrix is not symmetric within 1e-9")

    lower = _factor_lower(a)
    if lower is not None:
        return CholeskyFactor(dim=d, lower=lower, jitter=0.0)

    scale = float(np.trace(a)) / d if d > 0 else 0.0
    cap = JITTER_CAP_FACTOR * scale
    if cap <= 0.0:
        raise NotPositiveDefiniteError("matrix has non-positive trace; cannot jitter")
    j = jitter if jitter > 0.0 else JITTER_BASE_FACTOR * scale
    eye = np.eye(d)
    while j <= cap:
        lower = _factor_lower(a + j * eye)
        if lower is not None:
            return CholeskyFactor(dim=d, lower=lower, jitter=j)
        j *= 10.0
    raise NotPositiveDefiniteError(f"factorization failed at jitter cap {cap:g}")


def solve_spd(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve (L @ L.T) x = b by forward then back substitution."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (factor.dim,):
        raise ShapeError(f"rhs has shape {b.shape}, expected ({factor.dim},)")
    lower = factor.lower
    d = factor.dim
    y = np.zeros(d)
    for i in range(d):
        y[i] = (b[i] - np.dot(lower[i, :i], y[:i])) / lower[i, i]
    x = np.zeros(d)
    for i in range(d - 1, -1, -1):
        x[i] = (y[i] - np.dot(lower[i + 1 :, i], x[i + 1 :])) / lower[i, i]
    return x


def percentile(values, p: float) -> float:
    """Percentile by linear interpolation between closest ranks.

    rank = (p/100) * (n-1); the result interpolates between the flanking
    order statistics. p=0 gives the minimum, p=100 the maximum.
    """
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile p={p} outside [0, 100]")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InsufficientDataError("percentile of an empty list")
    if not np.isfinite(v).all():
        raise DomainError("percentile input contains non-finite values")
    s = np.sort(v)
    rank = (p / 100.0) * (s.size - 1)
    lo = int(math.floor(rank))
    frac = rank - lo
    if frac == 0.0:
        return float(s[lo])
    return float(s[lo] + frac * (s[lo + 1] - s[lo]))
