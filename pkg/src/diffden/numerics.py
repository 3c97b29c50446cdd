"""Dense linear-algebra and randomness substrate.

Vectors and matrices are plain float64 ndarrays.  The Rng wraps a
counter-based Philox bit generator so that `split` yields independent,
reproducible substreams; normal draws go through an explicit Box-Muller
transform so the number of uniforms consumed per call is fixed.
"""

from typing import NamedTuple

import numpy as np

from .errors import NotPositiveDefinite


class McEstimate(NamedTuple):
    """Monte Carlo estimate with its standard error."""

    value: float
    stderr: float
    n: int

    def __float__(self):
        return self.value


def as_vector(x):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D array, got shape {v.shape}")
    return v


def as_matrix(a):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {m.shape}")
    return m


def check_finite(arr, what="array"):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    return arr


def is_symmetric(a, tol=1e-12):
    a = as_matrix(a)
    scale = max(1.0, float(np.max(np.abs(a))))
    return a.shape[0] == a.shape[1] and np.max(np.abs(a - a.T)) <= tol * scale


def cholesky(a):
    """Lower-triangular L with L @ L.T == a for symmetric positive-definite a.

    Raises NotPositiveDefinite when a pivot fails, which is how an invalid
    MRF precision matrix surfaces.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError("cholesky requires a square matrix")
    if not is_symmetric(a):
        raise ValueError("cholesky requires a symmetric matrix")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def solve_lower(lower, b):
    """Forward substitution for a lower-triangular system."""
    lower = as_matrix(lower)
    b = np.asarray(b, dtype=np.float64)
    n = lower.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(n):
        if i:
            x[i] = x[i] - lower[i, :i] @ x[:i]
        x[i] = x[i] / lower[i, i]
    return x


def solve_upper(upper, b):
    """Back substitution for an upper-triangular system."""
    upper = as_matrix(upper)
    b = np.asarray(b, dtype=np.float64)
    n = upper.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            x[i] = x[i] - upper[i, i + 1:] @ x[i + 1:]
        x[i] = x[i] / upper[i, i]
    return x


def solve_spd(a, b):
    """Solve a @ x = b for symmetric positive-definite a via Cholesky."""
    lower = cholesky(a)
    return solve_upper(lower.T, solve_lower(lower, b))


def spd_logdet(a):
    """log det of a symmetric positive-definite matrix."""
    lower = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


class Rng:
    """Splittable counter-based random stream.

    The stream is fully determined by (seed, path): `split(k)` and
    `child(*ints)` derive substreams by extending the path, so parallel or
    keyed consumers stay reproducible without sharing mutable state.
    """

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"

    def split(self, k):
        return [Rng(self.seed, self.path + (i,)) for i in range(k)]

    def child(self, *ints):
        return Rng(self.seed, self.path + tuple(int(i) for i in ints))

    def uniform(self, n=None, low=0.0, high=1.0):
        u = self._gen.random() if n is None else self._gen.random(n)
        return low + (high - low) * u

    def integers(self, low, high, n=None):
        return self._gen.integers(low, high, size=n)

    def standard_normal(self, n):
        """n i.i.d. N(0,1) draws via Box-Muller (fixed uniform consumption)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        half = (n + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # in (0, 1], keeps log finite
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def normal_matrix(self, rows, cols):
        return self.standard_normal(rows * cols).reshape(rows, cols)


def standard_normal(rng, n):
    """Module-level alias matching the operation surface."""
    return rng.standard_normal(n)
