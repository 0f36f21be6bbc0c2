"""Core data types and simulation of partially shuffled regression data.

The generative model is ``y = P X beta + sigma * eps`` where ``P`` is a
permutation matrix moving exactly ``k`` of the ``n`` indices, the rows of
``X`` are i.i.d. standard Gaussian, and ``eps`` is standard Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

__all__ = [
    "RngSeed",
    "SparsePermutation",
    "Theta",
    "Dataset",
    "as_generator",
    "sample_sparse_permutation",
    "sample_beta_sphere",
    "apply_permutation",
    "simulate",
]


@dataclass(frozen=True)
class RngSeed:
    """Reproducible random source: a master seed plus a stream id.

    Identical ``(seed, stream)`` pairs reproduce identical draws. Distinct
    stream ids on the same seed yield statistically independent streams
    (counter-based split via ``numpy.random.SeedSequence`` spawn keys).
    """

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be non-negative integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(ss)

    def with_stream(self, stream: int) -> "RngSeed":
        return RngSeed(self.seed, stream)


RngLike = Union[RngSeed, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Normalize an ``RngSeed`` or an existing generator to a generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    raise TypeError(f"expected RngSeed or numpy Generator, got {type(rng)!r}")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SparsePermutation:
    """Permutation of ``{0..n-1}`` with exactly ``k`` non-fixed points.

    ``map[i]`` is the (0-based) index the i-th slot reads from, so applying
    the permutation to a vector ``v`` yields ``v[map]``.
    """

    n: int
    map: np.ndarray
    k: int

    def __post_init__(self) -> None:
        m = _readonly(np.asarray(self.map, dtype=np.intp))
        object.__setattr__(self, "map", m)
        if self.n <= 0 or m.shape != (self.n,):
            raise ValueError("map must be a vector of length n > 0")
        if not np.array_equal(np.sort(m), np.arange(self.n)):
            raise ValueError("map is not a bijection of {0..n-1}")
        moved = int(np.count_nonzero(m != np.arange(self.n)))
        if moved != self.k:
            raise ValueError(f"declared k={self.k} but map moves {moved} indices")
        if self.k == 1:
            raise ValueError("no permutation moves exactly one index")

    @classmethod
    def identity(cls, n: int) -> "SparsePermutation":
        return cls(n, np.arange(n), 0)

    @classmethod
    def from_map(cls, map: np.ndarray) -> "SparsePermutation":
        m = np.asarray(map, dtype=np.intp)
        k = int(np.count_nonzero(m != np.arange(m.shape[0])))
        return cls(m.shape[0], m, k)

    def inverse(self) -> "SparsePermutation":
        inv = np.empty(self.n, dtype=np.intp)
        inv[self.map] = np.arange(self.n)
        return SparsePermutation(self.n, inv, self.k)


@dataclass(frozen=True)
class Theta:
    """Full parameter triple: coefficients, noise variance, mismatch rate."""

    beta: np.ndarray
    sigma2: float
    alpha: float

    def __post_init__(self) -> None:
        b = _readonly(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "alpha", float(self.alpha))
        if b.ndim != 1:
            raise ValueError("beta must be a 1-d vector")
        if not np.all(np.isfinite(b)):
            raise ValueError("beta must be finite")
        # sigma2 == 0 is tolerated for noiseless simulation; density and
        # estimator entry points reject it separately.
        if not np.isfinite(self.sigma2) or self.sigma2 < 0:
            raise ValueError("sigma2 must be finite and >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    @property
    def tau2(self) -> float:
        """Marginal response variance ``sigma2 + ||beta||^2``."""
        return self.sigma2 + float(self.beta @ self.beta)

    def as_array(self) -> np.ndarray:
        """Flatten to ``(beta_1..beta_d, sigma2, alpha)``."""
        return np.concatenate([self.beta, [self.sigma2, self.alpha]])

    @classmethod
    def from_array(cls, v: np.ndarray) -> "Theta":
        v = np.asarray(v, dtype=float)
        return cls(v[:-2], v[-2], v[-1])


@dataclass(frozen=True)
class Dataset:
    """Design matrix, response vector and (for simulations) the truth."""

    X: np.ndarray
    y: np.ndarray
    truth: Optional[Tuple[SparsePermutation, Theta]] = None

    def __post_init__(self) -> None:
        X = _readonly(np.asarray(self.X, dtype=float))
        y = _readonly(np.asarray(self.y, dtype=float))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        n, d = X.shape
        if not (n > d >= 1):
            raise ValueError(f"need n > d >= 1, got n={n}, d={d}")
        if y.shape != (n,):
            raise ValueError("y must be a vector of length n")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _derangement(size: int, gen: np.random.Generator) -> np.ndarray:
    """Uniform derangement of ``range(size)`` by rejection sampling."""
    if size == 0:
        return np.empty(0, dtype=np.intp)
    if size == 1:
        raise ValueError("no derangement of a single element exists")
    while True:
        p = gen.permutation(size)
        if not np.any(p == np.arange(size)):
            return p.astype(np.intp)


def sample_sparse_permutation(n: int, k: int, rng: RngLike) -> SparsePermutation:
    """Sample uniformly among permutations with exactly ``k`` non-fixed points.

    A uniform ``k``-subset is displaced by a uniform derangement (rejection
    sampled, expected ~e attempts). ``k = 0`` returns the identity.
    """
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, n], got k={k}, n={n}")
    if k == 1:
        raise ValueError("k = 1 is impossible: no derangement of one element")
    gen = as_generator(rng)
    m = np.arange(n)
    if k > 0:
        subset = np.sort(gen.choice(n, size=k, replace=False))
        m[subset] = subset[_derangement(k, gen)]
    return SparsePermutation(n, m, k)


def sample_beta_sphere(d: int, norm: float, rng: RngLike) -> np.ndarray:
    """Vector of exact Euclidean length ``norm``, uniform direction."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if norm < 0:
        raise ValueError("norm must be >= 0")
    gen = as_generator(rng)
    if norm == 0.0:
        return np.zeros(d)
    v = gen.standard_normal(d)
    r = float(np.linalg.norm(v))
    while r == 0.0:  # probability zero, but keep the contract exact
        v = gen.standard_normal(d)
        r = float(np.linalg.norm(v))
    return v * (norm / r)


def apply_permutation(perm: SparsePermutation, v: np.ndarray) -> np.ndarray:
    """Row-permutation semantics: ``out[i] = v[perm.map[i]]``."""
    v = np.asarray(v)
    if v.shape[0] != perm.n:
        raise ValueError(f"length mismatch: permutation of {perm.n}, input {v.shape[0]}")
    return v[perm.map]


def simulate(
    n: int,
    d: int,
    theta: Theta,
    k: int,
    rng: RngLike,
    *,
    bernoulli: bool = False,
) -> Dataset:
    """Draw a shuffled-regression dataset with Gaussian design.

    ``X`` has i.i.d. ``N(0, 1)`` entries, the permutation moves exactly ``k``
    indices (or, with ``bernoulli=True``, each index independently with
    probability ``k / n``), and ``y = P X beta + sigma * eps``.

    The recorded truth stores the realized permutation and ``Theta`` with
    ``alpha = k / n``. Deterministic given ``(arguments, rng)``; draw order is
    X, permutation, noise.
    """
    if n <= d:
        raise ValueError("need n > d")
    if theta.d != d:
        raise ValueError("theta.beta length must equal d")
    gen = as_generator(rng)
    X = gen.standard_normal((n, d))
    if bernoulli:
        alpha = k / n
        while True:
            subset = np.flatnonzero(gen.random(n) < alpha)
            if subset.shape[0] != 1:
                break
        m = np.arange(n)
        if subset.shape[0] > 0:
            m[subset] = subset[_derangement(subset.shape[0], gen)]
        perm = SparsePermutation(n, m, int(subset.shape[0]))
    else:
        perm = sample_sparse_permutation(n, k, gen)
    eps = gen.standard_normal(n)
    y = apply_permutation(perm, X @ theta.beta) + np.sqrt(theta.sigma2) * eps
    truth_theta = Theta(theta.beta, theta.sigma2, k / n)
    return Dataset(X, y, truth=(perm, truth_theta))
