"""One-shot LDP primitives: GRR, local hashing, unary encoding.

Values are canonical integers in ``1..k`` throughout the package; hashed
values live in ``1..g``. Every randomized function takes an explicit
``numpy.random.Generator`` so that callers control reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMechanismError, DomainError, ParameterError

# Modulus of the hash family ((a*v + b) mod P) mod g. Mersenne prime 2^31 - 1,
# so a*v fits in int64 for every v < 2^32.
HASH_PRIME = 2**31 - 1


def _check_domain(v, k, name="v"):
    arr = np.asarray(v)
    if arr.size and (arr.min() < 1 or arr.max() > k):
        raise DomainError(f"{name} must lie in 1..{k}")


@dataclass(frozen=True)
class GrrParams:
    """Generalized randomized response over ``1..k``."""

    k: int
    p: float
    q: float

    @property
    def eps(self) -> float:
        if self.q == 0:
            return math.inf
        return math.log(self.p / self.q)


def grr_params(eps: float, k: int) -> GrrParams:
    """GRR keep/flip probabilities for budget ``eps`` over a k-ary domain.

    p = e^eps / (e^eps + k - 1) and q = (1 - p) / (k - 1), written in a form
    that stays finite for large ``eps``.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if int(k) != k or k < 2:
        raise ParameterError(f"k must be an integer >= 2, got {k}")
    k = int(k)
    e_neg = math.exp(-eps)
    p = 1.0 / (1.0 + (k - 1) * e_neg)
    q = e_neg * p
    return GrrParams(k=k, p=p, q=q)


def grr_perturb(v: int, params: GrrParams, rng: np.random.Generator) -> int:
    """Keep ``v`` w.p. ``p``, else return a uniform value among the other k-1."""
    _check_domain(v, params.k)
    if rng.random() < params.p:
        return int(v)
    other = int(rng.integers(1, params.k))
    return other if other < v else other + 1


def grr_perturb_array(values, params: GrrParams, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`grr_perturb`; each entry perturbed independently."""
    values = np.asarray(values, dtype=np.int64)
    _check_domain(values, params.k)
    return _grr_sample(values, params, rng)


def _grr_sample(values: np.ndarray, params: GrrParams, rng: np.random.Generator) -> np.ndarray:
    # one uniform per entry: below p keeps the value, the rest of [p, 1) is
    # split evenly among the k - 1 other values
    if params.p >= 1:
        return values.copy()
    u = rng.random(values.shape)
    # entries with u < p get a meaningless slot but are masked out below
    slot = ((u - params.p) * ((params.k - 1) / (1 - params.p))).astype(np.int64)
    other = 1 + np.minimum(slot, params.k - 2)
    other += other >= values
    return np.where(u < params.p, values, other)


def grr_channel(params: GrrParams) -> np.ndarray:
    """k x k transition matrix; row i is Pr[output | input = i + 1]."""
    mat = np.full((params.k, params.k), params.q)
    np.fill_diagonal(mat, params.p)
    return mat


@dataclass(frozen=True)
class UeParams:
    """Per-bit flipping probabilities of a unary encoding."""

    k: int
    p: float
    q: float
    flavor: str = "custom"

    @property
    def eps(self) -> float:
        """ln(p(1-q) / ((1-p)q)); infinite for the identity channel."""
        num = self.p * (1 - self.q)
        den = (1 - self.p) * self.q
        if den == 0:
            return math.inf
        return math.log(num / den)


def ue_params(eps: float, k: int, flavor: str = "symmetric") -> UeParams:
    """SUE (``symmetric``) or OUE (``optimal``) parameters."""
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if int(k) != k or k < 2:
        raise ParameterError(f"k must be an integer >= 2, got {k}")
    if flavor == "symmetric":
        p = 1.0 / (1.0 + math.exp(-eps / 2))
        q = 1.0 - p
    elif flavor == "optimal":
        p = 0.5
        q = 1.0 / (math.exp(eps) + 1.0)
    else:
        raise ParameterError(f"unknown UE flavor {flavor!r}")
    return UeParams(k=int(k), p=p, q=q, flavor=flavor)


def ue_encode(v: int, k: int) -> np.ndarray:
    """One-hot boolean vector of length ``k`` with bit ``v`` set."""
    _check_domain(v, k)
    bits = np.zeros(k, dtype=bool)
    bits[v - 1] = True
    return bits


def ue_perturb(bits, params: UeParams, rng: np.random.Generator) -> np.ndarray:
    """Flip each bit independently: Pr[1] = p if the bit is set, else q.

    Accepts a single vector of length k or a stack of shape (..., k).
    """
    bits = np.asarray(bits, dtype=bool)
    if bits.shape[-1:] != (params.k,):
        raise ParameterError(f"expected trailing length {params.k}, got shape {bits.shape}")
    prob = np.where(bits, params.p, params.q)
    return rng.random(bits.shape) < prob


@dataclass(frozen=True)
class SeededHash:
    """Member of the family H(v) = ((a*v + b) mod P) mod g + 1.

    ``seed`` packs the pair as ``(a - 1) * P + b`` with 1 <= a < P and
    0 <= b < P.
    """

    seed: int
    g: int
    k: int

    @property
    def a(self) -> int:
        return self.seed // HASH_PRIME + 1

    @property
    def b(self) -> int:
        return self.seed % HASH_PRIME

    def __call__(self, v):
        return hash_eval(self, v)


def _check_hash_sizes(k, g):
    if int(g) != g or g < 2:
        raise ParameterError(f"g must be an integer >= 2, got {g}")
    if int(k) != k or k < 2:
        raise ParameterError(f"k must be an integer >= 2, got {k}")
    if k >= HASH_PRIME:
        raise ParameterError(f"k must be below {HASH_PRIME}")


def hash_from_seed(seed: int, g: int, k: int) -> SeededHash:
    _check_hash_sizes(k, g)
    if not 0 <= seed < (HASH_PRIME - 1) * HASH_PRIME:
        raise ParameterError(f"hash seed {seed} out of range")
    return SeededHash(seed=int(seed), g=int(g), k=int(k))


def hash_sample(k: int, g: int, rng: np.random.Generator) -> SeededHash:
    """Draw a hash function uniformly from the family."""
    _check_hash_sizes(k, g)
    a = int(rng.integers(1, HASH_PRIME))
    b = int(rng.integers(0, HASH_PRIME))
    return SeededHash(seed=(a - 1) * HASH_PRIME + b, g=int(g), k=int(k))


def hash_eval(h: SeededHash, v):
    """Hash a value (or an array of values) from ``1..k`` into ``1..g``."""
    _check_domain(v, h.k)
    if np.isscalar(v):
        return (h.a * int(v) + h.b) % HASH_PRIME % h.g + 1
    return hash_many(np.int64(h.a), np.int64(h.b), h.g, np.asarray(v, dtype=np.int64))


def seeds_to_ab(seeds) -> tuple[np.ndarray, np.ndarray]:
    seeds = np.asarray(seeds, dtype=np.int64)
    return seeds // HASH_PRIME + 1, seeds % HASH_PRIME


def hash_many(a, b, g: int, values) -> np.ndarray:
    """Broadcasting hash evaluation over coefficient and value arrays.

    No domain check; callers validate ``values`` once up front.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    values = np.asarray(values, dtype=np.int64)
    return (a * values + b) % HASH_PRIME % g + 1


@dataclass
class CountVector:
    """Per-value support counts from ``n`` reports.

    Count vectors over disjoint user sets merge with ``+``.
    """

    counts: np.ndarray
    n: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 1:
            raise ParameterError("counts must be one-dimensional")
        if self.n < 0 or (self.counts.size and self.counts.min() < 0):
            raise ParameterError("counts and n must be non-negative")

    def __add__(self, other: "CountVector") -> "CountVector":
        if self.counts.shape != other.counts.shape:
            raise ParameterError("cannot merge count vectors of different length")
        return CountVector(self.counts + other.counts, self.n + other.n)

    @property
    def k(self) -> int:
        return self.counts.shape[0]


def estimate_pure(counts: CountVector, p: float, q: float) -> np.ndarray:
    """Unbiased one-round estimate f(v) = (C(v) - n q) / (n (p - q)). Unclipped."""
    if p == q:
        raise DegenerateMechanismError("p == q: the mechanism carries no signal")
    if counts.n <= 0:
        raise ParameterError("n must be positive")
    n = counts.n
    return (counts.counts - n * q) / (n * (p - q))
