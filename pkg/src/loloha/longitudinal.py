"""Client-side longitudinal protocols with memoization and privacy ledgers.

Five protocols share one shape: a permanent randomized response (PRR) is
drawn once per memo class and cached, and every report is either the cached
value itself (dBitFlipPM) or a fresh instantaneous randomization of it (IRR).

* LOLOHA      hash to ``1..g``, GRR at eps_inf (PRR), GRR at eps_irr (IRR)
* L-SUE       a.k.a. RAPPOR: SUE at eps_inf, then symmetric UE
* L-OSUE      OUE at eps_inf, then symmetric UE
* L-GRR       GRR at eps_inf, then GRR
* dBitFlipPM  d sampled buckets out of b, SUE at eps_inf, no IRR

Clients mutate in place: ``report`` returns the emission and updates the
memo table and ledger. ``report_sequence`` processes a whole time series in
one vectorized call with the same semantics.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GrrParams,
    SeededHash,
    UeParams,
    _check_domain,
    _grr_sample,
    grr_channel,
    grr_params,
    grr_perturb,
    grr_perturb_array,
    hash_from_seed,
    hash_many,
    hash_sample,
    ue_encode,
    ue_params,
    ue_perturb,
)
from .errors import BudgetError, ParameterError


@dataclass(frozen=True)
class PrivacyBudget:
    """Longitudinal budget ``eps_inf`` and first-report budget ``eps_1``."""

    eps_inf: float
    eps_1: float

    def __post_init__(self):
        if not self.eps_inf > 0:
            raise BudgetError(f"eps_inf must be positive, got {self.eps_inf}")
        if not 0 < self.eps_1 < self.eps_inf:
            raise BudgetError(
                f"need 0 < eps_1 < eps_inf, got eps_1={self.eps_1}, eps_inf={self.eps_inf}"
            )

    @classmethod
    def from_alpha(cls, eps_inf: float, alpha: float) -> "PrivacyBudget":
        if not 0 < alpha < 1:
            raise BudgetError(f"alpha must lie in (0, 1), got {alpha}")
        return cls(eps_inf, alpha * eps_inf)

    @property
    def alpha(self) -> float:
        return self.eps_1 / self.eps_inf


@dataclass
class PrivacyLedger:
    """Counts eps_inf once per distinct memoized class."""

    eps_per_class: float
    capacity: int
    classes: set = field(default_factory=set)

    def record(self, memo_class) -> bool:
        """Register a memoization; returns True if the class is new."""
        if memo_class in self.classes:
            return False
        if len(self.classes) >= self.capacity:
            raise RuntimeError("ledger capacity exceeded; memo classes are miscounted")
        self.classes.add(memo_class)
        return True

    @property
    def accumulated(self) -> float:
        return len(self.classes) * self.eps_per_class

    @property
    def cap(self) -> float:
        return self.capacity * self.eps_per_class


def derive_eps_irr(eps_inf: float, eps_1: float) -> float:
    """IRR budget that makes the chained LOLOHA report exactly eps_1-LDP."""
    if not 0 < eps_1 < eps_inf:
        raise BudgetError(f"need 0 < eps_1 < eps_inf, got eps_1={eps_1}, eps_inf={eps_inf}")
    # ln((e^(ei+e1) - 1) / (e^ei - e^e1)), factored by e^ei for stability
    num = math.exp(eps_1) - math.exp(-eps_inf)
    den = -math.expm1(eps_1 - eps_inf)
    return math.log(num / den)


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def lsue_derive_irr(eps_inf: float, eps_1: float) -> UeParams:
    """Symmetric IRR (p2, 1 - p2) for RAPPOR so the first report is eps_1-LDP.

    Chaining two symmetric channels gives a symmetric channel with
    p_s = p1 p2 + (1 - p1)(1 - p2), and a symmetric UE with keep probability
    p_s has eps = 2 ln(p_s / (1 - p_s)). Solving for p2 is linear.
    """
    if not 0 < eps_1 <= eps_inf:
        raise BudgetError(f"need 0 < eps_1 <= eps_inf, got eps_1={eps_1}, eps_inf={eps_inf}")
    p1 = _sigmoid(eps_inf / 2)
    ps = _sigmoid(eps_1 / 2)
    p2 = (ps - (1 - p1)) / (2 * p1 - 1)
    p2 = min(p2, 1.0)
    if not 0.5 < p2 <= 1.0:
        raise BudgetError(f"infeasible L-SUE budget: p2={p2}")
    return UeParams(k=0, p=p2, q=1.0 - p2, flavor="symmetric")


def losue_derive_irr(eps_inf: float, eps_1: float) -> UeParams:
    """Symmetric IRR for L-OSUE (OUE at eps_inf as PRR)."""
    if not 0 < eps_1 <= eps_inf:
        raise BudgetError(f"need 0 < eps_1 <= eps_inf, got eps_1={eps_1}, eps_inf={eps_inf}")
    ea, eb = math.exp(eps_inf), math.exp(eps_1)
    p2 = (ea * eb - 1) / (ea - eb + ea * eb - 1)
    if not 0.5 < p2 <= 1.0:
        raise BudgetError(f"infeasible L-OSUE budget: p2={p2}")
    return UeParams(k=0, p=p2, q=1.0 - p2, flavor="symmetric")


def lgrr_derive_irr(eps_inf: float, eps_1: float, k: int) -> GrrParams:
    """GRR-shaped IRR (p2, (1 - p2)/(k - 1)) for L-GRR."""
    if not 0 < eps_1 <= eps_inf:
        raise BudgetError(f"need 0 < eps_1 <= eps_inf, got eps_1={eps_1}, eps_inf={eps_inf}")
    if int(k) != k or k < 2:
        raise ParameterError(f"k must be an integer >= 2, got {k}")
    ea, eb = math.exp(eps_inf), math.exp(eps_1)
    p2 = (ea * eb - 1) / (-k * eb + (k - 1) * ea + eb + ea * eb - 1)
    if not 1.0 / k < p2 <= 1.0 + 1e-15:
        raise BudgetError(f"infeasible L-GRR budget for k={k}: p2={p2}")
    p2 = min(p2, 1.0)
    return GrrParams(k=int(k), p=p2, q=(1 - p2) / (k - 1))


def bucketize(v, k: int, b: int):
    """Equal-width bucket of ``v`` in ``1..b``: 1 + floor((v - 1) * b / k)."""
    if np.isscalar(v):
        return 1 + (int(v) - 1) * b // k
    return 1 + (np.asarray(v, dtype=np.int64) - 1) * b // k


def max_likelihood_ratio(dist: np.ndarray) -> float:
    """Worst-case ratio Pr[y | v1] / Pr[y | v2] over outputs y and inputs v1, v2.

    ``dist`` has one row per input and one column per output.
    """
    dist = np.asarray(dist, dtype=float)
    hi = dist.max(axis=0)
    lo = dist.min(axis=0)
    live = hi > 0
    if np.any(lo[live] == 0):
        return math.inf
    return float(np.max(hi[live] / lo[live]))


def _bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in bits)


def _str_to_bits(text: str) -> np.ndarray:
    return np.array([c == "1" for c in text], dtype=bool)


class LolohaClient:
    """Longitudinal local hashing client.

    Memo classes are hashed values, so the ledger never exceeds g * eps_inf.
    """

    protocol = "loloha"

    def __init__(self, hash: SeededHash, budget: PrivacyBudget):
        self.hash = hash
        self.budget = budget
        self.eps_irr = derive_eps_irr(budget.eps_inf, budget.eps_1)
        self.prr = grr_params(budget.eps_inf, hash.g)
        self.irr = grr_params(self.eps_irr, hash.g)
        self.memo: dict[int, int] = {}
        self.ledger = PrivacyLedger(budget.eps_inf, hash.g)

    @property
    def k(self) -> int:
        return self.hash.k

    @property
    def g(self) -> int:
        return self.hash.g

    def memo_class(self, v: int) -> int:
        return self.hash(v)

    def report(self, v: int, rng: np.random.Generator) -> int:
        x = self.hash(v)
        if x not in self.memo:
            self.memo[x] = grr_perturb(x, self.prr, rng)
            self.ledger.record(x)
        return grr_perturb(self.memo[x], self.irr, rng)

    def report_sequence(self, values, rng: np.random.Generator) -> np.ndarray:
        values = np.atleast_1d(np.asarray(values, dtype=np.int64))
        _check_domain(values, self.k)
        xs = hash_many(self.hash.a, self.hash.b, self.g, values)
        fresh = [x for x in dict.fromkeys(xs.tolist()) if x not in self.memo]
        if fresh:
            drawn = _grr_sample(np.array(fresh, dtype=np.int64), self.prr, rng)
            for x, x_prime in zip(fresh, drawn.tolist()):
                self.memo[x] = x_prime
                self.ledger.record(x)
        table = np.zeros(self.g + 1, dtype=np.int64)
        table[list(self.memo)] = list(self.memo.values())
        return _grr_sample(table[xs], self.irr, rng)

    def prr_distribution(self) -> np.ndarray:
        """Exact k x g matrix of Pr[x' | v] under this client's hash."""
        chan = grr_channel(self.prr)
        xs = self.hash(np.arange(1, self.k + 1))
        return chan[xs - 1]

    def report_distribution(self) -> np.ndarray:
        """Exact k x g matrix of Pr[x'' | v] for a first report.

        Sums over every PRR outcome x' explicitly.
        """
        prr = self.prr_distribution()
        irr = grr_channel(self.irr)
        out = np.zeros((self.k, self.g))
        for x_prime in range(self.g):
            out += prr[:, [x_prime]] * irr[[x_prime], :]
        return out

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "k": self.k,
            "g": self.g,
            "hash_seed": self.hash.seed,
            "eps_inf": self.budget.eps_inf,
            "eps_1": self.budget.eps_1,
            "memo": {str(x): x_prime for x, x_prime in sorted(self.memo.items())},
            "ledger": sorted(self.ledger.classes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LolohaClient":
        client = cls(
            hash_from_seed(data["hash_seed"], data["g"], data["k"]),
            PrivacyBudget(data["eps_inf"], data["eps_1"]),
        )
        client.memo = {int(x): int(x_prime) for x, x_prime in data["memo"].items()}
        for x in data["ledger"]:
            client.ledger.record(int(x))
        return client


def loloha_init(budget: PrivacyBudget, k: int, g: int, rng: np.random.Generator) -> LolohaClient:
    """Sample a hash function and return a fresh client."""
    return LolohaClient(hash_sample(k, g, rng), budget)


class UeLongClient:
    """Two-round unary encoding client: ``lsue`` (RAPPOR) or ``losue``.

    ``irr`` overrides the derived second-round parameters, e.g. RAPPOR's
    deployed (0.75, 0.25).
    """

    def __init__(self, flavor: str, k: int, budget: PrivacyBudget, irr: UeParams | None = None):
        if flavor not in ("lsue", "losue"):
            raise ParameterError(f"unknown UE flavor {flavor!r}")
        self.flavor = flavor
        self.protocol = flavor
        self.k = int(k)
        self.budget = budget
        prr_flavor = "symmetric" if flavor == "lsue" else "optimal"
        self.prr = ue_params(budget.eps_inf, self.k, prr_flavor)
        if irr is None:
            derive = lsue_derive_irr if flavor == "lsue" else losue_derive_irr
            irr = derive(budget.eps_inf, budget.eps_1)
        self.irr = UeParams(k=self.k, p=irr.p, q=irr.q, flavor=irr.flavor)
        self.memo: dict[int, np.ndarray] = {}
        self.ledger = PrivacyLedger(budget.eps_inf, self.k)

    def memo_class(self, v: int) -> int:
        return int(v)

    def report(self, v: int, rng: np.random.Generator) -> np.ndarray:
        if v not in self.memo:
            self.memo[v] = ue_perturb(ue_encode(v, self.k), self.prr, rng)
            self.ledger.record(int(v))
        return ue_perturb(self.memo[v], self.irr, rng)

    def report_sequence(self, values, rng: np.random.Generator) -> np.ndarray:
        values = np.atleast_1d(np.asarray(values, dtype=np.int64))
        _check_domain(values, self.k)
        fresh = [int(v) for v in dict.fromkeys(values.tolist()) if v not in self.memo]
        if fresh:
            onehot = np.zeros((len(fresh), self.k), dtype=bool)
            onehot[np.arange(len(fresh)), np.array(fresh) - 1] = True
            drawn = ue_perturb(onehot, self.prr, rng)
            for v, row in zip(fresh, drawn):
                self.memo[v] = row
                self.ledger.record(v)
        keys = list(self.memo)
        index = np.zeros(self.k + 1, dtype=np.int64)
        index[keys] = np.arange(len(keys))
        stack = np.stack([self.memo[v] for v in keys])
        return ue_perturb(stack[index[values]], self.irr, rng)

    def _all_vectors(self):
        return np.array(list(itertools.product([False, True], repeat=self.k)), dtype=bool)

    @staticmethod
    def _ue_transition(src: np.ndarray, dst: np.ndarray, params: UeParams) -> np.ndarray:
        # Pr[dst | src] for every pair of bit vectors, by explicit product over bits
        p1 = np.where(src[:, None, :], params.p, params.q)
        return np.prod(np.where(dst[None, :, :], p1, 1 - p1), axis=2)

    def prr_distribution(self) -> np.ndarray:
        """Exact k x 2^k matrix Pr[x' | v]; only practical for small k."""
        vectors = self._all_vectors()
        onehot = np.eye(self.k, dtype=bool)
        return self._ue_transition(onehot, vectors, self.prr)

    def report_distribution(self) -> np.ndarray:
        """Exact k x 2^k matrix Pr[x'' | v], enumerating every PRR vector."""
        vectors = self._all_vectors()
        return self.prr_distribution() @ self._ue_transition(vectors, vectors, self.irr)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "k": self.k,
            "eps_inf": self.budget.eps_inf,
            "eps_1": self.budget.eps_1,
            "irr": [self.irr.p, self.irr.q],
            "memo": {str(v): _bits_to_str(bits) for v, bits in sorted(self.memo.items())},
            "ledger": sorted(self.ledger.classes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UeLongClient":
        p2, q2 = data["irr"]
        client = cls(
            data["protocol"],
            data["k"],
            PrivacyBudget(data["eps_inf"], data["eps_1"]),
            irr=UeParams(k=data["k"], p=p2, q=q2, flavor="symmetric"),
        )
        client.memo = {int(v): _str_to_bits(bits) for v, bits in data["memo"].items()}
        for v in data["ledger"]:
            client.ledger.record(int(v))
        return client


class LgrrClient:
    """GRR chained with GRR over the raw domain."""

    protocol = "lgrr"

    def __init__(self, k: int, budget: PrivacyBudget, irr: GrrParams | None = None):
        self.k = int(k)
        self.budget = budget
        self.prr = grr_params(budget.eps_inf, self.k)
        self.irr = irr if irr is not None else lgrr_derive_irr(budget.eps_inf, budget.eps_1, self.k)
        self.memo: dict[int, int] = {}
        self.ledger = PrivacyLedger(budget.eps_inf, self.k)

    def memo_class(self, v: int) -> int:
        return int(v)

    def report(self, v: int, rng: np.random.Generator) -> int:
        if v not in self.memo:
            self.memo[v] = grr_perturb(v, self.prr, rng)
            self.ledger.record(int(v))
        return grr_perturb(self.memo[v], self.irr, rng)

    def report_sequence(self, values, rng: np.random.Generator) -> np.ndarray:
        values = np.atleast_1d(np.asarray(values, dtype=np.int64))
        _check_domain(values, self.k)
        fresh = [int(v) for v in dict.fromkeys(values.tolist()) if v not in self.memo]
        if fresh:
            for v, x_prime in zip(fresh, grr_perturb_array(fresh, self.prr, rng).tolist()):
                self.memo[v] = x_prime
                self.ledger.record(v)
        table = np.zeros(self.k + 1, dtype=np.int64)
        for v, x_prime in self.memo.items():
            table[v] = x_prime
        return grr_perturb_array(table[values], self.irr, rng)

    def prr_distribution(self) -> np.ndarray:
        return grr_channel(self.prr)

    def report_distribution(self) -> np.ndarray:
        prr = grr_channel(self.prr)
        irr = grr_channel(self.irr)
        out = np.zeros((self.k, self.k))
        for x_prime in range(self.k):
            out += prr[:, [x_prime]] * irr[[x_prime], :]
        return out

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "k": self.k,
            "eps_inf": self.budget.eps_inf,
            "eps_1": self.budget.eps_1,
            "irr": [self.irr.p, self.irr.q],
            "memo": {str(v): x for v, x in sorted(self.memo.items())},
            "ledger": sorted(self.ledger.classes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LgrrClient":
        p2, q2 = data["irr"]
        client = cls(data["k"], PrivacyBudget(data["eps_inf"], data["eps_1"]),
                     irr=GrrParams(k=data["k"], p=p2, q=q2))
        client.memo = {int(v): int(x) for v, x in data["memo"].items()}
        for v in data["ledger"]:
            client.ledger.record(int(v))
        return client


UNSAMPLED = 0


class DBitClient:
    """dBitFlipPM: d of b buckets sampled once, SUE bits memoized per class.

    The memo class is the bucket when it is sampled and a single shared
    ``UNSAMPLED`` class otherwise, since every unsampled bucket yields the same
    bit distribution.
    """

    protocol = "dbitflippm"

    def __init__(self, k: int, b: int, d: int, eps_inf: float, sampled):
        if int(b) != b or not 2 <= b <= k:
            raise ParameterError(f"need 2 <= b <= k, got b={b}, k={k}")
        if int(d) != d or not 1 <= d <= b:
            raise ParameterError(f"need 1 <= d <= b, got d={d}, b={b}")
        sampled = np.sort(np.asarray(sampled, dtype=np.int64))
        if sampled.shape != (d,) or len(set(sampled.tolist())) != d:
            raise ParameterError("sampled indices must be d distinct buckets")
        if sampled.min() < 1 or sampled.max() > b:
            raise ParameterError(f"sampled indices must lie in 1..{b}")
        self.k, self.b, self.d = int(k), int(b), int(d)
        self.eps_inf = float(eps_inf)
        self.sampled = sampled
        self.params = ue_params(eps_inf, self.b, "symmetric")
        self.memo: dict[int, np.ndarray] = {}
        self.ledger = PrivacyLedger(self.eps_inf, min(self.d + 1, self.b))

    def bucket(self, v):
        return bucketize(v, self.k, self.b)

    def memo_class(self, v: int) -> int:
        j = self.bucket(v)
        return int(j) if j in self.sampled else UNSAMPLED

    def _sanitize(self, memo_class: int, rng) -> np.ndarray:
        onehot = self.sampled == memo_class
        return ue_perturb(onehot, UeParams(self.d, self.params.p, self.params.q), rng)

    def _memoized(self, memo_class: int, rng) -> np.ndarray:
        if memo_class not in self.memo:
            self.memo[memo_class] = self._sanitize(memo_class, rng)
            self.ledger.record(memo_class)
        return self.memo[memo_class]

    def report(self, v: int, rng: np.random.Generator) -> list[tuple[int, int]]:
        _check_domain(v, self.k)
        bits = self._memoized(self.memo_class(v), rng)
        return [(int(j), int(x)) for j, x in zip(self.sampled, bits)]

    def report_sequence(self, values, rng: np.random.Generator) -> np.ndarray:
        """Memoized bit vectors, shape (tau, d), columns aligned with ``sampled``."""
        values = np.atleast_1d(np.asarray(values, dtype=np.int64))
        _check_domain(values, self.k)
        buckets = self.bucket(values)
        classes = np.where(np.isin(buckets, self.sampled), buckets, UNSAMPLED)
        for c in dict.fromkeys(classes.tolist()):
            self._memoized(int(c), rng)
        keys = list(self.memo)
        index = np.zeros(self.b + 1, dtype=np.int64)
        index[keys] = np.arange(len(keys))
        stack = np.stack([self.memo[c] for c in keys])
        return stack[index[classes]]

    def report_distribution(self) -> np.ndarray:
        """Exact k x 2^d matrix Pr[report | v] given the sampled indices."""
        vectors = np.array(list(itertools.product([False, True], repeat=self.d)), dtype=bool)
        out = np.empty((self.k, len(vectors)))
        for v in range(1, self.k + 1):
            hot = self.sampled == self.bucket(v)
            p1 = np.where(hot, self.params.p, self.params.q)
            out[v - 1] = np.prod(np.where(vectors, p1, 1 - p1), axis=1)
        return out

    prr_distribution = report_distribution

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "k": self.k,
            "b": self.b,
            "d": self.d,
            "eps_inf": self.eps_inf,
            "sampled": self.sampled.tolist(),
            "memo": {str(c): _bits_to_str(bits) for c, bits in sorted(self.memo.items())},
            "ledger": sorted(self.ledger.classes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DBitClient":
        client = cls(data["k"], data["b"], data["d"], data["eps_inf"], data["sampled"])
        client.memo = {int(c): _str_to_bits(bits) for c, bits in data["memo"].items()}
        for c in data["ledger"]:
            client.ledger.record(int(c))
        return client


def dbit_init(k: int, b: int, d: int, eps_inf: float, rng: np.random.Generator) -> DBitClient:
    """Draw d distinct buckets without replacement; they stay fixed."""
    if int(b) != b or not 2 <= b <= k:
        raise ParameterError(f"need 2 <= b <= k, got b={b}, k={k}")
    if int(d) != d or not 1 <= d <= b:
        raise ParameterError(f"need 1 <= d <= b, got d={d}, b={b}")
    sampled = rng.choice(np.arange(1, b + 1), size=d, replace=False)
    return DBitClient(k, b, d, eps_inf, sampled)


_CLIENT_TYPES = {
    "loloha": LolohaClient,
    "lsue": UeLongClient,
    "losue": UeLongClient,
    "lgrr": LgrrClient,
    "dbitflippm": DBitClient,
}


def dumps_client(client) -> str:
    """Serialize client state (parameters, memo, ledger) to JSON text."""
    return json.dumps(client.to_dict(), sort_keys=True)


def loads_client(text: str):
    data = json.loads(text)
    try:
        kind = _CLIENT_TYPES[data["protocol"]]
    except KeyError:
        raise ParameterError(f"unknown protocol tag {data.get('protocol')!r}") from None
    return kind.from_dict(data)
