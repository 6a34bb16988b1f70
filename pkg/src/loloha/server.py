"""Server-side aggregation and unbiased longitudinal frequency estimation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import CountVector, grr_params, hash_many, seeds_to_ab, ue_params
from .errors import DegenerateMechanismError, MalformedBatchError, ParameterError
from .longitudinal import (
    PrivacyBudget,
    derive_eps_irr,
    lgrr_derive_irr,
    losue_derive_irr,
    lsue_derive_irr,
)


@dataclass(frozen=True)
class LongitudinalParams:
    """Two-round channel probabilities as seen by the estimator."""

    p1: float
    q1: float
    p2: float
    q2: float

    def __post_init__(self):
        if self.p1 == self.q1 or self.p2 == self.q2:
            raise DegenerateMechanismError(f"degenerate channel {self}")


def loloha_params(g: int, budget: PrivacyBudget) -> LongitudinalParams:
    """LOLOHA estimator parameters; q1 is replaced by 1/g (hash collisions)."""
    prr = grr_params(budget.eps_inf, g)
    irr = grr_params(derive_eps_irr(budget.eps_inf, budget.eps_1), g)
    return LongitudinalParams(prr.p, 1.0 / g, irr.p, irr.q)


def lsue_params(k: int, budget: PrivacyBudget, irr=None) -> LongitudinalParams:
    prr = ue_params(budget.eps_inf, k, "symmetric")
    irr = irr or lsue_derive_irr(budget.eps_inf, budget.eps_1)
    return LongitudinalParams(prr.p, prr.q, irr.p, irr.q)


def losue_params(k: int, budget: PrivacyBudget, irr=None) -> LongitudinalParams:
    prr = ue_params(budget.eps_inf, k, "optimal")
    irr = irr or losue_derive_irr(budget.eps_inf, budget.eps_1)
    return LongitudinalParams(prr.p, prr.q, irr.p, irr.q)


def lgrr_params(k: int, budget: PrivacyBudget, irr=None) -> LongitudinalParams:
    prr = grr_params(budget.eps_inf, k)
    irr = irr or lgrr_derive_irr(budget.eps_inf, budget.eps_1, k)
    return LongitudinalParams(prr.p, prr.q, irr.p, irr.q)


def estimate_longitudinal(counts: CountVector, params: LongitudinalParams) -> np.ndarray:
    """Unbiased two-round estimate, unclipped.

    f(v) = (C(v) - n q1 (p2 - q2) - n q2) / (n (p1 - q1)(p2 - q2))
    """
    if counts.n <= 0:
        raise ParameterError("n must be positive")
    n = counts.n
    d2 = params.p2 - params.q2
    return (counts.counts - n * params.q1 * d2 - n * params.q2) / (n * (params.p1 - params.q1) * d2)


@dataclass
class EstimateMatrix:
    """Estimated frequencies, one row per time step and one column per value."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ParameterError("estimate matrix must be 2-D (tau x k)")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("estimates must be finite")

    @property
    def tau(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def clipped(self) -> "EstimateMatrix":
        """Post-processing: clip to [0, 1] and renormalize each row to sum to 1."""
        clipped = np.clip(self.values, 0.0, 1.0)
        sums = clipped.sum(axis=1, keepdims=True)
        uniform = np.full_like(clipped, 1.0 / self.k)
        safe = np.where(sums > 0, sums, 1.0)
        return EstimateMatrix(np.where(sums > 0, clipped / safe, uniform))

    def to_csv(self, path, truth=None):
        """Write ``t,value,f_hat`` rows (plus ``f_true`` if truth is given)."""
        if truth is not None and np.shape(truth) != self.values.shape:
            raise ParameterError("truth shape does not match the estimates")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "value", "f_hat"] + (["f_true"] if truth is not None else []))
            for t in range(self.tau):
                for v in range(self.k):
                    row = [t + 1, v + 1, repr(float(self.values[t, v]))]
                    if truth is not None:
                        row.append(repr(float(truth[t][v])))
                    writer.writerow(row)


_PROTOCOLS = ("loloha", "lsue", "losue", "lgrr", "dbitflippm")


@dataclass
class ReportBatch:
    """Reports of n users over tau steps, with each user's public randomness.

    ``reports`` shapes:
      loloha, lgrr     (n, tau) integers
      lsue, losue      (n, tau, k) booleans
      dbitflippm       (n, tau, d) booleans aligned with ``sampled``

    ``hash_seeds`` (n,) is required for loloha; ``sampled`` (n, d) for
    dbitflippm. A single tag per user makes the tags constant across t.
    """

    protocol: str
    reports: np.ndarray
    k: int
    g: int | None = None
    b: int | None = None
    hash_seeds: np.ndarray | None = None
    sampled: np.ndarray | None = None

    def __post_init__(self):
        if self.protocol not in _PROTOCOLS:
            raise MalformedBatchError(f"unknown protocol {self.protocol!r}")
        self.reports = np.asarray(self.reports)
        if self.reports.ndim < 2:
            raise MalformedBatchError("reports must have shape (n, tau, ...)")
        n = self.reports.shape[0]
        if self.protocol == "loloha":
            if self.hash_seeds is None or self.g is None:
                raise MalformedBatchError("LOLOHA reports need per-user hash seeds and g")
            self.hash_seeds = np.asarray(self.hash_seeds, dtype=np.int64)
            if self.hash_seeds.shape != (n,):
                raise MalformedBatchError("one hash seed per user required")
            self._expect_ndim(2)
            self._expect_range(1, self.g)
        elif self.protocol == "lgrr":
            self._expect_ndim(2)
            self._expect_range(1, self.k)
        elif self.protocol in ("lsue", "losue"):
            self._expect_ndim(3)
            if self.reports.shape[2] != self.k:
                raise MalformedBatchError(f"UE reports must have {self.k} bits")
        else:
            if self.sampled is None or self.b is None:
                raise MalformedBatchError("dBitFlipPM reports need sampled indices and b")
            self.sampled = np.asarray(self.sampled, dtype=np.int64)
            self._expect_ndim(3)
            if self.sampled.shape != (n, self.reports.shape[2]):
                raise MalformedBatchError("sampled indices must have shape (n, d)")
            if self.sampled.size and (self.sampled.min() < 1 or self.sampled.max() > self.b):
                raise MalformedBatchError(f"sampled indices must lie in 1..{self.b}")

    def _expect_ndim(self, ndim):
        if self.reports.ndim != ndim:
            raise MalformedBatchError(
                f"{self.protocol} reports must be {ndim}-D, got shape {self.reports.shape}"
            )

    def _expect_range(self, lo, hi):
        if self.reports.size and (self.reports.min() < lo or self.reports.max() > hi):
            raise MalformedBatchError(f"report values must lie in {lo}..{hi}")

    @property
    def n(self) -> int:
        return self.reports.shape[0]

    @property
    def tau(self) -> int:
        return self.reports.shape[1]


def loloha_support_counts(batch: ReportBatch, t: int) -> CountVector:
    """C(v) = #{u : H_u(v) = x''_u,t} for every v, at 1-based step ``t``.

    Hashes are recomputed from the transmitted seeds: O(n k) per step.
    """
    if batch.protocol != "loloha":
        raise MalformedBatchError("support counting by hash needs a LOLOHA batch")
    if not 1 <= t <= batch.tau:
        raise ParameterError(f"t must lie in 1..{batch.tau}")
    a, b = seeds_to_ab(batch.hash_seeds)
    values = np.arange(1, batch.k + 1)
    hashed = hash_many(a[:, None], b[:, None], batch.g, values[None, :])
    return CountVector((hashed == batch.reports[:, [t - 1]]).sum(axis=0), batch.n)


def support_counts(batch: ReportBatch) -> np.ndarray:
    """Per-step support counts, shape (tau, k) (or (tau, b) for dBitFlipPM).

    Counts from disjoint user batches merge by addition.
    """
    if batch.protocol == "loloha":
        a, b = seeds_to_ab(batch.hash_seeds)
        values = np.arange(1, batch.k + 1)
        hashed = hash_many(a[:, None], b[:, None], batch.g, values[None, :])
        out = np.empty((batch.tau, batch.k), dtype=np.int64)
        for t in range(batch.tau):
            out[t] = (hashed == batch.reports[:, [t]]).sum(axis=0)
        return out
    if batch.protocol == "lgrr":
        out = np.zeros((batch.tau, batch.k), dtype=np.int64)
        for t in range(batch.tau):
            out[t] = np.bincount(batch.reports[:, t] - 1, minlength=batch.k)
        return out
    if batch.protocol in ("lsue", "losue"):
        return batch.reports.sum(axis=0, dtype=np.int64)
    out = np.zeros((batch.tau, batch.b), dtype=np.int64)
    cols = np.broadcast_to(batch.sampled[:, None, :], batch.reports.shape) - 1
    for t in range(batch.tau):
        out[t] = np.bincount(cols[:, t].ravel(), weights=batch.reports[:, t].ravel(),
                             minlength=batch.b).astype(np.int64)
    return out


def estimate_counts(counts: np.ndarray, n: int, params: LongitudinalParams) -> EstimateMatrix:
    """Apply the two-round estimator to every row of a (tau, k) count matrix."""
    counts = np.asarray(counts)
    return EstimateMatrix(np.stack([estimate_longitudinal(CountVector(row, n), params) for row in counts]))


def loloha_estimate(batch: ReportBatch, g: int, budget: PrivacyBudget) -> EstimateMatrix:
    if batch.protocol != "loloha" or batch.g != g:
        raise MalformedBatchError("batch does not hold LOLOHA reports for this g")
    return estimate_counts(support_counts(batch), batch.n, loloha_params(g, budget))


def ue_longitudinal_estimate(batch: ReportBatch, params: LongitudinalParams) -> EstimateMatrix:
    if batch.protocol not in ("lsue", "losue"):
        raise MalformedBatchError("batch does not hold unary-encoded reports")
    return estimate_counts(support_counts(batch), batch.n, params)


def lgrr_estimate(batch: ReportBatch, params: LongitudinalParams) -> EstimateMatrix:
    if batch.protocol != "lgrr":
        raise MalformedBatchError("batch does not hold L-GRR reports")
    return estimate_counts(support_counts(batch), batch.n, params)


def dbit_estimate_counts(counts: np.ndarray, n: int, b: int, d: int, eps_inf: float) -> EstimateMatrix:
    """One-round SUE estimate per bucket with effective sample size n d / b."""
    params = ue_params(eps_inf, b, "symmetric")
    n_eff = n * d / b
    counts = np.asarray(counts, dtype=float)
    return EstimateMatrix((counts - n_eff * params.q) / (n_eff * (params.p - params.q)))


def dbit_estimate(batch: ReportBatch, b: int, d: int, eps_inf: float) -> EstimateMatrix:
    if batch.protocol != "dbitflippm" or batch.b != b or batch.reports.shape[2] != d:
        raise MalformedBatchError("batch does not hold dBitFlipPM reports for this (b, d)")
    return dbit_estimate_counts(support_counts(batch), batch.n, b, d, eps_inf)


def expected_counts(f, n: int, params: LongitudinalParams) -> np.ndarray:
    """Exact expected support counts under the two-round channel."""
    f = np.asarray(f, dtype=float)
    p1, q1, p2, q2 = params.p1, params.q1, params.p2, params.q2
    first = f * p1 + (1 - f) * q1
    return n * (first * p2 + (1 - first) * q2)
