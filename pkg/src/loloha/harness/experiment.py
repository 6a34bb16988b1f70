"""End-to-end simulation of a longitudinal protocol over a user population.

Determinism: user ``u`` in run ``r`` draws all its randomness from
``SeedSequence(seed, spawn_key=(1, r, u))``, and the synthetic dataset from
``spawn_key=(0, 0, 0)``. Users are simulated in fixed-size chunks whose
partial counts merge by addition, so results do not depend on how many
worker processes share the chunks.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..analysis import canonical_protocol, resolve_g
from ..errors import ParameterError
from ..longitudinal import (
    UNSAMPLED,
    LgrrClient,
    PrivacyBudget,
    UeLongClient,
    bucketize,
    dbit_init,
    lgrr_derive_irr,
    loloha_init,
    losue_derive_irr,
    lsue_derive_irr,
)
from ..server import (
    EstimateMatrix,
    ReportBatch,
    dbit_estimate_counts,
    estimate_counts,
    lgrr_params,
    loloha_params,
    losue_params,
    lsue_params,
    support_counts,
)
from .data import UserSequences, gen_permuted, gen_syn, load_sequences
from .metrics import AttackOutcome, change_detection, mse_avg

CHUNK_SIZE = 256


def user_rng(seed: int, run: int, user: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, run, user)))


def data_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, 0, 0)))


@dataclass(frozen=True)
class SynSpec:
    n: int
    k: int
    tau: int
    p_ch: float


@dataclass(frozen=True)
class PermutedSpec:
    """Fixed multiset read from a CSV with a ``value`` column, shuffled tau times."""

    path: str
    tau: int


@dataclass
class ExperimentConfig:
    protocol: str
    eps_inf: float
    alpha: float
    runs: int = 1
    seed: int = 0
    g: int | None = None
    b: int | None = None
    d: int | None = None
    data: SynSpec | PermutedSpec | str | None = None
    # users whose bucket never changes are left out of the attack denominator
    attack_exclude_unchanged: bool = True

    def __post_init__(self):
        self.protocol = canonical_protocol(self.protocol)
        if self.runs < 1:
            raise ParameterError("runs must be at least 1")
        if self.protocol == "dbitflippm" and self.d is None:
            raise ParameterError("dBitFlipPM needs d")
        if self.protocol == "loloha" and self.g is None:
            raise ParameterError("plain LOLOHA needs g")

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget.from_alpha(self.eps_inf, self.alpha)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name)
               for name in ("protocol", "eps_inf", "alpha", "runs", "seed", "g", "b", "d",
                            "attack_exclude_unchanged")}
        if isinstance(self.data, (SynSpec, PermutedSpec)):
            out["data"] = {"kind": type(self.data).__name__, **asdict(self.data)}
        elif isinstance(self.data, UserSequences):
            out["data"] = {"kind": "UserSequences", "n": self.data.n, "k": self.data.k,
                           "tau": self.data.tau}
        else:
            out["data"] = self.data
        return out


def load_dataset(source, seed: int = 0) -> UserSequences:
    if isinstance(source, UserSequences):
        return source
    if isinstance(source, SynSpec):
        return gen_syn(source.n, source.k, source.tau, source.p_ch, data_rng(seed))
    if isinstance(source, PermutedSpec):
        with open(source.path, newline="") as fh:
            labels = [row["value"].strip() for row in csv.DictReader(fh)]
        try:
            ordered = sorted(set(labels), key=int)
        except ValueError:
            ordered = sorted(set(labels))
        index = {label: i + 1 for i, label in enumerate(ordered)}
        base = [index[label] for label in labels]
        return gen_permuted(base, source.tau, data_rng(seed), k=len(ordered), labels=ordered)
    if isinstance(source, str):
        return load_sequences(source)
    raise ParameterError("no dataset given")


@dataclass(frozen=True)
class _Setup:
    protocol: str  # loloha | lsue | losue | lgrr | dbitflippm
    k: int
    budget: PrivacyBudget
    g: int | None
    b: int | None
    d: int | None
    irr: object = None
    exclude_unchanged: bool = True


@dataclass
class _ChunkResult:
    counts: np.ndarray
    n: int
    eps: np.ndarray
    attack: AttackOutcome | None = None


def _simulate_chunk(task) -> _ChunkResult:
    setup, values, seed, run, offset = task
    n, tau = values.shape
    eps = np.empty(n)
    kind = setup.protocol
    if kind == "loloha":
        reports = np.empty((n, tau), dtype=np.int64)
        seeds = np.empty(n, dtype=np.int64)
        for i in range(n):
            rng = user_rng(seed, run, offset + i)
            client = loloha_init(setup.budget, setup.k, setup.g, rng)
            reports[i] = client.report_sequence(values[i], rng)
            seeds[i] = client.hash.seed
            eps[i] = client.ledger.accumulated
        batch = ReportBatch("loloha", reports, setup.k, g=setup.g, hash_seeds=seeds)
        return _ChunkResult(support_counts(batch), n, eps)
    if kind in ("lsue", "losue"):
        reports = np.empty((n, tau, setup.k), dtype=bool)
        for i in range(n):
            rng = user_rng(seed, run, offset + i)
            client = UeLongClient(kind, setup.k, setup.budget, irr=setup.irr)
            reports[i] = client.report_sequence(values[i], rng)
            eps[i] = client.ledger.accumulated
        return _ChunkResult(support_counts(ReportBatch(kind, reports, setup.k)), n, eps)
    if kind == "lgrr":
        reports = np.empty((n, tau), dtype=np.int64)
        for i in range(n):
            rng = user_rng(seed, run, offset + i)
            client = LgrrClient(setup.k, setup.budget, irr=setup.irr)
            reports[i] = client.report_sequence(values[i], rng)
            eps[i] = client.ledger.accumulated
        return _ChunkResult(support_counts(ReportBatch("lgrr", reports, setup.k)), n, eps)
    reports = np.empty((n, tau, setup.d), dtype=bool)
    sampled = np.empty((n, setup.d), dtype=np.int64)
    classes = np.empty((n, tau), dtype=np.int64)
    for i in range(n):
        rng = user_rng(seed, run, offset + i)
        client = dbit_init(setup.k, setup.b, setup.d, setup.budget.eps_inf, rng)
        reports[i] = client.report_sequence(values[i], rng)
        sampled[i] = client.sampled
        buckets = client.bucket(values[i])
        classes[i] = np.where(np.isin(buckets, client.sampled), buckets, UNSAMPLED)
        eps[i] = client.ledger.accumulated
    batch = ReportBatch("dbitflippm", reports, setup.k, b=setup.b, sampled=sampled)
    attack = change_detection(reports, bucketize(values, setup.k, setup.b), memo_classes=classes,
                               exclude_unchanged=setup.exclude_unchanged)
    return _ChunkResult(support_counts(batch), n, eps, attack)


@dataclass
class Metrics:
    mse_avg: float
    eps_avg: float
    attack_rate: float | None = None
    mse_runs: list = field(default_factory=list)
    eps_runs: list = field(default_factory=list)
    attack_runs: list = field(default_factory=list)
    false_positives: int = 0
    comparable: bool = True  # False when dBitFlipPM estimates b < k buckets


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    g: int | None
    truth: np.ndarray
    estimates: list
    metrics: Metrics

    def metrics_document(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "g": self.g,
            **asdict(self.metrics),
        }

    def write_metrics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metrics_document(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_estimates(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run", "t", "value", "f_true", "f_hat"])
            for run, est in enumerate(self.estimates, start=1):
                for t in range(est.tau):
                    for v in range(est.k):
                        writer.writerow([run, t + 1, v + 1, repr(float(self.truth[t, v])),
                                         repr(float(est.values[t, v]))])


def _make_setup(config: ExperimentConfig, k: int) -> tuple[_Setup, int | None]:
    budget = config.budget
    kind = config.protocol
    if kind in ("loloha", "biloloha", "ololoha"):
        g = resolve_g(kind, budget, config.g)
        return _Setup("loloha", k, budget, g, None, None), g
    if kind == "lsue":
        return _Setup(kind, k, budget, None, None, None, lsue_derive_irr(budget.eps_inf, budget.eps_1)), None
    if kind == "losue":
        return _Setup(kind, k, budget, None, None, None, losue_derive_irr(budget.eps_inf, budget.eps_1)), None
    if kind == "lgrr":
        return _Setup(kind, k, budget, None, None, None, lgrr_derive_irr(budget.eps_inf, budget.eps_1, k)), None
    b = config.b if config.b is not None else k
    return _Setup("dbitflippm", k, budget, None, b, config.d,
                  exclude_unchanged=config.attack_exclude_unchanged), None


def _estimate(setup: _Setup, counts: np.ndarray, n: int) -> EstimateMatrix:
    budget = setup.budget
    if setup.protocol == "loloha":
        params = loloha_params(setup.g, budget)
    elif setup.protocol == "lsue":
        params = lsue_params(setup.k, budget, setup.irr)
    elif setup.protocol == "losue":
        params = losue_params(setup.k, budget, setup.irr)
    elif setup.protocol == "lgrr":
        params = lgrr_params(setup.k, budget, setup.irr)
    else:
        return dbit_estimate_counts(counts, n, setup.b, setup.d, budget.eps_inf)
    return estimate_counts(counts, n, params)


def run_experiment(config: ExperimentConfig, data: UserSequences | None = None,
                   workers: int = 1, chunk_size: int = CHUNK_SIZE) -> ExperimentResult:
    """Simulate ``config.runs`` independent collections over the dataset.

    Each run initializes fresh clients, drives all tau collections, aggregates
    per step and estimates. Metrics are averaged over runs.
    """
    seqs = load_dataset(data if data is not None else config.data, config.seed)
    setup, g = _make_setup(config, seqs.k)
    truth = seqs.histograms()
    comparable = True
    if setup.protocol == "dbitflippm":
        if not 2 <= setup.b <= seqs.k:
            raise ParameterError(f"need 2 <= b <= k, got b={setup.b}, k={seqs.k}")
        if setup.b < seqs.k:
            comparable = False
            buckets = bucketize(np.arange(1, seqs.k + 1), seqs.k, setup.b)
            truth = np.stack([np.bincount(buckets - 1, weights=row, minlength=setup.b) for row in truth])

    tasks = []
    for run in range(config.runs):
        for start in range(0, seqs.n, chunk_size):
            chunk = seqs.values[start:start + chunk_size]
            tasks.append((setup, chunk, config.seed, run, start))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_chunk, tasks))
    else:
        results = [_simulate_chunk(task) for task in tasks]

    per_run = math.ceil(seqs.n / chunk_size)
    estimates, mse_runs, eps_runs, attack_runs = [], [], [], []
    false_positives = 0
    for run in range(config.runs):
        parts = results[run * per_run:(run + 1) * per_run]
        counts = sum(part.counts for part in parts)
        est = _estimate(setup, counts, seqs.n)
        estimates.append(est)
        mse_runs.append(mse_avg(truth, est))
        eps_runs.append(float(np.concatenate([part.eps for part in parts]).mean()))
        if setup.protocol == "dbitflippm":
            outcome = sum((part.attack for part in parts), AttackOutcome(0, 0, 0))
            attack_runs.append(outcome.rate)
            false_positives += outcome.false_positives

    metrics = Metrics(
        mse_avg=float(np.mean(mse_runs)),
        eps_avg=float(np.mean(eps_runs)),
        attack_rate=float(np.mean(attack_runs)) if attack_runs else None,
        mse_runs=mse_runs,
        eps_runs=eps_runs,
        attack_runs=attack_runs,
        false_positives=false_positives,
        comparable=comparable,
    )
    return ExperimentResult(config, g, truth, estimates, metrics)
