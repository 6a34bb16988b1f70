"""User sequence datasets: synthetic generation, permutation and CSV I/O.

Sequence files use a long format with header ``user_id,t,value``: one row
per (user, t), t running over 1..tau. External labels are mapped to the
canonical domain 1..k through a dictionary built from the sorted distinct
labels (numeric order when every label is an integer).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ParseError

HEADER = ["user_id", "t", "value"]


@dataclass
class UserSequences:
    """n users x tau steps of values in 1..k."""

    values: np.ndarray
    k: int
    labels: list = field(default_factory=list)
    user_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise ParameterError("values must be an (n, tau) matrix")
        if self.values.size and (self.values.min() < 1 or self.values.max() > self.k):
            raise ParameterError(f"values must lie in 1..{self.k}")
        if not self.labels:
            self.labels = [str(v) for v in range(1, self.k + 1)]
        if len(self.labels) != self.k:
            raise ParameterError("need exactly one label per domain value")
        if not self.user_ids:
            self.user_ids = [str(u) for u in range(1, self.n + 1)]
        if len(self.user_ids) != self.n:
            raise ParameterError("need exactly one id per user")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def tau(self) -> int:
        return self.values.shape[1]

    def histograms(self) -> np.ndarray:
        """True relative frequencies per step, shape (tau, k)."""
        out = np.zeros((self.tau, self.k))
        for t in range(self.tau):
            out[t] = np.bincount(self.values[:, t] - 1, minlength=self.k) / self.n
        return out

    def distinct_per_user(self) -> np.ndarray:
        """Number of distinct values each user holds over the whole horizon."""
        srt = np.sort(self.values, axis=1)
        return 1 + (np.diff(srt, axis=1) != 0).sum(axis=1)

    def change_fraction(self) -> float:
        """Fraction of (user, t >= 2) cells whose value differs from t - 1."""
        if self.tau < 2:
            return 0.0
        return float((np.diff(self.values, axis=1) != 0).mean())


def gen_syn(n: int, k: int, tau: int, p_ch: float, rng: np.random.Generator) -> UserSequences:
    """Uniform start, then at each step resample uniformly with probability p_ch.

    A resample may land on the current value, so the observed change rate is
    p_ch * (1 - 1/k).
    """
    if not 0 <= p_ch <= 1:
        raise ParameterError(f"p_ch must lie in [0, 1], got {p_ch}")
    if n < 1 or tau < 1 or k < 2:
        raise ParameterError("need n >= 1, tau >= 1 and k >= 2")
    values = np.empty((n, tau), dtype=np.int64)
    values[:, 0] = rng.integers(1, k + 1, size=n)
    for t in range(1, tau):
        change = rng.random(n) < p_ch
        fresh = rng.integers(1, k + 1, size=n)
        values[:, t] = np.where(change, fresh, values[:, t - 1])
    return UserSequences(values, k)


def gen_permuted(base_values, tau: int, rng: np.random.Generator, k: int | None = None,
                 labels=None) -> UserSequences:
    """Each step is an independent uniform shuffle of a fixed multiset."""
    base = np.asarray(base_values, dtype=np.int64)
    if base.ndim != 1 or base.size == 0:
        raise ParameterError("base values must be a non-empty 1-D list")
    if tau < 1:
        raise ParameterError("tau must be at least 1")
    k = int(k if k is not None else base.max())
    values = np.stack([rng.permutation(base) for _ in range(tau)], axis=1)
    return UserSequences(values, k, labels=list(labels) if labels else [])


def _label_order(labels):
    try:
        return sorted(labels, key=int)
    except ValueError:
        return sorted(labels)


def load_sequences(path, labels=None) -> UserSequences:
    """Read a long-format sequence file.

    ``labels`` fixes the value dictionary; otherwise it is built from the
    file and any label is accepted.
    """
    rows = {}
    users = {}
    seen_labels = set()
    known = set(labels) if labels is not None else None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)}", line=1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=line)
            user, t_text, label = (cell.strip() for cell in row)
            try:
                t = int(t_text)
            except ValueError:
                raise ParseError(f"time step {t_text!r} is not an integer", line=line) from None
            if t < 1:
                raise ParseError(f"time step must be >= 1, got {t}", line=line)
            if not user or not label:
                raise ParseError("empty user_id or value", line=line)
            if known is not None and label not in known:
                raise ParseError(f"unknown label {label!r}", line=line)
            if (user, t) in rows:
                raise ParseError(f"duplicate row for user {user!r} at t={t}", line=line)
            rows[(user, t)] = label
            users.setdefault(user, None)
            seen_labels.add(label)
    if not rows:
        raise ParseError("file holds no rows")
    tau = max(t for _, t in rows)
    for user in users:
        for t in range(1, tau + 1):
            if (user, t) not in rows:
                raise ParseError(f"user {user!r} has no value at t={t}")
    ordered = list(labels) if labels is not None else _label_order(seen_labels)
    index = {label: i + 1 for i, label in enumerate(ordered)}
    user_ids = list(users)
    values = np.array([[index[rows[(u, t)]] for t in range(1, tau + 1)] for u in user_ids])
    if len(ordered) < 2:
        raise ParseError("need at least two distinct values")
    return UserSequences(values, len(ordered), labels=ordered, user_ids=user_ids)


def write_sequences(seqs: UserSequences, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for u, user in enumerate(seqs.user_ids):
            for t in range(seqs.tau):
                writer.writerow([user, t + 1, seqs.labels[seqs.values[u, t] - 1]])
