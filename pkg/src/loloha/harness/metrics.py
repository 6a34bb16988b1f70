"""Evaluation metrics: average MSE, average privacy loss, change detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError


def mse_avg(truth, est) -> float:
    """Mean over steps and values of the squared estimation error."""
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(getattr(est, "values", est), dtype=float)
    if truth.shape != est.shape:
        raise ParameterError(f"shape mismatch: truth {truth.shape} vs estimate {est.shape}")
    return float(np.mean((truth - est) ** 2))


def eps_avg(ledgers) -> float:
    """Mean accumulated longitudinal privacy loss over users."""
    ledgers = list(ledgers)
    if not ledgers:
        return 0.0
    return float(np.mean([ledger.accumulated for ledger in ledgers]))


@dataclass(frozen=True)
class AttackOutcome:
    attacked: int  # users whose every bucket change showed up as a report change
    eligible: int  # users with at least one bucket change
    false_positives: int  # report changes without a memo-class change

    @property
    def rate(self) -> float:
        return self.attacked / self.eligible if self.eligible else 0.0

    def __add__(self, other: "AttackOutcome") -> "AttackOutcome":
        return AttackOutcome(self.attacked + other.attacked, self.eligible + other.eligible,
                             self.false_positives + other.false_positives)


def change_detection(streams, buckets, memo_classes=None, exclude_unchanged=True) -> AttackOutcome:
    """Score the attack on memoized single-round report streams.

    ``streams`` has shape (n, tau, d); ``buckets`` (n, tau) holds each user's
    true bucket per step. A user is fully attacked when every step whose
    bucket differs from the previous one also carries a different report.
    Users without any bucket change are left out of the denominator unless
    ``exclude_unchanged`` is False, in which case they count as attacked.

    With ``memo_classes`` (n, tau), report changes between steps of the same
    memo class are counted as false positives (memoization forbids them).
    """
    streams = np.asarray(streams)
    buckets = np.asarray(buckets)
    if streams.ndim == 2:
        streams = streams[:, :, None]
    if streams.shape[:2] != buckets.shape:
        raise ParameterError(f"stream shape {streams.shape} does not match truth {buckets.shape}")
    report_changed = np.any(streams[:, 1:] != streams[:, :-1], axis=2)
    bucket_changed = buckets[:, 1:] != buckets[:, :-1]
    any_change = bucket_changed.any(axis=1)
    all_detected = ~np.any(bucket_changed & ~report_changed, axis=1)
    if exclude_unchanged:
        attacked = int(np.sum(all_detected & any_change))
        eligible = int(np.sum(any_change))
    else:
        attacked = int(np.sum(all_detected))
        eligible = streams.shape[0]
    false_positives = 0
    if memo_classes is not None:
        memo_classes = np.asarray(memo_classes)
        same_class = memo_classes[:, 1:] == memo_classes[:, :-1]
        false_positives = int(np.sum(same_class & report_changed))
    return AttackOutcome(attacked, eligible, false_positives)


def change_detection_attack(streams, truth, bucket_fn, exclude_unchanged=True) -> float:
    """Fraction of users for which all bucket changes were detected.

    ``truth`` is a UserSequences (or an (n, tau) value matrix) and
    ``bucket_fn`` maps values to buckets.
    """
    values = getattr(truth, "values", truth)
    return change_detection(streams, bucket_fn(np.asarray(values)), exclude_unchanged=exclude_unchanged).rate
