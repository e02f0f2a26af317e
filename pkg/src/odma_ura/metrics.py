"""Error accounting: misdetections, false alarms, PUPE, channel MSE, collisions.

Correctness is exact B-bit message identity. A message transmitted by several
colliding users counts as recovered for all of them only if their full
messages coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrialOutcome:
    ka: int
    misdetections: int
    false_alarms: int
    list_size: int
    collisions: int
    iterations: int = 0
    mse_per_iteration: tuple = ()        # per-iteration channel-estimate MSE (may be empty)
    mse_first_initial: float | None = None      # pilot-based estimate, first iteration
    mse_first_reestimated: float | None = None  # data-aided re-estimate, first iteration
    wall_clock: float = 0.0

    @property
    def pmd(self) -> float:
        return self.misdetections / self.ka

    @property
    def pfa(self) -> float:
        return self.false_alarms / self.list_size if self.list_size else 0.0


@dataclass(frozen=True)
class PupeSummary:
    Pmd: float
    Pfa: float

    @property
    def Pe(self) -> float:
        return self.Pmd + self.Pfa


def _as_key(bits) -> bytes:
    return np.asarray(bits, dtype=np.int8).tobytes()


def evaluate_trial(transmitted, decoded, prefix_len: int, *, iterations: int = 0,
                   mse_per_iteration=(), mse_first_initial=None,
                   mse_first_reestimated=None, wall_clock: float = 0.0) -> TrialOutcome:
    """Score one trial: `transmitted` is the Ka-entry message multiset,
    `decoded` the unique output list."""
    tx = [np.asarray(m, dtype=np.int8) for m in transmitted]
    if not tx:
        raise ValueError("a trial needs at least one transmitted message")
    decoded_keys = {_as_key(m) for m in decoded}
    tx_keys = [_as_key(m) for m in tx]
    misdetections = sum(1 for k in tx_keys if k not in decoded_keys)
    false_alarms = len(decoded_keys - set(tx_keys))
    return TrialOutcome(ka=len(tx), misdetections=misdetections,
                        false_alarms=false_alarms, list_size=len(decoded_keys),
                        collisions=count_collisions(tx, prefix_len),
                        iterations=iterations,
                        mse_per_iteration=tuple(mse_per_iteration),
                        mse_first_initial=mse_first_initial,
                        mse_first_reestimated=mse_first_reestimated,
                        wall_clock=wall_clock)


def compute_pupe(outcomes) -> PupeSummary:
    """Average per-trial misdetection and false-alarm fractions.

    The false-alarm fraction of a trial with an empty output list is 0 by
    convention.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("need at least one trial outcome")
    pmd = float(np.mean([o.pmd for o in outcomes]))
    pfa = float(np.mean([o.pfa for o in outcomes]))
    return PupeSummary(Pmd=pmd, Pfa=pfa)


def channel_mse(h_hat: np.ndarray, h_true: np.ndarray, matches, m: int) -> float | None:
    """Mean over matched users of ||h_hat_row - h_true_row||^2 / M.

    `matches` pairs estimate rows with truth rows; unmatched detections are
    excluded. Returns None when nothing matches.
    """
    pairs = list(matches)
    if not pairs:
        return None
    total = 0.0
    for est_row, true_row in pairs:
        diff = h_hat[est_row] - h_true[true_row]
        total += float(np.real(np.vdot(diff, diff)))
    return total / (len(pairs) * m)


def count_collisions(messages, prefix_len: int) -> int:
    """Number of users whose leading prefix_len bits are shared with another user."""
    prefixes = [_as_key(np.asarray(m, dtype=np.int8)[:prefix_len]) for m in messages]
    counts: dict[bytes, int] = {}
    for p in prefixes:
        counts[p] = counts.get(p, 0) + 1
    return sum(1 for p in prefixes if counts[p] > 1)
