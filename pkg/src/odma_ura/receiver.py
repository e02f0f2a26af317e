"""Iterative multi-user receiver.

One pass of greedy joint pilot/pattern detection feeds an iterative loop of
ridge-regularized channel estimation on the residual pilot part, per-user
maximal-ratio combining and list decoding, and successive interference
cancellation with either the pilot-based channel estimates or data-aided
re-estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import fec, transmitter
from .channel import ReceivedFrame
from .codebooks import CodebookSet, ExtendedPilotCodebook
from .config import SIC_INITIAL, SystemConfig

# Gram matrices above this condition number get flagged in the diagnostics.
_CONDITION_ALERT = 1e10


@dataclass(frozen=True)
class DetectedSet:
    """Detected pilot/pattern indices (1-based), in selection order."""

    indices: np.ndarray
    prefix_bits: np.ndarray  # (count, Bp) leading message bits per index

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    n_active: int                 # detected indices still in play at iteration start
    n_decoded: int
    residual_energy: float        # squared Frobenius norm of the residual after SIC
    channel_mse: float | None     # pilot-based estimates vs truth, when truth given
    condition_alert: bool = False


@dataclass
class DecodeOutput:
    messages: list            # unique B-bit messages, recovery order
    iterations: list          # IterationStats per executed iteration
    detected: DetectedSet
    solver_fallbacks: int = 0
    mse_first_initial: float | None = None      # decoded users, pilot-based, iteration 1
    mse_first_reestimated: float | None = None  # decoded users, data-aided, iteration 1


def regularized_lsq(basis: np.ndarray, observations: np.ndarray, ridge: float,
                    want_condition: bool = False):
    """Solve (basis^H basis + ridge*I) X = basis^H observations.

    Uses a Cholesky factorization of the regularized Gram matrix; if that
    fails numerically, falls back to a minimum-norm least-squares solve and
    reports it. Returns (solution, fallback_used, condition_or_None).
    """
    gram = basis.conj().T @ basis
    gram[np.diag_indices_from(gram)] += ridge
    rhs = basis.conj().T @ observations
    condition = float(np.linalg.cond(gram)) if want_condition else None
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False), False, condition
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        solution, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
        return solution, True, condition


def gomp_detect(yp: np.ndarray, extended: ExtendedPilotCodebook, cfg: SystemConfig,
                ka: int | None = None) -> DetectedSet:
    """Greedy joint pilot/pattern detection on the pilot part.

    Each round correlates the extended codebook against the current residual,
    scores indices by the antenna-combined correlation energy, keeps the top
    ceil((Ka + delta)/n_omp) new ones (ties resolve to the lowest index), and
    rebuilds the residual through a ridge-regularized projection onto all
    selections so far. The total never exceeds Ka + delta.
    """
    a = extended.matrix
    if yp.shape[0] != a.shape[0]:
        raise ValueError("pilot observation rows do not match the extended codebook")
    ka = cfg.Ka if ka is None else ka
    budget = ka + cfg.delta
    per_round = math.ceil(budget / cfg.n_omp)

    selected: list[int] = []
    taken = np.zeros(a.shape[1], dtype=bool)
    a_h = a.conj().T
    y_res = yp
    for _ in range(cfg.n_omp):
        room = min(budget - len(selected), a.shape[1] - len(selected))
        if room <= 0:
            break
        corr = a_h @ y_res
        scores = np.einsum("ij,ij->i", corr, corr.conj()).real
        scores[taken] = -np.inf
        picks = np.argsort(-scores, kind="stable")[: min(per_round, room)]
        selected.extend(int(p) for p in picks)
        taken[picks] = True

        columns = a[:, selected]
        coeff, _, _ = regularized_lsq(columns, yp, cfg.N0)
        y_res = yp - columns @ coeff

    indices0 = np.array(selected, dtype=np.int64)
    prefixes = np.array([transmitter.int_to_bits(i, cfg.Bp) for i in indices0],
                        dtype=np.int8).reshape(len(indices0), cfg.Bp)
    return DetectedSet(indices=indices0 + 1, prefix_bits=prefixes)


def lmmse_channel_estimate(yp_res: np.ndarray, a_selected: np.ndarray, n0: float,
                           want_condition: bool = False):
    """Ridge-regularized channel estimate from the residual pilot part.

    Row i of the result is the channel estimate of the i-th selected column.
    """
    return regularized_lsq(a_selected, yp_res, n0, want_condition)


def mrc_estimate(yd_res: np.ndarray, data_support: np.ndarray,
                 h_row: np.ndarray) -> np.ndarray:
    """Combine the user's active data rows with the conjugate channel estimate."""
    return yd_res[data_support] @ h_row.conj()


def residual_interference(row_energy: float, gain: float, cfg: SystemConfig) -> float:
    """Default per-antenna residual-interference estimate (swappable policy).

    Subtracts the known noise floor and the user's own per-antenna signal
    energy from the measured residual row energy, floored at zero.
    """
    return max(0.0, row_energy - cfg.N0 - cfg.Pd * gain / cfg.M)


def decode_user(s_hat: np.ndarray, h_row: np.ndarray, row_energy: float,
                cfg: SystemConfig, spec: fec.PolarCodeSpec,
                method: str = "exact", interference_policy=residual_interference):
    """Demap one user's combined symbols and run the list decoder.

    The combined estimate divided by ||h||^2 is treated as a unit-gain scalar
    channel whose noise variance is (N0 + residual interference)/||h||^2,
    with the interference term supplied by `interference_policy`.
    Returns (payload_bits_or_None, passed).
    """
    gain = float(np.real(np.vdot(h_row, h_row)))
    if gain > 0:
        # floor keeps the zero-noise limit finite; LLRs are clipped downstream
        noise_var = max((cfg.N0 + interference_policy(row_energy, gain, cfg))
                        / gain, 1e-30)
        llrs = fec.qpsk_llr(s_hat / gain, 1.0, noise_var, cfg.Pd)
    else:
        llrs = np.zeros(2 * s_hat.size)
    result = fec.scl_decode(spec, llrs, cfg.n_list, method=method)
    return fec.payload_of(result, spec), result.passed


def sic_initial(y_res: np.ndarray, x_hat: np.ndarray, h_rows: np.ndarray) -> np.ndarray:
    """Subtract reconstructed frames weighted by the existing channel estimates."""
    if x_hat.shape[1] == 0:
        return y_res
    return y_res - x_hat @ h_rows


def sic_reestimated(y_res: np.ndarray, x_hat: np.ndarray, n0: float):
    """Re-estimate decoded users' channels from their full reconstructed frames,
    then subtract. Returns (h_reestimated, new_residual)."""
    if x_hat.shape[1] == 0:
        return np.zeros((0, y_res.shape[1]), dtype=complex), y_res
    h_re, _, _ = regularized_lsq(x_hat, y_res, n0)
    return h_re, y_res - x_hat @ h_re


def _matched_mse(h_hat: np.ndarray, rows: list[int], indices0: list[int],
                 truth: dict | None, m: int) -> float | None:
    if not truth:
        return None
    total, count = 0.0, 0
    for row, idx0 in zip(rows, indices0):
        h_true = truth.get(idx0 + 1)
        if h_true is None:
            continue
        diff = h_hat[row] - h_true
        total += float(np.real(np.vdot(diff, diff)))
        count += 1
    return total / (count * m) if count else None


def iterative_decode(received: ReceivedFrame, books: CodebookSet, cfg: SystemConfig,
                     spec: fec.PolarCodeSpec | None = None,
                     true_channel_by_index: dict | None = None,
                     decode_method: str = "exact",
                     collect_condition: bool = False) -> DecodeOutput:
    """Full receiver: one detection pass, then decode/SIC iterations.

    `true_channel_by_index` optionally maps 1-based pilot indices to the true
    channel rows of uncollided users, enabling the MSE diagnostics.
    """
    spec = spec if spec is not None else fec.spec_from_config(cfg)
    detected = gomp_detect(received.Yp, books.extended, cfg)

    active: list[int] = [int(i) - 1 for i in detected.indices]
    y_res = received.Y.copy()
    messages: dict[bytes, np.ndarray] = {}
    stats: list[IterationStats] = []
    fallbacks = 0
    mse_first_initial = None
    mse_first_reestimated = None

    for j in range(1, cfg.n_max + 1):
        if not active:
            break
        n_active = len(active)
        a_sel = books.extended.matrix[:, active]
        h_hat, fb, cond = lmmse_channel_estimate(
            y_res[: cfg.n_p_prime], a_sel, cfg.N0, want_condition=collect_condition)
        fallbacks += int(fb)
        alert = bool(cond is not None and cond > _CONDITION_ALERT)
        yd_res = y_res[cfg.n_p_prime:]

        decoded_rows: list[int] = []
        decoded_idx0: list[int] = []
        decoded_bits: list[np.ndarray] = []
        for row, idx0 in enumerate(active):
            support = books.data_pattern.column_support(idx0)
            s_hat = mrc_estimate(yd_res, support, h_hat[row])
            row_energy = float(np.mean(np.abs(yd_res[support]) ** 2))
            payload, ok = decode_user(s_hat, h_hat[row], row_energy, cfg, spec,
                                      method=decode_method)
            if ok:
                bits = np.concatenate([transmitter.int_to_bits(idx0, cfg.Bp), payload])
                decoded_rows.append(row)
                decoded_idx0.append(idx0)
                decoded_bits.append(bits.astype(np.int8))

        iteration_mse = _matched_mse(h_hat, list(range(n_active)), active,
                                     true_channel_by_index, cfg.M)

        if not decoded_rows:
            stats.append(IterationStats(j, n_active, 0,
                                        float(np.real(np.vdot(y_res, y_res))),
                                        iteration_mse, alert))
            break

        x_hat = np.stack(
            [transmitter.encode_user(transmitter.split_message(bits, cfg.Bp),
                                     books, spec, cfg).signal
             for bits in decoded_bits], axis=1)

        if j == 1:
            mse_first_initial = _matched_mse(h_hat, decoded_rows, decoded_idx0,
                                             true_channel_by_index, cfg.M)
        if cfg.sic_mode == SIC_INITIAL:
            y_res = sic_initial(y_res, x_hat, h_hat[decoded_rows])
        else:
            h_re, y_res = sic_reestimated(y_res, x_hat, cfg.N0)
            if j == 1:
                mse_first_reestimated = _matched_mse(
                    h_re, list(range(len(decoded_idx0))), decoded_idx0,
                    true_channel_by_index, cfg.M)

        for bits in decoded_bits:
            messages.setdefault(bits.tobytes(), bits)
        removed = set(decoded_rows)
        active = [idx for row, idx in enumerate(active) if row not in removed]

        stats.append(IterationStats(j, n_active, len(decoded_rows),
                                    float(np.real(np.vdot(y_res, y_res))),
                                    iteration_mse, alert))

    return DecodeOutput(messages=list(messages.values()), iterations=stats,
                        detected=detected, solver_fallbacks=fallbacks,
                        mse_first_initial=mse_first_initial,
                        mse_first_reestimated=mse_first_reestimated)
