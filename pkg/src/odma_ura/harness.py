"""Experiment orchestration: trials, sweep points, and the power search.

Trials are independent end-to-end simulations on substreams keyed by
(seed, trial index), so a result row is a pure function of (plan, seed)
regardless of worker count.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fec, metrics, streams, transmitter
from .channel import ReceivedFrame, add_noise, draw_channel
from .codebooks import CodebookSet, build_codebooks
from .config import SIC_INITIAL, SIC_REESTIMATE, SystemConfig, energy_per_bit, validate
from .receiver import iterative_decode

CSV_COLUMNS = ("ka", "m", "pp", "pd", "ebn0_db", "trials", "pmd", "pfa", "pe",
               "mean_iterations", "mean_mse", "collision_rate", "wall_clock_per_trial")


@dataclass(frozen=True)
class ResultRow:
    ka: int
    m: int
    pp: float
    pd: float
    ebn0_db: float
    trials: int
    pmd: float
    pfa: float
    pe: float
    mean_iterations: float
    mean_mse: float          # first-iteration channel-estimate MSE, NaN if never defined
    collision_rate: float    # collided users per active user
    wall_clock_per_trial: float

    def as_csv_values(self) -> tuple:
        return tuple(getattr(self, name) for name in CSV_COLUMNS)


@dataclass(frozen=True)
class ExperimentPlan:
    base: SystemConfig
    ka_list: tuple[int, ...]
    m_list: tuple[int, ...]
    power_grid: tuple[tuple[float, float], ...]  # (Pp, Pd) points
    trials: int                       # per-point cap
    epsilon: float | None = None      # defaults to base.epsilon
    confidence: float = 0.95
    sequential: bool = True           # early-stopping Pe certification
    min_trials: int = 25              # trials before the sequential test may stop
    batch: int = 25
    parallelism: int = 1

    def __post_init__(self):
        if not (self.ka_list and self.m_list and self.power_grid):
            raise ValueError("sweep axes must be non-empty")
        if self.trials < 1:
            raise ValueError("need at least one trial per point")


@dataclass(frozen=True)
class PointEstimate:
    row: ResultRow
    decision: str        # "pass" | "fail" | "borderline"
    trials_used: int
    outcomes: tuple


@dataclass(frozen=True)
class SearchResult:
    ka: int
    m: int
    feasible: bool
    ebn0_db: float       # min feasible energy per bit (dB); NaN when infeasible
    pp: float
    pd: float
    rows: tuple[ResultRow, ...]


@dataclass(frozen=True)
class SicComparison:
    chosen_mode: str
    rows: dict
    pe: dict

    @property
    def chosen_row(self) -> ResultRow:
        return self.rows[self.chosen_mode]


def _truth_by_index(msgs: np.ndarray, h: np.ndarray, prefix_len: int) -> dict:
    """Map uncollided 1-based pilot indices to true channel rows."""
    counts: dict[int, int] = {}
    idx = [transmitter.bits_to_int(m[:prefix_len]) + 1 for m in msgs]
    for i in idx:
        counts[i] = counts.get(i, 0) + 1
    return {i: h[u] for u, i in enumerate(idx) if counts[i] == 1}


def run_trial(cfg: SystemConfig, books: CodebookSet, spec: fec.PolarCodeSpec,
              trial_idx: int, collect_mse: bool = True):
    """One end-to-end simulation. Returns (TrialOutcome, trace_records)."""
    started = time.perf_counter()
    rng_msg = streams.make_generator(cfg.seed, streams.MESSAGES, trial_idx)
    rng_ch = streams.make_generator(cfg.seed, streams.CHANNEL, trial_idx)
    rng_noise = streams.make_generator(cfg.seed, streams.NOISE, trial_idx)

    msgs = transmitter.draw_messages(cfg.Ka, cfg.B, rng_msg)
    frames = [transmitter.encode_user(transmitter.split_message(m, cfg.Bp),
                                      books, spec, cfg) for m in msgs]
    h = draw_channel(cfg.Ka, cfg.M, rng_ch)
    y = add_noise(transmitter.superimpose(frames, h.H), cfg.N0, rng_noise)
    received = ReceivedFrame(Y=y, pilot_rows=cfg.n_p_prime)

    truth = _truth_by_index(msgs, h.H, cfg.Bp) if collect_mse else None
    out = iterative_decode(received, books, cfg, spec, true_channel_by_index=truth)

    outcome = metrics.evaluate_trial(
        list(msgs), out.messages, cfg.Bp,
        iterations=len(out.iterations),
        mse_per_iteration=[s.channel_mse for s in out.iterations],
        mse_first_initial=out.mse_first_initial,
        mse_first_reestimated=out.mse_first_reestimated,
        wall_clock=time.perf_counter() - started)
    trace = [{"trial": trial_idx, "ka": cfg.Ka, "m": cfg.M, "pp": cfg.Pp,
              "pd": cfg.Pd, "iteration": s.iteration, "n_active": s.n_active,
              "n_decoded": s.n_decoded, "residual_energy": s.residual_energy,
              "channel_mse": s.channel_mse} for s in out.iterations]
    return outcome, trace


def _guarded_run(cfg, books, spec, trial_idx: int, collect_mse: bool):
    try:
        outcome, trace = run_trial(cfg, books, spec, trial_idx, collect_mse)
        return trial_idx, outcome, trace
    except Exception as exc:  # record and skip; the point aggregate survives
        return trial_idx, None, [{"trial": trial_idx, "error": repr(exc)}]


_WORKER_STATE: dict = {}


def _worker_init(cfg: SystemConfig):
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["books"] = build_codebooks(cfg)
    _WORKER_STATE["spec"] = fec.spec_from_config(cfg)


def _worker_run(args):
    trial_idx, collect_mse = args
    return _guarded_run(_WORKER_STATE["cfg"], _WORKER_STATE["books"],
                        _WORKER_STATE["spec"], trial_idx, collect_mse)


def run_trials(cfg: SystemConfig, trials, parallelism: int = 1,
               collect_mse: bool = True):
    """Run the given trial indices; results come back sorted by trial index.

    `trials` is a count or an explicit iterable of indices. Identical output
    for any parallelism level. A trial that raises is recorded as an error
    trace record and skipped; the skip count is logged.
    """
    validate(cfg).raise_if_invalid()
    indices = list(range(trials)) if isinstance(trials, int) else list(trials)
    results = []
    if parallelism <= 1 or len(indices) <= 1:
        books = build_codebooks(cfg)
        spec = fec.spec_from_config(cfg)
        for idx in indices:
            results.append(_guarded_run(cfg, books, spec, idx, collect_mse))
    else:
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_worker_init,
                                 initargs=(cfg,)) as pool:
            for item in pool.map(_worker_run, [(i, collect_mse) for i in indices],
                                 chunksize=max(1, len(indices) // (4 * parallelism))):
                results.append(item)
    results.sort(key=lambda item: item[0])
    outcomes = [r[1] for r in results if r[1] is not None]
    traces = [rec for r in results for rec in r[2]]
    skipped = len(results) - len(outcomes)
    if skipped:
        logging.getLogger(__name__).warning(
            "%d of %d trials failed and were skipped", skipped, len(results))
    return outcomes, traces


def summarize(cfg: SystemConfig, outcomes) -> ResultRow:
    pupe = metrics.compute_pupe(outcomes)
    first_mses = [o.mse_first_initial for o in outcomes if o.mse_first_initial is not None]
    return ResultRow(
        ka=cfg.Ka, m=cfg.M, pp=cfg.Pp, pd=cfg.Pd,
        ebn0_db=energy_per_bit(cfg)[1],
        trials=len(outcomes),
        pmd=pupe.Pmd, pfa=pupe.Pfa, pe=pupe.Pe,
        mean_iterations=float(np.mean([o.iterations for o in outcomes])),
        mean_mse=float(np.mean(first_mses)) if first_mses else float("nan"),
        collision_rate=float(np.mean([o.collisions / o.ka for o in outcomes])),
        wall_clock_per_trial=float(np.mean([o.wall_clock for o in outcomes])))


def run_point(cfg: SystemConfig, trials: int, parallelism: int = 1,
              collect_mse: bool = True):
    """Fixed-trial-count estimate of one operating point. Returns (row, traces)."""
    outcomes, traces = run_trials(cfg, trials, parallelism, collect_mse)
    return summarize(cfg, outcomes), traces


# one-sided z at 95% for the sequential certification
_Z_ONE_SIDED = 1.6448536269514722


def estimate_pe(cfg: SystemConfig, max_trials: int, epsilon: float,
                parallelism: int = 1, sequential: bool = True,
                min_trials: int = 25, batch: int = 25) -> PointEstimate:
    """Estimate Pe at one point, optionally stopping early.

    Early stopping certifies Pe <= epsilon (or > epsilon) with a one-sided
    normal bound on the per-trial error fractions. This is an approximation
    knob; sequential=False runs exactly max_trials.
    """
    outcomes: list = []
    decision = "borderline"
    next_idx = 0
    while next_idx < max_trials:
        take = min(batch, max_trials - next_idx) if sequential else max_trials
        new, _ = run_trials(cfg, range(next_idx, next_idx + take), parallelism)
        outcomes.extend(new)
        next_idx += take
        if not sequential:
            break
        if len(outcomes) < min_trials:
            continue
        per_trial = np.array([o.pmd + o.pfa for o in outcomes])
        mean = float(per_trial.mean())
        sem = float(per_trial.std(ddof=1) / math.sqrt(len(per_trial)))
        if mean + _Z_ONE_SIDED * sem <= epsilon:
            decision = "pass"
            break
        if mean - _Z_ONE_SIDED * sem > epsilon:
            decision = "fail"
            break
    if decision == "borderline":
        per_trial = np.array([o.pmd + o.pfa for o in outcomes])
        mean = float(per_trial.mean())
        sem = float(per_trial.std(ddof=1) / math.sqrt(len(per_trial))) \
            if len(per_trial) > 1 else float("inf")
        if mean + _Z_ONE_SIDED * sem <= epsilon:
            decision = "pass"
        elif mean - _Z_ONE_SIDED * sem > epsilon:
            decision = "fail"
    return PointEstimate(row=summarize(cfg, outcomes), decision=decision,
                         trials_used=len(outcomes), outcomes=tuple(outcomes))


def search_min_ebn0(plan: ExperimentPlan):
    """Scan the power grid per (Ka, M); report the lowest-energy certified point.

    A point counts as feasible only when the sequential test certifies
    Pe <= epsilon; borderline points are conservatively treated as infeasible.
    """
    epsilon = plan.epsilon if plan.epsilon is not None else plan.base.epsilon
    findings = []
    for ka, m in itertools.product(plan.ka_list, plan.m_list):
        rows = []
        best = None
        for pp, pd in plan.power_grid:
            cfg = plan.base.replace(Ka=ka, M=m, Pp=pp, Pd=pd)
            est = estimate_pe(cfg, plan.trials, epsilon, plan.parallelism,
                              sequential=plan.sequential,
                              min_trials=plan.min_trials, batch=plan.batch)
            rows.append(est.row)
            if est.decision == "pass":
                ebn0 = energy_per_bit(cfg)[1]
                if best is None or ebn0 < best[0]:
                    best = (ebn0, pp, pd)
        if best is None:
            findings.append(SearchResult(ka=ka, m=m, feasible=False,
                                         ebn0_db=float("nan"), pp=float("nan"),
                                         pd=float("nan"), rows=tuple(rows)))
        else:
            findings.append(SearchResult(ka=ka, m=m, feasible=True,
                                         ebn0_db=best[0], pp=best[1], pd=best[2],
                                         rows=tuple(rows)))
    return findings


def try_both_sic(cfg: SystemConfig, trials: int, parallelism: int = 1) -> SicComparison:
    """Run both cancellation variants on independent substreams; keep the better.

    Ties resolve to the initial-estimate variant, which is cheaper.
    """
    rows = {}
    pe = {}
    for mode, tag in ((SIC_INITIAL, streams.SIC_MODE_INITIAL),
                      (SIC_REESTIMATE, streams.SIC_MODE_REESTIMATE)):
        sub = cfg.replace(sic_mode=mode, seed=streams.derive_seed(cfg.seed, tag))
        row, _ = run_point(sub, trials, parallelism)
        rows[mode] = row
        pe[mode] = row.pe
    chosen = SIC_INITIAL if pe[SIC_INITIAL] <= pe[SIC_REESTIMATE] else SIC_REESTIMATE
    return SicComparison(chosen_mode=chosen, rows=rows, pe=pe)


def format_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row.as_csv_values()))
    return "\n".join(lines) + "\n"


def write_csv(rows, path: str, sidecar_config: SystemConfig | None = None) -> None:
    """CSV of result rows plus a JSON sidecar with the resolved base config."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_csv(rows))
    if sidecar_config is not None:
        with open(path + ".config.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar_config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_trace(records, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
