"""Command-line entry point.

Runs Monte Carlo points over an optional sweep grid, writes CSV rows (one
per operating point) plus a JSON sidecar of the resolved config, and can
report the minimum feasible energy per bit over a swept power grid.
"""

from __future__ import annotations

import argparse
import itertools
import sys

from . import harness
from .config import SIC_MODES, SystemConfig, validate

# CLI flag name -> SystemConfig field
_FIELD_FLAGS = {
    "n": "n", "b": "B", "bp": "Bp", "np": "n_p", "np_prime": "n_p_prime",
    "nc": "n_c", "r": "r", "nd": "n_d", "m": "M", "ka": "Ka", "kt": "Kt",
    "n0": "N0", "pp": "Pp", "pd": "Pd", "delta": "delta", "n_omp": "n_omp",
    "n_max": "n_max", "n_list": "n_list", "epsilon": "epsilon", "seed": "seed",
}
_INT_FIELDS = {"n", "B", "Bp", "n_p", "n_p_prime", "n_c", "r", "n_d", "M", "Ka",
               "Kt", "delta", "n_omp", "n_max", "n_list", "seed"}
_SWEEP_AXES = {"ka": "Ka", "m": "M", "pp": "Pp", "pd": "Pd", "n0": "N0"}


def parse_sweep(spec: str) -> tuple[str, list]:
    """Parse one sweep axis: "ka=16,32" or "pp=0.5:2.0:0.25" (inclusive)."""
    if "=" not in spec:
        raise ValueError(f"sweep spec {spec!r} must look like axis=values")
    axis, _, values = spec.partition("=")
    axis = axis.strip().lower()
    if axis not in _SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(_SWEEP_AXES)}")
    field = _SWEEP_AXES[axis]
    cast = int if field in _INT_FIELDS else float
    values = values.strip()
    if ":" in values:
        parts = values.split(":")
        if len(parts) != 3:
            raise ValueError(f"range sweep {spec!r} needs start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("sweep step must be positive")
        out = []
        v = start
        while v <= stop + 1e-12:
            out.append(cast(round(v, 12)))
            v += step
        return field, out
    return field, [cast(v) for v in values.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odma-ura",
                                description="Multi-antenna unsourced random access "
                                            "link simulator")
    p.add_argument("--config", help="JSON config file; flags below override it")
    for flag, field in _FIELD_FLAGS.items():
        kind = int if field in _INT_FIELDS else float
        p.add_argument("--" + flag.replace("_", "-"), dest="cfg_" + field,
                       type=kind, default=None, help=f"override config field {field}")
    p.add_argument("--sic", choices=[*SIC_MODES, "both"], default=None,
                   help="cancellation variant; 'both' runs the two and keeps the better")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for trial-level parallelism")
    p.add_argument("--sweep", action="append", default=[],
                   help="axis=v1,v2,... or axis=start:stop:step; repeatable, "
                        "axes combine as a cross product")
    p.add_argument("--min-ebn0", action="store_true",
                   help="after sweeping pp/pd, report the minimum feasible "
                        "energy per bit for each (ka, m)")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--trace", help="JSONL per-iteration trace output path")
    return p


def resolve_config(args) -> SystemConfig:
    cfg = SystemConfig.from_json(args.config) if args.config else SystemConfig()
    overrides = {}
    for field in _FIELD_FLAGS.values():
        value = getattr(args, "cfg_" + field)
        if value is not None:
            overrides[field] = value
    if args.sic in SIC_MODES:
        overrides["sic_mode"] = args.sic
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        base = resolve_config(args)
        axes = [parse_sweep(s) for s in args.sweep]
        grid_fields = [f for f, _ in axes]
        if len(set(grid_fields)) != len(grid_fields):
            raise ValueError("each sweep axis may appear only once")

        points = [dict(zip(grid_fields, combo))
                  for combo in itertools.product(*[v for _, v in axes])] or [{}]

        rows = []
        traces = []
        for overrides in points:
            cfg = base.replace(**overrides) if overrides else base
            report = validate(cfg)
            report.raise_if_invalid()
            if args.sic == "both":
                comparison = harness.try_both_sic(cfg, args.trials, args.threads)
                for mode in SIC_MODES:
                    print(f"ka={cfg.Ka} m={cfg.M} pp={cfg.Pp} pd={cfg.Pd} "
                          f"sic={mode}: pe={comparison.pe[mode]:.6g}")
                print(f"  chosen: {comparison.chosen_mode}")
                rows.append(comparison.chosen_row)
            else:
                row, point_traces = harness.run_point(cfg, args.trials, args.threads)
                traces.extend(point_traces)
                rows.append(row)
                print(f"ka={row.ka} m={row.m} pp={row.pp} pd={row.pd} "
                      f"ebn0={row.ebn0_db:.3f}dB pe={row.pe:.6g} "
                      f"(pmd={row.pmd:.6g}, pfa={row.pfa:.6g})")

        if args.min_ebn0:
            _report_min_ebn0(base, rows)
        if args.out:
            harness.write_csv(rows, args.out, sidecar_config=base)
        if args.trace:
            harness.write_trace(traces, args.trace)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _report_min_ebn0(base: SystemConfig, rows) -> None:
    by_combo: dict[tuple[int, int], list] = {}
    for row in rows:
        by_combo.setdefault((row.ka, row.m), []).append(row)
    for (ka, m), group in sorted(by_combo.items()):
        feasible = [r for r in group if r.pe <= base.epsilon]
        if feasible:
            best = min(feasible, key=lambda r: r.ebn0_db)
            print(f"min ebn0 for ka={ka} m={m}: {best.ebn0_db:.3f} dB "
                  f"at pp={best.pp} pd={best.pd} (pe={best.pe:.6g})")
        else:
            print(f"min ebn0 for ka={ka} m={m}: infeasible on this grid")


if __name__ == "__main__":
    raise SystemExit(main())
