"""Command line: run campaigns, validate configs, replay ledgers.

Exit codes: 0 success, 1 at least one run failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from hemsim import config as _config
from hemsim.metrics import (
    EmptyLedgerError,
    LedgerIntegrityError,
    compare,
    comparison_csv,
    replay,
    report,
    write_ledger,
)
from hemsim.scenario import load_case

log = logging.getLogger("hemsim")

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2

SUMMARY_COLUMNS = (
    "run", "case", "seed", "location", "house_area_ft2", "xev_kwh", "es_kwh", "es_temp_controlled", "status",
    "cost_baseline", "cost_hem", "savings_pct", "deferrable_mwh", "deferred_mwh", "deferral_efficiency",
    "ah_baseline", "ah_hem", "stored_baseline", "stored_hem",
)


def execute_run(spec: _config.RunSpec, out_dir: str, figures: bool = True) -> dict:
    """Simulate one scenario under its controllers and write all artifacts. Never raises."""
    from hemsim.scenario import build_scenario
    from hemsim.simulation import simulate

    run_dir = Path(out_dir) / spec.name
    row = {"run": spec.name, "case": spec.case, "seed": spec.seed, "status": "ok"}
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        sc = build_scenario(spec.scenario_config())
        hem_cfg = spec.hem_config()
        row.update(location=sc.case.location, house_area_ft2=round(sc.house_area_ft2, 1),
                   xev_kwh=sc.case.xev_capacity, es_kwh=sc.case.es_capacity,
                   es_temp_controlled=sc.case.es_temp_controlled)
        ledgers, reports = {}, {}
        for ctl in spec.controllers:
            L = simulate(sc, ctl, hem_cfg if ctl == "hem" else None)
            write_ledger(L, run_dir, ctl)
            r = report(L)
            (run_dir / f"{ctl}.report.json").write_text(r.to_json())
            (run_dir / f"{ctl}.report.csv").write_text(r.to_csv())
            ledgers[ctl], reports[ctl] = L, r
        if "baseline" in reports and "hem" in reports:
            rows = compare(reports["baseline"], reports["hem"])
            (run_dir / "comparison.csv").write_text(comparison_csv(rows))
            (run_dir / "comparison.json").write_text(json.dumps(rows, indent=1, default=str))
            b, h = reports["baseline"], reports["hem"]
            row.update(cost_baseline=b.grid_cost, cost_hem=h.grid_cost,
                       savings_pct=100.0 * (b.grid_cost - h.grid_cost) / b.grid_cost if b.grid_cost else 0.0,
                       ah_baseline=b.ah_throughput, ah_hem=h.ah_throughput,
                       stored_baseline=b.solar_stored, stored_hem=h.solar_stored)
        if "hem" in reports:
            h = reports["hem"]
            row.update(deferrable_mwh=h.deferrable_energy, deferred_mwh=h.deferred_energy,
                       deferral_efficiency=h.deferral_efficiency)
        if figures:
            from hemsim.report import plot_run

            plot_run(ledgers, run_dir)
    except Exception as e:  # quarantined: recorded and reported, campaign continues
        row["status"] = f"failed: {type(e).__name__}: {e}"
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "error.txt").write_text(traceback.format_exc())
        except OSError:
            pass
    return row


def summary_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in SUMMARY_COLUMNS})
    return buf.getvalue()


def _check_specs(specs) -> None:
    """Raise on anything that would only surface once a run starts."""
    for s in specs:
        load_case(s.case)
        if s.days < 1:
            raise _config.ConfigError(f"{s.name}: days must be >= 1")
        s.scenario_config()
        s.hem_config()


def cmd_run(args) -> int:
    try:
        controllers = args.controllers.split(",") if args.controllers else None
        if controllers:
            bad = [c for c in controllers if c not in ("baseline", "hem")]
            if bad:
                raise _config.ConfigError(f"unknown controllers: {', '.join(bad)}")
        cfg_path = args.campaign or args.config
        specs = _config.build_specs(cfg_path, case=args.case, seed=args.seed, days=args.days,
                                    start_day=args.start_day, controllers=controllers)
        _check_specs(specs)
    except (_config.ConfigError, KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate:
        print(f"config ok: {len(specs)} run(s)")
        return EXIT_OK
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures = not args.no_figures
    if args.workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(execute_run, specs, [str(out)] * len(specs), [figures] * len(specs)))
    else:
        rows = []
        for s in specs:
            log.info("running %s", s.name)
            rows.append(execute_run(s, str(out), figures))
    (out / "campaign_summary.csv").write_text(summary_csv(rows))
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        msg = r["status"]
        if r["status"] == "ok" and "cost_hem" in r:
            msg = (f"cost baseline {r['cost_baseline']:.2f} $, hem {r['cost_hem']:.2f} $ "
                   f"({r['savings_pct']:.1f} % saved), deferral efficiency {r['deferral_efficiency']:.1f} %")
        print(f"{r['run']}: {msg}")
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def cmd_validate(args) -> int:
    try:
        specs = _config.build_specs(args.config)
        _check_specs(specs)
    except (_config.ConfigError, KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"config ok: {len(specs)} run(s)")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        r = replay(args.ledger)
    except (LedgerIntegrityError, EmptyLedgerError, FileNotFoundError) as e:
        print(f"ledger error: {e}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    print(r.to_json() if args.format == "json" else r.to_csv(), end="" if args.format == "csv" else "\n")
    return EXIT_OK


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hemsim", description="Household energy management simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one run or a campaign")
    r.add_argument("--case", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--days", type=int)
    r.add_argument("--start-day", type=int)
    r.add_argument("--controllers", help="comma separated: baseline,hem")
    r.add_argument("--config", help="YAML run configuration")
    r.add_argument("--campaign", help="YAML campaign file (cases x seeds or explicit runs)")
    r.add_argument("--out-dir", default="hemsim_out")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--validate", action="store_true", help="check the configuration and exit")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a configuration file against the schema")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)

    rp = sub.add_parser("replay", help="recompute metrics from a persisted ledger")
    rp.add_argument("ledger", help="path to <controller>.steps.csv")
    rp.add_argument("--format", choices=("json", "csv"), default="json")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
