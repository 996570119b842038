"""Command line entry point: certify, simulate, analyze, sweep.

Exit codes: 0 pass, 1 check failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from concurrent.futures import ProcessPoolExecutor

from . import config as cfgmod
from .config import ConfigError
from .pipeline import analyze_config, certify_config, simulate_config
from .sim import EXTRA, SimTrace, SimulationDiverged, TraceParseError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("quadsteer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _source(sp):
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", metavar="PATH", help="experiment JSON file")
    g.add_argument("--preset", metavar="NAME", choices=sorted(cfgmod.PRESETS), help="named preset")
    sp.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="quadsteer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("certify", help="check the sufficient gain condition")
    _source(sp)
    sp.add_argument("--out", metavar="PATH", help="write the certificate JSON here")

    sp = sub.add_parser("simulate", help="run the closed loop and write a CSV trace")
    _source(sp)
    sp.add_argument("--out", metavar="PATH", required=True, help="trace CSV path")

    sp = sub.add_parser("analyze", help="verify the stability inequalities on a trace")
    _source(sp)
    sp.add_argument("--trace", metavar="PATH", help="trace CSV (simulated on the fly if omitted)")
    sp.add_argument("--out", metavar="PATH", help="write the report JSON here")

    sp = sub.add_parser("sweep", help="certify, simulate and analyze over parameter values")
    _source(sp)
    sp.add_argument("--param", metavar="NAME", required=True, help="dotted config path, e.g. pi_gains.Kp[0]")
    sp.add_argument("--values", metavar="CSVLIST", required=True, help="comma-separated values")
    sp.add_argument("--out", metavar="DIR", help="directory for summary.csv and per-value reports")
    sp.add_argument("--no-sim", action="store_true", help="certification only")
    sp.add_argument("--jobs", type=int, default=0, help="worker processes (default: CPU count)")
    return ap


def _load(args) -> dict:
    if args.preset:
        return cfgmod.preset_dict(args.preset)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{args.config}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_certify(args) -> int:
    cfg = cfgmod.from_dict(_load(args))
    bounds, cert = certify_config(cfg)
    payload = {
        "config": cfg.name,
        "constants": bounds.to_dict(),
        "envelope": asdict(cfg.envelope),
        "gains": asdict(cfg.pi_gains),
        "mu": cert.mu,
        "threshold": cert.threshold,
        "pass": cert.passed,
        "l2_gain_bound": cert.l2_gain_bound if math.isfinite(cert.l2_gain_bound) else None,
        "certificate": cert.to_dict(),
    }
    if args.out:
        _write_json(args.out, payload)
    if not args.quiet:
        status = "PASS" if cert.passed else "FAIL"
        print(
            f"{status}: min Kp {cert.lambda_min_Kp:.4g} vs threshold {cert.threshold:.4f}"
            f" (mu {cert.mu:.4g}, L2 gain bound {cert.l2_gain_bound:.4g})"
        )
    return EXIT_OK if cert.passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    cfg = cfgmod.from_dict(_load(args))
    try:
        trace = simulate_config(cfg)
    except SimulationDiverged as exc:
        exc.trace.write_csv(args.out)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    trace.write_csv(args.out)
    if not args.quiet:
        print(f"wrote {len(trace)} rows to {args.out}")
    return EXIT_OK


def _check_trace(trace: SimTrace, cfg) -> None:
    missing = [c for c in EXTRA if c not in trace.columns]
    if missing:
        raise TraceParseError(f"trace lacks analysis columns: {', '.join(missing)}")
    if len(trace) >= 2:
        step = cfg.sim.dt * cfg.sim.record_stride
        if not math.isclose(trace.t[1] - trace.t[0], step, rel_tol=1e-6):
            raise TraceParseError(f"trace step {trace.t[1] - trace.t[0]:g} does not match config step {step:g}")


def cmd_analyze(args) -> int:
    cfg = cfgmod.from_dict(_load(args))
    if args.trace:
        trace = SimTrace.read_csv(args.trace)
        _check_trace(trace, cfg)
    else:
        try:
            trace = simulate_config(cfg)
        except SimulationDiverged as exc:
            print(f"diverged: {exc}", file=sys.stderr)
            return EXIT_FAIL
    report = analyze_config(cfg, trace)
    if args.out:
        report.to_json(args.out)
    if not args.quiet:
        print(report.summary())
    for check in report.checks.values():
        if check.status == "uncertified":
            print(f"warning: {check.name} skipped, gains are uncertified", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def _parse_values(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    if not out:
        raise UsageError("--values must list at least one value")
    return out


CHECKS = ("exact_passivity", "lyap_bound", "l2_gain", "residual_bound", "storage_sandwich")


def sweep_one(base: dict, param: str, value, simulate: bool = True) -> dict:
    """Certify (and optionally simulate and analyze) one sweep point."""
    cfg = cfgmod.from_dict(cfgmod.set_path(base, param, value))
    _, cert = certify_config(cfg)
    row = {"value": value, "certified": cert.passed, "mu": cert.mu, "threshold": cert.threshold}
    ok = True
    if simulate:
        try:
            report = analyze_config(cfg, simulate_config(cfg))
        except SimulationDiverged:
            row.update(diverged=True, **{f"slack_{c}": math.nan for c in CHECKS}, rms_pos=math.nan)
            row["pass"] = False
            return row
        row["diverged"] = False
        row["rms_pos"] = report.tracking["rms_pos"]
        for name in CHECKS:
            row[f"slack_{name}"] = report.checks[name].min_slack
        row["max_passivity_residual"] = report.checks["exact_passivity"].details["max_abs_residual"]
        ok = report.passed
    row["pass"] = bool(ok)
    return row


def cmd_sweep(args) -> int:
    base = _load(args)
    values = _parse_values(args.values)
    cfgmod.from_dict(cfgmod.set_path(base, args.param, values[0]))
    jobs = args.jobs or os.cpu_count() or 1
    simulate = not args.no_sim
    if jobs > 1 and len(values) > 1 and simulate:
        with ProcessPoolExecutor(max_workers=min(jobs, len(values))) as ex:
            rows = list(ex.map(sweep_one, [base] * len(values), [args.param] * len(values), values, [simulate] * len(values)))
    else:
        rows = [sweep_one(base, args.param, v, simulate) for v in values]
    fields = list(rows[0].keys())
    for row in rows[1:]:
        fields += [k for k in row if k not in fields]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
    if not args.quiet:
        w = csv.DictWriter(sys.stdout, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "analyze": cmd_analyze, "sweep": cmd_sweep}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TraceParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
