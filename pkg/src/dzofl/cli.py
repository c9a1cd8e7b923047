"""Command line entry point: ``dzofl run | validate | compare | report``.

Exit codes: 0 success, 1 a validator failed, 2 invalid configuration,
3 a run failed part way (partial artifacts and an error manifest are kept).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, load_config, load_preset, preset_names
from .costmodel import compare
from .engine import CSV_COLUMNS, RunAborted, manifest, run, summarize
from .errors import ConfigError, DZOFLError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUN_FAILED = 0, 1, 2, 3


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([_fmt(v) for v in rec.row()])
    return buf.getvalue()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump_json(path: Path, data) -> None:
    _write_atomic(path, json.dumps(_clean(data), indent=2, default=_json_default, allow_nan=False) + "\n")


def _clean(obj):
    # JSON has no NaN; missing values become null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def resolve_config(args) -> RunConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("pass exactly one of --config or --preset")
    config = load_config(args.config) if args.config else load_preset(args.preset)
    changes = {}
    if getattr(args, "replications", None) is not None:
        changes["replications"] = args.replications
        if config.seeds is not None and len(config.seeds) != args.replications:
            changes["seeds"] = None
    if getattr(args, "seed_offset", None) is not None:
        changes["seed_offset"] = args.seed_offset
    if getattr(args, "out", None) is not None:
        changes["out_dir"] = str(args.out)
    return config.with_overrides(**changes) if changes else config


def _replication(job):
    config, r = job
    try:
        return "ok", run(config, r), None
    except RunAborted as exc:
        return "failed", (exc.records, exc.state), str(exc)


def cmd_run(args) -> int:
    config = resolve_config(args)
    out = Path(args.out or config.out_dir or "dzofl-out")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, r) for r in range(config.replications)]
    workers = max(1, min(args.workers or 1, len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replication, jobs))
    else:
        outcomes = [_replication(j) for j in jobs]

    files, results, errors = [], [], []
    for (status, payload, err), seed in zip(outcomes, config.replication_seeds()):
        records = payload.records if status == "ok" else payload[0]
        name = f"replication_{len(files):03d}_seed{seed}.csv"
        text = records_csv(records)
        _write_atomic(out / name, text)
        files.append({"file": name, "seed": seed, "status": status, "rows": len(records),
                      "sha256": hashlib.sha256(text.encode()).hexdigest()})
        if status == "ok":
            results.append(payload)
        else:
            errors.append(f"seed {seed}: {err}")

    status = "ok" if not errors else "failed"
    man = manifest(config, results, status=status, error="; ".join(errors) or None)
    man["files"] = files
    if results:
        summary = summarize(results, config)
        summary["cost_comparison"] = compare(config.cost, config.K + 1, config.T_prime)
        _dump_json(out / "summary.json", summary)
    _dump_json(out / "manifest.json", man)
    if errors:
        print(f"run failed: {'; '.join(errors)}", file=sys.stderr)
        return EXIT_RUN_FAILED
    print(f"wrote {len(files)} replication(s) to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validators import run_validators, validate_report

    config = resolve_config(args)
    report = run_validators(config, checks=args.checks, rounds=args.rounds, mc_rounds=args.mc_rounds)
    validate_report(report)
    text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_atomic(out / "validator_report.json", text)
    for check in report["checks"]:
        print(f"{check['name']:<14} {'PASS' if check['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def cmd_compare(args) -> int:
    config = resolve_config(args)
    T = args.rounds if args.rounds is not None else config.K + 1
    T_prime = args.baseline_rounds if args.baseline_rounds is not None else config.T_prime
    report = compare(config.cost, T, T_prime, N=args.devices)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_atomic(out / "compare.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    try:
        man = json.loads((out / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"no readable manifest in {out}: {exc}") from None
    summary_path = out / "summary.json"
    summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
    print(f"status        {man['status']}")
    print(f"config hash   {man['config_hash']}")
    print(f"seeds         {man['replication_seeds']}")
    for f in man.get("files", []):
        text = (out / f["file"]).read_text()
        intact = hashlib.sha256(text.encode()).hexdigest() == f["sha256"]
        print(f"  {f['file']}  rows={f['rows']}  {f['status']}  {'intact' if intact else 'MODIFIED'}")
    for key in ("initial_grad_norm_sq", "final_grad_norm_sq", "weighted_grad_average", "rate_bound"):
        if key in summary:
            print(f"{key:<22} {summary[key]}")
    if man.get("error"):
        print(f"error         {man['error']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dzofl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def source(p):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--preset", help=f"built-in configuration ({', '.join(preset_names())})")

    p = sub.add_parser("run", help="simulate every replication and write CSV/JSON artifacts")
    source(p)
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed-offset", type=int)
    p.add_argument("--workers", type=int, default=1, help="processes for the replication pool")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="run the analysis checks and write a JSON report")
    source(p)
    p.add_argument("--out", help="directory for validator_report.json")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed-offset", type=int)
    p.add_argument("--checks", nargs="+", help="subset of checks to run")
    p.add_argument("--rounds", type=int, default=100_000, help="rounds for frozen-model checks")
    p.add_argument("--mc-rounds", type=int, default=1_000_000, help="rounds for the channel check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="analytic cost comparison against the first-order baseline")
    source(p)
    p.add_argument("--out", help="directory for compare.json")
    p.add_argument("--rounds", type=int, help="zero-order rounds T (default K+1)")
    p.add_argument("--baseline-rounds", type=int, help="baseline rounds T'")
    p.add_argument("--devices", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="print the summary of an artifact directory")
    p.add_argument("--out", required=True, help="artifact directory written by 'run'")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DZOFLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
