from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, ExperimentConfig
from .models import ZOO
from .pipeline import run_pipeline
from .report import emit, to_plain


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "max_dense_dim", None) is not None:
        over["solver.max_dense_dim"] = args.max_dense_dim
    return cfg.replace(**over) if over else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_pipeline(cfg)
    for p in emit(report, args.out, args.format):
        print(p)
    status = {k: v.get("status") for k, v in report.stages.items()}
    print("stages: " + " ".join(f"{k}={v}" for k, v in status.items()), file=sys.stderr)
    print(f"passed: {report.passed}", file=sys.stderr)
    return 0


def cmd_certify(args) -> int:
    cfg = _load(args)
    report = run_pipeline(cfg, assumptions_only=True)
    keep = {k: report.stages[k] for k in ("lattice", "model", "ltqo") if k in report.stages}
    out = {"stages": keep, "residuals": report.residuals, "provenance": report.provenance}
    print(json.dumps(to_plain(out), sort_keys=True, indent=2))
    ok = all(v.get("status") in ("ok", "skipped") for v in keep.values()) and \
        all(v.get("status") == "ok" for k, v in keep.items() if k != "ltqo")
    return 0 if ok else 1


def cmd_zoo(args) -> int:
    for name, desc in sorted(ZOO.items()):
        print(f"{name:16s} {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gapstab", description="gap-stability checks for frustration-free models")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the full pipeline and write a report")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--max-dense-dim", type=int)
    run.add_argument("--format", choices=("json", "csv"), default="json")
    run.set_defaults(func=cmd_run)
    cert = sub.add_parser("certify", help="check the model assumptions only")
    cert.add_argument("--config", required=True)
    cert.set_defaults(func=cmd_certify)
    zoo = sub.add_parser("zoo", help="built-in models")
    zoo.add_argument("action", choices=("list",))
    zoo.set_defaults(func=cmd_zoo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
