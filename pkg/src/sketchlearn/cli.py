"""Command-line entry point.

    sketchlearn gen-data        --config cfg.json [--seed N] [--out DIR]
    sketchlearn train-positions --config cfg.json [--jobs J]
    sketchlearn train-values    --config cfg.json [--jobs J]
    sketchlearn eval            --config cfg.json [--jobs J]
    sketchlearn report          --out DIR
    sketchlearn run             --config cfg.json      (all stages)

Exit codes: 0 success, 2 invalid config, 3 missing upstream artifact.
Errors are reported as one line on stderr: ``error: <kind>: <detail>``.
"""
import argparse
import json
import sys

from . import experiment as ex

EXIT_CONFIG = 2
EXIT_MISSING = 3


def _parser():
    ap = argparse.ArgumentParser(prog="sketchlearn", description="learned sketching experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train-positions", "train-values", "eval", "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
    p = sub.add_parser("report")
    p.add_argument("--out", help="output directory holding aggregate.json")
    p.add_argument("--config", help="read the output directory from this config")
    return ap


def _fail(kind, detail, code):
    print(f"error: {kind}: {' '.join(str(detail).split())}", file=sys.stderr)
    return code


def _load_config(args):
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ex.ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ex.ConfigError(f"{args.config} is not valid JSON: {exc.msg}") from None
    return ex.normalize_config(raw, seed=getattr(args, "seed", None), out=args.out)


STAGES = {
    "gen-data": lambda cfg, jobs: ex.stage_gen_data(cfg),
    "train-positions": ex.stage_train_positions,
    "train-values": ex.stage_train_values,
    "eval": ex.stage_eval,
    "run": ex.run_experiment,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            out = args.out
            if out is None and args.config:
                out = _load_config(args)["out"]
            if out is None:
                raise ex.ConfigError("report needs --out or --config")
            print(ex.stage_report(out))
            return 0
        if args.jobs < 1:
            raise ex.ConfigError("--jobs must be at least 1")
        cfg = _load_config(args)
        result = STAGES[args.command](cfg, args.jobs)
        if args.command == "run":
            print(result)
    except ex.ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except ex.MissingArtifact as exc:
        return _fail("missing-artifact", exc, EXIT_MISSING)
    return 0


if __name__ == "__main__":
    sys.exit(main())
