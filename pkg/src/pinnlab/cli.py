"""``pinnlab`` command line: train, sweep, fit, bound, lincond, plot.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Failures
print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pinnlab.config import ConfigError, RunConfig, describe_config, load_config, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError([(item, "override must look like key.path=value")])
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def _config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if getattr(args, "out", None):
        overrides["output_dir"] = str(args.out)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        return load_config(path, overrides)
    return RunConfig().with_overrides(overrides)


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_train(args) -> int:
    from pinnlab.train import train_run

    cfg = _config(args)
    res = train_run(cfg)
    print(json.dumps({"run_dir": str(res.run_dir), "steps": len(res.records),
                      "final_loss": res.records[-1]["loss_total"] if res.records else None,
                      "ladder_checkpoints": len(res.checkpoints)}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from pinnlab.train import checkpoint_table, sweep, write_table

    cfg = _config(args)
    if args.from_run:
        run_dir = Path(args.from_run)
        if not (run_dir / "manifest.json").exists():
            raise FileNotFoundError(f"no manifest.json in {run_dir}")
        manifest = json.loads((run_dir / "manifest.json").read_text())
        if not args.config:
            cfg = validate_config(manifest["config"])
        rows = checkpoint_table(run_dir, cfg)
        out = write_table(run_dir / "checkpoints.csv", rows)
    else:
        workers = args.workers or int(os.environ.get("PINNLAB_THREADS", "1"))
        rows = sweep(cfg, _ints(args.seeds), _ints(args.budgets), cfg.output_dir, workers=workers)
        out = Path(cfg.output_dir) / "sweep.csv"
    print(json.dumps({"table": str(out), "rows": len(rows),
                      "failed": sum(1 for r in rows if r.get("status") != "ok")}))
    return EXIT_OK


def cmd_fit(args) -> int:
    from pinnlab.analysis import fit_convergence
    from pinnlab.plots import table_pairs
    from pinnlab.train import read_table

    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    fit = fit_convergence(table_pairs(read_table(path), args.loss_col, args.err_col))
    text = json.dumps(fit.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_bound(args) -> int:
    from pinnlab.analysis import BoundParams, theorem1_bound

    p = BoundParams(eps=args.eps, t=args.t, alpha1=args.alpha1, alpha2=args.alpha2, alpha3=args.alpha3,
                    alpha4=args.alpha4, lam=args.lam, c8=args.c8, c9=args.c9)
    # 15 significant digits: eps**2 rounding noise stays out of the printed value
    print(format(theorem1_bound(p), ".15g"))
    return EXIT_OK


def cmd_lincond(args) -> int:
    from pinnlab.analysis import lincond_demo

    text = json.dumps(lincond_demo().to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    from pinnlab.plots import emit_plots

    d = Path(args.dir)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    for p in emit_plots(d, args.table, args.loss_col, args.err_col):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (dotted path = default):\n  " + "\n  ".join(describe_config())
    parser = argparse.ArgumentParser(prog="pinnlab", epilog=epilog,
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     description="PINN solvers for CH / NSCH and loss-to-error analysis.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON run config (defaults when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config leaf, e.g. --set schedule.lr0=3e-3 (repeatable)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        return p

    p = with_config(sub.add_parser("train", help="train one network"))
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("sweep", help="train over seeds x step budgets, or tabulate a run's checkpoints"))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--budgets", default="2000,8000", help="total ADAM steps per run, comma separated")
    p.add_argument("--workers", type=int, default=None, help="default: $PINNLAB_THREADS or 1")
    p.add_argument("--from-run", help="evaluate the ladder checkpoints of this run directory instead")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="log-log fit of error against loss")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--loss-col", default="loss")
    p.add_argument("--err-col", default="err")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bound", help="a-priori CH error bound (squared L2 error of phi at time t)")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
        p.add_argument(f"--{name}", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--c8", type=float, default=1.0)
    p.add_argument("--c9", type=float, default=1.0)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("lincond", help="exact-arithmetic 4x4 conditioning example")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lincond)

    p = sub.add_parser("plot", help="SVG figures for a run or sweep directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--table", help="CSV of (loss, error) rows; default sweep.csv or checkpoints.csv in --dir")
    p.add_argument("--loss-col", default="loss")
    p.add_argument("--err-col", default="err")
    p.set_defaults(func=cmd_plot)
    return parser


def _fail(kind: str, code: int, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc), keys=[k for k, _ in exc.problems])
    except (FileNotFoundError, ValueError) as exc:
        return _fail("input", EXIT_CONFIG if isinstance(exc, FileNotFoundError) else EXIT_RUNTIME, str(exc))
    except Exception as exc:  # runtime failure, reported as one line
        return _fail("runtime", EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
