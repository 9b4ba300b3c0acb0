"""Command-line entry point.

Exit codes: 0 when every check passes, 1 when a certificate fails, 2 for
configuration or usage errors (including stepper stability violations).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..energetics import time_derivative
from ..errors import (ConfigurationError, LogcvxError, SamplingError, StepperFailure,
                      SupportViolation)
from .config import load_config, validate
from .experiments import EXPERIMENTS, listing
from .output import RunWriter, json_text, read_csv

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="logcvx", description="Frequency-function and backward-uniqueness "
                "experiments for coupled parabolic PDE-ODE systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--experiment", help="experiment id (see 'logcvx list')")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--preset")
    run.add_argument("--n", type=int, help="grid points per axis")
    run.add_argument("--dim", type=int, choices=(1, 2))
    run.add_argument("--epsilon", type=float, action="append",
                     help="perturbation size; repeat for a sweep")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--omega", type=float)
    run.add_argument("--dt", type=float)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config key")

    ls = sub.add_parser("list", help="list experiments")
    ls.add_argument("--json", action="store_true")

    vc = sub.add_parser("validate-config", help="check a config file without running")
    vc.add_argument("path")
    vc.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    rp = sub.add_parser("replay", help="re-check the sandwich in a saved trace CSV")
    rp.add_argument("trace")
    return p


def _config_from_args(args):
    cfg = load_config(args.config, args.set)
    flags = {"experiment": args.experiment, "preset": args.preset, "grid.n": args.n,
             "grid.dim": args.dim, "seed": args.seed, "output.dir": args.out,
             "time.omega": args.omega, "time.dt": args.dt}
    for key, val in flags.items():
        if val is not None:
            cfg.set(key, val)
    if args.epsilon:
        cfg.set("sweep.epsilon_list", list(args.epsilon))
    return validate(cfg, EXPERIMENTS)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    exp = EXPERIMENTS[cfg["experiment"]]
    result = exp.run(cfg)
    out = Path(cfg["output.dir"]) / exp.name
    writer = RunWriter(out, cfg["output.formats"])
    writer.report("config.json", cfg.as_dict())
    writer.report("report.json", {"experiment": exp.name, "passed": result.passed,
                                  "worst": result.worst, "report": result.report})
    for name, (cols, rows) in result.tables.items():
        writer.table(name, cols, rows)
    for name, text in result.plots.items():
        writer.svg(name, text)
    status = result.report.get("status") if isinstance(result.report, dict) else None
    if result.passed:
        print(f"{exp.name}: PASS" + (f" ({status})" if status == "trivially zero" else ""))
        print(f"outputs: {out}")
        return EXIT_PASS
    print(f"{exp.name}: FAIL", file=sys.stderr)
    if result.worst:
        print(f"worst sample: {result.worst}", file=sys.stderr)
    print(f"outputs: {out}", file=sys.stderr)
    return EXIT_FAIL


def cmd_list(args) -> int:
    items = listing()
    if args.json:
        sys.stdout.write(json_text(items))
    else:
        width = max(len(i["id"]) for i in items)
        for i in items:
            print(f"{i['id']:<{width}}  {i['summary']}")
    return EXIT_PASS


def cmd_validate(args) -> int:
    cfg = load_config(args.path, args.set)
    validate(cfg, EXPERIMENTS)
    print(f"{args.path}: ok (experiment {cfg['experiment']})")
    return EXIT_PASS


def replay_trace(path) -> dict:
    """Recompute dN/dτ from the stored N and re-check the sandwich row by row."""
    header, cols = read_csv(path)
    need = {"tau", "N", "dN_numeric", "sandwich_lower", "sandwich_upper", "tol", "flag"}
    missing = need - set(header)
    if missing:
        raise ConfigurationError(f"{path}: missing trace columns {sorted(missing)}")
    t, N = cols["tau"], cols["N"]
    dN, _, flags = time_derivative(N, t)
    stored = cols["dN_numeric"]
    interior = np.array([f == "c5" for f in cols["flag"]])
    scale = np.maximum(np.abs(stored), 1.0)
    derivative_gap = float(np.max(np.where(interior, np.abs(dN - stored) / scale, 0.0)))
    lo = stored - cols["sandwich_lower"] + cols["tol"]
    hi = cols["sandwich_upper"] + cols["tol"] - stored
    margin = np.where(interior, np.minimum(lo, hi), np.inf)
    k = int(np.argmin(margin))
    return {"rows": int(len(t)), "interior": int(interior.sum()),
            "derivative_gap": derivative_gap, "worst_tau": float(t[k]),
            "worst_margin": float(margin[k]),
            "passed": bool(np.all(margin >= 0) and derivative_gap <= 1e-9)}


def cmd_replay(args) -> int:
    if not Path(args.trace).is_file():
        raise ConfigurationError(f"trace file {args.trace!r} not found")
    res = replay_trace(args.trace)
    sys.stdout.write(json_text(res))
    if not res["passed"]:
        print(f"worst sample: tau={res['worst_tau']:.17g} margin={res['worst_margin']:.3e}",
              file=sys.stderr)
    return EXIT_PASS if res["passed"] else EXIT_FAIL


COMMANDS = {"run": cmd_run, "list": cmd_list, "validate-config": cmd_validate,
            "replay": cmd_replay}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, StepperFailure) as exc:
        print(f"logcvx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SupportViolation, SamplingError) as exc:
        print(f"logcvx: precondition not met: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LogcvxError as exc:
        print(f"logcvx: check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
