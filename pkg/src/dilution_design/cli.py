"""Command-line interface: ``dilution-design <command> ...``.

Every failure is reported on stderr as one JSON object
``{"error": <code>, "message": ...}`` with a nonzero exit status.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import one_atom, optimizer, reproduce, schemas, simulate
from .criteria import Criterion, gradient_curve_csv
from .errors import DesignError, InvalidArgumentError
from .measure import DesignMeasure, round_to_integer_design
from .priors import QuadratureConfig, parse_prior, prior_from_dict

EXIT_OK = 0
EXIT_FAILED = 1  # ran, but not certified / some check failed
EXIT_ERROR = 2


class _JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidArgumentError(f"{self.prog}: {message}")


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                   help="JSON file with command parameters (flags override it)")
    g.add_argument("--out", type=Path, default=argparse.SUPPRESS,
                   help="directory for output artifacts")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed")
    g.add_argument("--quad-tol", type=float, default=argparse.SUPPRESS,
                   help="tolerance of adaptive quadrature")
    g.add_argument("--grid-points", type=int, default=argparse.SUPPRESS,
                   help="number of support grid points of the optimizer")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _JsonArgumentParser(prog="dilution-design", parents=[common],
                                 description="Optimal dilution designs for repopulation assays.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonArgumentParser)

    def criterion_args(p):
        p.add_argument("--criterion", choices=sorted(("G1", "G2", "G3", "G4", "G1_cost",
                                                      "G4_cost", "G1_mixture")),
                       default=argparse.SUPPRESS)
        p.add_argument("--prior", default=argparse.SUPPRESS,
                       help="point:LAM | uniform:U[,LOWER] | gamma:ALPHA[,BETA] | two_point:L1,L2,P")
        p.add_argument("--n", type=float, default=argparse.SUPPRESS, help="number of mice (30)")
        p.add_argument("--c1", type=float, default=argparse.SUPPRESS)
        p.add_argument("--c2", type=float, default=argparse.SUPPRESS)

    p = sub.add_parser("optimize", parents=[common], help="optimal design over all measures")
    criterion_args(p)
    p.add_argument("--refine-rounds", type=int, default=argparse.SUPPRESS)
    p.add_argument("--budgets", type=float, nargs="+", default=argparse.SUPPRESS,
                   help="explicit volume budgets to scan")

    p = sub.add_parser("one-atom", parents=[common], help="best equal-dose design")
    criterion_args(p)

    def family_args(p):
        p.add_argument("--family", choices=sorted(one_atom.THRESHOLD_RANGES),
                       default=argparse.SUPPRESS)
        p.add_argument("--n", type=float, default=argparse.SUPPRESS)
        p.add_argument("--beta", type=float, default=argparse.SUPPRESS)
        p.add_argument("--c1", type=float, default=argparse.SUPPRESS)
        p.add_argument("--c2", type=float, default=argparse.SUPPRESS)

    p = sub.add_parser("threshold", parents=[common],
                       help="prior parameter where equal doses start to dilute")
    family_args(p)

    p = sub.add_parser("sweep", parents=[common], help="equal-dose optimum over a parameter range")
    family_args(p)
    p.add_argument("--start", type=float, default=argparse.SUPPRESS)
    p.add_argument("--stop", type=float, default=argparse.SUPPRESS)
    p.add_argument("--num", type=int, default=argparse.SUPPRESS)
    p.add_argument("--log", action="store_true", default=argparse.SUPPRESS,
                   help="log-spaced parameter values")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo variance of the MLE")
    p.add_argument("--design", type=Path, default=argparse.SUPPRESS,
                   help="design JSON (masses are rounded to whole mice)")
    p.add_argument("--dose", type=float, default=argparse.SUPPRESS,
                   help="equal-dose design: volume per mouse")
    p.add_argument("--n", type=float, default=argparse.SUPPRESS)
    p.add_argument("--lambda", dest="lambda_", type=float, default=argparse.SUPPRESS)
    p.add_argument("--replicates", type=int, default=argparse.SUPPRESS)
    p.add_argument("--dump-estimates", action="store_true", default=argparse.SUPPRESS,
                   help="also write every replicate estimate to estimates.csv")

    sub.add_parser("reproduce", parents=[common], help="run every numerical check")
    return parser


# -- helpers ---------------------------------------------------------------------------

def _settings(args) -> dict:
    """Config file values overridden by command-line flags."""
    cfg = {}
    if getattr(args, "config", None) is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgumentError(f"cannot read config {args.config}: {exc}") from exc
        schemas.validate("run_config", cfg)
    for key, val in vars(args).items():
        if key in ("config", "command"):
            continue
        cfg["lambda" if key == "lambda_" else key] = val
    return cfg


def _require(cfg, key):
    if cfg.get(key) is None:
        raise InvalidArgumentError(f"missing required parameter --{key.replace('_', '-')}")
    return cfg[key]


def _quad(cfg) -> QuadratureConfig:
    q = dict(cfg.get("quadrature", {}))
    if cfg.get("quad_tol") is not None:
        q["tol"] = cfg["quad_tol"]
    return QuadratureConfig(**q)


def _optimizer_config(cfg) -> optimizer.OptimizerConfig:
    o = dict(cfg.get("optimizer", {}))
    if cfg.get("grid_points") is not None:
        o["grid_points"] = cfg["grid_points"]
    if cfg.get("refine_rounds") is not None:
        o["refine_rounds"] = cfg["refine_rounds"]
    if cfg.get("budgets") is not None:
        o["budget_scan"] = cfg["budgets"]
    return optimizer.OptimizerConfig.from_dict(o)


def _criterion(cfg) -> Criterion:
    prior = _require(cfg, "prior")
    prior = parse_prior(prior) if isinstance(prior, str) else prior_from_dict(prior)
    return Criterion(_require(cfg, "criterion"), prior, cfg.get("c1"), cfg.get("c2"))


def _emit(out_dir, name, text, stdout):
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    elif stdout is not None:
        stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- commands --------------------------------------------------------------------------

def cmd_optimize(cfg, stdout):
    crit = _criterion(cfg)
    n = float(cfg.get("n", 30))
    result = optimizer.optimize(crit, n, _optimizer_config(cfg), _quad(cfg))
    summary = {"criterion": crit.to_dict(), "n": n,
               "measure": result.measure.to_dict(),
               "certificate": result.certificate.to_dict()}
    out = cfg.get("out")
    if out is not None:
        _emit(out, "measure.json", _json(result.measure.to_dict()), None)
        _emit(out, "certificate.json", _json(result.certificate.to_dict()), None)
        _emit(out, "trace.csv", optimizer.trace_to_csv(result.trace), None)
        grid = optimizer.make_grid(_optimizer_config(cfg))
        _emit(out, "gradient.csv",
              gradient_curve_csv(crit, result.measure, grid, _quad(cfg)), None)
    stdout.write(_json(summary))
    return EXIT_OK if result.certificate.passed else EXIT_FAILED


def cmd_one_atom(cfg, stdout):
    crit = _criterion(cfg)
    n = float(cfg.get("n", 30))
    sol = one_atom.solve_one_atom(crit, n, _quad(cfg))
    payload = {"criterion": crit.to_dict(), "n": n, **sol.to_dict()}
    _emit(cfg.get("out"), "one_atom.json", _json(payload), None)
    stdout.write(_json(payload))
    return EXIT_OK


def cmd_threshold(cfg, stdout):
    fam = _require(cfg, "family")
    n = float(cfg.get("n", 30))
    beta = float(cfg.get("beta", 1.0))
    val = one_atom.threshold(fam, n, beta=beta, c1=cfg.get("c1"), c2=cfg.get("c2"),
                             quad=_quad(cfg))
    payload = {"family": fam, "n": n, "beta": beta, "threshold": val}
    _emit(cfg.get("out"), "threshold.json", _json(payload), None)
    stdout.write(_json(payload))
    return EXIT_OK


def cmd_sweep(cfg, stdout):
    fam = _require(cfg, "family")
    start, stop = float(_require(cfg, "start")), float(_require(cfg, "stop"))
    num = int(cfg.get("num", 200))
    if cfg.get("log"):
        if start <= 0:
            raise InvalidArgumentError("--log needs a positive --start")
        params = np.geomspace(start, stop, num)
    else:
        params = np.linspace(start, stop, num)
    rows = one_atom.sweep(fam, params, float(cfg.get("n", 30)), float(cfg.get("beta", 1.0)),
                          cfg.get("c1"), cfg.get("c2"), _quad(cfg))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "x_star", "x_unconstrained", "objective"])
    for p, x_unc, x_star, obj in rows:
        w.writerow([repr(p), repr(x_star), repr(x_unc), repr(obj)])
    text = buf.getvalue()
    if cfg.get("out") is not None:
        _emit(cfg["out"], "sweep.csv", text, None)
    else:
        stdout.write(text)
    return EXIT_OK


def cmd_simulate(cfg, stdout):
    if cfg.get("design") is not None:
        d = cfg["design"]
        if not isinstance(d, dict):
            try:
                d = json.loads(Path(d).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise InvalidArgumentError(f"cannot read design {d}: {exc}") from exc
        schemas.validate("measure", d)
        design = round_to_integer_design(DesignMeasure.from_dict(d))
    else:
        design = DesignMeasure([float(_require(cfg, "dose"))], [float(cfg.get("n", 30))])
    lam = float(_require(cfg, "lambda"))
    reps = int(cfg.get("replicates", 100_000))
    seed = cfg.get("seed", 0)
    report, est = simulate.variance_study(design, lam, reps, seed, return_estimates=True)
    payload = {**report.to_dict(), "design": design.to_dict()}
    _emit(cfg.get("out"), "variance_report.json", _json(payload), None)
    if cfg.get("dump_estimates"):
        _emit(cfg.get("out") or ".", "estimates.csv", simulate.estimates_to_csv(est), None)
    stdout.write(_json(payload))
    return EXIT_OK


def cmd_reproduce(cfg, stdout):
    rows = reproduce.run_all(echo=lambda line: stdout.write(line + "\n"))
    n_pass = sum(r.passed for r in rows)
    stdout.write(f"{n_pass}/{len(rows)} checks passed\n")
    _emit(cfg.get("out"), "reproduce.json", _json([r.to_dict() for r in rows]), None)
    return EXIT_OK if n_pass == len(rows) else EXIT_FAILED


COMMANDS = {"optimize": cmd_optimize, "one-atom": cmd_one_atom, "threshold": cmd_threshold,
            "sweep": cmd_sweep, "simulate": cmd_simulate, "reproduce": cmd_reproduce}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = _settings(args)
        return COMMANDS[args.command](cfg, stdout)
    except DesignError as exc:
        stderr.write(json.dumps(exc.to_dict()) + "\n")
        return EXIT_ERROR
    except (TypeError, ValueError) as exc:
        # malformed config values that slipped past the schema
        stderr.write(json.dumps({"error": "invalid_argument", "message": str(exc)}) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
