"""Command line entry point: check, cell, solve, converge, potential."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .cell import DEFAULT_TOL, cached_cells, homogenize
from .harness import SweepConfig, negative_control, run_sweep
from .multiindex import EXACT, enumerate_indices
from .operators import BUILTINS, PreconditionError, SolverError, load_problem, validate_ellipticity
from .potential import (
    SolenoidalVector,
    g_potentials,
    random_solenoidal,
    skew_potential,
)
from .resolvent import TorusProblem, build_bundle, error_report, make_rhs


def _dump(obj, path: Path | None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _rhs_arg(value: str | None) -> dict | None:
    """``--f`` is a JSON file with a right-hand side spec, or ``random:SEED[:DEGREE]``."""
    if value is None:
        return None
    if value.startswith("random"):
        parts = value.split(":")
        spec = {"kind": "random"}
        if len(parts) > 1:
            spec["seed"] = int(parts[1])
        if len(parts) > 2:
            spec["degree"] = int(parts[2])
        return spec
    data = json.loads(Path(value).read_text())
    if "kind" not in data and "coeffs" in data:
        data = {"kind": "dump", "field": data}
    return data


def cmd_check(args) -> int:
    a = load_problem(args.problem)
    rep = validate_ellipticity(a)
    _dump({"problem": args.problem, "hash": a.digest(), **rep.as_dict()}, args.output)
    return 0 if rep.ok else 1


def _format_table(hat) -> str:
    idx = enumerate_indices(hat.d, hat.m, EXACT)
    width = max(len(str(i)) for i in idx) + 2
    lines = [" " * width + "".join(f"{str(b):>16}" for b in idx)]
    for a_, row in zip(idx, hat.principal_table()):
        lines.append(f"{str(a_):<{width}}" + "".join(f"{v:16.10f}" for v in row))
    return "\n".join(lines)


def cmd_cell(args) -> int:
    a = load_problem(args.problem)
    cells, where = cached_cells(a, args.cutoff, args.tol, root=args.cache)
    hat = homogenize(a, cells)
    print(f"cells cached in {where}")
    print(f"max cell residual {max(cells.residuals.values(), default=0.0):.3e}, cutoff {cells.cutoff}")
    print(_format_table(hat))
    lower = {f"{a_},{b}": v for (a_, b), v in hat.entries.items() if (a_.order < a.m or b.order < a.m) and abs(v) > 1e-14}
    if lower:
        print("lower-order entries:", json.dumps(lower, sort_keys=True))
    print(f"symbol check: {hat.lambda0_check['verdict']} (min {hat.lambda0_check['symbol_min']:.6g})")
    if args.output:
        _dump(hat.to_dict(), args.output)
    return 0 if hat.lambda0_check["verdict"] == "ok" else 1


def cmd_solve(args) -> int:
    a = load_problem(args.problem)
    cells, _ = cached_cells(a, args.cutoff, args.tol, root=args.cache)
    hat = homogenize(a, cells)
    f = make_rhs(_rhs_arg(args.f), a.d)
    p = TorusProblem.build(a, args.k, f, cells.cutoff, args.lam, args.tol)
    bundle = build_bundle(p, hat, cells)
    report = {"k": args.k, "lambda": p.lam, "problem_hash": a.digest(), "info": bundle.info,
              **error_report(bundle).as_dict()}
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("u_eps", "u", "v_hat"):
        (out / f"{name}.json").write_text(json.dumps(getattr(bundle, name).to_dict()))
    _dump(report, out / "error_report.json")
    print(json.dumps({k: report[k] for k in ("eps", "l2_u", "hm_vhat", "hm_steklov")}, sort_keys=True))
    return 0


def cmd_converge(args) -> int:
    cfg = SweepConfig.from_file(args.config)
    if args.output_dir:
        cfg.output_dir = str(args.output_dir)
    if args.width:
        cfg.width = args.width
    report = run_sweep(cfg)
    for c, s in report.slopes.items():
        shown = f"{s.slope:.3f}" if s.slope is not None else s.note
        flag = report.pass_flags.get(c)
        print(f"{c:12s} slope {shown}  {'' if flag is None else ('PASS' if flag else 'FAIL')}")
    ok = report.passed
    if args.control:
        ctrl = negative_control(cfg, report)
        print(f"negative control: real {ctrl.real_slope}, naive {ctrl.control_slope}, "
              f"{'PASS' if ctrl.passed else 'FAIL'}")
        if cfg.output_dir:
            _dump(ctrl.as_dict(), Path(cfg.output_dir) / "control.json")
        ok = ok and ctrl.passed
    return 0 if ok else 1


def cmd_potential(args) -> int:
    results = []
    if args.builtin:
        a = load_problem(args.builtin)
        cells, _ = cached_cells(a, None, DEFAULT_TOL, root=args.cache)
        for beta, G in g_potentials(a, cells, homogenize(a, cells)).items():
            results.append({"beta": str(beta), "potential": G.to_dict()})
    else:
        if args.input:
            g = SolenoidalVector.from_dict(json.loads(Path(args.input).read_text()))
        else:
            g = random_solenoidal(args.d, args.m, args.modes, args.seed)
        G = skew_potential(g)
        results.append({"input": g.to_dict(), "potential": G.to_dict()})
    worst = max(r["potential"]["report"]["divergence_residual"] for r in results)
    skew = max(r["potential"]["report"]["skew_defect"] for r in results)
    _dump({"potentials": results, "max_divergence_residual": worst, "max_skew_defect": skew}, args.output)
    print(f"max divergence residual {worst:.3e}, max skew defect {skew:.3e}", file=sys.stderr)
    return 0 if worst <= 1e-10 and skew == 0.0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="higherhom", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    problem_help = f"problem JSON file or built-in name ({', '.join(sorted(BUILTINS))})"

    s = sub.add_parser("check", help="ellipticity and Garding report")
    s.add_argument("problem", help=problem_help)
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_check)

    for name, fn, helptext in (("cell", cmd_cell, "solve and cache the cell problems, print the homogenized matrix"),
                               ("solve", cmd_solve, "one eps-solve with its error report")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("problem", help=problem_help)
        s.add_argument("--cutoff", type=int, help="cell cutoff (default 4*degree+8)")
        s.add_argument("--tol", type=float, default=DEFAULT_TOL)
        s.add_argument("--cache", type=Path, help="cache root (default $HIGHERHOM_CACHE_DIR or ~/.cache/higherhom)")
        s.set_defaults(func=fn)
        if name == "cell":
            s.add_argument("-o", "--output", type=Path, help="write the homogenized matrix as JSON")
        else:
            s.add_argument("--k", type=int, required=True)
            s.add_argument("--lambda", dest="lam", type=float, help="spectral parameter (default 1 + 2*lambda2)")
            s.add_argument("--f", help="right-hand side: spec/dump JSON file or random:SEED[:DEGREE]")
            s.add_argument("-o", "--output-dir", default="solve-out")

    s = sub.add_parser("converge", help="eps-sweep with rate fits")
    s.add_argument("config", type=Path, help="sweep config JSON")
    s.add_argument("-o", "--output-dir", type=Path)
    s.add_argument("--width", type=int)
    s.add_argument("--control", action="store_true", help="also run the naive-mean negative control")
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("potential", help="skew potential of a solenoidal vector")
    s.add_argument("input", nargs="?", help="SolenoidalVector JSON (omit for a random one)")
    s.add_argument("--builtin", help="potentials of the g-matrix columns of a built-in problem")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--modes", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cache", type=Path)
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_potential)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PreconditionError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
