"""Command-line entry point.

Exit codes: 0 for a Close verdict (or any successful non-test command),
3 for Far, 1 for usage errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import harness
from .distributions import Pmf, dump_pmf, load_pmf, make_uniform, zipf_pmf
from .errors import ToltestError
from .instance_optimal import (
    PmfSource,
    embed_uniform_instance,
    embedding_spec,
    io_test_identity,
)
from .lower_bound import (
    dual_bound_value,
    explicit_parameters,
    lb_parameters,
    mm_tv_bound,
    poisson_mixture_tv,
    solve_for_params,
)
from .rng import RngStream
from .tester import DEFAULT_C, PoissonSampler, sufficient_samples, test_equivalence, test_identity

EXIT_CLOSE, EXIT_USAGE, EXIT_RUNTIME, EXIT_FAR = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p: argparse.ArgumentParser, *, n=True, eps=True, m=True):
    if n:
        p.add_argument("--n", type=int, help="domain size (when no pmf file fixes it)")
    if m:
        p.add_argument("--m", type=float, help="Poisson sample budget per set")
    if eps:
        p.add_argument("--eps1", type=float, default=0.0)
        p.add_argument("--eps2", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c", type=float, default=DEFAULT_C, help="threshold constant")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--out", type=Path, help="write output here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toltest", description="Tolerant identity and closeness testing.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test-identity", help="test p (simulated) against an explicit q")
    _common(p)
    p.add_argument("--p-file", required=True)
    p.add_argument("--q-file", help="reference pmf; uniform over --n if omitted")
    p.add_argument("--delta", type=float, default=0.2)

    p = sub.add_parser("test-closeness", help="test two sampled distributions")
    _common(p)
    p.add_argument("--p-file", required=True)
    p.add_argument("--q-file", required=True)
    p.add_argument("--delta", type=float, default=0.2)

    p = sub.add_parser("io-test", help="bucketed tester that adapts to the reference")
    _common(p, m=False)
    p.add_argument("--p-file", required=True)
    p.add_argument("--q-file", help="reference pmf; Zipf(1) over --n if omitted")

    p = sub.add_parser("simulate", help="Monte Carlo error rates on synthetic instances")
    _common(p, m=False)
    p.add_argument("--m", type=_floats, help="comma-separated budgets")
    p.add_argument("--tester", choices=harness.TESTERS, default="identity")
    p.add_argument("--family", choices=harness.FAMILIES, default="paninski")
    p.add_argument("--p-file")
    p.add_argument("--q-file")

    p = sub.add_parser("phase-diagram", help="empirical sample complexity over an (eps1, eps2) grid")
    _common(p, eps=False, m=False)
    p.add_argument("--eps1", type=_floats, default=[0.0, 0.01, 0.05])
    p.add_argument("--eps2", type=_floats, default=[0.5])
    p.add_argument("--target", type=float, default=0.2)

    p = sub.add_parser("lower-bound", help="solve the moment-matching LP and certify TV")
    _common(p, eps=False)
    p.add_argument("--eps1", type=float, default=0.05)
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--grid", type=int, default=401)
    p.add_argument("--kappa", type=float, help="override the regime choice of kappa")
    p.add_argument("--M", dest="M_", type=float, help="override the regime choice of M")

    p = sub.add_parser("calibrate", help="fit the threshold constant c")
    _common(p, eps=False, m=False)
    p.add_argument("--eps2", type=float, default=0.5)
    p.set_defaults(trials=400)

    p = sub.add_parser("embed", help="plant a small distribution inside a reference q")
    _common(p, eps=False, m=False)
    p.add_argument("--q-file", required=True)
    p.add_argument("--S", help="comma-separated indices of S (default: whole domain)")
    p.add_argument("--p-file", help="pmf over rat symbols; uniform if omitted")
    return parser


# --- output ----------------------------------------------------------------


def _emit(args, rows, fmt=None):
    fmt = fmt or args.format
    if isinstance(rows, dict):
        rows = [rows]
    if fmt == "json":
        text = json.dumps(rows[0] if len(rows) == 1 else rows, indent=2, default=_jsonable) + "\n"
    else:
        cols = list(dict.fromkeys(k for r in rows for k in r))
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
        text = buf.getvalue()
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _cell(v):
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, default=_jsonable)
    return v


def _domain(args, q: Pmf | None = None) -> int:
    if q is not None:
        return q.n
    if args.n is None:
        raise UsageError("--n is required when no pmf file fixes the domain")
    return args.n


def _budget(args, n: int) -> float:
    return args.m if args.m is not None else sufficient_samples(n, args.eps1, args.eps2)


def _verdict_exit(decision) -> int:
    return EXIT_FAR if decision.value == "far" else EXIT_CLOSE


# --- commands --------------------------------------------------------------


def cmd_test_identity(args) -> int:
    p = load_pmf(args.p_file)
    q = load_pmf(args.q_file) if args.q_file else make_uniform(_domain(args))
    m = _budget(args, 2 * q.n)
    v = test_identity(q, PoissonSampler(p), m, args.eps2, args.delta, args.c,
                      RngStream(args.seed), eps1=args.eps1)
    _emit(args, v.to_dict())
    return _verdict_exit(v.decision)


def cmd_test_closeness(args) -> int:
    p, q = load_pmf(args.p_file), load_pmf(args.q_file)
    m = _budget(args, q.n)
    v = test_equivalence(PoissonSampler(p), PoissonSampler(q), m, args.eps2, args.delta, args.c,
                         RngStream(args.seed), eps1=args.eps1)
    _emit(args, v.to_dict())
    return _verdict_exit(v.decision)


def cmd_io_test(args) -> int:
    p = load_pmf(args.p_file)
    q = load_pmf(args.q_file) if args.q_file else zipf_pmf(_domain(args), 1.0)
    v = io_test_identity(q, PmfSource(p), args.eps1, args.eps2, args.c, RngStream(args.seed))
    d = v.to_dict()
    if args.format == "csv":
        rows = [{"overall": d["decision"], "samples": d["samples"], **s} for s in d["subtests"]]
        _emit(args, rows)
    else:
        _emit(args, d)
    return _verdict_exit(v.decision)


def cmd_simulate(args) -> int:
    n = args.n
    if n is None:
        if not args.q_file:
            raise UsageError("--n or --q-file is required")
        n = load_pmf(args.q_file).n
    spec = harness.ExperimentSpec(n, args.eps1, args.eps2, args.tester, args.family,
                                  tuple(args.m or ()), args.trials, args.seed, args.c,
                                  p_file=args.p_file, q_file=args.q_file)
    rows = [r.to_dict() for r in harness.estimate_error_rate(spec)]
    _emit(args, rows, args.format)
    return EXIT_CLOSE


def cmd_phase_diagram(args) -> int:
    rows = harness.phase_diagram(_domain(args), args.eps1, args.eps2, args.trials, args.seed,
                                 args.c, args.target)
    if args.format == "csv":
        text = harness.rows_to_csv(rows, harness.PHASE_COLUMNS)
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
    else:
        _emit(args, rows)
    return EXIT_CLOSE


def cmd_lower_bound(args) -> int:
    n = _domain(args)
    if args.m is None:
        raise UsageError("--m is required")
    if (args.kappa is None) != (args.M_ is None):
        raise UsageError("--kappa and --M go together")
    if args.kappa is not None:
        params = explicit_parameters(n, args.m, args.eps1, args.kappa, args.M_, args.L)
    else:
        params = lb_parameters(n, args.m, args.eps1, args.L)
    pair = solve_for_params(params, args.grid)
    out = {
        "n": n, "m": args.m, "eps1": args.eps1, "kappa": params.kappa, "M": params.M,
        "L": params.L, "A": params.A, "B": params.B, "regime": params.regime,
        "intermediate_regime": params.flagged, "objective": pair.objective,
        "eps2": pair.eps2(), "moment_gap": pair.moment_gap,
        "certified_tv": poisson_mixture_tv(pair, args.m, n=n),
        "tv_bound": mm_tv_bound(params.kappa, params.M, params.L)
        if params.kappa >= params.M else None,
    }
    try:
        out["dual_bound"] = dual_bound_value(args.eps1, params.A, params.B, params.L)
    except ToltestError:
        out["dual_bound"] = None
    if args.format == "json":
        out.update(support=pair.support.tolist(), w=pair.w.tolist(), w_prime=pair.w_prime.tolist())
        _emit(args, out)
    else:
        rows = [{"s": s, "w": a, "w_prime": b} for s, a, b in zip(pair.support, pair.w, pair.w_prime)]
        _emit(args, rows)
    return EXIT_CLOSE


def cmd_calibrate(args) -> int:
    n = _domain(args)
    c = harness.calibrate_constant(n, args.eps2, args.trials, RngStream(args.seed))
    _emit(args, {"n": n, "eps2": args.eps2, "trials": args.trials, "seed": args.seed, "c": c})
    return EXIT_CLOSE


def cmd_embed(args) -> int:
    q = load_pmf(args.q_file)
    S = np.arange(q.n) if not args.S else np.array([int(v) for v in args.S.split(",")])
    spec = embedding_spec(q, S)
    small = load_pmf(args.p_file) if args.p_file else make_uniform(spec.rat)
    p_new = embed_uniform_instance(q, S, small, spec)
    if args.format == "json":
        _emit(args, {"rat": spec.rat, "partition": [b.tolist() for b in spec.partition],
                     "pmf": p_new.to_list()})
    else:
        text = dump_pmf(p_new)
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
    return EXIT_CLOSE


COMMANDS = {
    "test-identity": cmd_test_identity,
    "test-closeness": cmd_test_closeness,
    "io-test": cmd_io_test,
    "simulate": cmd_simulate,
    "phase-diagram": cmd_phase_diagram,
    "lower-bound": cmd_lower_bound,
    "calibrate": cmd_calibrate,
    "embed": cmd_embed,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    e1, e2 = getattr(args, "eps1", None), getattr(args, "eps2", None)
    if isinstance(e1, float) and isinstance(e2, float) and not 0 <= e1 < e2 <= 1:
        parser.error(f"need 0 <= eps1 < eps2 <= 1, got eps1={e1}, eps2={e2}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"toltest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ToltestError, OSError, RuntimeError) as exc:
        print(f"toltest: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
