"""Command-line front end: ``sltcouple <command> [flags]``.

Exit codes: 0 success, 1 model assumption or gate failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

from . import __version__
from .binproc import DEFAULT_CAP, EnumerationInfeasible
from .bounds import BoundInputs, evaluate_all, f_value
from .coupling import VARIANTS, run_coupling, write_outcomes_csv
from .harness import derive_rng, estimate_epe, proportion_report, run_replicates
from .model import ModelError, load_model, two_state
from .oracle import DP_CAP, TRAJ_CAP, exact_tv_localtimes, trajectory_tv, xi_event_probs
from .slt_engine import run_classical, run_iid, run_permuted, run_regen

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _n_list(text: str) -> list:
    try:
        vals = [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --n-list {text!r}") from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("--n-list needs positive integers")
    return vals


def _positive_int(text: str) -> int:
    v = int(float(text))
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _ns(args) -> list:
    if args.n_list:
        return args.n_list
    if args.n:
        return [args.n]
    raise UsageError("pass --n or --n-list")


def _model(args):
    if not args.model:
        raise UsageError("--model is required")
    try:
        return load_model(args.model)
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse {args.model}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read {args.model}: {exc}") from exc


def _need_seed(args):
    if args.seed is None:
        raise UsageError("--seed is required for stochastic commands")


def _emit(text: str, path=None):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _table(rows: list, header: list, fmt: str) -> str:
    if fmt == "json":
        return _dumps([dict(zip(header, r)) for r in rows])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _resolve_F(args, model) -> tuple:
    if args.f is not None:
        if args.f <= 0:
            raise UsageError("--f must be positive")
        return args.f, None
    if model.epsilon <= 0:
        raise ModelError("eps = 0 leaves F undefined through C4; pass --f explicitly")
    c4 = args.c4 if args.c4 is not None else 1.0
    return f_value(BoundInputs.from_model(model, C4=c4)), c4


def _max_dp_n(d: int, cap: int) -> int:
    n = 0
    while math.comb(n + d, d - 1) * d <= cap:
        n += 1
    return n


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    model = _model(args)
    s = model.summary()
    if args.format == "json":
        _emit(_dumps(s), args.out)
    else:
        line = " ".join(f"{k}={s[k]:.6g}" for k in ("eps", "q", "alpha", "kappa"))
        _emit(f"{line} states={len(s['states'])} checks=ok\n", args.out)
    return EXIT_OK


_RUNNERS = {"classical": run_classical, "regen": run_regen, "permuted": run_permuted, "iid": run_iid}


def _simulate_one(rng, model, n, construction):
    out = _RUNNERS[construction](model, n, rng)
    return out[0] if isinstance(out, tuple) else out


def cmd_simulate(args) -> int:
    model = _model(args)
    _need_seed(args)
    n = args.n or 10
    if args.reps == 1:
        trace = _simulate_one(derive_rng(args.seed, f"simulate:{args.construction}", 0),
                              model, n, args.construction)
        if args.format == "json":
            text = _dumps({"n": n, "construction": args.construction, "xi": trace.xi,
                           "sites": trace.sites, "heights": trace.heights,
                           "curve": trace.curve.tolist()})
        else:
            buf = io.StringIO()
            trace.to_csv(buf, model.space.states)
            text = buf.getvalue()
        _emit(text, args.out)
        return EXIT_OK
    traces = run_replicates(_simulate_one, args.reps, args.seed, f"simulate:{args.construction}",
                            (model, n, args.construction), args.threads)
    header = ["rep"] + [f"count_{s}" for s in model.space.states]
    rows = [[r] + t.counts(model.size).tolist() for r, t in enumerate(traces)]
    _emit(_table(rows, header, args.format), args.out)
    return EXIT_OK


def _couple_row(rng, model, n, F, cap, variant):
    o = run_coupling(model, n, F, cap=cap, rng=rng, variant=variant)
    return {"b_index": o.b_index, "in_G": o.in_G, "h_size": o.h_size,
            "success": o.success, "fallback": o.fallback}


def cmd_couple(args) -> int:
    model = _model(args)
    _need_seed(args)
    n = args.n or 6
    F, c4 = _resolve_F(args, model)
    res = run_replicates(_couple_row, args.reps, args.seed, f"couple:{n}",
                         (model, n, F, args.cap, args.variant), args.threads)
    rows = [dict(rep=r, n=n, eps=model.epsilon, F=F, **row) for r, row in enumerate(res)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_outcomes_csv(fh, rows)
    failures = sum(not r["success"] for r in res)
    report = proportion_report(
        failures, args.reps,
        in_G=sum(r["in_G"] for r in res),
        degenerate=sum(r["h_size"] == 0 for r in res),
        fallback=sum(r["fallback"] for r in res),
    )
    summary = {"n": n, "eps": model.epsilon, "F": F, "C4": c4, "seed": args.seed,
               "variant": args.variant,
               "failure_probability": json.loads(report.to_json())}
    sys.stdout.write(_dumps(summary))
    return EXIT_OK


def cmd_tv_exact(args) -> int:
    model = _model(args)
    rows = []
    for n in _ns(args):
        try:
            rows.append([n, model.epsilon, exact_tv_localtimes(model, n, args.cap or DP_CAP)])
        except EnumerationInfeasible as exc:
            feasible = _max_dp_n(model.size, args.cap or DP_CAP)
            raise EnumerationInfeasible(f"{exc}; largest feasible n is {feasible}") from exc
    _emit(_table(rows, ["n", "eps", "tv"], args.format), args.out)
    return EXIT_OK


def cmd_trajectory_tv(args) -> int:
    model = _model(args)
    cap = args.cap or TRAJ_CAP
    rows = []
    for n in _ns(args):
        try:
            rows.append([n, model.epsilon, trajectory_tv(model, n, cap)])
        except EnumerationInfeasible as exc:
            feasible = int(math.floor(math.log(cap) / math.log(model.size) + 1e-12))
            raise EnumerationInfeasible(f"{exc}; largest feasible n is {feasible}") from exc
    _emit(_table(rows, ["n", "eps", "tv"], args.format), args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    consts = {"C4": args.c4 if args.c4 is not None else 1.0, "C5": args.c5}
    if args.model:
        model = _model(args)
        inp = BoundInputs.from_model(model, eps0=args.eps0, **consts)
    else:
        if args.eps is None:
            raise UsageError("pass --model or --eps")
        inp = BoundInputs(eps=args.eps, eps0=args.eps0 if args.eps0 is not None else args.eps,
                          beta=args.beta, phi=args.phi, kappa=args.kappa, gamma=args.gamma, **consts)
    out = evaluate_all(inp, n=args.n, s=args.s, theta=args.theta, K=args.K)
    _emit(_dumps(out), args.out)
    return EXIT_OK


def cmd_epe(args) -> int:
    model = _model(args)
    _need_seed(args)
    ns = args.n_list or [10, 100, 1000]
    res = estimate_epe(model, ns, args.reps, derive_rng(args.seed, "epe", 0))
    out = res.as_dict()
    out.update(eps=model.epsilon, seed=args.seed, reps=args.reps)
    _emit(_dumps(out), args.out)
    return EXIT_OK


def cmd_demo_two_state(args) -> int:
    model = two_state(args.stay)
    ns = args.n_list or [2, 6, 10]
    rows = [[n, exact_tv_localtimes(model, n), trajectory_tv(model, n)] for n in ns]
    xi_n = args.n or 10_000
    px, py = xi_event_probs(model, xi_n)
    if args.format == "json":
        text = _dumps({"stay": args.stay, "eps": model.epsilon,
                       "table": [dict(zip(["n", "localtime_tv", "trajectory_tv"], r)) for r in rows],
                       "xi_event": {"n": xi_n, "P_chain": px, "P_iid": py}})
    else:
        text = _table(rows, ["n", "localtime_tv", "trajectory_tv"], "csv")
        text += f"# xi event at n={xi_n}: P_chain={px!r} P_iid={py!r}\n"
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", metavar="PATH", help="model JSON file")
    common.add_argument("--n", type=_positive_int)
    common.add_argument("--n-list", type=_n_list, metavar="a,b,c")
    common.add_argument("--reps", type=_positive_int, default=1000)
    common.add_argument("--seed", type=int)
    common.add_argument("--c4", type=float)
    common.add_argument("--f", type=float, help="coupling level F (overrides --c4)")
    common.add_argument("--cap", type=_positive_int, help="enumeration cap")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)

    parser = argparse.ArgumentParser(prog="sltcouple", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check a model file and print its constants")

    p = sub.add_parser("simulate", parents=[common], help="soft-local-time traces or count tables")
    p.add_argument("--construction", choices=sorted(_RUNNERS), default="classical")
    p.set_defaults(reps=1)

    p = sub.add_parser("couple", parents=[common], help="coupling replicates and failure estimate")
    p.add_argument("--variant", choices=VARIANTS, default="exact",
                   help="i.i.d.-side construction (literal has a biased marginal)")
    sub.add_parser("tv-exact", parents=[common], help="exact local-time TV per n")
    sub.add_parser("trajectory-tv", parents=[common], help="exact trajectory TV per n")

    p = sub.add_parser("bounds", parents=[common], help="evaluate the closed-form bounds")
    p.add_argument("--eps", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=2.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--c5", type=float, default=1.0)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--theta", type=float)
    p.add_argument("--K", type=float, default=1.0)

    sub.add_parser("epe", parents=[common], help="Monte Carlo of the block empirical process")

    p = sub.add_parser("demo-two-state", parents=[common], help="local-time vs trajectory TV table")
    p.add_argument("--stay", type=float, default=0.6)
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "tv-exact": cmd_tv_exact,
    "trajectory-tv": cmd_trajectory_tv,
    "bounds": cmd_bounds,
    "epe": cmd_epe,
    "demo-two-state": cmd_demo_two_state,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.cap is None and args.command == "couple":
        args.cap = DEFAULT_CAP
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sltcouple: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, EnumerationInfeasible, ValueError) as exc:
        print(f"sltcouple: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
