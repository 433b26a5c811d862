"""Command-line entry point (``qbc`` / ``python -m qbc``)."""

from __future__ import annotations

import argparse
import ast
import json
import logging
import math
import os
import sys

from .. import adversary, analysis, boolfn
from ..errors import QbcError
from ..protocol import SCHEMES, VERIFY_STRATEGIES, SessionConfig, coin_flip, run_session
from ..qcore import make_state_pair
from . import experiments, transport

EXIT_USAGE = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


GLOBAL_DEFAULTS = {"seed": 0, "trials": 100_000, "out": None, "fmt": "csv", "workers": 1}


def _common(top: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand.

    Subparsers use SUPPRESS defaults so they do not clobber values given
    before the subcommand.
    """
    d = (lambda k: GLOBAL_DEFAULTS[k]) if top else (lambda k: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d("seed"), help="master seed (QBC_SEED overrides)")
    p.add_argument("--trials", type=int, default=d("trials"))
    p.add_argument("--out", default=d("out"), help="output path; CSV here, JSON summary beside it")
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default=d("fmt"))
    p.add_argument("--workers", type=int, default=d("workers"))
    return p


def _session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheme", choices=SCHEMES, default="b92bc")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--n0", type=int)
    p.add_argument("--cosA", type=float, default=0.8)
    p.add_argument("--delta", type=float)
    p.add_argument("--F", dest="F_hex", metavar="HEX", help="truth table of F in hex")
    p.add_argument("--verify", choices=VERIFY_STRATEGIES, default="projective")


def _session_cfg(args) -> SessionConfig:
    F = boolfn.BoolFn.from_hex(args.F_hex, args.n) if args.F_hex else None
    cosA = None if args.scheme == "bb84bc" else args.cosA
    return SessionConfig(args.scheme, n=args.n, m=args.m, n0=args.n0, cosA=cosA, delta=args.delta,
                         F=F, seed=args.seed, verify_strategy=args.verify)


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _kv(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, _literal(value)


def _grid(text: str) -> tuple[str, list]:
    key, sep, values = text.partition("=")
    if not sep or not key or not values:
        raise argparse.ArgumentTypeError(f"expected key=v1,v2,..., got {text!r}")
    return key, [_literal(v) for v in values.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = _common(top=False)
    parser = _Parser(prog="qbc", description="Quantum bit commitment simulator.", parents=[_common(top=True)])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run-protocol", parents=[common], help="run one honest session and print the transcript")
    _session_flags(p)
    p.add_argument("--b", type=int, choices=(0, 1), default=1)
    p.add_argument("--session", default="s0")
    p.add_argument("--coin", action="store_true", help="run a coin flip instead")

    p = sub.add_parser("attack", parents=[common], help="run a named attack strategy")
    p.add_argument("strategy", choices=sorted(adversary.STRATEGIES))
    p.add_argument("-p", "--param", type=_kv, action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("sweep", parents=[common], help="grid over one or two parameters")
    p.add_argument("strategy", choices=sorted(adversary.STRATEGIES))
    p.add_argument("-p", "--param", type=_kv, action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-g", "--grid", type=_grid, action="append", required=True, metavar="KEY=V1,V2")

    p = sub.add_parser("formulas", parents=[common], help="evaluate closed-form predictions")
    fsub = p.add_subparsers(dest="formula", required=True, parser_class=_Parser)
    f = fsub.add_parser("eq12", parents=[common], help="probe-steering failure 1 - ((1+cos^2 A)/2)^m")
    f.add_argument("--m", type=int, required=True)
    _angle_flags(f)
    f = fsub.add_parser("concealing", parents=[common], help="exact tail vs normal approximation vs asymptotic readings")
    f.add_argument("--n", type=int, action="append", required=True)
    f.add_argument("--n0", type=int)
    f.add_argument("--ratio", type=float, help="n0 = floor(ratio * n) when --n0 is absent")
    f.add_argument("--pA", type=float, required=True)
    f = fsub.add_parser("binding-m", parents=[common], help="minimum m for binding confidence 1 - e^-alpha")
    f.add_argument("--alpha", type=float, required=True)
    _angle_flags(f)
    f = fsub.add_parser("min-n", parents=[common], help="minimum n for concealing confidence 1 - e^-beta")
    f.add_argument("--beta", type=float, required=True)
    f.add_argument("--m", type=int, required=True)
    f.add_argument("--pA", type=float, required=True)
    f.add_argument("--gap", type=int, default=2)
    f = fsub.add_parser("bob-cheat", parents=[common], help="1 - P[Bin(n, pA) <= n0]^m")
    for k, t in (("--n", int), ("--n0", int), ("--pA", float), ("--m", int)):
        f.add_argument(k, type=t, required=True)
    f = fsub.add_parser("trace-distance", parents=[common], help="neighbouring-blob trace distance sin(A)/n")
    f.add_argument("--n", type=int, action="append", required=True)
    _angle_flags(f)
    f = fsub.add_parser("pusd", parents=[common], help="unambiguous identification rate 1 - cos A")
    _angle_flags(f)

    p = sub.add_parser("ci", parents=[common], help="Boolean-function tools")
    csub = p.add_subparsers(dest="tool", required=True, parser_class=_Parser)
    for name in ("order", "spectrum"):
        c = csub.add_parser(name, parents=[common])
        c.add_argument("--hex", required=True)
        c.add_argument("--n", type=int)
    c = csub.add_parser("search", parents=[common], help="exhaustive search for n <= 4")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--n0", type=int, required=True)
    c.add_argument("--unbalanced", action="store_true")
    c = csub.add_parser("make", parents=[common], help="construct a CI function and print its hex table")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--n0", type=int, required=True)
    c.add_argument("--kind", choices=("linear-mask", "recursive"), default="linear-mask")

    p = sub.add_parser("serve", parents=[common], help="host the receiver and simulator kernel")
    _session_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5092)
    p.add_argument("--max-sessions", type=int, help="exit after this many sessions")

    p = sub.add_parser("connect", parents=[common], help="run the committer against a server")
    _session_flags(p)
    p.add_argument("--addr", required=True, metavar="HOST:PORT")
    p.add_argument("--b", type=int, choices=(0, 1), default=1)
    p.add_argument("--session", default="s0")
    p.add_argument("--coin", action="store_true")
    p.add_argument("--debug", action="store_true", help="ship amplitudes instead of preparation records")
    return parser


def _angle_flags(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--cosA", type=float)
    g.add_argument("--cos2A", type=float, help="cos^2 A")


def _cosA(args) -> float:
    if args.cos2A is not None:
        if not 0 <= args.cos2A <= 1:
            raise QbcError(f"cos^2 A must lie in [0, 1], got {args.cos2A}")
        return math.sqrt(args.cos2A)
    return args.cosA


def _emit(args, rows: list[dict], summary) -> None:
    if args.out:
        experiments.write_outputs(args.out, rows, summary)
    if args.fmt == "json":
        print(json.dumps(summary, indent=2, default=str))
    else:
        sys.stdout.write(experiments.rows_to_csv(rows))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_run_protocol(args) -> int:
    cfg = _session_cfg(args)
    if args.coin:
        bit, tr = coin_flip(cfg, args.session, args.seed)
    else:
        tr = run_session(cfg, args.b, args.session, args.seed)
    print(json.dumps(tr.to_dict(), indent=2))
    print(str(tr.verdict) if not args.coin else f"{tr.verdict} result={tr.result}")
    return 0 if tr.verdict.accepted else 3


def _experiment(args, params: dict) -> experiments.ExperimentConfig:
    return experiments.ExperimentConfig(args.strategy, params, args.trials, args.seed, None, args.fmt,
                                        workers=args.workers)


def cmd_attack(args) -> int:
    result = experiments.run_experiment(_experiment(args, dict(args.param)))
    _emit(args, [result.row()], result.summary())
    return 0


def cmd_sweep(args) -> int:
    grid = dict(args.grid)
    first = {k: v[0] for k, v in grid.items()}
    results = experiments.sweep(_experiment(args, {**dict(args.param), **first}), grid)
    _emit(args, [r.row() for r in results], [r.summary() for r in results])
    return 0


def _formula_rows(args) -> list[dict]:
    name = args.formula
    if name == "eq12":
        c = _cosA(args)
        return [{"m": args.m, "cos2A": c * c, "failure": analysis.eq12_failure(args.m, c),
                 "binomial_sum": analysis.probe_failure_binomial_sum(args.m, c)}]
    if name == "concealing":
        rows = []
        for n in args.n:
            n0 = args.n0 if args.n0 is not None else math.floor((args.ratio or 0.5) * n)
            exact = analysis.concealing_exact(n, n0, args.pA)
            row = {"n": n, "n0": n0, "exact": exact, "dml": analysis.concealing_dml(n, n0, args.pA)}
            try:
                asym = analysis.concealing_asymptotic(n, n0, args.pA)
                row.update(asym_as_printed=asym.as_printed, asym_complement=asym.complement,
                           closer=asym.closer_to(exact))
            except QbcError as exc:
                row.update(asym_as_printed="", asym_complement="", closer=str(exc))
            rows.append(row)
        return rows
    if name == "binding-m":
        c = _cosA(args)
        r = analysis.binding_min_m(args.alpha, c)
        return [{"alpha": args.alpha, "cos2A": c * c, "m_sin2_exponent": r.sin2, "m_cos2_exponent": r.cos2}]
    if name == "min-n":
        return [{"beta": args.beta, "m": args.m, "pA": args.pA, "gap": args.gap,
                 "n": analysis.min_n_for_beta(args.beta, args.m, args.pA, args.gap)}]
    if name == "bob-cheat":
        return [{"n": args.n, "n0": args.n0, "pA": args.pA, "m": args.m,
                 "bound": analysis.bob_cheat_prob(args.n, args.n0, args.pA, args.m)}]
    if name == "trace-distance":
        c = _cosA(args)
        pair = make_state_pair(c)
        rows = []
        for n in args.n:
            a, a2 = analysis.one_flip_pattern(1, n)
            r = analysis.blob_trace_distance(pair, a, a2)
            rows.append({"n": n, "closed_form": analysis.trace_distance_closed_form(c, n), "eigen": r.numeric,
                         "bloch": analysis.trace_distance_bloch(c, n)})
        return rows
    c = _cosA(args)
    return [{"cosA": c, "pA": analysis.p_usd(c)}]


def cmd_formulas(args) -> int:
    rows = _formula_rows(args)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    if args.fmt == "json":
        print(json.dumps(rows, indent=2))
    elif len(rows) == 1 and args.formula == "eq12":
        print(f"{rows[0]['failure']:.12f}")
    else:
        cols = list(rows[0])
        print(",".join(cols))
        for r in rows:
            print(",".join(f"{r[k]:.12g}" if isinstance(r[k], float) else str(r[k]) for k in cols))
    return 0


def cmd_ci(args) -> int:
    if args.tool in ("order", "spectrum"):
        F = boolfn.BoolFn.from_hex(args.hex, args.n)
        if args.tool == "order":
            print(boolfn.ci_order(F))
        else:
            print(" ".join(str(int(v)) for v in boolfn.walsh_transform(F)))
        return 0
    if args.tool == "search":
        for F in boolfn.search_ci(args.n, args.n0, not args.unbalanced):
            print(F.to_hex())
        return 0
    F = boolfn.make_ci_function(args.n, args.n0, args.kind)
    print(F.to_hex())
    return 0


def cmd_serve(args) -> int:
    cfg = _session_cfg(args)
    server = transport.BobServer(cfg, (args.host, args.port))
    # handler threads must finish before server_close returns
    server.daemon_threads = False
    host, port = server.address
    print(f"listening on {host}:{port}", flush=True)
    try:
        if args.max_sessions is None:
            server.serve_forever()
        else:
            for _ in range(args.max_sessions):
                server.handle_request()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    for v in server.verdicts:
        print(v)
    return 0


def cmd_connect(args) -> int:
    cfg = _session_cfg(args)
    tr = transport.remote_session(transport.parse_addr(args.addr), cfg, args.b, args.session, args.seed,
                                  debug=args.debug, coin=args.coin)
    print(json.dumps(tr.to_dict(), indent=2))
    print(str(tr.verdict) if not args.coin else f"{tr.verdict} result={tr.result}")
    return 0 if tr.verdict.accepted else 3


COMMANDS = {
    "run-protocol": cmd_run_protocol,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "formulas": cmd_formulas,
    "ci": cmd_ci,
    "serve": cmd_serve,
    "connect": cmd_connect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    env_seed = os.environ.get("QBC_SEED")
    if env_seed is not None:
        try:
            args.seed = int(env_seed, 0)
        except ValueError:
            parser.error(f"QBC_SEED must be an integer, got {env_seed!r}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"qbc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (QbcError, ValueError) as exc:
        print(f"qbc: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
