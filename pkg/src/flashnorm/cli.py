"""Command-line front end: ``flashnorm {gen,fuse,verify,count,simulate}``.

Exit codes: 0 success, 1 a verification (or strict pass) failure, 2 usage or
I/O problems. Reports are JSON, written to ``--report`` or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from flashnorm import model as model_mod
from flashnorm.passes import PassError, run_pipeline
from flashnorm.timing import Schedule, TimingParams, simulate
from flashnorm.verify import INPUT_MODES, compare, count_ops

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(report: dict, dest: str | None) -> None:
    text = json.dumps(report, indent=2) + "\n"
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)


def _load(path: str) -> model_mod.Model:
    try:
        return model_mod.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _save(model: model_mod.Model, path: str) -> None:
    try:
        model_mod.save(model, path)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def cmd_gen(args) -> int:
    if args.kind.startswith("ffn") and not args.f:
        raise UsageError(f"--kind {args.kind} requires --f")
    if args.kind.startswith("attn") and not (args.h and args.heads):
        raise UsageError(f"--kind {args.kind} requires --h and --heads")
    try:
        m = model_mod.generate(
            args.kind, args.n, f=args.f, h=args.h, heads=args.heads,
            seed=args.seed, eps=args.eps, norm=args.norm, dtype=args.dtype,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _save(m, args.output)
    counts = count_ops(m)
    _emit(
        {
            "model": args.output,
            "kind": args.kind,
            "seed": args.seed,
            "blocks": len(m.blocks),
            "total_params": counts.total_params,
            "norm_param_tensors": counts.norm_param_tensors,
        },
        args.report,
    )
    return EXIT_OK


def cmd_fuse(args) -> int:
    m = _load(args.input)
    try:
        fused, reports = run_pipeline(m, args.passes, strict=args.strict, fold_sqrt_h=args.fold_sqrt_h)
    except PassError as exc:
        print(f"flashnorm fuse: {exc}", file=sys.stderr)
        return EXIT_FAIL if args.strict else EXIT_USAGE
    _save(fused, args.output)
    before, after = count_ops(m), count_ops(fused)
    _emit(
        {
            "input": args.input,
            "output": args.output,
            "passes": [r.to_dict() for r in reports],
            "mults_per_token": {"before": before.mults_per_token, "after": after.mults_per_token},
            "norm_param_tensors": {"before": before.norm_param_tensors, "after": after.norm_param_tensors},
        },
        args.report,
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    a, b = _load(args.a), _load(args.b)
    try:
        rep = compare(a, b, trials=args.trials, tol=args.tol, seed=args.seed, mode=args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(rep.to_dict(), args.report)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_count(args) -> int:
    _emit(count_ops(_load(args.input)).to_dict(), args.report)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        trace = simulate(TimingParams(args.n, args.m, args.schedule))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.trace:
        print(trace.render(), file=sys.stderr)
    _emit(trace.to_dict(), args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flashnorm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random model")
    p.add_argument("--kind", required=True, choices=model_mod.KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=int, help="FFN hidden size, or output size for norm-linear")
    p.add_argument("--h", type=int, help="attention head dimension (even)")
    p.add_argument("--heads", type=int, help="number of attention heads")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--norm", choices=["rmsnorm", "layernorm", "dyt"], default="rmsnorm",
                   help="normalization kind for --kind norm-linear")
    p.add_argument("--dtype", choices=["f64", "f32"], default="f64")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fuse", help="apply rewrite passes")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--pass", dest="passes", default="all", help='"all" or a comma-separated list')
    p.add_argument("--strict", action="store_true", help="fail instead of skipping inapplicable passes")
    p.add_argument("--fold-sqrt-h", action=argparse.BooleanOptionalAction, default=True,
                   help="let fuse_rope_scaling also absorb 1/sqrt(h)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("verify", help="compare two models on random inputs")
    p.add_argument("-a", required=True)
    p.add_argument("-b", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=INPUT_MODES, default="uniform")
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("count", help="count per-token operations and parameters")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("simulate", help="vector/matrix unit timing model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--schedule", choices=[s.value for s in Schedule], default="sequential")
    p.add_argument("--trace", action="store_true", help="print the cycle diagram to stderr")
    p.add_argument("--report")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"flashnorm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
