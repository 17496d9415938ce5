"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 check failure.
"""

from __future__ import annotations

import argparse
import sys

from . import config as cfgmod
from . import pipeline
from .errors import InstanceMatchError
from .synth import gen_synth
from .training import grad_check

GRAD_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="instancematch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic scene")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train-adapter", help="train an adapter on templates")
    p.add_argument("--kind", required=True, choices=["weight", "clip"])
    p.add_argument("--templates", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="params container path")

    p = sub.add_parser("refine", help="apply a trained adapter to embeddings")
    p.add_argument("--params", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("match", help="assign instance ids to query proposals")
    p.add_argument("--templates")
    p.add_argument("--queries")
    p.add_argument("--params")
    p.add_argument("--appearance", action="store_true")
    p.add_argument("--config")
    p.add_argument("--manifest", help="run from a saved manifest instead of flags")
    p.add_argument("--out", required=True, help="prediction records path")

    p = sub.add_parser("eval", help="AP report for predictions against gt")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", required=True, choices=["box", "mask"])
    p.add_argument("--out", required=True, help="report path")

    p = sub.add_parser("grad-check", help="verify adapter gradients")
    p.add_argument("--kind", required=True, choices=["weight", "clip"])
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_gen_synth(args) -> int:
    cfg = cfgmod.synth_config(cfgmod.load_config(args.config))
    paths = pipeline.save_scene(args.out, gen_synth(cfg))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_train(args) -> int:
    train_cfg, beta, alpha = cfgmod.train_config(cfgmod.load_config(args.config))
    _, history = pipeline.run_train(
        args.kind, args.templates, train_cfg, args.out, beta=beta, alpha=alpha
    )
    if history.size:
        print(f"epochs: {history.size}  first: {history[0]:.6f}  last: {history[-1]:.6f}")
    print(f"params: {args.out}")
    print(f"loss csv: {args.out}.loss.csv")
    return 0


def _cmd_refine(args) -> int:
    pipeline.run_refine(args.params, args.in_path, args.out)
    print(f"refined: {args.out}")
    return 0


def _cmd_match(args) -> int:
    if args.manifest:
        manifest = cfgmod.load_manifest(args.manifest)
    else:
        if not args.templates or not args.queries:
            raise UsageError("match needs --templates and --queries (or --manifest)")
        raw = cfgmod.load_config(args.config) if args.config else {}
        mcfg = cfgmod.matcher_config(raw)
        use_bonus = mcfg.use_appearance_bonus or args.appearance
        manifest = cfgmod.RunManifest(
            templates=args.templates,
            queries=args.queries,
            params=args.params,
            aggregation=mcfg.aggregation,
            avg_k=mcfg.avg_k,
            assignment=mcfg.assignment,
            delta=mcfg.delta,
            use_appearance_bonus=use_bonus,
        )
        manifest.save(str(args.out) + ".manifest")
    kept = pipeline.run_match(manifest, args.out)
    print(f"kept {len(kept)} labeled proposals -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    result = pipeline.run_eval(args.pred, args.gt, args.mode, args.out)
    print(f"ap: {result.ap:.4f}  ap50: {result.ap50:.4f}  ap75: {result.ap75:.4f}")
    return 0


def _cmd_grad_check(args) -> int:
    err = grad_check(
        args.kind,
        dim=args.dim,
        num_instances=args.instances,
        views=args.views,
        h=args.step,
        seed=args.seed,
    )
    print(f"max relative error: {err:.3e}")
    if err > GRAD_TOL:
        print(f"FAIL: exceeds {GRAD_TOL:.0e}", file=sys.stderr)
        return 3
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train-adapter": _cmd_train,
    "refine": _cmd_refine,
    "match": _cmd_match,
    "eval": _cmd_eval,
    "grad-check": _cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InstanceMatchError, FileNotFoundError, IsADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
