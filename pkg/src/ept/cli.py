"""Command-line front door: ``ept <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .accounting import count_params
from .checkpoint import export_merged, load_checkpoint, save_checkpoint, save_merged
from .config import Config, load_config, toy_config
from .errors import (ContractError, IntegrityError, ManifestError, ParameterError, ShapeError, TrainingError)
from .router import report_to_csv, routing_report
from .tasks import embedding_export, embeddings_to_csv, pca_to_csv
from .train import ABLATION_TOGGLES, evaluate, gradcheck_suite, run_ablation, train_loop

GRADCHECK_LIMIT = 1e-4
VALIDATION_ERRORS = (ParameterError, ShapeError, ContractError)


class _UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _config(path, seed=None) -> Config:
    cfg = load_config(path) if path else toy_config()
    return cfg.replace(seed=seed) if seed is not None else cfg


def _checkpoint_dir(path) -> Path:
    # accept either a checkpoint directory or a ``train --out`` directory
    p = Path(path)
    if not (p / "manifest.json").exists() and (p / "checkpoint" / "manifest.json").exists():
        return p / "checkpoint"
    return p


# ---------------------------------------------------------------- commands


def cmd_params(args) -> int:
    scales = args.scales
    n = args.experts if args.experts is not None else len(scales)
    b = count_params(args.d, args.r, n, scales, args.dsub, n_tasks=args.tasks)
    print(json.dumps(b.to_dict(), indent=2) if args.json else b.table())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else None
    res = gradcheck_suite(cfg, seed=args.seed)
    if args.verbose:
        for name, err in sorted(res["per_tensor"].items()):
            print(f"{name:<32}{err:.3e}")
    print(f"max_rel_err {res['max_rel_err']:.3e}")
    return 0 if res["max_rel_err"] < GRADCHECK_LIMIT else 1


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.resume:
        state = load_checkpoint(_checkpoint_dir(args.resume))
        cfg = state.config
    else:
        cfg = _config(args.config, args.seed)
        state = None
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())

    def progress(s):
        if args.save_every and s.step % args.save_every == 0 and s.step < s.total_steps:
            save_checkpoint(s, out / f"step_{s.step:06d}")
        if not args.quiet and s.log and "l_total" in s.log[-1] and s.step % 10 == 0:
            rec = s.log[-1]
            print(f"step {rec['step'] + 1:>6}  lr {rec['lr']:.2e}  loss {rec['l_total']:.4f}", file=sys.stderr)

    state = train_loop(cfg, state=state, until=args.until, progress=progress)
    save_checkpoint(state, out / "checkpoint")
    (out / "metrics.jsonl").write_text(state.log_lines())
    (out / "routing.csv").write_text(report_to_csv(routing_report(state.routing_totals())))
    print(f"trained {state.step} steps; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(_checkpoint_dir(args.checkpoint))
    acc = evaluate(state.model, state.datasets)
    print(f"{'task':<6}{'family':<8}{'rank':<6}{'accuracy':>10}")
    for t, a in acc.items():
        spec = state.config.tasks[t]
        print(f"{t:<6}{spec.family:<8}{spec.rank:<6}{a:>10.4f}")
    print(f"{'mean':<20}{float(np.mean(list(acc.values()))):>10.4f}")
    return 0


def _emit(text: str, path):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    state = load_checkpoint(_checkpoint_dir(args.checkpoint))
    if args.what == "routing":
        if args.layer:
            if args.layer not in state.stats:
                raise _UsageError(f"unknown layer {args.layer!r}; have {sorted(state.stats)}")
            stats = state.stats[args.layer]
        else:
            stats = state.routing_totals()
        _emit(report_to_csv(routing_report(stats)), args.out)
        return 0
    raw, pca = embedding_export(state.model.table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "embeddings.csv").write_text(embeddings_to_csv(raw))
        if pca is not None:
            (out / "pca.csv").write_text(pca_to_csv(pca))
    else:
        sys.stdout.write(embeddings_to_csv(raw))
        if pca is not None:
            sys.stdout.write("\n" + pca_to_csv(pca))
    if pca is None:
        print("fewer than 3 tasks: PCA projection skipped", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    base = _config(args.config, args.seed)
    rows = run_ablation(base, args.toggles)
    if not args.with_logs:
        for r in rows:
            r.pop("log")
    text = json.dumps(rows, indent=2)
    _emit(text + "\n", args.out)
    return 0


def cmd_merge(args) -> int:
    state = load_checkpoint(_checkpoint_dir(args.checkpoint))
    if args.policy == "fixed" and args.gates is None:
        raise _UsageError("--policy fixed requires --gates")
    merged = export_merged(state, args.policy, args.gates)
    save_merged(merged, args.out)
    print(f"wrote merged checkpoint ({len(merged['dense'])} dense tensors) to {args.out}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ept", description="Multi-scale deconvolution mixture-of-experts adapters.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("params", help="exact trainable-parameter breakdown for one layer")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--experts", type=int)
    s.add_argument("--scales", type=_int_list, required=True)
    s.add_argument("--dsub", type=int, required=True)
    s.add_argument("--tasks", type=int, default=0, help="also report a task-embedding addendum")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train", help="train and write checkpoint, metrics.jsonl, routing.csv")
    s.add_argument("--config", help="JSON config (default: desk-scale preset)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", help="continue from a checkpoint directory")
    s.add_argument("--until", type=int, help="stop after this many total steps")
    s.add_argument("--save-every", type=int, default=0)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-task held-out accuracy")
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="routing or task-embedding reports")
    s.add_argument("what", choices=("routing", "embeddings"))
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--layer", help="routing: one adapted layer instead of the sum over layers")
    s.add_argument("--out", help="routing: CSV file; embeddings: directory")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("ablate", help="train with components switched off")
    s.add_argument("--config")
    s.add_argument("--toggles", type=lambda t: tuple(v for v in t.split(",") if v), default=ABLATION_TOGGLES)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--with-logs", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("merge", help="fold adapters into dense weights")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--policy", choices=("per_task_mean", "fixed"), default="per_task_mean")
    s.add_argument("--gates", type=_float_list)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_merge)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (_UsageError, *VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrityError, ManifestError, TrainingError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
