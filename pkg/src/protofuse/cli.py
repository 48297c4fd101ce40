"""Command-line entry point: ``protofuse <subcommand> ...``.

Exit codes: 0 success, 2 configuration or usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from .config import FillStrategy, TrainConfig, dump_config, load_config
from .data_model import MissingMode, MissingnessSpec, generate_synthetic, load_cohort, write_cohort
from .errors import ConfigError, LoadError, ProtoFuseError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("protofuse")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    g = p.add_argument_group("training configuration")
    for f in fields(TrainConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="VALUE", default=None)
    g.add_argument("--lr", dest="cfg_learning_rate", metavar="VALUE", default=None, help="alias of --learning-rate")
    g.add_argument("-K", dest="cfg_top_k", metavar="VALUE", default=None, help="alias of --top-k")


def _config(args) -> TrainConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    try:
        return load_config(args.config, overrides)
    except LoadError as exc:
        raise ConfigError(str(exc)) from exc


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _words(text: str) -> List[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protofuse", description="Multimodal prototype fusion of histology and genomics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort on disk")
    p.add_argument("--patients", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--d-embed", type=int, default=64)
    p.add_argument("--genes", type=int, default=120)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    p.add_argument("--cohort", required=True, help="cohort manifest.json")
    p.add_argument("--val-cohort", help="optional validation manifest (enables early stopping)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally under simulated missingness")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--missing-mode", choices=[m.value for m in MissingMode])
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--strategy", choices=[s.value for s in FillStrategy])
    p.add_argument("--seed", type=int, default=0, help="missingness selection seed")
    p.add_argument("--out", help="results table (default: stdout)")

    p = sub.add_parser("sweep", help="cross-validated missingness sweep")
    p.add_argument("--cohort", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--rates", default="0,0.2,0.5,0.8,1.0")
    p.add_argument("--modes", default="patient_wise,feature_wise")
    p.add_argument("--strategies", default="sgi,mean_fill")
    p.add_argument("--out", help="results table (default: stdout)")
    _add_config_flags(p)

    p = sub.add_parser("explain", help="export interpretability files for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradient paths")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_synth(args) -> int:
    cohort = generate_synthetic(args.patients, args.d_embed, args.genes, args.seed)
    path = write_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} patients to {path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .training import format_log, train

    cfg = _config(args)
    cohort = load_cohort(args.cohort)
    val = load_cohort(args.val_cohort) if args.val_cohort else None
    state, rows = train(cohort, cfg, val)
    out = save_checkpoint(state, args.out)
    (out / "train_log.tsv").write_text(format_log(rows))
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"trained {cfg.epochs} epochs, checkpoint in {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate, format_results

    spec = None
    if args.missing_mode:
        spec = MissingnessSpec(MissingMode(args.missing_mode), args.missing_rate, args.seed)
    elif args.missing_rate:
        raise ConfigError("--missing-rate needs --missing-mode")
    state = load_checkpoint(args.checkpoint)
    cohort = load_cohort(args.cohort)
    report = evaluate(state, cohort, spec, FillStrategy(args.strategy) if args.strategy else None)
    _emit(format_results([report]), args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .evaluation import format_results, missingness_sweep

    cfg = _config(args)
    cohort = load_cohort(args.cohort)
    try:
        modes = [MissingMode(m) for m in _words(args.modes)]
        strategies = [FillStrategy(s) for s in _words(args.strategies)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = missingness_sweep(cohort, cfg, _floats(args.rates), modes, strategies, k=args.folds)
    _emit(format_results(rows), args.out)
    return EXIT_OK


def _cmd_explain(args) -> int:
    from .checkpoint import load_checkpoint
    from .explain import export_explain

    state = load_checkpoint(args.checkpoint)
    bundle = export_explain(state, load_cohort(args.cohort), args.out)
    print(f"explained {len(bundle.patient_ids)} patients into {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import main

    return EXIT_OK if main(args.seed) else EXIT_RUNTIME


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "explain": _cmd_explain,
    "gradcheck": _cmd_gradcheck,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProtoFuseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
