"""Command-line entry point.

Commands: synth, pretrain, finetune, reconstruct, eval, gradcheck.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, restore_named
from .config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    finetune_defaults,
    load_config,
)
from .data import load_manifest, load_pair, synth_dataset
from .errors import ConfigError, MCMError
from .gradcheck import TOLERANCE, run_all
from .losses import f1_table_csv, f1_table_text
from .train import Workbench, run_eval, run_finetune, run_pretrain, run_reconstruct

logger = logging.getLogger(__name__)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _resolve_config(args, base: RunConfig) -> RunConfig:
    cfg = load_config(args.config, base) if args.config else base
    apply_overrides(cfg, args.overrides)
    cfg.validate()
    return cfg


def _cmd_synth(args) -> int:
    if args.n < 1:
        raise ConfigError(f"need at least one sample, got n={args.n}")
    manifest = synth_dataset(args.n, args.height, args.width, args.seed, args.out, args.labels)
    print(f"wrote {len(manifest.records)} pairs to {manifest.root}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _resolve_config(args, RunConfig())
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.txt")
    final = run_pretrain(cfg, manifest, Path(cfg.out_dir))
    print(f"pretraining done, final checkpoint {final}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _resolve_config(args, finetune_defaults(RunConfig()))
    if args.modality:
        cfg.modality = args.modality
        cfg.validate()
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.txt")
    val = load_manifest(args.val) if args.val else None
    final = run_finetune(cfg, manifest, ckpt, Path(cfg.out_dir), val)
    print(f"fine-tuning done, checkpoint {final}")
    return 0


def _bench_from_ckpt(ckpt_path: Path) -> Workbench:
    ckpt = load_checkpoint(ckpt_path)
    cfg = config_from_dict(ckpt.config)
    cfg.validate()
    bench = Workbench.fresh(cfg)
    restore_named(ckpt.tensors, bench.params.named_parameters(), strict=False)
    return bench


def _cmd_reconstruct(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    bench = _bench_from_ckpt(ckpt)
    pair = load_pair(args.rgb, args.depth)
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip() != ""]
    except ValueError:
        raise ConfigError(f"cannot parse ratios {args.ratios!r}")
    paths = run_reconstruct(bench, pair, ratios, args.seed, args.out_prefix)
    for p in paths:
        print(p)
    return 0


def _cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    bench = _bench_from_ckpt(ckpt)
    apply_overrides(bench.cfg, args.overrides)
    bench.cfg.validate()
    modality = args.modality or bench.cfg.modality
    manifest = load_manifest(Path(args.data) / "manifest.txt")
    names, scores, macro = run_eval(bench.cfg, bench, manifest, modality)
    print(f1_table_text(names, scores, macro, modality), end="")
    if args.csv:
        Path(args.csv).write_text(f1_table_csv(names, scores, macro, modality), encoding="utf-8")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_all()
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: max rel err {r.err:.3e} (tolerance {TOLERANCE:g})")
        failed += 0 if r.ok else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, required=True, help="number of image pairs")
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", type=int, default=12, help="label column count")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="masked reconstruction pretraining")
    _add_config_args(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="label-head fine-tuning from a checkpoint")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True, help="pretraining checkpoint")
    p.add_argument("--modality", choices=["rgb", "depth", "fusion"])
    p.add_argument("--val", help="optional validation manifest path")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("reconstruct", help="dump reconstructions at given mask ratios")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--ratios", default="0.5,0.75,0.9")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("eval", help="per-label F1 of a fine-tuned checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--modality", choices=["rgb", "depth", "fusion"])
    p.add_argument("--csv", help="also write the table as CSV here")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all ops")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MCMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
