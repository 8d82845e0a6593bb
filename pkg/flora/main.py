"""
flora command line
==================

    flora gen|train|eval|sweep|inspect [--config run.json] [--set section.key=value]...

Exit codes: 0 success, 1 usage/config, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from flora import __version__
from flora.checkpoint import MAGIC as CKPT_MAGIC
from flora.checkpoint import read_checkpoint_header
from flora.config import RunConfig
from flora.cross_modal_vae import skeleton_latents
from flora.errors import BadMagicError, ConfigError, FloraError, MissingInputError
from flora.evaluation import render_table
from flora.feature_pack import MAGIC as FPACK_MAGIC
from flora.feature_pack import FeaturePack, PackKind, decode_fpack, write_fpack
from flora.pipeline import (
    INFERENCE_AXES,
    evaluate_models,
    evaluation_items,
    load_inputs,
    load_models,
    report_path,
    save_models,
    sweep_axis,
    train_models,
)
from flora.splits import write_split
from flora.synthetic import generate_synthetic, nearest_centroid_accuracy

logger = logging.getLogger("flora.cli")

SWEEP_COLUMNS = ["axis", "value", "protocol", "classifier", "acc", "S", "U", "H"]


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


# ============= COMMANDS =============

def cmd_gen(cfg: RunConfig, args) -> int:
    skeleton, semantic, split = generate_synthetic(cfg.synthetic)
    paths = cfg.paths
    write_fpack(skeleton, paths.skeleton_pack)
    write_fpack(semantic, paths.semantic_pack)
    write_split(split, paths.split)

    accuracy = nearest_centroid_accuracy(skeleton, split.all_class_ids)
    manifest = {
        "flora_version": __version__,
        "skeleton_pack": paths.skeleton_pack,
        "semantic_pack": paths.semantic_pack,
        "split": paths.split,
        "n_items": skeleton.n_items,
        "d_s": skeleton.dim,
        "M_a": semantic.n_tokens,
        "d_a": semantic.dim,
        "class_names": semantic.class_names,
        "nearest_centroid_accuracy": accuracy,
        "config": cfg.echo(),
    }
    manifest_path = Path(paths.skeleton_pack).parent / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    logger.info(f"✅ Wrote {paths.skeleton_pack}, {paths.semantic_pack}, {paths.split}, {manifest_path}")
    print(f"nearest-centroid accuracy: {100 * accuracy:.1f}%")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    inputs = load_inputs(cfg)
    models = train_models(cfg, inputs)
    written = save_models(cfg, models)
    for label, path in written.items():
        print(f"{label}: {path}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    inputs = load_inputs(cfg)
    models = load_models(cfg, inputs)
    reports = []
    for protocol in args.protocol:
        report = evaluate_models(cfg, models, inputs, protocol, args.classifier)
        path = report.write(report_path(cfg, protocol, args.classifier))
        logger.info(f"💾 Report {path}")
        reports.append(report)
    print(render_table(reports))
    return 0


def parse_values(raw: Sequence[str]) -> List:
    values = []
    for chunk in raw:
        for item in chunk.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                values.append(json.loads(item))
            except json.JSONDecodeError:
                raise ConfigError(f"sweep value '{item}' is not a number or JSON literal")
    if not values:
        raise ConfigError("sweep needs at least one value")
    return values


def cmd_sweep(cfg: RunConfig, args) -> int:
    from flora.tasks import sweep_inference, sweep_point

    axis = sweep_axis(args.axis)
    values = parse_values(args.values)
    protocol = args.protocol or ("gzsl" if axis in ("gamma", "alpha") else "zsl")
    output = Path(args.output or cfg.sweep.output)

    logger.info(f"🚀 Sweep {axis} over {values} ({protocol}, {args.classifier})")
    if axis in INFERENCE_AXES:
        rows = sweep_inference.delay(cfg.echo(), axis, values, protocol, args.classifier).get()
    else:
        pending = [sweep_point.delay(cfg.echo(), axis, value, protocol, args.classifier) for value in values]
        rows = [result.get() for result in pending]

    output.parent.mkdir(parents=True, exist_ok=True)
    with output.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in SWEEP_COLUMNS})

    logger.info(f"✅ Sweep written: {output} ({len(rows)} rows)")
    print(output)
    return 0


def describe(path: Path) -> dict:
    """Header fields of a FPACK or FLORACKP file"""
    if not path.exists():
        raise MissingInputError(f"file not found: {path}")
    blob = path.read_bytes()
    if blob[:len(FPACK_MAGIC)] == FPACK_MAGIC:
        pack = decode_fpack(blob)
        return {
            "magic": FPACK_MAGIC.decode("ascii"),
            "kind": pack.kind.name.lower(),
            "n_items": pack.n_items,
            "M": pack.n_tokens,
            "d": pack.dim,
            "n_labels": int(np.unique(pack.labels).size),
            "bytes": len(blob),
        }
    if blob[:len(CKPT_MAGIC)] == CKPT_MAGIC:
        return read_checkpoint_header(path)
    raise BadMagicError(f"{path}: neither a feature pack nor a checkpoint (magic {bytes(blob[:8])!r})")


def cmd_inspect(cfg: RunConfig, args) -> int:
    path = Path(args.path)
    header = describe(path)
    print(json.dumps(header, indent=2))

    if args.export_latents:
        inputs = load_inputs(cfg)
        models = load_models(cfg, inputs)
        items = evaluation_items(cfg, inputs, "gzsl")
        latents = skeleton_latents(models.pair, inputs.skeleton.features[items], models.attuned.n_tokens)
        pack = FeaturePack(PackKind.SKELETON, latents, inputs.skeleton.labels[items])
        out = write_fpack(pack, args.export_latents)
        logger.info(f"✅ Exported {pack.n_items} mean-mode latents ({pack.n_tokens}×{pack.dim}) to {out}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set attune.k=3")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true")
    noise.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="flora", description="Zero-shot skeleton action recognition by noise-free flow matching")
    parser.add_argument("--version", action="version", version=f"flora {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen", parents=[common], help="generate the synthetic benchmark")
    sub.add_parser("train", parents=[common], help="train the VAE pair then the flow")

    p = sub.add_parser("eval", parents=[common], help="evaluate trained checkpoints")
    p.add_argument("--protocol", choices=["zsl", "gzsl"], action="append",
                   help="repeatable; default zsl")
    p.add_argument("--classifier", choices=["flow", "similarity", "linear"], default="flow")

    p = sub.add_parser("sweep", parents=[common], help="retrain/evaluate across one axis")
    p.add_argument("--axis", required=True,
                   help="t | k | tau | gamma | alpha | lambda_align | lambda_flow | tokens | train_fraction")
    p.add_argument("--values", required=True, nargs="+", help="comma or space separated")
    p.add_argument("--protocol", choices=["zsl", "gzsl"])
    p.add_argument("--classifier", choices=["flow", "similarity", "linear"], default="flow")
    p.add_argument("--output", help="CSV path (default sweep.output)")

    p = sub.add_parser("inspect", parents=[common], help="dump a pack/checkpoint header")
    p.add_argument("path")
    p.add_argument("--export-latents", metavar="OUT.fpack",
                   help="write mean-mode skeleton latents of every test item")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not args.protocol:
        args.protocol = ["zsl"]

    try:
        cfg = RunConfig.load(args.config, args.overrides)
        logger.debug(f"config: {json.dumps(cfg.echo(), sort_keys=True)}")
        return COMMANDS[args.command](cfg, args)
    except FloraError as e:
        logger.error(f"❌ {e.code}: {e}")
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return e.exit_code


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
