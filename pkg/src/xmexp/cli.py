"""Command line: ``xmexp train|eval|novel|synth|gradcheck``.

Exit codes: 0 ok, 1 check failure, 2 config error, 3 IO error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, dump_config, load_config
from .errors import ConfigurationError, InputError, UsageError

log = logging.getLogger("xmexp")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.bin"
TRAIN_CSV = "train_steps.csv"
EVAL_CSV = "eval.csv"
NOVEL_CSV = "novel_curve.csv"


class IOFailure(Exception):
    pass


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["output.dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def load_recordings(cfg: RunConfig):
    from .data import generate_synthetic, ingest_dataset
    if cfg["data.synthetic"]:
        return generate_synthetic(cfg.synthetic(), cfg["seed"])
    return ingest_dataset(cfg["data.manifest"], cfg["channel.image_size"], cfg["audio.sample_rate"])


def load_pairs(cfg: RunConfig):
    from .data import to_pairs
    return to_pairs(load_recordings(cfg), sample_rate=cfg["audio.sample_rate"],
                    hop_ms=cfg["audio.hop_ms"], window_ms=cfg["audio.window_ms"])


def known_pairs(cfg: RunConfig, pairs):
    """Everything except the identity reserved for the novel stream."""
    novel = cfg["novel.identity"]
    return [p for p in pairs if p.identity != novel] if novel else list(pairs)


def checkpoint_path(cfg: RunConfig, arg: str | None) -> Path:
    return Path(arg) if arg else Path(cfg["output.dir"]) / CHECKPOINT_NAME


def load_model(cfg: RunConfig, path: Path):
    from .trainer import ExpectationModel
    if not path.exists():
        raise IOFailure(f"checkpoint not found: {path}")
    return ExpectationModel.load(path, cfg.model(), cfg["seed"])


def write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror}") from exc


def cmd_train(cfg: RunConfig, args) -> int:
    from .trainer import step_reports_csv, train_strategy1
    pairs = known_pairs(cfg, load_pairs(cfg))
    out = output_dir(cfg)
    model, reports, train, _ = train_strategy1(pairs, cfg.model(), cfg["seed"],
                                               cfg["train.split"], cfg["train.epochs"])
    meta = {"identities": sorted({p.identity for p in train}), "split": cfg["train.split"]}
    ckpt = checkpoint_path(cfg, args.checkpoint)
    try:
        model.save(ckpt, meta)
    except OSError as exc:
        raise IOFailure(f"cannot write {ckpt}: {exc.strerror}") from exc
    write_text(out / TRAIN_CSV, step_reports_csv(reports))
    write_text(out / "config.txt", dump_config(cfg))
    log.info("trained %d steps -> %s", len(reports), ckpt)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .trainer import aggregate, eval_report_csv, evaluate, strategy1_split
    pairs = known_pairs(cfg, load_pairs(cfg))
    out = output_dir(cfg)
    model, _ = load_model(cfg, checkpoint_path(cfg, args.checkpoint))
    train, test = strategy1_split(pairs, cfg["train.split"], cfg["seed"])
    report = aggregate([evaluate(model, train, test)])
    text = eval_report_csv(report)
    write_text(out / EVAL_CSV, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_novel(cfg: RunConfig, args) -> int:
    from .trainer import run_novel_stream, step_reports_csv
    ident = cfg["novel.identity"]
    if not ident:
        raise ConfigurationError("novel.identity must name the identity to stream")
    pairs = load_pairs(cfg)
    out = output_dir(cfg)
    model, meta = load_model(cfg, checkpoint_path(cfg, args.checkpoint))
    known = meta.get("identities", [])
    if ident in known:
        raise ConfigurationError(f"novel.identity {ident!r} was part of the checkpoint's training set")
    stream = [p for p in pairs if p.identity == ident][:cfg["novel.steps"]]
    if len(stream) < cfg["novel.steps"]:
        raise ConfigurationError(
            f"novel.identity {ident!r} has {len(stream)} samples, novel.steps needs {cfg['novel.steps']}")
    reports = run_novel_stream(model, stream, known)
    text = step_reports_csv(reports)
    write_text(out / NOVEL_CSV, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    from .data import generate_synthetic, write_dataset
    recs = generate_synthetic(cfg.synthetic(), cfg["seed"])
    out = Path(cfg["output.dir"])
    try:
        manifest = write_dataset(recs, out)
    except OSError as exc:
        raise IOFailure(f"cannot write dataset to {out}: {exc.strerror}") from exc
    log.info("wrote %d pairs, manifest %s", len(recs), manifest)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .checks import run_gradcheck_suite
    report = run_gradcheck_suite(seed=cfg["seed"])
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"gradcheck passed: {len(report.errors)} blocks")
        return EXIT_OK
    print(f"gradcheck FAILED: {', '.join(report.failures)}")
    return EXIT_CHECK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "novel": cmd_novel,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmexp", description="Crossmodal expectation learning experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat 'section.key = value' config file")
    parser.add_argument("--seed", type=int, help="run seed (overrides config and env)")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--checkpoint", help="checkpoint path (default <out>/checkpoint.bin)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError(f"--seed must be a non-negative integer, got {args.seed}")
            cfg.values["seed"] = args.seed
        if args.out is not None:
            cfg.values["output.dir"] = args.out
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except (ConfigurationError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IOFailure, InputError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
