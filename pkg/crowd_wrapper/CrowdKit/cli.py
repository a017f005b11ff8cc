# -*- coding: utf-8 -*-
"""This module houses the ``crowd-kit`` command line.

Subcommands: convert, train, infer, evaluate, cross-eval, ablate and plot.
Every subcommand accepts ``--config``, ``--set key.path=value``,
``--out-dir``, ``--seed`` and ``--log-level``. Outputs go under the output
directory together with ``run.json`` (command, config hash, seed, version)
and the merged ``config.yaml``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.

"""

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from CrowdKit import __version__
from CrowdKit.config import load_config, parse_scalar
from CrowdKit.converters import CONVERTERS, convert
from CrowdKit.datasets import ingest
from CrowdKit.encoders import load_encoders, make_encoders
from CrowdKit.errors import ConfigError, CrowdKitError, OutputLocked
from CrowdKit.experiments import ABLATION_KINDS, AblationContext, run_ablation, run_cross_eval, run_eval
from CrowdKit.geometry import read_image_ref
from CrowdKit.inference import predict
from CrowdKit.plotting import plot_report
from CrowdKit.training import Checkpoint, pyramids_from_images, train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value, e.g. train.epochs=10 (repeatable)",
    )
    common.add_argument("--out-dir", help="output directory, overrides out_dir")
    common.add_argument("--seed", type=int, help="run seed, overrides seed")
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity, by default INFO",
    )
    return common


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="crowd-kit", description="Unsupervised crowd counting with ranking prompts.")
    parser.add_argument("--version", action="version", version="%(prog)s {}".format(__version__))
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("convert", parents=[common], help="convert an upstream dataset into a manifest")
    sub.add_argument("dataset", choices=sorted(CONVERTERS))
    sub.add_argument("root", help="dataset directory as downloaded")
    sub.add_argument("manifest", help="manifest to write")

    commands.add_parser("train", parents=[common], help="fine-tune the image encoder")

    sub = commands.add_parser("infer", parents=[common], help="count people in images")
    sub.add_argument("target", help="an image or a directory of images")
    sub.add_argument("-p", "--grid", type=int, help="grid size P, overrides inference.p")
    sub.add_argument("--checkpoint", help="fine-tuned checkpoint directory")

    sub = commands.add_parser("evaluate", parents=[common], help="evaluate on the test manifest")
    sub.add_argument("--checkpoint", help="fine-tuned checkpoint directory")

    sub = commands.add_parser("cross-eval", parents=[common], help="evaluate a model trained on another dataset")
    sub.add_argument("--checkpoint", help="fine-tuned checkpoint directory")

    sub = commands.add_parser("ablate", parents=[common], help="sweep one design choice")
    sub.add_argument("kind", nargs="?", choices=ABLATION_KINDS, help="by default ablation.kind")
    sub.add_argument("settings", nargs="*", help="settings as YAML values, by default ablation.settings")
    sub.add_argument("--checkpoint", help="checkpoint for the patch_number and stages kinds")

    sub = commands.add_parser("plot", parents=[common], help="draw charts and overlays from reports")
    sub.add_argument("reports", nargs="*", help="series.json or report.json files")
    sub.add_argument("-k", type=int, default=5, help="overlays for the k worst images, by default 5")

    return parser


def configure_logging(level):
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)


def _progress(level):
    return sys.stderr.isatty() and getattr(logging, level) <= logging.INFO


@contextlib.contextmanager
def output_lock(out_dir):
    """Hold ``out_dir/.lock`` for the duration of a command."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked("{} is in use by another run (remove {} if stale)".format(out_dir, lock)) from None

    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        lock.unlink()


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def _write_run_files(out_dir, command, cfg):
    _write_json(
        out_dir / "run.json",
        {"command": command, "config_hash": cfg.config_hash(), "seed": cfg.seed, "version": __version__},
    )
    with open(out_dir / "config.yaml", "w", encoding="utf-8") as f:
        f.write(cfg.to_yaml())


def _manifest(path, key):
    if path is None:
        raise ConfigError("data.{} is not set".format(key))
    return ingest(path)


def _classes(cfg):
    return tuple(cfg.prompts.coarse_classes), tuple(cfg.prompts.fine_classes)


def _load_bundle(cfg, checkpoint_dir):
    checkpoint = None
    if checkpoint_dir is not None:
        checkpoint = Checkpoint.load(checkpoint_dir)
        if checkpoint.manifest.get("backend") != cfg.encoder.backend:
            logger.warning(
                "Checkpoint backend %s differs from encoder.backend %s",
                checkpoint.manifest.get("backend"),
                cfg.encoder.backend,
            )
    return load_encoders(cfg.encoder, checkpoint, *_classes(cfg)), checkpoint


def _write_predictions(out_dir, predictions):
    _write_jsonl(out_dir / "predictions.jsonl", [p.to_record() for p in predictions])
    _write_jsonl(
        out_dir / "timings.jsonl",
        [{"image": p.image.path, "timing": p.timing, "fps": p.fps} for p in predictions],
    )


def _write_report(out_dir, report):
    _write_json(out_dir / "report.json", report.to_dict())
    _write_json(out_dir / "throughput.json", {"throughput_fps": report.throughput_fps})
    _write_predictions(out_dir, report.predictions)


def cmd_convert(args, cfg, out_dir):
    path = convert(args.dataset, args.root, args.manifest)
    logger.info("Manifest written to %s", path)
    return EXIT_OK


def cmd_train(args, cfg, out_dir):
    manifest = _manifest(cfg.data.train_manifest, "train_manifest")
    train_cfg = cfg.train_config()

    image_enc, text_enc = make_encoders(cfg.encoder, *_classes(cfg))
    pyramids = pyramids_from_images(manifest.image_refs("train"), train_cfg)

    log_path = out_dir / "train_log.jsonl"
    log_path.unlink(missing_ok=True)

    checkpoint = train(
        pyramids,
        image_enc,
        text_enc,
        train_cfg,
        log_path=log_path,
        dataset=manifest.name,
        progress=_progress(args.log_level),
    )
    checkpoint.save(out_dir / "checkpoint")

    return EXIT_OK


def _collect_images(target):
    target = Path(target)
    if target.is_dir():
        return sorted(p for p in target.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if target.exists():
        return [target]
    raise FileNotFoundError("image or directory not found: {}".format(target))


def cmd_infer(args, cfg, out_dir):
    paths = _collect_images(args.target)
    bundle, _ = _load_bundle(cfg, args.checkpoint or cfg.checkpoint)
    infer_cfg = cfg.inference_config(p=args.grid)

    predictions, failures = [], 0
    for path in paths:
        try:
            image = read_image_ref(path)
            predictions.append(predict(image, bundle.original, bundle.finetuned, bundle.text, infer_cfg))
        except CrowdKitError as err:
            failures += 1
            logger.error("Failed on %s: %s", path, err)

    _write_predictions(out_dir, predictions)
    logger.info("Counted %d image(s), %d failure(s)", len(predictions), failures)

    return EXIT_FAILURE if failures else EXIT_OK


def cmd_evaluate(args, cfg, out_dir):
    manifest = _manifest(cfg.data.test_manifest, "test_manifest")
    bundle, _ = _load_bundle(cfg, args.checkpoint or cfg.checkpoint)

    report = run_eval(
        manifest,
        bundle,
        cfg.inference_config(manifest),
        split=cfg.data.split,
        use_policy=False,
        n_threads=cfg.inference.n_threads,
        progress=_progress(args.log_level),
    )
    _write_report(out_dir, report)

    return EXIT_OK


def cmd_cross_eval(args, cfg, out_dir):
    test_manifest = _manifest(cfg.data.test_manifest, "test_manifest")
    bundle, checkpoint = _load_bundle(cfg, args.checkpoint or cfg.checkpoint)

    if cfg.data.train_manifest is not None:
        train_side = ingest(cfg.data.train_manifest)
    elif checkpoint is not None and checkpoint.dataset:
        train_side = checkpoint.dataset
    else:
        raise ConfigError("cross-eval needs data.train_manifest or a checkpoint naming its dataset")

    report = run_cross_eval(
        train_side,
        test_manifest,
        bundle,
        cfg.inference_config(test_manifest),
        checkpoint=checkpoint,
        split=cfg.data.split,
        use_policy=False,
        n_threads=cfg.inference.n_threads,
        progress=_progress(args.log_level),
    )
    _write_report(out_dir, report)

    return EXIT_OK


def cmd_ablate(args, cfg, out_dir):
    kind = args.kind or cfg.ablation.kind
    if args.settings:
        settings = [parse_scalar(s) for s in args.settings]
    elif args.kind is None or args.kind == cfg.ablation.kind:
        settings = cfg.ablation.settings
    else:
        settings = None

    test_manifest = _manifest(cfg.data.test_manifest, "test_manifest")
    train_manifest = ingest(cfg.data.train_manifest) if cfg.data.train_manifest else None
    extra_manifest = ingest(cfg.data.extra_manifest) if cfg.data.extra_manifest else None

    encoders = None
    if kind in ("patch_number", "stages") and (args.checkpoint or cfg.checkpoint):
        encoders, _ = _load_bundle(cfg, args.checkpoint or cfg.checkpoint)

    ctx = AblationContext(
        test_manifest=test_manifest,
        encoder_cfg=cfg.encoder,
        train_cfg=cfg.train_config(),
        infer_cfg=cfg.inference_config(test_manifest),
        train_manifest=train_manifest,
        extra_manifest=extra_manifest,
        encoders=encoders,
        seed=cfg.seed,
        n_threads=cfg.inference.n_threads,
        progress=_progress(args.log_level),
    )
    result = run_ablation(kind, settings, ctx)

    result.table.to_csv(out_dir / "ablation.csv", index=False)
    result.table.to_json(out_dir / "ablation.json", orient="records", indent=2)
    _write_json(out_dir / "series.json", result.series())

    return EXIT_OK


def cmd_plot(args, cfg, out_dir):
    if not args.reports:
        raise UsageError("plot needs at least one report")

    plots = out_dir / "plots"
    written = []
    for path in args.reports:
        with open(path, encoding="utf-8") as f:
            report = json.load(f)
        written.extend(plot_report(report, plots, k=args.k))

    logger.info("Wrote %d plot(s) to %s", len(written), plots)

    return EXIT_OK


COMMANDS = {
    "convert": cmd_convert,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "cross-eval": cmd_cross_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def _error(message):
    print("crowd-kit: error: {}".format(message), file=sys.stderr)


def main(argv=None):
    """Run the command line and return the exit status."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append("seed={}".format(args.seed))
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as err:
        _error(err)
        return EXIT_USAGE

    if args.out_dir is not None:
        cfg.out_dir = args.out_dir

    out_dir = Path(cfg.out_dir)

    try:
        with output_lock(out_dir):
            _write_run_files(out_dir, args.command, cfg)
            return COMMANDS[args.command](args, cfg, out_dir)
    except (ConfigError, UsageError, FileNotFoundError) as err:
        _error(err)
        return EXIT_USAGE
    except (CrowdKitError, ValueError, OSError, RuntimeError) as err:
        logger.debug("Command failed", exc_info=True)
        _error(err)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
