"""

invert.cli
~~~~~~~~~~

The pyinvert command line:

    pyinvert make-generator --out runs/gen --d-z 100 --d-y 10 --seed 1
    pyinvert synth-data --out runs/data --n-per-class 200
    pyinvert train --data runs/data/train.npz --out runs/train --epochs 5
    pyinvert generate --checkpoint runs/train/generator.ckpt --n 200 \\
                      --holdout runs/data/holdout.npz --out runs/targets
    pyinvert recover --checkpoint runs/train/generator.ckpt \\
                     --targets runs/targets/generated.npz \\
                     --alpha 0.01 --beta 0.01 --process 8 --out runs/rec
    pyinvert recover ... --no-reg --out runs/rec-noreg
    pyinvert eval --results runs/rec runs/rec-noreg --out runs/eval

Every command writes into a single run directory holding one manifest.json.
Errors are reported on one line as

    pyinvert: error[<category>]: <message>

with the exit codes listed in docs/formats.md.

"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

import invert
from .constants import EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_MISSING_FILE, EXIT_VERSION_MISMATCH, \
                       EXIT_CONFIG, EXIT_NUMERIC, EXIT_FORMAT, CSV_SCHEMA_VERSION, PROVENANCE_GENERATED, \
                       PROVENANCE_REAL
from .dataset import GlyphConfig, synth_glyphs, read_idx, holdout_split, split_real_generated, generate_targets, \
                     save_dataset, load_dataset, write_preview
from .exceptions import InvertException, InvertShapeError, InvertNumericError, InvertValueError, \
                        InvertConfigError, InvertIOError, CheckpointVersionError
from .generator import GeneratorSpec, build_generator, save_checkpoint, load_checkpoint
from .images import tile, write_image
from .metrics import EvalRecord, write_csv, read_csv, write_svg_curves, summarize, format_table, mean_curve
from .recovery import RecoveryConfig, recover_batch, process_grid, config_digest
from .trainer import DiscriminatorSpec, TrainConfig, train

logger = logging.getLogger("invert")

MANIFEST = "manifest.json"

class CommandLineError(Exception):
    def __init__(self, category, message, code):
        Exception.__init__(self, message)
        self.category = category
        self.code = code


class ArgumentParser(argparse.ArgumentParser):
    """ Reports usage errors on a single machine-parseable line. """

    def error(self, message):
        raise CommandLineError("usage", message, EXIT_USAGE)

#------------------------------------------------------------------------
# Helpers
#------------------------------------------------------------------------

def read_json(path):
    try:
        with open(path, encoding = "utf-8") as fd:
            return json.load(fd)
    except json.JSONDecodeError as e:
        raise InvertConfigError("%s: not valid JSON (%s)" % (path, e))

def merge_config(path, overrides):
    """ JSON file values, overridden by every flag that was given. """
    d = read_json(path) if path else {}
    if not isinstance(d, dict):
        raise InvertConfigError("%s: expected a JSON object" % path)
    d.update({ key : value for key, value in overrides.items() if value is not None })
    return d

class Run(object):
    """ A run directory and its manifest. """

    def __init__(self, args, command):
        self.out = args.out
        os.makedirs(self.out, exist_ok = True)
        self.started = time.time()
        self.manifest = { "command" : command,
                          "argv" : list(args.argv),
                          "version" : invert.__version__,
                          "csv_schema" : CSV_SCHEMA_VERSION,
                          "config_digest" : None,
                          "seeds" : {},
                          "inputs" : {},
                          "outputs" : [] }

    def path(self, name):
        path = os.path.join(self.out, name)
        self.manifest["outputs"].append(name)
        return path

    def finish(self):
        self.manifest["wall_clock_seconds"] = round(time.time() - self.started, 3)
        with open(os.path.join(self.out, MANIFEST), "w", encoding = "utf-8") as fd:
            json.dump(self.manifest, fd, indent = 2, sort_keys = True)
            fd.write("\n")
        logger.info("wrote %s", os.path.join(self.out, MANIFEST))

def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    return read_json(path) if os.path.exists(path) else {}

#------------------------------------------------------------------------
# Commands
#------------------------------------------------------------------------

def cmd_make_generator(args):
    run = Run(args, "make-generator")
    if args.spec:
        spec = GeneratorSpec.from_dict(read_json(args.spec))
        run.manifest["inputs"]["spec"] = args.spec
    else:
        spec = GeneratorSpec.dcgan(args.d_z, args.d_y, (args.channels, args.size, args.size), args.width)
    ckpt = build_generator(spec, args.seed)
    run.manifest["seeds"]["init"] = args.seed
    run.manifest["config_digest"] = config_digest(spec.to_dict())
    save_checkpoint(ckpt, run.path("generator.ckpt"))
    run.finish()

def cmd_synth_data(args):
    run = Run(args, "synth-data")
    if args.idx_images or args.idx_labels:
        if not (args.idx_images and args.idx_labels):
            raise CommandLineError("usage", "--idx-images and --idx-labels go together", EXIT_USAGE)
        images = read_idx(args.idx_images, args.idx_labels, limit = args.limit)
        run.manifest["inputs"].update({ "idx_images" : args.idx_images, "idx_labels" : args.idx_labels })
    else:
        overrides = { "classes" : args.classes, "seed" : args.seed }
        config = GlyphConfig.from_dict(merge_config(args.config, overrides))
        if args.config:
            run.manifest["inputs"]["config"] = args.config
        run.manifest["config_digest"] = config_digest(config.to_dict())
        run.manifest["seeds"]["glyphs"] = config.seed
        images = synth_glyphs(config, args.n_per_class)

    train_set, holdout = holdout_split(images, args.holdout, seed = args.split_seed)
    run.manifest["seeds"]["split"] = args.split_seed
    save_dataset(train_set, run.path("train.npz"))
    save_dataset(holdout, run.path("holdout.npz"))
    suffix = "pgm" if images[0].pixels.shape[0] == 1 else "ppm"
    write_preview(images, run.path("preview.%s" % suffix))
    run.finish()

def cmd_train(args):
    run = Run(args, "train")
    dataset = load_dataset(args.data)
    run.manifest["inputs"]["data"] = args.data
    image_shape = dataset[0].pixels.shape
    d_y = args.d_y or max(image.label for image in dataset) + 1

    if args.gen_spec:
        gen_spec = GeneratorSpec.from_dict(read_json(args.gen_spec))
        run.manifest["inputs"]["gen_spec"] = args.gen_spec
    else:
        gen_spec = GeneratorSpec.dcgan(args.d_z, d_y, image_shape, args.width)
    if args.disc_spec:
        disc_spec = DiscriminatorSpec.from_dict(read_json(args.disc_spec))
        run.manifest["inputs"]["disc_spec"] = args.disc_spec
    else:
        disc_spec = DiscriminatorSpec.dcgan(gen_spec.d_y, gen_spec.image_shape, args.disc_width)

    overrides = { "epochs" : args.epochs, "batch_size" : args.batch_size, "seed" : args.seed }
    config = TrainConfig.from_dict(merge_config(args.config, overrides))
    run.manifest["config_digest"] = config_digest(config.to_dict())
    run.manifest["seeds"]["train"] = config.seed

    ckpt, report = train(gen_spec, disc_spec, dataset, config, out_dir = run.out)
    run.manifest["outputs"] += [ os.path.basename(path) for path in report.checkpoints + report.grids ]
    run.manifest["outputs"] += [ "generator.ckpt", "training.csv" ]
    run.finish()

def cmd_generate(args):
    run = Run(args, "generate")
    ckpt = load_checkpoint(args.checkpoint)
    run.manifest["inputs"]["checkpoint"] = args.checkpoint
    run.manifest["seeds"]["generate"] = args.seed

    if args.holdout:
        holdout = load_dataset(args.holdout)
        run.manifest["inputs"]["holdout"] = args.holdout
        generated, real = split_real_generated(ckpt, holdout, args.n, args.seed)
    else:
        generated, real = generate_targets(ckpt, args.n, np.random.default_rng(args.seed)), []

    save_dataset(generated, run.path("generated.npz"))
    if real:
        save_dataset(real, run.path("real.npz"))
    suffix = "pgm" if ckpt.image_shape[0] == 1 else "ppm"
    cells = [ image.pixels for image in generated[:80] ]
    write_image(run.path("generated.%s" % suffix), tile(cells, (len(cells) + 9) // 10, 10))
    run.finish()

def cmd_recover(args):
    run = Run(args, "recover")
    ckpt = load_checkpoint(args.checkpoint)
    run.manifest["inputs"]["checkpoint"] = args.checkpoint
    targets = []
    for path in args.targets:
        targets += load_dataset(path)
    run.manifest["inputs"]["targets"] = list(args.targets)
    if args.limit:
        targets = targets[:args.limit]

    overrides = { "lambda" : args.lambda_, "alpha" : args.alpha, "beta" : args.beta,
                  "schedule" : args.schedule, "max_iterations" : args.max_iters, "seed" : args.seed,
                  "trace_stride" : args.trace_stride, "plateau_window" : args.plateau_window,
                  "plateau_tolerance" : args.plateau_tolerance }
    if args.no_reg:
        overrides["use_regularizer"] = False
    config = RecoveryConfig.from_dict(merge_config(args.config, overrides))
    if args.config:
        run.manifest["inputs"]["config"] = args.config
    run.manifest["config_digest"] = config.digest()
    run.manifest["config"] = config.to_dict()
    run.manifest["seeds"]["recover"] = config.seed

    jobs = args.jobs or int(os.environ.get("INVERT_JOBS", "1"))
    results = recover_batch(targets, ckpt, config, jobs = jobs)

    records = [ EvalRecord.from_result(image, result, config.use_regularizer)
                for image, result in zip(targets, results) ]
    failed = [ (image, result) for image, result in zip(targets, results) if not result.ok ]
    for image, result in failed:
        logger.warning("recovery of %s failed: %s", image.id, result.error)

    write_csv(records, run.path("records.csv"))
    traces = { image.id : result.trace for image, result in zip(targets, results) if result.ok }
    if traces:
        write_csv(traces, run.path("traces.csv"))
    ok = [ (image, result) for image, result in zip(targets, results) if result.ok ]
    if ok:
        np.savez(run.path("recovered.npz"),
                 ids = np.array([ image.id for image, _ in ok ]),
                 z_p = np.stack([ result.z_p for _, result in ok ]),
                 y_p = np.stack([ result.y_p for _, result in ok ]))
    if args.process and ok:
        suffix = "pgm" if ckpt.image_shape[0] == 1 else "ppm"
        mosaic = process_grid([ image for image, _ in ok ][:args.process], ckpt, config)
        write_image(run.path("process.%s" % suffix), mosaic)
    run.manifest["failed"] = len(failed)
    run.finish()
    if failed and len(failed) == len(targets):
        error = failed[0][1].error
        raise error

def cmd_eval(args):
    run = Run(args, "eval")
    records = []
    traces = {}
    digests = {}
    for directory in args.results:
        manifest = read_manifest(directory)
        digest = manifest.get("config_digest")
        batch = read_csv(os.path.join(directory, "records.csv"))
        records += batch
        for record in batch:
            key = (record.provenance, record.regularizer_enabled)
            digests.setdefault(key, set()).add(digest)
        trace_path = os.path.join(directory, "traces.csv")
        if os.path.exists(trace_path):
            by_id = read_csv(trace_path)
            for record in batch:
                if record.image_id in by_id:
                    key = (record.provenance, record.regularizer_enabled)
                    traces.setdefault(key, []).append(by_id[record.image_id])
    run.manifest["inputs"]["results"] = list(args.results)

    reports = summarize(records)
    for report in reports:
        key = (report.provenance, report.regularizer_enabled)
        report.digest = ",".join(sorted(d for d in digests.get(key, ()) if d))

    table = format_table(reports)
    print(table)
    with open(run.path("summary.txt"), "w", encoding = "utf-8") as fd:
        fd.write(table + "\n")
    with open(run.path("report.json"), "w", encoding = "utf-8") as fd:
        json.dump([ report.to_dict() for report in reports ], fd, indent = 2, sort_keys = True)
        fd.write("\n")
    write_csv(records, run.path("records.csv"))

    for provenance in (PROVENANCE_GENERATED, PROVENANCE_REAL):
        series = [ (name, mean_curve(traces[(provenance, flag)]))
                   for name, flag in (("with regularizer", True), ("without regularizer", False))
                   if (provenance, flag) in traces ]
        if not series:
            continue
        write_svg_curves(series, run.path("loss-%s.svg" % provenance), "recon_mse",
                         title = "%s images" % provenance)
        for column, name in (("label_correct", "accuracy"), ("z_error", "zerror")):
            if all(getattr(curve, column)[0] is not None for _, curve in series):
                write_svg_curves(series, run.path("%s-%s.svg" % (name, provenance)), column,
                                 title = "%s images" % provenance)
    run.finish()

#------------------------------------------------------------------------
# Parser
#------------------------------------------------------------------------

def build_parser():
    parser = ArgumentParser(prog = "pyinvert", description = "Conditional GAN inversion toolkit")
    parser.add_argument("--version", action = "version", version = "pyinvert %s" % invert.__version__)
    parser.add_argument("-v", "--verbose", action = "store_true", help = "debug logging")
    parser.add_argument("-q", "--quiet", action = "store_true", help = "warnings and errors only")
    commands = parser.add_subparsers(dest = "command", metavar = "command")
    commands.required = True

    p = commands.add_parser("make-generator", help = "build and save a randomly initialized generator")
    p.add_argument("--out", required = True)
    p.add_argument("--spec", help = "generator spec JSON (default: DCGAN-style stack)")
    p.add_argument("--seed", type = int, default = 0)
    p.add_argument("--d-z", type = int, default = 100)
    p.add_argument("--d-y", type = int, default = 10)
    p.add_argument("--size", type = int, default = 32)
    p.add_argument("--channels", type = int, default = 1)
    p.add_argument("--width", type = int, default = 256)
    p.set_defaults(func = cmd_make_generator)

    p = commands.add_parser("synth-data", help = "make a glyph dataset (or read IDX files) with a holdout split")
    p.add_argument("--out", required = True)
    p.add_argument("--config", help = "glyph config JSON")
    p.add_argument("--n-per-class", type = int, default = 100)
    p.add_argument("--classes", type = int)
    p.add_argument("--seed", type = int)
    p.add_argument("--holdout", type = float, default = 0.2)
    p.add_argument("--split-seed", type = int, default = 0)
    p.add_argument("--idx-images")
    p.add_argument("--idx-labels")
    p.add_argument("--limit", type = int)
    p.set_defaults(func = cmd_synth_data)

    p = commands.add_parser("train", help = "train a conditional GAN")
    p.add_argument("--out", required = True)
    p.add_argument("--data", required = True, help = "training dataset (.npz)")
    p.add_argument("--config", help = "train config JSON")
    p.add_argument("--gen-spec")
    p.add_argument("--disc-spec")
    p.add_argument("--d-z", type = int, default = 100)
    p.add_argument("--d-y", type = int)
    p.add_argument("--width", type = int, default = 128)
    p.add_argument("--disc-width", type = int, default = 32)
    p.add_argument("--epochs", type = int)
    p.add_argument("--batch-size", type = int)
    p.add_argument("--seed", type = int)
    p.set_defaults(func = cmd_train)

    p = commands.add_parser("generate", help = "sample recovery targets with known (z, y)")
    p.add_argument("--out", required = True)
    p.add_argument("--checkpoint", required = True)
    p.add_argument("--n", type = int, default = 200)
    p.add_argument("--seed", type = int, default = 0)
    p.add_argument("--holdout", help = "held-out dataset (.npz) to draw the real split from")
    p.set_defaults(func = cmd_generate)

    p = commands.add_parser("recover", help = "recover (z, y) for a batch of targets")
    p.add_argument("--out", required = True)
    p.add_argument("--checkpoint", required = True)
    p.add_argument("--targets", required = True, nargs = "+", help = "target datasets (.npz)")
    p.add_argument("--config", help = "recovery config JSON")
    p.add_argument("--no-reg", action = "store_true", help = "drop the one-hot regularizer")
    p.add_argument("--lambda", dest = "lambda_", type = float)
    p.add_argument("--alpha", type = float)
    p.add_argument("--beta", type = float)
    p.add_argument("--schedule", type = int)
    p.add_argument("--max-iters", type = int)
    p.add_argument("--plateau-window", type = int)
    p.add_argument("--plateau-tolerance", type = float)
    p.add_argument("--seed", type = int)
    p.add_argument("--trace-stride", type = int)
    p.add_argument("--limit", type = int, help = "recover only the first n targets")
    p.add_argument("--jobs", type = int, help = "worker threads (default $INVERT_JOBS or 1)")
    p.add_argument("--process", type = int, default = 0,
                   help = "write snapshots of the first n recoveries at 10, 100, 1k and 10k iterations")
    p.set_defaults(func = cmd_recover)

    p = commands.add_parser("eval", help = "aggregate recovery results into tables and curves")
    p.add_argument("--out", required = True)
    p.add_argument("--results", required = True, nargs = "+", help = "recover run directories")
    p.set_defaults(func = cmd_eval)

    return parser

def configure_logging(args):
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, os.environ.get("INVERT_LOG_LEVEL", "INFO").upper(), logging.INFO)
    logging.basicConfig(level = level, format = "%(asctime)s %(name)s %(levelname)s %(message)s")

def classify(e):
    """ Map an exception to (category, exit code). """
    if isinstance(e, CommandLineError):
        return e.category, e.code
    if isinstance(e, FileNotFoundError):
        return "missing-file", EXIT_MISSING_FILE
    if isinstance(e, CheckpointVersionError):
        return "version-mismatch", EXIT_VERSION_MISMATCH
    if isinstance(e, (InvertIOError, InvertShapeError)):
        return "format", EXIT_FORMAT
    if isinstance(e, (InvertConfigError, InvertValueError)):
        return "config", EXIT_CONFIG
    if isinstance(e, InvertNumericError):
        return "numeric", EXIT_NUMERIC
    return "internal", EXIT_INTERNAL

def main(argv = None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        configure_logging(args)
        args.func(args)
    except (CommandLineError, InvertException, OSError) as e:
        category, code = classify(e)
        message = str(e).replace("\n", " ")
        if isinstance(e, FileNotFoundError) and e.filename:
            message = "%s: no such file" % e.filename
        sys.stderr.write("pyinvert: error[%s]: %s\n" % (category, message))
        return code
    except Exception as e:
        logger.debug("internal error", exc_info = True)
        sys.stderr.write("pyinvert: error[internal]: %s: %s\n" % (type(e).__name__, str(e).replace("\n", " ")))
        return EXIT_INTERNAL
    return EXIT_OK
