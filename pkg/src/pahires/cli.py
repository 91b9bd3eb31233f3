"""pahires command line: train | interpolate | inbetween | extrapolate | evaluate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
``PAHIRES_THREADS`` caps the BLAS thread pool (default 1, which keeps runs
bit-reproducible).
"""
from __future__ import annotations

import os

_threads = os.environ.get("PAHIRES_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from . import metrics, tasks  # noqa: E402
from .autodiff import GradientError, NonFiniteError, ShapeError  # noqa: E402
from .bvh import LayoutError, serialize_bvh  # noqa: E402
from .checkpoint import CheckpointError  # noqa: E402
from .config import ConfigError, load_config  # noqa: E402
from .metrics import MetricError  # noqa: E402
from .model import ModelConfigError, PaHiRes, load_model, save_model  # noqa: E402
from .motion import MotionDataError, MotionSequence, save_csv, save_sequence  # noqa: E402
from .training import TrainingError, load_train_state, save_train_state, train, write_history  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("pahires")


def _pair(text, kind, what):
    try:
        a, b = text.split(",")
        return kind(a), kind(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must look like A,B, got {text!r}") from None


def _gap(text):
    return _pair(text, int, "--gap")


def _range(text):
    return _pair(text, float, "--range")


def _override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override must be key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pahires", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_checkpoint=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", type=_override, default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--checkpoint", required=needs_checkpoint, help="model checkpoint")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("train", help="fit a model on a pool of sequences")
    common(p, needs_checkpoint=False)
    p.add_argument("data", nargs="+", help="sequence files or directories")
    p.add_argument("--history", help="loss history CSV (default: <out>.history.csv)")
    p.add_argument("--resume", help="continue from a training checkpoint")

    for name, helptext in (("interpolate", "resample at a new frame rate"),
                           ("inbetween", "fill a masked interior gap"),
                           ("extrapolate", "query a time range, possibly outside [0, 1]")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("input", help="input sequence (.bvh or binary)")
        p.add_argument("--format", choices=("bvh", "bin", "csv"), help="output format (default from --out suffix)")
        if name == "interpolate":
            p.add_argument("--scale", type=float, required=True, help="output/input frame-rate ratio")
        elif name == "inbetween":
            p.add_argument("--gap", type=_gap, required=True, metavar="START,LEN")
        else:
            p.add_argument("--range", type=_range, required=True, metavar="TMIN,TMAX")
            p.add_argument("--scale", type=float, default=1.0, help="frame density relative to the input")
            p.add_argument("--count", type=int, help="number of output frames")

    p = sub.add_parser("evaluate", help="degrade, reconstruct and score a dataset")
    common(p)
    p.add_argument("data", nargs="+", help="sequence files or directories")
    p.add_argument("--scale", type=float, action="append", required=True,
                   help="degradation factor (repeatable)")
    p.add_argument("--name", default="data", help="dataset label in the report")
    p.add_argument("--table", help="also write the aligned text table here")
    return ap


def _run_config(args):
    overrides = dict(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _write_output(path, fmt, seq: MotionSequence, skeleton):
    fmt = fmt or {".bvh": "bvh", ".csv": "csv"}.get(Path(path).suffix.lower(), "bin")
    if fmt == "bvh":
        if skeleton is None:
            raise ConfigError("BVH output needs a BVH input to take the skeleton from")
        Path(path).write_text(serialize_bvh(skeleton, seq))
    elif fmt == "csv":
        save_csv(path, seq)
    else:
        save_sequence(path, seq)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    pool = [tasks.read_motion(p).seq for p in tasks.expand_dataset(args.data)]
    if not pool:
        raise MotionDataError("no training sequences")
    model = PaHiRes(cfg.model, pool[0].dim)
    state = load_train_state(args.resume, model) if args.resume else None
    train_cfg = cfg.train
    if not train_cfg.checkpoint_path:
        train_cfg.checkpoint_path = args.out + ".state"
    state, history = train(pool, model, train_cfg, cfg.loss, state=state,
                           on_epoch=lambda row: log.info("epoch %(epoch)d total %(total).6g", row))
    if train_cfg.checkpoint_every:
        save_train_state(train_cfg.checkpoint_path, model, state)
    save_model(args.out, model)
    write_history(args.history or args.out + ".history.csv", history)
    return EXIT_OK


def _load(args):
    item = tasks.read_motion(args.input)
    model = load_model(args.checkpoint, item.seq.dim)
    return model, item


def cmd_interpolate(args) -> int:
    model, item = _load(args)
    out = tasks.interpolate(model, item.seq, args.scale)
    _write_output(args.out, args.format, out, item.skeleton)
    return EXIT_OK


def cmd_inbetween(args) -> int:
    model, item = _load(args)
    start, size = args.gap
    out = tasks.inbetween(model, item.seq, start, size)
    _write_output(args.out, args.format, out, item.skeleton)
    return EXIT_OK


def cmd_extrapolate(args) -> int:
    model, item = _load(args)
    t_min, t_max = args.range
    out = tasks.extrapolate(model, item.seq, t_min, t_max, args.count, args.scale)
    _write_output(args.out, args.format, out, item.skeleton)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.checkpoint)
    rows, skipped = tasks.evaluate(model, args.data, args.scale, args.name)
    metrics.write_csv(args.out, rows)
    table = metrics.format_table(rows)
    if args.table:
        Path(args.table).write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "interpolate": cmd_interpolate,
    "inbetween": cmd_inbetween,
    "extrapolate": cmd_extrapolate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelConfigError, tasks.TaskError, LayoutError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (MotionDataError, CheckpointError, MetricError, ShapeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (TrainingError, GradientError, NonFiniteError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
