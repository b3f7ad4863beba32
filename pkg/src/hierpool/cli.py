"""
Command-line front end.

    hierpool synth      generate and write a synthetic dataset
    hierpool gradcheck  finite-difference check over a pooling grid
    hierpool train      train one model per (pooling, structure, seed)
    hierpool evaluate   detect, score and write the comparison report
    hierpool report     re-render the report from metrics.json

Settings come from an optional INI file (``--config``) with sections
[synth], [train], [postprocess] and [experiment]; command-line flags win.

Exit codes: 0 success, 1 gradient check failed, 2 bad configuration,
3 data or I/O problem, 4 numerical failure.
"""

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, NumericalError
from .evaluation import PostProcessConfig, format_report, make_row, report_tsv, write_events
from .experiment import oracle_scores, score_split
from .gradients import finite_difference_check
from .hierarchical import PoolingSpec, parse_plan, validate_plan
from .model import TrainConfig, load_checkpoint, predict_frames, save_checkpoint, train
from .pooling import PoolingFunction
from .synth import SynthConfig, generate, read_dataset, write_dataset

log = logging.getLogger("hierpool")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4

GRADCHECK_FUNCTIONS = ("max", "average", "linear", "exp", "attention")
GRADCHECK_PLANS = ((), (5,), (5, 5, 5))


# --- configuration -------------------------------------------------------------

def _coerce(text, like):
    if isinstance(like, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(float(t) for t in text.split(","))
    return text


def _section_overrides(parser, section, cls, skip=()):
    if not parser.has_section(section):
        return {}
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    out = {}
    for key, value in parser.items(section):
        if key in skip:
            continue
        if key not in defaults:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            out[key] = _coerce(value, defaults[key])
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not valid") from None
    return out


def load_config(path):
    """Read the INI file at `path` (or nothing when `path` is None)."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} not found")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parser


def _split_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _structures(text):
    """'single,hierarchical' or plans separated by ';' such as 'flat;5;5x5x5'."""
    sep = ";" if ";" in text else ","
    if sep == "," and any(ch.isdigit() for ch in text):
        sep = ";"
    return [t.strip() for t in text.split(sep) if t.strip()]


def _seeds(text):
    try:
        return [int(s) for s in _split_list(text)]
    except ValueError:
        raise ConfigError(f"seeds must be integers, got {text!r}") from None


class Settings:
    """Merged view of INI sections and flags for one invocation."""

    def __init__(self, args):
        ini = load_config(args.config)
        exp = dict(ini.items("experiment")) if ini.has_section("experiment") else {}
        self.seeds = _seeds(args.seed if args.seed is not None else exp.get("seeds", "0"))
        self.functions = _split_list(args.pooling or exp.get("pooling", "linear"))
        self.structures = _structures(args.structure or exp.get("structure", "single,hierarchical"))
        if not self.seeds or not self.functions or not self.structures:
            raise ConfigError("pooling, structure and seed lists must be non-empty")
        try:
            self.synth = SynthConfig(**_section_overrides(ini, "synth", SynthConfig))
            train_kw = _section_overrides(ini, "train", TrainConfig, skip=("pooling",))
            self.train = TrainConfig(**train_kw)
            self.post = PostProcessConfig(**_section_overrides(ini, "postprocess", PostProcessConfig))
            self.specs = [PoolingSpec.from_strings(fn, s) for fn in self.functions for s in self.structures]
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        self.data = getattr(args, "data", None) or exp.get("data")

    def dataset(self, seed):
        if self.data:
            return read_dataset(self.data)
        return generate(replace(self.synth, seed=seed))


def structure_name(spec):
    if spec.plan is None:
        return "hierarchical"
    return "x".join(str(m) for m in spec.plan) if spec.plan else "single"


def run_name(spec, seed):
    return f"{spec.fn}-{structure_name(spec)}-seed{seed}"


# --- subcommands -----------------------------------------------------------------

def cmd_synth(args):
    ini = load_config(args.config)
    try:
        kw = _section_overrides(ini, "synth", SynthConfig)
        if args.seed is not None:
            kw["seed"] = _seeds(args.seed)[0]
        if args.clips is not None:
            kw["n_clips"] = args.clips
        if args.frames is not None:
            kw["frames_per_clip"] = args.frames
        cfg = SynthConfig(**kw)
        if args.structure:
            for s in _structures(args.structure):
                PoolingSpec.from_strings("linear", s).resolve_plan(cfg.frames_per_clip)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    root = write_dataset(generate(cfg), args.out)
    print(f"wrote {sum(cfg.split_sizes())} clips to {root}")
    return EXIT_OK


def cmd_gradcheck(args):
    functions = _split_list(args.pooling) if args.pooling else list(GRADCHECK_FUNCTIONS)
    try:
        functions = [PoolingFunction.parse(f) for f in functions]
        plans = ([parse_plan(s) for s in _structures(args.structure)] if args.structure
                 else list(GRADCHECK_PLANS))
        for plan in plans:
            validate_plan(plan, args.frames)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.trials < 1 or args.step <= 0 or args.tolerance < 0:
        raise ConfigError("trials and step must be positive, tolerance non-negative")
    seed = _seeds(args.seed)[0] if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    lines, failed = [], False
    for fn in functions:
        for plan in plans:
            x = rng.uniform(0.05, 0.95, size=(args.trials, args.frames, 1))
            w = rng.uniform(0.05, 0.95, size=x.shape) if fn is PoolingFunction.ATTENTION else None
            err = finite_difference_check(x, w, fn, plan, step=args.step)
            label = "x".join(map(str, plan)) or "flat"
            if fn is PoolingFunction.MAX:
                verdict = "subgradient"
            else:
                ok = err <= args.tolerance
                failed |= not ok
                verdict = "pass" if ok else "FAIL"
            lines.append(f"{fn.value}\t{label}\t{err:.3e}\t{verdict}")
    text = "function\tplan\tmax_rel_err\tresult\n" + "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_GRADCHECK if failed else EXIT_OK


def _write_loss_csv(path, history):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            writer.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])


def cmd_train(args):
    s = Settings(args)
    overrides = {}
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    try:
        base = replace(s.train, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    for seed in s.seeds:
        dataset = s.dataset(seed)
        train_x, _ = dataset.arrays("train")
        if train_x is None:
            raise DatasetError("training split is empty")
        for spec in s.specs:
            try:
                spec.resolve_plan(train_x.shape[1])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            cfg = replace(base, seed=seed, pooling=spec)
            run_dir = out / run_name(spec, seed)
            ckpt = run_dir / "checkpoint.bin"
            state = None
            if args.resume and ckpt.exists():
                state, saved = load_checkpoint(ckpt)
                if replace(saved, max_epochs=cfg.max_epochs) != cfg:
                    raise ConfigError(f"{ckpt} was trained with a different configuration")
            run_dir.mkdir(parents=True, exist_ok=True)
            _, state = train(dataset, cfg, state)
            save_checkpoint(ckpt, state, cfg)
            _write_loss_csv(run_dir / "loss.csv", state.history)
            print(f"{run_dir.name}: {state.epoch} epochs, best val loss {state.best_val:.4f}")
    return EXIT_OK


def _cell_metrics(counts):
    return {"n_ref": counts.n_ref, "n_sys": counts.n_sys, "tp": counts.tp, "fp": counts.fp,
            "fn": counts.fn, "substitutions": counts.substitutions,
            "deletions": counts.deletions, "insertions": counts.insertions, **counts.summary()}


def _rows(cells):
    """Report rows (averaged over seeds) from metrics.json cells."""
    from .evaluation import SegmentCounts

    keys = ("n_ref", "n_sys", "tp", "fp", "fn", "substitutions", "deletions", "insertions")
    grouped = {}
    for cell in cells:
        grouped.setdefault((cell["structure"], cell["pooling"]), []).append(
            SegmentCounts(*(cell["counts"][k] for k in keys)))
    return [make_row(structure, pooling, counts) for (structure, pooling), counts in grouped.items()]


def _write_report(out, cells, title):
    rows = _rows(cells)
    (out / "report.tsv").write_text(report_tsv(rows), encoding="utf-8")
    text = format_report(rows, title)
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_evaluate(args):
    s = Settings(args)
    out = Path(args.out)
    runs = Path(args.runs)
    cells = []
    for seed in s.seeds:
        dataset = s.dataset(seed)
        test_x, _ = dataset.arrays("test")
        if test_x is None:
            raise DatasetError("test split is empty")
        specs = [None] if args.oracle else s.specs
        for spec in specs:
            if spec is None:
                scores, name, structure, pooling = oracle_scores(dataset), f"oracle-seed{seed}", "oracle", "oracle"
            else:
                ckpt = runs / run_name(spec, seed) / "checkpoint.bin"
                if not ckpt.exists():
                    raise DatasetError(f"missing checkpoint {ckpt}")
                state, _ = load_checkpoint(ckpt)
                scores = predict_frames(test_x, state.best_params)
                name, structure, pooling = run_name(spec, seed), structure_name(spec), spec.fn
            counts, events = score_split(dataset, scores, "test", s.post)
            cell_dir = out / name
            cell_dir.mkdir(parents=True, exist_ok=True)
            write_events(cell_dir / "events.tsv", events)
            cells.append({"name": name, "seed": seed, "structure": structure, "pooling": pooling,
                          "counts": _cell_metrics(counts)})
    out.mkdir(parents=True, exist_ok=True)
    meta = {"postprocess": asdict(s.post), "cells": cells}
    (out / "metrics.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_report(out, cells, f"Segment-based metrics on the test split, seeds {','.join(map(str, s.seeds))}")
    return EXIT_OK


def cmd_report(args):
    path = Path(args.input)
    if path.is_dir():
        path = path / "metrics.json"
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
        cells = meta["cells"]
    except FileNotFoundError:
        raise DatasetError(f"{path} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: unreadable metrics ({exc})") from None
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    seeds = sorted({c["seed"] for c in cells})
    _write_report(out, cells, f"Segment-based metrics on the test split, seeds {','.join(map(str, seeds))}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [synth], [train], [postprocess], [experiment]")
    common.add_argument("--seed", help="seed, or comma-separated seeds")
    common.add_argument("--pooling", help="comma-separated pooling functions")
    common.add_argument("--structure", help="'single', 'hierarchical' or stage plans like '5x5x5'")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hierpool", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", default="data")
    p.add_argument("--clips", type=int, help="total number of clips over all splits")
    p.add_argument("--frames", type=int, help="frames per clip")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--frames", type=int, default=125)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", parents=[common], help="train the pooling grid")
    p.add_argument("--data", help="dataset directory (default: generate from [synth] and --seed)")
    p.add_argument("--out", default="runs")
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--resume", action="store_true", help="continue from existing checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score trained runs on the test split")
    p.add_argument("--data", help="dataset directory (default: generate from [synth] and --seed)")
    p.add_argument("--runs", default="runs")
    p.add_argument("--out", default="results")
    p.add_argument("--oracle", action="store_true", help="score the reference itself instead of checkpoints")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="re-render report from metrics.json")
    p.add_argument("--in", dest="input", default="results")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
