"""Command-line entry point: ``sfdm <subcommand> [options]``.

Every subcommand validates its resolved configuration (JSON schema) before
doing any work, writes its outputs into a run directory (``--out``) together
with ``config.json`` (the resolved configuration) and ``provenance.json``
(package and library versions, seeds, SHA-256 of inputs and outputs), and
exits with

    0  success
    1  invalid configuration or arguments
    2  numerical failure (divergence, blow-up, failed verification)
    3  I/O error

``SFDM_THREADS`` caps BLAS/FFT thread pools (benchmarks always use one).
Wall-clock timings go to ``timing.json`` only, so every other output file is
bit-reproducible from the configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
from contextlib import nullcontext

import jsonschema
import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# -- schemas ------------------------------------------------------------------------------------

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2 ** 63 - 1}

GENERATOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["heat2d", "burgers1d"]},
        "resolution": {"type": "integer", "minimum": 2},
        "viscosity": _POS_NUM,
        "horizon": _POS_NUM,
        "decay": {"type": "number", "minimum": 0},
        "count": _POS_INT,
        "seed": _SEED,
        "amplitude": _POS_NUM,
        "frames": {"type": "integer", "minimum": 2},
        "dt": {"oneOf": [_POS_NUM, {"type": "null"}]},
        "splits": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
    },
}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["datamodule", "model", "train", "loss_fn"],
    "properties": {
        "datamodule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string", "minLength": 1},
                "generate": GENERATOR_SCHEMA,
                "ntrain": _POS_INT,
                "ntest": _POS_INT,
                "batch_size": _POS_INT,
                "history_size": _NONNEG_INT,
                "target_steps": _POS_INT,
                "rollout_order": {"enum": ["zero", "first", "second"]},
            },
            "oneOf": [{"required": ["path"]}, {"required": ["generate"]}],
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["wiring", "modes", "nlayers"],
            "properties": {
                "wiring": {"enum": ["t1", "fno"]},
                "transform": {"enum": ["dct2", "dft"]},
                "modes": _POS_INT,
                "selector": {"enum": ["lowpass", "topk"]},
                "nlayers": _POS_INT,
                "width": _POS_INT,
                "layer_kind": {"enum": ["dense", "diagonal"]},
                "bias": {"type": "boolean"},
                "init": {"enum": ["vp", "xavier"]},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _NONNEG_INT,
                "seed": _SEED,
                "optimizer": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "type": {"const": "AdamW"},
                        "learning_rate": _POS_NUM,
                        "weight_decay": {"type": "number", "minimum": 0},
                    },
                },
                "scheduler": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "type": {"enum": ["Step", "Constant"]},
                        "step_size": _POS_INT,
                        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "scheduler_interval": {"const": "epoch"},
                    },
                },
                "stop_at_val_nmse": _POS_NUM,
            },
        },
        "loss_fn": {"enum": ["RelativeL2Loss", "MSELoss"]},
    },
}

TRAIN_DEFAULTS = {
    "datamodule": {"batch_size": 32, "history_size": 0, "target_steps": 1, "rollout_order": "zero"},
    "model": {"transform": "dct2", "selector": "lowpass", "width": 1, "layer_kind": "diagonal",
              "bias": False, "init": "vp"},
    "train": {"epochs": 100, "seed": 0,
              "optimizer": {"type": "AdamW", "learning_rate": 1e-3, "weight_decay": 0.0},
              "scheduler": {"type": "Constant", "step_size": 1, "gamma": 1.0, "scheduler_interval": "epoch"}},
}


def _merge(defaults: dict, given: dict) -> dict:
    out = dict(defaults)
    for k, v in given.items():
        out[k] = _merge(defaults[k], v) if isinstance(v, dict) and isinstance(defaults.get(k), dict) else v
    return out


def validate(config: dict, schema: dict, root: str = "config") -> None:
    """Raise ConfigError naming the path of the first violation (in path order)."""
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(config),
                    key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        path = ".".join([root] + [str(p) for p in e.absolute_path])
        raise ConfigError(f"{path}: {e.message}")


def _set_path(config: dict, assignment: str) -> None:
    """Apply ``a.b.c=VALUE`` (VALUE parsed as JSON, else taken as a string)."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not an object")
    node[parts[-1]] = value


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None


# -- run directory ----------------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class RunDir:
    def __init__(self, path, command: str, config: dict):
        self.path = path
        self.command = command
        self.config = config
        self.inputs, self.outputs = {}, []
        os.makedirs(path, exist_ok=True)

    def file(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.path, name)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = _sha256(path)

    def finish(self, seeds: dict) -> None:
        import scipy

        _dump({"command": self.command, "config": self.config}, os.path.join(self.path, "config.json"))
        outputs = {}
        for name in sorted(set(self.outputs)):
            full = os.path.join(self.path, name)
            if os.path.exists(full):
                outputs[name] = _sha256(full)
        _dump({
            "sfdm": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "seeds": seeds,
            "inputs": self.inputs,
            "outputs": outputs,
        }, os.path.join(self.path, "provenance.json"))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _ints(text: str) -> list:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not vals:
        raise ConfigError("empty integer list")
    return vals


# -- subcommands ------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .data import GeneratorConfig, generate_dataset, write_dataset

    config = {"kind": args.kind, "resolution": args.resolution, "count": args.count,
              "viscosity": args.viscosity, "horizon": args.horizon, "seed": args.seed,
              "decay": args.decay, "amplitude": args.amplitude, "frames": args.frames, "dt": args.dt,
              "splits": args.splits}
    validate(config, GENERATOR_SCHEMA)
    gen = GeneratorConfig(**config)
    run = RunDir(args.out, "gen-data", config)
    dataset = generate_dataset(gen)
    path = run.file("dataset.sfds")
    write_dataset(dataset, path)
    run.outputs.append("dataset.sfds.json")
    run.finish({"data": gen.seed})
    print(f"wrote {len(dataset)} samples of {dataset.grid} to {path}")
    return EXIT_OK


def _resolve_train_config(args) -> dict:
    config = _load_json(args.config) if args.config else {}
    for assignment in args.set or []:
        _set_path(config, assignment)
    validate(config, TRAIN_SCHEMA)
    config = _merge(TRAIN_DEFAULTS, config)
    sched = config["train"]["scheduler"]
    if sched["type"] == "Constant" and (sched["step_size"], sched["gamma"]) != (1, 1.0):
        raise ConfigError("config.train.scheduler: step_size/gamma given for a Constant schedule")
    return config


def _load_data(dm: dict, run: RunDir | None):
    from .data import Dataset, GeneratorConfig, generate_dataset, read_dataset

    if "path" in dm:
        if run is not None:
            run.add_input(dm["path"])
        return read_dataset(dm["path"])
    return generate_dataset(GeneratorConfig(**dm["generate"]))


def _split(dataset, name: str, cap=None):
    idx = np.asarray(dataset.splits.get(name, []), dtype=int)
    if cap is not None:
        idx = idx[:cap]
    return dataset.frames[idx]


def _make_selector(mc: dict, dataset, train_frames):
    from .mode_selection import lowpass_selector, spectrum_stats, topk_selector

    hermitian = mc["transform"] == "dft"
    low = lowpass_selector(mc["modes"], dataset.grid, hermitian)
    if mc["selector"] == "lowpass":
        return low
    stats = spectrum_stats(train_frames[:, -1], mc["transform"])
    return topk_selector(stats, low.m, hermitian)


def _train_config(config: dict):
    from .training import TrainConfig

    dm, tr = config["datamodule"], config["train"]
    sched = tr["scheduler"]
    return TrainConfig(
        epochs=tr["epochs"], batch_size=dm["batch_size"],
        learning_rate=tr["optimizer"]["learning_rate"], weight_decay=tr["optimizer"]["weight_decay"],
        step_size=sched["step_size"] if sched["type"] == "Step" else None, gamma=sched["gamma"],
        seed=tr["seed"], loss={"RelativeL2Loss": "rel_l2", "MSELoss": "mse"}[config["loss_fn"]],
        rollout_order=dm["rollout_order"], history_size=dm["history_size"],
        target_steps=dm["target_steps"], stop_at_val_nmse=tr.get("stop_at_val_nmse"))


def cmd_train(args) -> int:
    from .layers import build_model, save_checkpoint
    from .training import evaluate_nspace, train

    config = _resolve_train_config(args)
    tc = _train_config(config)
    run = RunDir(args.out, "train", config)
    dm, mc = config["datamodule"], config["model"]
    dataset = _load_data(dm, run)
    train_frames = _split(dataset, "train", dm.get("ntrain"))
    val_frames = _split(dataset, "val")
    test_frames = _split(dataset, "test", dm.get("ntest"))
    if len(train_frames) == 0:
        raise ConfigError("config.datamodule: the training split is empty")
    selector = _make_selector(mc, dataset, train_frames)
    model = build_model(mc["wiring"], mc["transform"], selector, mc["nlayers"], mc["width"],
                        in_channels=tc.history_size + 1, layer_kind=mc["layer_kind"], bias=mc["bias"],
                        init=mc["init"], seed=tc.seed)

    def log(epoch, report):
        if not args.quiet:
            val = f"  val_nmse {report.val_nmse[-1]:.6e}" if report.val_nmse else ""
            print(f"epoch {epoch:4d}  loss {report.train_loss[-1]:.6e}{val}")

    report = train(model, train_frames, tc, val=val_frames if len(val_frames) else None, log=log)
    save_checkpoint(model, run.file("model.sfdm"))
    rows = []
    for e, loss in enumerate(report.train_loss):
        val = report.val_nmse[e] if e < len(report.val_nmse) else math.nan
        rows.append((e + 1, tc.learning_rate_at(e), loss, val))
    _write_csv(run.file("learning_curve.csv"), ("epoch", "learning_rate", "train_loss", "val_nmse"), rows)
    metrics = {"initial_loss": report.initial_loss, "final_loss": report.final_loss,
               "epochs_run": report.epochs_run}
    if len(test_frames):
        metrics["test_nmse"] = evaluate_nspace(model, test_frames, tc)
    _dump(metrics, run.file("metrics.json"))
    _dump({"epoch_seconds": report.epoch_seconds}, os.path.join(run.path, "timing.json"))
    run.finish({"train": tc.seed, "init": tc.seed, "shuffle": tc.seed})
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import read_dataset
    from .layers import Wiring, load_checkpoint
    from .mode_selection import decompose_loss
    from .training import TrainConfig, evaluate_nspace

    config = {"checkpoint": args.checkpoint, "data": args.data, "split": args.split,
              "history_size": args.history_size, "rollout_order": args.rollout_order,
              "target_steps": args.target_steps}
    tc = TrainConfig(history_size=args.history_size, rollout_order=args.rollout_order,
                     target_steps=args.target_steps)
    run = RunDir(args.out, "eval", config)
    run.add_input(args.checkpoint)
    run.add_input(args.data)
    model = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    frames = dataset.frames if args.split == "all" else _split(dataset, args.split)
    if len(frames) == 0:
        raise ConfigError(f"split {args.split!r} is empty")
    metrics = {"nmse": evaluate_nspace(model, frames, tc), "samples": int(len(frames))}
    if model.wiring is Wiring.T1 and tc.target_steps == 1 and tc.history_size == 0 \
            and tc.rollout_order.value == "zero":
        for norm in ("l1", "l2"):
            d = decompose_loss(model, frames, norm=norm)
            metrics[f"J_{norm}"], metrics[f"R_o_{norm}"] = d.J, d.R_o
    _dump(metrics, run.file("metrics.json"))
    run.finish({})
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_analyze_modes(args) -> int:
    from .data import read_dataset
    from .mode_selection import (irreducible_loss, lowpass_selector, reconstruction_curve, spectrum_stats,
                                 topk_selector)
    from .transforms import TransformOperator

    m_values = _ints(args.m)
    families = [f.strip() for f in args.families.split(",")]
    for f in families:
        if f not in ("lowpass", "topk"):
            raise ConfigError(f"--families: unknown selector family {f!r}")
    config = {"data": args.data, "transform": args.transform, "m": m_values, "families": families}
    run = RunDir(args.out, "analyze-modes", config)
    run.add_input(args.data)
    dataset = read_dataset(args.data)
    herm = args.transform == "dft"
    y = dataset.frames[:, -1]
    Y = TransformOperator(args.transform, dataset.grid).forward(y)
    train_idx = dataset.splits.get("train")
    stats = spectrum_stats(y if train_idx is None else y[np.asarray(train_idx)], args.transform)
    rows = []
    for family in families:
        curve = reconstruction_curve(dataset, family, m_values, args.transform, stats=stats, hermitian=herm)
        for m, nmse in curve:
            low = lowpass_selector(m, dataset.grid, herm)
            s = low if family == "lowpass" else topk_selector(stats, low.m, herm)
            rows.append((m, family, nmse, irreducible_loss(Y, s, "l1", hermitian=herm),
                         irreducible_loss(Y, s, "l2", hermitian=herm)))
    _write_csv(run.file("modes.csv"), ("m", "selector_family", "nspace_nmse", "R_o_l1", "R_o_l2"), rows)
    run.finish({})
    for r in rows:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def cmd_check_init(args) -> int:
    from .initialization import InitScheme, variance_probe

    sizes = _ints(args.N)
    schemes = [s.strip() for s in args.schemes.split(",")]
    config = {"N": sizes, "m": args.m, "schemes": schemes, "transform": args.transform,
              "batch": args.batch, "draws": args.draws, "seed": args.seed}
    for s in schemes:
        if s not in ("vp_dense", "vp_diagonal", "xavier"):
            raise ConfigError(f"--schemes: unknown scheme {s!r}")
    if args.m < 1 or args.batch < 2 or args.draws < 1:
        raise ConfigError("need --m >= 1, --batch >= 2, --draws >= 1")
    for n in sizes:
        if n < args.m:
            raise ConfigError(f"--N: {n} is smaller than --m {args.m}")
    run = RunDir(args.out, "check-init", config)
    rows = []
    for scheme in schemes:
        for n in sizes:
            rep = variance_probe(InitScheme(scheme, args.transform, n, args.m, seed=args.seed),
                                 args.batch, args.draws)
            rows.append((scheme, n, args.m, rep.mean_ratio, rep.std_ratio))
            print(f"{scheme},{n},{args.m},{rep.mean_ratio:.6f},{rep.std_ratio:.6f}")
    _write_csv(run.file("init.csv"), ("scheme", "N", "m", "mean_ratio", "std_ratio"), rows)
    run.finish({"probe": args.seed})
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchGrid, _cell_models, count_transforms, run_speedup_grid
    from .transforms import TransformKind

    grid = BenchGrid(depths=tuple(_ints(args.depths)), widths=tuple(_ints(args.widths)),
                     resolutions=tuple(_ints(args.resolutions)), repetitions=args.repetitions,
                     warmup=args.warmup, modes=args.modes, ndim=args.ndim, seed=args.seed)
    config = {"depths": list(grid.depths), "widths": list(grid.widths), "resolutions": list(grid.resolutions),
              "repetitions": grid.repetitions, "warmup": grid.warmup, "modes": grid.modes, "ndim": grid.ndim,
              "seed": grid.seed, "transform": args.transform}
    run = RunDir(args.out, "bench", config)

    def progress(row):
        print(f"depth {row['depth']} width {row['width']} res {row['resolution']}: speedup {row['speedup']:.2f}x")

    report = run_speedup_grid(grid, args.transform, progress=progress)
    report.write_csv(os.path.join(run.path, "bench.csv"))  # timings: not checksummed
    kind = TransformKind.parse(args.transform)
    counts = []
    for d in grid.depths:
        t1, fno, _ = _cell_models(grid, kind, d, grid.widths[0], grid.resolutions[0])
        counts.append((d, *count_transforms(t1), *count_transforms(fno)))
    _write_csv(run.file("transform_counts.csv"),
               ("depth", "t1_forward", "t1_inverse", "fno_forward", "fno_inverse"), counts)
    run.finish({"bench": grid.seed})
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import report_json, run_verify

    select = [s.strip() for s in args.select.split(",")] if args.select else None

    def progress(r):
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.module}.{r.name}: value={r.value:.3e} "
              f"tol={r.tolerance:.1e} {r.detail}")

    results = run_verify(select=select, include_bench=args.include_bench, progress=progress)
    if not results:
        raise ConfigError(f"--select {args.select!r} matched no checks")
    text = report_json(results)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    failed = [f"{r.module}.{r.name}" for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}"
                                                                          if failed else ""))
    return EXIT_OK if not failed else EXIT_NUMERIC


# -- parser ---------------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default, which is reserved for numerical failures here
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sfdm", description="Reduced-order spectral models: data, training, "
                                "analysis, initialization checks, benchmarks and invariant verification.")
    p.add_argument("--version", action="version", version=f"sfdm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=["heat2d", "burgers1d"], required=True)
    g.add_argument("--resolution", type=int, default=64, help="grid points per axis")
    g.add_argument("--count", type=int, default=100, help="number of samples")
    g.add_argument("--viscosity", "--nu", type=float, default=0.05, help="diffusion coefficient nu")
    g.add_argument("--horizon", "-T", type=float, default=1.0, help="time between input and target")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--decay", type=float, default=2.0, help="initial spectrum ~ (1+|k|)^-decay")
    g.add_argument("--amplitude", type=float, default=1.0, help="RMS of initial conditions")
    g.add_argument("--frames", type=int, default=2, help="snapshots per sample including t=0")
    g.add_argument("--dt", type=float, default=None, help="Burgers step (default: half the stable step)")
    g.add_argument("--splits", type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--out", default="runs/gen-data", help="run directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", help="JSON file with datamodule / model / train / loss_fn blocks")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.epochs=5 (repeatable)")
    t.add_argument("--out", default="runs/train", help="run directory")
    t.add_argument("--quiet", action="store_true", help="no per-epoch log")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="n-space N-MSE of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset file (.sfds)")
    e.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    e.add_argument("--history-size", type=int, default=0)
    e.add_argument("--rollout-order", choices=["zero", "first", "second"], default="zero")
    e.add_argument("--target-steps", type=int, default=1)
    e.add_argument("--out", default="runs/eval", help="run directory")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze-modes", help="truncation error per retained-mode count and selector")
    a.add_argument("--data", required=True, help="dataset file (.sfds)")
    a.add_argument("--transform", choices=["dct2", "dft"], default="dct2")
    a.add_argument("--m", default="1,2,4,8,16", help="comma-separated low-pass parameters")
    a.add_argument("--families", default="lowpass,topk", help="comma-separated: lowpass, topk")
    a.add_argument("--out", default="runs/analyze-modes", help="run directory")
    a.set_defaults(func=cmd_analyze_modes)

    c = sub.add_parser("check-init", help="Monte Carlo output/input variance ratio of init schemes")
    c.add_argument("--N", default="128,256,512,1024", help="comma-separated signal lengths")
    c.add_argument("--m", type=int, default=24, help="retained modes")
    c.add_argument("--schemes", default="vp_dense,vp_diagonal,xavier")
    c.add_argument("--transform", choices=["dct2", "dft"], default="dct2")
    c.add_argument("--batch", type=int, default=10000, help="input samples per weight draw")
    c.add_argument("--draws", type=int, default=100, help="weight draws")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default="runs/check-init", help="run directory")
    c.set_defaults(func=cmd_check_init)

    b = sub.add_parser("bench", help="forward-pass timing grid, T1 vs FNO-style")
    b.add_argument("--depths", default="1,2,4,6,8")
    b.add_argument("--widths", default="8,32")
    b.add_argument("--resolutions", default="32,64,128")
    b.add_argument("--repetitions", type=int, default=7)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--modes", type=int, default=16, help="low-pass m per axis (capped at resolution/2)")
    b.add_argument("--ndim", type=int, default=2, choices=[1, 2])
    b.add_argument("--transform", choices=["dct2", "dft"], default="dct2")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="runs/bench", help="run directory")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run the invariant suite; exit 0 iff every check passes")
    v.add_argument("--select", help="comma-separated check or module names")
    v.add_argument("--report", help="write the JSON report here")
    v.add_argument("--include-bench", action="store_true", help="also check timing stability (slow, noisy)")
    v.set_defaults(func=cmd_verify)
    return p


def _thread_limit():
    raw = os.environ.get("SFDM_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"SFDM_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    from .data import BlowUpError
    from .training import DivergenceError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version, usage errors
        return exc.code
    try:
        with _thread_limit():
            return args.func(args)
    except (ConfigError, jsonschema.ValidationError) as exc:
        print(f"sfdm {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, BlowUpError, FloatingPointError) as exc:
        print(f"sfdm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"sfdm {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"sfdm {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
