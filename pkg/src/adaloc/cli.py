"""Command-line entry point: ``adaloc gen | train | train-router | eval | compare``.

Every subcommand also reads ``--config FILE`` with ``key = value`` lines whose
keys are the long flag names (dashes or underscores). Flags given on the
command line win over the file. Exit codes: 0 ok, 2 configuration error,
3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, config as cfg
from .channel.scenario import normalize_scenario
from .checkpoint import load_checkpoint
from .errors import AdalocError, ConfigError, DataError
from .evaluate import (
    ComparisonReport,
    compare_methods,
    method1_result,
    method2_result,
    method3_result,
    report_meta,
    router_accuracy,
    test_sets,
)
from .model import parse_arch
from .preprocess import generate_dataset, load_dataset, merge, save_dataset
from .router import AdaptiveEnsemble, RouterConfig
from .tensor import kernels
from .train import Hyper, TrainRun, train_model, train_router

log = logging.getLogger("adaloc")

# scenario fields exposed as gen flags, with their text parsers
_SCENARIO_OVERRIDES = {
    "waypoints": cfg.parse_points,
    "k_factor_db": float,
    "n_scatterers": int,
    "los_blocked": cfg.parse_intervals,
    "delay_spread_ns": float,
    "noise_floor_db": float,
    "bs_height_m": float,
    "ue_height_m": float,
    "speed_kmh": float,
    "snapshot_interval_s": float,
    "carrier_hz": float,
    "bandwidth_hz": float,
    "array_azimuth_deg": float,
    "block_gain_db": float,
}


def _scenario_token(text: str) -> str:
    try:
        return normalize_scenario(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _method_token(text: str) -> int:
    if text not in ("1", "2", "3"):
        raise argparse.ArgumentTypeError(f"method must be 1, 2 or 3, got {text!r}")
    return int(text)


def _assignment(text: str) -> tuple[str, str]:
    sid, sep, path = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected SCENARIO=PATH, got {text!r}")
    return _scenario_token(sid), path


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so bad flags map to exit code 2 with one message."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="FILE", help="key = value file supplying any of these flags")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--backend", choices=("compiled", "python"),
                   help="tensor kernel backend (default: compiled when built)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _hyper_flags(p, epochs):
    p.add_argument("--epochs", type=int, help=f"training epochs (default: {epochs})")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default: 64)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default: 0.0006)")


DEFAULTS = {
    "gen": {"laps": 5, "seed": 0, "val_fraction": 0.1},
    "train": {"seed": 0, "epochs": 200, "batch_size": 64, "lr": 6e-4},
    "train-router": {"seed": 0, "variant": "full", "epochs": 50, "batch_size": 64, "lr": 6e-4},
    "eval": {"seed": 0, "block": 50, "timing_repeats": 5, "smoothing_window": 1},
    "compare": {"seed": 0, "block": 50, "timing_repeats": 5, "smoothing_window": 1},
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adaloc", description="Adaptive attention-based localization over "
                     "synthetic beam-space channels.")
    parser.add_argument("--version", action="version", version=f"adaloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="synthesize a scenario dataset")
    g.add_argument("--scenario", nargs="+", type=_scenario_token, metavar="s1|s2|s3",
                   help="scenario(s); several give one mixed dataset")
    g.add_argument("--laps", type=int, help="laps to drive; the last one is the test split (default: 5)")
    g.add_argument("--val-fraction", type=float, help="share of non-test samples held out for validation (default: 0.1)")
    g.add_argument("--out", metavar="DIR", help="output dataset directory")
    for name in _SCENARIO_OVERRIDES:
        g.add_argument("--" + name.replace("_", "-"), metavar="VALUE", help=f"override the preset {name}")
    _common(g)

    t = sub.add_parser("train", help="train a localization model")
    t.add_argument("--data", metavar="DIR", help="dataset directory")
    t.add_argument("--arch", metavar="el=K,ln=on|off,mp=on|off", help="architecture, el in 1..5")
    t.add_argument("--scenario", type=_scenario_token, help="train on one scenario of a mixed dataset")
    t.add_argument("--out", metavar="DIR", help="checkpoint directory")
    _hyper_flags(t, 200)
    _common(t)

    r = sub.add_parser("train-router", help="train the single-layer perceptron router")
    r.add_argument("--data", metavar="DIR", help="mixed-scenario dataset directory")
    r.add_argument("--variant", choices=("full", "bin"), help="full input matrix or one delay bin (default: full)")
    r.add_argument("--bin-index", type=int, metavar="K", help="delay bin 0..45 (variant bin only)")
    r.add_argument("--out", metavar="DIR", help="checkpoint directory")
    _hyper_flags(r, 50)
    _common(r)

    e = sub.add_parser("eval", help="evaluate one method and write a report")
    e.add_argument("--method", type=_method_token, metavar="1|2|3", help="1 generalized, 2 manual switching, 3 routed")
    e.add_argument("--data", action="append", metavar="DIR", help="dataset directory (repeatable)")
    e.add_argument("--scenario", action="append", type=_scenario_token,
                   help="declared scenario for each --data, in order (method 2)")
    e.add_argument("--model", metavar="DIR", help="generalized model checkpoint (method 1)")
    e.add_argument("--specialist", action="append", type=_assignment, metavar="S=DIR",
                   help="specialist checkpoint per scenario (methods 2 and 3)")
    e.add_argument("--router", metavar="DIR", help="router checkpoint (method 3)")
    e.add_argument("--out", metavar="DIR", help="report directory")
    _eval_flags(e)
    _common(e)

    c = sub.add_parser("compare", help="run Methods 1, 2 and 3 and write the comparison table")
    c.add_argument("--data", action="append", metavar="DIR", help="dataset directory (repeatable)")
    c.add_argument("--generalized", metavar="DIR", help="Method 1 checkpoint")
    c.add_argument("--specialist", action="append", type=_assignment, metavar="S=DIR",
                   help="Method 3 specialist per scenario")
    c.add_argument("--method2", action="append", type=_assignment, metavar="S=DIR",
                   help="Method 2 model per scenario (default: the specialists)")
    c.add_argument("--router", metavar="DIR", help="router checkpoint")
    c.add_argument("--out", metavar="DIR", help="report directory")
    _eval_flags(c)
    _common(c)
    return parser


def _eval_flags(p):
    p.add_argument("--block", type=int, help="snapshots per scenario turn in the routed stream (default: 50)")
    p.add_argument("--timing-repeats", type=int, help="timed passes, median reported (default: 5)")
    p.add_argument("--time-scenario", type=_scenario_token, help="scenario(s) to time (default: all)",
                   action="append")
    p.add_argument("--smoothing-window", type=int, help="majority vote over recent router decisions (default: 1)")


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser, args):
    """Fill flags missing from the command line with values from ``--config``."""
    sp = _subparser(parser, args.command)
    if args.config:
        actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
        for key, raw in cfg.read_pairs(args.config).items():
            dest = key.replace("-", "_")
            if dest not in actions:
                raise ConfigError(f"{args.config}: unknown key {key!r} for '{args.command}'")
            if getattr(args, dest) is not None:
                continue
            act = actions[dest]
            conv = act.type or str
            if act.nargs in ("+", "*") or isinstance(act, argparse._AppendAction):
                try:
                    value = [conv(v) for v in raw.split()]
                except argparse.ArgumentTypeError as exc:
                    raise ConfigError(f"{args.config}: {key}: {exc}") from None
            elif isinstance(act, argparse._StoreTrueAction):
                value = cfg.parse_bool(raw)
            else:
                try:
                    value = conv(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise ConfigError(f"{args.config}: {key}: {exc}") from None
                if act.choices and value not in act.choices:
                    raise ConfigError(f"{args.config}: {key} must be one of {sorted(act.choices)}")
            setattr(args, dest, value)
    for key, value in DEFAULTS[args.command].items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if not getattr(args, n)]
    if missing:
        raise ConfigError(f"{args.command}: missing required {', '.join(missing)}")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def cmd_gen(args) -> int:
    _require(args, "scenario", "out")
    overrides = {}
    for name, conv in _SCENARIO_OVERRIDES.items():
        val = getattr(args, name)
        if val is not None:
            try:
                overrides[name] = conv(val) if isinstance(val, str) else val
            except ValueError as exc:
                raise ConfigError(f"--{name.replace('_', '-')}: {exc}") from None
    parts = [generate_dataset(s, args.laps, args.seed, args.val_fraction, **overrides)
             for s in dict.fromkeys(args.scenario)]
    ds = parts[0] if len(parts) == 1 else merge(parts, seed=args.seed)
    ds.audit()
    out = save_dataset(ds, _out_dir(args.out))
    sizes = {s: len(ds.indices("train", s)) + len(ds.indices("val", s)) + len(ds.indices("test", s))
             for s in ds.scenarios}
    print(f"wrote {len(ds)} snapshots ({', '.join(f'{s}: {n}' for s, n in sizes.items())}) "
          f"over {ds.laps} laps to {out}")
    print(f"splits: train {len(ds.indices('train'))}, val {len(ds.indices('val'))}, "
          f"test {len(ds.indices('test'))}")
    return 0


def cmd_train(args) -> int:
    _require(args, "data", "arch", "out")
    config = parse_arch(args.arch)
    ds = load_dataset(args.data)
    progress = None
    if args.verbose:
        def progress(epoch, tr, va):
            log.info("epoch %d train %.6f val %s", epoch, tr, "-" if va is None else f"{va:.6f}")
    ckpt = train_model(ds, config, Hyper(args.epochs, args.batch_size, args.lr), args.seed,
                       scenario=args.scenario, progress=progress)
    out = ckpt.save(_out_dir(args.out))
    run = ckpt.training["run"]
    (out / "loss_curve.csv").write_text(TrainRun(**run).curve_csv())
    val = run["val_loss"][-1]
    print(f"architecture {config.tag}, parameters {ckpt.param_count:,}")
    print(f"final train MSE {run['train_loss'][-1]:.6f}, val MSE "
          f"{'n/a' if val is None else f'{val:.6f}'} (best epoch {run['best_epoch']})")
    print(f"checkpoint written to {out}")
    return 0


def cmd_train_router(args) -> int:
    _require(args, "data", "out")
    if args.bin_index is not None and args.variant != "bin":
        raise ConfigError("--bin-index is only valid with --variant bin")
    if args.variant == "bin" and args.bin_index is None:
        raise ConfigError("--variant bin requires --bin-index K (0..45)")
    config = RouterConfig(args.variant, args.bin_index)
    ds = load_dataset(args.data)
    ckpt = train_router(ds, config, Hyper(args.epochs, args.batch_size, args.lr), args.seed)
    out = ckpt.save(_out_dir(args.out))
    te = ds.indices("test")
    acc = router_accuracy(ckpt.net, ds.cir[te], ds.scenario[te]) if len(te) else float("nan")
    print(f"router {config.variant}, parameters {ckpt.param_count:,}")
    print(f"test accuracy {acc:.4f} on {len(te)} samples")
    print(f"checkpoint written to {out}")
    return 0


def _load_sets(paths):
    return test_sets([load_dataset(p) for p in paths])


def cmd_eval(args) -> int:
    _require(args, "method", "data", "out")
    timed_arg = args.time_scenario
    if args.method == 1:
        _require(args, "model")
        sets = _load_sets(args.data)
        timed = list(sets) if timed_arg is None else timed_arg
        res = method1_result(load_checkpoint(args.model, "model").net, sets, timed, args.timing_repeats)
        report = ComparisonReport({"method1": res}, meta=report_meta(sets, args.timing_repeats))
    elif args.method == 2:
        if not args.scenario or len(args.scenario) != len(args.data):
            raise ConfigError("method 2 needs one --scenario declaration per --data (manual switching)")
        if not args.specialist:
            raise ConfigError("method 2 needs --specialist S=DIR for each declared scenario")
        registry = {s: load_checkpoint(p, "model").net for s, p in args.specialist}
        sets, declared = {}, {}
        for path, sid in zip(args.data, args.scenario):
            ds = load_dataset(path)
            idx = ds.indices("test")
            key = sid if sid not in sets else f"{sid}#{len(sets)}"
            sets[key] = (ds.cir[idx], ds.labels[idx].astype("float64"))
            declared[key] = sid
        timed = list(sets) if timed_arg is None else timed_arg
        res = method2_result(registry, sets, declared, timed, args.timing_repeats)
        report = ComparisonReport({"method2": res}, meta=report_meta(sets, args.timing_repeats,
                                                                     declared=declared))
    else:
        if not args.router:
            raise ConfigError("method 3 needs a router checkpoint: pass --router DIR")
        if not args.specialist:
            raise ConfigError("method 3 needs --specialist S=DIR for every scenario")
        rtr = load_checkpoint(args.router, "router").net
        spec = {s: load_checkpoint(p, "model").net for s, p in args.specialist}
        sets = _load_sets(args.data)
        timed = list(sets) if timed_arg is None else timed_arg
        ens = AdaptiveEnsemble(rtr, spec, args.smoothing_window)
        res, acc, switches = method3_result(ens, sets, args.block, timed, args.timing_repeats)
        report = ComparisonReport({"method3": res}, acc, switches,
                                  report_meta(sets, args.timing_repeats, interleave_block=args.block))
    out = report.save(_out_dir(args.out))
    print(report.table_csv(), end="")
    print(f"report written to {out}")
    return 0


def cmd_compare(args) -> int:
    _require(args, "data", "out")
    if not args.generalized:
        raise ConfigError("missing checkpoint(s): generalized model (--generalized)")
    if not args.router:
        raise ConfigError("missing checkpoint(s): router (--router)")
    specialists = dict(args.specialist or [])
    method2 = dict(args.method2) if args.method2 else None
    datasets = [load_dataset(p) for p in args.data]
    report = compare_methods(datasets, args.generalized, specialists, args.router, method2,
                             block=args.block, timing_repeats=args.timing_repeats,
                             time_scenarios=args.time_scenario,
                             smoothing_window=args.smoothing_window)
    out = report.save(_out_dir(args.out))
    print(report.table_csv(), end="")
    print(f"router accuracy {report.router_accuracy:.4f}, switch events {report.switch_events}")
    for sid, red in report.meta["active_reduction"].items():
        print(f"{sid}: active parameters {100 * red:.1f}% below Method 1")
    print(f"report written to {out}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "train-router": cmd_train_router,
            "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if args.backend:
            try:
                kernels.use_backend(args.backend)
            except ImportError as exc:
                raise ConfigError(str(exc)) from None
        return COMMANDS[args.command](args)
    except AdalocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
