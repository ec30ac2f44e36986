"""``mrtoc`` command-line interface.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

import argparse
import logging
import os
import sys

from . import channel as ch_mod
from . import codebook as cb_mod
from . import config as config_mod
from . import data as data_mod
from . import evaluation, models, training
from .errors import (ConfigError, ContractViolation, DivergenceError, InfeasibleRateError,
                     IngestionError, NumericError)

log = logging.getLogger("mrtoc")

CHECKPOINT_NAME = "checkpoint.mrtoc"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON experiment config")
    src.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="built-in config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.epochs_per_level=5")
    p.add_argument("--seed", type=int, help="run seed (beats MRTOC_SEED and the config)")
    p.add_argument("--out", help="output directory (overrides output_dir)")


def _resolve_config(args):
    if getattr(args, "config", None):
        cfg = config_mod.load(args.config)
    else:
        cfg = config_mod.PRESETS[getattr(args, "preset", None) or "desk"]()
    cfg = config_mod.apply_overrides(cfg, args.overrides)
    cfg = config_mod.apply_env(cfg)
    if args.seed is not None:
        cfg = config_mod.apply_overrides(cfg, [f"seed={args.seed}"])
    if args.out:
        cfg = config_mod.apply_overrides(cfg, [f"output_dir={args.out}"])
    return cfg


def experiment_data(cfg):
    """``(train, test)`` split of the dataset a config describes."""
    d = cfg.data
    if d.kind == "idx":
        ds = data_mod.load_idx(d.images, d.labels)
    else:
        ds = data_mod.generate_blobs(d.num_classes, d.dim, d.samples_per_class, d.spread, cfg.seed)
    return data_mod.train_test_split(ds, d.test_fraction, cfg.seed)


def _write_config(cfg, out_dir):
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())


def _load_model(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path} (run `mrtoc train` first)")
    model, raw_cfg = models.load_checkpoint(path)
    cfg = config_mod.from_dict(raw_cfg) if raw_cfg is not None else config_mod.desk_preset()
    return model, cfg


# --- subcommands ------------------------------------------------------------------

def cmd_train(args):
    cfg = _resolve_config(args)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    train_set, _ = experiment_data(cfg)
    result = training.train_progressive(cfg.train_config(), train_set)
    models.save_checkpoint(os.path.join(out, CHECKPOINT_NAME), result.model, cfg.to_dict())
    training.write_log_csv(result.log, os.path.join(out, "train_log.csv"), cfg.provenance())
    _write_config(cfg, out)
    print(os.path.join(out, CHECKPOINT_NAME))
    return 0


def _eval_setup(args):
    model, trained_cfg = _load_model(args.checkpoint)
    cfg = config_mod.apply_overrides(trained_cfg, args.overrides)
    if args.seed is not None:
        cfg = config_mod.apply_overrides(cfg, [f"seed={args.seed}"])
    # the test split always comes from the config recorded at training time
    _, test_set = experiment_data(trained_cfg)
    return model, cfg, test_set


def cmd_eval(args):
    model, cfg, test_set = _eval_setup(args)
    levels = args.level or list(range(1, model.codebook.trained_levels + 1))
    eps_list = args.eps or cfg.eval.eps_list
    trials = args.trials or cfg.eval.trials
    res = evaluation.sweep_levels_eps(model, levels, eps_list, test_set, trials, cfg.seed)
    out = args.output or os.path.join(os.path.dirname(args.checkpoint) or ".", "eval.csv")
    res.write_csv(out, cfg.provenance())
    for r in res.rows:
        print(f"level={r.level} bits={r.bits} eps={r.eps_test:g} acc={r.accuracy:.4f} +/- {r.stderr:.4f}")
    return 0


def cmd_sweep(args):
    model, cfg, test_set = _eval_setup(args)
    e = cfg.eval
    levels = e.levels or list(range(1, model.codebook.trained_levels + 1))
    out_dir = args.out or os.path.dirname(args.checkpoint) or "."
    os.makedirs(out_dir, exist_ok=True)
    by_eps = evaluation.sweep_levels_eps(model, levels, e.eps_list, test_set, e.trials, cfg.seed)
    by_ber = evaluation.sweep_ber(model, levels, e.p_e_list, test_set, e.trials, cfg.seed)
    by_eps.write_csv(os.path.join(out_dir, "sweep_eps.csv"), cfg.provenance())
    by_ber.write_csv(os.path.join(out_dir, "sweep_ber.csv"), cfg.provenance())
    print(os.path.join(out_dir, "sweep_eps.csv"))
    print(os.path.join(out_dir, "sweep_ber.csv"))
    return 0


def cmd_select_level(args):
    try:
        ctx = ch_mod.RateContext(v_bit=args.vbit, tau=args.tau, m_subvectors=args.m, k_max=args.kmax)
        level = ch_mod.select_level(ctx)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    print(level)
    return 0


def cmd_dump_codebook(args):
    model, _ = _load_model(args.checkpoint)
    if args.output in (None, "-"):
        cb_mod.dump_csv(model.codebook, sys.stdout)
    else:
        cb_mod.dump_csv(model.codebook, args.output)
    return 0


def cmd_gen_data(args):
    cfg = _resolve_config(args)
    if cfg.data.kind != "blobs":
        raise ConfigError("gen-data only generates synthetic blobs (data.kind must be 'blobs')")
    d = cfg.data
    ds = data_mod.generate_blobs(d.num_classes, d.dim, d.samples_per_class, d.spread, cfg.seed)
    path = args.output or os.path.join(cfg.output_dir, "blobs.csv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    data_mod.write_csv(ds, path, cfg.provenance())
    print(path)
    return 0


def cmd_show_config(args):
    sys.stdout.write(_resolve_config(args).to_json())
    return 0


def build_parser():
    p = _Parser(prog="mrtoc", description="Multi-rate task-oriented communication simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="progressive training; writes checkpoint and log")
    _add_config_args(t)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "accuracy at chosen levels / error rates"),
                                 ("sweep", cmd_sweep, "level x eps and level x BER tables")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        e.add_argument("--seed", type=int, help="channel-noise seed for evaluation")
        if name == "eval":
            e.add_argument("--level", type=int, action="append")
            e.add_argument("--eps", type=float, action="append")
            e.add_argument("--trials", type=int)
            e.add_argument("--output", help="CSV path (default: eval.csv next to the checkpoint)")
        else:
            e.add_argument("--out", help="output directory (default: checkpoint's directory)")
        e.set_defaults(func=func)

    s = sub.add_parser("select-level", help="largest coding level that meets the latency budget")
    s.add_argument("--vbit", type=float, required=True, help="affordable rate, bit/s")
    s.add_argument("--tau", type=float, required=True, help="latency budget, s")
    s.add_argument("--m", type=int, required=True, help="number of sub-vectors M")
    s.add_argument("--kmax", type=int, required=True, help="largest codebook size")
    s.set_defaults(func=cmd_select_level)

    d = sub.add_parser("dump-codebook", help="write the codebook as CSV")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--output", help="CSV path, '-' for stdout (default)")
    d.set_defaults(func=cmd_dump_codebook)

    g = sub.add_parser("gen-data", help="write the synthetic dataset as CSV")
    _add_config_args(g)
    g.add_argument("--output", help="CSV path (default: <output_dir>/blobs.csv)")
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("show-config", help="print the fully resolved config as JSON")
    _add_config_args(c)
    c.set_defaults(func=cmd_show_config)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"mrtoc: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mrtoc: config error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleRateError as exc:
        print(f"mrtoc: {exc}", file=sys.stderr)
        print(f"minimal feasible tau: {exc.min_tau:g}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ContractViolation, DivergenceError, IngestionError,
            NumericError, OSError) as exc:
        print(f"mrtoc: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
