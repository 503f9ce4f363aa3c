"""Command-line entry point: train, eval, verify-theory, report, make-dataset.

Exit codes: 0 success, 1 validation failure (bad flags, bad config values,
failed claims), 2 runtime error (missing or corrupt files, divergence).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from .errors import BitSNNError, InvalidArgument

OUT_ENV = "BITSNN_OUT"
DEFAULT_OUT = "runs"

log = logging.getLogger("bitsnn")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _config_help():
    from .training.config import config_keys

    lines = ["config keys ([section] key = default):"]
    for section, key, default in config_keys():
        lines.append(f"  [{section}] {key} = {default!r}" if key != "layers" else f"  [{section}] {default}")
    return "\n".join(lines)


def _default_out():
    return os.environ.get(OUT_ENV, DEFAULT_OUT)


def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    p = _Parser(prog="bitsnn", description="Bit-adaptive spiking network toolkit.",
                epilog=_config_help() + f"\n\nDefault output directory: ${OUT_ENV} or ./{DEFAULT_OUT}",
                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"bitsnn {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model from a config file", epilog=_config_help(),
                       formatter_class=fmt)
    t.add_argument("--config", required=True, help="TOML config file")
    t.add_argument("--out", default=None, help="output directory")
    t.add_argument("--seed", type=int, default=None, help="override [train] seed")
    t.add_argument("--epochs", type=int, default=None, help="override [train] epochs")

    e = sub.add_parser("eval", parents=[common], help="accuracy and cost report of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="IDX images file or CSV file")
    e.add_argument("--format", choices=("idx", "csv"), default="idx")
    e.add_argument("--out", default=None)

    v = sub.add_parser("verify-theory", parents=[common], help="check the analytic claims by Monte Carlo")
    v.add_argument("--out", default=None)
    v.add_argument("--n", type=int, default=1_000_000, help="samples per experiment")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("report", parents=[common], help="print the W/S/T, Bit Budget, S-ACE, NS-ACE, size row")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", default=None, help="optional data for firing rate and top-1")
    r.add_argument("--format", choices=("idx", "csv"), default="idx")

    m = sub.add_parser("make-dataset", parents=[common], help="write the bundled 8x8 digits set as IDX files")
    m.add_argument("--out", default=None)
    m.add_argument("--seed", type=int, default=0)
    return p


def _write_run_json(out, args, argv, seed, config=None, config_hash=None):
    record = {
        "command": args.command,
        "argv": list(argv),
        "seed": seed,
        "config_hash": config_hash,
        "config": config,
        "versions": {"bitsnn": __version__, "python": platform.python_version(), "numpy": np.__version__},
    }
    with open(os.path.join(out, "run.json"), "w") as f:
        json.dump(record, f, indent=2)
        f.write("\n")


def _resolve(path, base):
    if not path or os.path.isabs(path):
        return path
    return os.path.join(base, path)


def cmd_train(args, argv):
    from .training.checkpoint import save_checkpoint
    from .training.config import config_hash, load_config, with_overrides
    from .training.data import load_dataset
    from .training.trainer import train

    if not os.path.isfile(args.config):
        raise FileNotFoundError(2, "No such file", args.config)
    spec, cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, epochs=args.epochs)
    base = os.path.dirname(os.path.abspath(args.config))
    if not cfg.train_path:
        raise InvalidArgument("no training data: set [data] train_path")
    data = load_dataset(_resolve(cfg.train_path, base), cfg.data_format, num_classes=spec.num_classes)
    test = None
    if cfg.test_path:
        test = load_dataset(_resolve(cfg.test_path, base), cfg.data_format, num_classes=spec.num_classes)
    out = args.out or _default_out()
    os.makedirs(out, exist_ok=True)
    res = train(spec, cfg, data, test)
    save_checkpoint(res.checkpoint, os.path.join(out, "checkpoint"))
    for name, text in (("log.csv", res.log_csv()), ("renewal.csv", res.renewal_csv()),
                       ("alloc.csv", res.alloc_csv())):
        with open(os.path.join(out, name), "w") as f:
            f.write(text)
    _write_run_json(out, args, argv, cfg.seed, {"model": spec.to_dict(), "train": cfg.to_dict()},
                    config_hash(spec, cfg))
    last = res.log_rows[-1]
    print(f"trained {cfg.epochs} epochs: W/S/T {last[3]:.3f}/{last[4]:.3f}/{last[5]:.3f}, "
          f"accuracy {last[6]:.4f}; wrote {out}")
    return 0


def cmd_eval(args, argv):
    from .training.checkpoint import load_checkpoint
    from .training.data import load_dataset
    from .training.trainer import evaluate

    ckpt = load_checkpoint(args.ckpt)
    data = load_dataset(args.data, args.format, num_classes=ckpt.spec.num_classes)
    res = evaluate(ckpt, data)
    out = args.out or _default_out()
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "cost_report.json"), "w") as f:
        f.write(res["cost"].to_json() + "\n")
    with open(os.path.join(out, "cost_report.csv"), "w") as f:
        f.write(res["cost"].to_csv())
    _write_run_json(out, args, argv, None)
    print(f"accuracy {res['accuracy']:.4f} ({len(data)} samples), loss {res['loss']:.4f}")
    return 0


def cmd_verify(args, argv):
    from .theory import claims_csv, run_claims

    if args.n < 1:
        raise InvalidArgument("--n must be >= 1")
    claims = run_claims(args.n, args.seed, args.workers)
    out = args.out or _default_out()
    os.makedirs(out, exist_ok=True)
    text = claims_csv(claims)
    with open(os.path.join(out, "theory.csv"), "w") as f:
        f.write(text)
    _write_run_json(out, args, argv, args.seed)
    sys.stdout.write(text)
    failed = [c.claim for c in claims if not c.passed]
    if failed:
        print(f"{len(failed)} of {len(claims)} claims failed", file=sys.stderr)
        return 1
    return 0


REPORT_HEADER = ["W/S/T", "bit_budget", "S-ACE", "NS-ACE", "size_MB", "top1"]


def report_row(ckpt, data=None):
    """Table-style summary of a checkpoint; NS-ACE and top-1 need data."""
    from .training.trainer import cost_report, evaluate

    net = ckpt.network
    if data is not None:
        res = evaluate(ckpt, data)
        rep, top1 = res["cost"], f"{100 * res['accuracy']:.2f}"
    else:
        rep, top1 = cost_report(net, {"ones": 0, "slots": 0, "features": 0}), "-"
    t = rep.totals
    ns = f"{t['ns_ace']:.4g}" if data is not None else "-"
    return [f"{t['B_w']:.3g}/{t['B_s']:.3g}/{t['T']:.3g}", f"{t['bit_budget']:.4g}", f"{t['s_ace']:.4g}",
            ns, f"{t['size_mb']:.4g}", top1]


def cmd_report(args, argv):
    from .training.checkpoint import load_checkpoint
    from .training.data import load_dataset

    ckpt = load_checkpoint(args.ckpt)
    data = None
    if args.data:
        data = load_dataset(args.data, args.format, num_classes=ckpt.spec.num_classes)
    row = report_row(ckpt, data)
    print(",".join(REPORT_HEADER))
    print(",".join(row))
    return 0


def cmd_make_dataset(args, argv):
    from .training.data import make_digits

    out = args.out or _default_out()
    train_p, test_p = make_digits(out, seed=args.seed)
    print(f"train: {train_p}\ntest: {test_p}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "verify-theory": cmd_verify,
            "report": cmd_report, "make-dataset": cmd_make_dataset}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return 2
    except InvalidArgument as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (BitSNNError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
