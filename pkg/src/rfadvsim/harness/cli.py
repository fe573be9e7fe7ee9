"""Command-line entry point: ``rfadvsim <command> --config file.toml ...``.

Exit status: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from collections import OrderedDict

from ..classifier import accuracy
from ..errors import ConfigError, RfAdvError
from ..iqcore import write_dataset
from ..nnad import save_checkpoint
from . import sweep
from .config import load_config, validate
from .training import train_from_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(msg):
    print(msg, file=sys.stderr)


def cmd_synth(cfg, args):
    ds = sweep.load_dataset(cfg)
    write_dataset(ds, args.out)
    _log(f"wrote {len(ds)} records to {args.out}")


def cmd_train(cfg, args):
    ds = sweep.load_dataset(cfg)
    model = train_from_config(cfg, ds, "surrogate" if args.surrogate else "target", log=_log)
    save_checkpoint(args.out, model.state_dict())
    frames, labels = sweep.eval_set(cfg, ds)
    if len(frames):
        _log(f"clean accuracy at {cfg.eval.snr_db:g} dB: {accuracy(model, frames, labels):.4f}")


def cmd_defend_train(cfg, args):
    ds = sweep.load_dataset(cfg)
    model = train_from_config(cfg, ds, "defended", log=_log)
    save_checkpoint(args.out, model.state_dict())


def cmd_attack_sweep(cfg, args):
    sweep.write_csv(sweep.run_sweep(cfg, log=_log), args.out)


def cmd_broadcast_sweep(cfg, args):
    sweep.write_csv(sweep.run_broadcast(cfg, log=_log), args.out)


def cmd_certify(cfg, args):
    text = sweep.run_certify(cfg)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def summarize(points) -> str:
    """Table with one row per attack and one column per PNR."""
    pnrs = sorted({p.pnr_db for p in points})
    table = OrderedDict()
    for p in points:
        table.setdefault(p.attack, {})[p.pnr_db] = p.accuracy
    width = max([len("attack")] + [len(a) for a in table])
    lines = ["attack".ljust(width) + "".join(f"{x:>10g}" for x in pnrs)]
    for name, row in table.items():
        cells = "".join(f"{row[x]:>10.4f}" if x in row else f"{'-':>10}" for x in pnrs)
        lines.append(name.ljust(width) + cells)
    return "\n".join(lines) + "\n"


def cmd_report(cfg, args):
    points = []
    for path in args.csv:
        try:
            points += sweep.read_csv(path)
        except (KeyError, ValueError) as exc:
            raise RfAdvError(f"{path}: not a curve CSV ({exc})") from None
    text = summarize(points)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "synth": (cmd_synth, "synthesize a dataset file"),
    "train": (cmd_train, "train the classifier and write a checkpoint"),
    "attack-sweep": (cmd_attack_sweep, "accuracy vs PNR for the configured attacks"),
    "broadcast-sweep": (cmd_broadcast_sweep, "joint accuracy vs PNR for broadcast attacks"),
    "defend-train": (cmd_defend_train, "train on noise-augmented data"),
    "certify": (cmd_certify, "per-frame certified predictions under attack"),
    "report": (cmd_report, "merge curve CSVs into a summary table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfadvsim", description="Channel-aware adversarial attacks on a modulation classifier.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML experiment config")
        if name == "report":
            p.add_argument("csv", nargs="+", help="curve CSV files")
            p.add_argument("--out", help="write the table here instead of stdout")
        else:
            p.add_argument("--out", required=True, help="output file")
        if name in ("attack-sweep", "certify", "train", "defend-train", "synth", "broadcast-sweep"):
            p.add_argument("--data", help="dataset file (overrides dataset.path)")
        if name == "train":
            p.add_argument("--surrogate", action="store_true",
                           help="train the black-box surrogate (extra hidden layer, half the training split)")
        if name in ("attack-sweep", "certify"):
            p.add_argument("--model", help="checkpoint (overrides model.checkpoint)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if getattr(args, "data", None):
            cfg.dataset.path = args.data
        if getattr(args, "model", None):
            cfg.model.checkpoint = args.model
        validate(cfg)
        COMMANDS[args.command][0](cfg, args)
    except UsageError as exc:
        _log(str(exc))
        return 1
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 1
    except (RfAdvError, OSError, ValueError, ArithmeticError) as exc:
        _log(f"error: {exc}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
