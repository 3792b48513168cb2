"""``sgol`` command line: gen | train | eval | t2b | cross | verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import runs


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(runs.UsageError.code)


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", help="output directory")
    flags = {
        "seed": dict(type=int),
        "dataset": dict(help="dataset directory (holds manifest.json)"),
        "checkpoint": dict(help="model checkpoint path (with or without suffix)"),
        "classifier": dict(help="sketch classifier checkpoint"),
        "detector": dict(help="multi-class detector checkpoint"),
        "variant": dict(choices=runs.VARIANTS),
        "style_train": dict(choices=("A", "B")),
        "style_eval": dict(choices=("A", "B")),
        "threads": dict(type=int),
        "epochs": dict(type=int),
        "lr": dict(type=float),
    }
    for n in names:
        p.add_argument("--" + n.replace("_", "-"), dest=n, **flags[n])


def _bool(p: argparse.ArgumentParser, name: str, help: str) -> None:
    # default None so an unset flag does not override the config file
    p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_const", const=True, default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgol", description="Sketch-guided object localization on a synthetic shapes dataset.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="render the synthetic dataset")
    _common(p, "seed")

    p = sub.add_parser("train", help="train a detector, a sketch classifier or a conditioned model")
    _common(p, "seed", "dataset", "checkpoint", "detector", "classifier", "variant", "style_train", "epochs", "lr")
    _bool(p, "mask", "add the mask head (fine-tunes --checkpoint unless --pretrain-first)")
    _bool(p, "pretrain_first", "train the detector and classifier before a conditioned model")

    for name, text in (
        ("eval", "evaluate a conditioned model"),
        ("t2b", "evaluate the classify-then-filter baseline"),
        ("cross", "evaluate across sketch styles (Q&S and Q-S splits)"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p, "seed", "dataset", "checkpoint", "classifier", "style_train", "style_eval", "threads")
        _bool(p, "upper_bound", "use the true sketch class instead of the classifier (t2b)")
        _bool(p, "mask", "require mask metrics")
        _bool(p, "include_s_only", "also report S-Q classes (cross)")

    p = sub.add_parser("verify", help="run the oracle suites")
    _common(p, "seed")
    return parser


def _summary(command: str, result: dict) -> str:
    if command == "gen":
        return json.dumps(result, indent=1)
    if command == "verify":
        lines = [f"{'PASS' if c['passed'] else 'FAIL'} {c['suite']}/{c['name']}: {c['detail']}" for c in result["cases"]]
        lines.append(f"verify: {'all suites passed' if result['passed'] else 'FAILED'}")
        return "\n".join(lines)
    m = result["metrics"]
    lines = [f"{command}: digest {result['config_digest'][:12]}"]
    if command == "cross":
        for split, modes in m["splits"].items():
            for mode, r in modes.items():
                lines.append(f"  {split} {mode}: mAP {r['mAP']:.4f} AP50 {r['AP50']:.4f}")
    elif command in ("eval", "t2b"):
        for mode in ("box", "mask"):
            if mode in m:
                lines.append(f"  {mode}: mAP {m[mode]['mAP']:.4f} AP50 {m[mode]['AP50']:.4f}")
    else:
        for stage in ("detection", "classification", "mask"):
            if stage in m:
                losses = m[stage]["loss"]
                key = "total" if "total" in losses else "cross_entropy"
                lines.append(f"  {stage}: loss {losses[key][0]:.4f} -> {losses[key][-1]:.4f}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        result = runs.run(args.command, args.config, overrides)
    except runs.CommandError as exc:
        print(f"sgol {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"sgol {args.command}: {exc}", file=sys.stderr)
        return runs.MissingInputError.code
    print(_summary(args.command, result))
    if args.command == "verify" and not result["passed"]:
        return runs.VerificationError.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
