"""``csifm`` command line: generate, pretrain, eval, inspect.

Exit codes: 0 success, 1 usage, 2 config, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import load_config
from .dataset import read_manifest
from .downstream import TASKS
from .errors import ConfigError, CsiFmError
from .training import ABLATIONS
from . import workflow

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("csifm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csifm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("config", nargs="?", default=None,
                        help="JSON overrides layered on the checked-in defaults")
        sp.add_argument("--run-dir", default=None, help="overrides the config's output_dir")

    g = sub.add_parser("generate", help="write train/val/test datasets and manifests")
    with_config(g)

    t = sub.add_parser("pretrain", help="train the parameter encoder and the MAE stages")
    with_config(t)
    t.add_argument("--stage", choices=["param", "stage1", "stage2", "all"], default="all")
    t.add_argument("--ablation", choices=list(ABLATIONS), default="none")

    e = sub.add_parser("eval", help="frozen-backbone downstream evaluation")
    with_config(e)
    e.add_argument("--task", choices=[*TASKS, "all"], default="all")
    e.add_argument("--encoder", action="append", required=True, metavar="[NAME=]CHECKPOINT",
                   help="encoder checkpoint; repeat to compare encoders")

    i = sub.add_parser("inspect", help="print manifest or checkpoint metadata")
    i.add_argument("path")
    return p


def _encoders(specs: list[str]) -> dict[str, str]:
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).parent.name or Path(spec).stem, spec
        if name in out:
            name = f"{name}_{len(out)}"
        out[name] = path
    return out


def _inspect(path: str) -> dict:
    p = Path(path)
    if p.suffix == ".ckpt":
        ck = load_checkpoint(p)
        return {"kind": "checkpoint", "stage": ck.stage, "meta": ck.meta,
                "n_arrays": len(ck.arrays), "digest": ck.digest(),
                "arrays": {k: list(v.shape) for k, v in ck.arrays.items()}}
    if p.suffix in (".json", ".bin"):
        return {"kind": "dataset manifest", **read_manifest(p)}
    raise ConfigError(f"don't know how to inspect {p}")


def _print_summary(summary: list[dict]) -> None:
    print(f"{'task':6} {'encoder':12} {'ratio':>6} {'snr':>5} {'cb':>3} {'metric':8} {'mean':>9} {'se':>7} n")
    for r in summary:
        cb = "" if r["codebook_size"] is None else r["codebook_size"]
        print(f"{r['task']:6} {r['encoder']:12} {r['ratio']:6.2f} {r['snr_db']:>5} {cb!s:>3} "
              f"{r['metric']:8} {r['mean']:9.4f} {r['stderr']:7.4f} {r['n_seeds']}")


def run(args: argparse.Namespace) -> int:
    if args.command == "inspect":
        print(json.dumps(_inspect(args.path), indent=2, default=str))
        return EXIT_OK
    overrides = {"output_dir": args.run_dir} if args.run_dir else None
    cfg = load_config(args.config, overrides)
    run_dir = cfg.resolved_output_dir()
    if args.command == "generate":
        manifests = workflow.cmd_generate(cfg, run_dir)
        for split, m in manifests.items():
            print(f"{split}: {m['n_samples']} samples, scenarios {m['scenario_ids']}")
        return EXIT_OK
    if args.command == "pretrain":
        res = workflow.cmd_pretrain(cfg, args.stage, args.ablation, run_dir)
        for st in res["stages"]:
            print(f"{st.name}: {st.checkpoint}")
        return EXIT_OK
    if args.command == "eval":
        tasks = list(TASKS) if args.task == "all" else [args.task]
        report, summary = workflow.cmd_eval(cfg, tasks, _encoders(args.encoder), run_dir)
        _print_summary(summary)
        bad = workflow.check_head_parity(report)
        if bad:
            print(f"head-config parity violated in {len(bad)} cells", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    return EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CsiFmError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
