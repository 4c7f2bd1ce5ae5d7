"""Pretrain SPA-MAE, its single-guidance variants and plain MAE over several seeds, then
compare them on the unseen-scenario downstream tasks.

Variants sharing identical Stage I weights (SPA-MAE / w/o L_PA, and plain / w/o L_SA)
reuse one Stage I run; the second would be bit-identical anyway.

Example::

    python scripts/ablation_sweep.py --seeds 0 1 2 3 4 --out runs/ablation
"""

from __future__ import annotations

import argparse
import json
import shutil
import time
from dataclasses import replace
from pathlib import Path

from csifm.config import load_config
from csifm.downstream import Harness, MetricsReport, TaskSettings, summarize, write_summary
from csifm.training import PretrainData, run_pretraining
from csifm.workflow import cmd_generate, descriptor_stats, load_encoder, load_split

# twins run after their Stage I source
VARIANTS = ("none", "plain_mae", "no_pa", "no_sa")
STAGE1_TWIN = {"no_pa": "none", "no_sa": "plain_mae"}


def pretrain_variants(cfg, run_dir: Path, seed: int, variants=VARIANTS) -> dict[str, Path]:
    stats = descriptor_stats(run_dir)
    data = PretrainData.from_dataset(load_split(run_dir, "train"), stats)
    tcfg = replace(cfg.train, seed=seed)
    teacher = None
    out = {}
    for v in sorted(variants, key=VARIANTS.index):
        vdir = run_dir / f"seed{seed}" / v
        twin = STAGE1_TWIN.get(v)
        src = run_dir / f"seed{seed}" / twin / "stage1.ckpt" if twin else None
        if src is not None and src.exists() and not (vdir / "stage1.ckpt").exists():
            vdir.mkdir(parents=True, exist_ok=True)
            shutil.copy(src, vdir / "stage1.ckpt")
        plan = cfg.plan(v)
        shared = run_dir / f"seed{seed}" / "param.ckpt"
        if plan.needs_param and shared.exists() and not (vdir / "param.ckpt").exists():
            vdir.mkdir(parents=True, exist_ok=True)
            shutil.copy(shared, vdir / "param.ckpt")
        res = run_pretraining(data, tcfg, plan, vdir, ablation=v, stats=stats, teacher=teacher)
        if plan.needs_param and not shared.exists():
            shutil.copy(vdir / "param.ckpt", shared)
        out[v] = vdir / "stage2.ckpt"
    return out


def evaluate(cfg, run_dir: Path, ckpts: dict[str, Path], seed: int, settings: TaskSettings,
             tasks: dict[str, dict]) -> MetricsReport:
    ds = load_split(run_dir, "test")
    harness = Harness(ds, cfg.train.pipeline, settings, seed)
    rep = MetricsReport()
    for i, (name, path) in enumerate(ckpts.items()):
        enc = load_encoder(path, cfg)
        for task, kw in tasks.items():
            kw = dict(kw)
            if task == "chest":
                kw["baselines"] = i == 0
            rep.extend(harness.run(task, name, enc, **kw))
    return rep


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    args = ap.parse_args(argv)

    cfg = load_config(args.config, {"output_dir": args.out})
    run_dir = cfg.resolved_output_dir()
    if not (run_dir / "data" / "test.bin").exists():
        cmd_generate(cfg, run_dir)
    settings = TaskSettings.from_config(cfg.downstream)
    tasks = {"los": {"snrs": (0.0,)}, "pos": {"snrs": (float("inf"),)},
             "beam": {}, "chest": {"snrs": (10.0,)}}
    report = MetricsReport()
    for seed in args.seeds:
        t0 = time.perf_counter()
        ckpts = pretrain_variants(cfg, run_dir, seed, args.variants)
        report.extend(evaluate(cfg, run_dir, ckpts, seed, settings, tasks))
        print(f"seed {seed} done in {time.perf_counter() - t0:.0f}s", flush=True)
        report.write_csv(run_dir / "ablation_rows.csv")
    summary = summarize(report)
    write_summary(summary, run_dir / "ablation_summary.csv")
    print(json.dumps([r for r in summary if r["encoder"] in args.variants], indent=1))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
