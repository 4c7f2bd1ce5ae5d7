"""Run-directory orchestration shared by the CLI and the experiment scripts.

Run directory layout::

    resolved_config.json
    data/{train,val,test}.bin + .json manifests
    <ablation>/param.ckpt, stage1.ckpt, stage2.ckpt, metrics.jsonl, metrics.csv
    eval/<task>.csv, eval/summary.csv
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import RunConfig, echo_config
from .dataset import CsiDataset, generate_scenario, read_dataset, read_manifest, write_dataset
from .downstream import Harness, MetricsReport, TaskSettings, summarize, write_summary
from .errors import DependencyError, DimensionError
from .model import CsiEncoder, MaskedAutoencoder
from .prior import DescriptorStats
from .training import PretrainData, run_pretraining

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def generate_split(cfg: RunConfig, split: str) -> CsiDataset:
    """Seen scenarios feed train/val; the test split holds unseen scenarios only.

    Sample ids are offset per split so no stream is ever reused.
    """
    sp = cfg.splits
    plan = {
        "train": (sp.seen_scenarios, sp.train_per_scenario, 0),
        "val": (sp.seen_scenarios, sp.val_per_scenario, 1_000_000),
        "test": (sp.unseen_scenarios, sp.test_per_scenario, 2_000_000),
    }[split]
    ids, n, offset = plan
    parts = [generate_scenario(cfg.scenario(i), n, cfg.carrier_lo, cfg.carrier_hi,
                               cfg.geometry_lo(), cfg.geometry_hi(), cfg.n_slots,
                               cfg.downstream.codebook_sizes, cfg.master_seed, offset)
             for i in ids]
    return CsiDataset.concatenate(parts)


def cmd_generate(cfg: RunConfig, run_dir: Path | None = None) -> dict[str, dict]:
    run_dir = Path(run_dir or cfg.resolved_output_dir())
    echo_config(cfg, run_dir)
    manifests = {}
    stats = None
    for split in SPLITS:
        ds = generate_split(cfg, split)
        if split == "train":
            stats = DescriptorStats.fit(ds.delays, ds.gains, ds.valid, ds.path_loss_db)
        manifest = {
            "split": split,
            "n_samples": len(ds),
            "scenario_ids": sorted(int(s) for s in np.unique(ds.scenario_id)),
            "config_hash": cfg.digest(),
            "master_seed": cfg.master_seed,
            "codebook_sizes": list(cfg.downstream.codebook_sizes),
            "descriptor_stats": stats.to_dict(),
        }
        manifests[split] = write_dataset(ds, run_dir / "data" / f"{split}.bin", manifest)
    return manifests


def load_split(run_dir: Path, split: str) -> CsiDataset:
    path = Path(run_dir) / "data" / f"{split}.bin"
    if not path.exists():
        raise DependencyError(f"dataset {path} missing; run `csifm generate` first")
    return read_dataset(path)


def descriptor_stats(run_dir: Path) -> DescriptorStats:
    m = read_manifest(Path(run_dir) / "data" / "train.json")
    return DescriptorStats(**m["descriptor_stats"])


PHASES = {"param": ("param",), "stage1": ("stage1",), "stage2": ("stage2",),
          "all": ("param", "stage1", "stage2")}


def cmd_pretrain(cfg: RunConfig, stage: str = "all", ablation: str = "none",
                 run_dir: Path | None = None) -> dict:
    run_dir = Path(run_dir or cfg.resolved_output_dir())
    echo_config(cfg, run_dir)
    ds = load_split(run_dir, "train")
    stats = descriptor_stats(run_dir)
    data = PretrainData.from_dataset(ds, stats)
    plan = cfg.plan(ablation)
    phases = PHASES[stage]
    if not plan.needs_param:
        phases = tuple(p for p in phases if p != "param")
    return run_pretraining(data, cfg.train, plan, run_dir / ablation, phases, ablation, stats)


def load_encoder(path: str | Path, cfg: RunConfig) -> CsiEncoder:
    """Encoder weights from any stage checkpoint; shape mismatches name both shapes."""
    ck = load_checkpoint(path)
    state = ck.subset("mae.encoder")
    if not state:
        raise DependencyError(f"{path} carries no encoder weights (stage {ck.stage!r})")
    enc = MaskedAutoencoder(cfg.train.encoder, 0).encoder
    expected = {k: v.shape for k, v in enc.state_dict().items()}
    for name, arr in state.items():
        if name in expected and arr.shape != expected[name]:
            raise DimensionError(
                f"encoder.{name}: checkpoint shape {arr.shape} vs config shape {expected[name]}")
    enc.load_state_dict(state)
    enc.freeze()
    return enc


def cmd_eval(cfg: RunConfig, tasks, encoders: dict[str, str | Path], run_dir: Path | None = None,
             seeds=None, settings: TaskSettings | None = None, **task_kw) -> tuple[MetricsReport, list[dict]]:
    """Evaluate each named encoder checkpoint on the unseen-scenario test split."""
    run_dir = Path(run_dir or cfg.resolved_output_dir())
    ds = load_split(run_dir, "test")
    settings = settings or TaskSettings.from_config(cfg.downstream)
    loaded = {name: load_encoder(p, cfg) for name, p in encoders.items()}
    full = MetricsReport()
    per_task: dict[str, MetricsReport] = {t: MetricsReport() for t in tasks}
    for seed in seeds or cfg.downstream.seeds:
        harness = Harness(ds, cfg.train.pipeline, settings, seed)
        for task in tasks:
            for i, (name, enc) in enumerate(loaded.items()):
                kw = dict(task_kw.get(task, {}))
                if task == "chest":
                    # LS and from-scratch baselines do not depend on the encoder
                    kw.setdefault("baselines", i == 0)
                rep = harness.run(task, name, enc, **kw)
                per_task[task].extend(rep)
                full.extend(rep)
    out = run_dir / "eval"
    for task, rep in per_task.items():
        rep.write_csv(out / f"{task}.csv")
    summary = summarize(full)
    write_summary(summary, out / "summary.csv")
    return full, summary


def check_head_parity(report: MetricsReport) -> list[str]:
    """Cells where two learned encoders disagree on the head config hash."""
    cells: dict[tuple, set] = {}
    for r in report.rows:
        if r.encoder in ("ls", "scratch"):
            continue
        key = (r.task, r.seed, r.ratio, str(r.snr_db), r.codebook_size)
        cells.setdefault(key, set()).add(r.head_hash)
    return [str(k) for k, v in cells.items() if len(v) > 1]

