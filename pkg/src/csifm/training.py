"""Pretraining losses and the stage-wise driver.

The driver runs up to three phases: contrastive training of the parameter
encoder (``param``), reconstruction plus structure guidance (``stage1``) and the
added parameter-aware alignment (``stage2``). Ablations only change the loss
weights; every component draws its initial weights from its own seed stream, so
turning a loss off never perturbs the others.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, AdamW, Module, Tensor
from .checkpoint import Checkpoint, load_checkpoint, params_digest, prefixed, save_checkpoint
from .errors import ConfigError, ContractError, DependencyError, NumericError
from .model import EncoderConfig, MaskedAutoencoder, batch_mask
from .pipeline import PipelineConfig, batch_std, iterate_batches
from .prior import (AugmentConfig, DescriptorStats, ParamEncoder, ParamEncoderConfig, ParamInput,
                    StructureHead, augment, build_descriptors, contrastive_loss_param)

log = logging.getLogger(__name__)

ABLATIONS = ("none", "no_sa", "no_pa", "plain_mae")
SIGMA_EPS = 1e-8

# seed-stream tags, one per independently initialised component
_MAE, _STRUCT, _ALIGN, _PARAM = 1, 2, 3, 4


def component_seed(seed: int, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), tag])


# ---------------------------------------------------------------------------
# weights and plans


@dataclass(frozen=True)
class LossWeights:
    mae: float = 1.0
    sa: float = 0.2
    pa: float = 0.0
    alpha: float = 0.7
    beta: float = 0.3
    kappa_pa: float = 0.5
    kappa_par: float = 0.07

    def __post_init__(self):
        for k in ("mae", "sa", "pa", "alpha", "beta"):
            if getattr(self, k) < 0:
                raise ConfigError(f"loss weight {k} must be nonnegative")
        if self.kappa_pa <= 0 or self.kappa_par <= 0:
            raise ConfigError("temperatures must be positive")


@dataclass(frozen=True)
class StageSpec:
    name: str
    epochs: int
    weights: LossWeights

    @property
    def needs_teacher(self) -> bool:
        return self.weights.pa > 0


@dataclass
class StagePlan:
    stages: list[StageSpec]
    param_epochs: int = 30

    @property
    def needs_param(self) -> bool:
        return any(s.needs_teacher for s in self.stages)

    def names(self) -> list[str]:
        return [s.name for s in self.stages]

    @classmethod
    def for_ablation(cls, ablation: str = "none", stage1_epochs: int = 30,
                     stage2_epochs: int = 20, param_epochs: int = 30) -> "StagePlan":
        """Stage I keeps (1.0, 0.2); Stage II uses (1.0, 0.05, 0.1); ablations zero terms."""
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
        use_sa = ablation in ("none", "no_pa")
        use_pa = ablation in ("none", "no_sa")
        s1 = LossWeights(mae=1.0, sa=0.2 if use_sa else 0.0, pa=0.0)
        s2 = LossWeights(mae=1.0, sa=0.05 if use_sa else 0.0, pa=0.1 if use_pa else 0.0)
        return cls([StageSpec("stage1", stage1_epochs, s1), StageSpec("stage2", stage2_epochs, s2)],
                   param_epochs=param_epochs)


# ---------------------------------------------------------------------------
# losses


def _guard(sigma: float) -> tuple[float, bool]:
    sigma = float(sigma)
    if not sigma > SIGMA_EPS:
        return sigma + SIGMA_EPS, True
    return sigma, False


def loss_mae(x_hat, x: np.ndarray, sigma_x: float) -> Tensor:
    """Mean over masked tokens (and batch) of ``||(x_k - x_hat_k) / sigma_x||^2``.

    ``x_hat`` and ``x`` hold only the masked tokens, shape ``(..., |M|, 2L)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ContractError("loss_mae needs at least one masked token")
    sigma, _ = _guard(sigma_x)
    diff = (ad.as_tensor(x_hat) - x) * (1.0 / sigma)
    n_tok = int(np.prod(x.shape[:-1]))
    return ad.tsum(diff * diff) * (1.0 / n_tok)


def loss_sa(s_hat, s: np.ndarray, sigma_s: float) -> Tensor:
    """``(1/(N_a N_f)) ||(s_hat - s)/sigma_s||^2``, averaged over any leading batch."""
    s = np.asarray(s, dtype=float)
    s_hat = ad.as_tensor(s_hat)
    if s_hat.shape != s.shape:
        raise ContractError(f"structure prediction {s_hat.shape} vs target {s.shape}")
    sigma, _ = _guard(sigma_s)
    diff = (s_hat - s) * (1.0 / sigma)
    return ad.tsum(diff * diff) * (1.0 / s.size)


def loss_rel(r, t: np.ndarray, kappa: float) -> Tensor:
    """Row-mean ``KL(softmax(T T^T / kappa) || softmax(R R^T / kappa))``."""
    r = ad.as_tensor(r)
    t = np.asarray(t, dtype=float)
    logits_t = t @ t.T / kappa
    logp_t = logits_t - logits_t.max(axis=-1, keepdims=True)
    logp_t = logp_t - np.log(np.exp(logp_t).sum(axis=-1, keepdims=True))
    p_t = np.exp(logp_t)
    logp_r = ad.log_softmax(ad.matmul(r, ad.transpose(r)) * (1.0 / kappa), axis=-1)
    kl = float(np.sum(p_t * logp_t)) - ad.tsum(logp_r * p_t)
    return kl * (1.0 / t.shape[0])


def loss_con(r, t: np.ndarray, kappa: float) -> Tensor:
    """InfoNCE with logits ``r_b . t_j / kappa``; the positive for row b is column b."""
    r = ad.as_tensor(r)
    b = r.shape[0]
    logp = ad.log_softmax(ad.matmul(r, np.asarray(t, float).T) * (1.0 / kappa), axis=-1)
    return -ad.mean(ad.getitem(logp, (np.arange(b), np.arange(b))))


def loss_pa(r, t: np.ndarray, weights: LossWeights) -> tuple[Tensor, Tensor, Tensor]:
    """``(L_rel, L_con, alpha L_rel + beta L_con)``; gradients reach ``r`` only."""
    t = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=float)
    if t.shape[0] == 0:
        raise ContractError("alignment loss needs a nonempty batch")
    rel = loss_rel(r, t, weights.kappa_pa)
    con = loss_con(r, t, weights.kappa_pa)
    return rel, con, rel * weights.alpha + con * weights.beta


def total_loss(components: dict, weights: LossWeights):
    """``lambda_mae L_MAE + lambda_sa L_SA + lambda_pa L_PA`` over the components present.

    Terms whose weight is zero are left out entirely (they need not be computed).
    """
    total = 0.0
    for key, w in (("mae", weights.mae), ("sa", weights.sa), ("pa", weights.pa)):
        if w > 0:
            if key not in components:
                raise ContractError(f"active loss term {key!r} missing")
            total = components[key] * w + total
    return total


# ---------------------------------------------------------------------------
# configs


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    prior: ParamEncoderConfig = field(default_factory=ParamEncoderConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    struct_hidden: int = 64
    struct_init_threshold: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.encoder.patch_len != self.pipeline.patch_len:
            raise ConfigError("encoder and pipeline patch lengths differ")
        if not 0 <= self.warmup_frac < 1:
            raise ConfigError("warmup fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pipeline"]["corruption"] = asdict(self.pipeline.corruption)
        return d


def warmup_lr(base: float, step: int, total_steps: int, frac: float) -> float:
    """Constant rate after a linear warmup over ``frac`` of the stage's steps."""
    warm = max(1, math.ceil(frac * total_steps))
    return base * min(1.0, (step + 1) / warm)


# ---------------------------------------------------------------------------
# model bundle


class AlignmentHead(Module):
    """SPA output -> two-layer MLP (d -> d_t) -> L2 normalisation."""

    def __init__(self, dim: int, target_dim: int, rng: np.random.Generator):
        self.mlp = MLP(dim, dim, target_dim, rng)

    def __call__(self, z0) -> Tensor:
        return ad.l2_normalize(self.mlp(z0), axis=-1)


@dataclass
class PretrainData:
    """Clean CSI plus normalised path descriptors, row-aligned."""

    h: np.ndarray
    descriptors: ParamInput | None = None

    def __len__(self) -> int:
        return len(self.h)

    @classmethod
    def from_dataset(cls, ds, stats: DescriptorStats | None = None) -> "PretrainData":
        if stats is None:
            stats = DescriptorStats.fit(ds.delays, ds.gains, ds.valid, ds.path_loss_db)
        desc = build_descriptors(ds.delays, ds.gains, ds.elevations, ds.azimuths, ds.valid,
                                 ds.path_loss_db, stats)
        return cls(ds.h, desc)


class Pretrainer:
    """MAE plus optional structure and alignment heads.

    ``with_prior=False`` builds the bare MAE, the reference for the ablation
    equivalence check.
    """

    def __init__(self, cfg: TrainConfig, with_prior: bool = True):
        self.cfg = cfg
        e = cfg.encoder
        self.mae = MaskedAutoencoder(e, component_seed(cfg.seed, _MAE))
        self.struct_head = self.align_head = None
        if with_prior:
            self.struct_head = StructureHead(
                e.dim, e.n_antennas * e.n_subcarriers,
                np.random.default_rng(component_seed(cfg.seed, _STRUCT)),
                hidden=cfg.struct_hidden, init_threshold=cfg.struct_init_threshold)
            self.align_head = AlignmentHead(
                e.dim, cfg.prior.target_dim, np.random.default_rng(component_seed(cfg.seed, _ALIGN)))

    def modules(self) -> dict[str, Module]:
        out = {"mae": self.mae}
        if self.struct_head is not None:
            out["struct"] = self.struct_head
            out["align"] = self.align_head
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name, m in self.modules().items():
            arrays.update(prefixed(name, m.state_dict()))
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, m in self.modules().items():
            sub = {k[len(name) + 1:]: v for k, v in arrays.items() if k.startswith(name + ".")}
            if sub:
                m.load_state_dict(sub)

    def trainable(self, weights: LossWeights) -> dict[str, Tensor]:
        params = prefixed("mae", self.mae.trainable_parameters())
        if weights.sa > 0:
            self._require_prior()
            params.update(prefixed("struct", self.struct_head.trainable_parameters()))
        if weights.pa > 0:
            self._require_prior()
            params.update(prefixed("align", self.align_head.trainable_parameters()))
        return params

    def _require_prior(self):
        if self.struct_head is None:
            raise ConfigError("guidance losses need the prior module")

    def encoder_digest(self) -> str:
        return params_digest(self.mae.encoder.state_dict())

    def batch_losses(self, x: np.ndarray, rows, segs, plan, s: np.ndarray | None,
                     teacher_t: np.ndarray | None, weights: LossWeights) -> dict:
        """Forward one masked batch; returns component losses and ``total``.

        ``sigma_x`` is taken over the masked target tokens and ``sigma_s`` over
        the batch's structure targets; guard hits are reported in ``flagged``.
        """
        b = x.shape[0]
        encoded, x_hat = self.mae.forward_masked(x, rows, segs, plan)
        target = x[np.arange(b)[:, None], plan.mask - 1]
        sx, flag_x = batch_std(target)
        out = {"mae": loss_mae(x_hat, target, sx), "flagged": flag_x}
        z0 = encoded[:, 0]
        if weights.sa > 0:
            self._require_prior()
            ss, flag_s = batch_std(s)
            out["sa"] = loss_sa(self.struct_head(z0), s, ss)
            out["flagged"] = out["flagged"] or flag_s
        if weights.pa > 0:
            self._require_prior()
            if teacher_t is None:
                raise DependencyError("parameter-aware loss needs teacher targets")
            out["rel"], out["con"], out["pa"] = loss_pa(self.align_head(z0), teacher_t, weights)
        out["total"] = total_loss(out, weights)
        return out


# ---------------------------------------------------------------------------
# parameter encoder


def new_param_encoder(cfg: TrainConfig) -> ParamEncoder:
    return ParamEncoder(cfg.prior, np.random.default_rng(component_seed(cfg.seed, _PARAM)))


def _check_finite(value: float, what: str, last_good: Path | None) -> None:
    if not math.isfinite(value):
        where = f"; last good checkpoint: {last_good}" if last_good else ""
        raise NumericError(f"non-finite {what}{where}")


def param_epoch_loss(enc: ParamEncoder, desc: ParamInput, cfg: TrainConfig, kappa: float,
                     epoch: int) -> float:
    """Contrastive loss over one pass of fixed views, without updating weights."""
    rng = np.random.default_rng([cfg.seed, _PARAM, epoch, 7])
    total, n = 0.0, 0
    with ad.no_grad():
        for idx in _order(len(desc), cfg.batch_size, cfg.seed, epoch, _PARAM):
            v = desc.take(idx)
            _, t1 = enc(augment(v, rng, cfg.augment))
            _, t2 = enc(augment(v, rng, cfg.augment))
            total += contrastive_loss_param(t1, t2, kappa).item() * len(idx)
            n += len(idx)
    return total / n


def _order(n: int, bs: int, seed: int, epoch: int, tag: int) -> list[np.ndarray]:
    perm = np.random.default_rng([int(seed), tag, int(epoch)]).permutation(n)
    return [perm[i: i + bs] for i in range(0, n, bs)]


def train_param_encoder(desc: ParamInput, cfg: TrainConfig, epochs: int,
                        kappa: float = 0.07, out_dir: str | Path | None = None,
                        stats: DescriptorStats | None = None,
                        metrics: "MetricsLog | None" = None) -> tuple[ParamEncoder, list[dict]]:
    """Dual-view NT-Xent training; the returned encoder is frozen."""
    enc = new_param_encoder(cfg)
    opt = AdamW(enc.trainable_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n_batches = math.ceil(len(desc) / cfg.batch_size)
    total_steps = epochs * n_batches
    history = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, _PARAM, epoch])
        acc, n = 0.0, 0
        for idx in _order(len(desc), cfg.batch_size, cfg.seed, epoch, _PARAM):
            v = desc.take(idx)
            _, t1 = enc(augment(v, rng, cfg.augment))
            _, t2 = enc(augment(v, rng, cfg.augment))
            loss = contrastive_loss_param(t1, t2, kappa)
            _check_finite(loss.item(), "parameter-encoder loss", None)
            opt.zero_grad()
            ad.backward(loss)
            opt.lr = warmup_lr(cfg.lr, opt.state.step, total_steps, cfg.warmup_frac)
            opt.step()
            acc += loss.item() * len(idx)
            n += len(idx)
        rec = {"stage": "param", "epoch": epoch + 1, "loss_param": acc / n,
               "wall_s": time.perf_counter() - t0}
        history.append(rec)
        if metrics is not None:
            metrics.append(rec)
    enc.freeze()
    if out_dir is not None:
        meta = {"epochs": epochs, "kappa_par": kappa, "config": cfg.to_dict(),
                "descriptor_stats": stats.to_dict() if stats else None}
        save_checkpoint(Path(out_dir) / "param.ckpt",
                        Checkpoint(prefixed("param", enc.state_dict()), "param", meta))
    return enc, history


def load_param_encoder(path: str | Path, cfg: TrainConfig) -> ParamEncoder:
    ckpt = load_checkpoint(path)
    if ckpt.stage != "param":
        raise DependencyError(f"{path} holds stage {ckpt.stage!r}, not a parameter encoder")
    enc = new_param_encoder(cfg)
    enc.load_state_dict(ckpt.subset("param"))
    enc.freeze()
    return enc


# ---------------------------------------------------------------------------
# metrics


class MetricsLog:
    """Line-delimited JSON per epoch, CSV summary on ``finish``."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path is not None and self.path.exists():
            self.records = [json.loads(line) for line in self.path.read_text().splitlines() if line]

    def append(self, rec: dict) -> None:
        self.records.append(rec)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    def drop_after(self, stage: str, epoch: int) -> None:
        """Forget records a resumed run is about to regenerate."""
        keep = [r for r in self.records if not (r["stage"] == stage and r["epoch"] > epoch)]
        if len(keep) != len(self.records):
            self.records = keep
            if self.path is not None:
                self.path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in keep))

    def finish(self, csv_path: str | Path) -> None:
        cols = ["stage", "epoch", "loss_total", "loss_mae", "loss_sa", "loss_rel", "loss_con",
                "loss_pa", "loss_param", "flagged", "wall_s"]
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.records:
                w.writerow(r)

    def series(self, stage: str, key: str) -> list[float]:
        return [r[key] for r in self.records if r["stage"] == stage and key in r]


# ---------------------------------------------------------------------------
# stage driver


@dataclass
class StageResult:
    name: str
    checkpoint: Path | None
    history: list[dict]
    encoder_digest_start: str
    encoder_digest_end: str


def _stage_ckpt(pre: Pretrainer, opt: AdamW, spec: StageSpec, epoch: int, meta: dict) -> Checkpoint:
    arrays = pre.state_arrays()
    arrays.update(prefixed("opt", opt.state_arrays()))
    meta = dict(meta, epoch=epoch, epochs=spec.epochs, opt_step=opt.state.step,
                weights=asdict(spec.weights))
    return Checkpoint(arrays, spec.name, meta)


def train_stage(pre: Pretrainer, data: PretrainData, spec: StageSpec, stage_index: int,
                teacher: ParamEncoder | None = None, out_dir: str | Path | None = None,
                metrics: MetricsLog | None = None, meta: dict | None = None,
                max_epochs: int | None = None) -> StageResult:
    """Run one stage with a fresh AdamW; resumes from ``<stage>.last.ckpt`` when present.

    ``max_epochs`` stops early (used to simulate an interrupted run).
    """
    cfg = pre.cfg
    w = spec.weights
    if spec.needs_teacher and (teacher is None or data.descriptors is None):
        raise DependencyError(f"{spec.name} needs a frozen parameter-encoder checkpoint")
    out = Path(out_dir) if out_dir is not None else None
    meta = dict(meta or {}, config=cfg.to_dict(), stage_index=stage_index)
    opt = AdamW(pre.trainable(w), lr=cfg.lr, weight_decay=cfg.weight_decay)
    start = 0
    last_path = out / f"{spec.name}.last.ckpt" if out else None
    if last_path is not None and last_path.exists():
        ck = load_checkpoint(last_path)
        pre.load_arrays(ck.arrays)
        opt.load_state_arrays(ck.subset("opt"), ck.meta["opt_step"])
        start = int(ck.meta["epoch"])
        log.info("resuming %s at epoch %d", spec.name, start + 1)
    if metrics is not None:
        metrics.drop_after(spec.name, start)
    digest_start = pre.encoder_digest()
    n_batches = math.ceil(len(data) / cfg.batch_size)
    total_steps = spec.epochs * n_batches
    e = cfg.encoder
    history = []
    stop = spec.epochs if max_epochs is None else min(spec.epochs, max_epochs)
    for epoch in range(start, stop):
        t0 = time.perf_counter()
        mask_rng = np.random.default_rng([cfg.seed, stage_index, epoch, 0x3A5C])
        sums: dict[str, float] = {}
        n, flagged = 0, 0
        for idx, tok, st in iterate_batches(data.h, cfg.pipeline, cfg.batch_size, cfg.seed,
                                            1000 * stage_index + epoch):
            plan = batch_mask(len(idx), e.n_tokens, e.mask_ratio, mask_rng)
            t = None
            if w.pa > 0:
                t = teacher(data.descriptors.take(idx))[1].data
            parts = pre.batch_losses(tok.x, tok.rows, tok.segments, plan, st.s, t, w)
            loss = parts["total"]
            _check_finite(loss.item(), f"{spec.name} loss at epoch {epoch + 1}",
                          last_path if last_path is not None and last_path.exists() else None)
            opt.zero_grad()
            ad.backward(loss)
            opt.lr = warmup_lr(cfg.lr, opt.state.step, total_steps, cfg.warmup_frac)
            opt.step()
            if pre.struct_head is not None:
                pre.struct_head.clamp_()
            flagged += bool(parts["flagged"])
            for k in ("total", "mae", "sa", "rel", "con", "pa"):
                if k in parts:
                    sums[k] = sums.get(k, 0.0) + parts[k].item() * len(idx)
            n += len(idx)
        rec = {"stage": spec.name, "epoch": epoch + 1, "flagged": flagged,
               "wall_s": time.perf_counter() - t0}
        rec.update({f"loss_{k}": v / n for k, v in sums.items()})
        history.append(rec)
        if metrics is not None:
            metrics.append(rec)
        if out is not None:
            save_checkpoint(last_path, _stage_ckpt(pre, opt, spec, epoch + 1, meta))
    final = None
    if out is not None and stop == spec.epochs:
        final = out / f"{spec.name}.ckpt"
        save_checkpoint(final, _stage_ckpt(pre, opt, spec, spec.epochs, meta))
    return StageResult(spec.name, final, history, digest_start, pre.encoder_digest())


def load_stage(pre: Pretrainer, path: str | Path, expect_stage: str | None = None) -> Checkpoint:
    ck = load_checkpoint(path)
    if expect_stage is not None and ck.stage != expect_stage:
        raise DependencyError(f"{path} holds stage {ck.stage!r}, expected {expect_stage!r}")
    pre.load_arrays(ck.arrays)
    return ck


def run_pretraining(data: PretrainData, cfg: TrainConfig, plan: StagePlan,
                    out_dir: str | Path | None = None, phases=("param", "stage1", "stage2"),
                    ablation: str = "none", stats: DescriptorStats | None = None,
                    teacher: ParamEncoder | None = None,
                    pretrainer: Pretrainer | None = None) -> dict:
    """Run the requested phases in plan order.

    Phases not requested must already have checkpoints in ``out_dir`` when a
    later phase depends on them. Returns ``{"pretrainer", "teacher", "stages",
    "metrics"}``.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics = MetricsLog(out / "metrics.jsonl" if out else None)
    meta = {"ablation": ablation}
    needs_prior = plan.needs_param or any(s.weights.sa > 0 for s in plan.stages)
    pre = pretrainer or Pretrainer(cfg, with_prior=needs_prior)

    if plan.needs_param and teacher is None:
        if "param" in phases:
            if data.descriptors is None:
                raise DependencyError("parameter-encoder training needs path descriptors")
            if out is not None and (out / "param.ckpt").exists():
                teacher = load_param_encoder(out / "param.ckpt", cfg)
            else:
                teacher, _ = train_param_encoder(data.descriptors, cfg, plan.param_epochs,
                                                 plan.stages[-1].weights.kappa_par, out, stats,
                                                 metrics)
        elif any(s.name in phases for s in plan.stages if s.needs_teacher):
            path = out / "param.ckpt" if out else None
            if path is None or not path.exists():
                raise DependencyError("stage2 requires a parameter-encoder checkpoint; run --stage param first")
            teacher = load_param_encoder(path, cfg)

    results = []
    prev: str | None = None
    for i, spec in enumerate(plan.stages, start=1):
        if spec.name not in phases:
            prev = spec.name
            continue
        if prev is not None and not any(r.name == prev for r in results):
            path = out / f"{prev}.ckpt" if out else None
            if path is None or not path.exists():
                raise DependencyError(f"{spec.name} requires a finished {prev} checkpoint")
            load_stage(pre, path, prev)
        done = out / f"{spec.name}.ckpt" if out else None
        if done is not None and done.exists():
            load_stage(pre, done, spec.name)
            log.info("%s already complete, skipping", spec.name)
            d = pre.encoder_digest()
            results.append(StageResult(spec.name, done, [], d, d))
        else:
            results.append(train_stage(pre, data, spec, i, teacher, out, metrics, meta))
        prev = spec.name
    if out is not None:
        metrics.finish(out / "metrics.csv")
    return {"pretrainer": pre, "teacher": teacher, "stages": results, "metrics": metrics}


def with_epochs(plan: StagePlan, **epochs: int) -> StagePlan:
    stages = [replace(s, epochs=epochs.get(s.name, s.epochs)) for s in plan.stages]
    return StagePlan(stages, epochs.get("param", plan.param_epochs))
