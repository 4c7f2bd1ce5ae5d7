"""Frozen-backbone transfer harness: LoS/NLoS, positioning, beam prediction, channel estimation.

Every head for a given (task, seed, ratio, SNR) cell sees the same data order,
initialisation seed and budget whichever encoder produced its features; the
``head_hash`` column of each report row makes that checkable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, AdamW, LayerNorm, Linear, Module, Tensor, TransformerBlock
from .checkpoint import params_digest
from .dataset import CsiDataset, config_hash
from .errors import ConfigError, ContractError
from .model import CsiEncoder, EncoderConfig
from .pipeline import PipelineConfig, add_noise_at_snr, detokenize, make_tokens, tokenize

TASKS = ("los", "pos", "beam", "chest")


# ---------------------------------------------------------------------------
# metrics


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean F1 over every label seen in either array."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ContractError("macro_f1 needs equal-length nonempty label arrays")
    scores = []
    for c in np.union1d(y_true, y_pred):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def nmse_db(h_hat: np.ndarray, h: np.ndarray) -> float:
    """``10 log10(sum |H_hat - H|^2 / sum |H|^2)`` pooled over the batch."""
    err = np.sum(np.abs(np.asarray(h_hat) - np.asarray(h)) ** 2)
    ref = np.sum(np.abs(np.asarray(h)) ** 2)
    if ref == 0:
        raise ContractError("NMSE undefined for an all-zero reference")
    return float(10 * np.log10(err / ref)) if err > 0 else -np.inf


def mean_distance_error(pred: np.ndarray, true: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(pred) - np.asarray(true), axis=-1)))


# ---------------------------------------------------------------------------
# features


def feature_extract(encoder: CsiEncoder, h: np.ndarray, pipeline: PipelineConfig,
                    mode: str = "spa", batch: int = 256) -> np.ndarray:
    """Unmasked forward pass: ``spa`` gives ``z_0`` (N, d); ``full`` gives flattened F (N, (K+1) d)."""
    if mode not in ("spa", "full"):
        raise ConfigError(f"unknown feature mode {mode!r}")
    out = []
    with ad.no_grad():
        for i in range(0, len(h), batch):
            tok = make_tokens(h[i: i + batch], pipeline)
            f = encoder(tok.x, tok.rows, tok.segments).data
            out.append(f[:, 0] if mode == "spa" else f.reshape(len(f), -1))
    return np.concatenate(out) if out else np.zeros((0, encoder.cfg.dim))


def encoder_digest(encoder: CsiEncoder) -> str:
    return params_digest(encoder.state_dict())


# ---------------------------------------------------------------------------
# LS estimation


@dataclass(frozen=True)
class PilotConfig:
    stride_antenna: int = 2
    stride_freq: int = 2

    def mask(self, n_a: int, n_f: int) -> np.ndarray:
        m = np.zeros((n_a, n_f), bool)
        m[:: self.stride_antenna, :: self.stride_freq] = True
        return m


def _interp_axis(values: np.ndarray, known: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation along ``axis`` from the ``known`` positions, edges held."""
    v = np.moveaxis(values, axis, -1)
    n = v.shape[-1]
    flat = v.reshape(-1, n)
    out = np.empty_like(flat)
    grid = np.arange(n)
    for i, row in enumerate(flat):
        out[i] = (np.interp(grid, known, row[known].real)
                  + 1j * np.interp(grid, known, row[known].imag))
    return np.moveaxis(out.reshape(v.shape), -1, axis)


def ls_estimate(y: np.ndarray, pilot_mask: np.ndarray, pilot_symbols: np.ndarray) -> np.ndarray:
    """Per-pilot ``Y / X`` then bilinear fill over the (antenna, frequency) grid.

    Pilots must sit on a lattice (product of pilot rows and pilot columns).
    Works on one grid or a leading batch.
    """
    y = np.asarray(y, complex)
    mask = np.asarray(pilot_mask, bool)
    x = np.asarray(pilot_symbols, complex)
    if np.any(np.abs(x[np.broadcast_to(mask, x.shape)]) == 0):
        raise ContractError("pilot symbol of zero magnitude")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if not np.array_equal(mask, np.outer(mask.any(axis=1), mask.any(axis=0))):
        raise ContractError("pilot pattern must be a row x column lattice")
    safe = np.where(np.broadcast_to(mask, x.shape), x, 1.0)
    h = np.where(mask, y / safe, 0.0)
    if len(cols) < mask.shape[1]:
        sub = _interp_axis(h[..., rows, :], cols, axis=-1)
        h[..., rows, :] = sub
    if len(rows) < mask.shape[0]:
        h = _interp_axis(h, rows, axis=-2)
    return h


def pilot_observation(h: np.ndarray, pilots: PilotConfig, snr_db: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """QPSK pilots, AWGN at per-sample SNR; returns ``(Y, mask, X)``."""
    h = np.asarray(h, complex)
    mask = pilots.mask(*h.shape[-2:])
    x = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=h.shape)))
    y = x * h
    if np.isfinite(snr_db):
        power = np.mean(np.abs(h) ** 2, axis=(-2, -1), keepdims=True)
        var = power / 10 ** (snr_db / 10)
        noise = rng.normal(size=h.shape) + 1j * rng.normal(size=h.shape)
        y = y + np.sqrt(var / 2) * noise
    return np.where(mask, y, 0.0), mask, x


# ---------------------------------------------------------------------------
# heads


@dataclass
class HeadConfig:
    task: str
    arch: str
    hidden: int = 64
    epochs: int = 60
    lr: float = 3e-3
    batch: int = 64
    seed: int = 0
    ratio: float = 1.0
    snr_db: float = float("inf")
    codebook_size: int | None = None

    def digest(self) -> str:
        d = asdict(self)
        d["snr_db"] = str(self.snr_db)
        return config_hash(d)[:16]


class LogisticHead(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.linear = Linear(dim, 1, rng)

    def __call__(self, x) -> Tensor:
        return self.linear(x)


def _standardise(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return [(a - mu) / sd for a in (train, *others)]


def _fit(head: Module, x: np.ndarray, loss_fn, cfg: HeadConfig) -> list[float]:
    """Minibatch AdamW; data order depends only on ``cfg.seed``."""
    opt = AdamW(head.trainable_parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 0xD0])
    bs = max(1, min(cfg.batch, len(x)))
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(x))
        acc = 0.0
        for i in range(0, len(x), bs):
            idx = perm[i: i + bs]
            loss = loss_fn(idx)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            acc += loss.item() * len(idx)
        losses.append(acc / len(x))
    return losses


def _predict(head: Module, x: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return head(x).data


def _ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = ad.log_softmax(logits, axis=-1)
    return -ad.mean(ad.getitem(logp, (np.arange(len(labels)), labels)))


def train_los_head(f_train, y_train, f_eval, cfg: HeadConfig) -> np.ndarray:
    """Logistic regression on ``z_0``; returns eval predictions in {0, 1}."""
    y_train = np.asarray(y_train).astype(int)
    if len(np.unique(y_train)) < 2:
        raise ContractError("LoS training split holds a single class")
    f_train, f_eval = _standardise(f_train, f_eval)
    head = LogisticHead(f_train.shape[1], np.random.default_rng([cfg.seed, 1]))

    def loss(idx):
        z = head(f_train[idx])
        # binary cross-entropy on logits as a two-way softmax over [0, z]
        two = ad.concat([ad.as_tensor(np.zeros((len(idx), 1))), z], axis=-1)
        return _ce(two, y_train[idx])

    _fit(head, f_train, loss, cfg)
    return (_predict(head, f_eval)[:, 0] > 0).astype(int)


def train_pos_head(f_train, p_train, f_eval, cfg: HeadConfig) -> np.ndarray:
    """Two-layer MLP regressor; targets standardised on the train split."""
    f_train, f_eval = _standardise(f_train, f_eval)
    mu, sd = p_train.mean(axis=0), p_train.std(axis=0) + 1e-9
    target = (p_train - mu) / sd
    head = MLP(f_train.shape[1], cfg.hidden, 2, np.random.default_rng([cfg.seed, 2]))

    def loss(idx):
        d = head(f_train[idx]) - target[idx]
        return ad.mean(d * d)

    _fit(head, f_train, loss, cfg)
    return _predict(head, f_eval) * sd + mu


def train_beam_head(f_train, y_train, f_eval, n_classes: int, cfg: HeadConfig) -> np.ndarray:
    """MLP classifier on flattened F (stands in for a residual 1D-CNN predictor)."""
    f_train, f_eval = _standardise(f_train, f_eval)
    head = MLP(f_train.shape[1], cfg.hidden, n_classes, np.random.default_rng([cfg.seed, 3]))
    y_train = np.asarray(y_train).astype(int)
    _fit(head, f_train, lambda idx: _ce(head(f_train[idx]), y_train[idx]), cfg)
    return np.argmax(_predict(head, f_eval), axis=-1)


class ChestPredictor(Module):
    """Backbone features ``(B, K+1, d)`` -> 2 transformer blocks -> per-token CSI values."""

    def __init__(self, in_dim: int, token_dim: int, dim: int, depth: int, heads: int,
                 rng: np.random.Generator):
        self.proj_in = Linear(in_dim, dim, rng)
        self.blocks = [TransformerBlock(dim, heads, 2, rng) for _ in range(depth)]
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, token_dim, rng)

    def __call__(self, f) -> Tensor:
        z = self.proj_in(f)
        for blk in self.blocks:
            z = blk(z)
        return self.head(self.norm(z))[:, 1:]


class ScratchChest(Module):
    """Same backbone architecture trained end to end with the predictor."""

    def __init__(self, enc_cfg: EncoderConfig, pred: ChestPredictor, rng: np.random.Generator):
        self.encoder = CsiEncoder(enc_cfg, rng)
        self.pred = pred

    def __call__(self, tokens) -> Tensor:
        x, rows, segs = tokens
        return self.pred(self.encoder(x, rows, segs))


def chest_targets(h: np.ndarray, h_ls: np.ndarray, patch_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Token targets of ``H / max|H_ls|`` and the per-sample scale."""
    scale = np.abs(h_ls).max(axis=(-2, -1))
    scale = np.where(scale > 0, scale, 1.0)
    x, _, _ = tokenize(h / scale[:, None, None], patch_len)
    return x, scale


def train_chest(features_train, target_train, features_eval, cfg: HeadConfig, enc_cfg: EncoderConfig,
                dim: int, depth: int, scratch_tokens=None) -> np.ndarray:
    """Fit the predictor on frozen features (or end to end when ``scratch_tokens`` is given)."""
    rng = np.random.default_rng([cfg.seed, 4])
    if scratch_tokens is None:
        in_dim = features_train.shape[-1]
        model = ChestPredictor(in_dim, enc_cfg.token_dim, dim, depth, enc_cfg.heads, rng)
        fwd_train = lambda idx: model(features_train[idx])
        fwd_eval = lambda: model(features_eval)
    else:
        pred = ChestPredictor(enc_cfg.dim, enc_cfg.token_dim, dim, depth, enc_cfg.heads, rng)
        model = ScratchChest(enc_cfg, pred, np.random.default_rng([cfg.seed, 5]))
        (xt, rows, segs), (xe, _, _) = scratch_tokens
        fwd_train = lambda idx: model((xt[idx], rows, segs))
        fwd_eval = lambda: model((xe, rows, segs))

    def loss(idx):
        d = fwd_train(idx) - target_train[idx]
        return ad.mean(d * d)

    _fit(model, target_train, loss, cfg)
    with ad.no_grad():
        return fwd_eval().data


# ---------------------------------------------------------------------------
# harness


@dataclass
class TaskSettings:
    ratios: tuple[float, ...] = (0.01, 0.05, 0.1, 0.5, 1.0)
    snrs_db: tuple[float, ...] = (0.0, 10.0, 20.0, float("inf"))
    los_snrs_db: tuple[float, ...] = (0.0, 20.0)
    codebook_sizes: tuple[int, ...] = (8, 16, 32)
    head_train_fraction: float = 0.7
    head_epochs: int = 60
    head_lr: float = 3e-3
    head_batch: int = 64
    head_hidden: int = 64
    pilots: PilotConfig = field(default_factory=PilotConfig)
    chest_epochs: int = 40
    chest_dim: int = 32
    chest_depth: int = 2
    chest_scratch: bool = True
    min_train: int = 8

    @classmethod
    def from_config(cls, d) -> "TaskSettings":
        return cls(ratios=tuple(d.train_ratios), snrs_db=tuple(d.eval_snrs_db),
                   los_snrs_db=tuple(d.los_snrs_db), codebook_sizes=tuple(d.codebook_sizes),
                   head_train_fraction=d.head_train_fraction, head_epochs=d.head_epochs,
                   head_lr=d.head_lr, head_batch=d.head_batch, head_hidden=d.head_hidden,
                   pilots=PilotConfig(*d.pilot_stride), chest_epochs=d.chest_epochs,
                   chest_dim=d.chest_dim, chest_depth=d.chest_depth)


@dataclass
class ReportRow:
    task: str
    seed: int
    encoder: str
    ratio: float
    snr_db: float
    metric: str
    value: float
    codebook_size: int | None = None
    head_hash: str = ""


@dataclass
class MetricsReport:
    rows: list[ReportRow] = field(default_factory=list)

    def extend(self, other: "MetricsReport") -> None:
        self.rows.extend(other.rows)

    def select(self, **kw) -> list[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def values(self, **kw) -> np.ndarray:
        return np.array([r.value for r in self.select(**kw)])

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["task", "seed", "encoder", "ratio", "snr_db", "codebook_size", "metric", "value",
                "head_hash"]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                d = asdict(r)
                d["value"] = repr(float(r.value))
                w.writerow(d)
        return path


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 0x5B]).permutation(n)
    cut = int(round(fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def ratio_subset(train_idx: np.ndarray, ratio: float, seed: int, minimum: int) -> np.ndarray:
    """First ``ratio`` share of a fixed seeded order, so smaller ratios nest in larger ones."""
    order = np.random.default_rng([seed, 0x5C]).permutation(train_idx)
    k = min(len(order), max(minimum, int(round(ratio * len(order)))))
    return np.sort(order[:k])


def _noisy(h: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    tag = 0 if not np.isfinite(snr_db) else int(round(10 * snr_db)) + 10_000
    return add_noise_at_snr(h, snr_db, np.random.default_rng([seed, 0x4E, tag]))


class Harness:
    """Runs tasks for one or more named encoders on one labelled dataset."""

    def __init__(self, ds: CsiDataset, pipeline: PipelineConfig, settings: TaskSettings, seed: int = 0):
        self.ds = ds
        self.pipeline = pipeline
        self.settings = settings
        self.seed = seed
        self.train_idx, self.eval_idx = split_indices(len(ds), settings.head_train_fraction, seed)
        self._cache: dict = {}

    def _head_cfg(self, task, arch, ratio, snr, epochs=None, codebook=None) -> HeadConfig:
        s = self.settings
        return HeadConfig(task, arch, s.head_hidden, epochs or s.head_epochs, s.head_lr,
                          s.head_batch, self.seed, ratio, snr, codebook)

    def _features(self, name: str, encoder: CsiEncoder, snr: float, mode: str) -> np.ndarray:
        key = (name, snr, mode)
        if key not in self._cache:
            self._cache[key] = feature_extract(encoder, _noisy(self.ds.h, snr, self.seed),
                                               self.pipeline, mode)
        return self._cache[key]

    def _subset(self, ratio):
        return ratio_subset(self.train_idx, ratio, self.seed, self.settings.min_train)

    def run_los(self, name: str, encoder: CsiEncoder, ratios=None, snrs=None) -> MetricsReport:
        rep = MetricsReport()
        y = self.ds.los.astype(int)
        for snr in snrs or self.settings.los_snrs_db:
            f = self._features(name, encoder, snr, "spa")
            for ratio in ratios or self.settings.ratios:
                tr = self._subset(ratio)
                cfg = self._head_cfg("los", "logistic", ratio, snr)
                pred = train_los_head(f[tr], y[tr], f[self.eval_idx], cfg)
                rep.rows.append(ReportRow("los", self.seed, name, ratio, snr, "f1",
                                          macro_f1(y[self.eval_idx], pred), None, cfg.digest()))
        return rep

    def run_pos(self, name: str, encoder: CsiEncoder, ratios=None, snrs=None) -> MetricsReport:
        rep = MetricsReport()
        p = self.ds.position
        for snr in snrs or self.settings.snrs_db:
            f = self._features(name, encoder, snr, "spa")
            for ratio in ratios or self.settings.ratios:
                tr = self._subset(ratio)
                cfg = self._head_cfg("pos", "mlp2", ratio, snr)
                pred = train_pos_head(f[tr], p[tr], f[self.eval_idx], cfg)
                rep.rows.append(ReportRow("pos", self.seed, name, ratio, snr, "mde_m",
                                          mean_distance_error(pred, p[self.eval_idx]), None,
                                          cfg.digest()))
        return rep

    def run_beam(self, name: str, encoder: CsiEncoder, ratios=None, snrs=None,
                 sizes=None) -> MetricsReport:
        rep = MetricsReport()
        for size in sizes or self.settings.codebook_sizes:
            y = self.ds.beam_labels(size)
            for snr in snrs or (float("inf"),):
                f = self._features(name, encoder, snr, "full")
                for ratio in ratios or self.settings.ratios:
                    tr = self._subset(ratio)
                    cfg = self._head_cfg("beam", "mlp2", ratio, snr, codebook=size)
                    if size == 1:
                        pred = np.zeros(len(self.eval_idx), int)
                    else:
                        pred = train_beam_head(f[tr], y[tr], f[self.eval_idx], size, cfg)
                    rep.rows.append(ReportRow("beam", self.seed, name, ratio, snr, "f1",
                                              macro_f1(y[self.eval_idx], pred), size, cfg.digest()))
        return rep

    def chest_inputs(self, snr: float):
        """LS grids and normalised token targets for the whole dataset at one SNR."""
        key = ("chest", snr)
        if key not in self._cache:
            tag = 0 if not np.isfinite(snr) else int(round(10 * snr)) + 10_000
            rng = np.random.default_rng([self.seed, 0xC4, tag])
            y, mask, x = pilot_observation(self.ds.h, self.settings.pilots, snr, rng)
            h_ls = ls_estimate(y, mask, x)
            target, scale = chest_targets(self.ds.h, h_ls, self.pipeline.patch_len)
            self._cache[key] = (h_ls, target, scale)
        return self._cache[key]

    def run_chest(self, name: str, encoder: CsiEncoder, ratios=None, snrs=None,
                  baselines: bool = True) -> MetricsReport:
        rep = MetricsReport()
        s = self.settings
        n_a, n_f = self.ds.h.shape[1:]
        enc_cfg = encoder.cfg
        for snr in snrs or s.snrs_db:
            h_ls, target, scale = self.chest_inputs(snr)
            tok = make_tokens(h_ls, self.pipeline)
            with ad.no_grad():
                feats = np.concatenate([encoder(tok.x[i: i + 256], tok.rows, tok.segments).data
                                        for i in range(0, len(h_ls), 256)])
            h_ref = self.ds.h[self.eval_idx]
            for ratio in ratios or s.ratios:
                tr = self._subset(ratio)
                cfg = self._head_cfg("chest", f"tf{s.chest_depth}", ratio, snr, epochs=s.chest_epochs)
                out = train_chest(feats[tr], target[tr], feats[self.eval_idx], cfg, enc_cfg,
                                  s.chest_dim, s.chest_depth)
                h_hat = detokenize(out, n_a, n_f) * scale[self.eval_idx, None, None]
                rep.rows.append(ReportRow("chest", self.seed, name, ratio, snr, "nmse_db",
                                          nmse_db(h_hat, h_ref), None, cfg.digest()))
                if baselines:
                    rep.rows.append(ReportRow("chest", self.seed, "ls", ratio, snr, "nmse_db",
                                              nmse_db(h_ls[self.eval_idx], h_ref), None, "ls"))
                    if s.chest_scratch:
                        toks = ((tok.x[tr], tok.rows, tok.segments),
                                (tok.x[self.eval_idx], tok.rows, tok.segments))
                        out = train_chest(None, target[tr], None, cfg, enc_cfg, s.chest_dim,
                                          s.chest_depth, scratch_tokens=toks)
                        h_hat = detokenize(out, n_a, n_f) * scale[self.eval_idx, None, None]
                        rep.rows.append(ReportRow("chest", self.seed, "scratch", ratio, snr,
                                                  "nmse_db", nmse_db(h_hat, h_ref), None,
                                                  cfg.digest()))
        return rep

    def run(self, task: str, name: str, encoder: CsiEncoder, **kw) -> MetricsReport:
        """Run one task, asserting the backbone is untouched."""
        before = encoder_digest(encoder)
        fn = {"los": self.run_los, "pos": self.run_pos, "beam": self.run_beam,
              "chest": self.run_chest}.get(task)
        if fn is None:
            raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
        rep = fn(name, encoder, **kw)
        if encoder_digest(encoder) != before:
            raise ContractError(f"{task}: backbone parameters changed during head training")
        return rep


def summarize(report: MetricsReport) -> list[dict]:
    """Mean and standard error per (task, encoder, ratio, SNR, codebook) over seeds."""
    groups: dict[tuple, list[float]] = {}
    for r in report.rows:
        key = (r.task, r.encoder, r.ratio, str(r.snr_db), r.codebook_size, r.metric)
        groups.setdefault(key, []).append(r.value)
    out = []
    for (task, enc, ratio, snr, cb, metric), vals in sorted(groups.items(), key=lambda kv: str(kv[0])):
        v = np.asarray(vals, float)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
        out.append({"task": task, "encoder": enc, "ratio": ratio, "snr_db": snr,
                    "codebook_size": cb, "metric": metric, "mean": float(v.mean()),
                    "stderr": se, "n_seeds": len(v)})
    return out


def write_summary(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["task", "encoder", "ratio", "snr_db", "codebook_size", "metric", "mean", "stderr",
            "n_seeds"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    return path
