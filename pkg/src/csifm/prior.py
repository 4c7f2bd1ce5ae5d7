"""Training-only physical prior module.

Two guidance sources for the SPA token:

* ``StructureHead`` predicts the compressed transformed-domain magnitude map
  from the SPA output through a linear reconstruction followed by a learnable
  soft-threshold and a ReLU.
* ``ParamEncoder`` embeds ground-truth multipath descriptors with a set encoder
  and attention pooling; it is pretrained contrastively on augmented views and
  then frozen to provide alignment targets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, Linear, Module, Tensor
from .autodiff.nn import param
from .channel import direction_vector
from .errors import ContractError

DESCRIPTOR_DIM = 5  # [relative delay, power, u_x, u_y, u_z]


# ---------------------------------------------------------------------------
# descriptors


@dataclass
class DescriptorStats:
    """Dataset-level normalisation, fitted once on the training split.

    Relative delays are only rescaled (so the earliest path stays at 0); path
    power is standardised in dB; path loss is standardised in dB.
    """

    delay_scale: float
    power_db_mean: float
    power_db_std: float
    path_loss_mean: float
    path_loss_std: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def fit(cls, delays: np.ndarray, gains: np.ndarray, valid: np.ndarray,
            path_loss_db: np.ndarray) -> "DescriptorStats":
        rel = _relative_delays(delays, valid)[valid]
        pdb = 10 * np.log10(np.abs(gains[valid]) ** 2)
        return cls(
            delay_scale=float(max(rel.std(), 1e-12)),
            power_db_mean=float(pdb.mean()),
            power_db_std=float(max(pdb.std(), 1e-6)),
            path_loss_mean=float(np.mean(path_loss_db)),
            path_loss_std=float(max(np.std(path_loss_db), 1e-6)),
        )


@dataclass
class ParamInput:
    """Batched descriptors ``q`` (B, N_p, 5), validity mask (B, N_p) and global ``g`` (B, 1)."""

    q: np.ndarray
    valid: np.ndarray
    g: np.ndarray

    def __len__(self) -> int:
        return self.q.shape[0]

    def take(self, idx) -> "ParamInput":
        return ParamInput(self.q[idx], self.valid[idx], self.g[idx])

    def copy(self) -> "ParamInput":
        return ParamInput(self.q.copy(), self.valid.copy(), self.g.copy())


def _relative_delays(delays: np.ndarray, valid: np.ndarray) -> np.ndarray:
    earliest = np.where(valid, delays, np.inf).min(axis=-1, keepdims=True)
    return np.where(valid, delays - earliest, 0.0)


def build_descriptors(delays, gains, elevations, azimuths, valid, path_loss_db,
                      stats: DescriptorStats | None = None) -> ParamInput:
    """Descriptors for a padded batch of path sets.

    With ``stats=None`` the raw quantities are returned (relative delay in
    seconds, power in dB, path loss in dB), which is what the invariants in the
    tests inspect.
    """
    delays = np.atleast_2d(np.asarray(delays, float))
    valid = np.atleast_2d(np.asarray(valid, bool))
    if not valid.any(axis=-1).all():
        raise ContractError("every sample needs at least one valid path")
    gains = np.atleast_2d(np.asarray(gains))
    rel = _relative_delays(delays, valid)
    with np.errstate(divide="ignore"):
        pdb = np.where(valid, 10 * np.log10(np.abs(gains) ** 2), 0.0)
    u = direction_vector(np.atleast_2d(elevations), np.atleast_2d(azimuths))
    eta = np.atleast_1d(np.asarray(path_loss_db, float))
    if stats is not None:
        rel = rel / stats.delay_scale
        pdb = np.where(valid, (pdb - stats.power_db_mean) / stats.power_db_std, 0.0)
        eta = (eta - stats.path_loss_mean) / stats.path_loss_std
    q = np.concatenate([rel[..., None], pdb[..., None], u], axis=-1)
    q = np.where(valid[..., None], q, 0.0)
    return ParamInput(q, valid.copy(), eta.reshape(-1, 1))


def build_descriptor(params, stats: DescriptorStats | None = None, n_slots: int | None = None) -> ParamInput:
    """Single :class:`~csifm.channel.MultipathParamSet` to a one-row :class:`ParamInput`."""
    p = params.n_paths
    if p < 1:
        raise ContractError("a path set needs at least one path")
    n = n_slots or p
    pad = lambda a, fill=0.0: np.concatenate([np.asarray(a), np.full(n - p, fill, dtype=np.asarray(a).dtype)])
    valid = np.arange(n) < p
    return build_descriptors(pad(params.delays)[None], pad(params.gains, 0j)[None],
                             pad(params.elevations)[None], pad(params.azimuths)[None],
                             valid[None], [params.path_loss_db], stats)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentConfig:
    p_permute: float = 1.0
    p_drop_apply: float = 0.5
    p_drop: float = 0.3
    p_mask_flip: float = 0.1
    p_jitter: float = 0.8
    delay_sigma: float = 0.1
    power_sigma: float = 0.1
    direction_sigma: float = 0.05
    p_global_dropout: float = 0.2

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(p_permute=0.0, p_drop_apply=0.0, p_drop=0.0, p_mask_flip=0.0, p_jitter=0.0,
                   p_global_dropout=0.0)


def augment(v: ParamInput, rng: np.random.Generator, cfg: AugmentConfig) -> ParamInput:
    """One random view per row.

    Dropping spares the strongest valid path, so a view is never empty. A dropped
    slot is zeroed; with ``p_mask_flip`` its validity bit is flipped back on,
    presenting an all-zero "ghost" path (mask perturbation).
    """
    out = v.copy()
    b, n, _ = out.q.shape
    for i in range(b):
        q, valid = out.q[i], out.valid[i]
        if rng.random() < cfg.p_drop_apply:
            idx = np.flatnonzero(valid)
            strongest = idx[np.argmax(q[idx, 1])]
            for j in idx:
                if j != strongest and rng.random() < cfg.p_drop:
                    q[j] = 0.0
                    valid[j] = rng.random() < cfg.p_mask_flip
        if rng.random() < cfg.p_jitter:
            idx = np.flatnonzero(valid & np.any(q != 0.0, axis=-1))
            k = len(idx)
            q[idx, 0] = np.abs(q[idx, 0] + rng.normal(0, cfg.delay_sigma, k))
            q[idx, 1] += rng.normal(0, cfg.power_sigma, k)
            u = q[idx, 2:] + rng.normal(0, cfg.direction_sigma, (k, 3))
            q[idx, 2:] = u / np.linalg.norm(u, axis=-1, keepdims=True)
        if rng.random() < cfg.p_permute:
            idx = np.flatnonzero(valid)
            perm = rng.permutation(idx)
            q[idx] = q[perm].copy()
        if rng.random() < cfg.p_global_dropout:
            out.g[i] = 0.0
    return out


# ---------------------------------------------------------------------------
# parameter-aware encoder


@dataclass
class ParamEncoderConfig:
    slot_dim: int = 32
    hidden_dim: int = 32
    global_dim: int = 8
    target_dim: int = 32
    n_slots: int = 16


class ParamEncoder(Module):
    """``h = f(v)``, ``t = normalize(g(h))``.

    Slots share one MLP; a learned query attends over valid slots only, so both
    slot order and extra padding leave the output unchanged.
    """

    def __init__(self, cfg: ParamEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.slot_mlp = MLP(DESCRIPTOR_DIM, cfg.slot_dim, cfg.slot_dim, rng)
        self.query = param(rng.normal(0.0, 0.1, size=cfg.slot_dim))
        self.key = Linear(cfg.slot_dim, cfg.slot_dim, rng)
        self.value = Linear(cfg.slot_dim, cfg.slot_dim, rng)
        self.global_embed = Linear(1, cfg.global_dim, rng)
        self.fusion = MLP(cfg.slot_dim + cfg.global_dim, cfg.hidden_dim, cfg.hidden_dim, rng)
        self.projector = MLP(cfg.hidden_dim, cfg.hidden_dim, cfg.target_dim, rng)

    def encode(self, v: ParamInput) -> Tensor:
        valid = np.asarray(v.valid, bool)
        if not valid.any(axis=-1).all():
            raise ContractError("param_encode: a sample has no valid path slot")
        e = self.slot_mlp(v.q)                                   # (B, N, s)
        scores = ad.matmul(self.key(e), self.query.reshape(-1, 1))  # (B, N, 1)
        scores = scores * (1.0 / np.sqrt(self.cfg.slot_dim))
        # invalid slots get a large negative constant, so exp() underflows to exactly 0
        scores = scores + np.where(valid, 0.0, -1e9)[..., None]
        w = ad.softmax(scores, axis=1)
        pooled = ad.tsum(w * self.value(e), axis=1)             # (B, s)
        fused = ad.concat([pooled, ad.gelu(self.global_embed(v.g))], axis=-1)
        return self.fusion(fused)

    def project(self, h: Tensor) -> Tensor:
        return ad.l2_normalize(self.projector(h), axis=-1)

    def __call__(self, v: ParamInput) -> tuple[Tensor, Tensor]:
        h = self.encode(v)
        return h, self.project(h)


def contrastive_loss_param(t1, t2, kappa: float = 0.07) -> Tensor:
    """NT-Xent over the ``2B`` re-indexed views with cosine similarity."""
    t1, t2 = ad.as_tensor(t1), ad.as_tensor(t2)
    b = t1.shape[0]
    if b == 0:
        raise ContractError("contrastive loss needs a nonempty batch")
    if kappa <= 0:
        raise ContractError("temperature must be positive")
    t = ad.concat([t1, t2], axis=0)
    sim = ad.matmul(t, ad.transpose(t)) * (1.0 / kappa)
    n = 2 * b
    # self-similarity removed from the denominator
    logits = sim + np.where(np.eye(n, dtype=bool), -1e9, 0.0)
    logp = ad.log_softmax(logits, axis=-1)
    pos = np.concatenate([np.arange(b, n), np.arange(b)])
    return -ad.mean(ad.getitem(logp, (np.arange(n), pos)))


# ---------------------------------------------------------------------------
# structure head


class StructureHead(Module):
    """SPA output -> hidden MLP -> linear to ``N_a N_f`` -> soft-threshold -> ReLU."""

    def __init__(self, dim: int, out_dim: int, rng: np.random.Generator, hidden: int = 64,
                 init_threshold: float = 0.01, init_bias: float = 0.3):
        self.hidden = Linear(dim, hidden, rng)
        self.recon = Linear(hidden, out_dim, rng)
        # start above the threshold so no output is dead before training begins
        self.recon.bias.data[:] = init_bias
        self.threshold = param(np.full(out_dim, init_threshold))

    def pre_threshold(self, z0) -> Tensor:
        return self.recon(ad.gelu(self.hidden(z0)))

    def shrink(self, x) -> Tensor:
        lam = self.threshold
        soft = ad.relu(x - lam) - ad.relu(-x - lam)
        return ad.relu(soft)

    def __call__(self, z0) -> Tensor:
        return self.shrink(self.pre_threshold(z0))

    def clamp_(self) -> None:
        """Project thresholds back onto ``>= 0`` after an optimiser step."""
        np.maximum(self.threshold.data, 0.0, out=self.threshold.data)
