"""Masked-autoencoder backbone with a global SPA token.

Token index 0 is the SPA token; CSI tokens occupy indices ``1..K``. Masking only
ever draws from the CSI tokens.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, LayerNorm, Linear, Module, Tensor, TransformerBlock
from .autodiff.nn import param, sinusoidal_table
from .errors import ConfigError, ContractError


@dataclass
class EncoderConfig:
    n_antennas: int = 16
    n_subcarriers: int = 16
    patch_len: int = 8
    dim: int = 32
    depth: int = 4
    heads: int = 4
    ff_mult: int = 2
    decoder_depth: int = 2
    decoder_dim: int = 32
    decoder_heads: int = 4
    mask_ratio: float = 0.5
    decoder_sees_spa: bool = True

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.decoder_dim % self.decoder_heads:
            raise ConfigError("decoder_dim not divisible by decoder_heads")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("mask ratio must lie strictly between 0 and 1")
        if self.n_subcarriers % self.patch_len:
            raise ConfigError("N_f must be divisible by the patch length")

    @property
    def segments_per_row(self) -> int:
        return self.n_subcarriers // self.patch_len

    @property
    def n_tokens(self) -> int:
        return self.n_antennas * self.segments_per_row

    @property
    def token_dim(self) -> int:
        return 2 * self.patch_len

    @property
    def n_masked(self) -> int:
        return int(round(self.mask_ratio * self.n_tokens))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MaskPlan:
    """Per-sample keep/mask indices (1-based, SPA excluded) and the restore permutation.

    ``restore[b]`` maps original CSI position ``k-1`` to its slot in
    ``concat(keep[b], mask[b])``.
    """

    keep: np.ndarray      # (B, K - |M|)
    mask: np.ndarray      # (B, |M|)
    restore: np.ndarray   # (B, K)


def random_mask(n_tokens: int, ratio: float, rng: np.random.Generator):
    """Sample ``round(ratio*K)`` CSI indices from ``{1..K}`` without replacement."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("mask ratio must lie strictly between 0 and 1")
    n_mask = int(round(ratio * n_tokens))
    if n_mask in (0, n_tokens):
        raise ConfigError(f"mask ratio {ratio} masks {n_mask} of {n_tokens} tokens")
    perm = rng.permutation(n_tokens) + 1
    mask, keep = perm[:n_mask], perm[n_mask:]
    restore = np.argsort(np.concatenate([keep, mask]) - 1, kind="stable")
    return keep, mask, restore


def batch_mask(batch: int, n_tokens: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    parts = [random_mask(n_tokens, ratio, rng) for _ in range(batch)]
    return MaskPlan(*(np.stack(p) for p in zip(*parts)))


class TokenEmbedding(Module):
    """``f_in(x_k) + e_row(r_k) + e_seg(s_k)``; the SPA vector is prepended by the encoder."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.f_in = MLP(cfg.token_dim, cfg.dim, cfg.dim, rng)
        self.row = param(sinusoidal_table(cfg.n_antennas, cfg.dim))
        self.seg = param(rng.normal(0.0, 0.02, size=(cfg.segments_per_row, cfg.dim)))

    def positional(self, rows: np.ndarray, segs: np.ndarray) -> Tensor:
        if rows.max(initial=0) >= self.row.shape[0] or segs.max(initial=0) >= self.seg.shape[0]:
            raise ContractError("positional label outside embedding table")
        if rows.min(initial=0) < 0 or segs.min(initial=0) < 0:
            raise ContractError("negative positional label")
        return ad.getitem(self.row, rows) + ad.getitem(self.seg, segs)

    def __call__(self, x, rows: np.ndarray, segs: np.ndarray) -> Tensor:
        return self.f_in(x) + self.positional(rows, segs)


class CsiEncoder(Module):
    """Embedding + SPA token + pre-norm transformer stack.

    The final LayerNorm exists only when ``depth >= 1`` so a zero-depth encoder
    is the identity on its input embeddings.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg, rng)
        self.spa = param(rng.normal(0.0, 0.02, size=cfg.dim))
        self.blocks = [TransformerBlock(cfg.dim, cfg.heads, cfg.ff_mult, rng)
                       for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim) if cfg.depth else None

    def embed_tokens(self, x: np.ndarray, rows: np.ndarray, segs: np.ndarray) -> Tensor:
        """``(B, K+1, d)`` sequence with the SPA token at index 0."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.cfg.token_dim:
            raise ContractError(f"token dim {x.shape[-1]} != 2L = {self.cfg.token_dim}")
        z = self.embed(x, rows, segs)
        spa = ad.broadcast_to(self.spa.reshape(1, 1, -1), (x.shape[0], 1, self.cfg.dim))
        return ad.concat([spa, z], axis=1)

    def encode(self, seq: Tensor, keep: np.ndarray | None = None) -> Tensor:
        """Run the blocks over SPA + kept tokens (``keep`` given) or all ``K+1`` tokens."""
        if keep is not None:
            b = seq.shape[0]
            idx = np.concatenate([np.zeros((b, 1), np.int64), keep], axis=1)
            seq = ad.getitem(seq, (np.arange(b)[:, None], idx), unique=True)
        for blk in self.blocks:
            seq = blk(seq)
        return self.norm(seq) if self.norm is not None else seq

    def __call__(self, x: np.ndarray, rows: np.ndarray, segs: np.ndarray,
                 keep: np.ndarray | None = None) -> Tensor:
        return self.encode(self.embed_tokens(x, rows, segs), keep)


class MaeDecoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        dd = cfg.decoder_dim
        self.proj_in = Linear(cfg.dim, dd, rng)
        self.mask_token = param(rng.normal(0.0, 0.02, size=dd))
        self.row = param(sinusoidal_table(cfg.n_antennas, dd))
        self.seg = param(rng.normal(0.0, 0.02, size=(cfg.segments_per_row, dd)))
        self.blocks = [TransformerBlock(dd, cfg.decoder_heads, cfg.ff_mult, rng)
                       for _ in range(cfg.decoder_depth)]
        self.norm = LayerNorm(dd)
        self.head = Linear(dd, cfg.token_dim, rng)

    def __call__(self, encoded: Tensor, plan: MaskPlan, rows: np.ndarray,
                 segs: np.ndarray) -> Tensor:
        """Reconstruct masked tokens only: ``(B, |M|, 2L)`` in ``plan.mask`` order."""
        if plan.mask.shape[1] == 0:
            raise ContractError("decode needs a nonempty mask set")
        b = encoded.shape[0]
        n_mask = plan.mask.shape[1]
        y = self.proj_in(encoded)
        spa, visible = y[:, :1], y[:, 1:]
        fill = ad.broadcast_to(self.mask_token.reshape(1, 1, -1), (b, n_mask, self.cfg.decoder_dim))
        full = ad.concat([visible, fill], axis=1)
        full = ad.getitem(full, (np.arange(b)[:, None], plan.restore), unique=True)
        full = full + ad.getitem(self.row, rows) + ad.getitem(self.seg, segs)
        offset = 0
        if self.cfg.decoder_sees_spa:
            full = ad.concat([spa, full], axis=1)
            offset = 1
        for blk in self.blocks:
            full = blk(full)
        out = self.head(self.norm(full))
        return ad.getitem(out, (np.arange(b)[:, None], plan.mask - 1 + offset), unique=True)


class MaskedAutoencoder(Module):
    def __init__(self, cfg: EncoderConfig, seed: int | np.random.SeedSequence = 0):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        enc_ss, dec_ss = ss.spawn(2)
        self.cfg = cfg
        self.encoder = CsiEncoder(cfg, np.random.default_rng(enc_ss))
        self.decoder = MaeDecoder(cfg, np.random.default_rng(dec_ss))

    def forward_masked(self, x: np.ndarray, rows: np.ndarray, segs: np.ndarray,
                       plan: MaskPlan) -> tuple[Tensor, Tensor]:
        """Returns ``(encoder output on SPA+visible tokens, reconstructed masked tokens)``."""
        encoded = self.encoder(x, rows, segs, keep=plan.keep)
        return encoded, self.decoder(encoded, plan, rows, segs)
