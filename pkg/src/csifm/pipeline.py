"""Deterministic CSI transforms: compression, tokenisation, structure targets, noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError

DEFAULT_MU = 255.0


# ---------------------------------------------------------------------------
# radix-2 FFT


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalised forward DFT along ``axis`` (iterative Cooley-Tukey, length 2^k)."""
    a = np.moveaxis(np.asarray(x, dtype=complex), axis, -1)
    n = a.shape[-1]
    if not _is_pow2(n):
        raise ConfigError(f"FFT length {n} is not a power of two")
    lead = a.shape[:-1]
    a = a[..., _bit_reverse(n)]
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(*lead, n // m, m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        m *= 2
    return np.moveaxis(a, -1, axis)


def fft2(h: np.ndarray) -> np.ndarray:
    """2-D DFT over the last two (antenna, frequency) axes."""
    return fft(fft(h, axis=-1), axis=-2)


# ---------------------------------------------------------------------------
# mu-law


def mu_law(a: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    if mu <= 0:
        raise ConfigError("mu must be positive")
    return np.log1p(mu * np.asarray(a, dtype=float)) / np.log1p(mu)


def mu_law_inverse(c: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    return np.expm1(np.asarray(c, dtype=float) * np.log1p(mu)) / mu


def _max_normalise(mag: np.ndarray) -> np.ndarray:
    peak = mag.max(axis=(-2, -1), keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    return mag / safe


def mu_law_compress(h: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    """Per-sample max-normalised magnitude through the mu-law; phase kept as-is.

    Works on a single ``N_a x N_f`` matrix or a leading batch of them.
    """
    h = np.asarray(h, dtype=complex)
    mag = np.abs(h)
    comp = mu_law(_max_normalise(mag), mu)
    unit = np.where(mag > 0, np.exp(1j * np.angle(h)), 0.0)
    return comp * unit


# ---------------------------------------------------------------------------
# tokens


@dataclass
class TokenBatch:
    x: np.ndarray          # (B, K, 2L) real
    rows: np.ndarray       # (K,) antenna-row label r_k
    segments: np.ndarray   # (K,) frequency-segment label s_k
    sample_ids: np.ndarray
    sigma_x: float | None = None

    @property
    def n_tokens(self) -> int:
        return self.x.shape[1]


@dataclass
class StructureTarget:
    s: np.ndarray          # (B, N_a*N_f) in [0, 1]
    sigma_s: float


def token_layout(n_antennas: int, n_subcarriers: int, patch_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major positional labels ``(r_k, s_k)`` for all ``K`` tokens."""
    if patch_len < 1 or n_subcarriers % patch_len:
        raise ConfigError(f"N_f={n_subcarriers} not divisible by patch length {patch_len}")
    per_row = n_subcarriers // patch_len
    k = np.arange(n_antennas * per_row)
    return k // per_row, k % per_row


def tokenize(hbar: np.ndarray, patch_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split each antenna row into ``N_f/L`` segments; token = [Re, Im] of the segment."""
    hbar = np.asarray(hbar, dtype=complex)
    n_a, n_f = hbar.shape[-2:]
    rows, segs = token_layout(n_a, n_f, patch_len)
    lead = hbar.shape[:-2]
    patches = hbar.reshape(*lead, n_a * (n_f // patch_len), patch_len)
    x = np.concatenate([patches.real, patches.imag], axis=-1)
    return x, rows, segs


def detokenize(x: np.ndarray, n_antennas: int, n_subcarriers: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    half = x.shape[-1] // 2
    patches = x[..., :half] + 1j * x[..., half:]
    return patches.reshape(*x.shape[:-2], n_antennas, n_subcarriers)


def structure_target(h: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    """Row-major ``vec`` of the mu-law compressed, max-normalised ``|FFT2(H)|``."""
    h = np.asarray(h, dtype=complex)
    mag = np.abs(fft2(h))
    s = mu_law(_max_normalise(mag), mu)
    return s.reshape(*h.shape[:-2], -1)


# ---------------------------------------------------------------------------
# noise


def inject_noise(h: np.ndarray, snr_db: float, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Add circular complex Gaussian noise at the given per-entry SNR.

    Returns ``(noisy, ok)``; ``ok`` is False when ``h`` carries no power and was
    returned untouched. ``snr_db = inf`` is the noiseless sentinel.
    """
    h = np.asarray(h, dtype=complex)
    if not np.isfinite(h).all():
        raise ContractError("inject_noise needs finite CSI")
    if np.isposinf(snr_db):
        return h.copy(), True
    power = float(np.mean(np.abs(h) ** 2))
    if power == 0.0:
        return h.copy(), False
    var = power / 10 ** (snr_db / 10)
    noise = rng.normal(size=h.shape) + 1j * rng.normal(size=h.shape)
    return h + np.sqrt(var / 2) * noise, True


@dataclass(frozen=True)
class CorruptionPolicy:
    fraction: float = 0.6
    snr_range_db: tuple[float, float] = (-20.0, 20.0)


def corrupt_batch(h: np.ndarray, policy: CorruptionPolicy,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt a random ``policy.fraction`` of samples; returns (batch, corrupted mask)."""
    out = np.array(h, dtype=complex, copy=True)
    hit = rng.random(len(out)) < policy.fraction
    snrs = rng.uniform(*policy.snr_range_db, size=len(out))
    for i in np.flatnonzero(hit):
        out[i], _ = inject_noise(out[i], snrs[i], rng)
    return out, hit


def add_noise_at_snr(h: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sample noise at a fixed SNR for an ``(N, N_a, N_f)`` batch."""
    if np.isposinf(snr_db):
        return np.array(h, copy=True)
    return np.stack([inject_noise(x, snr_db, rng)[0] for x in h])


# ---------------------------------------------------------------------------
# batching


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Deterministic shuffled index batches for ``(seed, epoch)``; last batch may be short."""
    perm = np.random.default_rng([int(seed), int(epoch), 0xBA7C]).permutation(n)
    return [perm[i: i + batch_size] for i in range(0, n, batch_size)]


def batch_std(a: np.ndarray, eps: float = 1e-8) -> tuple[float, bool]:
    """Standard deviation with an epsilon guard; flag is True when the guard fired."""
    sd = float(np.std(a))
    return (sd, False) if sd > eps else (sd + eps, True)


@dataclass
class PipelineConfig:
    mu: float = DEFAULT_MU
    patch_len: int = 8
    corruption: CorruptionPolicy = CorruptionPolicy()


def make_tokens(h: np.ndarray, cfg: PipelineConfig, sample_ids=None) -> TokenBatch:
    x, rows, segs = tokenize(mu_law_compress(h, cfg.mu), cfg.patch_len)
    ids = np.arange(len(h)) if sample_ids is None else np.asarray(sample_ids)
    return TokenBatch(x, rows, segs, ids)


def iterate_batches(h_clean: np.ndarray, cfg: PipelineConfig, batch_size: int, seed: int,
                    epoch: int, corrupt: bool = True) -> Iterator[tuple[np.ndarray, TokenBatch, StructureTarget]]:
    """Yield ``(indices, tokens, structure target)`` per batch.

    Tokens come from the (optionally corrupted) CSI; the structure target is
    always computed from the clean CSI. ``indices`` align every yielded view
    with the dataset rows, so multipath parameters can be fetched by the caller.
    """
    noise_rng = np.random.default_rng([int(seed), int(epoch), 0x9015E])
    for idx in batch_order(len(h_clean), batch_size, seed, epoch):
        h = h_clean[idx]
        if corrupt:
            h, _ = corrupt_batch(h, cfg.corruption, noise_rng)
        tokens = make_tokens(h, cfg, idx)
        s = structure_target(h_clean[idx], cfg.mu)
        yield idx, tokens, StructureTarget(s, batch_std(s)[0])
