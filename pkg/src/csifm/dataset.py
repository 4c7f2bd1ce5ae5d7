"""Dataset generation and the on-disk record format.

Each split is a pair of files: ``<name>.bin`` holding a short header followed by
fixed-width little-endian records, and ``<name>.json`` holding the manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import (
    ArrayGeometry,
    CarrierConfig,
    MultipathParamSet,
    ScenarioConfig,
    derive_labels,
    sample_multipath,
    synthesize_csi,
)
from .errors import ConfigError, FormatError

DATASET_MAGIC = b"CSIFMDS\0"
DATASET_VERSION = 1


def record_dtype(n_antennas: int, n_subcarriers: int, n_slots: int, n_codebooks: int) -> np.dtype:
    return np.dtype([
        ("sample_id", "<i8"),
        ("scenario_id", "<i4"),
        ("los", "u1"),
        ("n_paths", "u1"),
        ("h", "<f8", (n_antennas, n_subcarriers, 2)),
        ("gain", "<f8", (n_slots, 2)),
        ("delay", "<f8", (n_slots,)),
        ("elevation", "<f8", (n_slots,)),
        ("azimuth", "<f8", (n_slots,)),
        ("valid", "u1", (n_slots,)),
        ("position", "<f8", (2,)),
        ("path_loss_db", "<f8"),
        ("best_beam", "<i4", (n_codebooks,)),
    ])


@dataclass
class CsiDataset:
    """Struct-of-arrays view over many samples; path arrays are padded to ``n_slots``."""

    h: np.ndarray            # complex (N, N_a, N_f)
    gains: np.ndarray        # complex (N, N_p)
    delays: np.ndarray       # (N, N_p)
    elevations: np.ndarray   # (N, N_p)
    azimuths: np.ndarray     # (N, N_p)
    valid: np.ndarray        # bool (N, N_p)
    path_loss_db: np.ndarray  # (N,)
    los: np.ndarray          # bool (N,)
    position: np.ndarray     # (N, 2)
    best_beam: np.ndarray    # int (N, n_codebooks)
    scenario_id: np.ndarray  # (N,)
    sample_id: np.ndarray    # (N,)
    codebook_sizes: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.h.shape[0]

    @property
    def n_slots(self) -> int:
        return self.delays.shape[1]

    def params(self, i: int) -> MultipathParamSet:
        v = self.valid[i]
        return MultipathParamSet(self.gains[i, v], self.delays[i, v], self.elevations[i, v],
                                 self.azimuths[i, v], float(self.path_loss_db[i]),
                                 bool(self.los[i]), self.position[i].copy())

    def beam_labels(self, codebook_size: int) -> np.ndarray:
        try:
            col = self.codebook_sizes.index(codebook_size)
        except ValueError:
            raise ConfigError(f"no labels stored for codebook size {codebook_size}") from None
        return self.best_beam[:, col]

    def subset(self, idx) -> "CsiDataset":
        idx = np.asarray(idx)
        fields = {k: getattr(self, k)[idx] for k in (
            "h", "gains", "delays", "elevations", "azimuths", "valid", "path_loss_db", "los",
            "position", "best_beam", "scenario_id", "sample_id")}
        return CsiDataset(**fields, codebook_sizes=self.codebook_sizes)

    @classmethod
    def concatenate(cls, parts: list["CsiDataset"]) -> "CsiDataset":
        fields = {k: np.concatenate([getattr(p, k) for p in parts]) for k in (
            "h", "gains", "delays", "elevations", "azimuths", "valid", "path_loss_db", "los",
            "position", "best_beam", "scenario_id", "sample_id")}
        return cls(**fields, codebook_sizes=parts[0].codebook_sizes)


def sample_seed(master_seed: int, scenario_id: int, sample_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(scenario_id), int(sample_id)])


def generate_scenario(cfg: ScenarioConfig, n_samples: int, carrier_lo: CarrierConfig,
                      carrier_hi: CarrierConfig, geometry_lo: ArrayGeometry,
                      geometry_hi: ArrayGeometry, n_slots: int, codebook_sizes,
                      master_seed: int, first_sample_id: int = 0) -> CsiDataset:
    """Each sample draws from its own ``(seed, scenario, sample id)`` stream."""
    cfg.validate(max_slots=n_slots)
    codebook_sizes = tuple(int(s) for s in codebook_sizes)
    n_a, n_f = carrier_lo.n_antennas, carrier_lo.n_subcarriers
    out = _empty(n_samples, n_a, n_f, n_slots, codebook_sizes)
    for j in range(n_samples):
        sid = first_sample_id + j
        rng = np.random.default_rng(sample_seed(master_seed, cfg.scenario_id, sid))
        params = sample_multipath(rng, cfg, carrier_lo.wavelength)
        labels = derive_labels(params, carrier_hi, geometry_hi, codebook_sizes)
        p = params.n_paths
        out.h[j] = synthesize_csi(params, carrier_lo, geometry_lo)
        out.gains[j, :p] = params.gains
        out.delays[j, :p] = params.delays
        out.elevations[j, :p] = params.elevations
        out.azimuths[j, :p] = params.azimuths
        out.valid[j, :p] = True
        out.path_loss_db[j] = params.path_loss_db
        out.los[j] = labels.los
        out.position[j] = labels.position
        out.best_beam[j] = [labels.best_beams[s] for s in codebook_sizes]
        out.scenario_id[j] = cfg.scenario_id
        out.sample_id[j] = sid
    return out


def _empty(n, n_a, n_f, n_slots, codebook_sizes) -> CsiDataset:
    return CsiDataset(
        h=np.zeros((n, n_a, n_f), complex), gains=np.zeros((n, n_slots), complex),
        delays=np.zeros((n, n_slots)), elevations=np.zeros((n, n_slots)),
        azimuths=np.zeros((n, n_slots)), valid=np.zeros((n, n_slots), bool),
        path_loss_db=np.zeros(n), los=np.zeros(n, bool), position=np.zeros((n, 2)),
        best_beam=np.zeros((n, len(codebook_sizes)), np.int64),
        scenario_id=np.zeros(n, np.int64), sample_id=np.zeros(n, np.int64),
        codebook_sizes=tuple(codebook_sizes),
    )


# ---------------------------------------------------------------------------
# binary records


def to_records(ds: CsiDataset) -> np.ndarray:
    n_a, n_f = ds.h.shape[1:]
    rec = np.zeros(len(ds), dtype=record_dtype(n_a, n_f, ds.n_slots, len(ds.codebook_sizes)))
    rec["sample_id"] = ds.sample_id
    rec["scenario_id"] = ds.scenario_id
    rec["los"] = ds.los
    rec["n_paths"] = ds.valid.sum(axis=1)
    rec["h"][..., 0] = ds.h.real
    rec["h"][..., 1] = ds.h.imag
    rec["gain"][..., 0] = ds.gains.real
    rec["gain"][..., 1] = ds.gains.imag
    rec["delay"] = ds.delays
    rec["elevation"] = ds.elevations
    rec["azimuth"] = ds.azimuths
    rec["valid"] = ds.valid
    rec["position"] = ds.position
    rec["path_loss_db"] = ds.path_loss_db
    rec["best_beam"] = ds.best_beam
    return rec


def from_records(rec: np.ndarray, codebook_sizes) -> CsiDataset:
    return CsiDataset(
        h=rec["h"][..., 0] + 1j * rec["h"][..., 1],
        gains=rec["gain"][..., 0] + 1j * rec["gain"][..., 1],
        delays=rec["delay"].astype(float), elevations=rec["elevation"].astype(float),
        azimuths=rec["azimuth"].astype(float), valid=rec["valid"].astype(bool),
        path_loss_db=rec["path_loss_db"].astype(float), los=rec["los"].astype(bool),
        position=rec["position"].astype(float), best_beam=rec["best_beam"].astype(np.int64),
        scenario_id=rec["scenario_id"].astype(np.int64),
        sample_id=rec["sample_id"].astype(np.int64), codebook_sizes=tuple(codebook_sizes),
    )


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def write_dataset(ds: CsiDataset, path: str | Path, manifest: dict) -> dict:
    """Write ``path.bin`` + ``path.json``; returns the manifest actually written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rec = to_records(ds)
    header = {
        "n_samples": len(ds),
        "n_antennas": int(ds.h.shape[1]),
        "n_subcarriers": int(ds.h.shape[2]),
        "n_slots": ds.n_slots,
        "codebook_sizes": list(ds.codebook_sizes),
    }
    with open(path.with_suffix(".bin"), "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(bytes([DATASET_VERSION]))
        blob = json.dumps(header, sort_keys=True).encode()
        f.write(np.uint32(len(blob)).astype("<u4").tobytes())
        f.write(blob)
        f.write(rec.tobytes())
    full = {**manifest, **header, "format_version": DATASET_VERSION,
            "scenario_ids": sorted(set(int(s) for s in ds.scenario_id))}
    path.with_suffix(".json").write_text(json.dumps(full, indent=2, sort_keys=True,
                                                    default=_json_default))
    return full


def read_dataset(path: str | Path) -> CsiDataset:
    path = Path(path).with_suffix(".bin")
    raw = path.read_bytes()
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file")
    version = raw[len(DATASET_MAGIC)]
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    off = len(DATASET_MAGIC) + 1
    hlen = int(np.frombuffer(raw, "<u4", 1, off)[0])
    off += 4
    header = json.loads(raw[off: off + hlen])
    off += hlen
    dt = record_dtype(header["n_antennas"], header["n_subcarriers"], header["n_slots"],
                      len(header["codebook_sizes"]))
    rec = np.frombuffer(raw, dt, header["n_samples"], off)
    return from_records(rec, header["codebook_sizes"])


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())
