"""Run configuration: checked-in defaults layered with run-specific overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from pydantic import TypeAdapter, ValidationError

from .channel import ArrayGeometry, CarrierConfig, ScenarioConfig
from .dataset import config_hash
from .errors import ConfigError
from .training import StagePlan, TrainConfig

OUTPUT_ROOT_ENV = "CSIFM_OUTPUT_ROOT"


@dataclass
class SplitConfig:
    """Sample counts per split; the test split is drawn from unseen scenarios only."""

    train_per_scenario: int = 500
    val_per_scenario: int = 50
    test_per_scenario: int = 500
    seen_scenarios: tuple[int, ...] = (0, 1, 2, 3)
    unseen_scenarios: tuple[int, ...] = (4, 5)


@dataclass
class EpochConfig:
    param: int = 30
    stage1: int = 30
    stage2: int = 20


@dataclass
class DownstreamConfig:
    train_ratios: tuple[float, ...] = (0.01, 0.05, 0.1, 0.5, 1.0)
    eval_snrs_db: tuple[float, ...] = (0.0, 10.0, 20.0, float("inf"))
    los_snrs_db: tuple[float, ...] = (0.0, 20.0)
    codebook_sizes: tuple[int, ...] = (8, 16, 32)
    head_train_fraction: float = 0.7
    head_epochs: int = 60
    head_lr: float = 3e-3
    head_batch: int = 64
    head_hidden: int = 64
    head_seed: int = 0
    pilot_stride: tuple[int, int] = (2, 2)
    chest_epochs: int = 40
    chest_dim: int = 32
    chest_depth: int = 2
    seeds: tuple[int, ...] = (0,)


@dataclass
class RunConfig:
    scenarios: list[ScenarioConfig]
    carrier_lo: CarrierConfig
    carrier_hi: CarrierConfig
    splits: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    epochs: EpochConfig = field(default_factory=EpochConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    n_slots: int = 16
    master_seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        e = self.train.encoder
        if (e.n_antennas, e.n_subcarriers) != (self.carrier_lo.n_antennas, self.carrier_lo.n_subcarriers):
            raise ConfigError("encoder grid differs from the low-band carrier grid")
        if self.train.prior.n_slots != self.n_slots:
            raise ConfigError("parameter-encoder slot count differs from n_slots")
        ids = [s.scenario_id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate scenario ids")
        seen, unseen = set(self.splits.seen_scenarios), set(self.splits.unseen_scenarios)
        if seen & unseen:
            raise ConfigError(f"scenarios {sorted(seen & unseen)} are both seen and unseen")
        missing = (seen | unseen) - set(ids)
        if missing:
            raise ConfigError(f"split names undefined scenarios {sorted(missing)}")
        for s in self.scenarios:
            s.validate(self.n_slots)
        if max(self.downstream.codebook_sizes) > self.carrier_hi.n_antennas:
            raise ConfigError("codebook size exceeds the high-band antenna count")

    def scenario(self, sid: int) -> ScenarioConfig:
        return next(s for s in self.scenarios if s.scenario_id == sid)

    def geometry_lo(self) -> ArrayGeometry:
        return ArrayGeometry.ula(self.carrier_lo.n_antennas, self.carrier_lo.wavelength)

    def geometry_hi(self) -> ArrayGeometry:
        return ArrayGeometry.ula(self.carrier_hi.n_antennas, self.carrier_hi.wavelength)

    def plan(self, ablation: str = "none") -> StagePlan:
        return StagePlan.for_ablation(ablation, self.epochs.stage1, self.epochs.stage2,
                                      self.epochs.param)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return _jsonable(d)

    def digest(self) -> str:
        return config_hash(self.to_dict())

    def resolved_output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(self.output_dir)
        return Path(root) / out if root and not out.is_absolute() else out


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, float) and not np.isfinite(o):
        return "inf" if o > 0 else "-inf"
    if isinstance(o, np.generic):
        return o.item()
    return o


_ADAPTER = TypeAdapter(RunConfig)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_dict() -> dict:
    text = resources.files("csifm").joinpath("configs/default.json").read_text()
    return json.loads(text)


def from_dict(d: dict) -> RunConfig:
    try:
        return _ADAPTER.validate_python(d)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    d = default_dict()
    if path is not None:
        p = Path(path)
        try:
            layer = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from None
        if not isinstance(layer, dict):
            raise ConfigError(f"{p}: top level must be an object")
        d = deep_merge(d, layer)
    if overrides:
        d = deep_merge(d, overrides)
    return from_dict(d)


def echo_config(cfg: RunConfig, run_dir: str | Path) -> Path:
    """Write the resolved config and its hash into the run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "resolved_config.json"
    path.write_text(json.dumps({"config": cfg.to_dict(), "hash": cfg.digest()}, indent=2,
                               sort_keys=True))
    return path
