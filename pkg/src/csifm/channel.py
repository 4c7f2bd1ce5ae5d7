"""Synthetic geometric MISO-OFDM channels with ground-truth multipath parameters.

A base station with an antenna array at the origin serves single-antenna users
on the ground plane. Each sample draws a user position, an optional
line-of-sight path and a cluster of scattered paths, then evaluates the
narrowband-per-subcarrier geometric channel model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class CarrierConfig:
    center_hz: float
    spacing_hz: float
    n_subcarriers: int
    n_antennas: int

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_antennas < 1:
            raise ConfigError("carrier needs at least one subcarrier and one antenna")
        if self.spacing_hz <= 0 or self.center_hz <= 0:
            raise ConfigError("carrier frequency and spacing must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        n = np.arange(self.n_subcarriers)
        return self.center_hz + (n - self.n_subcarriers / 2) * self.spacing_hz

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center_hz

    @property
    def delay_resolution(self) -> float:
        return 1.0 / (self.n_subcarriers * self.spacing_hz)


@dataclass(frozen=True)
class ArrayGeometry:
    element_positions: np.ndarray  # (N_a, 3) meters
    wavelength: float

    def __post_init__(self):
        pos = np.asarray(self.element_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or not np.isfinite(pos).all():
            raise ConfigError("element positions must be a finite (N_a, 3) array")
        object.__setattr__(self, "element_positions", pos)

    @property
    def n_elements(self) -> int:
        return self.element_positions.shape[0]

    @classmethod
    def ula(cls, n: int, wavelength: float, spacing: float | None = None) -> "ArrayGeometry":
        """Uniform linear array along x; half-wavelength spacing by default."""
        d = wavelength / 2 if spacing is None else spacing
        pos = np.zeros((n, 3))
        pos[:, 0] = np.arange(n) * d
        return cls(pos, wavelength)


@dataclass
class MultipathParamSet:
    gains: np.ndarray        # complex (P,)
    delays: np.ndarray       # seconds (P,)
    elevations: np.ndarray   # radians (P,)
    azimuths: np.ndarray     # radians (P,)
    path_loss_db: float
    los: bool
    position: np.ndarray     # (2,) meters

    @property
    def n_paths(self) -> int:
        return len(self.delays)

    @property
    def powers(self) -> np.ndarray:
        return np.abs(self.gains) ** 2

    def union(self, other: "MultipathParamSet") -> "MultipathParamSet":
        return MultipathParamSet(
            np.concatenate([self.gains, other.gains]),
            np.concatenate([self.delays, other.delays]),
            np.concatenate([self.elevations, other.elevations]),
            np.concatenate([self.azimuths, other.azimuths]),
            self.path_loss_db, self.los or other.los, self.position,
        )


@dataclass
class ScenarioConfig:
    """Sampling distribution for one synthetic propagation environment."""

    scenario_id: int
    min_paths: int = 2
    max_paths: int = 8
    los_probability: float = 0.5
    rms_delay_spread_s: float = 60e-9
    min_distance_m: float = 20.0
    cell_radius_m: float = 150.0
    bs_height_m: float = 15.0
    user_azimuth_deg: tuple[float, float] = (30.0, 150.0)
    scatter_azimuth_spread_deg: float = 60.0
    scatter_elevation_spread_deg: float = 10.0
    rician_k_db: float = 6.0
    nlos_extra_loss_db: float = 10.0
    shadowing_db: float = 3.0

    def validate(self, max_slots: int | None = None) -> None:
        if self.max_paths < 1 or self.min_paths < 1:
            raise ConfigError(f"scenario {self.scenario_id}: empty path budget")
        if self.min_paths > self.max_paths:
            raise ConfigError(f"scenario {self.scenario_id}: min_paths > max_paths")
        if max_slots is not None and self.max_paths > max_slots:
            raise ConfigError(
                f"scenario {self.scenario_id}: max_paths {self.max_paths} exceeds {max_slots} slots")
        if not 0.0 <= self.los_probability <= 1.0:
            raise ConfigError("los_probability must lie in [0, 1]")
        if not 0 < self.min_distance_m <= self.cell_radius_m:
            raise ConfigError("need 0 < min_distance_m <= cell_radius_m")

    @property
    def mean_paths(self) -> float:
        return 0.5 * (self.min_paths + self.max_paths)

    def to_dict(self) -> dict:
        return asdict(self)


def direction_vector(theta, phi) -> np.ndarray:
    """Unit propagation direction(s) for elevation ``theta`` and azimuth ``phi``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(theta)], axis=-1)


def array_response(theta, phi, geometry: ArrayGeometry) -> np.ndarray:
    """Steering vector(s) ``exp(-j 2pi/lambda r_m . u) / sqrt(N_a)``.

    Scalar angles give an ``(N_a,)`` vector; arrays of ``P`` angles give ``(N_a, P)``.
    """
    u = direction_vector(theta, phi)
    phase = (2 * np.pi / geometry.wavelength) * (geometry.element_positions @ u.T)
    return np.exp(-1j * phase) / np.sqrt(geometry.n_elements)


def synthesize_csi(params: MultipathParamSet, carrier: CarrierConfig,
                   geometry: ArrayGeometry) -> np.ndarray:
    """Stack per-subcarrier responses into the ``N_a x N_f`` CSI matrix."""
    if geometry.n_elements != carrier.n_antennas:
        raise ConfigError(
            f"geometry has {geometry.n_elements} elements, carrier expects {carrier.n_antennas}")
    steering = array_response(params.elevations, params.azimuths, geometry).reshape(
        geometry.n_elements, params.n_paths)
    f = carrier.frequencies
    delay_phase = np.exp(-2j * np.pi * np.outer(params.delays, f))
    return steering @ (params.gains[:, None] * delay_phase)


def free_space_loss_db(distance_m: float, wavelength: float) -> float:
    return float(20.0 * np.log10(4 * np.pi * distance_m / wavelength))


def sample_multipath(rng: np.random.Generator, cfg: ScenarioConfig,
                     wavelength: float) -> MultipathParamSet:
    """Draw one user and its path set.

    Paths come out sorted by delay. When line of sight is drawn, path 0 is the
    geometric direct path and carries ``K/(K+1)`` of the received power.
    """
    cfg.validate()
    u_area = rng.uniform(cfg.min_distance_m**2, cfg.cell_radius_m**2)
    dist_h = np.sqrt(u_area)
    az_lo, az_hi = np.deg2rad(cfg.user_azimuth_deg)
    phi_u = rng.uniform(az_lo, az_hi)
    position = dist_h * np.array([np.cos(phi_u), np.sin(phi_u)])
    dist = float(np.hypot(dist_h, cfg.bs_height_m))
    theta_u = float(np.arccos(-cfg.bs_height_m / dist))
    tau_direct = dist / SPEED_OF_LIGHT

    n_paths = int(rng.integers(cfg.min_paths, cfg.max_paths + 1))
    los = bool(rng.random() < cfg.los_probability)
    n_scatter = n_paths - 1 if los else n_paths

    path_loss_db = free_space_loss_db(dist, wavelength)
    rx_power = 10 ** (-path_loss_db / 10)

    excess = np.sort(rng.exponential(cfg.rms_delay_spread_s, size=n_scatter))
    shadow = 10 ** (rng.normal(0.0, cfg.shadowing_db, size=n_scatter) / 10)
    scatter_pow = np.exp(-excess / cfg.rms_delay_spread_s) * shadow
    if n_scatter:
        scatter_pow /= scatter_pow.sum()
    half_az = np.deg2rad(cfg.scatter_azimuth_spread_deg) / 2
    half_el = np.deg2rad(cfg.scatter_elevation_spread_deg) / 2
    scatter_az = phi_u + rng.uniform(-half_az, half_az, size=n_scatter)
    scatter_el = np.clip(theta_u + rng.uniform(-half_el, half_el, size=n_scatter), 0.0, np.pi)
    phases = rng.uniform(0, 2 * np.pi, size=n_paths)

    if los:
        k = 10 ** (cfg.rician_k_db / 10)
        los_share = k / (k + 1) if n_scatter else 1.0
        powers = np.concatenate([[los_share], (1 - los_share) * scatter_pow]) * rx_power
        delays = np.concatenate([[tau_direct], tau_direct + excess])
        elevations = np.concatenate([[theta_u], scatter_el])
        azimuths = np.concatenate([[phi_u], scatter_az])
    else:
        powers = scatter_pow * rx_power * 10 ** (-cfg.nlos_extra_loss_db / 10)
        delays = tau_direct + excess
        elevations, azimuths = scatter_el, scatter_az

    gains = np.sqrt(powers) * np.exp(1j * phases)
    return MultipathParamSet(gains, delays, elevations, azimuths, path_loss_db, los, position)


def dft_codebook(n_antennas: int, size: int) -> np.ndarray:
    """``(size, N)`` beams steering to ``cos-direction = -1 + 2b/size`` on a half-wavelength ULA."""
    if size < 1:
        raise ConfigError("codebook size must be >= 1")
    if size > n_antennas:
        raise ConfigError(f"codebook size {size} exceeds {n_antennas} high-band antennas")
    omega = -1.0 + 2.0 * np.arange(size) / size
    m = np.arange(n_antennas)
    return np.exp(-1j * np.pi * np.outer(omega, m)) / np.sqrt(n_antennas)


def best_beam(h: np.ndarray, codebook: np.ndarray) -> int:
    """argmax_b sum_n |c_b^H h[:, n]|^2."""
    gain = np.abs(codebook.conj() @ h) ** 2
    return int(np.argmax(gain.sum(axis=1)))


@dataclass
class Labels:
    los: bool
    position: np.ndarray
    best_beams: dict[int, int] = field(default_factory=dict)


def derive_labels(params: MultipathParamSet, carrier_hi: CarrierConfig,
                  geometry_hi: ArrayGeometry, codebook_sizes=(1,)) -> Labels:
    """LoS flag and position pass through; beams come from re-synthesising at the high band."""
    h_hi = synthesize_csi(params, carrier_hi, geometry_hi)
    beams = {int(s): best_beam(h_hi, dft_codebook(carrier_hi.n_antennas, int(s)))
             for s in codebook_sizes}
    return Labels(params.los, np.array(params.position, copy=True), beams)
