"""Field-response channel model, scenario generation and SINR metrics.

Positions are 2D coordinates in meters inside a movable region. Each link
(BS to user, Tx to target/clutter, target/clutter to Rx) is a set of far-field
paths; the channel of an antenna depends on its position only through the
per-path propagation phase.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

Point3 = tuple[float, float, float]


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watt(value_dbm):
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(value)


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle in which antennas may move."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate region {self}")

    @classmethod
    def square(cls, side: float) -> "Region":
        """Square of the given side centred on the array reference point."""
        half = side / 2.0
        return cls(-half, half, -half, half)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max])

    def contains(self, positions, atol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(positions)
        return np.all((p >= self.lower - atol) & (p <= self.upper + atol), axis=1)

    def clip(self, positions) -> np.ndarray:
        return np.clip(positions, self.lower, self.upper)


@dataclass(frozen=True)
class PathSet:
    """Far-field paths of one link.

    ``elevations``/``azimuths`` are in radians, ``coefficients`` are the
    complex path responses referenced to the region origin. Path 0 is the
    line-of-sight path when the set was drawn by :func:`sample_realization`.
    """

    elevations: np.ndarray
    azimuths: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        el = np.asarray(self.elevations, dtype=float)
        az = np.asarray(self.azimuths, dtype=float)
        g = np.asarray(self.coefficients, dtype=complex)
        if not (el.ndim == az.ndim == g.ndim == 1 and el.size == az.size == g.size):
            raise ValueError("path angle and coefficient lists must have equal length")
        if el.size == 0:
            raise ValueError("a path set needs at least one path")
        for name, arr in (("elevations", el), ("azimuths", az), ("coefficients", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def count(self) -> int:
        return self.elevations.size

    @property
    def directions(self) -> np.ndarray:
        """(L, 2) gradients of the phase difference w.r.t. (x, y)."""
        return np.stack(
            [np.sin(self.elevations) * np.cos(self.azimuths), np.cos(self.elevations)],
            axis=1,
        )


@dataclass(frozen=True)
class AntennaLayout:
    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        for name in ("tx", "rx"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def with_tx(self, tx) -> "AntennaLayout":
        return AntennaLayout(tx, self.rx)

    def with_rx(self, rx) -> "AntennaLayout":
        return AntennaLayout(self.tx, rx)


def min_pairwise_distance(positions) -> float:
    p = np.asarray(positions, dtype=float)
    if len(p) < 2:
        return math.inf
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    return float(dist[np.triu_indices(len(p), 1)].min())


@dataclass(frozen=True)
class ScenarioConfig:
    """All tunable knobs of a scenario. Defaults are the desk-scale setup."""

    tx_position: Point3 = (0.0, 0.0, 5.0)
    rx_position: Point3 = (0.0, 20.0, 5.0)
    target: Point3 = (0.0, 10.0, 5.0)
    clutters: tuple[Point3, ...] = ((10.0, 10.0, 5.0), (-10.0, 10.0, 5.0))
    users: tuple[Point3, ...] = ((15.0, 10.0, 0.0), (-15.0, 10.0, 0.0))
    n_tx: int = 6
    n_rx: int = 4
    user_paths: int = 4
    tx_target_paths: int = 4
    rx_target_paths: int = 4
    user_exponent: float = 2.5
    target_exponent: float = 2.2
    clutter_exponent: float = 2.3
    beta0_db: float = -30.0
    kappa: float = 1.0
    rcs_variance: float = 1.0
    user_noise_dbm: float = -80.0
    radar_noise_dbm: float = -80.0
    gamma_db: tuple[float, ...] = (0.0, 0.0)
    power_dbm: float = 24.0
    wavelength: float = 0.1
    min_spacing_wl: float = 0.5
    region_side_wl: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "clutters", tuple(tuple(map(float, c)) for c in self.clutters))
        object.__setattr__(self, "users", tuple(tuple(map(float, u)) for u in self.users))
        gamma = self.gamma_db
        if np.isscalar(gamma):
            gamma = (float(gamma),) * len(self.users)
        object.__setattr__(self, "gamma_db", tuple(float(g) for g in gamma))
        self.validate()

    def validate(self) -> None:
        if self.n_users < 1:
            raise ValueError("at least one user is required")
        if len(self.gamma_db) != self.n_users:
            raise ValueError("gamma_db needs one threshold per user")
        if self.n_tx < self.n_users:
            raise ValueError("n_tx must be >= number of users (one beam per user)")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be positive")
        if min(self.user_paths, self.tx_target_paths, self.rx_target_paths) < 1:
            raise ValueError("path counts must be positive")
        if self.wavelength <= 0 or self.rcs_variance <= 0 or self.kappa <= 0:
            raise ValueError("wavelength, rcs_variance and kappa must be positive")
        if self.min_spacing_wl < 0:
            raise ValueError("min spacing must be non-negative")
        for count in (self.n_tx, self.n_rx):
            need = self.min_spacing_wl * (math.ceil(math.sqrt(count)) - 1)
            if self.region_side_wl < need - 1e-12:
                raise ValueError(
                    f"region side {self.region_side_wl} wavelengths cannot hold "
                    f"a {count}-antenna grid at the minimum spacing"
                )

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_clutters(self) -> int:
        return len(self.clutters)

    @property
    def power(self) -> float:
        return float(dbm_to_watt(self.power_dbm))

    @property
    def user_noise(self) -> float:
        return float(dbm_to_watt(self.user_noise_dbm))

    @property
    def radar_noise(self) -> float:
        return float(dbm_to_watt(self.radar_noise_dbm))

    @property
    def beta0(self) -> float:
        return float(db_to_linear(self.beta0_db))

    @property
    def gamma(self) -> np.ndarray:
        return db_to_linear(self.gamma_db)

    @property
    def min_spacing(self) -> float:
        return self.min_spacing_wl * self.wavelength

    @property
    def region(self) -> Region:
        return Region.square(self.region_side_wl * self.wavelength)

    def with_updates(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


# -- config file --------------------------------------------------------------

CONFIG_SCHEMA = """\
Scenario config: one `key = value` per line, values in JSON, '#' starts a comment.
  tx_position, rx_position, target   [x, y, z] meters
  clutters, users                    [[x, y, z], ...]
  n_tx, n_rx                         antenna counts
  user_paths, tx_target_paths, rx_target_paths   paths per link
  user_exponent, target_exponent, clutter_exponent   path-loss exponents
  beta0_db        reference path gain at 1 m (dB)
  kappa           LoS-to-NLoS power ratio (linear)
  rcs_variance    variance of the RCS coefficients
  user_noise_dbm, radar_noise_dbm
  gamma_db        per-user SINR thresholds [dB, ...] (a scalar applies to all)
  power_dbm       transmit power budget
  wavelength      meters
  min_spacing_wl, region_side_wl   in wavelengths
"""


def load_config(path) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _freeze(json.loads(value))
    return ScenarioConfig(**values)


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def dump_config(config: ScenarioConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


# -- channel primitives -------------------------------------------------------

def phase_difference(pos, elevation, azimuth):
    """Propagation distance difference between ``pos`` and the origin."""
    pos = np.asarray(pos, dtype=float)
    return pos[..., 0] * np.sin(elevation) * np.cos(azimuth) + pos[..., 1] * np.cos(elevation)


def field_response_vector(pos, paths: PathSet, wavelength: float) -> np.ndarray:
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    rho = phase_difference(pos, paths.elevations, paths.azimuths)
    return np.exp(1j * 2 * np.pi / wavelength * rho)


def field_response_matrix(positions, paths: PathSet, wavelength: float) -> np.ndarray:
    """(L, A) matrix whose columns are the FRVs of each antenna."""
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    rho = p @ paths.directions.T  # (A, L)
    return np.exp(1j * 2 * np.pi / wavelength * rho).T


def channel_vector(positions, paths: PathSet, wavelength: float) -> np.ndarray:
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    if p.shape[0] == 0:
        raise ValueError("channel_vector needs at least one antenna")
    return field_response_matrix(p, paths, wavelength).conj().T @ paths.coefficients


def effective_target_matrix(rx_channel, tx_channel) -> np.ndarray:
    """H_q = h_r h_t^H, the (M, N) round-trip channel of one reflector."""
    return np.outer(np.asarray(rx_channel), np.conj(tx_channel))


# -- scenario sampling --------------------------------------------------------

@dataclass(frozen=True)
class ScenarioRealization:
    """One random draw of all path sets and RCS coefficients.

    Index 0 of ``tx_paths``/``rx_paths``/``rcs`` is the target, followed by
    the clutters in config order.
    """

    user_paths: tuple[PathSet, ...]
    tx_paths: tuple[PathSet, ...]
    rx_paths: tuple[PathSet, ...]
    rcs: np.ndarray
    seed: int

    @property
    def n_users(self) -> int:
        return len(self.user_paths)

    @property
    def n_clutters(self) -> int:
        return len(self.tx_paths) - 1


def path_variances(config: ScenarioConfig, distance: float, exponent: float, count: int) -> np.ndarray:
    """Per-path variances: LoS first, then equal-power NLoS paths."""
    total = config.beta0 * distance ** (-exponent)
    kappa = config.kappa
    if math.isinf(kappa):
        var = np.zeros(count)
        var[0] = total
        return var
    if count < 2:
        raise ValueError("a finite Rician factor needs at least 2 paths (one NLoS)")
    var = np.full(count, total / ((kappa + 1.0) * (count - 1)))
    var[0] = total * kappa / (kappa + 1.0)
    return var


def _complex_normal(rng, variances):
    variances = np.asarray(variances, dtype=float)
    z = rng.standard_normal(variances.shape) + 1j * rng.standard_normal(variances.shape)
    return z * np.sqrt(variances / 2.0)


def _draw_paths(rng, variances, low, high) -> PathSet:
    n = len(variances)
    el = rng.uniform(low, high, n)
    az = rng.uniform(low, high, n)
    return PathSet(el, az, _complex_normal(rng, variances))


DEPARTURE_DOMAIN = (-np.pi / 2, np.pi / 2)
ARRIVAL_DOMAIN = (0.0, np.pi)


def sample_realization(config: ScenarioConfig, seed: int) -> ScenarioRealization:
    """Draw path angles, path responses and RCS values for one seed.

    Departure angles are uniform on [-pi/2, pi/2], arrival angles on [0, pi].
    """
    rng = np.random.default_rng(seed)
    tx = np.asarray(config.tx_position, dtype=float)
    rx = np.asarray(config.rx_position, dtype=float)

    users = []
    for user in config.users:
        d = float(np.linalg.norm(np.asarray(user) - tx))
        var = path_variances(config, d, config.user_exponent, config.user_paths)
        users.append(_draw_paths(rng, var, *DEPARTURE_DOMAIN))

    reflectors = [(config.target, config.target_exponent)] + [
        (c, config.clutter_exponent) for c in config.clutters
    ]
    tx_paths, rx_paths = [], []
    for point, exponent in reflectors:
        point = np.asarray(point, dtype=float)
        d_t = float(np.linalg.norm(point - tx))
        d_r = float(np.linalg.norm(point - rx))
        var_t = path_variances(config, d_t, exponent, config.tx_target_paths)
        var_r = path_variances(config, d_r, exponent, config.rx_target_paths)
        tx_paths.append(_draw_paths(rng, var_t, *DEPARTURE_DOMAIN))
        rx_paths.append(_draw_paths(rng, var_r, *ARRIVAL_DOMAIN))

    rcs = _complex_normal(rng, np.full(len(reflectors), config.rcs_variance))
    rcs.setflags(write=False)
    return ScenarioRealization(tuple(users), tuple(tx_paths), tuple(rx_paths), rcs, int(seed))


def dump_realization(realization: ScenarioRealization) -> str:
    """Flat CSV dump of every path of every link, full float precision."""
    lines = ["link,index,path,elevation,azimuth,coef_re,coef_im"]
    groups = (("user", realization.user_paths), ("tx", realization.tx_paths), ("rx", realization.rx_paths))
    for link, sets in groups:
        for idx, ps in enumerate(sets):
            for p in range(ps.count):
                g = ps.coefficients[p]
                lines.append(
                    f"{link},{idx},{p},{ps.elevations[p]!r},{ps.azimuths[p]!r},{g.real!r},{g.imag!r}"
                )
    for q, a in enumerate(realization.rcs):
        lines.append(f"rcs,{q},0,,,{a.real!r},{a.imag!r}")
    return "\n".join(lines) + "\n"


# -- channels for a layout ----------------------------------------------------

@dataclass(frozen=True)
class LinkChannels:
    """Channel vectors for a given layout.

    users: (K, N); tx_reflectors: (1+L, N); rx_reflectors: (1+L, M);
    rcs: (1+L,), target first.
    """

    users: np.ndarray
    tx_reflectors: np.ndarray
    rx_reflectors: np.ndarray
    rcs: np.ndarray

    def target_matrix(self, q: int) -> np.ndarray:
        return effective_target_matrix(self.rx_reflectors[q], self.tx_reflectors[q])


def build_links(realization: ScenarioRealization, layout: AntennaLayout, wavelength: float) -> LinkChannels:
    users = np.array([channel_vector(layout.tx, ps, wavelength) for ps in realization.user_paths])
    tx = np.array([channel_vector(layout.tx, ps, wavelength) for ps in realization.tx_paths])
    rx = np.array([channel_vector(layout.rx, ps, wavelength) for ps in realization.rx_paths])
    return LinkChannels(users, tx, rx, np.asarray(realization.rcs))


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class BeamformerSet:
    """Transmit beams as rows of ``tx`` (first K serve users) and receive filter ``rx``."""

    tx: np.ndarray
    rx: np.ndarray

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.tx) ** 2))


def comm_sinr(k: int, user_channels, tx_beams, noise: float) -> float:
    h = np.asarray(user_channels)[k]
    gains = np.abs(np.asarray(tx_beams) @ h.conj()) ** 2
    return float(gains[k] / (gains.sum() - gains[k] + noise))


def comm_sinrs(user_channels, tx_beams, noise: float) -> np.ndarray:
    return np.array([comm_sinr(k, user_channels, tx_beams, noise) for k in range(len(user_channels))])


def sensing_sinr(beams: BeamformerSet, target_matrix, clutter_matrices: Sequence, rcs, noise: float) -> float:
    """Radar output SINR of the target for receive filter ``beams.rx``."""
    u = np.asarray(beams.rx)
    W = np.asarray(beams.tx)
    rcs = np.asarray(rcs)

    def echo_power(H, alpha):
        return abs(alpha) ** 2 * float(np.sum(np.abs((u.conj() @ H) @ W.T) ** 2))

    signal = echo_power(target_matrix, rcs[0])
    clutter = sum(echo_power(H, a) for H, a in zip(clutter_matrices, rcs[1:]))
    return float(signal / (clutter + noise * float(np.vdot(u, u).real)))


def link_sensing_sinr(links: LinkChannels, beams: BeamformerSet, noise: float) -> float:
    L = len(links.rcs) - 1
    return sensing_sinr(
        beams,
        links.target_matrix(0),
        [links.target_matrix(q) for q in range(1, L + 1)],
        links.rcs,
        noise,
    )
