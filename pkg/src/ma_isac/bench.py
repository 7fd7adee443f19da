"""Experiment harness: parameter sweeps, transmit beampatterns and receive gain maps."""
from __future__ import annotations

import datetime as _dt
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ao import AoConfig, Scheme, compare_schemes
from .channel import PathSet, Region, ScenarioConfig, channel_vector, linear_to_db, sample_realization
from .convex import InfeasibleError, SolverError

SWEEP_PARAMS = {
    "power": "transmit power budget in dBm",
    "n_tx": "number of transmit antennas",
    "n_rx": "number of receive antennas",
    "gamma": "SINR threshold of every user in dB",
    "gamma1": "SINR threshold of the first user in dB (others unchanged)",
    "area": "movable region side in wavelengths",
    "kappa": "Rician factor (linear)",
}


def apply_param(config: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    if param == "power":
        return config.with_updates(power_dbm=float(value))
    if param == "n_tx":
        return config.with_updates(n_tx=int(value))
    if param == "n_rx":
        return config.with_updates(n_rx=int(value))
    if param == "gamma":
        return config.with_updates(gamma_db=(float(value),) * config.n_users)
    if param == "gamma1":
        return config.with_updates(gamma_db=(float(value),) + tuple(config.gamma_db[1:]))
    if param == "area":
        return config.with_updates(region_side_wl=float(value))
    if param == "kappa":
        return config.with_updates(kappa=float(value))
    raise ValueError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}")


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]
    seeds: tuple[int, ...]
    schemes: tuple[Scheme, ...]
    out: Path | None = None

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}")
        object.__setattr__(self, "schemes", tuple(Scheme.parse(s) if isinstance(s, str) else s for s in self.schemes))


@dataclass(frozen=True)
class RunRow:
    param: str
    value: float
    scheme: str
    seed: int
    status: str
    sensing_sinr: float
    comm_sinrs: tuple[float, ...]
    iterations: int
    converged: bool

    @property
    def sensing_sinr_db(self) -> float:
        return float(linear_to_db(self.sensing_sinr)) if self.sensing_sinr > 0 else math.nan


def _run_point(args):
    param, value, seed, schemes, base, ao = args
    config = apply_param(base, param, value)
    realization = sample_realization(config, seed)
    nan_comm = (math.nan,) * config.n_users
    try:
        sols = compare_schemes(realization, config, ao, schemes)
    except InfeasibleError:
        return [RunRow(param, value, s.value, seed, "infeasible", math.nan, nan_comm, 0, False) for s in schemes]
    except SolverError:
        return [RunRow(param, value, s.value, seed, "numerical_failure", math.nan, nan_comm, 0, False) for s in schemes]
    rows = []
    for s in schemes:
        sol = sols[s]
        rows.append(
            RunRow(param, value, s.value, seed, "ok", sol.sensing_sinr, tuple(map(float, sol.comm_sinrs)), sol.iterations, sol.converged)
        )
    return rows


def run_sweep(spec: SweepSpec, base: ScenarioConfig, ao: AoConfig = AoConfig(), workers: int = 1) -> list[RunRow]:
    """Run every (value, seed) point; rows are sorted by value, scheme order, seed.

    Failed runs become rows with a non-``ok`` status and the sweep continues.
    When ``spec.out`` is set the rows and a summary are written to disk.
    """
    jobs = [(spec.param, v, s, spec.schemes, base, ao) for v in spec.values for s in spec.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    order = {s.value: i for i, s in enumerate(spec.schemes)}
    rows = sorted((r for rs in results for r in rs), key=lambda r: (spec.values.index(r.value), order[r.scheme], r.seed))
    if spec.out is not None:
        write_rows(rows, spec, base, spec.out)
        write_summary(summarize(rows), spec, summary_path(spec.out))
    return rows


def summary_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + "_summary" + (out.suffix or ".csv"))


def _meta(spec: SweepSpec, base: ScenarioConfig) -> list[str]:
    return [
        f"# generated {_dt.datetime.now().isoformat(timespec='seconds')}",
        f"# param={spec.param} values={','.join(map(repr, spec.values))}",
        f"# seeds={','.join(map(str, spec.seeds))} schemes={','.join(s.value for s in spec.schemes)}",
        f"# base n_tx={base.n_tx} n_rx={base.n_rx} users={base.n_users} clutters={base.n_clutters} "
        f"power_dbm={base.power_dbm} gamma_db={','.join(map(str, base.gamma_db))} area_wl={base.region_side_wl}",
    ]


def write_rows(rows: Sequence[RunRow], spec: SweepSpec, base: ScenarioConfig, path) -> None:
    k = max((len(r.comm_sinrs) for r in rows), default=0)
    header = ["param", "value", "scheme", "seed", "status", "sensing_sinr", "sensing_sinr_db"]
    header += [f"comm_sinr_{i + 1}" for i in range(k)] + ["iterations", "converged"]
    lines = _meta(spec, base) + [",".join(header)]
    for r in rows:
        comm = list(r.comm_sinrs) + [math.nan] * (k - len(r.comm_sinrs))
        fields = [r.param, repr(r.value), r.scheme, str(r.seed), r.status, repr(r.sensing_sinr), repr(r.sensing_sinr_db)]
        fields += [repr(c) for c in comm] + [str(r.iterations), str(int(r.converged))]
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SummaryRow:
    param: str
    value: float
    scheme: str
    runs: int
    mean_sinr: float
    stderr_sinr: float
    mean_sinr_db: float
    stderr_sinr_db: float


def _mean_stderr(x):
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return math.nan, math.nan
    if len(x) == 1:
        return float(x[0]), math.nan
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def summarize(rows: Sequence[RunRow]) -> list[SummaryRow]:
    """Mean and standard error over seeds of successful runs, per value and scheme."""
    keys = []
    for r in rows:
        if (r.param, r.value, r.scheme) not in keys:
            keys.append((r.param, r.value, r.scheme))
    out = []
    for key in keys:
        sel = [r for r in rows if (r.param, r.value, r.scheme) == key and r.status == "ok"]
        m, se = _mean_stderr([r.sensing_sinr for r in sel])
        mdb, sedb = _mean_stderr([r.sensing_sinr_db for r in sel])
        out.append(SummaryRow(*key, len(sel), m, se, mdb, sedb))
    return out


def write_summary(summary: Sequence[SummaryRow], spec: SweepSpec, path) -> None:
    lines = [f"# summary of {spec.param} sweep", "param,value,scheme,runs,mean_sinr,stderr_sinr,mean_sinr_db,stderr_sinr_db"]
    for s in summary:
        lines.append(
            f"{s.param},{s.value!r},{s.scheme},{s.runs},{s.mean_sinr!r},{s.stderr_sinr!r},{s.mean_sinr_db!r},{s.stderr_sinr_db!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# -- beampattern / gain map ---------------------------------------------------

def steering_vector(positions, elevation: float, azimuth: float, wavelength: float) -> np.ndarray:
    """Array response toward one direction: the channel of a unit single path."""
    return channel_vector(positions, PathSet([elevation], [azimuth], [1.0]), wavelength)


@dataclass(frozen=True)
class BeampatternRequest:
    elevations: np.ndarray
    azimuth: float
    positions: np.ndarray
    beams: np.ndarray
    wavelength: float
    normalize: bool = False

    def __post_init__(self):
        el = np.asarray(self.elevations, dtype=float)
        if np.any(np.diff(el) < 0):
            raise ValueError("elevation grid must be sorted")
        object.__setattr__(self, "elevations", el)


def beampattern(request: BeampatternRequest) -> np.ndarray:
    """Transmit gain sum_n |a(phi)^H w_n|^2 for each elevation of the request."""
    W = np.atleast_2d(request.beams)
    gains = np.array(
        [
            float(np.sum(np.abs(W @ steering_vector(request.positions, el, request.azimuth, request.wavelength).conj()) ** 2))
            for el in request.elevations
        ]
    )
    if request.normalize and gains.max() > 0:
        gains = gains / gains.max()
    return gains


@dataclass(frozen=True)
class GainMap:
    xs: np.ndarray
    ys: np.ndarray
    gains: np.ndarray  # (len(ys), len(xs))

    def top_half_mask(self) -> np.ndarray:
        return self.gains >= np.median(self.gains)

    def cell_of(self, position) -> tuple[int, int]:
        x, y = position
        return int(np.argmin(np.abs(self.ys - y))), int(np.argmin(np.abs(self.xs - x)))

    def in_top_half(self, positions) -> np.ndarray:
        mask = self.top_half_mask()
        return np.array([mask[self.cell_of(p)] for p in np.atleast_2d(positions)])


def channel_gain_map(region: Region, resolution: int, paths: PathSet, wavelength: float) -> GainMap:
    """Single-antenna channel power |h|^2 on a uniform grid covering ``region``."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2 per axis")
    xs = np.linspace(region.x_min, region.x_max, resolution)
    ys = np.linspace(region.y_min, region.y_max, resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    h = channel_vector(pts, paths, wavelength)
    return GainMap(xs, ys, (np.abs(h) ** 2).reshape(X.shape))


def target_direction(realization, q: int = 0) -> tuple[float, float]:
    """Line-of-sight (elevation, azimuth) of the transmit-side path set of reflector ``q``."""
    ps = realization.tx_paths[q]
    return float(ps.elevations[0]), float(ps.azimuths[0])


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
