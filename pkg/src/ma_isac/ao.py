"""Alternating optimization of receive filter, transmit beams and antenna positions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .beamforming import TightnessReport, mvdr_receive, transmit_sdr
from .channel import (
    AntennaLayout,
    BeamformerSet,
    LinkChannels,
    Region,
    ScenarioConfig,
    ScenarioRealization,
    build_links,
    comm_sinrs,
    link_sensing_sinr,
    min_pairwise_distance,
)
from .convex import SolverError
from .sca import ScaConfig, comm_objectives, optimize_position, rx_objectives, tx_objectives, with_positions


class Scheme(enum.Enum):
    PROPOSED = "proposed"
    RECEIVE_MA = "receive_ma"
    TRANSMIT_MA = "transmit_ma"
    FPA = "fpa"

    @property
    def moves_rx(self) -> bool:
        return self in (Scheme.PROPOSED, Scheme.RECEIVE_MA)

    @property
    def moves_tx(self) -> bool:
        return self in (Scheme.PROPOSED, Scheme.TRANSMIT_MA)

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        key = name.strip().lower().replace("-", "_")
        for s in cls:
            if key in (s.value, s.name.lower(), s.value.replace("_", "")):
                return s
        raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(s.value for s in cls)}")


@dataclass(frozen=True)
class AoConfig:
    tol: float = 1e-3
    iter_max: int = 30
    scheme: Scheme = Scheme.PROPOSED
    sca: ScaConfig = ScaConfig()
    sdp_tol: float = 1e-7

    def __post_init__(self):
        if self.tol <= 0 or self.iter_max < 1:
            raise ValueError("tol must be positive and iter_max at least 1")


def fpa_layout(count: int, wavelength: float, region: Region) -> np.ndarray:
    """Half-wavelength planar grid, row-major from the region's lower corner."""
    if count < 1:
        raise ValueError("count must be positive")
    pitch = wavelength / 2
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    tol = 1e-12 * max(1.0, abs(region.x_max), abs(region.y_max))
    if region.x_min + (cols - 1) * pitch > region.x_max + tol or region.y_min + (rows - 1) * pitch > region.y_max + tol:
        raise ValueError(f"region too small for a {rows}x{cols} grid at pitch {pitch}")
    idx = np.arange(count)
    return np.stack([region.x_min + (idx % cols) * pitch, region.y_min + (idx // cols) * pitch], axis=1)


@dataclass(frozen=True)
class StageRecord:
    iteration: int
    stage: str
    objective: float


@dataclass
class Solution:
    beams: BeamformerSet
    layout: AntennaLayout
    sensing_sinr: float
    comm_sinrs: np.ndarray
    trace: list
    records: list
    reports: list
    iterations: int
    converged: bool
    scheme: Scheme
    seed: int | None = None

    def trace_text(self) -> str:
        lines = ["iteration,stage,objective"]
        lines += [f"{r.iteration},{r.stage},{r.objective!r}" for r in self.records]
        return "\n".join(lines) + "\n"


def _normalize(u):
    return u / np.linalg.norm(u)


def _mvdr(links: LinkChannels, W, noise):
    L = len(links.rcs) - 1
    return _normalize(
        mvdr_receive(W, links.target_matrix(0), [links.target_matrix(q) for q in range(1, L + 1)], links.rcs, noise)
    )


def _sweep_rx(realization, links, W, u, layout, config: ScenarioConfig, sca: ScaConfig):
    f, g = rx_objectives(realization, links, W, u, layout.rx, config.wavelength, config.radar_noise)
    pos = np.array(layout.rx)
    for m in range(len(pos)):
        f, g = with_positions(f, pos), with_positions(g, pos)
        pos[m], _ = optimize_position(m, f, g, config.region, config.min_spacing, config.wavelength, config=sca)
    return layout.with_rx(pos)


def _sweep_tx(realization, links, W, u, layout, config: ScenarioConfig, sca: ScaConfig):
    f, g = tx_objectives(realization, links, W, u, layout.tx, config.wavelength, config.radar_noise)
    comm = [
        comm_objectives(realization, W, k, layout.tx, config.wavelength, config.user_noise) + (config.gamma[k],)
        for k in range(config.n_users)
    ]
    pos = np.array(layout.tx)
    for n in range(len(pos)):
        f, g = with_positions(f, pos), with_positions(g, pos)
        cm = [(with_positions(a, pos), with_positions(b, pos), gam) for a, b, gam in comm]
        pos[n], _ = optimize_position(n, f, g, config.region, config.min_spacing, config.wavelength, cm, sca)
    return layout.with_tx(pos)


def initial_state(realization: ScenarioRealization, config: ScenarioConfig, sdp_tol: float = 1e-7):
    """FPA layouts, target-matched receive filter and the SDR beams for it."""
    layout = AntennaLayout(
        fpa_layout(config.n_tx, config.wavelength, config.region),
        fpa_layout(config.n_rx, config.wavelength, config.region),
    )
    links = build_links(realization, layout, config.wavelength)
    u = _normalize(links.rx_reflectors[0])
    W, report = transmit_sdr(links, u, config, tol=sdp_tol)
    return layout, u, W, report


def run_algorithm1(
    realization: ScenarioRealization,
    config: ScenarioConfig,
    ao: AoConfig = AoConfig(),
    start: Solution | None = None,
) -> Solution:
    """Alternate receive filter, transmit beams, receive and transmit positions.

    Each stage keeps its previous value when the update would lower the
    sensing SINR, so the objective trace is non-decreasing. ``start`` warm
    starts from an earlier solution (same realization).

    Raises
    ------
    InfeasibleError
        The initial beamforming problem has no solution.
    """
    reports: list[TightnessReport] = []
    if start is None:
        layout, u, W, report = initial_state(realization, config, ao.sdp_tol)
        reports.append(report)
    else:
        layout, u, W = start.layout, start.beams.rx, start.beams.tx
    links = build_links(realization, layout, config.wavelength)

    def objective(links, W, u):
        return link_sensing_sinr(links, BeamformerSet(W, u), config.radar_noise)

    obj = objective(links, W, u)
    records = [StageRecord(0, "init", obj)]
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, ao.iter_max + 1):
        prev = obj
        try:
            u_new = _mvdr(links, W, config.radar_noise)
            val = objective(links, W, u_new)
            if val >= obj:
                u, obj = u_new, val
        except ValueError:
            pass
        records.append(StageRecord(it, "receive_beam", obj))

        try:
            W_new, report = transmit_sdr(links, u, config, tol=ao.sdp_tol)
            reports.append(report)
            val = objective(links, W_new, u)
            if val >= obj:
                W, obj = W_new, val
        except SolverError:
            pass
        records.append(StageRecord(it, "transmit_beam", obj))

        if ao.scheme.moves_rx:
            cand = _sweep_rx(realization, links, W, u, layout, config, ao.sca)
            cl = build_links(realization, cand, config.wavelength)
            val = objective(cl, W, u)
            if val >= obj:
                layout, links, obj = cand, cl, val
            records.append(StageRecord(it, "receive_positions", obj))

        if ao.scheme.moves_tx:
            cand = _sweep_tx(realization, links, W, u, layout, config, ao.sca)
            cl = build_links(realization, cand, config.wavelength)
            val = objective(cl, W, u)
            if val >= obj:
                layout, links, obj = cand, cl, val
            records.append(StageRecord(it, "transmit_positions", obj))

        trace.append(obj)
        if (obj - prev) / abs(prev) < ao.tol:
            converged = True
            break

    beams = BeamformerSet(W, u)
    return Solution(
        beams,
        layout,
        obj,
        comm_sinrs(links.users, W, config.user_noise),
        trace,
        records,
        reports,
        it,
        converged,
        ao.scheme,
        realization.seed,
    )


def compare_schemes(realization: ScenarioRealization, config: ScenarioConfig, ao: AoConfig = AoConfig(), schemes=None):
    """Run baselines and the joint scheme on one realization.

    Runs are chained: FPA from the initial state, the single-side schemes from
    the FPA result and the joint scheme from the better single-side result,
    so each scheme starts where the one it should dominate finished.
    """
    wanted = set(Scheme) if schemes is None else {Scheme.parse(s) if isinstance(s, str) else s for s in schemes}
    out = {}
    fpa = run_algorithm1(realization, config, _with_scheme(ao, Scheme.FPA))
    out[Scheme.FPA] = fpa
    singles = (Scheme.RECEIVE_MA, Scheme.TRANSMIT_MA)
    for s in singles:
        if s in wanted or Scheme.PROPOSED in wanted:
            out[s] = run_algorithm1(realization, config, _with_scheme(ao, s), start=fpa)
    if Scheme.PROPOSED in wanted:
        best = max((out[Scheme.RECEIVE_MA], out[Scheme.TRANSMIT_MA]), key=lambda s: s.sensing_sinr)
        out[Scheme.PROPOSED] = run_algorithm1(realization, config, _with_scheme(ao, Scheme.PROPOSED), start=best)
    return {s: out[s] for s in Scheme if s in wanted}


def _with_scheme(ao: AoConfig, scheme: Scheme) -> AoConfig:
    return AoConfig(ao.tol, ao.iter_max, scheme, ao.sca, ao.sdp_tol)


@dataclass(frozen=True)
class Evaluation:
    sensing_sinr: float
    comm_sinrs: np.ndarray
    power: float
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def evaluate_solution(solution: Solution, realization: ScenarioRealization, config: ScenarioConfig, rtol: float = 1e-6) -> Evaluation:
    """Recompute every metric from scratch and list violated constraints."""
    layout = solution.layout
    links = build_links(realization, layout, config.wavelength)
    W = np.asarray(solution.beams.tx)
    u = np.asarray(solution.beams.rx)
    L = len(links.rcs) - 1
    H_d = np.outer(links.rx_reflectors[0], links.tx_reflectors[0].conj())
    H_c = [np.outer(links.rx_reflectors[q], links.tx_reflectors[q].conj()) for q in range(1, L + 1)]
    signal = sum(abs(links.rcs[0] * (u.conj() @ H_d @ w)) ** 2 for w in W)
    clutter = sum(abs(links.rcs[q + 1] * (u.conj() @ H @ w)) ** 2 for q, H in enumerate(H_c) for w in W)
    sensing = float(signal / (clutter + config.radar_noise * np.vdot(u, u).real))
    comm = []
    for k, h in enumerate(links.users):
        gains = [abs(np.vdot(h, w)) ** 2 for w in W]
        comm.append(gains[k] / (sum(gains) - gains[k] + config.user_noise))
    comm = np.array(comm)
    power = float(np.sum(np.abs(W) ** 2))

    bad = []
    for k, (s, g) in enumerate(zip(comm, config.gamma)):
        if s < g * (1 - rtol):
            bad.append(f"user {k} SINR {s:.6g} below threshold {g:.6g}")
    if power > config.power * (1 + rtol):
        bad.append(f"power {power:.6g} above budget {config.power:.6g}")
    region = config.region
    tol = rtol * config.wavelength
    for side, pos in (("tx", layout.tx), ("rx", layout.rx)):
        if not np.all(region.contains(pos, atol=tol)):
            bad.append(f"{side} antenna outside region")
        if min_pairwise_distance(pos) < config.min_spacing * (1 - rtol):
            bad.append(f"{side} spacing {min_pairwise_distance(pos):.6g} below {config.min_spacing:.6g}")
    if not math.isclose(sensing, solution.sensing_sinr, rel_tol=1e-9):
        bad.append(f"stored sensing SINR {solution.sensing_sinr:.12g} differs from recomputed {sensing:.12g}")
    return Evaluation(sensing, comm, power, tuple(bad))
