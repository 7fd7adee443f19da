"""Quick invariant checks run by ``ma-isac selftest``."""
from __future__ import annotations

import numpy as np

from .ao import AoConfig, evaluate_solution, fpa_layout, run_algorithm1
from .beamforming import mvdr_receive, transmit_sdr
from .channel import (
    AntennaLayout,
    BeamformerSet,
    PathSet,
    ScenarioConfig,
    build_links,
    channel_vector,
    comm_sinrs,
    link_sensing_sinr,
    min_pairwise_distance,
    sample_realization,
)
from .sca import rx_objectives


def _check_channel(rng):
    ps = PathSet(rng.uniform(0, np.pi, 3), rng.uniform(0, np.pi, 3), rng.normal(size=3) + 1j * rng.normal(size=3))
    pos = rng.uniform(-0.1, 0.1, (4, 2))
    k = 2 * np.pi / 0.1
    rho = np.outer(pos[:, 0], np.sin(ps.elevations) * np.cos(ps.azimuths)) + np.outer(pos[:, 1], np.cos(ps.elevations))
    ref = np.exp(-1j * k * rho) @ ps.coefficients
    err = np.max(np.abs(channel_vector(pos, ps, 0.1) - ref)) / np.max(np.abs(ref))
    return err < 1e-12, f"rel_err={err:.2e}"


def _setup(seed=0):
    config = ScenarioConfig()
    real = sample_realization(config, seed)
    layout = AntennaLayout(
        fpa_layout(config.n_tx, config.wavelength, config.region),
        fpa_layout(config.n_rx, config.wavelength, config.region),
    )
    return config, real, layout, build_links(real, layout, config.wavelength)


def _check_mvdr(rng):
    config, _, _, links = _setup()
    W = rng.normal(size=(config.n_tx, config.n_tx)) + 1j * rng.normal(size=(config.n_tx, config.n_tx))
    L = len(links.rcs) - 1
    u = mvdr_receive(W, links.target_matrix(0), [links.target_matrix(q) for q in range(1, L + 1)], links.rcs, config.radar_noise)
    best = link_sensing_sinr(links, BeamformerSet(W, u), config.radar_noise)
    trials = rng.normal(size=(500, config.n_rx)) + 1j * rng.normal(size=(500, config.n_rx))
    worst = max(link_sensing_sinr(links, BeamformerSet(W, t), config.radar_noise) for t in trials)
    return worst <= best * (1 + 1e-9), f"mvdr={best:.4g} best_random={worst:.4g}"


def _check_sdr(rng):
    config, _, _, links = _setup()
    u = links.rx_reflectors[0] / np.linalg.norm(links.rx_reflectors[0])
    W, report = transmit_sdr(links, u, config)
    sinr = comm_sinrs(links.users, W, config.user_noise)
    ok = report.tight and np.all(sinr >= config.gamma * (1 - 1e-6)) and np.sum(np.abs(W) ** 2) <= config.power * (1 + 1e-6)
    return bool(ok), f"max_ratio={report.max_ratio:.2e} min_comm={sinr.min():.4g}"


def _check_gradient(rng):
    config, real, layout, links = _setup()
    W = rng.normal(size=(config.n_tx, config.n_tx)) + 1j * rng.normal(size=(config.n_tx, config.n_tx))
    u = links.rx_reflectors[0]
    f, _ = rx_objectives(real, links, W, u, layout.rx, config.wavelength, config.radar_noise)
    s = f.slice(1)
    x = layout.rx[1] + rng.uniform(-0.01, 0.01, 2)
    h = 1e-6
    fd = np.array([(s.value(x + h * e) - s.value(x - h * e)) / (2 * h) for e in np.eye(2)])
    err = np.linalg.norm(fd - s.gradient(x)) / np.linalg.norm(fd)
    return err < 1e-5, f"rel_err={err:.2e}"


def _check_pipeline(rng):
    config, real, _, _ = _setup(1)
    sol = run_algorithm1(real, config, AoConfig(iter_max=2))
    ev = evaluate_solution(sol, real, config)
    mono = all(b >= a * (1 - 1e-9) for a, b in zip(sol.trace, sol.trace[1:]))
    spaced = min_pairwise_distance(sol.layout.tx) >= config.min_spacing * (1 - 1e-6)
    return ev.ok and mono and spaced, f"violations={len(ev.violations)} monotone={mono}"


CHECKS = (
    ("channel_vector", _check_channel),
    ("mvdr_dominates_random", _check_mvdr),
    ("sdr_feasible_rank1", _check_sdr),
    ("gradient_fd", _check_gradient),
    ("pipeline_constraints", _check_pipeline),
)


def run_selftest(seed: int = 0):
    """Run every check; returns a list of ``(name, passed, detail)``."""
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
