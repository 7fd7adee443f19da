import math

import numpy as np
import pytest

from ma_isac.channel import BeamformerSet, PathSet, Region, build_links, comm_sinr, link_sensing_sinr, sample_realization
from ma_isac.sca import (
    ScaConfig,
    comm_objectives,
    distance_linearization,
    optimize_position,
    rx_objectives,
    surrogate_bounds,
    tx_objectives,
    with_positions,
)

from conftest import crandn, random_layout


def scene(desk, rng, seed=0):
    real = sample_realization(desk, seed)
    layout = random_layout(desk, rng)
    links = build_links(real, layout, desk.wavelength)
    W = crandn(rng, desk.n_tx, desk.n_tx)
    u = crandn(rng, desk.n_rx)
    return real, layout, links, W, u


def objectives(side, desk, real, layout, links, W, u):
    if side == "rx":
        return rx_objectives(real, links, W, u, layout.rx, desk.wavelength, desk.radar_noise)
    return tx_objectives(real, links, W, u, layout.tx, desk.wavelength, desk.radar_noise)


def fd_gradient(fun, x, h=1e-6):
    return np.array([(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(2)])


def fd_hessian(grad, x, h=1e-6):
    cols = [(grad(x + h * e) - grad(x - h * e)) / (2 * h) for e in np.eye(2)]
    H = np.array(cols).T
    return 0.5 * (H + H.T)


# -- decompositions -----------------------------------------------------------

@pytest.mark.parametrize("side", ["rx", "tx"])
def test_ratio_equals_sensing_sinr(desk, rng, side):
    for seed in range(20):
        real, layout, links, W, u = scene(desk, rng, seed)
        f, g = objectives(side, desk, real, layout, links, W, u)
        ref = link_sensing_sinr(links, BeamformerSet(W, u), desk.radar_noise)
        assert f.value() / g.value() == pytest.approx(ref, rel=1e-10)
        # moving one antenna: slice value equals a fresh rebuild
        i = int(rng.integers(len(f.positions)))
        x = f.positions[i] + rng.uniform(-0.05, 0.05, 2)
        moved = layout.with_rx(_put(layout.rx, i, x)) if side == "rx" else layout.with_tx(_put(layout.tx, i, x))
        ref = link_sensing_sinr(build_links(real, moved, desk.wavelength), BeamformerSet(W, u), desk.radar_noise)
        assert f.slice(i).value(x) / g.slice(i).value(x) == pytest.approx(ref, rel=1e-10)


def _put(p, i, x):
    p = np.array(p, dtype=float)
    p[i] = x
    return p


@pytest.mark.parametrize("side", ["rx", "tx"])
def test_cosine_form_matches_complex_form(desk, rng, side):
    real, layout, links, W, u = scene(desk, rng)
    f, g = objectives(side, desk, real, layout, links, W, u)
    for _ in range(20):
        i = int(rng.integers(len(f.positions)))
        x = rng.uniform(-0.15, 0.15, 2)
        for obj in (f, g):
            s = obj.slice(i)
            assert s.value_cosine(x) == pytest.approx(s.value(x), rel=1e-10)


def test_single_rx_antenna_no_clutter_denominator_is_constant(rng):
    from ma_isac.channel import ScenarioConfig

    config = ScenarioConfig(n_rx=1, clutters=())
    real, layout, links, W, u = scene(config, rng)
    f, g = rx_objectives(real, links, W, u, layout.rx, config.wavelength, config.radar_noise)
    s = g.slice(0)
    assert s.value(np.array([0.03, -0.02])) == pytest.approx(config.radar_noise * abs(u[0]) ** 2, rel=1e-12)
    np.testing.assert_allclose(s.gradient(np.array([0.01, 0.02])), 0.0, atol=0)
    assert s.curvature_bound() == 0.0


def test_single_path_single_antenna_has_no_gradient():
    ps = PathSet([0.7], [0.3], [1.5 - 0.5j])
    from ma_isac.sca import ArrayObjective, PathGroup

    grp = PathGroup(ps.directions, ps.coefficients[None, :], np.array([[2.0 + 1j]]), np.ones(1))
    obj = ArrayObjective((grp,), np.zeros((1, 2)), 2 * np.pi / 0.1, -1.0)
    s = obj.slice(0)
    for x in np.random.default_rng(0).uniform(-0.2, 0.2, (5, 2)):
        np.testing.assert_allclose(s.gradient(x), 0.0, atol=1e-12)
        np.testing.assert_allclose(s.hessian(x), 0.0, atol=1e-9)


# -- gradients / curvature ----------------------------------------------------

@pytest.mark.parametrize("side", ["rx", "tx"])
def test_gradient_matches_finite_differences(desk, rng, side):
    real, layout, links, W, u = scene(desk, rng)
    f, g = objectives(side, desk, real, layout, links, W, u)
    for _ in range(100):
        i = int(rng.integers(len(f.positions)))
        x = rng.uniform(-0.15, 0.15, 2)
        for obj in (f, g):
            s = obj.slice(i)
            fd = fd_gradient(s.value, x)
            an = s.gradient(x)
            assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12 * s.value(x))


@pytest.mark.parametrize("side", ["rx", "tx"])
def test_hessian_norm_below_curvature_bound(desk, rng, side):
    real, layout, links, W, u = scene(desk, rng)
    f, g = objectives(side, desk, real, layout, links, W, u)
    for _ in range(100):
        i = int(rng.integers(len(f.positions)))
        x = rng.uniform(-0.15, 0.15, 2)
        for obj in (f, g):
            s = obj.slice(i)
            H = fd_hessian(s.gradient, x)
            np.testing.assert_allclose(s.hessian(x), H, rtol=1e-5, atol=1e-5 * np.abs(H).max())
            assert np.linalg.norm(H, 2) <= s.curvature_bound() * (1 + 1e-9)


def test_curvature_self_term_scales_quadratically(desk, rng):
    from ma_isac.channel import ScenarioConfig

    config = ScenarioConfig(n_rx=1)
    real, layout, links, W, u = scene(config, rng)
    f1, _ = rx_objectives(real, links, W, u, layout.rx, config.wavelength, config.radar_noise)
    f2, _ = rx_objectives(real, links, W, 2 * u, layout.rx, config.wavelength, config.radar_noise)
    assert f2.slice(0).curvature_bound() == pytest.approx(4 * f1.slice(0).curvature_bound(), rel=1e-12)


def test_no_clutter_curvature_is_zero(rng):
    from ma_isac.channel import ScenarioConfig

    config = ScenarioConfig(clutters=())
    real, layout, links, W, u = scene(config, rng)
    for side in ("rx", "tx"):
        _, g = objectives(side, config, real, layout, links, W, u)
        assert g.slice(1).curvature_bound() == 0.0


# -- surrogates ---------------------------------------------------------------

@pytest.mark.parametrize("side", ["rx", "tx"])
def test_surrogate_bounds(desk, rng, side):
    real, layout, links, W, u = scene(desk, rng)
    f, g = objectives(side, desk, real, layout, links, W, u)
    for _ in range(10):
        i = int(rng.integers(len(f.positions)))
        fs, gs = f.slice(i), g.slice(i)
        x0 = rng.uniform(-0.15, 0.15, 2)
        args = (fs.value(x0), fs.gradient(x0), fs.curvature_bound(), gs.value(x0), gs.gradient(x0), gs.curvature_bound())
        lo, up = surrogate_bounds(x0, x0, *args)
        assert lo == pytest.approx(fs.value(x0), rel=1e-9) and up == pytest.approx(gs.value(x0), rel=1e-9)
        xs = x0 + rng.uniform(-0.3, 0.3, (1000, 2))
        lo, up = surrogate_bounds(xs, x0, *args)
        scale_f, scale_g = abs(fs.value(x0)), abs(gs.value(x0))
        assert np.all(lo <= fs.value(xs) + 1e-9 * scale_f)
        assert np.all(up >= gs.value(xs) - 1e-9 * scale_g)


def test_surrogate_curvature_signs():
    x0, zero = np.zeros(2), np.zeros(2)
    pts = np.array([[0.1, 0.0], [-0.1, 0.0], [0.0, 0.0]])
    lo, up = surrogate_bounds(pts, x0, 0.0, zero, 3.0, 0.0, zero, 3.0)
    # midpoint value versus the endpoints: concave lower bound, convex upper bound
    assert lo[2] > 0.5 * (lo[0] + lo[1])
    assert up[2] < 0.5 * (up[0] + up[1])
    np.testing.assert_allclose(lo, -1.5 * np.sum(pts**2, 1))


def test_comm_surrogate_implies_exact_sinr(desk, rng):
    real, layout, links, W, u = scene(desk, rng)
    for k in range(desk.n_users):
        cf, cg = comm_objectives(real, W, k, layout.tx, desk.wavelength, desk.user_noise)
        n = int(rng.integers(desk.n_tx))
        cs, ig = cf.slice(n), cg.slice(n)
        x0 = layout.tx[n]
        target = cs.value(x0) / ig.value(x0) * 0.5
        args = (cs.value(x0), cs.gradient(x0), cs.curvature_bound(), ig.value(x0), ig.gradient(x0), ig.curvature_bound())
        # at the expansion point the surrogate is exact
        lo, up = surrogate_bounds(x0, x0, *args)
        assert lo / up == pytest.approx(comm_sinr(k, links.users, W, desk.user_noise), rel=1e-10)
        xs = x0 + rng.uniform(-0.02, 0.02, (1000, 2))
        lo, up = surrogate_bounds(xs, x0, *args)
        feasible = xs[lo >= target * up]
        assert len(feasible) > 0
        exact = cs.value(feasible) / ig.value(feasible)
        assert np.all(exact >= target * (1 - 1e-9))
        # a zero threshold is always met
        assert np.all(cs.value(xs) >= 0)


# -- distance linearization ---------------------------------------------------

def test_distance_linearization_at_anchor_and_implication(rng):
    D = 0.05
    other = np.array([0.01, -0.02])
    anchor = other + np.array([0.03, 0.05])
    e, rhs = distance_linearization(anchor, other, D)
    assert np.linalg.norm(anchor - other) >= D and e @ anchor >= rhs
    xs = rng.uniform(-0.3, 0.3, (10_000, 2))
    sat = xs[xs @ e >= rhs]
    assert len(sat) > 1000
    assert np.all(np.linalg.norm(sat - other, axis=1) >= D - 1e-12)


def test_distance_linearization_rejects_coincident():
    with pytest.raises(ValueError):
        distance_linearization([0.1, 0.1], [0.1, 0.1], 0.05)


# -- per-antenna optimization -------------------------------------------------

def test_optimize_position_monotone_and_feasible(desk, rng):
    real, layout, links, W, u = scene(desk, rng, 3)
    for side in ("rx", "tx"):
        f, g = objectives(side, desk, real, layout, links, W, u)
        pos = f.positions
        # spread the layout so spacing holds
        grid = np.array([[x, y] for x in (-0.12, 0.0, 0.12) for y in (-0.12, 0.12)])[: len(pos)]
        f, g = with_positions(f, grid), with_positions(g, grid)
        x, trace = optimize_position(0, f, g, desk.region, desk.min_spacing, desk.wavelength)
        assert all(b >= a for a, b in zip(trace.ratios, trace.ratios[1:]))
        assert desk.region.contains(x, atol=1e-12)
        others = np.delete(grid, 0, axis=0)
        assert np.min(np.linalg.norm(others - x, axis=1)) >= desk.min_spacing * (1 - 1e-6)
        assert f.slice(0).value(x) / g.slice(0).value(x) >= trace.ratios[0]


def test_optimize_position_tx_keeps_comm_thresholds(desk, rng):
    real, layout, links, W, u = scene(desk, rng, 4)
    grid = np.array([[x, y] for x in (-0.12, 0.0, 0.12) for y in (-0.12, 0.12)])
    f, g = tx_objectives(real, links, W, u, grid, desk.wavelength, desk.radar_noise)
    comm = []
    for k in range(desk.n_users):
        cf, cg = comm_objectives(real, W, k, grid, desk.wavelength, desk.user_noise)
        comm.append((cf, cg, 0.5 * cf.value() / cg.value()))
    x, trace = optimize_position(2, f, g, desk.region, desk.min_spacing, desk.wavelength, comm)
    for cf, cg, gam in comm:
        assert cf.slice(2).value(x) / cg.slice(2).value(x) >= gam * (1 - 1e-8)


def test_optimize_position_stationary_start():
    # single antenna, single path, no clutter: the ratio is constant, so nothing moves
    from ma_isac.sca import ArrayObjective, PathGroup

    ps = PathSet([0.7], [0.3], [1.0 + 0j])
    grp = PathGroup(ps.directions, ps.coefficients[None, :], np.ones((1, 1)), np.ones(1))
    f = ArrayObjective((grp,), np.zeros((1, 2)), 2 * np.pi / 0.1, -1.0)
    g = ArrayObjective((), np.zeros((1, 2)), 2 * np.pi / 0.1, -1.0, 1.0)
    x, _ = optimize_position(0, f, g, Region.square(0.3), 0.05, 0.1)
    assert np.linalg.norm(x) < 1e-4 * 0.1


def test_optimize_position_single_antenna_grid_oracle(rng):
    from ma_isac.channel import ScenarioConfig

    config = ScenarioConfig(n_rx=1)
    for seed in range(4):
        real, layout, links, W, u = scene(config, rng, seed)
        f, g = rx_objectives(real, links, W, u, np.zeros((1, 2)), config.wavelength, config.radar_noise)
        fs, gs = f.slice(0), g.slice(0)
        r = config.region
        xs = np.linspace(r.x_min, r.x_max, 301)
        pts = np.array([[a, b] for a in xs for b in xs])
        V = (fs.value(pts) / gs.value(pts)).reshape(len(xs), len(xs))
        grid_best = float(V.max())
        # landscape gradient scale from grid differences
        scale = max(np.abs(np.diff(V, axis=0)).max(), np.abs(np.diff(V, axis=1)).max()) / (xs[1] - xs[0])
        x, _ = optimize_position(0, f, g, r, config.min_spacing, config.wavelength, config=ScaConfig(max_iter=200, tol=1e-9))
        val = fs.value(x) / gs.value(x)
        grad = fs.gradient(x) / gs.value(x) - fs.value(x) * gs.gradient(x) / gs.value(x) ** 2
        # gradient with components pushing against an active box side removed
        pg = grad.copy()
        pg[(x >= r.upper - 1e-9) & (grad > 0)] = 0.0
        pg[(x <= r.lower + 1e-9) & (grad < 0)] = 0.0
        local = np.linalg.norm(pg) < 1e-4 * scale
        assert val >= 0.9 * grid_best or local


def test_optimize_position_single_tx_antenna_grid_oracle(rng):
    from ma_isac.channel import ScenarioConfig

    config = ScenarioConfig(n_tx=1, users=((15.0, 10.0, 0.0),), gamma_db=(0.0,))
    r = config.region
    xs = np.linspace(r.x_min, r.x_max, 301)
    pts = np.array([[a, b] for a in xs for b in xs])
    for seed in range(4):
        real, layout, links, W, u = scene(config, rng, seed)
        W = W * np.sqrt(config.power) / np.linalg.norm(W)
        start = np.zeros((1, 2))
        f, g = tx_objectives(real, links, W, u, start, config.wavelength, config.radar_noise)
        cf, cg = comm_objectives(real, W, 0, start, config.wavelength, config.user_noise)
        gam = min(config.gamma[0], cf.value() / cg.value())
        fs, gs, cs, ig = f.slice(0), g.slice(0), cf.slice(0), cg.slice(0)
        ok = cs.value(pts) / ig.value(pts) >= gam
        V = np.where(ok, fs.value(pts) / gs.value(pts), -np.inf).reshape(len(xs), len(xs))
        grid_best = float(V.max())
        x, trace = optimize_position(
            0, f, g, r, config.min_spacing, config.wavelength, [(cf, cg, config.gamma[0])], ScaConfig(max_iter=200, tol=1e-9)
        )
        assert cs.value(x) / ig.value(x) >= gam * (1 - 1e-8)
        assert all(b >= a for a, b in zip(trace.ratios, trace.ratios[1:]))
        val = fs.value(x) / gs.value(x)
        if val >= 0.9 * grid_best:
            continue
        # otherwise a constrained local maximum: no feasible improving neighbour on a fine local grid
        h = 1e-4 * config.wavelength
        near = x + h * np.array([[a, b] for a in (-1, 0, 1) for b in (-1, 0, 1)])
        near = near[r.contains(near) & (cs.value(near) / ig.value(near) >= gam)]
        assert np.max(fs.value(near) / gs.value(near)) <= val * (1 + 1e-6)
