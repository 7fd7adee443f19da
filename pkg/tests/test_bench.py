import math

import numpy as np
import pytest

from ma_isac.ao import AoConfig, Scheme, fpa_layout
from ma_isac.bench import (
    BeampatternRequest,
    RunRow,
    SweepSpec,
    apply_param,
    beampattern,
    channel_gain_map,
    run_sweep,
    steering_vector,
    summarize,
    summary_path,
    target_direction,
)
from ma_isac.channel import PathSet, Region, ScenarioConfig, sample_realization

LAM = 0.1
FAST = AoConfig(iter_max=2)


def data_lines(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


def test_apply_param():
    base = ScenarioConfig()
    assert apply_param(base, "power", 18).power_dbm == 18.0
    assert apply_param(base, "gamma", 5).gamma_db == (5.0, 5.0)
    assert apply_param(base, "gamma1", 20).gamma_db == (20.0, 0.0)
    assert apply_param(base, "area", 2.5).region_side_wl == 2.5
    assert apply_param(base, "n_rx", 6).n_rx == 6
    with pytest.raises(ValueError):
        apply_param(base, "bandwidth", 1)


def test_sweep_spec_invariants():
    with pytest.raises(ValueError):
        SweepSpec("power", (), (0,), ("fpa",))
    with pytest.raises(ValueError):
        SweepSpec("power", (20.0,), (), ("fpa",))
    with pytest.raises(ValueError):
        SweepSpec("speed", (1.0,), (0,), ("fpa",))
    assert SweepSpec("power", (20.0,), (0,), ("fpa",)).schemes == (Scheme.FPA,)


def test_single_point_sweep_writes_one_row(tmp_path):
    out = tmp_path / "one.csv"
    rows = run_sweep(SweepSpec("power", (20.0,), (3,), ("fpa",), out), ScenarioConfig(), FAST)
    assert len(rows) == 1 and rows[0].status == "ok"
    lines = data_lines(out)
    assert len(lines) == 2 and lines[0].startswith("param,value,scheme,seed,status")
    assert summary_path(out).exists()


def test_sweep_deterministic_and_aggregates(tmp_path):
    spec = lambda out: SweepSpec("power", (18.0, 24.0), (0, 1), ("fpa", "receive_ma"), out)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    rows = run_sweep(spec(a), ScenarioConfig(), FAST)
    run_sweep(spec(b), ScenarioConfig(), FAST, workers=2)
    strip = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("# generated")]
    assert strip(a) == strip(b)
    assert strip(summary_path(a)) == strip(summary_path(b))
    assert [(r.value, r.scheme, r.seed) for r in rows] == [
        (v, s, seed) for v in (18.0, 24.0) for s in ("fpa", "receive_ma") for seed in (0, 1)
    ]
    for s in summarize(rows):
        sel = [r.sensing_sinr for r in rows if r.value == s.value and r.scheme == s.scheme]
        assert s.mean_sinr == pytest.approx(np.mean(sel), rel=1e-12)
        assert s.stderr_sinr == pytest.approx(np.std(sel, ddof=1) / math.sqrt(len(sel)), rel=1e-12)


def test_failed_runs_become_status_rows(tmp_path):
    rows = run_sweep(SweepSpec("gamma", (60.0, 0.0), (0,), ("fpa",)), ScenarioConfig(), FAST)
    assert rows[0].status == "infeasible" and math.isnan(rows[0].sensing_sinr)
    assert rows[1].status == "ok"
    summary = summarize(rows)
    assert summary[0].runs == 0 and summary[1].runs == 1


def test_summary_ignores_failed_rows():
    rows = [
        RunRow("power", 1.0, "fpa", 0, "ok", 2.0, (1.0,), 1, True),
        RunRow("power", 1.0, "fpa", 1, "numerical_failure", math.nan, (math.nan,), 0, False),
        RunRow("power", 1.0, "fpa", 2, "ok", 4.0, (1.0,), 1, True),
    ]
    (s,) = summarize(rows)
    assert s.runs == 2 and s.mean_sinr == 3.0


def test_power_sweep_fpa_mean_monotone():
    values = tuple(float(v) for v in range(18, 26))
    rows = run_sweep(SweepSpec("power", values, tuple(range(6)), ("fpa",)), ScenarioConfig(), AoConfig())
    means = [s.mean_sinr for s in summarize(rows)]
    assert all(b >= a for a, b in zip(means, means[1:]))


# -- beampattern --------------------------------------------------------------

def test_steering_vector_is_unit_path_channel():
    pos = np.array([[0.0, 0.0], [LAM / 4, 0.0]])
    np.testing.assert_allclose(steering_vector(pos, math.pi / 2, 0.0, LAM), [1.0, -1j], atol=1e-15)


def test_beampattern_single_antenna_flat():
    grid = np.linspace(-1.5, 1.5, 31)
    gains = beampattern(BeampatternRequest(grid, 0.3, np.zeros((1, 2)), np.array([[0.7 - 0.2j]]), LAM))
    np.testing.assert_allclose(gains, abs(0.7 - 0.2j) ** 2, rtol=1e-12)


def test_beampattern_matched_beam_peaks_at_steering_angle():
    pos = fpa_layout(9, LAM, Region.square(3 * LAM))
    grid = np.linspace(-np.pi / 2, np.pi / 2, 721)
    for el0 in (-0.6, 0.25, 0.9):
        w = steering_vector(pos, el0, 0.2, LAM)
        gains = beampattern(BeampatternRequest(grid, 0.2, pos, w[None, :] / 3, LAM, normalize=True))
        assert grid[np.argmax(gains)] == pytest.approx(el0, abs=grid[1] - grid[0])
        exact = beampattern(BeampatternRequest(np.array([el0]), 0.2, pos, w[None, :] / 3, LAM))
        assert exact[0] == pytest.approx(9.0, rel=1e-12)  # |a^H a / 3|^2 with |a|^2 = 9


def test_beampattern_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        BeampatternRequest(np.array([0.2, 0.1]), 0.0, np.zeros((1, 2)), np.ones((1, 1)), LAM)


# -- gain map -----------------------------------------------------------------

def test_gain_map_single_path_constant():
    ps = PathSet([1.0], [0.4], [0.3 + 0.4j])
    gm = channel_gain_map(Region.square(0.3), 11, ps, LAM)
    np.testing.assert_allclose(gm.gains, 0.25, rtol=1e-12)


def test_gain_map_two_path_fringes():
    g1, g2 = 1.0 + 0j, 0.8 * np.exp(0.7j)
    ps = PathSet([0.3, 1.2], [0.0, 0.0], [g1, g2])
    gm = channel_gain_map(Region.square(0.3), 41, ps, LAM)
    k = 2 * np.pi / LAM
    v = ps.directions
    X, Y = np.meshgrid(gm.xs, gm.ys)
    d_rho = X * (v[0, 0] - v[1, 0]) + Y * (v[0, 1] - v[1, 1])
    ref = abs(g1) ** 2 + abs(g2) ** 2 + 2 * abs(g1) * abs(g2) * np.cos(np.angle(g1) - np.angle(g2) - k * d_rho)
    np.testing.assert_allclose(gm.gains, ref, rtol=1e-10)
    # fringe period along the direction difference is lambda / |v1 - v2|
    period = LAM / np.linalg.norm(v[0] - v[1])
    e = (v[0] - v[1]) / np.linalg.norm(v[0] - v[1])
    p0 = np.array([0.01, -0.02])
    pts = np.array([p0, p0 + period * e])
    from ma_isac.channel import channel_vector

    h = channel_vector(pts, ps, LAM)
    assert abs(h[0]) ** 2 == pytest.approx(abs(h[1]) ** 2, rel=1e-10)


def test_gain_map_top_half_and_resolution():
    ps = PathSet([0.3, 1.2], [0.0, 0.5], [1.0, 0.9j])
    gm = channel_gain_map(Region.square(0.3), 21, ps, LAM)
    assert gm.top_half_mask().mean() >= 0.5
    j, i = np.unravel_index(np.argmax(gm.gains), gm.gains.shape)
    assert gm.in_top_half([[gm.xs[i], gm.ys[j]]])[0]
    with pytest.raises(ValueError):
        channel_gain_map(Region.square(0.3), 1, ps, LAM)


def test_target_direction_is_los_path(desk):
    real = sample_realization(desk, 0)
    el, az = target_direction(real)
    assert el == real.tx_paths[0].elevations[0] and az == real.tx_paths[0].azimuths[0]


def test_area_sweep_receive_ma_plateau():
    values = (2.8, 3.2, 3.6)
    rows = run_sweep(SweepSpec("area", values, tuple(range(30)), ("receive_ma",)), ScenarioConfig(), AoConfig())
    assert all(r.status == "ok" for r in rows)
    curve = [10 * math.log10(s.mean_sinr) for s in summarize(rows)]
    assert all(b - a < 0.2 for a, b in zip(curve, curve[1:]))
