import math

import numpy as np
import pytest
from scipy.stats import norm

from treesynth.errors import DataShapeError
from treesynth.rng import RngHandle
from treesynth.scoring import (DEFAULT_ALPHA_GRID, DmResult, FluctuationResult,
                               build_score_series, dm_test, fluctuation_test,
                               modifier_inclusion, pits,
                               probability_difference_map, quantile_score,
                               quantile_skewness, quantile_weighted_crps,
                               sample_crps)


def _crps_normal(mu, sigma, y):
    # closed form for a Gaussian predictive density
    z = (y - mu) / sigma
    return sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / math.sqrt(math.pi))


def test_crps_two_point_mass():
    assert sample_crps(np.array([0.0, 1.0]), 0.0) == pytest.approx(0.25)


def test_crps_point_masses():
    assert sample_crps(np.full(10, 3.0), 3.0) == pytest.approx(0.0)
    assert sample_crps(np.full(10, 3.0), 1.0) == pytest.approx(2.0)


def test_crps_standard_normal_at_zero():
    draws = RngHandle(60).generator.standard_normal(100_000)
    want = 2.0 * norm.pdf(0.0) - 1.0 / math.sqrt(math.pi)
    assert want == pytest.approx(0.23370, abs=5e-5)
    assert sample_crps(draws, 0.0) == pytest.approx(want, abs=0.005)


def test_crps_general_normal():
    g = RngHandle(61).generator
    draws = 2.0 * g.standard_normal(200_000) + 0.4
    assert sample_crps(draws, 0.7) == pytest.approx(_crps_normal(0.4, 2.0, 0.7), abs=0.01)


def test_crps_matches_pairwise_definition():
    g = RngHandle(62).generator
    draws = g.normal(size=200)
    y = 0.3
    pair = np.abs(draws[:, None] - draws[None, :]).mean()
    want = np.abs(draws - y).mean() - 0.5 * pair
    assert sample_crps(draws, y) == pytest.approx(float(want), abs=1e-12)


def test_crps_empty_raises():
    with pytest.raises(DataShapeError):
        sample_crps(np.array([]), 0.0)


def test_quantile_score_nonnegative_and_zero_at_truth():
    q = np.array([-1.0, 0.0, 2.0])
    alpha = np.array([0.1, 0.5, 0.9])
    s = quantile_score(q, alpha, 0.0)
    assert np.all(s >= 0.0)
    assert s[1] == pytest.approx(0.0)


def test_uniform_qwcrps_approximates_crps():
    draws = RngHandle(63).generator.standard_normal(50_000)
    full = sample_crps(draws, 0.5)
    grid = quantile_weighted_crps(draws, 0.5, "uniform")
    assert grid == pytest.approx(full, rel=0.02)


def test_weight_schemes_satisfy_linear_identity():
    # (1-a)^2 + a^2 = (1 + (2a-1)^2) / 2 pointwise on the grid, so the same
    # identity holds for the weighted scores
    draws = RngHandle(64).generator.normal(1.0, 2.0, size=5000)
    y = -0.3
    u = quantile_weighted_crps(draws, y, "uniform")
    t = quantile_weighted_crps(draws, y, "tails")
    l = quantile_weighted_crps(draws, y, "left")
    r = quantile_weighted_crps(draws, y, "right")
    assert l + r == pytest.approx((u + t) / 2.0, rel=1e-12)
    assert t < u  # tail weights discard the center mass
    with pytest.raises(ValueError):
        quantile_weighted_crps(draws, y, "middle")


def test_crps_is_proper_in_expectation():
    g = RngHandle(65).generator
    honest = g.standard_normal(4000)
    shifted = g.standard_normal(4000) + 1.0
    wide = 2.0 * g.standard_normal(4000)
    ys = g.standard_normal(2000)
    s_honest = np.mean([sample_crps(honest, y) for y in ys])
    s_shifted = np.mean([sample_crps(shifted, y) for y in ys])
    s_wide = np.mean([sample_crps(wide, y) for y in ys])
    assert s_honest < s_shifted
    assert s_honest < s_wide


def test_default_alpha_grid():
    assert DEFAULT_ALPHA_GRID[0] == pytest.approx(0.01)
    assert DEFAULT_ALPHA_GRID[-1] == pytest.approx(0.99)
    assert DEFAULT_ALPHA_GRID.size == 99


# ---------------------------------------------------------------------------
# calibration


def test_pit_calibrated_forecasts_stay_inside_band():
    g = RngHandle(66).generator
    n = 200
    draw_sets = [g.standard_normal(800) for _ in range(n)]
    ys = g.standard_normal(n)
    res = pits(draw_sets, ys, RngHandle(67))
    assert res.band == pytest.approx(1.358 / math.sqrt(n))
    assert res.inside
    assert res.ks_stat < res.band


def test_pit_detects_location_bias():
    g = RngHandle(68).generator
    n = 200
    draw_sets = [g.standard_normal(800) for _ in range(n)]
    ys = g.standard_normal(n) + 2.0
    res = pits(draw_sets, ys, RngHandle(69))
    assert not res.inside
    assert res.ks_stat > 2.0 * res.band


def test_pit_randomizes_ties_to_uniform():
    # every draw equals the realization: the strict/weak gap spans (0, 1) and
    # the randomized PIT must come back uniform
    n = 400
    draw_sets = [np.zeros(50) for _ in range(n)]
    ys = np.zeros(n)
    res = pits(draw_sets, ys, RngHandle(70))
    assert res.inside
    assert float(res.pit.var()) == pytest.approx(1.0 / 12.0, rel=0.2)


def test_pit_shape_mismatch():
    with pytest.raises(DataShapeError):
        pits([np.zeros(5)], np.zeros(2), RngHandle(71))


def test_pit_ecdf_curve_is_monotone():
    res = pits([np.random.default_rng(1).normal(size=50) for _ in range(30)],
               np.zeros(30), RngHandle(72))
    u, f = res.ecdf_curve()
    assert np.all(np.diff(u) >= 0)
    assert f[-1] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# loss comparisons


def test_dm_flags_a_clear_gap():
    g = RngHandle(73).generator
    b = np.abs(g.standard_normal(150))
    a = b + 1.0 + 0.1 * g.standard_normal(150)
    res = dm_test(a, b)
    assert res.mean_diff > 0.9
    assert res.stat > 5.0
    assert res.p_value < 0.01
    assert res.stars == "***"
    assert not res.degenerate


def test_dm_symmetric_noise_is_insignificant():
    g = RngHandle(74).generator
    a = np.abs(g.standard_normal(150))
    b = np.abs(g.standard_normal(150))
    res = dm_test(a, b)
    assert abs(res.stat) < 3.0
    assert res.p_value > 0.001


def test_dm_degenerate_on_constant_differential():
    a = np.ones(50)
    res = dm_test(a + 0.5, a)
    assert res.degenerate
    assert math.isnan(res.stat)
    assert res.mean_diff == pytest.approx(0.5)


def test_dm_matches_hand_computation_with_hac():
    # horizon 3 uses Bartlett truncation at lag 2; verify against an
    # independent reimplementation
    g = RngHandle(75).generator
    a = np.abs(g.standard_normal(80))
    b = np.abs(g.standard_normal(80))
    d = a - b
    dd = d - d.mean()
    n = d.size
    lrv = float(dd @ dd) / n
    for l in (1, 2):
        gamma = float(dd[l:] @ dd[:-l]) / n
        lrv += 2.0 * (1.0 - l / 3.0) * gamma
    want = d.mean() / math.sqrt(lrv / n)
    res = dm_test(a, b, horizon=3)
    assert res.stat == pytest.approx(want, abs=1e-12)


def test_dm_validates_shapes():
    with pytest.raises(DataShapeError):
        dm_test(np.zeros(3), np.zeros(4))
    with pytest.raises(DataShapeError):
        dm_test(np.zeros(1), np.zeros(1))


def test_fluctuation_equals_window_sums_when_sd_fixed():
    g = RngHandle(76).generator
    a = g.standard_normal(100)
    b = g.standard_normal(100)
    d = a - b
    res = fluctuation_test(a, b, hac_sd=1.0)
    m = max(2, round(0.1 * 100))
    assert res.window == m
    assert res.stats.size == 100 - m + 1
    brute = np.array([d[i:i + m].sum() / math.sqrt(m) for i in range(100 - m + 1)])
    assert res.stats == pytest.approx(brute, abs=1e-10)
    assert res.crit == pytest.approx(3.393)


def test_fluctuation_flags_local_shift():
    g = RngHandle(77).generator
    b = np.abs(g.standard_normal(200))
    a = b + 0.05 * g.standard_normal(200)
    a[120:160] += 3.0          # one poor regime for model a
    res = fluctuation_test(a, b)
    assert not res.degenerate
    assert bool(np.any(res.exceeds))
    worst = int(np.argmax(np.abs(res.stats)))
    # the flagged window must overlap the shifted stretch
    assert 120 - res.window < worst < 160


def test_fluctuation_degenerate_and_window_checks():
    res = fluctuation_test(np.ones(30), np.ones(30))
    assert res.degenerate
    with pytest.raises(DataShapeError):
        fluctuation_test(np.ones(5), np.ones(5), window_frac=2.0)


def test_probability_difference_map_known_masses():
    edges = np.array([0.0, 1.0, 2.0, 3.0])
    a = [np.full(10, 0.5), np.full(10, 2.5)]
    b = [np.full(10, 1.5), np.full(10, 1.5)]
    out = probability_difference_map(a, b, edges)
    assert out.shape == (2, 3)
    assert out[0] == pytest.approx([1.0, -1.0, 0.0])
    assert out[1] == pytest.approx([0.0, -1.0, 1.0])
    assert out.sum(axis=1) == pytest.approx([0.0, 0.0])
    with pytest.raises(DataShapeError):
        probability_difference_map(a, b[:1], edges)


def test_quantile_skewness_values():
    g = RngHandle(78).generator
    sym, ok = quantile_skewness(g.standard_normal(200_000))
    assert ok and sym == pytest.approx(0.0, abs=0.01)

    expo, ok = quantile_skewness(g.exponential(size=200_000))
    q5, q50, q95 = -math.log(0.95), math.log(2.0), -math.log(0.05)
    want = ((q95 - q50) - (q50 - q5)) / (q95 - q5)
    assert want == pytest.approx(0.564, abs=0.001)
    assert ok and expo == pytest.approx(want, abs=0.01)

    flat, ok = quantile_skewness(np.zeros(500))
    assert not ok and math.isnan(flat)
    with pytest.raises(DataShapeError):
        quantile_skewness(np.zeros(99))


def test_modifier_inclusion_shares():
    counts = np.array([[2, 0], [0, 0]])
    shares, total = modifier_inclusion(counts)
    assert shares == pytest.approx([0.75, 0.25])   # uniform share on the empty draw
    assert total == pytest.approx(1.0)

    shares, total = modifier_inclusion(np.array([[1, 3]]))
    assert shares == pytest.approx([0.25, 0.75])
    assert total == pytest.approx(4.0)


def test_score_series_round_trip():
    g = RngHandle(79).generator
    draw_sets = [g.normal(1.0, 1.0, size=5000), g.normal(-1.0, 0.5, size=5000)]
    origins = [10, 11]
    targets = [11, 12]
    y = np.array([1.2, -1.1])
    s = build_score_series(origins, targets, draw_sets, y)
    assert s.point == pytest.approx([1.0, -1.0], abs=0.05)
    assert s.sq_error == pytest.approx((s.point - y) ** 2)
    assert s.crps[0] == pytest.approx(_crps_normal(1.0, 1.0, 1.2), abs=0.02)
    assert s.rmse() == pytest.approx(math.sqrt(s.sq_error.mean()))
    assert s.mean_crps() == pytest.approx(s.crps.mean())
    with pytest.raises(DataShapeError):
        build_score_series(origins, targets, draw_sets, np.array([1.0]))
