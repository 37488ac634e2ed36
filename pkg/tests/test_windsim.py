import csv
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from balloon_mpc.dynamics import controllable_band
from balloon_mpc.noise import fractal4, permutation_table, simplex4
from balloon_mpc.windsim import (MAX_WIND, GpConfig, NoiseField, SyntheticWindField, WindModel,
                                 WindModelConfigError, WindModelKind, WindVector, column_eval,
                                 dump_grid_csv, forecast_at, gp_fit, hermite, matern32, truth_at,
                                 wind_model_at)


@pytest.fixture(scope="module")
def field():
    return SyntheticWindField.from_seed(11)


def test_forecast_deterministic(field):
    again = SyntheticWindField.from_seed(11)
    for x, y, l, t in [(0, 0, 6000, 0), (1e5, -3e4, 7200, 5e4)]:
        assert forecast_at(field, x, y, l, t) == forecast_at(again, x, y, l, t)
    assert field.fingerprint() == again.fingerprint()


def test_layer_count_in_range():
    counts = {SyntheticWindField.from_seed(s).layer_count for s in range(60)}
    assert counts <= {4, 5, 6} and len(counts) > 1


def test_pressure_gradient_bounded(field):
    ls = np.linspace(5000, 8500, 100)
    for x, y, t in [(0, 0, 0), (8e4, 2e4, 3e4), (-1.5e5, 9e4, 1.2e5)]:
        w = np.array([forecast_at(field, x, y, l, t) for l in ls])
        slope = np.hypot(*np.diff(w, axis=0).T) / np.diff(ls)
        assert slope.max() < 0.05


def test_two_seeds_differ():
    a, b = SyntheticWindField.from_seed(1), SyntheticWindField.from_seed(2)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-2e5, 2e5, 1000), rng.uniform(-2e5, 2e5, 1000),
                           rng.uniform(5000, 9000, 1000), rng.uniform(0, 2e5, 1000)])
    differ = sum(forecast_at(a, *p) != forecast_at(b, *p) for p in pts)
    assert differ >= 990


def test_shear_feasibility_over_seeds():
    lo, hi = controllable_band()
    levels = np.linspace(lo, hi, 40)
    feasible = 0
    for seed in range(1000):
        f = SyntheticWindField.from_seed(seed)
        ang = np.array([math.atan2(w[1], w[0]) for w in (f.forecast_at(0, 0, l, 0) for l in levels)])
        d = np.abs((ang[:, None] - ang[None, :] + np.pi) % (2 * np.pi) - np.pi)
        feasible += d.max() >= math.radians(120)
    assert feasible >= 900


def test_speed_clamp():
    rng = np.random.default_rng(3)
    for seed in range(30):
        f = SyntheticWindField.from_seed(seed)
        for _ in range(30):
            w = f.forecast_at(rng.uniform(-5e5, 5e5), rng.uniform(-5e5, 5e5),
                              rng.uniform(5000, 16000), rng.uniform(0, 3e5))
            assert math.hypot(*w) <= MAX_WIND
            assert math.hypot(*w) <= 15.0 + 1e-9


def test_out_of_band_clamps(field, caplog):
    assert field.forecast_at(0, 0, 4000, 0) == field.forecast_at(0, 0, 5000, 0)
    dbg = SyntheticWindField.from_seed(11, debug=True)
    with caplog.at_level("WARNING"):
        dbg.forecast_at(0, 0, 17000, 0)
    assert "clamped" in caplog.text


def test_hermite_is_c1():
    pl = np.array([5500.0, 6000.0, 6700.0, 7950.0])
    vals = np.array([1.0, -2.0, 0.5, 3.0])
    for node in pl[1:-1]:
        lv, ld = hermite(pl, vals, node - 1e-6)
        rv, rd = hermite(pl, vals, node + 1e-6)
        assert abs(lv - rv) < 1e-5
        assert abs(ld - rd) < 1e-5
    assert_allclose(hermite(pl, vals, 6000.0)[0], -2.0)


def test_column_derivative_matches_fd(field):
    th, sp = field.column_nodes(0.0, 0.0, 0.0)
    pl = field.layers[:, 0]
    for l in [5600.0, 6400.0, 7777.0]:
        u, v, ul, vl = column_eval(pl, th, sp, l)
        h = 1e-3
        up, vp, _, _ = column_eval(pl, th, sp, l + h)
        um, vm, _, _ = column_eval(pl, th, sp, l - h)
        assert_allclose([ul, vl], [(up - um) / (2 * h), (vp - vm) / (2 * h)], rtol=1e-5, atol=1e-9)


# ---------------------------------------------------------------------------
# noise


def test_simplex_bounded_and_smooth():
    perm = permutation_table(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    vals = [simplex4(perm, *rng.uniform(-50, 50, 4)) for _ in range(5000)]
    assert max(abs(v) for v in vals) <= 1.0
    a = simplex4(perm, 0.3, 0.4, 0.5, 0.6)
    assert abs(simplex4(perm, 0.3 + 1e-7, 0.4, 0.5, 0.6) - a) < 1e-5


def test_fractal_roughly_unit_variance():
    perm = permutation_table(np.random.default_rng(5))
    rng = np.random.default_rng(6)
    v = np.array([fractal4(perm, 3, *rng.uniform(-200, 200, 4)) for _ in range(40000)])
    assert 0.9 < v.std() < 1.1


def test_noise_zero_mean():
    noise = NoiseField.from_seed(4, amplitude=2.0)
    rng = np.random.default_rng(7)
    n = 100_000
    pts = np.column_stack([rng.uniform(-5e6, 5e6, n), rng.uniform(-5e6, 5e6, n),
                           rng.uniform(5000, 16000, n), rng.uniform(0, 1e7, n)])
    w = np.array([noise.at(*p) for p in pts])
    assert np.all(np.abs(w.mean(axis=0)) < 0.1 * 2.0)


def test_noise_magnitude_scales_with_amplitude():
    f = SyntheticWindField.from_seed(3)
    unit = NoiseField.from_seed(9, amplitude=1.0)
    two = NoiseField.from_seed(9, amplitude=2.0)
    rng = np.random.default_rng(8)
    pts = np.column_stack([rng.uniform(-1e6, 1e6, 10_000), rng.uniform(-1e6, 1e6, 10_000),
                           rng.uniform(5000, 9000, 10_000), rng.uniform(0, 1e6, 10_000)])
    mag2 = np.mean([np.hypot(*np.subtract(truth_at(f, two, *p), f.forecast_at(*p))) for p in pts])
    mag1 = np.mean([np.hypot(*unit.at(*p)) for p in pts])
    assert abs(mag2 - 2.0 * mag1) <= 0.2 * 2.0 * mag1
    # roughly Gaussian components with unit variance: E|b| near sqrt(pi/2)
    assert abs(mag1 - math.sqrt(math.pi / 2)) < 0.2 * math.sqrt(math.pi / 2)


def test_zero_amplitude_truth_is_forecast(field):
    quiet = NoiseField.from_seed(1, amplitude=0.0)
    for p in [(0, 0, 6000, 0), (4e4, 1e4, 7000, 8e3)]:
        assert truth_at(field, quiet, *p) == field.forecast_at(*p)


def test_noise_bias_is_constant_offset():
    plain = NoiseField.from_seed(2, amplitude=2.0)
    biased = NoiseField.from_seed(2, amplitude=2.0, bias=1.5)
    assert_allclose(np.hypot(*biased.bias), 1.5)
    for p in [(0, 0, 6000, 0), (1e5, 2e5, 7000, 1e5)]:
        assert_allclose(np.subtract(biased.at(*p), plain.at(*p)), biased.bias, atol=1e-12)


# ---------------------------------------------------------------------------
# GP


def obs(x, y, l, t, e):
    return (x, y, l, t, WindVector(*e))


def test_gp_empty_predicts_zero():
    gp = gp_fit([])
    assert gp.predict(1.0, 2.0, 6000.0, 5.0) == (0.0, 0.0)


def test_gp_single_point_closed_form():
    cfg = GpConfig()
    gp = gp_fit([obs(0, 0, 6000, 0, (3.0, 0.0))], cfg)
    k0 = cfg.signal_std ** 2
    s = k0 / (k0 + cfg.noise_std ** 2)
    assert_allclose(gp.predict(0, 0, 6000, 0), (3.0 * s, 0.0), atol=1e-12)


def test_gp_far_query_reverts_to_prior():
    cfg = GpConfig()
    gp = gp_fit([obs(0, 0, 6000, 0, (3.0, -2.0)), obs(1e3, 0, 6100, 60, (2.0, 1.0))], cfg)
    far = 100 * np.asarray(cfg.length_scales)
    assert np.hypot(*gp.predict(*far)) < 1e-3


def test_gp_interpolates_without_noise():
    cfg = GpConfig(noise_std=1e-7)
    rng = np.random.default_rng(0)
    data = [obs(*rng.uniform(-1e5, 1e5, 2), rng.uniform(5500, 8000), rng.uniform(0, 4e4),
                rng.normal(0, 2, 2)) for _ in range(15)]
    gp = gp_fit(data, cfg)
    for o in data:
        assert_allclose(gp.predict(*o[:4]), o[4], atol=1e-6)


def test_gp_keeps_newest():
    cfg = GpConfig(capacity=3)
    data = [obs(i * 1e4, 0, 6000, i * 180.0, (i, 0)) for i in range(6)]
    gp = gp_fit(data, cfg)
    assert len(gp) == 3
    assert_allclose(gp.inputs[:, 0] * cfg.length_scales[0], [3e4, 4e4, 5e4])


def test_gp_duplicate_points_are_stable():
    data = [obs(0, 0, 6000, 0, (1.0, 1.0))] * 10
    gp = gp_fit(data, GpConfig(noise_std=0.0))
    assert np.all(np.isfinite(gp.predict(0, 0, 6000, 0)))


def test_matern_at_zero_is_variance():
    assert matern32(0.0, 4.0) == 4.0
    assert matern32(1.0, 1.0) == pytest.approx((1 + math.sqrt(3)) * math.exp(-math.sqrt(3)))


# ---------------------------------------------------------------------------
# planner wind models


def test_column_ignores_position(field):
    a = wind_model_at(WindModelKind.COLUMN, (1e4, 2e4, 3e3), None, field, 0, 0, 6500, 0)
    b = wind_model_at(WindModelKind.COLUMN, (1e4, 2e4, 3e3), None, field, 9e4, -5e4, 6500, 7e4)
    assert a == b
    assert a == field.forecast_at(1e4, 2e4, 6500, 3e3)


def test_gp_column_with_empty_gp_is_column(field):
    anchor = (5e3, -2e3, 100.0)
    for l in [5600, 6600, 7600]:
        assert (wind_model_at(2, anchor, gp_fit([]), field, 1, 2, l, 3)
                == wind_model_at(1, anchor, None, field, 1, 2, l, 3))


def test_blend_endpoints(field):
    gp = gp_fit([obs(0, 0, 6000, 0, (1.0, -1.0))])
    anchor = (0.0, 0.0, 0.0)
    q = (3e4, 1e4, 6400.0, 2e3)
    psi0 = wind_model_at(0, anchor, None, field, *q)
    psi2 = wind_model_at(2, anchor, gp, field, *q)
    assert_allclose(wind_model_at(3, anchor, gp, field, *q, alpha=1.0), psi0)
    assert_allclose(wind_model_at(3, anchor, gp, field, *q, alpha=0.0), psi2)


def test_missing_gp_is_config_error(field):
    with pytest.raises(WindModelConfigError):
        wind_model_at(WindModelKind.GP_COLUMN, (0, 0, 0), None, field, 0, 0, 6000, 0)
    with pytest.raises(WindModelConfigError):
        WindModel(WindModelKind.BLEND, field, (0, 0, 0))


def test_kind_parsing():
    assert WindModelKind.parse("psi2") is WindModelKind.GP_COLUMN
    assert WindModelKind.parse("blend") is WindModelKind.BLEND
    assert WindModelKind.parse(1) is WindModelKind.COLUMN
    with pytest.raises(ValueError):
        WindModelKind.parse("psi9")


def test_dump_grid_csv(tmp_path, field):
    path = tmp_path / "grid.csv"
    dump_grid_csv(path, field, None, [0, 1e4], [0], [6000, 7000], [0])
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 4
    assert float(rows[0]["u"]) == pytest.approx(field.forecast_at(0, 0, 6000, 0)[0])
