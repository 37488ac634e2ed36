import math
import time
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from balloon_mpc import atmosphere as atm
from balloon_mpc.difftrace import (CostConfig, RolloutError, RolloutProblem, grad_rollout,
                                   value_rollout)
from balloon_mpc.dynamics import (BalloonParams, BalloonState, FidelityLevel, float_moles,
                                  power_gate, step, with_gas_state)
from balloon_mpc.fompc import squash, stage_cost
from balloon_mpc.windsim import (NoiseField, SyntheticWindField, WindModel, WindModelKind,
                                 WindVector, gp_fit, truth_at)

P = BalloonParams()


def instance(seed, kind=WindModelKind.GP_COLUMN, H=16, phi=FidelityLevel.PHI4, E_frac=None):
    rng = np.random.default_rng(seed)
    field = SyntheticWindField.from_seed(seed)
    noise = NoiseField.from_seed(seed + 7)
    l = rng.uniform(5800, 7600)
    x0 = with_gas_state(BalloonState(rng.uniform(-4e4, 4e4), rng.uniform(-4e4, 4e4), l,
                                     float_moles(l, P), atm.ambient_temperature(l) + rng.uniform(0, 8),
                                     (E_frac or rng.uniform(0.1, 1)) * P.E_max, 0, 0,
                                     rng.uniform(0, 86400)), P)
    obs = []
    for i in range(10):
        q = (x0.x + rng.normal(0, 1e4), x0.y + rng.normal(0, 1e4), l + rng.normal(0, 200), x0.t - 180 * i)
        w, f = truth_at(field, noise, *q), field.forecast_at(*q)
        obs.append(q + (WindVector(w[0] - f[0], w[1] - f[1]),))
    gp = gp_fit(obs) if WindModelKind(kind).needs_gp else None
    wm = WindModel(WindModelKind(kind), field, (x0.x, x0.y, x0.t), gp)
    return x0, wm, rng.normal(0, 1.5, H), phi


def plain_value(x0, wm, raw, phi, cost=CostConfig(), local_offset=0.0):
    """Independent evaluation through the reference stepper."""
    s, latched, J = x0, x0.gate, 0.0
    for k, r in enumerate(raw):
        u, latched = power_gate(s.E, P.E_max, squash(r), latched)
        s = step(s, wm.at, u, P, phi, hold_wind=True, local_offset=local_offset)
        J += cost.gamma ** k * stage_cost(s, cost, P)
    return J


@pytest.mark.parametrize("seed", range(20))
def test_value_matches_reference_stepper(seed):
    kind = [WindModelKind.FORECAST, WindModelKind.COLUMN, WindModelKind.GP_COLUMN][seed % 3]
    phi = FidelityLevel(seed % 5)
    x0, wm, raw, phi = instance(seed, kind, phi=phi)
    J = value_rollout(raw, x0, wm, P, phi)
    assert J == pytest.approx(plain_value(x0, wm, raw, phi), rel=1e-12)


def test_value_equals_grad_value():
    x0, wm, raw, phi = instance(3)
    prob = RolloutProblem(x0, wm, P, phi)
    assert prob.grad(raw).value == prob.value(raw)
    assert len(prob.grad(raw).gradient) == len(raw)


def test_gamma_zero_is_first_stage_cost():
    x0, wm, raw, phi = instance(4)
    cost = CostConfig(gamma=0.0)
    x1 = step(x0, wm.at, power_gate(x0.E, P.E_max, squash(raw[0]))[0], P, phi, hold_wind=True)
    assert value_rollout(raw, x0, wm, P, phi, cost) == pytest.approx(stage_cost(x1, cost, P), rel=1e-12)


def test_coast_from_center_cost_bounded():
    x0, wm, _, phi = instance(5, WindModelKind.COLUMN, E_frac=1.0)
    x0 = replace(x0, x=0.0, y=0.0)
    H = 10
    J = value_rollout(np.zeros(H), x0, wm, P, phi)
    # wind carries the balloon at most 15 m/s for 30 min, i.e. c <= 27^2 per step
    assert J < sum(0.99 ** k * (15 * 180 * (k + 1) / 1000) ** 2 for k in range(H)) + 1e-9


def test_one_step_flat_optimum():
    x0, wm, _, phi = instance(6, WindModelKind.COLUMN, E_frac=1.0)
    x0 = replace(x0, x=0.0, y=0.0)
    g = grad_rollout(np.array([0.3]), x0, wm, P, phi).gradient
    assert np.linalg.norm(g) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_central_differences(seed):
    x0, wm, raw, phi = instance(100 + seed, phi=FidelityLevel(seed % 5))
    prob = RolloutProblem(x0, wm, P, phi)
    g = prob.grad(raw).gradient
    h = 1e-5
    fd = np.array([(prob.value(raw + h * e) - prob.value(raw - h * e)) / (2 * h) for e in np.eye(len(raw))])
    assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-4


def test_radius_irrelevant_on_full_battery():
    # with a full battery the power term is negligible, so R does not move the gradient
    x0, wm, raw, phi = instance(8, E_frac=1.0)
    a = grad_rollout(raw, x0, wm, P, phi, CostConfig(radius=50.0)).gradient
    b = grad_rollout(raw, x0, wm, P, phi, CostConfig(radius=100.0)).gradient
    assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_gradient_deterministic():
    x0, wm, raw, phi = instance(9)
    prob = RolloutProblem(x0, wm, P, phi)
    assert np.array_equal(prob.grad(raw).gradient, prob.grad(raw).gradient)


def test_gradient_cost_ratio():
    x0, wm, _, phi = instance(10, H=240)
    raw = np.random.default_rng(0).normal(0, 1, 240)
    prob = RolloutProblem(x0, wm, P, phi)
    prob.grad(raw), prob.value(raw)

    def best(f, reps=5):
        out = math.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            f(raw)
            out = min(out, time.perf_counter() - t0)
        return out

    assert best(prob.grad) <= 10 * best(prob.value)


def test_nonfinite_names_step():
    x0, wm, raw, phi = instance(11)
    bad = replace(x0, T=math.nan)
    with pytest.raises(RolloutError) as err:
        value_rollout(raw, bad, wm, P, phi)
    assert err.value.step_index == 0
    assert "step 0" in str(err.value)


def test_batch_values_match_single():
    x0, wm, _, phi = instance(12)
    prob = RolloutProblem(x0, wm, P, phi)
    raws = np.random.default_rng(1).normal(0, 2, (6, 16))
    assert_allclose(prob.values(raws), [prob.value(r) for r in raws], rtol=0, atol=0)
