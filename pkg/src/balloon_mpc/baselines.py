"""Reference agents: coast, greedy wind-column follower, constant pump."""
from __future__ import annotations

import math

import numpy as np

from .dynamics import BalloonState, controllable_band
from .windsim import GpConfig, GpFitError, WindModel, WindModelKind, gp_fit

DEADBAND = 250.0   # Pa
HOLD_RADIUS = 1.0  # m; inside this the inward direction is undefined


class CoastController:
    name = "coast"

    def reset(self):
        pass

    def act(self, state, ctx) -> float:
        return 0.0


def baseline_coast(*_args, **_kwargs) -> float:
    return 0.0


def greedy_column_action(state: BalloonState, column, levels, deadband: float = DEADBAND) -> float:
    """Saturated action toward the level whose wind points most inward.

    ``column(l)`` returns the (u, v) wind at pressure ``l`` above the balloon.
    Ties go to the level nearest the current pressure.
    """
    r = math.hypot(state.x, state.y)
    if r < HOLD_RADIUS:
        return 0.0
    ex, ey = -state.x / r, -state.y / r
    levels = np.asarray(levels, dtype=float)
    winds = np.array([tuple(column(l)) for l in levels])
    scores = winds[:, 0] * ex + winds[:, 1] * ey
    best = np.flatnonzero(scores >= scores.max() - 1e-12)
    target = levels[best[np.argmin(np.abs(levels[best] - state.l))]]
    if abs(target - state.l) <= deadband:
        return 0.0
    # lower pressure is higher altitude: vent to climb, pump to sink
    return 1.0 if target < state.l else -1.0


class GreedyColumnController:
    name = "greedy-column"

    def __init__(self, num_levels: int = 45, deadband: float = DEADBAND, gp: GpConfig = GpConfig()):
        self.num_levels = num_levels
        self.deadband = deadband
        self.gp = gp

    def reset(self):
        pass

    def act(self, state, ctx) -> float:
        lo, hi = controllable_band(ctx.params)
        levels = np.linspace(lo, hi, self.num_levels)
        try:
            gp = gp_fit(ctx.history, self.gp)
            model = WindModel(WindModelKind.GP_COLUMN, ctx.field, (state.x, state.y, state.t), gp)
        except GpFitError:
            model = WindModel(WindModelKind.COLUMN, ctx.field, (state.x, state.y, state.t))
        return greedy_column_action(state, lambda l: model.at(state.x, state.y, l, state.t),
                                    levels, self.deadband)


def baseline_greedy_column(state: BalloonState, column, levels, deadband: float = DEADBAND) -> float:
    return greedy_column_action(state, column, levels, deadband)


class ConstantPumpController:
    """Adversarial reference: always pumps at full rate, draining the battery."""
    name = "pump"

    def __init__(self, u: float = -1.0):
        self.u = u

    def reset(self):
        pass

    def act(self, state, ctx) -> float:
        return self.u
