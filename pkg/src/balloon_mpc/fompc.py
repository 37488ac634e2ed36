"""First-order MPC: squashed direct shooting with normalised gradient descent."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import atmosphere
from .difftrace import CostConfig, RolloutError, RolloutProblem
from .dynamics import BalloonParams, BalloonState, FidelityLevel, controllable_band
from .windsim import GpConfig, WindModel, WindModelKind, gp_fit

log = logging.getLogger(__name__)


def squash(raw):
    """Map unconstrained values into (-1, 1)."""
    return 2.0 / (1.0 + np.exp(-np.asarray(raw, dtype=float))) - 1.0 if np.ndim(raw) else \
        2.0 / (1.0 + math.exp(-raw)) - 1.0


def unsquash(u):
    u = np.asarray(u, dtype=float)
    return np.log((1.0 + u) / (1.0 - u))


def stage_cost(state: BalloonState, cost: CostConfig = CostConfig(),
               params: BalloonParams = BalloonParams()) -> float:
    z = 100.0 * (state.E / params.E_max - 0.1)
    c_power = 1.0 / (1.0 + math.exp(z))  # == 1 - logistic(z), without cancellation
    return (state.x / 1000.0) ** 2 + (state.y / 1000.0) ** 2 + cost.radius ** 2 * c_power


@dataclass
class ControlPlan:
    raw: np.ndarray
    kind: str = "random"

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)

    @property
    def actions(self) -> np.ndarray:
        return squash(self.raw)

    def __len__(self):
        return len(self.raw)


@dataclass(frozen=True)
class FompcConfig:
    horizon: int = 240
    replan_interval: int = 24
    gamma: float = 0.99
    num_inits: int = 100
    fidelity: FidelityLevel = FidelityLevel.PHI4
    wind_model: WindModelKind = WindModelKind.GP_COLUMN
    alpha: float = 0.5
    step_size: float = 1.0
    max_iters: int = 100
    tol: float = 1e-7
    radius: float = 50.0
    coast_bound: float = 0.2
    init_magnitude: float = 4.0
    perturb_std: float = 0.1
    safeguard: bool = True
    gp: GpConfig = GpConfig()

    def __post_init__(self):
        object.__setattr__(self, "fidelity", FidelityLevel.parse(self.fidelity))
        object.__setattr__(self, "wind_model", WindModelKind.parse(self.wind_model))
        if not 1 <= self.replan_interval <= self.horizon:
            raise ValueError("replan interval must lie in [1, horizon]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.num_inits < 0 or self.step_size <= 0 or self.tol <= 0 or self.max_iters < 0:
            raise ValueError("optimizer constants must be positive")

    @property
    def cost(self) -> CostConfig:
        return CostConfig(self.gamma, self.radius)


@dataclass
class PlannerDiagnostics:
    init_kind: str
    init_cost: float
    final_cost: float
    iterations: int
    grad_norm: float
    wall_time: float
    aborted: bool = False

    def as_dict(self):
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# initialisation


class StepsToAltitude:
    """Steps a saturated vent/pump run needs to reach each altitude from ``x0``."""

    def __init__(self, problem: RolloutProblem, horizon: int, magnitude: float = 4.0,
                 grid_points: int = 64, params: BalloonParams | None = None):
        params = params or problem.params
        up, _ = problem.states(np.full(horizon, magnitude))
        down, _ = problem.states(np.full(horizon, -magnitude))
        self.l0 = problem.x0.l
        self.horizon = horizon
        lo, hi = controllable_band(params)
        self.h_min = atmosphere.altitude_at_pressure(hi)
        self.h_max = atmosphere.altitude_at_pressure(lo)
        self.h0 = atmosphere.altitude_at_pressure(min(max(self.l0, atmosphere.P_MIN), atmosphere.P_SEA_LEVEL))
        self.grid = np.linspace(self.h_min, self.h_max, grid_points)
        self.table = np.array([self._first_crossing(h, up[:, 2], down[:, 2]) for h in self.grid])

    def _first_crossing(self, h, l_up, l_down):
        target = atmosphere.pressure_at_altitude(h)
        if target <= self.l0:
            hit = np.nonzero(l_up <= target)[0]
        else:
            hit = np.nonzero(l_down >= target)[0]
        return int(hit[0]) if hit.size else self.horizon

    def steps(self, h: float) -> int:
        i = int(np.argmin(np.abs(self.grid - h)))
        return int(self.table[i])


def coast_raw(rng: np.random.Generator, n: int, bound: float = 0.2) -> np.ndarray:
    return unsquash(rng.uniform(-bound, bound, n))


def heuristic_inits(problem: RolloutProblem, config: FompcConfig, rng: np.random.Generator,
                    previous_plan: ControlPlan | None = None,
                    table: StepsToAltitude | None = None) -> list[ControlPlan]:
    H = config.horizon
    table = table or StepsToAltitude(problem, H, config.init_magnitude)
    out = []
    for _ in range(config.num_inits):
        h = rng.uniform(table.h_min, table.h_max)
        n_sat = min(table.steps(h), H)
        sign = 1.0 if h >= table.h0 else -1.0  # vent to climb, pump to sink
        raw = rng.normal(0.0, config.perturb_std, H)
        raw[:n_sat] = sign * config.init_magnitude
        out.append(ControlPlan(raw, "random"))
    if previous_plan is not None:
        m = config.replan_interval
        prev = previous_plan.raw
        shifted = np.concatenate([prev[m:], coast_raw(rng, H, config.coast_bound)])[:H]
        if len(shifted) < H:
            shifted = np.concatenate([shifted, coast_raw(rng, H - len(shifted), config.coast_bound)])
        out.append(ControlPlan(shifted, "previous"))
    out.append(ControlPlan(coast_raw(rng, H, config.coast_bound), "coast"))
    return out


class NoFiniteCandidate(RuntimeError):
    pass


def select_init(candidates: list[ControlPlan], problem: RolloutProblem) -> tuple[ControlPlan, float]:
    if not candidates:
        raise ValueError("no candidates")
    costs = problem.values(np.stack([c.raw for c in candidates]))
    costs = np.where(np.isfinite(costs), costs, np.inf)
    if not np.isfinite(costs).any():
        raise NoFiniteCandidate("every initial plan produced a non-finite rollout")
    i = int(np.argmin(costs))
    return candidates[i], float(costs[i])


# ---------------------------------------------------------------------------
# optimisation


def optimize(init: ControlPlan, problem, config: FompcConfig, trace: list | None = None
             ) -> tuple[ControlPlan, PlannerDiagnostics]:
    """Normalised gradient descent on the raw plan.

    ``problem`` needs ``grad(raw)`` returning an object with ``value`` and
    ``gradient``.  With ``config.safeguard`` the lowest-cost iterate seen is
    returned; otherwise the last iterate, as in the plain algorithm.
    """
    t0 = time.perf_counter()
    u = np.array(init.raw, dtype=float)
    best_u, best_val = u.copy(), math.inf
    init_cost = math.nan
    gnorm = math.nan
    iters = 0
    aborted = False
    converged = False
    for s in range(config.max_iters):
        if trace is not None:
            trace.append(u.copy())
        try:
            rep = problem.grad(u)
        except RolloutError as err:
            log.warning("gradient evaluation failed: %s", err)
            aborted = True
            break
        g = rep.gradient
        gnorm = float(np.sqrt(np.dot(g, g)))
        if s == 0:
            init_cost = rep.value
        if rep.value < best_val:
            best_u, best_val = u.copy(), rep.value
        if not math.isfinite(gnorm) or not math.isfinite(rep.value):
            aborted = True
            break
        if gnorm < config.tol:
            converged = True
            break
        u = u - config.step_size * g / gnorm
        iters += 1

    final = math.nan
    if not aborted and not converged:
        # the last update has not been scored yet
        if trace is not None:
            trace.append(u.copy())
        try:
            final = problem.value(u)
        except RolloutError:
            final = math.nan
        if math.isnan(init_cost):
            init_cost = final
        if final < best_val:
            best_u, best_val = u.copy(), final
    elif converged:
        final = rep.value

    if config.safeguard or aborted:
        out, final = best_u, best_val
    else:
        out = u
    diag = PlannerDiagnostics(init.kind, init_cost, final, iters, gnorm,
                              time.perf_counter() - t0, aborted)
    return ControlPlan(out, init.kind), diag


# ---------------------------------------------------------------------------
# post-optimisation discretisation


def discretize_plan(plan, levels=(-1.0, 0.0, 1.0)):
    """Round each squashed action to the nearest level."""
    u = plan.actions if isinstance(plan, ControlPlan) else np.asarray(plan, dtype=float)
    lv = np.asarray(levels, dtype=float)
    idx = np.argmin(np.abs(u[..., None] - lv), axis=-1)
    return lv[idx]


def alternating_subactions(u: float, substeps: int = 18) -> np.ndarray:
    """Spread round(|u| * substeps) full-strength sub-actions evenly over the step."""
    k = int(round(abs(u) * substeps))
    out = np.zeros(substeps)
    if k == 0:
        return out
    sign = 1.0 if u > 0 else -1.0
    # Bresenham-style spacing
    for m in range(substeps):
        if (m + 1) * k // substeps > m * k // substeps:
            out[m] = sign
    return out


# ---------------------------------------------------------------------------
# receding-horizon controller


@dataclass
class EpisodeContext:
    """What an agent sees of the world: forecast, observation history, clocks."""
    field: object
    params: BalloonParams = BalloonParams()
    local_offset: float = 0.0
    history: list = field(default_factory=list)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


class FompcController:
    name = "fompc"

    def __init__(self, config: FompcConfig = FompcConfig(), discretize: str | None = None):
        if discretize not in (None, "round", "alternate"):
            raise ValueError(f"unknown discretisation {discretize!r}")
        self.config = config
        self.discretize = discretize
        self.plan: ControlPlan | None = None
        self.queue: list = []
        self.diagnostics: list[PlannerDiagnostics] = []

    def reset(self):
        self.plan = None
        self.queue = []
        self.diagnostics = []

    def build_wind_model(self, state: BalloonState, ctx: EpisodeContext) -> WindModel:
        cfg = self.config
        gp = gp_fit(ctx.history, cfg.gp) if cfg.wind_model.needs_gp else None
        return WindModel(cfg.wind_model, ctx.field, (state.x, state.y, state.t), gp, cfg.alpha)

    def problem(self, state: BalloonState, ctx: EpisodeContext) -> RolloutProblem:
        return RolloutProblem(state, self.build_wind_model(state, ctx), ctx.params,
                              self.config.fidelity, self.config.cost, ctx.local_offset)

    def replan(self, state: BalloonState, ctx: EpisodeContext) -> np.ndarray:
        cfg = self.config
        t0 = time.perf_counter()
        try:
            prob = self.problem(state, ctx)
            cands = heuristic_inits(prob, cfg, ctx.rng, self.plan)
            init, _ = select_init(cands, prob)
            plan, diag = optimize(init, prob, cfg)
        except (RolloutError, NoFiniteCandidate) as err:
            log.warning("planner failed (%s); coasting", err)
            plan = ControlPlan(coast_raw(ctx.rng, cfg.horizon, cfg.coast_bound), "coast")
            diag = PlannerDiagnostics("coast", math.nan, math.nan, 0, math.nan,
                                      time.perf_counter() - t0, True)
        self.plan = plan
        self.diagnostics.append(diag)
        return plan.actions[:cfg.replan_interval]

    def act(self, state: BalloonState, ctx: EpisodeContext):
        if not self.queue:
            self.queue = list(self.replan(state, ctx))
        u = float(self.queue.pop(0))
        if self.discretize == "round":
            return float(discretize_plan(np.array([u]))[0])
        if self.discretize == "alternate":
            return alternating_subactions(u)
        return u


def fompc_policy(state: BalloonState, ctx: EpisodeContext, controller: FompcController) -> np.ndarray:
    """Replan from ``state`` and return the next ``m`` actions."""
    return controller.replan(state, ctx)
