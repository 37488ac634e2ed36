"""Superpressure balloon dynamics: six submodules, fidelity levels, Euler stepping.

State layout follows ``[x, y, l, n, T, E, V, p_env]`` plus elapsed time ``t`` and
the latch of the hysteretic power gate.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, fields, replace
from typing import Callable, Sequence

from . import atmosphere
from .atmosphere import R_DRY_AIR
from .windsim import WindVector

L_MIN = 5000.0
L_MAX = 16000.0

DAY = 86400.0
GATE_LATCH = 0.025
GATE_RELEASE = 0.05


class PhysicsError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BalloonParams:
    m_dry: float = 80.0          # kg, payload + envelope + lift gas
    n_gas: float = 3400.0        # mol helium
    n_max: float = 1200.0        # mol ballonet capacity
    V_max: float = 900.0         # m^3
    C_d: float = 0.45
    A: float = 45.0              # m^2
    g: float = 9.80665
    E_max: float = 7.2e6         # J
    P_load: float = 80.0         # W
    P_solar_max: float = 400.0   # W
    k_vent: float = 0.15         # mol/s at unit efficiency
    k_pump: float = 0.12         # mol/s at unit efficiency
    acs_watts: float = 195.0     # W at full pumping
    tau_T: float = 600.0         # s
    dT_sun: float = 15.0         # K
    M_air: float = 0.02897       # kg/mol
    R_u: float = 8.314           # J/(mol K)


class FidelityLevel(enum.IntEnum):
    PHI0 = 0
    PHI1 = 1
    PHI2 = 2
    PHI3 = 3
    PHI4 = 4

    @classmethod
    def parse(cls, value) -> FidelityLevel:
        if isinstance(value, FidelityLevel):
            return value
        if isinstance(value, int):
            return cls(value)
        s = str(value).strip().lower().removeprefix("phi")
        return cls(int(s))

    @property
    def acs(self) -> bool:
        return self >= 1

    @property
    def volume(self) -> bool:
        return self >= 2

    @property
    def thermal(self) -> bool:
        return self >= 3

    @property
    def battery(self) -> bool:
        return self >= 4


@dataclass(frozen=True)
class BalloonState:
    x: float
    y: float
    l: float
    n: float
    T: float
    E: float
    V: float
    p_env: float
    t: float = 0.0
    gate: bool = False

    def as_tuple(self):
        return (self.x, self.y, self.l, self.n, self.T, self.E, self.V, self.p_env, self.t)


@dataclass(frozen=True)
class Derivative:
    dx: float
    dy: float
    dl: float
    dn: float
    dT: float
    dE: float
    dV: float
    dp_env: float


# ---------------------------------------------------------------------------
# submodules


def solar_factor(t: float, local_offset: float = 0.0) -> float:
    tau = t + local_offset
    return max(0.0, math.sin(2.0 * math.pi * (tau - 6 * 3600.0) / DAY))


def net_lift(state: BalloonState, params: BalloonParams) -> float:
    """Buoyancy minus weight [N]."""
    T_amb = atmosphere.ambient_temperature(state.l)
    rho = state.l / (R_DRY_AIR * T_amb)
    m_tot = params.m_dry + params.M_air * state.n
    return (rho * state.V - m_tot) * params.g


def vertical_velocity(state: BalloonState, params: BalloonParams) -> float:
    """Steady-state climb rate [m/s] balancing lift, weight and quadratic drag."""
    T_amb = atmosphere.ambient_temperature(state.l)
    rho = state.l / (R_DRY_AIR * T_amb)
    if not rho > 0.0:
        raise PhysicsError(f"non-positive air density at l={state.l}")
    m_tot = params.m_dry + params.M_air * state.n
    F = (rho * state.V - m_tot) * params.g
    if F == 0.0:
        return 0.0
    return math.copysign(math.sqrt(2.0 * abs(F) / (rho * params.C_d * params.A)), F)


def vent_efficiency(p_env: float) -> float:
    return min(max(0.5 + p_env / 2000.0, 0.5), 1.5)


def pump_efficiency(l: float) -> float:
    return min(max(l / 7000.0, 0.7), 1.3)


def _saturate(rate: float, n: float, params: BalloonParams) -> float:
    if (rate > 0.0 and n >= params.n_max) or (rate < 0.0 and n <= 0.0):
        return 0.0
    return rate


def acs_rate_env(u: float, state: BalloonState, params: BalloonParams) -> float:
    """Ballonet flow [mol/s]: vent for u > 0, pump for u < 0."""
    if u > 0.0:
        rate = -params.k_vent * u * vent_efficiency(state.p_env)
    elif u < 0.0:
        rate = params.k_pump * (-u) * pump_efficiency(state.l)
    else:
        rate = 0.0
    return _saturate(rate, state.n, params)


def acs_rate_surrogate(u: float, params: BalloonParams = BalloonParams(), n: float | None = None) -> float:
    """Piecewise-linear ACS with band-averaged rate constants."""
    kv, kp = surrogate_constants(params)
    if u > 0.0:
        rate = -kv * u
    elif u < 0.0:
        rate = kp * (-u)
    else:
        rate = 0.0
    return rate if n is None else _saturate(rate, n, params)


def acs_power(u: float, params: BalloonParams = BalloonParams()) -> float:
    return params.acs_watts * (-u) if u < 0.0 else 0.0


def thermal_rate(state: BalloonState, t: float, params: BalloonParams, local_offset: float = 0.0) -> float:
    T_eq = atmosphere.ambient_temperature(state.l) + params.dT_sun * solar_factor(t, local_offset)
    return (T_eq - state.T) / params.tau_T


def volume_superpressure(n: float, T: float, l: float, params: BalloonParams) -> tuple[float, float]:
    """Instantaneous ideal-gas envelope volume and superpressure."""
    gas = (params.n_gas + n) * params.R_u * T
    v_free = gas / l
    if v_free < params.V_max:
        return v_free, 0.0
    return params.V_max, gas / params.V_max - l


def battery_rate(state: BalloonState, u: float, t: float, params: BalloonParams,
                 local_offset: float = 0.0) -> float:
    return (params.P_solar_max * solar_factor(t, local_offset) - params.P_load
            - acs_power(u, params))


def power_gate(E: float, E_max: float, u: float, latched: bool = False) -> tuple[float, bool]:
    """Hysteretic low-battery interlock on pumping; returns (effective u, latch)."""
    frac = E / E_max
    if latched and frac > GATE_RELEASE:
        latched = False
    if frac < GATE_LATCH:
        latched = True
    if latched and u < 0.0:
        return 0.0, True
    return u, latched


# ---------------------------------------------------------------------------
# composition


def derivative(state: BalloonState, wind: WindVector, u: float, params: BalloonParams,
               fidelity=FidelityLevel.PHI4, *, local_offset: float = 0.0) -> Derivative:
    """Continuous-time rates.  A disabled ACS falls back to the linear surrogate."""
    if not -1.0 <= u <= 1.0:
        raise ValueError(f"action {u!r} outside [-1, 1]")
    phi = FidelityLevel.parse(fidelity)
    hdot = vertical_velocity(state, params)
    T_amb = atmosphere.ambient_temperature(state.l)
    rho = state.l / (R_DRY_AIR * T_amb)
    ldot = -rho * params.g * hdot

    if phi.acs:
        ndot = acs_rate_env(u, state, params)
    else:
        ndot = acs_rate_surrogate(u, params, state.n)
    Tdot = thermal_rate(state, state.t, params, local_offset) if phi.thermal else 0.0
    Edot = battery_rate(state, u, state.t, params, local_offset) if phi.battery else 0.0

    dV = dp = 0.0
    if phi.volume:
        dgas = params.R_u * (ndot * state.T + (params.n_gas + state.n) * Tdot)
        if state.p_env > 0.0:
            dp = dgas / params.V_max - ldot
        else:
            dV = dgas / state.l - state.V * ldot / state.l
    return Derivative(wind.u_east, wind.v_north, ldot, ndot, Tdot, Edot, dV, dp)


WindSource = Callable[[float, float, float, float], WindVector]


def substep(state: BalloonState, wind: WindVector, u: float, params: BalloonParams,
            phi: FidelityLevel, dt: float, local_offset: float = 0.0,
            diag: dict | None = None) -> BalloonState:
    T_amb = atmosphere.ambient_temperature(state.l)
    rho = state.l / (R_DRY_AIR * T_amb)
    m_tot = params.m_dry + params.M_air * state.n
    F = (rho * state.V - m_tot) * params.g
    if F == 0.0:
        hdot = 0.0
    else:
        hdot = math.copysign(math.sqrt(2.0 * abs(F) / (rho * params.C_d * params.A)), F)
    ldot = -rho * params.g * hdot

    if phi.acs:
        ndot = acs_rate_env(u, state, params)
    else:
        ndot = acs_rate_surrogate(u, params, state.n)

    if phi.thermal:
        sf = solar_factor(state.t, local_offset)
        Tdot = (T_amb + params.dT_sun * sf - state.T) / params.tau_T
    else:
        Tdot = 0.0
    if phi.battery:
        sf = solar_factor(state.t, local_offset)
        Edot = params.P_solar_max * sf - params.P_load - acs_power(u, params)
    else:
        Edot = 0.0

    x = state.x + dt * wind.u_east
    y = state.y + dt * wind.v_north
    l = state.l + dt * ldot
    n = state.n + dt * ndot
    T = state.T + dt * Tdot
    E = state.E + dt * Edot

    if n < 0.0 or n > params.n_max:
        n = min(max(n, 0.0), params.n_max)
        _flag(diag, "n")
    if E < 0.0 or E > params.E_max:
        E = min(max(E, 0.0), params.E_max)
        _flag(diag, "E")
    if l < L_MIN or l > L_MAX:
        l = min(max(l, L_MIN), L_MAX)
        _flag(diag, "l")

    if phi.volume:
        V, p = volume_superpressure(n, T, l, params)
    else:
        V, p = state.V, state.p_env
    return BalloonState(x, y, l, n, T, E, V, p, state.t + dt, state.gate)


def _flag(diag, key):
    if diag is not None:
        diag[key] = diag.get(key, 0) + 1


def step(state: BalloonState, wind_source: WindSource, u, params: BalloonParams,
         fidelity=FidelityLevel.PHI4, dt: float = 180.0, sub_dt: float = 10.0,
         substeps: int = 18, *, local_offset: float = 0.0, hold_wind: bool = False,
         diag: dict | None = None) -> BalloonState:
    """One control interval of ``substeps`` forward-Euler substeps.

    ``u`` is either one (already gated) action or a sequence of per-substep
    actions.  With ``hold_wind`` the wind is sampled once at the start of the
    interval; otherwise at every substep.
    """
    if abs(substeps * sub_dt - dt) > 1e-9:
        raise ValueError("dt must equal substeps * sub_dt")
    phi = FidelityLevel.parse(fidelity)
    actions = _substep_actions(u, substeps)
    wind = wind_source(state.x, state.y, state.l, state.t) if hold_wind else None
    for m in range(substeps):
        w = wind if hold_wind else wind_source(state.x, state.y, state.l, state.t)
        state = substep(state, w, actions[m], params, phi, sub_dt, local_offset, diag)
    return state


def _substep_actions(u, substeps: int) -> Sequence[float]:
    if isinstance(u, (int, float)):
        return [float(u)] * substeps
    actions = [float(a) for a in u]
    if len(actions) != substeps:
        raise ValueError(f"expected {substeps} sub-actions, got {len(actions)}")
    return actions


# ---------------------------------------------------------------------------
# equilibria and calibration


def with_gas_state(state: BalloonState, params: BalloonParams) -> BalloonState:
    V, p = volume_superpressure(state.n, state.T, state.l, params)
    return replace(state, V=V, p_env=p)


def _lift_at(l: float, n: float, params: BalloonParams) -> float:
    T = atmosphere.ambient_temperature(l)
    V, _ = volume_superpressure(n, T, l, params)
    return (l / (R_DRY_AIR * T) * V - params.m_dry - params.M_air * n) * params.g


def equilibrium_pressure(n: float, params: BalloonParams = BalloonParams(),
                         lo: float = L_MIN, hi: float = L_MAX, iters: int = 100) -> float:
    """Float pressure for ``n`` moles of ballonet air at ambient gas temperature (bisection)."""
    f_lo, f_hi = _lift_at(lo, n, params), _lift_at(hi, n, params)
    if f_lo * f_hi > 0.0:
        raise PhysicsError(f"no float level in [{lo}, {hi}] Pa for n={n}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = _lift_at(mid, n, params)
        if (f_mid > 0.0) == (f_hi > 0.0):
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def float_moles(l: float, params: BalloonParams = BalloonParams(), iters: int = 200) -> float:
    """Ballonet moles that make the balloon float at ``l`` with ambient gas temperature."""
    lo, hi = 0.0, params.n_max
    f_lo, f_hi = _lift_at(l, lo, params), _lift_at(l, hi, params)
    if f_lo * f_hi > 0.0:
        raise PhysicsError(f"pressure {l} Pa not reachable as a float level")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = _lift_at(l, mid, params)
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


@functools.lru_cache(maxsize=32)
def controllable_band(params: BalloonParams = BalloonParams()) -> tuple[float, float]:
    """(low, high) float pressures reachable with an empty / full ballonet."""
    return equilibrium_pressure(0.0, params), equilibrium_pressure(params.n_max, params)


CALIBRATION_POINTS = 101


def calibration_states(params: BalloonParams = BalloonParams()) -> list[BalloonState]:
    out = []
    for i in range(CALIBRATION_POINTS):
        n = params.n_max * i / (CALIBRATION_POINTS - 1)
        l = equilibrium_pressure(n, params)
        T = atmosphere.ambient_temperature(l)
        V, p = volume_superpressure(n, T, l, params)
        out.append(BalloonState(0.0, 0.0, l, n, T, params.E_max, V, p))
    return out


@functools.lru_cache(maxsize=32)
def surrogate_constants(params: BalloonParams = BalloonParams()) -> tuple[float, float]:
    """Mean full-vent and full-pump rates over equilibrium states spanning the ballonet range."""
    states = calibration_states(params)
    kv = sum(params.k_vent * vent_efficiency(s.p_env) for s in states) / len(states)
    kp = sum(params.k_pump * pump_efficiency(s.l) for s in states) / len(states)
    return kv, kp


def state_field_names():
    return [f.name for f in fields(BalloonState)]
