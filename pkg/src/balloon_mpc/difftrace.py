"""Compiled planning rollout and its exact reverse-mode gradient.

The objective is the discounted stage-cost sum over ``H`` control steps of the
planning dynamics, as a function of the unconstrained plan values.  The forward
pass stores the state at every Euler substep; the backward pass recomputes the
local partials from those states and accumulates adjoints.  Clamps contribute a
0/1 subgradient according to the branch taken; the power gate is a stop-gradient.

The planner samples its wind model once per control step, at the state that
starts the step.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba
import numpy as np

from . import atmosphere
from .dynamics import (GATE_LATCH, GATE_RELEASE, L_MAX, L_MIN, BalloonParams, BalloonState,
                       FidelityLevel, surrogate_constants)
from .windsim import column_eval, forecast_eval

_ATM_P = np.array(atmosphere.LAYER_BASE_PRESSURE)
_ATM_T = np.array(atmosphere.LAYER_BASE_TEMP)
_ATM_L = np.array(atmosphere.LAYER_LAPSE)
_R_D = atmosphere.R_DRY_AIR
_G0 = atmosphere.G0
_DAY = 86400.0
_SQ3 = math.sqrt(3.0)

NSTATE = 9  # x y l n T E V p t
IX, IY, IL, IN, IT, IE, IV, IP, ITIME = range(NSTATE)

# packed parameter vector layout
(P_MDRY, P_NGAS, P_NMAX, P_VMAX, P_CD, P_A, P_G, P_EMAX, P_LOAD, P_SOLAR, P_KVENT, P_KPUMP,
 P_ACSW, P_TAU, P_DTSUN, P_MAIR, P_RU, P_KBV, P_KBP, P_OFFSET, NPARAM) = range(21)


class RolloutError(FloatingPointError):
    def __init__(self, step_index):
        super().__init__(f"non-finite planner state at step {step_index}")
        self.step_index = step_index


def pack_params(params: BalloonParams, local_offset: float = 0.0) -> np.ndarray:
    kv, kp = surrogate_constants(params)
    out = np.empty(NPARAM)
    out[P_MDRY], out[P_NGAS], out[P_NMAX], out[P_VMAX] = params.m_dry, params.n_gas, params.n_max, params.V_max
    out[P_CD], out[P_A], out[P_G], out[P_EMAX] = params.C_d, params.A, params.g, params.E_max
    out[P_LOAD], out[P_SOLAR], out[P_KVENT], out[P_KPUMP] = params.P_load, params.P_solar_max, params.k_vent, params.k_pump
    out[P_ACSW], out[P_TAU], out[P_DTSUN], out[P_MAIR] = params.acs_watts, params.tau_T, params.dT_sun, params.M_air
    out[P_RU], out[P_KBV], out[P_KBP], out[P_OFFSET] = params.R_u, kv, kp, local_offset
    return out


def pack_state(state: BalloonState) -> np.ndarray:
    return np.array(state.as_tuple(), dtype=np.float64)


@dataclass(frozen=True)
class CostConfig:
    gamma: float = 0.99
    radius: float = 50.0


# ---------------------------------------------------------------------------
# compiled pieces


@numba.njit(cache=True)
def _ambient(l):
    i = 0
    for j in range(3, -1, -1):
        if l <= _ATM_P[j]:
            i = j
            break
    lapse = _ATM_L[i]
    if lapse == 0.0:
        return _ATM_T[i], 0.0
    e = -_R_D * lapse / _G0
    T = _ATM_T[i] * (l / _ATM_P[i]) ** e
    return T, T * e / l


@numba.njit(cache=True)
def _solar(t, offset):
    tau = t + offset
    return max(0.0, math.sin(2.0 * math.pi * (tau - 6 * 3600.0) / _DAY))


@numba.njit(cache=True)
def _wind(kind, anchor, layers, amps, th, sp, gp_in, gp_al, gp_inv, x, y, l, t):
    """Planner wind and partials (u, v, u_x, u_y, u_l, v_x, v_y, v_l)."""
    if l < 5000.0:
        l = 5000.0
    elif l > 16000.0:
        l = 16000.0
    if kind == 0:
        return forecast_eval(layers, amps, x, y, l, t)
    pl = layers[:, 0]
    cu, cv, cul, cvl = column_eval(pl, th, sp, l)
    if kind >= 2:
        var = anchor[4]
        q0 = anchor[0] * gp_inv[0]
        q1 = anchor[1] * gp_inv[1]
        q2 = l * gp_inv[2]
        q3 = anchor[2] * gp_inv[3]
        for j in range(gp_in.shape[0]):
            d0 = gp_in[j, 0] - q0
            d1 = gp_in[j, 1] - q1
            d2 = gp_in[j, 2] - q2
            d3 = gp_in[j, 3] - q3
            r = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3)
            a = _SQ3 * r
            e = math.exp(-a)
            k = var * (1.0 + a) * e
            dk = 3.0 * var * e * d2 * gp_inv[2]
            cu += gp_al[j, 0] * k
            cv += gp_al[j, 1] * k
            cul += gp_al[j, 0] * dk
            cvl += gp_al[j, 1] * dk
    if kind != 3:
        return cu, cv, 0.0, 0.0, cul, 0.0, 0.0, cvl
    al = anchor[3]
    f = forecast_eval(layers, amps, x, y, l, t)
    b = 1.0 - al
    return (al * f[0] + b * cu, al * f[1] + b * cv,
            al * f[2], al * f[3], al * f[4] + b * cul,
            al * f[5], al * f[6], al * f[7] + b * cvl)


@numba.njit(cache=True)
def _stage_cost(x, y, E, emax, rr):
    z = 100.0 * (E / emax - 0.1)
    return (x / 1000.0) ** 2 + (y / 1000.0) ** 2 + rr * (1.0 / (1.0 + math.exp(z)))


@numba.njit(cache=True)
def _squash(v):
    return 2.0 / (1.0 + math.exp(-v)) - 1.0


@numba.njit(cache=True)
def _gate(E, emax, u, latched):
    frac = E / emax
    if latched and frac > GATE_RELEASE:
        latched = False
    if frac < GATE_LATCH:
        latched = True
    if latched and u < 0.0:
        return 0.0, True, True
    return u, latched, False


@numba.njit(cache=True)
def _substep(s, out, u, wx, wy, prm, phi, dt):
    """One Euler substep ``s -> out``; returns a clamp bitmask (1: n, 2: E, 4: l)."""
    l = s[IL]
    n = s[IN]
    Ta, _ = _ambient(l)
    rho = l / (_R_D * Ta)
    mtot = prm[P_MDRY] + prm[P_MAIR] * n
    g = prm[P_G]
    F = (rho * s[IV] - mtot) * g
    if F == 0.0:
        hd = 0.0
    else:
        hd = math.copysign(math.sqrt(2.0 * abs(F) / (rho * prm[P_CD] * prm[P_A])), F)
    ld = -rho * g * hd

    nd = 0.0
    if phi >= 1:
        if u > 0.0:
            rv = min(max(0.5 + s[IP] / 2000.0, 0.5), 1.5)
            nd = -prm[P_KVENT] * u * rv
        elif u < 0.0:
            rp = min(max(l / 7000.0, 0.7), 1.3)
            nd = prm[P_KPUMP] * (-u) * rp
    else:
        if u > 0.0:
            nd = -prm[P_KBV] * u
        elif u < 0.0:
            nd = prm[P_KBP] * (-u)
    if (nd > 0.0 and n >= prm[P_NMAX]) or (nd < 0.0 and n <= 0.0):
        nd = 0.0

    Td = 0.0
    if phi >= 3:
        sf = _solar(s[ITIME], prm[P_OFFSET])
        Td = (Ta + prm[P_DTSUN] * sf - s[IT]) / prm[P_TAU]
    Ed = 0.0
    if phi >= 4:
        sf = _solar(s[ITIME], prm[P_OFFSET])
        pw = prm[P_ACSW] * (-u) if u < 0.0 else 0.0
        Ed = prm[P_SOLAR] * sf - prm[P_LOAD] - pw

    out[IX] = s[IX] + dt * wx
    out[IY] = s[IY] + dt * wy
    l1 = l + dt * ld
    n1 = n + dt * nd
    T1 = s[IT] + dt * Td
    E1 = s[IE] + dt * Ed
    mask = 0
    if n1 < 0.0 or n1 > prm[P_NMAX]:
        n1 = min(max(n1, 0.0), prm[P_NMAX])
        mask |= 1
    if E1 < 0.0 or E1 > prm[P_EMAX]:
        E1 = min(max(E1, 0.0), prm[P_EMAX])
        mask |= 2
    if l1 < L_MIN or l1 > L_MAX:
        l1 = min(max(l1, L_MIN), L_MAX)
        mask |= 4
    out[IL] = l1
    out[IN] = n1
    out[IT] = T1
    out[IE] = E1
    if phi >= 2:
        gas = (prm[P_NGAS] + n1) * prm[P_RU] * T1
        vf = gas / l1
        if vf < prm[P_VMAX]:
            out[IV] = vf
            out[IP] = 0.0
        else:
            out[IV] = prm[P_VMAX]
            out[IP] = gas / prm[P_VMAX] - l1
    else:
        out[IV] = s[IV]
        out[IP] = s[IP]
    out[ITIME] = s[ITIME] + dt
    return mask


@numba.njit(cache=True)
def _finite(s):
    for i in range(NSTATE):
        if not math.isfinite(s[i]):
            return False
    return True


@numba.njit(cache=True)
def rollout_value(raw, x0, gate0, prm, phi, kind, anchor, layers, amps, th, sp, gp_in, gp_al,
                  gp_inv, gamma, radius, dt, nsub):
    """Objective value; returns (J, first bad step or -1)."""
    s = x0.copy()
    nxt = np.empty(NSTATE)
    latched = gate0
    emax = prm[P_EMAX]
    rr = radius * radius
    J = 0.0
    disc = 1.0
    for k in range(raw.shape[0]):
        u, latched, _ = _gate(s[IE], emax, _squash(raw[k]), latched)
        w = _wind(kind, anchor, layers, amps, th, sp, gp_in, gp_al, gp_inv,
                  s[IX], s[IY], s[IL], s[ITIME])
        for m in range(nsub):
            _substep(s, nxt, u, w[0], w[1], prm, phi, dt)
            s[:] = nxt
        if not _finite(s):
            return np.nan, k
        J += disc * _stage_cost(s[IX], s[IY], s[IE], emax, rr)
        disc *= gamma
    return J, -1


@numba.njit(cache=True)
def rollout_values(raws, x0, gate0, prm, phi, kind, anchor, layers, amps, th, sp, gp_in, gp_al,
                   gp_inv, gamma, radius, dt, nsub):
    out = np.empty(raws.shape[0])
    for i in range(raws.shape[0]):
        out[i], _ = rollout_value(raws[i], x0, gate0, prm, phi, kind, anchor, layers, amps, th,
                                  sp, gp_in, gp_al, gp_inv, gamma, radius, dt, nsub)
    return out


@numba.njit(cache=True)
def rollout_states(raw, x0, gate0, prm, phi, kind, anchor, layers, amps, th, sp, gp_in, gp_al,
                   gp_inv, dt, nsub):
    """States at every control-step boundary, shape (H + 1, NSTATE), and applied actions."""
    H = raw.shape[0]
    traj = np.empty((H + 1, NSTATE))
    acts = np.empty(H)
    s = x0.copy()
    nxt = np.empty(NSTATE)
    traj[0] = s
    latched = gate0
    for k in range(H):
        u, latched, _ = _gate(s[IE], prm[P_EMAX], _squash(raw[k]), latched)
        acts[k] = u
        w = _wind(kind, anchor, layers, amps, th, sp, gp_in, gp_al, gp_inv,
                  s[IX], s[IY], s[IL], s[ITIME])
        for m in range(nsub):
            _substep(s, nxt, u, w[0], w[1], prm, phi, dt)
            s[:] = nxt
        traj[k + 1] = s
    return traj, acts


@numba.njit(cache=True)
def rollout_grad(raw, x0, gate0, prm, phi, kind, anchor, layers, amps, th, sp, gp_in, gp_al,
                 gp_inv, gamma, radius, dt, nsub):
    """Objective value and its gradient w.r.t. ``raw``; third output is the first bad step."""
    H = raw.shape[0]
    emax = prm[P_EMAX]
    rr = radius * radius
    g = prm[P_G]
    tape = np.empty((H * nsub + 1, NSTATE))
    masks = np.empty(H * nsub, dtype=np.int64)
    us = np.empty(H)
    dsig = np.empty(H)
    winds = np.empty((H, 8))
    discs = np.empty(H)
    tape[0] = x0
    latched = gate0
    J = 0.0
    disc = 1.0
    grad = np.zeros(H)
    for k in range(H):
        v = _squash(raw[k])
        u, latched, gated = _gate(tape[k * nsub, IE], emax, v, latched)
        us[k] = u
        dsig[k] = 0.0 if gated else 0.5 * (1.0 - v * v)
        s = tape[k * nsub]
        w = _wind(kind, anchor, layers, amps, th, sp, gp_in, gp_al, gp_inv,
                  s[IX], s[IY], s[IL], s[ITIME])
        for i in range(8):
            winds[k, i] = w[i]
        for m in range(nsub):
            idx = k * nsub + m
            masks[idx] = _substep(tape[idx], tape[idx + 1], u, w[0], w[1], prm, phi, dt)
        s = tape[(k + 1) * nsub]
        if not _finite(s):
            return np.nan, grad, k
        J += disc * _stage_cost(s[IX], s[IY], s[IE], emax, rr)
        discs[k] = disc
        disc *= gamma

    lam = np.zeros(NSTATE)
    for k in range(H - 1, -1, -1):
        disc_k = discs[k]
        s = tape[(k + 1) * nsub]
        # stage cost at the state ending step k
        z = 100.0 * (s[IE] / emax - 0.1)
        sp_ = 1.0 / (1.0 + math.exp(-z))
        sm_ = 1.0 / (1.0 + math.exp(z))
        lam[IX] += disc_k * 2.0 * s[IX] / 1e6
        lam[IY] += disc_k * 2.0 * s[IY] / 1e6
        lam[IE] += disc_k * rr * (-sp_ * sm_) * 100.0 / emax

        u = us[k]
        wbx = 0.0
        wby = 0.0
        ubar = 0.0
        for m in range(nsub - 1, -1, -1):
            idx = k * nsub + m
            pre = tape[idx]
            post = tape[idx + 1]
            mask = masks[idx]
            l = pre[IL]
            n = pre[IN]
            T = pre[IT]
            V = pre[IV]
            p = pre[IP]
            lx, ly, ll, ln, lT, lE, lV, lp = (lam[IX], lam[IY], lam[IL], lam[IN], lam[IT],
                                              lam[IE], lam[IV], lam[IP])
            # algebraic gas state
            if phi >= 2:
                n1 = post[IN]
                T1 = post[IT]
                l1 = post[IL]
                if post[IP] == 0.0 and post[IV] < prm[P_VMAX]:
                    ln += lV * prm[P_RU] * T1 / l1
                    lT += lV * (prm[P_NGAS] + n1) * prm[P_RU] / l1
                    ll += -lV * (prm[P_NGAS] + n1) * prm[P_RU] * T1 / (l1 * l1)
                else:
                    ln += lp * prm[P_RU] * T1 / prm[P_VMAX]
                    lT += lp * (prm[P_NGAS] + n1) * prm[P_RU] / prm[P_VMAX]
                    ll += -lp
                lVpre = 0.0
                lppre = 0.0
            else:
                lVpre = lV
                lppre = lp
            if mask & 1:
                ln = 0.0
            if mask & 2:
                lE = 0.0
            if mask & 4:
                ll = 0.0

            # pre-substep adjoints
            nx = lx
            ny = ly
            nl = ll
            nn = ln
            nT = lT
            nE = lE
            nV = lVpre
            np_ = lppre
            wbx += dt * lx
            wby += dt * ly

            Ta, dTa = _ambient(l)
            rho = l / (_R_D * Ta)
            mtot = prm[P_MDRY] + prm[P_MAIR] * n
            F = (rho * V - mtot) * g
            if F != 0.0:
                q = rho * prm[P_CD] * prm[P_A]
                hd = math.copysign(math.sqrt(2.0 * abs(F) / q), F)
                ahd = abs(hd)
                d_rho = -g * hd / 2.0 - rho * g * g * V / (q * ahd)
                d_V = -rho * rho * g * g / (q * ahd)
                d_n = rho * g * g * prm[P_MAIR] / (q * ahd)
                drho_dl = rho * (1.0 / l - dTa / Ta)
                nl += ll * dt * d_rho * drho_dl
                nV += ll * dt * d_V
                nn += ll * dt * d_n

            # ballonet flow
            nd_active = True
            if phi >= 1:
                if u > 0.0:
                    a = 0.5 + p / 2000.0
                    rv = min(max(a, 0.5), 1.5)
                    nd = -prm[P_KVENT] * u * rv
                    d_u = -prm[P_KVENT] * rv
                    d_p = -prm[P_KVENT] * u / 2000.0 if 0.5 < a < 1.5 else 0.0
                    d_l = 0.0
                elif u < 0.0:
                    a = l / 7000.0
                    rp = min(max(a, 0.7), 1.3)
                    nd = prm[P_KPUMP] * (-u) * rp
                    d_u = -prm[P_KPUMP] * rp
                    d_p = 0.0
                    d_l = prm[P_KPUMP] * (-u) / 7000.0 if 0.7 < a < 1.3 else 0.0
                else:
                    nd = 0.0
                    d_u = d_p = d_l = 0.0
            else:
                d_p = d_l = 0.0
                if u > 0.0:
                    nd = -prm[P_KBV] * u
                    d_u = -prm[P_KBV]
                elif u < 0.0:
                    nd = prm[P_KBP] * (-u)
                    d_u = -prm[P_KBP]
                else:
                    nd = 0.0
                    d_u = 0.0
            if (nd > 0.0 and n >= prm[P_NMAX]) or (nd < 0.0 and n <= 0.0):
                nd_active = False
            if nd_active:
                ubar += ln * dt * d_u
                np_ += ln * dt * d_p
                nl += ln * dt * d_l

            if phi >= 3:
                nT += -lT * dt / prm[P_TAU]
                nl += lT * dt * dTa / prm[P_TAU]
            if phi >= 4 and u < 0.0:
                ubar += lE * dt * prm[P_ACSW]

            lam[IX] = nx
            lam[IY] = ny
            lam[IL] = nl
            lam[IN] = nn
            lam[IT] = nT
            lam[IE] = nE
            lam[IV] = nV
            lam[IP] = np_
            lam[ITIME] = 0.0

        w = winds[k]
        lam[IX] += wbx * w[2] + wby * w[5]
        lam[IY] += wbx * w[3] + wby * w[6]
        lam[IL] += wbx * w[4] + wby * w[7]
        grad[k] = ubar * dsig[k]
    return J, grad, -1


# ---------------------------------------------------------------------------
# python surface


@dataclass
class GradientReport:
    gradient: np.ndarray
    value: float
    elapsed: float


@dataclass
class RolloutProblem:
    """Everything but the plan: initial state, model, wind and cost settings."""
    x0: BalloonState
    wind_model: object
    params: BalloonParams = BalloonParams()
    fidelity: FidelityLevel = FidelityLevel.PHI4
    cost: CostConfig = CostConfig()
    local_offset: float = 0.0
    sub_dt: float = 10.0
    substeps: int = 18

    def __post_init__(self):
        self.fidelity = FidelityLevel.parse(self.fidelity)
        self._x0 = pack_state(self.x0)
        self._prm = pack_params(self.params, self.local_offset)
        self._wind = self.wind_model.kernel_args()

    def _args(self):
        return (self._x0, bool(self.x0.gate), self._prm, int(self.fidelity)) + self._wind

    def value(self, raw) -> float:
        raw = np.ascontiguousarray(raw, dtype=np.float64)
        J, bad = rollout_value(raw, *self._args(), self.cost.gamma, self.cost.radius,
                               self.sub_dt, self.substeps)
        if bad >= 0:
            raise RolloutError(bad)
        return J

    def values(self, raws) -> np.ndarray:
        raws = np.ascontiguousarray(raws, dtype=np.float64)
        return rollout_values(raws, *self._args(), self.cost.gamma, self.cost.radius,
                              self.sub_dt, self.substeps)

    def grad(self, raw) -> GradientReport:
        raw = np.ascontiguousarray(raw, dtype=np.float64)
        t0 = time.perf_counter()
        J, g, bad = rollout_grad(raw, *self._args(), self.cost.gamma, self.cost.radius,
                                 self.sub_dt, self.substeps)
        if bad >= 0:
            raise RolloutError(bad)
        return GradientReport(g, J, time.perf_counter() - t0)

    def states(self, raw):
        raw = np.ascontiguousarray(raw, dtype=np.float64)
        return rollout_states(raw, *self._args(), self.sub_dt, self.substeps)


def value_rollout(plan, x0, wind_model, params=BalloonParams(), fidelity=FidelityLevel.PHI4,
                  cost_config=CostConfig(), *, local_offset=0.0) -> float:
    raw = getattr(plan, "raw", plan)
    return RolloutProblem(x0, wind_model, params, fidelity, cost_config, local_offset).value(raw)


def grad_rollout(plan, x0, wind_model, params=BalloonParams(), fidelity=FidelityLevel.PHI4,
                 cost_config=CostConfig(), *, local_offset=0.0) -> GradientReport:
    raw = getattr(plan, "raw", plan)
    return RolloutProblem(x0, wind_model, params, fidelity, cost_config, local_offset).grad(raw)
