"""Synthetic forecast/truth wind fields and the planner-side wind models.

The forecast ``W0`` is a stack of pressure layers, each carrying a direction and
a speed that drift slowly in x, y and t.  Directions rotate monotonically through
the layer stack so every field has usable directional shear.  Direction and
speed are interpolated between layers with C1 cubic Hermite splines.

Truth wind is forecast plus seeded simplex noise (and an optional constant bias).
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numba
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .noise import fractal4, permutation_table

log = logging.getLogger(__name__)

# pressure band over which winds are defined [Pa]; queries outside clamp to it
BAND_LO = 5000.0
BAND_HI = 16000.0
# span of the layer stack [Pa], matched to the default float band
LAYER_LO = 5500.0
LAYER_HI = 7950.0

MAX_WIND = 60.0


class WindVector(NamedTuple):
    u_east: float
    v_north: float


# ---------------------------------------------------------------------------
# forecast field


@numba.njit(cache=True)
def hermite(pl, vals, l):
    """C1 Catmull-Rom interpolation with zero end slopes; returns (value, d/dl)."""
    n = pl.shape[0]
    if l <= pl[0]:
        return vals[0], 0.0
    if l >= pl[n - 1]:
        return vals[n - 1], 0.0
    j = 0
    while j < n - 2 and l >= pl[j + 1]:
        j += 1
    h = pl[j + 1] - pl[j]
    tau = (l - pl[j]) / h
    if j == 0:
        m0 = 0.0
    else:
        m0 = (vals[j + 1] - vals[j - 1]) / (pl[j + 1] - pl[j - 1])
    if j + 1 == n - 1:
        m1 = 0.0
    else:
        m1 = (vals[j + 2] - vals[j]) / (pl[j + 2] - pl[j])
    t2 = tau * tau
    t3 = t2 * tau
    v = ((2 * t3 - 3 * t2 + 1) * vals[j] + (t3 - 2 * t2 + tau) * h * m0
         + (-2 * t3 + 3 * t2) * vals[j + 1] + (t3 - t2) * h * m1)
    dv = ((6 * t2 - 6 * tau) * vals[j] + (3 * t2 - 4 * tau + 1) * h * m0
          + (-6 * t2 + 6 * tau) * vals[j + 1] + (3 * t2 - 2 * tau) * h * m1) / h
    return v, dv


# layer table columns
_P, _TH, _SP, _KX, _KY, _OM, _PH, _KX2, _KY2, _OM2, _PH2 = range(11)


@numba.njit(cache=True)
def layer_nodes(layers, amps, x, y, t):
    """Per-layer direction/speed at (x, y, t) plus their x and y partials."""
    n = layers.shape[0]
    out = np.empty((6, n))
    a_th = amps[0]
    a_sp = amps[1]
    for i in range(n):
        ph1 = layers[i, _KX] * x + layers[i, _KY] * y + layers[i, _OM] * t + layers[i, _PH]
        ph2 = layers[i, _KX2] * x + layers[i, _KY2] * y + layers[i, _OM2] * t + layers[i, _PH2]
        c1 = math.cos(ph1)
        c2 = math.cos(ph2)
        out[0, i] = layers[i, _TH] + a_th * math.sin(ph1)
        out[1, i] = a_th * c1 * layers[i, _KX]
        out[2, i] = a_th * c1 * layers[i, _KY]
        sp0 = layers[i, _SP]
        out[3, i] = sp0 * (1.0 + a_sp * math.sin(ph2))
        out[4, i] = sp0 * a_sp * c2 * layers[i, _KX2]
        out[5, i] = sp0 * a_sp * c2 * layers[i, _KY2]
    return out


@numba.njit(cache=True)
def column_eval(pl, th_nodes, sp_nodes, l):
    """Wind on a frozen column: (u, v, du/dl, dv/dl)."""
    th, dth = hermite(pl, th_nodes, l)
    sp, dsp = hermite(pl, sp_nodes, l)
    c = math.cos(th)
    s = math.sin(th)
    return sp * c, sp * s, dsp * c - sp * s * dth, dsp * s + sp * c * dth


@numba.njit(cache=True)
def forecast_eval(layers, amps, x, y, l, t):
    """W0 and its spatial partials: (u, v, u_x, u_y, u_l, v_x, v_y, v_l)."""
    nodes = layer_nodes(layers, amps, x, y, t)
    pl = layers[:, _P]
    th, th_l = hermite(pl, nodes[0], l)
    th_x, _ = hermite(pl, nodes[1], l)
    th_y, _ = hermite(pl, nodes[2], l)
    sp, sp_l = hermite(pl, nodes[3], l)
    sp_x, _ = hermite(pl, nodes[4], l)
    sp_y, _ = hermite(pl, nodes[5], l)
    c = math.cos(th)
    s = math.sin(th)
    u = sp * c
    v = sp * s
    return (u, v,
            sp_x * c - sp * s * th_x, sp_y * c - sp * s * th_y, sp_l * c - sp * s * th_l,
            sp_x * s + sp * c * th_x, sp_y * s + sp * c * th_y, sp_l * s + sp * c * th_l)


@dataclass(frozen=True)
class SyntheticWindField:
    """Seeded procedural forecast field.

    ``layers`` holds one row per pressure layer: pressure, base direction, base
    speed, then wavevector/frequency/phase of the direction and speed drifts.
    """
    seed: int
    layers: np.ndarray
    amps: np.ndarray
    debug: bool = False

    @property
    def layer_count(self) -> int:
        return self.layers.shape[0]

    @classmethod
    def from_seed(cls, seed: int, *, xy_scale: float = 300e3, t_scale: float = 12 * 3600.0,
                  rng: np.random.Generator | None = None, debug: bool = False) -> SyntheticWindField:
        rng = np.random.default_rng(seed) if rng is None else rng
        n = int(rng.integers(4, 7))
        table = np.zeros((n, 11))
        table[:, _P] = np.linspace(LAYER_LO, LAYER_HI, n)

        rotation = math.radians(rng.uniform(200.0, 260.0)) * rng.choice([-1.0, 1.0])
        theta0 = rng.uniform(0.0, 2 * math.pi)
        frac = np.arange(n) / (n - 1)
        table[:, _TH] = theta0 + rotation * frac + np.radians(rng.uniform(-10.0, 10.0, n))

        speeds = np.empty(n)
        # base speeds leave room for the 25% drift so evaluated speeds stay in [1.5, 15]
        speeds[0] = rng.uniform(2.0, 12.0)
        for i in range(1, n):
            speeds[i] = np.clip(speeds[i - 1] + rng.uniform(-4.0, 4.0), 2.0, 12.0)
        table[:, _SP] = speeds

        k = 2 * math.pi / xy_scale
        om = 2 * math.pi / t_scale
        # direction drift is shared by all layers (the column veers as a whole), which
        # keeps the vertical shear bounded; speed drift is per layer
        for (col_kx, col_ky, col_om, col_ph), m in (((_KX, _KY, _OM, _PH), 1), ((_KX2, _KY2, _OM2, _PH2), n)):
            beta = rng.uniform(0.0, 2 * math.pi, m)
            table[:, col_kx] = k * np.cos(beta)
            table[:, col_ky] = k * np.sin(beta)
            table[:, col_om] = om * rng.uniform(0.6, 1.4, m) * rng.choice([-1.0, 1.0], m)
            table[:, col_ph] = rng.uniform(0.0, 2 * math.pi, m)
        amps = np.array([0.35, 0.25])
        return cls(seed=int(seed), layers=table, amps=amps, debug=debug)

    def clamp_pressure(self, l: float) -> float:
        if l < BAND_LO or l > BAND_HI:
            if self.debug:
                log.warning("pressure %.1f Pa outside wind band, clamped", l)
            return min(max(l, BAND_LO), BAND_HI)
        return l

    def forecast_at(self, x: float, y: float, l: float, t: float) -> WindVector:
        out = forecast_eval(self.layers, self.amps, float(x), float(y),
                            self.clamp_pressure(float(l)), float(t))
        return WindVector(out[0], out[1])

    def column_nodes(self, x0: float, y0: float, t0: float) -> tuple[np.ndarray, np.ndarray]:
        nodes = layer_nodes(self.layers, self.amps, float(x0), float(y0), float(t0))
        return nodes[0].copy(), nodes[3].copy()

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(self.layers.tobytes() + self.amps.tobytes()).hexdigest()[:16]


def forecast_at(field: SyntheticWindField, x, y, l, t) -> WindVector:
    return field.forecast_at(x, y, l, t)


# ---------------------------------------------------------------------------
# forecast error


@numba.njit(cache=True)
def _noise_eval(perm_u, perm_v, octaves, inv_scales, amplitude, bias_u, bias_v, x, y, l, t):
    a = x * inv_scales[0]
    b = y * inv_scales[1]
    c = l * inv_scales[2]
    d = t * inv_scales[3]
    return (amplitude * fractal4(perm_u, octaves, a, b, c, d) + bias_u,
            amplitude * fractal4(perm_v, octaves, a, b, c, d) + bias_v)


@dataclass(frozen=True)
class NoiseField:
    """Forecast error ``b``: fractal simplex noise per component plus a constant bias."""
    seed: int
    perm_u: np.ndarray
    perm_v: np.ndarray
    octaves: int = 3
    amplitude: float = 2.0
    length_scales: tuple = (200e3, 200e3, 2000.0, 6 * 3600.0)
    bias: tuple = (0.0, 0.0)

    @classmethod
    def from_seed(cls, seed: int, *, amplitude: float = 2.0, octaves: int = 3,
                  length_scales: Sequence[float] = (200e3, 200e3, 2000.0, 6 * 3600.0),
                  bias: float = 0.0, rng: np.random.Generator | None = None) -> NoiseField:
        """``bias`` is the magnitude [m/s] of a constant error in a seeded direction."""
        rng = np.random.default_rng(seed) if rng is None else rng
        perm_u = permutation_table(rng)
        perm_v = permutation_table(rng)
        ang = rng.uniform(0.0, 2 * math.pi)
        return cls(seed=int(seed), perm_u=perm_u, perm_v=perm_v, octaves=int(octaves),
                   amplitude=float(amplitude), length_scales=tuple(float(s) for s in length_scales),
                   bias=(bias * math.cos(ang), bias * math.sin(ang)))

    def at(self, x, y, l, t) -> WindVector:
        inv = np.array([1.0 / s for s in self.length_scales])
        u, v = _noise_eval(self.perm_u, self.perm_v, self.octaves, inv, self.amplitude,
                           self.bias[0], self.bias[1], float(x), float(y), float(l), float(t))
        return WindVector(u, v)


def truth_at(field: SyntheticWindField, noise: NoiseField, x, y, l, t) -> WindVector:
    l = field.clamp_pressure(float(l))
    w0 = field.forecast_at(x, y, l, t)
    if noise.amplitude == 0.0 and noise.bias == (0.0, 0.0):
        return w0
    b = noise.at(x, y, l, t)
    return WindVector(w0.u_east + b.u_east, w0.v_north + b.v_north)


# ---------------------------------------------------------------------------
# GP forecast-error corrector


class GpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpConfig:
    length_scales: tuple = (100e3, 100e3, 1500.0, 3 * 3600.0)
    signal_std: float = 2.0
    noise_std: float = 0.5
    capacity: int = 50


def matern32(r, variance):
    a = math.sqrt(3.0) * r
    return variance * (1.0 + a) * np.exp(-a)


@dataclass(frozen=True)
class GpForecastCorrector:
    """Independent zero-mean GPs on the u and v forecast errors."""
    config: GpConfig
    inputs: np.ndarray      # (K, 4), already divided by the length scales
    alpha: np.ndarray       # (K, 2) = (K_gram + sigma_n^2 I)^-1 y

    @property
    def inv_scales(self) -> np.ndarray:
        return 1.0 / np.asarray(self.config.length_scales, dtype=float)

    def __len__(self):
        return self.inputs.shape[0]

    def predict(self, x, y, l, t) -> WindVector:
        if len(self) == 0:
            return WindVector(0.0, 0.0)
        q = np.array([x, y, l, t], dtype=float) * self.inv_scales
        r = np.sqrt(((self.inputs - q) ** 2).sum(axis=1))
        k = matern32(r, self.config.signal_std ** 2)
        pred = k @ self.alpha
        return WindVector(float(pred[0]), float(pred[1]))


def gp_fit(observations: Sequence, config: GpConfig = GpConfig()) -> GpForecastCorrector:
    """Fit on ``(x, y, l, t, WindVector error)`` tuples; only the newest ``capacity`` are kept."""
    obs = list(observations)[-config.capacity:] if config.capacity > 0 else []
    if not obs:
        return GpForecastCorrector(config, np.zeros((0, 4)), np.zeros((0, 2)))
    inv = 1.0 / np.asarray(config.length_scales, dtype=float)
    X = np.array([[o[0], o[1], o[2], o[3]] for o in obs], dtype=float) * inv
    Y = np.array([[o[4][0], o[4][1]] for o in obs], dtype=float)
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    gram = matern32(d, config.signal_std ** 2)
    gram[np.diag_indices_from(gram)] += config.noise_std ** 2
    jitter = 0.0
    for attempt in range(4):
        try:
            factor = cho_factor(gram + jitter * np.eye(len(obs)), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = 1e-8 * 10 ** attempt
    else:
        raise GpFitError(f"Cholesky failed with jitter up to {jitter:g}")
    alpha = cho_solve(factor, Y)
    return GpForecastCorrector(config, X, alpha)


# ---------------------------------------------------------------------------
# planner wind models


class WindModelKind(enum.IntEnum):
    FORECAST = 0     # psi0
    COLUMN = 1       # psi1
    GP_COLUMN = 2    # psi2
    BLEND = 3        # psi3

    @classmethod
    def parse(cls, value) -> WindModelKind:
        if isinstance(value, WindModelKind):
            return value
        if isinstance(value, int):
            return cls(value)
        s = str(value).strip().lower()
        aliases = {"psi0": 0, "forecast": 0, "psi1": 1, "column": 1,
                   "psi2": 2, "gp-column": 2, "gp_column": 2, "psi3": 3, "blend": 3}
        if s not in aliases:
            raise ValueError(f"unknown wind model {value!r}")
        return cls(aliases[s])

    @property
    def needs_gp(self) -> bool:
        return self in (WindModelKind.GP_COLUMN, WindModelKind.BLEND)


class WindModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WindModel:
    """Planner wind approximation anchored at a replan state."""
    kind: WindModelKind
    field: SyntheticWindField
    anchor: tuple               # (x0, y0, t0)
    gp: GpForecastCorrector | None = None
    alpha: float = 0.5
    _column: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind.needs_gp and self.gp is None:
            raise WindModelConfigError(f"{self.kind.name} requires a fitted GP corrector")
        if not 0.0 <= self.alpha <= 1.0:
            raise WindModelConfigError("blend weight must lie in [0, 1]")
        x0, y0, t0 = self.anchor
        object.__setattr__(self, "_column", self.field.column_nodes(x0, y0, t0))

    def at(self, x, y, l, t) -> WindVector:
        return wind_model_at(self.kind, self.anchor, self.gp, self.field, x, y, l, t, alpha=self.alpha)

    def kernel_args(self):
        """Flat arrays consumed by the compiled rollout."""
        x0, y0, t0 = self.anchor
        th, sp = self._column
        if self.gp is not None and len(self.gp):
            gp_in, gp_alpha = self.gp.inputs, self.gp.alpha
            inv = self.gp.inv_scales
            var = self.gp.config.signal_std ** 2
        else:
            gp_in, gp_alpha, inv, var = np.zeros((0, 4)), np.zeros((0, 2)), np.ones(4), 0.0
        anchor = np.array([x0, y0, t0, self.alpha, var], dtype=float)
        return (int(self.kind), anchor, self.field.layers, self.field.amps, th, sp,
                np.ascontiguousarray(gp_in), np.ascontiguousarray(gp_alpha), inv)


def wind_model_at(kind, anchor, gp, field: SyntheticWindField, x, y, l, t, *, alpha=0.5) -> WindVector:
    kind = WindModelKind.parse(kind)
    if kind.needs_gp and gp is None:
        raise WindModelConfigError(f"{kind.name} requires a fitted GP corrector")
    x0, y0, t0 = anchor
    l = field.clamp_pressure(float(l))
    if kind == WindModelKind.FORECAST:
        return field.forecast_at(x, y, l, t)
    col = field.forecast_at(x0, y0, l, t0)
    if kind == WindModelKind.COLUMN:
        return col
    corr = gp.predict(x0, y0, l, t0)
    gp_col = WindVector(col.u_east + corr.u_east, col.v_north + corr.v_north)
    if kind == WindModelKind.GP_COLUMN:
        return gp_col
    w0 = field.forecast_at(x, y, l, t)
    return WindVector(alpha * w0.u_east + (1 - alpha) * gp_col.u_east,
                      alpha * w0.v_north + (1 - alpha) * gp_col.v_north)


def dump_grid_csv(path, field: SyntheticWindField, noise: NoiseField | None, xs, ys, ls, ts):
    """Write ``x,y,l,t,u,v`` rows (truth if ``noise`` given, else forecast)."""
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "l", "t", "u", "v"])
        for x in xs:
            for y in ys:
                for l in ls:
                    for t in ts:
                        wv = truth_at(field, noise, x, y, l, t) if noise else field.forecast_at(x, y, l, t)
                        w.writerow([repr(float(x)), repr(float(y)), repr(float(l)), repr(float(t)),
                                    repr(wv.u_east), repr(wv.v_north)])
