"""Seeded episode runner, metrics, benchmarks, ablations and result files."""
from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import logging
import math
import multiprocessing
import os
import time
import traceback
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import atmosphere
from .baselines import ConstantPumpController, CoastController, GreedyColumnController
from .dynamics import (BalloonParams, BalloonState, FidelityLevel, controllable_band,
                       float_moles, power_gate, step, with_gas_state)
from .fompc import EpisodeContext, FompcConfig, FompcController
from .windsim import NoiseField, SyntheticWindField, WindVector, truth_at

log = logging.getLogger(__name__)

AGENTS = ("fompc", "coast", "greedy-column", "discretized-fompc", "pump")
METRICS = ("twr", "reward", "violations", "mean_step_time")
DETERMINISTIC_METRICS = ("twr", "reward", "violations")

TRAJECTORY_FIELDS = ("step", "t", "x", "y", "l", "n", "T", "E", "V", "p_env",
                     "u_cmd", "u_applied", "gate", "dist_km", "inside")


# ---------------------------------------------------------------------------
# seeding


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of an episode seed."""
    key = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), key]))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int = 0
    steps: int = 960
    dt: float = 180.0
    substeps: int = 18
    radius_km: float = 50.0
    init_radius_km: float = 40.0
    band_fraction: float = 0.6
    local_offset: float = 0.0      # station solar-time offset [s]; start time is sampled
    noise_amplitude: float = 2.0
    noise_bias: float = 0.0
    noise_octaves: int = 3
    noise_length_scales: tuple = (200e3, 200e3, 2000.0, 6 * 3600.0)
    params: BalloonParams = BalloonParams()

    def __post_init__(self):
        if self.radius_km <= 0:
            raise ValueError("radius must be positive")
        if self.steps <= 0 or self.substeps <= 0 or self.dt <= 0:
            raise ValueError("steps, substeps and dt must be positive")
        if not 0.0 < self.band_fraction <= 1.0:
            raise ValueError("band fraction must lie in (0, 1]")

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    def with_seed(self, seed: int) -> EpisodeConfig:
        return dataclasses.replace(self, seed=int(seed))


@dataclass(frozen=True)
class AgentSpec:
    name: str = "fompc"
    fompc: FompcConfig = FompcConfig()
    discretize: str = "round"
    label: str | None = None

    def __post_init__(self):
        if self.name not in AGENTS:
            raise ValueError(f"unknown agent {self.name!r}; choose from {', '.join(AGENTS)}")
        if self.discretize not in ("round", "alternate"):
            raise ValueError(f"unknown discretisation {self.discretize!r}")

    @property
    def tag(self) -> str:
        return self.label or self.name

    def build(self):
        if self.name == "fompc":
            return FompcController(self.fompc)
        if self.name == "discretized-fompc":
            return FompcController(self.fompc, discretize=self.discretize)
        if self.name == "coast":
            return CoastController()
        if self.name == "greedy-column":
            return GreedyColumnController(gp=self.fompc.gp)
        return ConstantPumpController()


def jsonable(obj):
    """Plain JSON structure for configs (dataclasses, enums, tuples, numpy)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.name
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# modules whose code can change an episode's outcome
SIMULATION_MODULES = ("atmosphere", "noise", "windsim", "dynamics", "difftrace", "fompc",
                      "baselines", "harness")


def source_digest() -> str:
    """Hash of the simulation sources, so cached results follow code changes."""
    h = hashlib.sha256()
    for p in (Path(__file__).parent / f"{m}.py" for m in SIMULATION_MODULES):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def fingerprint(*parts) -> str:
    blob = json.dumps([jsonable(p) for p in parts], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# episodes


def sample_initial_state(seed: int, params: BalloonParams = BalloonParams(),
                         config: EpisodeConfig | None = None, max_tries: int = 20) -> BalloonState:
    """Floating start state near the station, drawn from the ``init`` sub-stream."""
    config = config or EpisodeConfig()
    rng = substream(seed, "init")
    lo, hi = controllable_band(params)
    margin = 0.5 * (1.0 - config.band_fraction) * (hi - lo)
    for _ in range(max_tries):
        d = rng.uniform(0.0, config.init_radius_km * 1000.0)
        bearing = rng.uniform(0.0, 2 * math.pi)
        l = rng.uniform(lo + margin, hi - margin)
        E = rng.uniform(0.5, 1.0) * params.E_max
        t0 = rng.uniform(0.0, 86400.0)
        n = float_moles(l, params)
        if not (math.isfinite(n) and 0.0 <= n <= params.n_max):
            continue
        T = atmosphere.ambient_temperature(l)
        s = BalloonState(d * math.cos(bearing), d * math.sin(bearing), l, n, T, E, 0.0, 0.0, t0)
        return with_gas_state(s, params)
    raise RuntimeError(f"could not sample a floating state for seed {seed}")


@dataclass
class EpisodeMetrics:
    seed: int
    agent: str
    twr: float = math.nan
    reward: float = math.nan
    violations: int = 0
    mean_step_time: float = math.nan
    trajectory: list = field(default_factory=list, repr=False)
    diagnostics: list = field(default_factory=list, repr=False)
    wind_hash: str = ""
    failed: bool = False
    error: str | None = None

    def metric(self, name):
        return getattr(self, name)

    def to_dict(self, with_trajectory: bool = False) -> dict:
        d = {k: getattr(self, k) for k in ("seed", "agent", "twr", "reward", "violations",
                                           "mean_step_time", "wind_hash", "failed", "error")}
        d["diagnostics"] = self.diagnostics
        if with_trajectory:
            d["trajectory"] = self.trajectory
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeMetrics:
        keys = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in keys})


def time_within_radius(xs, ys, radius_m: float) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    return float(np.mean(xs ** 2 + ys ** 2 <= radius_m ** 2))


def step_reward(dist_km: float, gated: bool, radius_km: float = 50.0) -> float:
    """Stand-in reward: 1 inside, halving every 100 km outside from 0.4; x0.95 while gated."""
    r = 1.0 if dist_km <= radius_km else 0.4 * 2.0 ** (-(dist_km - radius_km) / 100.0)
    return r * 0.95 if gated else r


def reward_episode(trajectory, config: EpisodeConfig = EpisodeConfig()) -> float:
    return float(sum(step_reward(row["dist_km"], bool(row["gate"]), config.radius_km)
                     for row in trajectory))


def _episode_world(config: EpisodeConfig):
    seed = config.seed
    wind = SyntheticWindField.from_seed(seed, rng=substream(seed, "wind"))
    noise = NoiseField.from_seed(seed, amplitude=config.noise_amplitude, octaves=config.noise_octaves,
                                 length_scales=config.noise_length_scales, bias=config.noise_bias,
                                 rng=substream(seed, "noise"))
    return wind, noise


def _observation(wind, noise, s: BalloonState):
    err = noise.at(s.x, s.y, wind.clamp_pressure(s.l), s.t)
    return (s.x, s.y, s.l, s.t, WindVector(err.u_east, err.v_north))


def run_episode(agent: AgentSpec | str, config: EpisodeConfig = EpisodeConfig()) -> EpisodeMetrics:
    """Run one seeded episode; raises if the agent fails (see :func:`run_episode_safe`)."""
    spec = AgentSpec(agent) if isinstance(agent, str) else agent
    params = config.params
    wind, noise = _episode_world(config)
    state = sample_initial_state(config.seed, params, config)
    ctx = EpisodeContext(wind, params, config.local_offset, [], substream(config.seed, "planner"))
    controller = spec.build()
    controller.reset()

    def truth(x, y, l, t):
        return truth_at(wind, noise, x, y, l, t)

    ctx.history.append(_observation(wind, noise, state))
    radius_m = config.radius_km * 1000.0
    sub_dt = config.dt / config.substeps
    latched = False
    decide = 0.0
    rows = []
    for k in range(config.steps):
        t0 = time.perf_counter()
        u = controller.act(state, ctx)
        decide += time.perf_counter() - t0

        latched = power_gate(state.E, params.E_max, 0.0, latched)[1]
        if np.ndim(u):
            u_sub = np.asarray(u, dtype=float)
            u_app = np.where(latched & (u_sub < 0.0), 0.0, u_sub)
            u_cmd, u_log, u_step = float(u_sub.mean()), float(u_app.mean()), list(u_app)
        else:
            u_cmd = float(u)
            u_log = power_gate(state.E, params.E_max, u_cmd, latched)[0]
            u_step = u_log
        d = math.hypot(state.x, state.y)
        rows.append({"step": k, "t": state.t, "x": state.x, "y": state.y, "l": state.l,
                     "n": state.n, "T": state.T, "E": state.E, "V": state.V, "p_env": state.p_env,
                     "u_cmd": u_cmd, "u_applied": u_log, "gate": int(latched),
                     "dist_km": d / 1000.0, "inside": int(d <= radius_m)})
        state = dataclasses.replace(state, gate=latched)
        state = step(state, truth, u_step, params, FidelityLevel.PHI4, config.dt, sub_dt,
                     config.substeps, local_offset=config.local_offset)
        ctx.history.append(_observation(wind, noise, state))

    diags = [d.as_dict() for d in getattr(controller, "diagnostics", [])]
    return EpisodeMetrics(
        seed=config.seed, agent=spec.tag,
        twr=time_within_radius([r["x"] for r in rows], [r["y"] for r in rows], radius_m),
        reward=reward_episode(rows, config),
        violations=int(sum(r["gate"] for r in rows)),
        mean_step_time=decide / config.steps,
        trajectory=rows, diagnostics=diags, wind_hash=wind.fingerprint())


def run_episode_safe(agent: AgentSpec, config: EpisodeConfig) -> EpisodeMetrics:
    try:
        return run_episode(agent, config)
    except Exception as err:  # reported, never silently dropped
        log.error("episode seed=%d agent=%s failed: %s", config.seed, agent.tag, err)
        return EpisodeMetrics(config.seed, agent.tag, failed=True,
                              error=f"{type(err).__name__}: {err}\n{traceback.format_exc()}")


# ---------------------------------------------------------------------------
# persistence


def write_trajectory_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRAJECTORY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})


def read_trajectory_csv(path) -> list[dict]:
    ints = {"step", "gate", "inside"}
    with open(path, newline="") as fh:
        return [{k: (int(v) if k in ints else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


def _dump_json(path, obj) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, allow_nan=True))
    os.replace(tmp, path)


def episode_paths(out_dir, spec: AgentSpec, seed: int):
    base = Path(out_dir) / "episodes" / _safe(spec.tag)
    return base / f"seed_{seed:05d}.json", base / f"seed_{seed:05d}.csv"


def _safe(tag: str) -> str:
    return "".join(c if c.isalnum() or c in "-_=." else "_" for c in tag)


def save_episode(out_dir, spec: AgentSpec, m: EpisodeMetrics, key: str, trajectory: bool = True):
    jpath, cpath = episode_paths(out_dir, spec, m.seed)
    jpath.parent.mkdir(parents=True, exist_ok=True)
    d = m.to_dict()
    d["key"] = key
    _dump_json(jpath, d)
    if trajectory and m.trajectory:
        write_trajectory_csv(cpath, m.trajectory)


def load_episode(out_dir, spec: AgentSpec, seed: int, key: str) -> EpisodeMetrics | None:
    jpath, _ = episode_paths(out_dir, spec, seed)
    if not jpath.exists():
        return None
    try:
        d = json.loads(jpath.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if d.get("key") != key or d.get("failed"):
        return None
    return EpisodeMetrics.from_dict(d)


# ---------------------------------------------------------------------------
# benchmarks


def mean_ci(values) -> tuple[float, float]:
    """Mean and 95% half-width 1.96*sqrt(var/n); the half-width is NaN for n < 2."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.nan
    return float(v.mean()), float(1.96 * math.sqrt(v.var(ddof=1) / v.size))


@dataclass
class BenchmarkSummary:
    agents: dict                  # tag -> {metric: {"mean", "ci", "n"}}
    seeds: list
    fingerprint: str
    failures: list = field(default_factory=list)   # [{"agent", "seed", "error"}]
    episodes: dict = field(default_factory=dict, repr=False)  # tag -> [EpisodeMetrics]

    def stat(self, agent: str, metric: str) -> tuple[float, float]:
        s = self.agents[agent][metric]
        return s["mean"], s["ci"]

    def to_dict(self) -> dict:
        return {"agents": self.agents, "seeds": self.seeds, "fingerprint": self.fingerprint,
                "failures": self.failures}

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkSummary:
        return cls(d["agents"], d["seeds"], d["fingerprint"], d.get("failures", []))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "summary.json", self.to_dict())
        write_summary_csv(out / "summary.csv", self, DETERMINISTIC_METRICS)
        write_summary_csv(out / "timing.csv", self, ("mean_step_time",))

    @classmethod
    def load(cls, path) -> BenchmarkSummary:
        return cls.from_dict(json.loads(Path(path).read_text()))


def write_summary_csv(path, summary: BenchmarkSummary, metrics=DETERMINISTIC_METRICS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "metric", "mean", "ci95", "n"])
        for tag in summary.agents:
            for m in metrics:
                s = summary.agents[tag][m]
                w.writerow([tag, m, repr(float(s["mean"])), repr(float(s["ci"])), s["n"]])


def summarize(results: dict, seeds, key: str) -> BenchmarkSummary:
    agents, failures = {}, []
    for tag, eps in results.items():
        eps = sorted(eps, key=lambda m: m.seed)
        ok = [m for m in eps if not m.failed]
        failures += [{"agent": tag, "seed": m.seed, "error": m.error} for m in eps if m.failed]
        agents[tag] = {}
        for metric in METRICS:
            mean, ci = mean_ci([getattr(m, metric) for m in ok])
            agents[tag][metric] = {"mean": mean, "ci": ci, "n": len(ok)}
    return BenchmarkSummary(agents, sorted(int(s) for s in seeds), key, failures,
                            {t: sorted(e, key=lambda m: m.seed) for t, e in results.items()})


def _task(args):
    spec, config = args
    return spec.tag, run_episode_safe(spec, config)


def run_benchmark(agents, seeds, workers: int = 1, config: EpisodeConfig = EpisodeConfig(),
                  out_dir=None, resume: bool = False, save_trajectories: bool = True,
                  progress=None) -> BenchmarkSummary:
    """Run every agent on every seed.  With ``resume``, episodes already saved
    under ``out_dir`` with a matching key are loaded instead of re-run."""
    specs = [AgentSpec(a) if isinstance(a, str) else a for a in agents]
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("empty seed range")
    if not specs:
        raise ValueError("no agents")
    tags = [s.tag for s in specs]
    if len(set(tags)) != len(tags):
        raise ValueError("agent labels must be unique")
    digest = source_digest()
    keys = {s.tag: fingerprint(s, dataclasses.replace(config, seed=0), digest) for s in specs}

    results = {s.tag: [] for s in specs}
    todo = []
    for spec in specs:
        for seed in seeds:
            cached = load_episode(out_dir, spec, seed, keys[spec.tag]) if (resume and out_dir) else None
            if cached is not None:
                results[spec.tag].append(cached)
            else:
                todo.append((spec, config.with_seed(seed)))

    by_tag = {s.tag: s for s in specs}

    def collect(tag, m):
        results[tag].append(m)
        if out_dir is not None and not m.failed:
            save_episode(out_dir, by_tag[tag], m, keys[tag], save_trajectories)
        if progress:
            progress(tag, m)

    if workers > 1 and len(todo) > 1:
        ctx = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
        with ctx.Pool(workers) as pool:
            for tag, m in pool.imap_unordered(_task, todo, chunksize=1):
                collect(tag, m)
    else:
        for args in todo:
            collect(*_task(args))

    summary = summarize(results, seeds, fingerprint(keys, seeds))
    if out_dir is not None:
        summary.write(out_dir)
    return summary


ABLATION_GRIDS = {
    "horizon": [30, 60, 120, 240, 480],
    "replan": [192, 96, 48, 24, 12],
    "inits": [1, 5, 25, 100, 250],
    "fidelity": ["PHI0", "PHI1", "PHI2", "PHI3", "PHI4"],
    "wind-model": ["FORECAST", "COLUMN", "GP_COLUMN", "BLEND"],
}
_ABLATION_FIELD = {"horizon": "horizon", "replan": "replan_interval", "inits": "num_inits",
                   "fidelity": "fidelity", "wind-model": "wind_model"}


def ablation_specs(dimension: str, values=None, base: FompcConfig = FompcConfig()) -> list[AgentSpec]:
    if dimension not in ABLATION_GRIDS:
        raise ValueError(f"unknown ablation dimension {dimension!r}")
    values = ABLATION_GRIDS[dimension] if values is None else values
    key = _ABLATION_FIELD[dimension]
    specs = []
    for v in values:
        if key in ("horizon", "replan_interval", "num_inits"):
            v = int(v)
        changes = {key: v}
        if key == "horizon":
            changes["replan_interval"] = min(base.replan_interval, v)
        cfg = dataclasses.replace(base, **changes)
        specs.append(AgentSpec("fompc", cfg, label=f"fompc[{dimension}={_value_tag(getattr(cfg, key))}]"))
    return specs


def _value_tag(v) -> str:
    return v.name.lower() if isinstance(v, enum.Enum) else str(v)


def run_ablation(dimension: str, values=None, seeds=range(200), base: FompcConfig = FompcConfig(),
                 workers: int = 1, config: EpisodeConfig = EpisodeConfig(), out_dir=None,
                 resume: bool = False, save_trajectories: bool = False, progress=None
                 ) -> BenchmarkSummary:
    """One FOMPC variant per value, all on the same seeds, in a single summary."""
    specs = ablation_specs(dimension, values, base)
    return run_benchmark(specs, seeds, workers, config, out_dir, resume, save_trajectories, progress)
