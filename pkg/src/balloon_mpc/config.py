"""YAML run configuration mapped onto the library dataclasses.

Example::

    fompc:
      horizon: 240
      replan_interval: 24
      fidelity: phi4
      wind_model: psi2
      gp: {noise_std: 0.5}
    balloon:
      k_vent: 0.15
    wind:
      noise_amplitude: 2.0
      noise_bias: 0.0
    episode:
      steps: 960
    discretize: round

Every section and key is optional; anything omitted keeps its default.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dynamics import BalloonParams
from .fompc import FompcConfig
from .harness import EpisodeConfig
from .windsim import GpConfig


class ConfigError(ValueError):
    pass


WIND_KEYS = ("noise_amplitude", "noise_bias", "noise_octaves", "noise_length_scales")
EPISODE_KEYS = ("steps", "dt", "substeps", "radius_km", "init_radius_km", "band_fraction", "local_offset")


@dataclass(frozen=True)
class RunConfig:
    fompc: FompcConfig = FompcConfig()
    episode: EpisodeConfig = EpisodeConfig()
    discretize: str = "round"
    source: str | None = field(default=None, compare=False)

    @property
    def params(self) -> BalloonParams:
        return self.episode.params


def _build(cls, values, section: str, allowed=None) -> dict:
    """Check keys against ``cls`` and coerce numbers to the type of each default."""
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    names = set(fields) if allowed is None else set(fields) & set(allowed)
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    return {k: _coerce(v, fields[k].default, f"{section}.{k}") for k, v in values.items()}


def _coerce(value, default, where: str):
    # YAML 1.1 reads literals such as 5.0e4 as strings
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if isinstance(default, int) and not isinstance(default, enum.Enum):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise ValueError
            return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {where}: {value!r}") from None
    return value


def from_dict(doc: dict | None, source: str | None = None) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping of sections")
    extra = sorted(set(doc) - {"fompc", "balloon", "wind", "episode", "discretize"})
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    try:
        fompc = _build(FompcConfig, doc.get("fompc"), "fompc")
        if "gp" in fompc:
            fompc["gp"] = GpConfig(**_build(GpConfig, fompc["gp"], "fompc.gp"))
        params = BalloonParams(**_build(BalloonParams, doc.get("balloon"), "balloon"))
        ep = _build(EpisodeConfig, doc.get("episode"), "episode", EPISODE_KEYS)
        ep.update(_build(EpisodeConfig, doc.get("wind"), "wind", WIND_KEYS))
        episode = EpisodeConfig(params=params, **ep)
        cfg = RunConfig(FompcConfig(**fompc), episode, doc.get("discretize", "round"), source)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    if cfg.discretize not in ("round", "alternate"):
        raise ConfigError(f"discretize must be 'round' or 'alternate', not {cfg.discretize!r}")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read {p}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{p}: {err}") from err
    return from_dict(doc, str(p))


def to_dict(cfg: RunConfig) -> dict:
    from .harness import jsonable
    f = jsonable(cfg.fompc)
    e = jsonable(cfg.episode)
    balloon = e.pop("params")
    e.pop("seed")
    wind = {k: e.pop(k) for k in WIND_KEYS}
    return {"fompc": f, "balloon": balloon, "wind": wind, "episode": e, "discretize": cfg.discretize}
