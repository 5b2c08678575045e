"""Strict JSON experiment configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError, UsageError
from .geometry import MsaParameters
from .hamiltonian import DEFAULT_CAP, InteractionPotential, parse_distribution

KINDS = ("localize", "wegner", "emsa", "schedule")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True)
class ModelConfig:
    N: tuple = (1,)
    lam: tuple = (10.0,)
    distribution: dict = field(default_factory=lambda: {"kind": "uniform", "v_max": 1.0})
    interaction: dict = field(default_factory=dict)

    @property
    def potential(self):
        return InteractionPotential({int(k): float(v) for k, v in self.interaction.items()})

    @property
    def law(self):
        return parse_distribution(self.distribution)


@dataclass(frozen=True)
class RegionConfig:
    center: tuple
    L: float


@dataclass(frozen=True)
class GeometryConfig:
    center: tuple | None = None
    L: tuple = (3.0,)
    l: float = 4.0
    L0: float | None = None
    k_max: int = 3
    theta1: RegionConfig | None = None
    theta2: RegionConfig | None = None
    s_grid: tuple = (0.0, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class RunConfig:
    trials: int = 100
    base_seed: int = 0
    workers: int = 1
    out: str = "out"
    cap: int = DEFAULT_CAP
    p: float = 1.0  # target decay exponent for the decay-parameter schedule
    stop_radius: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: ModelConfig = field(default_factory=ModelConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    msa: MsaParameters = field(default_factory=MsaParameters)
    run: RunConfig = field(default_factory=RunConfig)

    def replace_run(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **kw)) if kw else self

    def to_dict(self):
        d = _plain(dataclasses.asdict(self))
        d["model"]["lambda"] = d["model"].pop("lam")
        return d


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _strict(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in '{section}': {sorted(extra)}")


def _num(section, key, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{section}.{key}' must be a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"'{section}.{key}' must be an integer, got {v!r}")
    return kind(v)


def _region(section, d):
    _strict(section, d, ("center", "L"))
    if "center" not in d or "L" not in d:
        raise ConfigError(f"'{section}' needs 'center' and 'L'")
    return RegionConfig(tuple(_num(section, "center", c, int) for c in d["center"]), _num(section, "L", d["L"]))


def parse_config(data):
    """Build an ExperimentConfig from a decoded JSON object, rejecting unknown keys."""
    _strict("root", data, ("experiment", "model", "geometry", "msa", "run"))
    kind = data.get("experiment")
    if kind not in KINDS:
        raise ConfigError(f"'experiment' must be one of {KINDS}, got {kind!r}")

    m = data.get("model", {})
    _strict("model", m, ("N", "lambda", "distribution", "interaction"))
    model = ModelConfig(
        N=tuple(_num("model", "N", v, int) for v in _as_list(m.get("N", 1))),
        lam=tuple(_num("model", "lambda", v) for v in _as_list(m.get("lambda", 10.0))),
        distribution=dict(m.get("distribution", {"kind": "uniform", "v_max": 1.0})),
        interaction={str(int(k)): _num("model.interaction", k, v) for k, v in m.get("interaction", {}).items()},
    )
    if any(n < 1 for n in model.N):
        raise ConfigError("model.N must be >= 1")
    try:
        model.law
        model.potential
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc

    g = data.get("geometry", {})
    _strict("geometry", g, ("center", "L", "l", "L0", "k_max", "theta1", "theta2", "s_grid"))
    geometry = GeometryConfig(
        center=None if g.get("center") is None else tuple(_num("geometry", "center", c, int) for c in g["center"]),
        L=tuple(_num("geometry", "L", v) for v in _as_list(g.get("L", 3.0))),
        l=_num("geometry", "l", g.get("l", 4.0)),
        L0=None if g.get("L0") is None else _num("geometry", "L0", g["L0"]),
        k_max=_num("geometry", "k_max", g.get("k_max", 3), int),
        theta1=None if g.get("theta1") is None else _region("geometry.theta1", g["theta1"]),
        theta2=None if g.get("theta2") is None else _region("geometry.theta2", g["theta2"]),
        s_grid=tuple(_num("geometry", "s_grid", v) for v in g.get("s_grid", (0.0, 1e-3, 1e-2, 1e-1, 1.0))),
    )

    s = data.get("msa", {})
    _strict("msa", s, ("beta", "tau", "gamma", "m", "ell_min"))
    msa = MsaParameters(**{k: _num("msa", k, v) for k, v in s.items()})

    r = data.get("run", {})
    _strict("run", r, ("trials", "base_seed", "workers", "out", "cap", "p", "stop_radius"))
    run = RunConfig(
        trials=_num("run", "trials", r.get("trials", 100), int),
        base_seed=_num("run", "base_seed", r.get("base_seed", 0), int),
        workers=_num("run", "workers", r.get("workers", 1), int),
        out=str(r.get("out", "out")),
        cap=_num("run", "cap", r.get("cap", DEFAULT_CAP), int),
        p=_num("run", "p", r.get("p", 1.0)),
        stop_radius=None if r.get("stop_radius") is None else _num("run", "stop_radius", r["stop_radius"]),
    )
    cfg = ExperimentConfig(kind, model, geometry, msa, run)
    validate(cfg)
    return cfg


def validate(cfg):
    r = cfg.run
    if r.trials < 1:
        raise ConfigError("run.trials must be >= 1")
    if r.workers < 1:
        raise ConfigError("run.workers must be >= 1")
    if not 0 <= r.base_seed < 2**64:
        raise ConfigError("run.base_seed must be a 64-bit unsigned integer")
    if r.cap < 1:
        raise ConfigError("run.cap must be positive")
    g = cfg.geometry
    if cfg.experiment == "wegner" and (g.theta1 is None or g.theta2 is None):
        raise ConfigError("wegner needs geometry.theta1 and geometry.theta2")
    if cfg.experiment == "schedule" and g.L0 is None:
        raise ConfigError("schedule needs geometry.L0")
    if g.center is not None and len(cfg.model.N) == 1 and len(g.center) != cfg.model.N[0]:
        raise ConfigError(f"geometry.center has {len(g.center)} coordinates but N={cfg.model.N[0]}")
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)
