"""Run configuration: an INI file whose sections mirror :class:`RsrConfig`.

Example::

    [run]
    iterations = 4
    transitions = 200
    seed = 0
    task = square

    [proxy]
    mu_table = 0.6
    obs_noise_sigma = 0.001

    [theta0]
    mu_table = 0.3

Every section and key is optional; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..core import ValidationError
from ..diffsim.dynamics import PARAM_NAMES, SimGeometry, SimParams
from ..diffsim.proxy import RealProxyConfig
from ..infogap import DEFAULT_COORDS
from ..policy.env import TaskConfig
from ..policy.ppo import PpoConfig
from ..tuner import TunerConfig


class ConfigError(ValueError):
    """The configuration file is unreadable or inconsistent."""


@dataclass(frozen=True)
class InfoGapSettings:
    lambda_sr: float = 1.0
    coordinates: tuple | None = None  # None picks a default from the task shape
    order: float = 1.0

    def coords_for(self, shape: str) -> tuple:
        if self.coordinates:
            return tuple(self.coordinates)
        return DEFAULT_COORDS if shape == "square" else DEFAULT_COORDS + ("block_yaw",)


@dataclass(frozen=True)
class RsrConfig:
    iterations: int = 4
    transitions: int = 200
    seed: int = 0
    gap_tol: float = 1e-5
    early_exit: bool = True
    deterministic: bool = True
    eval_episodes: int = 100
    proxy: RealProxyConfig = field(default_factory=RealProxyConfig)
    theta0: SimParams = field(default_factory=lambda: SimParams(mu_table=0.3))
    tuner: TunerConfig = field(default_factory=TunerConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    infogap: InfoGapSettings = field(default_factory=InfoGapSettings)
    task: TaskConfig = field(default_factory=TaskConfig)
    geometry: SimGeometry = field(default_factory=SimGeometry)
    output: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations (K) must be >= 1")
        if self.transitions < 10:
            raise ValidationError("transitions (M) must be >= 10")
        if self.gap_tol < 0:
            raise ValidationError("gap_tol must be >= 0")
        if self.geometry.shape != self.task.shape:
            object.__setattr__(self, "geometry", self.task.geometry(self.geometry))

    @property
    def coordinates(self) -> tuple:
        return self.infogap.coords_for(self.task.shape)

    def replace(self, **kw) -> "RsrConfig":
        return dataclasses.replace(self, **kw)


_RUN_KEYS = {"iterations": int, "transitions": int, "seed": int, "gap_tol": float,
             "early_exit": bool, "deterministic": bool, "eval_episodes": int, "output": str, "task": str}


def _number_or_str(v: str):
    try:
        return float(v)
    except ValueError:
        return v


def _convert(raw: str, kind, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(_number_or_str(v.strip()) for v in raw.split(",") if v.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def _field_kinds(cls) -> dict:
    kinds = {}
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else None
        t = str(f.type)
        if "bool" in t:
            kinds[f.name] = bool
        elif "int" in t and "float" not in t:
            kinds[f.name] = int
        elif "tuple" in t:
            kinds[f.name] = tuple
        elif "str" in t or "Optimizer" in t:
            kinds[f.name] = str
        elif isinstance(default, (int, float)) or "float" in t:
            kinds[f.name] = float
        else:
            kinds[f.name] = None
    return kinds


def _section(parser, name: str, cls, skip=()) -> dict:
    if not parser.has_section(name):
        return {}
    kinds = _field_kinds(cls)
    out = {}
    for key, raw in parser.items(name):
        if key in skip:
            continue
        kind = kinds.get(key)
        if kind is None:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        val = _convert(raw, kind, f"[{name}] {key}")
        if kind is tuple and cls is TaskConfig:
            val = tuple(float(v) for v in val)
        out[key] = val
    return out


def _params_from(parser, name: str, base: SimParams) -> SimParams:
    if not parser.has_section(name):
        return base
    kw = {}
    for key, raw in parser.items(name):
        if key not in PARAM_NAMES:
            if name == "proxy":
                continue
            raise ConfigError(f"[{name}] unknown parameter {key!r}")
        kw[key] = _convert(raw, float, f"[{name}] {key}")
    return base.replace(**kw)


_SECTIONS = {"run", "proxy", "theta0", "tuner", "ppo", "infogap", "task", "geometry", "params"}


def parse_config(text: str) -> RsrConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    try:
        run = {}
        if parser.has_section("run"):
            for key, raw in parser.items("run"):
                if key not in _RUN_KEYS:
                    raise ConfigError(f"[run] unknown key {key!r}")
                run[key] = _convert(raw, _RUN_KEYS[key], f"[run] {key}")
        shape = run.pop("task", "square")
        task = TaskConfig(shape=shape, **_section(parser, "task", TaskConfig, skip=("shape",)))
        geom_kw = dict(parser.items("geometry")) if parser.has_section("geometry") else {}
        geom_kw["shape"] = shape
        geometry = SimGeometry.from_dict(geom_kw)
        proxy_extra = _section(parser, "proxy", RealProxyConfig, skip=PARAM_NAMES + ("true_params",))
        true_params = _params_from(parser, "proxy", RealProxyConfig().true_params)
        proxy = RealProxyConfig(true_params=true_params, **proxy_extra)
        theta0 = _params_from(parser, "theta0", SimParams(mu_table=0.3))
        tuner = TunerConfig(**_section(parser, "tuner", TunerConfig, skip=("param_bounds", "param_scale")))
        ppo = PpoConfig(**_section(parser, "ppo", PpoConfig))
        ig = InfoGapSettings(**_section(parser, "infogap", InfoGapSettings))
        return RsrConfig(proxy=proxy, theta0=theta0, tuner=tuner, ppo=ppo, infogap=ig, task=task,
                         geometry=geometry, **run)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RsrConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def dump_config(cfg: RsrConfig) -> str:
    """Serialize ``cfg`` so that ``parse_config(dump_config(cfg)) == cfg``."""
    parser = configparser.ConfigParser(interpolation=None)
    run = {"iterations": cfg.iterations, "transitions": cfg.transitions, "seed": cfg.seed,
           "gap_tol": cfg.gap_tol, "early_exit": cfg.early_exit, "deterministic": cfg.deterministic,
           "eval_episodes": cfg.eval_episodes, "task": cfg.task.shape}
    if cfg.output is not None:
        run["output"] = cfg.output
    parser["run"] = {k: _fmt(v) for k, v in run.items()}
    proxy = {n: getattr(cfg.proxy.true_params, n) for n in PARAM_NAMES}
    proxy.update(obs_noise_sigma=cfg.proxy.obs_noise_sigma, seed=cfg.proxy.seed)
    parser["proxy"] = {k: _fmt(v) for k, v in proxy.items()}
    parser["theta0"] = {n: _fmt(getattr(cfg.theta0, n)) for n in PARAM_NAMES}
    parser["tuner"] = {f.name: _fmt(getattr(cfg.tuner, f.name)) for f in dataclasses.fields(TunerConfig)
                       if f.name not in ("param_bounds", "param_scale")}
    parser["ppo"] = {f.name: _fmt(getattr(cfg.ppo, f.name)) for f in dataclasses.fields(PpoConfig)}
    ig = {"lambda_sr": cfg.infogap.lambda_sr, "order": cfg.infogap.order}
    if cfg.infogap.coordinates:
        ig["coordinates"] = cfg.infogap.coordinates
    parser["infogap"] = {k: _fmt(v) for k, v in ig.items()}
    parser["task"] = {f.name: _fmt(getattr(cfg.task, f.name)) for f in dataclasses.fields(TaskConfig)
                      if f.name != "shape"}
    parser["geometry"] = {k: _fmt(v) for k, v in cfg.geometry.to_dict().items() if k != "shape"}
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_params(path) -> SimParams:
    """Read a ``[params]`` (or ``[theta0]``) section into :class:`SimParams`."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read params file {path}: {exc}") from None
    for name in ("params", "theta0"):
        if parser.has_section(name):
            try:
                return _params_from(parser, name, SimParams())
            except ValidationError as exc:
                raise ConfigError(str(exc)) from None
    raise ConfigError(f"{path} has no [params] section")


def dump_params(params: SimParams) -> str:
    lines = ["[params]"] + [f"{n} = {getattr(params, n)!r}" for n in PARAM_NAMES]
    return "\n".join(lines) + "\n"


def load_proxy(path) -> RealProxyConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read proxy file {path}: {exc}") from None
    try:
        extra = _section(parser, "proxy", RealProxyConfig, skip=PARAM_NAMES + ("true_params",))
        return RealProxyConfig(true_params=_params_from(parser, "proxy", RealProxyConfig().true_params), **extra)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
