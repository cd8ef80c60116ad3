"""Run configuration: one TOML file, parsed completely before any stage runs.

Unknown sections or keys are errors.  ``--override section.key=value``
strings are applied on top of the file; values are parsed as TOML literals
and fall back to plain strings.
"""
import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .control import ControlRunConfig, PidGains
from .errors import ConfigError, InvalidParameterError
from .finetune import FineTuneConfig
from .model import Normalization
from .plant import AeroMaps, LowLevelGains, PlantParams
from .protocols import StaticGridSpec


@dataclass(frozen=True)
class StepSettings:
    pre_step: float = 5.0
    post_step: float = 5.0
    omega_holds: tuple = (2000.0, 3000.0, 4000.0, 5000.0, 6000.0)
    beta_holds: tuple = (-5.0, -1.25, 2.5, 6.25, 10.0)


@dataclass(frozen=True)
class OpenLoopSettings:
    n_per_part: int = 8
    hold: float = 2.5
    omega_fixed: float = 4500.0
    beta_fixed: float = 4.0


@dataclass(frozen=True)
class ControlSettings:
    run: ControlRunConfig = ControlRunConfig()
    mode: str = "combined"
    gains: PidGains = None          # None -> tune
    tau_beta_2: float = None        # override applied to the model before control


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    noise: float = 0.0
    dt: float = 0.004
    deadband: float = 0.0
    plant: PlantParams = PlantParams()
    aero: AeroMaps = AeroMaps()
    lowlevel: LowLevelGains = LowLevelGains()
    normalization: Normalization = Normalization()
    static_grid: StaticGridSpec = StaticGridSpec()
    steps: StepSettings = StepSettings()
    open_loop: OpenLoopSettings = OpenLoopSettings()
    finetune: FineTuneConfig = FineTuneConfig()
    control: ControlSettings = ControlSettings()


_TOP = ("seed", "out", "noise", "dt", "deadband")
_SECTIONS = {
    "plant": PlantParams, "aero": AeroMaps, "lowlevel": LowLevelGains,
    "normalization": Normalization, "static_grid": StaticGridSpec,
    "steps": StepSettings, "open_loop": OpenLoopSettings, "finetune": FineTuneConfig,
}


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, table, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in table.items():
        if isinstance(v, dict):
            v = tuple(sorted(v.items()))   # e.g. finetune.overrides table
        kwargs[k] = _tuplify(v)
    try:
        return cls(**kwargs)
    except (InvalidParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_override(text):
    """``"section.key=value"`` -> ``(["section", "key"], value)``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p.strip() for p in key.strip().split(".") if p.strip()]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def _apply(data, path, value):
    node = data
    for p in path[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {'.'.join(path)} crosses a scalar")
    node[path[-1]] = value


def from_dict(data, source="<config>"):
    data = dict(data)
    unknown = sorted(set(data) - set(_TOP) - set(_SECTIONS) - {"control"})
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for k in _TOP:
        if k in data:
            kw[k] = data[k]
    for name, cls in _SECTIONS.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"{source}: [{name}] must be a table")
            kw[name] = _build(cls, data[name], f"{source} [{name}]")
    if "control" in data:
        ctl = dict(data["control"])
        mode = ctl.pop("mode", "combined")
        gains = ctl.pop("gains", None)
        tb2 = ctl.pop("tau_beta_2", None)
        if gains is not None:
            if not isinstance(gains, dict):
                raise ConfigError(f"{source} [control.gains] must be a table")
            gains = _build(PidGains, gains, f"{source} [control.gains]")
        run = _build(ControlRunConfig, ctl, f"{source} [control]")
        kw["control"] = ControlSettings(run, mode, gains, tb2)
        if mode not in ("combined", "rpm_only"):
            raise ConfigError(f"{source} [control]: unknown mode {mode!r}")
    try:
        cfg = RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError(f"{source}: seed must be a non-negative integer")
    if not cfg.noise >= 0:
        raise ConfigError(f"{source}: noise must be >= 0")
    if not cfg.dt > 0:
        raise ConfigError(f"{source}: dt must be positive")
    return cfg


def load_config(path=None, overrides=()):
    """Read a TOML config (or defaults when ``path`` is None) and apply overrides."""
    data = {}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{source}: cannot read config ({exc.strerror})") from None
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    for text in overrides:
        p, v = parse_override(text)
        _apply(data, p, v)
    return from_dict(data, source)
