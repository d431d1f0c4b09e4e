"""One INI file for every module default; command-line flags override it.

Precedence: dataclass defaults < config file < explicit flags. Sections are
``[fit]``, ``[texture]`` and ``[data]``; keys are the dataclass field names.
See docs/schema.md for the full list.
"""
import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import InputError
from .fitting import FitConfig


@dataclass
class TextureConfig:
    atlas_resolution: int = 256
    orthogonality_fraction: float = 0.8
    max_iterations: int = 50
    tol: float = 1e-4
    hole_fill: int = 8
    anderson: int = 5

    def __post_init__(self):
        if (self.atlas_resolution < 1 or self.max_iterations < 1 or self.hole_fill < 0
                or self.anderson < 0):
            raise InputError("texture settings must be positive")
        if not 0.0 < self.orthogonality_fraction <= 1.0:
            raise InputError("orthogonality_fraction must lie in (0, 1]")
        if not self.tol > 0:
            raise InputError("tol must be positive")


@dataclass
class DataConfig:
    train: int = 12
    test: int = 10
    width: int = 256
    height: int = 256
    joint_count: int = 16
    pattern: str = "patches"
    atlas_resolution: int = 256
    clothing_amplitude: float = 0.02

    def __post_init__(self):
        if min(self.train, self.test, self.width, self.height) < 1:
            raise InputError("frame counts and resolution must be positive")


@dataclass
class AppConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    texture: TextureConfig = field(default_factory=TextureConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _convert(kind, raw, where):
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError as exc:
        raise InputError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from exc


def _section(cls, items, name):
    known = {f.name: type(f.default) for f in fields(cls)}
    values = {}
    for key, raw in items:
        if key not in known:
            raise InputError(f"[{name}] unknown key {key!r}")
        values[key] = _convert(known[key], raw, f"[{name}] {key}")
    return values


def load_config(path=None):
    """Parse an INI file into an :class:`AppConfig` (defaults when ``path`` is None)."""
    cfg = AppConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    sections = {"fit": FitConfig, "texture": TextureConfig, "data": DataConfig}
    for name in parser.sections():
        if name not in sections:
            raise InputError(f"unknown config section [{name}]")
        values = _section(sections[name], parser.items(name), name)
        setattr(cfg, name, replace(getattr(cfg, name), **values))
    return cfg


def override(section, **flags):
    """Apply flags that were actually given (``None`` means not given)."""
    given = {k: v for k, v in flags.items() if v is not None}
    return replace(section, **given) if given else section
