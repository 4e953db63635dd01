"""Flat ``section.key = value`` run configuration.

Every parameter has a default; a config file only lists overrides. Unknown
keys and unparsable values are :class:`ConfigError`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model import GrnConfig
from .signal import SynthConfig
from .synchrony import WelchConfig
from .train import TrainConfig


@dataclass
class RunSettings:
    seeds: tuple = (0, 1, 2, 3, 4)
    jobs: int = 1


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: GrnConfig = field(default_factory=GrnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    welch: WelchConfig = field(default_factory=WelchConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def to_dict(self) -> dict:
        out = {}
        for section in SECTIONS:
            for k, v in asdict(getattr(self, section)).items():
                out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, synth=replace(self.synth, seed=seed), train=replace(self.train, seed=seed))


SECTIONS = ("synth", "model", "train", "welch", "run")


def _coerce(raw: str, default, key: str, lineno):
    where = f"line {lineno}: " if lineno else ""
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown key {key!r} (sections: {', '.join(SECTIONS)})")
        block = getattr(cfg, section)
        names = {f.name for f in fields(block)}
        if name not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        value = _coerce(raw, getattr(block, name), key, lineno)
        setattr(cfg, section, replace(block, **{name: value}))
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def validate(cfg: RunConfig) -> None:
    cfg.synth.validate()
    cfg.model.validate()
    cfg.train.validate()
    if cfg.run.jobs < 1:
        raise ConfigError(f"run.jobs must be >= 1, got {cfg.run.jobs}")
    if not cfg.run.seeds:
        raise ConfigError("run.seeds must list at least one seed")


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
