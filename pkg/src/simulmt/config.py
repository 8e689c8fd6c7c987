"""INI experiment configuration with typed sections and strict key checking."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    emb: int = 32
    hidden: int = 64
    att: int = 64
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-3
    clip: float = 5.0
    prefix_init: float = 0.5
    max_len: int = 50


@dataclass
class AgentSection:
    hidden: int = 64
    baseline_hidden: int = 64


@dataclass
class RewardSection:
    alpha: float = 0.0
    beta: float = -4.0
    d_star: float = 0.5
    c_star: float = 5.0
    max_ngram: int = 4


@dataclass
class TrainSection:
    lr_agent: float = 1e-3
    lr_baseline: float = 1e-3
    entropy_coef: float = 0.02
    entropy_sign: str = "bonus"
    batch_sentences: int = 10
    samples_per_sentence: int = 5
    max_updates: int = 600
    eval_every: int = 60
    stats_momentum: float = 0.99
    stats_eps: float = 1e-8
    select: str = "ratio"


@dataclass
class DataSection:
    task: str = "copy"
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    len_min: int = 5
    len_max: int = 12
    vocab_size: int = 20
    window: int = 2
    shift: int = 1
    dir: str = "data"
    out_dir: str = "runs"


@dataclass
class DecodeSection:
    policy: str = "agent"
    mode: str = "greedy"
    beam_k: int = 5


@dataclass
class SweepSection:
    target: str = "ap"
    d_star_grid: str = "0.3,0.5,0.7"
    c_star_grid: str = "2,5,8"


@dataclass
class SeedSection:
    data: int = 1
    env: int = 0
    agent: int = 5
    train: int = 3


SECTIONS = {
    "env": EnvSection,
    "agent": AgentSection,
    "reward": RewardSection,
    "train": TrainSection,
    "data": DataSection,
    "decode": DecodeSection,
    "sweep": SweepSection,
    "seeds": SeedSection,
}


@dataclass
class ExperimentConfig:
    env: EnvSection = field(default_factory=EnvSection)
    agent: AgentSection = field(default_factory=AgentSection)
    reward: RewardSection = field(default_factory=RewardSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    seeds: SeedSection = field(default_factory=SeedSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.train.entropy_sign not in ("bonus", "literal"):
            raise ConfigError("train.entropy_sign must be 'bonus' or 'literal'")
        if self.train.select not in ("ratio", "final"):
            raise ConfigError("train.select must be 'ratio' or 'final'")
        if self.decode.mode not in ("greedy", "beam"):
            raise ConfigError("decode.mode must be 'greedy' or 'beam'")
        if self.decode.beam_k < 1:
            raise ConfigError("decode.beam_k must be >= 1")
        if self.sweep.target not in ("ap", "cw"):
            raise ConfigError("sweep.target must be 'ap' or 'cw'")
        if self.data.len_min > self.data.len_max:
            raise ConfigError("data.len_min exceeds data.len_max")
        for name in ("d_star_grid", "c_star_grid"):
            try:
                vals = parse_grid(getattr(self.sweep, name))
            except ValueError:
                raise ConfigError(f"sweep.{name} must be a comma-separated list of numbers") from None
            if not vals:
                raise ConfigError(f"sweep.{name} is empty")

    @property
    def d_star_grid(self) -> list[float]:
        return parse_grid(self.sweep.d_star_grid)

    @property
    def c_star_grid(self) -> list[float]:
        return parse_grid(self.sweep.c_star_grid)

    def set(self, dotted: str, value: str) -> None:
        """Apply one ``section.key=value`` override."""
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        _assign(self, sec, key, value)
        self.validate()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for sec in SECTIONS:
            cp[sec] = {f.name: str(getattr(getattr(self, sec), f.name))
                       for f in fields(SECTIONS[sec])}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
            lines.append("")
        return "\n".join(lines)

    def header(self, prefix: str = "# ") -> str:
        """The config as comment lines, for echoing into output files."""
        return "".join(prefix + line + "\n" for line in self.to_ini().splitlines() if line)

    def copy(self) -> "ExperimentConfig":
        return dataclasses.replace(self, **{s: dataclasses.replace(getattr(self, s))
                                            for s in SECTIONS})


def parse_grid(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _coerce(value: str, typ, where: str):
    try:
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
        if typ in (bool, "bool"):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        return str(value).strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ}") from None


def _assign(cfg: ExperimentConfig, sec: str, key: str, value: str) -> None:
    if sec not in SECTIONS:
        raise ConfigError(f"unknown config section [{sec}]")
    section = getattr(cfg, sec)
    types = {f.name: f.type for f in fields(section)}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} in section [{sec}]")
    setattr(section, key, _coerce(value, types[key], f"{sec}.{key}"))


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the INI file at ``path`` (if any), then ``section.key=value`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        try:
            cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {str(exc).splitlines()[0]}") from None
        for sec in cp.sections():
            for key, value in cp[sec].items():
                _assign(cfg, sec, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    cfg.validate()
    return cfg
