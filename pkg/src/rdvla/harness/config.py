"""YAML experiment configs mirroring the dataclass field names one to one."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from ..adaptive import ExecPolicy, StopPolicy
from ..encoder import EncoderConfig
from ..errors import ConfigError
from ..head import HeadConfig
from ..sim.env import EPISODE_CAPS
from ..trainer import DepthSampler, TrainConfig


@dataclass
class SamplerConfig:
    mu_rec: float = 8.0
    sigma: float = 0.5
    seed: int = 0

    def validate(self):
        errors = []
        if not self.mu_rec > 0:
            errors.append("sampler.mu_rec: must be > 0")
        if self.sigma < 0:
            errors.append("sampler.sigma: must be >= 0")
        return errors

    def build(self):
        return DepthSampler(mu_rec=self.mu_rec, sigma=self.sigma, seed=self.seed)


@dataclass
class SimConfig:
    tiers: list = field(default_factory=lambda: [0, 1, 2])
    episodes_per_tier: int = 300  # demo episodes per tier
    demo_seed: int = 0
    demo_noise: float = 0.0
    eval_seed_start: int = 100_000  # held out from demo seeds
    eval_episodes: int = 100
    caps: dict = field(default_factory=lambda: dict(EPISODE_CAPS))
    demo_cache: str = ""

    @property
    def eval_seeds(self):
        return list(range(self.eval_seed_start, self.eval_seed_start + self.eval_episodes))

    def validate(self):
        errors = []
        if not self.tiers or any(t not in EPISODE_CAPS for t in self.tiers):
            errors.append(f"sim.tiers: must be a non-empty subset of {sorted(EPISODE_CAPS)}, got {self.tiers}")
        if self.episodes_per_tier < 1:
            errors.append("sim.episodes_per_tier: must be >= 1")
        if self.demo_noise < 0:
            errors.append("sim.demo_noise: must be >= 0")
        if self.eval_episodes < 0:
            errors.append("sim.eval_episodes: must be >= 0")
        if self.eval_seed_start < self.demo_seed + self.episodes_per_tier and self.eval_episodes:
            errors.append("sim.eval_seed_start: evaluation seeds overlap the demo seeds")
        for t, cap in self.caps.items():
            if int(t) not in EPISODE_CAPS or int(cap) < 1:
                errors.append(f"sim.caps: bad entry {t}: {cap}")
        return errors

    def cap(self, tier):
        return int(self.caps.get(tier, self.caps.get(str(tier), EPISODE_CAPS[tier])))


@dataclass
class ExperimentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    stop: StopPolicy = field(default_factory=StopPolicy)
    exec: ExecPolicy = field(default_factory=ExecPolicy)
    sim: SimConfig = field(default_factory=SimConfig)
    out_dir: str = "runs/default"
    dtype: str = "float64"
    model_seed: int = 0

    def validate(self):
        errors = []
        for part in ("encoder", "head", "train", "sampler", "stop", "sim"):
            errors += getattr(self, part).validate()
        errors += self.exec.validate(horizon=self.head.horizon)
        if self.encoder.d_model != self.head.d_model:
            errors.append(f"head.d_model: must match encoder.d_model ({self.encoder.d_model}), got {self.head.d_model}")
        if self.stop.kind == "pure_kl" and self.stop.max_iters > self.head.max_iters:
            errors.append(f"stop.max_iters: {self.stop.max_iters} exceeds head.max_iters {self.head.max_iters}")
        if self.stop.kind == "fixed" and self.stop.fixed_r > self.head.max_iters:
            errors.append(f"stop.fixed_r: {self.stop.fixed_r} exceeds head.max_iters {self.head.max_iters}")
        if self.dtype not in ("float32", "float64"):
            errors.append(f"dtype: must be float32 or float64, got {self.dtype!r}")
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {
    "encoder": EncoderConfig,
    "head": HeadConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "stop": StopPolicy,
    "exec": ExecPolicy,
    "sim": SimConfig,
}


def _build_section(name, cls, values, errors):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        errors.append(f"{name}: expected a mapping, got {type(values).__name__}")
        return cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            errors.append(f"{name}.{key}: unknown field")
            continue
        default = getattr(cls(), key)
        if isinstance(default, bool) or default is None:
            kwargs[key] = val
        elif isinstance(default, int) and not isinstance(val, bool) and isinstance(val, (int, float)) and float(val).is_integer():
            kwargs[key] = int(val)
        elif isinstance(default, float) and isinstance(val, (int, float)) and not isinstance(val, bool):
            kwargs[key] = float(val)
        elif isinstance(default, (int, float)) and not isinstance(val, (int, float)):
            errors.append(f"{name}.{key}: expected a number, got {val!r}")
        else:
            kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    errors = []
    kwargs = {}
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, val in data.items():
        if key not in top:
            errors.append(f"{key}: unknown field")
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], val, errors)
        else:
            kwargs[key] = val
    cfg = ExperimentConfig(**kwargs)
    if isinstance(cfg.sim.tiers, int):
        cfg.sim.tiers = [cfg.sim.tiers]
    errors += cfg.validate()
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path):
    """Parse and validate a YAML config; raises ConfigError or OSError."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg, path=None):
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
