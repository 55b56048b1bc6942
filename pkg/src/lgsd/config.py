"""Run configuration: nested dataclasses, strict JSON loading, and a generated schema.

Defaults are the full-scale hyperparameters where those are fixed (learning
rate, PPO clip/epochs, GAE, discount, entropy coefficient, initial
multiplier, skill dimension) and are desk-scaled elsewhere.
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .env import EnvConfig

FULL_HIDDEN = (256, 256, 128)
DESK_HIDDEN = (64, 64)


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise ValueError(message)


@dataclass(frozen=True)
class DescriberConfig:
    template: str = "point_half_plane_N"
    rho: float = 0.05
    backend: str = "rule"  # "rule" | "llm"
    cache_path: typing.Optional[str] = None

    def __post_init__(self):
        _check(self.rho > 0, "describer.rho must be positive")
        _check(self.backend in ("rule", "llm"), f"describer.backend must be 'rule' or 'llm', got {self.backend!r}")


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "hash_builtin"  # "hash_builtin" | "external_service"
    n_features: int = 256
    seed: int = 0
    tokenizer: str = "whitespace"

    def __post_init__(self):
        _check(self.backend in ("hash_builtin", "external_service"), f"unknown embedder backend {self.backend!r}")
        _check(self.n_features >= 2, "embedder.n_features must be >= 2")


@dataclass(frozen=True)
class SkillConfig:
    dim: int = 2
    eps: float = 1e-3
    lr_dual: float = 0.01
    init_lambda: float = 300.0
    phi_lr: float = 1e-4
    phi_input: str = "snapped"  # "snapped" (cell centre) | "raw"
    psi_lr: float = 1e-4
    phi_hidden: typing.Optional[typing.List[int]] = None
    psi_hidden: typing.Optional[typing.List[int]] = None

    def __post_init__(self):
        _check(self.dim >= 1, "skill.dim must be >= 1")
        _check(self.eps > 0 and self.lr_dual > 0, "skill.eps and skill.lr_dual must be positive")
        _check(self.init_lambda >= 0, "skill.init_lambda must be non-negative")
        _check(self.phi_lr > 0 and self.psi_lr > 0, "learning rates must be positive")
        _check(self.phi_input in ("snapped", "raw"), f"skill.phi_input must be 'snapped' or 'raw', got {self.phi_input!r}")


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 1e-4
    value_lr: typing.Optional[float] = None
    clip: float = 0.2
    epochs: int = 5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 1e-4
    minibatch: int = 512
    vf_coef: float = 0.5
    normalize_advantages: bool = True
    log_std_init: float = 0.0
    policy_hidden: typing.Optional[typing.List[int]] = None

    def __post_init__(self):
        _check(self.lr > 0 and (self.value_lr is None or self.value_lr > 0), "ppo learning rates must be positive")
        _check(self.clip > 0 and self.epochs >= 1 and self.minibatch >= 1, "ppo.clip, ppo.epochs and ppo.minibatch must be positive")
        _check(0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1, "ppo.gamma and ppo.gae_lambda must lie in [0, 1]")


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 300
    episodes_per_epoch: int = 8
    seed: int = 0
    network_preset: str = "desk"  # "desk" -> [64, 64], "full" -> [256, 256, 128]
    out_dir: typing.Optional[str] = None

    def __post_init__(self):
        _check(self.epochs >= 0 and self.episodes_per_epoch >= 1, "trainer.epochs must be >= 0 and episodes_per_epoch >= 1")
        _check(self.network_preset in ("desk", "full"), f"trainer.network_preset must be 'desk' or 'full', got {self.network_preset!r}")


@dataclass(frozen=True)
class EvalConfig:
    n_skills: int = 50
    cell_size: float = 0.01
    goal_radius: float = 0.1
    deterministic: bool = True


@dataclass(frozen=True)
class HierConfig:
    decision_interval: int = 10
    goal_radius: float = 0.1
    goal_low: typing.List[float] = field(default_factory=lambda: [-0.8, -0.8])
    goal_high: typing.List[float] = field(default_factory=lambda: [0.8, 0.8])
    epochs: int = 150
    episodes_per_epoch: int = 32
    skill_scale: float = 1.0

    def __post_init__(self):
        _check(self.decision_interval >= 1 and self.epochs >= 0 and self.episodes_per_epoch >= 1, "hier budget fields must be positive")
        _check(len(self.goal_low) == 2 and len(self.goal_high) == 2, "hier goal box needs two coordinates per corner")
        _check(self.goal_radius >= 0 and self.skill_scale > 0, "hier.goal_radius must be >= 0 and skill_scale > 0")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    describer: DescriberConfig = field(default_factory=DescriberConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    skill: SkillConfig = field(default_factory=SkillConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    hier: HierConfig = field(default_factory=HierConfig)

    def hidden(self, which: str) -> list[int]:
        explicit = {"phi": self.skill.phi_hidden, "psi": self.skill.psi_hidden, "policy": self.ppo.policy_hidden}[which]
        if explicit is not None:
            return list(explicit)
        return list(FULL_HIDDEN if self.trainer.network_preset == "full" else DESK_HIDDEN)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **sections) -> "RunConfig":
        """Return a copy with some fields overridden, e.g. ``replace(ppo={"lr": 1e-3})``."""
        return from_dict(_merge(self.to_dict(), sections))


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _json_type(tp) -> dict:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        return {"anyOf": [_json_type(inner[0]), {"type": "null"}]}
    if origin in (list, typing.List):
        return {"type": "array", "items": _json_type(args[0])}
    if tp is bool:
        return {"type": "boolean"}
    if tp is int:
        return {"type": "integer"}
    if tp is float:
        return {"type": "number"}
    if tp is str:
        return {"type": "string"}
    raise TypeError(f"no JSON type for {tp!r}")


def _section_schema(cls) -> dict:
    hints = typing.get_type_hints(cls)
    props = {f.name: _json_type(hints[f.name]) for f in dataclasses.fields(cls)}
    return {"type": "object", "properties": props, "additionalProperties": False}


def json_schema() -> dict:
    hints = typing.get_type_hints(RunConfig)
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "lgsd run configuration",
        "type": "object",
        "properties": {f.name: _section_schema(hints[f.name]) for f in dataclasses.fields(RunConfig)},
        "additionalProperties": False,
    }


class ConfigError(ValueError):
    pass


def from_dict(d: dict) -> RunConfig:
    """Validate against the schema, then build; unknown keys are rejected."""
    try:
        jsonschema.validate(d, json_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    hints = typing.get_type_hints(RunConfig)
    sections = {}
    for name, value in d.items():
        cls = hints[name]
        kwargs = dict(value)
        try:
            sections[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} section: {exc}") from None
    return RunConfig(**sections)


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p} is not valid JSON: {exc}") from None
    return from_dict(data)


def dump(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# Overrides that make one training run fit a few minutes on one CPU core.
# The full-scale learning rates assume far larger batches and many more
# epochs; at 32 episodes per epoch they barely move in 300 epochs.
DESK_OVERRIDES = {
    "ppo": {"lr": 3e-4, "minibatch": 256},
    "skill": {"phi_lr": 1e-3, "psi_lr": 1e-3},
    "trainer": {"epochs": 300, "episodes_per_epoch": 32},
    "hier": {"epochs": 1000, "episodes_per_epoch": 32},
}


def desk_config(template: str = "point_half_plane_N", seed: int = 0) -> RunConfig:
    """Desk-scale run configuration for ``template``."""
    from .describer import template_env

    env = template_env(template)
    base = RunConfig().replace(**DESK_OVERRIDES)
    return base.replace(env={"name": "point" if env == "any" else env}, describer={"template": template}, trainer={"seed": seed})
