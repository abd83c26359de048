"""Configuration objects and the YAML/JSON config loader.

A single config file may carry any of the sections ``problem``, ``sampler``
and ``train``; missing sections fall back to the defaults below.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

CONFIG_DIR_ENV = "DSN_CONFIG_DIR"

SUPPORT_KINDS = ("pin", "roller", "roller_x")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Support:
    """A fixed node. ``pin`` restrains x and y, ``roller`` restrains y only,
    ``roller_x`` restrains x only."""

    x: float
    y: float
    kind: str = "pin"

    def __post_init__(self):
        if self.kind not in SUPPORT_KINDS:
            raise ConfigError(f"support kind must be one of {SUPPORT_KINDS}")

    def restrains(self) -> tuple[bool, bool]:
        return {"pin": (True, True), "roller": (False, True), "roller_x": (True, False)}[self.kind]


@dataclass(frozen=True)
class Load:
    x: float
    y: float
    fx: float
    fy: float


def geometric_ladder(base: float = 0.01, levels: int = 10, ratio: float = 2.0) -> tuple[float, ...]:
    return tuple(base * ratio**k for k in range(levels))


@dataclass(frozen=True)
class Material:
    yield_stress: float = 50.0
    density: float = 1.0
    elastic_modulus: float = 1000.0
    area_ladder: tuple[float, ...] = field(default_factory=geometric_ladder)

    @property
    def max_level(self) -> int:
        return len(self.area_ladder)

    def area(self, size_level: int) -> float:
        return self.area_ladder[size_level - 1]


@dataclass(frozen=True)
class ProblemConfig:
    supports: tuple[Support, ...] = (Support(-0.8, -0.8, "pin"), Support(0.8, -0.8, "pin"))
    loads: tuple[Load, ...] = (Load(0.0, -0.8, 0.0, -1.0),)
    material: Material = field(default_factory=Material)
    min_node_spacing: float = 0.05

    def __post_init__(self):
        if len(self.supports) < 2:
            raise ConfigError("problem needs at least two supports")
        if len(self.loads) < 1:
            raise ConfigError("problem needs at least one load")
        for p in [*self.supports, *self.loads]:
            if not (-1.0 <= p.x <= 1.0 and -1.0 <= p.y <= 1.0):
                raise ConfigError(f"point ({p.x}, {p.y}) outside the design space")
        ladder = self.material.area_ladder
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] <= 0:
            raise ConfigError("area_ladder must be positive and strictly ascending")
        if not sum(s.restrains()[0] for s in self.supports) or not sum(s.restrains()[1] for s in self.supports):
            raise ConfigError("supports must restrain both directions")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["supports"] = [asdict(s) for s in self.supports]
        d["loads"] = [asdict(ld) for ld in self.loads]
        d["material"]["area_ladder"] = list(self.material.area_ladder)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProblemConfig":
        d = dict(d)
        kwargs: dict[str, Any] = {}
        if "supports" in d:
            kwargs["supports"] = tuple(_support(s) for s in d["supports"])
        if "loads" in d:
            kwargs["loads"] = tuple(_load(ld) for ld in d["loads"])
        if "material" in d:
            m = dict(d["material"])
            if "area_ladder" in m:
                m["area_ladder"] = tuple(float(a) for a in m["area_ladder"])
            elif "area_base" in m:
                m["area_ladder"] = geometric_ladder(
                    float(m.pop("area_base")), int(m.pop("levels", 10)), float(m.pop("ratio", 2.0))
                )
            kwargs["material"] = Material(**_known(Material, m))
        if "min_node_spacing" in d:
            kwargs["min_node_spacing"] = float(d["min_node_spacing"])
        return cls(**kwargs)


def _support(s: Any) -> Support:
    if isinstance(s, Mapping):
        return Support(float(s["x"]), float(s["y"]), str(s.get("kind", "pin")))
    x, y, *rest = s
    return Support(float(x), float(y), str(rest[0]) if rest else "pin")


def _load(ld: Any) -> Load:
    if isinstance(ld, Mapping):
        return Load(float(ld["x"]), float(ld["y"]), float(ld.get("fx", 0.0)), float(ld.get("fy", 0.0)))
    x, y, fx, fy = ld
    return Load(float(x), float(y), float(fx), float(fy))


def _known(cls, d: Mapping[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(d)


@dataclass(frozen=True)
class SamplerConfig:
    S: int = 2
    A_max: int = 50
    n: int = 10
    sigma: float = 0.15
    rng_seed: int = 0
    max_rejections: int = 50

    def __post_init__(self):
        if not (0 <= self.n <= self.A_max):
            raise ConfigError("need 0 <= n <= A_max")
        if self.S < 1:
            raise ConfigError("S must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    max_epochs: int = 200
    patience: int = 20
    decay: tuple[tuple[str, Any], ...] = (("gamma", 0.5), ("kind", "step"), ("step_size", 50))
    batch_size: int = 32
    loss_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    selection_objective: str = "bce"  # or "categorical"
    val_fraction: float = 0.10

    def __post_init__(self):
        if self.lr0 < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("lr0 must be >= 0; max_epochs and batch_size >= 1")
        if not (0 < self.patience < self.max_epochs):
            raise ConfigError("need 0 < patience < max_epochs")
        if self.selection_objective not in ("bce", "categorical"):
            raise ConfigError("selection_objective must be 'bce' or 'categorical'")

    @property
    def decay_spec(self) -> dict[str, Any]:
        return dict(self.decay)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["decay"] = self.decay_spec
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        d = dict(_known(cls, d))
        if "decay" in d:
            d["decay"] = tuple(sorted(dict(d["decay"]).items()))
        if "loss_weights" in d:
            d["loss_weights"] = tuple(float(w) for w in d["loss_weights"])
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: int = 10
    split_seed: int = 0
    by_trajectory: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem": self.problem.to_dict(),
            "sampler": asdict(self.sampler),
            "train": self.train.to_dict(),
            "folds": self.folds,
            "split_seed": self.split_seed,
            "by_trajectory": self.by_trajectory,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        d = dict(d or {})
        return cls(
            problem=ProblemConfig.from_dict(d.get("problem", {})),
            sampler=SamplerConfig(**_known(SamplerConfig, d.get("sampler", {}))),
            train=TrainConfig.from_dict(d.get("train", {})),
            folds=int(d.get("folds", 10)),
            split_seed=int(d.get("split_seed", 0)),
            by_trajectory=bool(d.get("by_trajectory", False)),
        )


def resolve_config_path(path: str | os.PathLike) -> Path:
    """Relative paths that do not exist are looked up in ``$DSN_CONFIG_DIR``."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def read_mapping(path: str | os.PathLike) -> dict[str, Any]:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    data = yaml.safe_load(text)  # YAML is a superset of JSON
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def load_run_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(read_mapping(path))


def deck_problem(n_loads: int = 7, total_load: float = 1.0) -> ProblemConfig:
    """Default span with the load spread over ``n_loads`` evenly spaced deck points.

    More initial nodes mean more candidate members, so sampled action sets
    fill up to ``A_max`` from the first step.
    """
    xs = np.linspace(-0.8, 0.8, n_loads + 2)[1:-1]
    loads = tuple(Load(round(float(x), 12), -0.8, 0.0, -total_load / n_loads) for x in xs)
    return ProblemConfig(loads=loads)


BUILTIN_PROBLEMS = {"default": ProblemConfig, "deck": deck_problem}


def load_problem(path: str | os.PathLike) -> ProblemConfig:
    """Load a problem from a file, accepting either a bare problem mapping or a
    full run config with a ``problem`` section.  Names in ``BUILTIN_PROBLEMS``
    give the built-in problems."""
    if str(path) in BUILTIN_PROBLEMS:
        return BUILTIN_PROBLEMS[str(path)]()
    data = read_mapping(path)
    return ProblemConfig.from_dict(data.get("problem", data))


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
