"""Named benchmark environments and the experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .constraints import (ConstraintSet, ExactlyOneOf, ForbiddenStates, MaxConsecutiveSameAction,
                          MustPass, Precedence)
from .errors import ConfigurationError
from .learner import TrainConfig
from .mdp import FeatureMap, GridWorldSpec, Mdp, build_gridworld
from .sampler import SamplerConfig

PRESETS = ("grid9x9_symbols", "human_obstacle")


@dataclass(frozen=True, eq=False)
class Environment:
    """A built grid world; unpacks as ``(mdp, fmap)``."""

    mdp: Mdp
    fmap: FeatureMap
    spec: GridWorldSpec | None = None

    def __iter__(self):
        return iter((self.mdp, self.fmap))

    def __getitem__(self, i):
        return (self.mdp, self.fmap)[i]

    @classmethod
    def from_spec(cls, spec: GridWorldSpec) -> "Environment":
        mdp, fmap = build_gridworld(spec)
        return cls(mdp, fmap, spec)


# 9x9 symbol benchmark: triangle first, crosses forbidden, one square and one circle
TRIANGLE = (1, 1)
CROSSES = ((4, 6), (5, 5), (6, 3), (7, 7))
SQUARES = ((2, 6), (6, 2))
CIRCLES = ((4, 7), (7, 4))

# obstacle preset: three 2x2 blocks and a choke point on a 10x10 floor
OBSTACLES = ((3, 1), (4, 1), (3, 2), (4, 2), (6, 6), (7, 6), (6, 7), (7, 7),
             (1, 5), (2, 5), (1, 6), (2, 6))
CHOKE_POINT = (5, 4)


def grid9x9_spec() -> GridWorldSpec:
    return GridWorldSpec(9, 9, ("up", "right", "diag"), (0, 0), (8, 8), "distance")


def grid9x9_constraints() -> ConstraintSet:
    return ConstraintSet((
        Precedence(TRIANGLE, SQUARES + CIRCLES),
        ForbiddenStates(CROSSES),
        ExactlyOneOf(SQUARES),
        ExactlyOneOf(CIRCLES),
    ))


def human_obstacle_spec() -> GridWorldSpec:
    return GridWorldSpec(10, 10, ("up", "right"), (0, 0), (9, 9), "cell")


def human_obstacle_constraints() -> ConstraintSet:
    return ConstraintSet((
        ForbiddenStates(OBSTACLES),
        MustPass(CHOKE_POINT),
        MaxConsecutiveSameAction(3),
    ))


@dataclass(frozen=True)
class DemoConfig:
    """Synthetic demonstrator.

    ``kind="mixture"`` draws from the upper/lower path classes with weights
    ``mix`` under ``exp(-truth_theta . f)``; ``kind="shortest"`` draws
    uniformly among the feasible trajectories of minimum distance.
    """

    kind: str = "mixture"
    n: int = 1000
    mix: tuple = (0.7, 0.3)
    truth_theta: tuple | None = (0.5,)

    def __post_init__(self):
        if self.kind not in ("mixture", "shortest"):
            raise ConfigurationError(f"unknown demo kind {self.kind!r}")
        if self.n < 1:
            raise ConfigurationError("demo count must be positive")
        object.__setattr__(self, "mix", tuple(float(v) for v in self.mix))
        if self.truth_theta is not None:
            object.__setattr__(self, "truth_theta", tuple(float(v) for v in self.truth_theta))


@dataclass(frozen=True)
class EvalConfig:
    pool_size: int = 1000
    out_size: int = 1000

    def __post_init__(self):
        if self.out_size < 1 or self.pool_size < self.out_size:
            raise ConfigurationError("need pool_size >= out_size >= 1")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything a seeded end-to-end run needs.

    ``reference_budget`` records the published training budget next to the
    preset's own, for the run's stats file.
    """

    name: str
    spec: GridWorldSpec
    constraints: ConstraintSet
    train: TrainConfig
    demos: DemoConfig
    eval: EvalConfig
    seed: int
    method: str = "xmen"
    output_dir: str | None = None
    reference_budget: dict = field(default_factory=dict)

    def environment(self) -> Environment:
        return Environment.from_spec(self.spec)

    def to_json(self) -> dict:
        tr = asdict(self.train)
        tr["sampler"] = asdict(self.train.sampler)
        return {
            "name": self.name, "env": self.spec.to_json(),
            "constraints": self.constraints.to_json(), "train": tr,
            "demos": asdict(self.demos), "eval": asdict(self.eval),
            "seed": self.seed, "method": self.method, "output_dir": self.output_dir,
            "reference_budget": self.reference_budget,
        }


def _train_defaults(name: str) -> TrainConfig:
    if name == "grid9x9_symbols":
        return TrainConfig(iterations=40, learning_rate=0.05, demo_batch=32, model_batch=8,
                           sampler=SamplerConfig(delta=1.3, failure_prob=0.05))
    return TrainConfig(iterations=30, learning_rate=0.03, demo_batch=10, model_batch=8,
                       sampler=SamplerConfig(delta=1.3, failure_prob=0.05))


def preset(name: str, seed: int = 0, method: str = "xmen") -> ExperimentConfig:
    """Fully specified configuration of a named benchmark."""
    if name == "grid9x9_symbols":
        return ExperimentConfig(
            name=name, spec=grid9x9_spec(), constraints=grid9x9_constraints(),
            train=replace(_train_defaults(name), seed=seed),
            demos=DemoConfig("mixture", 1000, (0.7, 0.3), (0.5,)),
            eval=EvalConfig(1000, 1000), seed=seed, method=method,
            reference_budget={"reference": "not stated", "preset_iterations": 40, "preset_model_batch": 8})
    if name == "human_obstacle":
        return ExperimentConfig(
            name=name, spec=human_obstacle_spec(), constraints=human_obstacle_constraints(),
            train=replace(_train_defaults(name), seed=seed),
            demos=DemoConfig("shortest", 10, (0.7, 0.3), None),
            eval=EvalConfig(1000, 1000), seed=seed, method=method,
            reference_budget={"reference_wall_hours": 4, "reference_model_batch": 16,
                          "preset_iterations": 30, "preset_model_batch": 8})
    raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESETS}")


def _merge(base, overrides: dict, label: str):
    known = {f.name for f in fields(base)}
    bad = set(overrides) - known
    if bad:
        raise ConfigurationError(f"unknown {label} fields {sorted(bad)}")
    return replace(base, **overrides)


def config_from_json(obj: dict) -> ExperimentConfig:
    """Build a config from a preset name plus overrides, or from explicit parts.

    ``seed`` is mandatory.
    """
    if "seed" not in obj:
        raise ConfigurationError("config must set a seed")
    seed = int(obj["seed"])
    method = obj.get("method", "xmen")
    if "preset" in obj:
        cfg = preset(obj["preset"], seed, method)
    else:
        if "env" not in obj or "constraints" not in obj:
            raise ConfigurationError("config needs a preset or both env and constraints")
        cfg = ExperimentConfig(
            name=obj.get("name", "custom"), spec=GridWorldSpec.from_json(obj["env"]),
            constraints=ConstraintSet.from_json(obj["constraints"]),
            train=TrainConfig(seed=seed), demos=DemoConfig(), eval=EvalConfig(), seed=seed,
            method=method)
    train = dict(obj.get("train", {}))
    sampler = train.pop("sampler", None)
    if sampler is not None:
        train["sampler"] = _merge(cfg.train.sampler, dict(sampler), "sampler")
    if "variance_bounds" in train and train["variance_bounds"] is not None:
        train["variance_bounds"] = tuple(train["variance_bounds"])
    train.setdefault("seed", seed)
    cfg = replace(cfg, train=_merge(cfg.train, train, "train"))
    if "demos" in obj:
        d = dict(obj["demos"])
        for key in ("mix", "truth_theta"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        cfg = replace(cfg, demos=_merge(cfg.demos, d, "demos"))
    if "eval" in obj:
        cfg = replace(cfg, eval=_merge(cfg.eval, dict(obj["eval"]), "eval"))
    if "output_dir" in obj:
        cfg = replace(cfg, output_dir=obj["output_dir"])
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_json(json.load(fh))


def make_demos(cfg: ExperimentConfig, env: Environment, rng: np.random.Generator, space=None) -> list:
    """Synthetic demonstrations for ``cfg`` (see :class:`DemoConfig`)."""
    from .exact import enumerate_space, gen_demos

    d = cfg.demos
    if space is None:
        space = enumerate_space(env.mdp, cfg.constraints, env.fmap)
    if d.kind == "mixture":
        theta = np.zeros(env.fmap.dim) if d.truth_theta is None else np.asarray(d.truth_theta)
        if theta.shape != (env.fmap.dim,):
            raise ConfigurationError(f"truth_theta must have length {env.fmap.dim}")
        return gen_demos(space.with_theta(theta), mix=d.mix, n=d.n, rng=rng)
    diag = env.spec.diag_cost if env.spec is not None else 2 ** 0.5
    acts = env.mdp.actions
    dist = np.array([sum(diag if acts[a] == "diag" else 1.0 for a in ap)
                     for ap in space.action_paths])
    best = np.flatnonzero(np.isclose(dist, dist.min()))
    pick = rng.choice(best, size=d.n, replace=True)
    return [space.trajectory(int(i)) for i in pick]
