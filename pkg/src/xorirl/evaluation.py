"""Post-training generation and the benchmark metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constraints import ConstraintSet, indicator
from .encoding import encode
from .errors import ConfigurationError, InputError
from .exact import upper_path
from .mdp import Trajectory, transition_prob
from .oracle import OracleStats
from .sampler import SamplerConfig, batch_sample

KL_EPS = 1e-6
KL_DIRECTIONS = ("demo_model", "model_demo")


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def importance_resample(pool: Sequence[Trajectory], weights, out_size: int,
                        rng: np.random.Generator) -> list:
    """Multinomial resampling of ``pool`` in proportion to ``weights``."""
    w = np.asarray(weights, dtype=float)
    if len(pool) == 0 or w.sum() <= 0:
        raise InputError("cannot resample from an empty or zero-weight pool")
    idx = rng.choice(len(pool), size=out_size, replace=True, p=w / w.sum())
    return [pool[int(i)] for i in idx]


def generate(theta_bar, env, cset: ConstraintSet, sampler_cfg: SamplerConfig, pool_size: int,
             out_size: int, rng, encoding=None, stats: OracleStats | None = None) -> list:
    """XOR-sample a pool from ``Q(. | theta_bar)``, then resample it with weights ``D(tau)``.

    ``env`` is ``(mdp, fmap)``. The sampler seed and the resampling stream are
    both derived from ``rng``.
    """
    if pool_size < out_size or out_size < 1:
        raise ConfigurationError("need pool_size >= out_size >= 1")
    mdp, fmap = env[0], env[1]
    gen = _rng(rng)
    enc, base = encode(mdp, cset) if encoding is None else encoding
    seed = int(gen.integers(0, 2**63 - 1))
    pool = batch_sample(pool_size, theta_bar, enc, base, sampler_cfg, seed, fmap, stats).trajectories
    weights = [transition_prob(t, mdp) for t in pool]
    return importance_resample(pool, weights, out_size, gen)


def valid_fraction(trajs: Sequence[Trajectory], cset: ConstraintSet) -> float:
    if len(trajs) == 0:
        raise InputError("valid_fraction of an empty trajectory set is undefined")
    return sum(indicator(t, cset) for t in trajs) / len(trajs)


@dataclass(frozen=True)
class OccupancyMap:
    """Fraction of trajectories that visit each state at least once."""

    states: tuple
    marginal: np.ndarray

    def __getitem__(self, s) -> float:
        return float(self.marginal[self.states.index(s)])

    def as_dict(self) -> dict:
        return {s: float(v) for s, v in zip(self.states, self.marginal)}

    def grid_rows(self) -> list:
        """``(x, y, marginal)`` rows for grid states, sorted by ``(x, y)``."""
        rows = [(s[0], s[1], float(v)) for s, v in zip(self.states, self.marginal)
                if isinstance(s, tuple) and len(s) == 2]
        return sorted(rows)


def occupancy(trajs: Sequence[Trajectory], states: Sequence | None = None) -> OccupancyMap:
    if len(trajs) == 0:
        raise InputError("occupancy of an empty trajectory set is undefined")
    if states is None:
        seen = {}
        for t in trajs:
            for s in t.states:
                seen.setdefault(s, None)
        try:
            states = sorted(seen)
        except TypeError:
            states = sorted(seen, key=repr)
    states = tuple(states)
    pos = {s: i for i, s in enumerate(states)}
    counts = np.zeros(len(states))
    for t in trajs:
        for s in set(t.states):
            if s in pos:
                counts[pos[s]] += 1
    return OccupancyMap(states, counts / len(trajs))


def class_distribution(trajs: Sequence[Trajectory],
                       classifier: Callable[[Trajectory], bool] = upper_path) -> np.ndarray:
    """``(P(upper), P(lower))`` over a trajectory set."""
    if len(trajs) == 0:
        raise InputError("class distribution of an empty set")
    up = sum(1 for t in trajs if classifier(t)) / len(trajs)
    return np.array([up, 1.0 - up])


def path_kl(trajs_model: Sequence[Trajectory], trajs_demo: Sequence[Trajectory],
            classifier: Callable[[Trajectory], bool] = upper_path, eps: float = KL_EPS,
            direction: str = "demo_model") -> float:
    """KL divergence between path-class distributions, ``KL(demo || model)`` by default.

    Both distributions get additive smoothing ``eps`` so empty classes stay finite.
    """
    if direction not in KL_DIRECTIONS:
        raise ConfigurationError(f"direction must be one of {KL_DIRECTIONS}")
    q = class_distribution(trajs_model, classifier)
    p = class_distribution(trajs_demo, classifier)
    p = (p + eps) / (1.0 + 2 * eps)
    q = (q + eps) / (1.0 + 2 * eps)
    if direction == "model_demo":
        p, q = q, p
    return float(max(0.0, sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))))
