"""Exhaustive ground truth on desk-sized instances.

Everything here is brute force on purpose: it is the reference the sampler,
the learner and the dynamic-programming baselines are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .constraints import ConstraintSet, ForbiddenStates
from .errors import ConfigurationError, EnumerationOverflow, InfeasibleError
from .mdp import FeatureMap, Mdp, Trajectory, default_horizon, goal_distances

DEFAULT_CAP = 2_000_000


@dataclass(frozen=True, eq=False)
class EnumeratedSpace:
    """All feasible constrained trajectories plus their features and weights.

    Trajectories are stored compactly as state/action index arrays;
    ``trajectory(i)`` materializes one. ``weights`` are
    ``exp(-theta . f(tau)) * D(tau)``.
    """

    mdp: Mdp
    fmap: FeatureMap
    discount: float
    state_paths: tuple
    action_paths: tuple
    features: np.ndarray
    log_d: np.ndarray
    theta: np.ndarray = field(default=None)

    def __post_init__(self):
        theta = np.zeros(self.fmap.dim) if self.theta is None else np.asarray(self.theta, float)
        object.__setattr__(self, "theta", theta)

    def __len__(self):
        return len(self.state_paths)

    def with_theta(self, theta) -> "EnumeratedSpace":
        return EnumeratedSpace(self.mdp, self.fmap, self.discount, self.state_paths,
                               self.action_paths, self.features, self.log_d, np.asarray(theta, float))

    def trajectory(self, i: int) -> Trajectory:
        S, A = self.mdp.states, self.mdp.actions
        sp, ap = self.state_paths[i], self.action_paths[i]
        return Trajectory(tuple((S[s], A[a]) for s, a in zip(sp[:-1], ap)), S[sp[-1]])

    @cached_property
    def trajectories(self) -> list:
        return [self.trajectory(i) for i in range(len(self))]

    @cached_property
    def log_weights(self) -> np.ndarray:
        return -(self.features @ self.theta) + self.log_d

    @cached_property
    def log_partition(self) -> float:
        if len(self) == 0:
            return -np.inf
        lw = self.log_weights
        m = lw.max()
        return float(m + np.log(np.exp(lw - m).sum()))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def partition(self) -> float:
        return float(np.exp(self.log_partition))

    @cached_property
    def probs(self) -> np.ndarray:
        if len(self) == 0:
            raise InfeasibleError("no feasible trajectory")
        return np.exp(self.log_weights - self.log_partition)

    def expected_features(self) -> np.ndarray:
        return self.probs @ self.features

    def feature_covariance(self) -> np.ndarray:
        mu = self.expected_features()
        centered = self.features - mu
        return (centered * self.probs[:, None]).T @ centered

    def index_of(self, traj: Trajectory) -> int:
        """Position of ``traj`` in the enumeration (``-1`` if absent)."""
        return self._lookup.get(self._key(traj), -1)

    def _key(self, traj: Trajectory):
        si, ai = self.mdp.state_index, self.mdp.action_index
        return (tuple(si[s] for s in traj.states), tuple(ai[a] for a in traj.actions))

    @cached_property
    def _lookup(self) -> dict:
        return {(tuple(s), tuple(a)): i
                for i, (s, a) in enumerate(zip(self.state_paths, self.action_paths))}


def _discount_powers(discount: float, horizon: int) -> np.ndarray:
    return discount ** np.arange(1, horizon + 1, dtype=float)


def enumerate_space(mdp: Mdp, cset: ConstraintSet, fmap: FeatureMap, horizon: int | None = None,
                    cap: int = DEFAULT_CAP, theta=None) -> EnumeratedSpace:
    """Depth-first enumeration of every start-to-goal trajectory with ``I_C = 1``.

    Forbidden states and states that cannot reach the goal in the remaining
    steps are pruned eagerly; all other constraints are checked at the leaves.
    Raises :class:`EnumerationOverflow` once more than ``cap`` trajectories
    have been accepted.
    """
    if mdp.goal is None:
        raise ConfigurationError("enumeration requires a goal state")
    cset.validate(mdp)
    if horizon is None:
        horizon = default_horizon(mdp)
    discount = mdp.discount
    S, A = mdp.states, mdp.actions
    dist = goal_distances(mdp)
    banned = {mdp.state_index[s] for s in cset.forbidden()}
    goal = mdp.goal_index
    succ = {}
    for (s, a), row in mdp.transition.items():
        succ.setdefault(mdp.state_index[s], []).append(
            (mdp.action_index[a],
             [(mdp.state_index[s2], float(p)) for s2, p in row.items() if p > 0]))
    ftab = fmap.table(mdp)
    powers = _discount_powers(discount, max(horizon, 1))
    others = [c for c in cset if not isinstance(c, ForbiddenStates)]

    state_paths, action_paths, feats, logd = [], [], [], []

    def emit(spath, apath, lp):
        if others:
            visited = tuple(S[i] for i in spath)
            acts = tuple(A[i] for i in apath)
            if not all(c.holds(visited, acts) for c in others):
                return
        if len(state_paths) >= cap:
            raise EnumerationOverflow(f"more than {cap} feasible trajectories")
        state_paths.append(np.array(spath, dtype=np.int32))
        action_paths.append(np.array(apath, dtype=np.int32))
        if apath:
            f = powers[: len(apath)] @ ftab[spath[:-1], apath]
        else:
            f = np.zeros(fmap.dim)
        feats.append(f)
        logd.append(lp)

    for s0, p0 in mdp.initial_dist.items():
        if p0 <= 0:
            continue
        i0 = mdp.state_index[s0]
        if i0 in banned or dist[i0] > horizon:
            continue
        # explicit stack of (state path, action path, log prob)
        stack = [([i0], [], float(np.log(p0)))]
        while stack:
            spath, apath, lp = stack.pop()
            s = spath[-1]
            if s == goal:
                emit(spath, apath, lp)
                continue
            remaining = horizon - len(apath) - 1
            for a, outs in reversed(succ.get(s, [])):
                for s2, p in reversed(outs):
                    if s2 in banned or dist[s2] > remaining:
                        continue
                    stack.append((spath + [s2], apath + [a], lp + float(np.log(p))))

    d = fmap.dim
    return EnumeratedSpace(
        mdp=mdp, fmap=fmap, discount=discount,
        state_paths=tuple(state_paths), action_paths=tuple(action_paths),
        features=np.array(feats, dtype=float).reshape(-1, d),
        log_d=np.array(logd, dtype=float),
        theta=theta,
    )


def exact_sample(space: EnumeratedSpace, rng: np.random.Generator, n: int) -> list:
    """i.i.d. draws proportional to the space's weights (cumulative-sum inversion)."""
    idx = exact_sample_indices(space, rng, n)
    return [space.trajectory(int(i)) for i in idx]


def exact_sample_indices(space: EnumeratedSpace, rng: np.random.Generator, n: int) -> np.ndarray:
    if len(space) == 0:
        raise InfeasibleError("cannot sample from an empty trajectory space")
    cdf = np.cumsum(space.probs)
    u = rng.random(n) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(space) - 1)


def upper_path(traj: Trajectory) -> bool:
    """Strictly more than half of the visited cells lie above the diagonal (y > x)."""
    cells = traj.states
    above = sum(1 for (x, y) in cells if y > x)
    return 2 * above > len(cells)


def gen_demos(space_truth: EnumeratedSpace, classifier: Callable[[Trajectory], bool] = upper_path,
              mix: Sequence[float] = (0.7, 0.3), n: int = 100,
              rng: np.random.Generator | None = None) -> list:
    """Demonstrations from a two-class mixture over the feasible trajectories.

    With probability ``mix[0]`` a demo is drawn weight-proportionally from the
    trajectories the classifier accepts, otherwise from the rest.
    """
    rng = np.random.default_rng() if rng is None else rng
    if abs(sum(mix) - 1.0) > 1e-9 or min(mix) < 0:
        raise ConfigurationError(f"mixture {mix!r} is not a distribution")
    labels = np.array([bool(classifier(space_truth.trajectory(i))) for i in range(len(space_truth))],
                      dtype=bool)
    classes = [np.flatnonzero(labels), np.flatnonzero(~labels)]
    if any(len(c) == 0 for c in classes):
        raise ConfigurationError("one demonstration class is empty under the classifier")
    if n == 0:
        return []
    lw = space_truth.log_weights
    cdfs = []
    for c in classes:
        w = np.exp(lw[c] - lw[c].max())
        cdfs.append(np.cumsum(w / w.sum()))
    pick_upper = rng.random(n) < mix[0]
    u = rng.random(n)
    out = []
    for k in range(n):
        c = 0 if pick_upper[k] else 1
        j = min(int(np.searchsorted(cdfs[c], u[k], side="right")), len(classes[c]) - 1)
        out.append(space_truth.trajectory(int(classes[c][j])))
    return out
