"""Finite MDPs, gridworld builders, trajectories and path features.

Trajectory weights follow the energy convention used across the package::

    P(tau | theta) ∝ exp(-theta . f(tau)) * D(tau) * I_C(tau)

where ``f(tau) = sum_{t=1..L} discount**t * f(s_t, a_t)`` and ``D`` is the
product of the initial-state probability and the transition probabilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError

State = Hashable
Action = Hashable

GRID_MOVES = {"up": (0, 1), "right": (1, 0), "diag": (1, 1)}
_ACTION_ALIASES = {
    "up": "up",
    "right": "right",
    "diag": "diag",
    "diagupright": "diag",
    "diag_up_right": "diag",
    "diagonal": "diag",
}
_FEATURE_ALIASES = {
    "distance": "distance",
    "distance-per-step": "distance",
    "cell": "cell",
    "cells": "cell",
    "per-cell-indicator": "cell",
    "indicator": "cell",
    "both": "both",
}
_TOL = 1e-9


def to_jsonable(x):
    """Tuples become lists, recursively; everything else passes through."""
    if isinstance(x, (tuple, list)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x


def from_jsonable(x):
    """Inverse of :func:`to_jsonable`: lists become (hashable) tuples."""
    if isinstance(x, list):
        return tuple(from_jsonable(v) for v in x)
    return x


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP with an optional absorbing goal.

    ``transition`` maps ``(s, a)`` to ``{s_next: prob}``; a pair that is absent
    means the action is unavailable in ``s``. The goal has no outgoing actions:
    reaching it ends the trajectory.
    """

    states: tuple
    actions: tuple
    transition: Mapping
    initial_dist: Mapping
    discount: float = 1.0
    goal: State | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.states:
            raise ConfigurationError("MDP has no states")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigurationError(f"discount {self.discount} outside [0, 1]")
        known = set(self.states)
        if len(known) != len(self.states):
            raise ConfigurationError("duplicate state identifiers")
        acts = set(self.actions)
        for (s, a), row in self.transition.items():
            if s not in known or a not in acts:
                raise ConfigurationError(f"transition for unknown pair {(s, a)!r}")
            if self.goal is not None and s == self.goal:
                raise ConfigurationError("goal state must be absorbing (no actions)")
            if any(p < 0 for p in row.values()):
                raise ConfigurationError(f"negative probability in row {(s, a)!r}")
            if abs(sum(row.values()) - 1.0) > _TOL:
                raise ConfigurationError(f"transition row {(s, a)!r} does not sum to 1")
            for s2 in row:
                if s2 not in known:
                    raise ConfigurationError(f"transition to unknown state {s2!r}")
        if abs(sum(self.initial_dist.values()) - 1.0) > _TOL:
            raise ConfigurationError("initial distribution does not sum to 1")
        for s in self.initial_dist:
            if s not in known:
                raise ConfigurationError(f"initial distribution on unknown state {s!r}")
        if self.goal is not None and self.goal not in known:
            raise ConfigurationError(f"goal {self.goal!r} is not a state")

    @cached_property
    def state_index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def action_index(self) -> dict:
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def tensor(self) -> np.ndarray:
        """Dense transition tensor ``P[s, a, s']``; unavailable rows are zero."""
        P = np.zeros((len(self.states), len(self.actions), len(self.states)))
        si, ai = self.state_index, self.action_index
        for (s, a), row in self.transition.items():
            for s2, p in row.items():
                P[si[s], ai[a], si[s2]] = p
        return P

    @cached_property
    def available(self) -> np.ndarray:
        mask = np.zeros((len(self.states), len(self.actions)), dtype=bool)
        for s, a in self.transition:
            mask[self.state_index[s], self.action_index[a]] = True
        return mask

    @cached_property
    def d0(self) -> np.ndarray:
        v = np.zeros(len(self.states))
        for s, p in self.initial_dist.items():
            v[self.state_index[s]] = p
        return v

    @property
    def goal_index(self) -> int | None:
        return None if self.goal is None else self.state_index[self.goal]

    @cached_property
    def is_deterministic(self) -> bool:
        if any(len([p for p in row.values() if p > 0]) != 1
               for row in self.transition.values()):
            return False
        return int(np.count_nonzero(self.d0)) == 1

    def available_actions(self, s) -> list:
        return [a for a in self.actions if (s, a) in self.transition]

    def successors(self, s, a) -> dict:
        return {s2: p for s2, p in self.transition.get((s, a), {}).items() if p > 0}

    @cached_property
    def is_acyclic(self) -> bool:
        """True iff the positive-probability transition graph has no cycle."""
        n = len(self.states)
        adj = [set() for _ in range(n)]
        for (s, a), row in self.transition.items():
            for s2, p in row.items():
                if p > 0:
                    adj[self.state_index[s]].add(self.state_index[s2])
        color = [0] * n
        for root in range(n):
            if color[root]:
                continue
            stack = [(root, iter(adj[root]))]
            color[root] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    color[node] = 2
                    stack.pop()
                elif color[nxt] == 1:
                    return False
                elif color[nxt] == 0:
                    color[nxt] = 1
                    stack.append((nxt, iter(adj[nxt])))
        return True


@dataclass(frozen=True)
class Trajectory:
    """Alternating state-action sequence ending in ``terminal_state``."""

    steps: tuple
    terminal_state: State

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((s, a) for s, a in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> tuple:
        return tuple(s for s, _ in self.steps) + (self.terminal_state,)

    @property
    def actions(self) -> tuple:
        return tuple(a for _, a in self.steps)

    @classmethod
    def from_states_actions(cls, states: Sequence, actions: Sequence) -> "Trajectory":
        if len(states) != len(actions) + 1:
            raise ConfigurationError("need exactly one more state than actions")
        return cls(tuple(zip(states[:-1], actions)), states[-1])

    def to_json(self) -> dict:
        return {"states": to_jsonable(list(self.states)), "actions": to_jsonable(list(self.actions))}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Trajectory":
        states = [from_jsonable(s) for s in obj["states"]]
        actions = [from_jsonable(a) for a in obj["actions"]]
        return cls.from_states_actions(states, actions)

    def is_structurally_valid(self, mdp: Mdp) -> bool:
        """Every step is an available action with positive transition probability."""
        seq = self.states
        for t, (s, a) in enumerate(self.steps):
            if mdp.successors(s, a).get(seq[t + 1], 0.0) <= 0.0:
                return False
        return True


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per state-action feature vectors ``f(s, a)`` of a common dimension."""

    dim: int
    per_pair: Mapping = field(default_factory=dict)
    names: tuple = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("feature dimension must be positive")
        fixed = {}
        for key, vec in self.per_pair.items():
            v = np.asarray(vec, dtype=float).reshape(-1)
            if v.shape[0] != self.dim:
                raise ConfigurationError(f"feature for {key!r} has length {v.shape[0]}, expected {self.dim}")
            fixed[key] = v
        object.__setattr__(self, "per_pair", fixed)

    def vector(self, s, a) -> np.ndarray:
        try:
            return self.per_pair[(s, a)]
        except KeyError:
            raise ConfigurationError(f"no feature entry for pair {(s, a)!r}") from None

    def table(self, mdp: Mdp) -> np.ndarray:
        """Array ``F[s, a, :]`` over the MDP's available pairs (zero elsewhere)."""
        F = np.zeros((len(mdp.states), len(mdp.actions), self.dim))
        for (s, a) in mdp.transition:
            F[mdp.state_index[s], mdp.action_index[a]] = self.vector(s, a)
        return F


def path_feature(traj: Trajectory, fmap: FeatureMap, discount: float) -> np.ndarray:
    """Discounted feature sum; the first step carries ``discount**1``."""
    out = np.zeros(fmap.dim)
    w = 1.0
    for s, a in traj.steps:
        w *= discount
        out += w * fmap.vector(s, a)
    return out


def transition_prob(traj: Trajectory, mdp: Mdp) -> float:
    """``d0(s_1) * prod_t T(s_{t+1} | s_t, a_t)``; zero for impossible steps."""
    seq = traj.states
    p = float(mdp.initial_dist.get(seq[0], 0.0))
    for t, (s, a) in enumerate(traj.steps):
        if p == 0.0:
            break
        p *= mdp.transition.get((s, a), {}).get(seq[t + 1], 0.0)
    return p


def trajectory_energy(traj: Trajectory, theta, fmap: FeatureMap, discount: float) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != fmap.dim:
        raise ConfigurationError(f"theta has length {theta.shape[0]}, features have {fmap.dim}")
    return float(theta @ path_feature(traj, fmap, discount))


def trajectory_weight(traj: Trajectory, theta, fmap: FeatureMap, discount: float) -> float:
    return math.exp(-trajectory_energy(traj, theta, fmap, discount))


@dataclass(frozen=True)
class GridWorldSpec:
    width: int
    height: int
    action_set: tuple = ("up", "right", "diag")
    start: tuple = (0, 0)
    goal: tuple | None = None
    feature_kind: str = "distance"
    diag_cost: float = math.sqrt(2.0)
    discount: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"degenerate grid {self.width}x{self.height}")
        acts = []
        for a in self.action_set:
            key = _ACTION_ALIASES.get(str(a).lower())
            if key is None:
                raise ConfigurationError(f"unknown grid action {a!r}")
            if key not in acts:
                acts.append(key)
        if not acts:
            raise ConfigurationError("action_set is empty")
        object.__setattr__(self, "action_set", tuple(acts))
        kind = _FEATURE_ALIASES.get(str(self.feature_kind).lower())
        if kind is None:
            raise ConfigurationError(f"unknown feature kind {self.feature_kind!r}")
        object.__setattr__(self, "feature_kind", kind)
        goal = self.goal if self.goal is not None else (self.width - 1, self.height - 1)
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(int(v) for v in goal))
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not (0 <= cell[0] < self.width and 0 <= cell[1] < self.height):
                raise ConfigurationError(f"{name} cell {cell} outside the grid")

    @classmethod
    def from_json(cls, obj: Mapping) -> "GridWorldSpec":
        return cls(
            width=int(obj["width"]),
            height=int(obj["height"]),
            action_set=tuple(obj.get("actions", ("up", "right", "diag"))),
            start=tuple(obj.get("start", (0, 0))),
            goal=tuple(obj["goal"]) if obj.get("goal") is not None else None,
            feature_kind=obj.get("features", "distance"),
            diag_cost=float(obj.get("diag_cost", math.sqrt(2.0))),
            discount=float(obj.get("discount", 1.0)),
        )

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "actions": list(self.action_set),
            "start": list(self.start),
            "goal": list(self.goal),
            "features": self.feature_kind,
            "diag_cost": self.diag_cost,
            "discount": self.discount,
        }


def build_gridworld(spec: GridWorldSpec) -> tuple[Mdp, FeatureMap]:
    """Deterministic grid MDP plus its feature map.

    Cells are ``(x, y)``; ``up`` increments ``y``. Actions that would leave the
    grid are unavailable, and the goal is absorbing. Distance features charge 1
    per axis move and ``diag_cost`` per diagonal move; cell features are
    indicators of the cell entered.
    """
    cells = [(x, y) for y in range(spec.height) for x in range(spec.width)]
    transition = {}
    for (x, y) in cells:
        if (x, y) == spec.goal:
            continue
        for a in spec.action_set:
            dx, dy = GRID_MOVES[a]
            nx, ny = x + dx, y + dy
            if nx < spec.width and ny < spec.height:
                transition[((x, y), a)] = {(nx, ny): 1.0}
    mdp = Mdp(
        states=tuple(cells),
        actions=spec.action_set,
        transition=transition,
        initial_dist={spec.start: 1.0},
        discount=spec.discount,
        goal=spec.goal,
    )
    n_cells = len(cells)
    cell_pos = {c: i for i, c in enumerate(cells)}
    use_dist = spec.feature_kind in ("distance", "both")
    use_cell = spec.feature_kind in ("cell", "both")
    dim = int(use_dist) + (n_cells if use_cell else 0)
    names = (("distance",) if use_dist else ()) + (
        tuple(f"cell_{x}_{y}" for (x, y) in cells) if use_cell else ())
    per_pair = {}
    for (s, a), row in transition.items():
        v = np.zeros(dim)
        if use_dist:
            v[0] = spec.diag_cost if a == "diag" else 1.0
        if use_cell:
            (s2,) = row.keys()
            v[int(use_dist) + cell_pos[s2]] = 1.0
        per_pair[(s, a)] = v
    return mdp, FeatureMap(dim=dim, per_pair=per_pair, names=names)


def load_gridworld_spec(path) -> GridWorldSpec:
    with open(path) as fh:
        return GridWorldSpec.from_json(json.load(fh))


def write_trajectories(path, trajs: Iterable[Trajectory]) -> None:
    with open(path, "w") as fh:
        for tr in trajs:
            fh.write(json.dumps(tr.to_json(), separators=(",", ":")) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Trajectory.from_json(json.loads(line)))
    return out


def goal_distances(mdp: Mdp) -> np.ndarray:
    """Fewest steps from each state to the goal (``inf`` when unreachable)."""
    if mdp.goal is None:
        raise ConfigurationError("MDP has no goal state")
    n = len(mdp.states)
    preds = [[] for _ in range(n)]
    for (s, a), row in mdp.transition.items():
        for s2, p in row.items():
            if p > 0:
                preds[mdp.state_index[s2]].append(mdp.state_index[s])
    dist = np.full(n, np.inf)
    g = mdp.goal_index
    dist[g] = 0
    frontier = [g]
    while frontier:
        nxt = []
        for v in frontier:
            for u in preds[v]:
                if dist[u] == np.inf:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    return dist


def default_horizon(mdp: Mdp) -> int:
    """Longest start-to-goal path length on an acyclic MDP.

    On monotone grids this is ``(width - 1) + (height - 1)``. Cyclic models
    have no natural bound, so the horizon must then be given explicitly.
    """
    if not mdp.is_acyclic:
        raise ConfigurationError("cyclic MDP: an explicit horizon is required")
    dist = goal_distances(mdp)
    n = len(mdp.states)
    succ = [[] for _ in range(n)]
    for (s, a), row in mdp.transition.items():
        for s2, p in row.items():
            if p > 0 and np.isfinite(dist[mdp.state_index[s2]]):
                succ[mdp.state_index[s]].append(mdp.state_index[s2])
    longest = {}

    def visit(v):
        # iterative post-order to avoid deep recursion on long chains
        stack = [(v, 0)]
        while stack:
            node, k = stack.pop()
            if node in longest:
                continue
            kids = [w for w in succ[node] if w not in longest]
            if kids and k == 0:
                stack.append((node, 1))
                stack.extend((w, 0) for w in kids)
                continue
            best = 0 if node == mdp.goal_index else -np.inf
            for w in succ[node]:
                best = max(best, longest[w] + 1)
            longest[node] = best

    out = -np.inf
    for s, p in mdp.initial_dist.items():
        if p > 0:
            i = mdp.state_index[s]
            visit(i)
            out = max(out, longest[i])
    if not np.isfinite(out):
        raise ConfigurationError("goal unreachable from every start state")
    return int(out)
