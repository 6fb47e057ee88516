"""Declarative trajectory constraints and their direct indicator ``I_C``."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import ConfigurationError
from .mdp import Mdp, Trajectory, from_jsonable, to_jsonable


class EncodingKind(str, Enum):
    FLOW = "flow"
    TIME_INDEXED = "time_indexed"


def _as_state_set(items) -> frozenset:
    return frozenset(from_jsonable(to_jsonable(s)) for s in items)


@dataclass(frozen=True)
class ForbiddenStates:
    states: frozenset

    def __post_init__(self):
        object.__setattr__(self, "states", _as_state_set(self.states))

    def holds(self, visited: tuple, actions: tuple) -> bool:
        return not any(s in self.states for s in visited)

    def referenced(self):
        return self.states

    def to_json(self):
        return {"type": "forbidden_states", "cells": to_jsonable(sorted(self.states))}


@dataclass(frozen=True)
class MustPass:
    state: object

    def holds(self, visited, actions) -> bool:
        return self.state in visited

    def referenced(self):
        return {self.state}

    def to_json(self):
        return {"type": "must_pass", "cell": to_jsonable(self.state)}


@dataclass(frozen=True)
class ExactlyOneOf:
    states: frozenset

    def __post_init__(self):
        object.__setattr__(self, "states", _as_state_set(self.states))
        if not self.states:
            raise ConfigurationError("ExactlyOneOf needs at least one state")

    def holds(self, visited, actions) -> bool:
        return len(self.states.intersection(visited)) == 1

    def referenced(self):
        return self.states

    def to_json(self):
        return {"type": "exactly_one_of", "cells": to_jsonable(sorted(self.states))}


@dataclass(frozen=True)
class Precedence:
    """``first`` must be visited strictly before any visited member of ``others``."""

    first: object
    others: frozenset

    def __post_init__(self):
        others = _as_state_set(self.others) - {self.first}
        object.__setattr__(self, "others", frozenset(others))

    def holds(self, visited, actions) -> bool:
        t_other = next((t for t, s in enumerate(visited) if s in self.others), None)
        if t_other is None:
            return True
        t_first = next((t for t, s in enumerate(visited) if s == self.first), None)
        return t_first is not None and t_first < t_other

    def referenced(self):
        return {self.first} | set(self.others)

    def to_json(self):
        return {"type": "precedence", "first": to_jsonable(self.first),
                "others": to_jsonable(sorted(self.others))}


@dataclass(frozen=True)
class AtLeastFractionInRegion:
    """At least ``ceil(fraction * #visits)`` visits fall inside ``region``.

    Visits are counted per time step, start and terminal state included.
    """

    region: frozenset
    fraction: float

    def __post_init__(self):
        object.__setattr__(self, "region", _as_state_set(self.region))
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigurationError(f"fraction {self.fraction} outside (0, 1]")

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.fraction).limit_denominator(10**6)

    def threshold(self, n_visits: int) -> int:
        r = self.ratio
        return -((-r.numerator * n_visits) // r.denominator)

    def holds(self, visited, actions) -> bool:
        inside = sum(1 for s in visited if s in self.region)
        return inside >= self.threshold(len(visited))

    def referenced(self):
        return self.region

    def to_json(self):
        return {"type": "at_least_fraction_in_region", "region": to_jsonable(sorted(self.region)),
                "fraction": self.fraction}


@dataclass(frozen=True)
class MaxConsecutiveSameAction:
    limit: int

    def __post_init__(self):
        if int(self.limit) != self.limit or self.limit < 1:
            raise ConfigurationError(f"limit must be a positive integer, got {self.limit}")

    def holds(self, visited, actions) -> bool:
        run, prev = 0, object()
        for a in actions:
            run = run + 1 if a == prev else 1
            prev = a
            if run > self.limit:
                return False
        return True

    def referenced(self):
        return set()

    def to_json(self):
        return {"type": "max_consecutive_same_action", "limit": int(self.limit)}


Constraint = (ForbiddenStates | MustPass | ExactlyOneOf | Precedence
              | AtLeastFractionInRegion | MaxConsecutiveSameAction)


@dataclass(frozen=True)
class ConstraintSet:
    """Conjunction of constraint variants."""

    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def of_type(self, cls) -> list:
        return [c for c in self.items if isinstance(c, cls)]

    def forbidden(self) -> frozenset:
        out = set()
        for c in self.of_type(ForbiddenStates):
            out |= c.states
        return frozenset(out)

    def validate(self, mdp: Mdp) -> None:
        known = set(mdp.states)
        for c in self.items:
            missing = [s for s in c.referenced() if s not in known]
            if missing:
                raise ConfigurationError(f"{type(c).__name__} references unknown states {missing!r}")

    def to_json(self) -> list:
        return [c.to_json() for c in self.items]

    @classmethod
    def from_json(cls, obj) -> "ConstraintSet":
        if isinstance(obj, Mapping):
            obj = obj.get("constraints", obj.get("items", []))
        return cls(tuple(constraint_from_json(o) for o in obj))


def constraint_from_json(obj: Mapping):
    kind = str(obj.get("type", "")).lower()
    cells = obj.get("cells", obj.get("states"))
    try:
        if kind == "forbidden_states":
            return ForbiddenStates(cells)
        if kind == "must_pass":
            return MustPass(from_jsonable(obj.get("cell", obj.get("state"))))
        if kind == "exactly_one_of":
            return ExactlyOneOf(cells)
        if kind == "precedence":
            return Precedence(from_jsonable(obj["first"]), obj["others"])
        if kind == "at_least_fraction_in_region":
            return AtLeastFractionInRegion(obj.get("region", cells), float(obj["fraction"]))
        if kind == "max_consecutive_same_action":
            return MaxConsecutiveSameAction(int(obj["limit"]))
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed {kind} constraint: {obj!r}") from exc
    raise ConfigurationError(f"unknown constraint type {obj.get('type')!r}")


def load_constraints(path) -> ConstraintSet:
    with open(path) as fh:
        return ConstraintSet.from_json(json.load(fh))


def indicator(traj: Trajectory, cset: ConstraintSet | Iterable) -> int:
    """1 iff every constraint holds on the trajectory, else 0."""
    visited = traj.states
    actions = traj.actions
    return int(all(c.holds(visited, actions) for c in cset))


def required_encoding(cset: ConstraintSet) -> EncodingKind:
    """Constraints that depend on time order force the time-indexed encoding."""
    if any(isinstance(c, (Precedence, MaxConsecutiveSameAction)) for c in cset):
        return EncodingKind.TIME_INDEXED
    return EncodingKind.FLOW


def choose_encoding(mdp: Mdp, cset: ConstraintSet) -> EncodingKind:
    """:func:`required_encoding`, falling back to time-indexed when the flow
    encoding cannot represent the model (cycles, stochastic moves, discounting)."""
    kind = required_encoding(cset)
    if kind is EncodingKind.FLOW and (
        not mdp.is_acyclic or not mdp.is_deterministic or not math.isclose(mdp.discount, 1.0)
    ):
        return EncodingKind.TIME_INDEXED
    return kind
