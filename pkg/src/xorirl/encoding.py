"""Compile an MDP plus a constraint set into a pseudo-boolean/parity system.

Two encodings are provided.

* Flow: one binary per ``(s, a)`` with unit source/sink and conservation.
  Only valid on deterministic, acyclic, undiscounted models with a single
  start state; every satisfying assignment is then a simple path.
* Time-indexed: one binary per ``(s, a, t)`` plus ``done_t`` flags. Layer
  ``t`` holds exactly one active pair or is already past the goal. Variables
  that cannot lie on a start-to-goal path within the horizon are pruned.

A trajectory corresponds to exactly one structural assignment in both
encodings, so counting assignments counts trajectories.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .constraints import (AtLeastFractionInRegion, ConstraintSet, EncodingKind, ExactlyOneOf,
                          ForbiddenStates, MaxConsecutiveSameAction, MustPass, Precedence,
                          choose_encoding)
from .errors import ConfigurationError, DecodeError, EncodingError
from .mdp import FeatureMap, Mdp, Trajectory, default_horizon, goal_distances

RELATIONS = ("<=", "=", ">=")


@dataclass(frozen=True)
class LinearConstraint:
    """``sum(c * x) relation bound`` with integer coefficients."""

    terms: tuple
    relation: str
    bound: int

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ConfigurationError(f"unknown relation {self.relation!r}")
        merged = defaultdict(int)
        for c, v in self.terms:
            if int(c) != c:
                raise ConfigurationError(f"non-integer coefficient {c}")
            merged[int(v)] += int(c)
        object.__setattr__(self, "terms", tuple((c, v) for v, c in sorted(merged.items()) if c != 0))
        if int(self.bound) != self.bound:
            raise ConfigurationError(f"non-integer bound {self.bound}")
        object.__setattr__(self, "bound", int(self.bound))

    def value(self, assignment) -> int:
        return sum(c * int(assignment[v]) for c, v in self.terms)

    def satisfied(self, assignment) -> bool:
        lhs = self.value(assignment)
        if self.relation == "<=":
            return lhs <= self.bound
        if self.relation == ">=":
            return lhs >= self.bound
        return lhs == self.bound

    def to_text(self) -> str:
        lhs = " ".join(f"{c:+d} x{v}" for c, v in self.terms) or "0"
        return f"{lhs} {self.relation} {self.bound}"


@dataclass(frozen=True)
class XorConstraint:
    """``XOR of var_ids == parity_bit``."""

    var_ids: tuple
    parity_bit: int

    def __post_init__(self):
        ids = tuple(sorted(set(int(v) for v in self.var_ids)))
        object.__setattr__(self, "var_ids", ids)
        if self.parity_bit not in (0, 1):
            raise ConfigurationError("parity bit must be 0 or 1")
        if not ids and self.parity_bit == 1:
            raise EncodingError("odd parity over no variables is unsatisfiable")

    def satisfied(self, assignment) -> bool:
        return sum(int(assignment[v]) for v in self.var_ids) % 2 == self.parity_bit

    def to_text(self) -> str:
        return "x " + " ".join(f"x{v}" for v in self.var_ids) + f" = {self.parity_bit}"


class _Builder:
    def __init__(self):
        self.meaning = []
        self.index = {}
        self.constraints = []

    def var(self, key) -> int:
        if key not in self.index:
            self.index[key] = len(self.meaning)
            self.meaning.append(key)
        return self.index[key]

    def add(self, expr: dict, relation: str, bound: int, const: int = 0):
        """Add ``expr + const relation bound``."""
        terms = tuple((c, v) for v, c in expr.items() if c != 0)
        lc = LinearConstraint(terms, relation, bound - const)
        if not lc.terms:
            if not lc.satisfied({}):
                # keep a visibly unsatisfiable row instead of dropping it
                self.constraints.append(lc)
            return
        self.constraints.append(lc)


def _add_expr(acc: dict, expr: dict, scale: int = 1):
    for v, c in expr.items():
        acc[v] = acc.get(v, 0) + scale * c


@dataclass(frozen=True, eq=False)
class BinaryEncoding:
    """Variables and bookkeeping of a compiled instance.

    ``var_meaning[i]`` is ``("x", s, a, t)`` (``t`` is ``None`` for flow),
    ``("done", t)``, ``("use", s, a)`` or ``("aux", ...)``, with ``s``/``a``
    as MDP indices.
    ``pool`` lists the hashing coordinates: each is a tuple of variable ids
    whose XOR is that coordinate's bit.
    """

    kind: EncodingKind
    mdp: Mdp
    horizon: int | None
    var_meaning: tuple
    pool: tuple
    start_is_goal: bool = False

    @property
    def n_vars(self) -> int:
        return len(self.var_meaning)

    @cached_property
    def var_index(self) -> dict:
        return {m: i for i, m in enumerate(self.var_meaning)}

    @cached_property
    def x_vars(self) -> np.ndarray:
        return np.array([i for i, m in enumerate(self.var_meaning) if m[0] == "x"], dtype=np.int64)

    def energy_coefficients(self, theta, fmap: FeatureMap) -> np.ndarray:
        """Per-variable energy ``discount**(t+1) * theta . f(s, a)`` (zero off path vars)."""
        theta = np.asarray(theta, dtype=float)
        return self.feature_matrix(fmap) @ theta

    def feature_matrix(self, fmap: FeatureMap) -> np.ndarray:
        ftab = fmap.table(self.mdp)
        out = np.zeros((self.n_vars, fmap.dim))
        g = self.mdp.discount
        for i, m in enumerate(self.var_meaning):
            if m[0] == "x":
                _, s, a, t = m
                w = 1.0 if t is None else g ** (t + 1)
                out[i] = w * ftab[s, a]
        return out

    @cached_property
    def path_dag(self):
        """Structural path graph over pair variables.

        Returns ``(order, succ, starts, ends)`` where ``order`` is a topological
        order of the ``x`` variables, ``succ[v]`` lists the variables that may
        follow ``v``, and ``starts``/``ends`` mark first and goal-reaching pairs.
        """
        mdp = self.mdp
        goal = mdp.goal_index
        P = mdp.tensor
        xs = [i for i, m in enumerate(self.var_meaning) if m[0] == "x"]
        by_state_t = defaultdict(list)
        for i in xs:
            _, s, a, t = self.var_meaning[i]
            by_state_t[(s, t)].append(i)
        succ, ends, starts = {}, set(), []
        d0 = mdp.d0
        for i in xs:
            _, s, a, t = self.var_meaning[i]
            nxt = []
            for s2 in np.flatnonzero(P[s, a] > 0):
                if s2 == goal:
                    ends.add(i)
                else:
                    nxt.extend(by_state_t.get((int(s2), None if t is None else t + 1), []))
            succ[i] = nxt
            if (t is None or t == 0) and d0[s] > 0:
                starts.append(i)
        if self.kind is EncodingKind.TIME_INDEXED:
            order = sorted(xs, key=lambda i: self.var_meaning[i][3])
        else:
            order = _topological(xs, succ)
        return order, succ, starts, ends

    def path_extrema(self, coeffs) -> tuple:
        """(min, max) of ``sum coeffs[v]`` over structural start-to-goal paths."""
        order, succ, starts, ends = self.path_dag
        if self.start_is_goal and not starts:
            return 0.0, 0.0
        lo, hi = {}, {}
        for v in reversed(order):
            cand_lo = [lo[w] for w in succ[v] if w in lo]
            cand_hi = [hi[w] for w in succ[v] if w in hi]
            if v in ends:
                cand_lo.append(0)
                cand_hi.append(0)
            if cand_lo:
                lo[v] = coeffs[v] + min(cand_lo)
                hi[v] = coeffs[v] + max(cand_hi)
        los = [lo[v] for v in starts if v in lo]
        his = [hi[v] for v in starts if v in hi]
        if self.start_is_goal:
            los.append(0)
            his.append(0)
        if not los:
            raise EncodingError("no structural start-to-goal path")
        return min(los), max(his)

    def structural_path_count(self) -> float:
        """Number of start-to-goal paths ignoring side constraints (float)."""
        order, succ, starts, ends = self.path_dag
        cnt = {}
        for v in reversed(order):
            cnt[v] = float(v in ends) + sum(cnt[w] for w in succ[v])
        return sum(cnt[v] for v in starts) + float(self.start_is_goal)


def _topological(nodes, succ):
    indeg = {v: 0 for v in nodes}
    for v in nodes:
        for w in succ[v]:
            indeg[w] += 1
    ready = [v for v in nodes if indeg[v] == 0]
    out = []
    while ready:
        v = ready.pop()
        out.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if len(out) != len(nodes):
        raise EncodingError("flow encoding requires an acyclic transition graph")
    return out


def encode(mdp: Mdp, cset: ConstraintSet, horizon: int | None = None,
           kind: EncodingKind | str | None = None) -> tuple:
    """Compile ``(mdp, cset)``; returns ``(BinaryEncoding, [LinearConstraint])``."""
    if mdp.goal is None:
        raise EncodingError("encodings need an absorbing goal state")
    cset.validate(mdp)
    kind = choose_encoding(mdp, cset) if kind is None else EncodingKind(kind)
    if kind is EncodingKind.FLOW:
        return _encode_flow(mdp, cset)
    if horizon is None:
        horizon = default_horizon(mdp)
    return _encode_time(mdp, cset, int(horizon))


def _encode_flow(mdp: Mdp, cset: ConstraintSet):
    if any(isinstance(c, (Precedence, MaxConsecutiveSameAction)) for c in cset):
        raise EncodingError("flow encoding cannot express time-ordered constraints")
    if not mdp.is_acyclic:
        raise EncodingError("flow encoding requires an acyclic MDP")
    if not mdp.is_deterministic:
        raise EncodingError("flow encoding requires deterministic transitions and one start state")
    if not np.isclose(mdp.discount, 1.0):
        raise EncodingError("flow encoding cannot carry per-step discounting")
    nS, nA = len(mdp.states), len(mdp.actions)
    b = _Builder()
    x = {(s, a): b.var(("x", s, a, None)) for s in range(nS) for a in range(nA)}
    P, avail = mdp.tensor, mdp.available
    nxt = {}
    inflow = defaultdict(dict)
    for (s, a), v in x.items():
        if not avail[s, a]:
            b.add({v: 1}, "=", 0)
            continue
        s2 = int(np.argmax(P[s, a]))
        nxt[(s, a)] = s2
        inflow[s2][v] = 1
    s0 = int(np.flatnonzero(mdp.d0)[0])
    goal = mdp.goal_index
    for s in range(nS):
        out = {x[(s, a)]: 1 for a in range(nA) if avail[s, a]}
        if s == goal:
            b.add(dict(inflow[s]), "=", 0 if s0 == goal else 1)
            continue
        net = dict(out)
        _add_expr(net, inflow[s], -1)
        b.add(net, "=", 1 if s == s0 else 0)
        if out:
            b.add(out, "<=", 1)

    def visits(s):
        return dict(inflow[s]), int(s == s0)

    total = ({v: 1 for (s, a), v in x.items() if avail[s, a]}, 1)
    _compile_order_free(b, mdp, cset, visits, total, distinct=visits)
    enc = BinaryEncoding(
        kind=EncodingKind.FLOW, mdp=mdp, horizon=None, var_meaning=tuple(b.meaning),
        pool=tuple((v,) for v in x.values()), start_is_goal=(s0 == goal))
    return enc, b.constraints


def _encode_time(mdp: Mdp, cset: ConstraintSet, H: int):
    if H < 0:
        raise EncodingError("horizon must be nonnegative")
    goal = mdp.goal_index
    dist = goal_distances(mdp)
    P, avail = mdp.tensor, mdp.available
    nS, nA = P.shape[:2]
    starts = [int(s) for s in np.flatnonzero(mdp.d0 > 0)]
    goal_start = goal in starts
    layer_states = [{s for s in starts if s != goal and dist[s] <= H}]
    keep = []  # per layer: list of (s, a)
    for t in range(H):
        pairs = []
        nxt_states = set()
        for s in sorted(layer_states[t]):
            for a in range(nA):
                if not avail[s, a]:
                    continue
                outs = [int(s2) for s2 in np.flatnonzero(P[s, a] > 0) if dist[s2] <= H - t - 1]
                if not outs:
                    continue
                pairs.append((s, a))
                nxt_states.update(s2 for s2 in outs if s2 != goal)
        keep.append(pairs)
        layer_states.append(nxt_states)
    # backward sweep: drop pairs whose successors were all dropped
    alive_next = set()
    for t in reversed(range(H)):
        pairs = []
        for s, a in keep[t]:
            outs = np.flatnonzero(P[s, a] > 0)
            if any(s2 == goal or (int(s2), t + 1) in alive_next for s2 in outs):
                pairs.append((s, a))
        keep[t] = pairs
        alive_next = {(s, t) for s, a in pairs}
    if not goal_start and (H == 0 or not keep[0]):
        raise EncodingError(f"goal unreachable within horizon {H}")

    b = _Builder()
    x = {}
    for t in range(H):
        for s, a in keep[t]:
            x[(s, a, t)] = b.var(("x", s, a, t))
    done = [b.var(("done", t)) for t in range(H)]

    by_state_t = defaultdict(dict)
    for (s, a, t), v in x.items():
        by_state_t[(s, t)][v] = 1

    def done_at(t):
        """(expr, const) for done_t; done_H is the constant 1."""
        if t >= H:
            return {}, 1
        return {done[t]: 1}, 0

    def arrival(t):
        """Goal occupancy at layer t: done_t - done_{t-1}."""
        e, c = done_at(t)
        e = dict(e)
        if t > 0:
            pe, pc = done_at(t - 1)
            _add_expr(e, pe, -1)
            c -= pc
        return e, c

    for t in range(H):
        row = {v: 1 for (s, a, tt), v in x.items() if tt == t}
        row[done[t]] = 1
        b.add(row, "=", 1)
        if t + 1 < H:
            b.add({done[t]: 1, done[t + 1]: -1}, "<=", 0)
    if H > 0:
        b.add({done[0]: 1}, "<=", int(goal_start))
    preds = defaultdict(dict)
    arrivals = defaultdict(dict)
    for (s, a, t), v in x.items():
        expr, const = {v: 1}, 0
        for s2 in np.flatnonzero(P[s, a] > 0):
            s2 = int(s2)
            if s2 == goal:
                e2, c2 = arrival(t + 1)
                _add_expr(expr, e2, -1)
                const -= c2
                arrivals[t + 1][v] = 1
            else:
                _add_expr(expr, by_state_t.get((s2, t + 1), {}), -1)
                for v2 in by_state_t.get((s2, t + 1), {}):
                    preds[v2][v] = 1
        b.add(expr, "<=", 0, const)
    for (s, a, t), v in x.items():
        if t > 0:
            expr = {v: 1}
            _add_expr(expr, preds[v], -1)
            b.add(expr, "<=", 0)
    for t in range(1, H):
        e, c = arrival(t)
        e = dict(e)
        _add_expr(e, arrivals[t], -1)
        b.add(e, "<=", 0, c)

    def visits(s):
        if s == goal:
            return {}, 1
        e = {}
        for t in range(H):
            _add_expr(e, by_state_t.get((s, t), {}))
        return e, 0

    def occupancy(s, t):
        if s == goal:
            return arrival(t)
        return dict(by_state_t.get((s, t), {})), 0

    total = ({v: 1 for v in x.values()}, 1)
    distinct = visits
    if not mdp.is_acyclic:
        distinct = _distinct_visit_indicator(b, visits, goal)
    _compile_order_free(b, mdp, cset, visits, total, distinct)

    for c in cset:
        if isinstance(c, Precedence):
            f = mdp.state_index[c.first]
            for o_state in sorted(c.others, key=repr):
                o = mdp.state_index[o_state]
                for t in range(H + 1):
                    oe, oc = occupancy(o, t)
                    if not oe and oc == 0:
                        continue
                    expr, const = dict(oe), oc
                    for tt in range(t):
                        fe, fc = occupancy(f, tt)
                        _add_expr(expr, fe, -1)
                        const -= fc
                    b.add(expr, "<=", 0, const)
        elif isinstance(c, MaxConsecutiveSameAction):
            m = int(c.limit)
            for a in range(nA):
                for t0 in range(0, H - m):
                    expr = {}
                    for t in range(t0, t0 + m + 1):
                        for s in range(nS):
                            v = x.get((s, a, t))
                            if v is not None:
                                expr[v] = 1
                    if len(expr) > m:
                        b.add(expr, "<=", m)

    pool = _time_pool(mdp, x, b)
    enc = BinaryEncoding(
        kind=EncodingKind.TIME_INDEXED, mdp=mdp, horizon=H, var_meaning=tuple(b.meaning),
        pool=pool, start_is_goal=goal_start)
    return enc, b.constraints


def _time_pool(mdp: Mdp, x: dict, b: _Builder) -> tuple:
    """Hash coordinates of the time-indexed encoding.

    On an acyclic model a pair occurs at most once per trajectory, so each
    pair gets a usage variable ``u = sum_t x[s, a, t]`` (a linear identity, not
    a new degree of freedom) and the hash acts on those ``|S||A|`` usage bits,
    which fix the trajectory. Cyclic models hash the pair variables directly.
    """
    if not mdp.is_acyclic:
        return tuple((v,) for v in x.values())
    groups = defaultdict(dict)
    for (s, a, t), v in x.items():
        groups[(s, a)][v] = 1
    pool = []
    for (s, a), expr in sorted(groups.items()):
        u = b.var(("use", s, a))
        expr = dict(expr)
        expr[u] = -1
        b.add(expr, "=", 0)
        pool.append((u,))
    return tuple(pool)


def _distinct_visit_indicator(b: _Builder, visits, goal):
    cache = {}

    def distinct(s):
        if s == goal:
            return {}, 1
        if s not in cache:
            e, _ = visits(s)
            if not e:
                cache[s] = ({}, 0)
            else:
                u = b.var(("aux", "visited", s))
                for v in e:
                    b.add({v: 1, u: -1}, "<=", 0)
                expr = {u: 1}
                _add_expr(expr, e, -1)
                b.add(expr, "<=", 0)
                cache[s] = ({u: 1}, 0)
        return cache[s]

    return distinct


def _compile_order_free(b: _Builder, mdp: Mdp, cset: ConstraintSet, visits, total, distinct):
    si = mdp.state_index
    for c in cset:
        if isinstance(c, ForbiddenStates):
            for st in sorted(c.states, key=repr):
                e, k = visits(si[st])
                b.add(e, "<=", 0, k)
        elif isinstance(c, MustPass):
            e, k = visits(si[c.state])
            b.add(e, ">=", 1, k)
        elif isinstance(c, ExactlyOneOf):
            expr, const = {}, 0
            for st in c.states:
                e, k = distinct(si[st])
                _add_expr(expr, e)
                const += k
            b.add(expr, "=", 1, const)
        elif isinstance(c, AtLeastFractionInRegion):
            r = c.ratio
            p, q = r.numerator, r.denominator
            expr, const = {}, 0
            for st in c.region:
                e, k = visits(si[st])
                _add_expr(expr, e, q)
                const += q * k
            _add_expr(expr, total[0], -p)
            const -= p * total[1]
            b.add(expr, ">=", 0, const)


def decode(assignment, enc: BinaryEncoding, mdp: Mdp | None = None) -> Trajectory:
    """Trajectory described by a satisfying assignment."""
    mdp = enc.mdp if mdp is None else mdp
    val = np.asarray([int(assignment[i]) for i in range(enc.n_vars)], dtype=np.int8)
    S, A = mdp.states, mdp.actions
    goal = mdp.goal_index
    P = mdp.tensor
    active = [(enc.var_meaning[i], i) for i in np.flatnonzero(val) if enc.var_meaning[i][0] == "x"]
    if enc.kind is EncodingKind.TIME_INDEXED:
        layers = defaultdict(list)
        for m, _ in active:
            layers[m[3]].append((m[1], m[2]))
        if any(len(v) > 1 for v in layers.values()):
            raise DecodeError("more than one active pair in a time layer")
        ts = sorted(layers)
        if ts != list(range(len(ts))):
            raise DecodeError("active layers are not a prefix of the horizon")
        steps = [layers[t][0] for t in ts]
    else:
        out = {}
        for m, _ in active:
            if m[1] in out:
                raise DecodeError("state with two outgoing active pairs")
            out[m[1]] = m[2]
        s = int(np.flatnonzero(mdp.d0)[0])
        steps = []
        while s != goal:
            if s not in out:
                raise DecodeError("flow path breaks before the goal")
            a = out.pop(s)
            steps.append((s, a))
            s = int(np.argmax(P[s, a]))
        if out:
            raise DecodeError("active pairs disconnected from the start-goal path")
    if not steps:
        if mdp.d0[goal] <= 0:
            raise DecodeError("empty trajectory but the start is not the goal")
        return Trajectory((), S[goal])
    states = [s for s, _ in steps]
    if mdp.d0[states[0]] <= 0:
        raise DecodeError("trajectory does not begin at a start state")
    for (s, a), nxt in zip(steps, states[1:] + [goal]):
        if P[s, a, nxt] <= 0:
            raise DecodeError(f"impossible step from {S[s]!r} via {A[a]!r}")
    return Trajectory(tuple((S[s], A[a]) for s, a in steps), S[goal])


def encode_trajectory(traj: Trajectory, enc: BinaryEncoding) -> np.ndarray:
    """Structural assignment (pair and ``done`` variables) of a trajectory.

    Auxiliary variables are left at 0.
    """
    mdp = enc.mdp
    val = np.zeros(enc.n_vars, dtype=np.int8)
    si, ai = mdp.state_index, mdp.action_index
    for t, (s, a) in enumerate(traj.steps):
        key = ("x", si[s], ai[a], t if enc.kind is EncodingKind.TIME_INDEXED else None)
        if key not in enc.var_index:
            raise EncodingError(f"trajectory step {t} has no variable in this encoding")
        val[enc.var_index[key]] = 1
    if enc.kind is EncodingKind.TIME_INDEXED:
        for t in range(len(traj), enc.horizon):
            val[enc.var_index[("done", t)]] = 1
        for s, a in traj.steps:
            u = enc.var_index.get(("use", si[s], ai[a]))
            if u is not None:
                val[u] = 1
    return val


def dump_text(n_vars: int, linear, parity=()) -> str:
    """Plain-text pseudo-boolean dump; parity rows start with ``x``."""
    lines = [f"* n_vars {n_vars}"]
    lines += [c.to_text() for c in linear]
    lines += [p.to_text() for p in parity]
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-]\d+)\s+x(\d+)")


def parse_text(text: str) -> tuple:
    """Inverse of :func:`dump_text`: returns ``(n_vars, linear, parity)``."""
    n_vars, linear, parity = None, [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("*"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "n_vars":
                n_vars = int(parts[1])
            continue
        try:
            if line.startswith("x "):
                lhs, rhs = line[2:].split("=")
                ids = [int(tok[1:]) for tok in lhs.split()]
                parity.append(XorConstraint(tuple(ids), int(rhs)))
                continue
            for rel in ("<=", ">=", "="):
                if f" {rel} " in line:
                    lhs, rhs = line.split(f" {rel} ")
                    break
            else:
                raise ValueError("no relation")
            terms = tuple((int(c), int(v)) for c, v in _TERM.findall(lhs))
            linear.append(LinearConstraint(terms, rel, int(rhs)))
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: cannot parse {raw!r}") from exc
    if n_vars is None:
        ids = [v for c in linear for _, v in c.terms] + [v for p in parity for v in p.var_ids]
        n_vars = max(ids) + 1 if ids else 0
    return n_vars, linear, parity


def branching_priority(enc: BinaryEncoding) -> np.ndarray:
    """Search order hint: path variables in time/topological order, then the rest."""
    order, _, _, _ = enc.path_dag
    pri = np.full(enc.n_vars, float(len(order) + 1))
    if enc.kind is EncodingKind.TIME_INDEXED:
        for i, m in enumerate(enc.var_meaning):
            if m[0] == "x":
                pri[i] = m[3]
            elif m[0] == "done":
                pri[i] = m[1] + 0.5
    else:
        rank = {}
        for pos, v in enumerate(order):
            s = enc.var_meaning[v][1]
            rank.setdefault(s, pos)
        for i, m in enumerate(enc.var_meaning):
            if m[0] == "x":
                pri[i] = rank.get(m[1], len(order))
    return pri
