"""The embedded NP-oracle: complete search over pseudo-boolean and parity rows."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from ..encoding import XorConstraint
from ..errors import ConfigurationError
from . import _core

_INF = np.int64(2) ** 60
DEFAULT_MAX_DECISIONS = 50_000_000


class Status(str, Enum):
    SAT = "sat"
    UNSAT = "unsat"
    TIMEOUT = "timeout"


_STATUS = {_core.SAT: Status.SAT, _core.UNSAT: Status.UNSAT, _core.TIMEOUT: Status.TIMEOUT}


@dataclass
class OracleStats:
    """Query accounting; ``record`` is safe to call from several threads."""

    queries: int = 0
    decisions: int = 0
    propagations: int = 0
    conflicts: int = 0
    timeouts: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, status: Status, decisions: int, propagations: int, conflicts: int):
        with self._lock:
            self.queries += 1
            self.decisions += decisions
            self.propagations += propagations
            self.conflicts += conflicts
            self.timeouts += int(status is Status.TIMEOUT)

    def merge(self, other: "OracleStats"):
        with self._lock:
            self.queries += other.queries
            self.decisions += other.decisions
            self.propagations += other.propagations
            self.conflicts += other.conflicts
            self.timeouts += other.timeouts

    def as_dict(self) -> dict:
        return {"queries": self.queries, "decisions": self.decisions,
                "propagations": self.propagations, "conflicts": self.conflicts,
                "timeouts": self.timeouts}


@dataclass(frozen=True)
class SolveResult:
    status: Status
    assignment: np.ndarray | None
    decisions: int = 0
    propagations: int = 0
    conflicts: int = 0

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT


@dataclass(frozen=True)
class CountResult:
    count: int
    exceeded: bool

    def __int__(self):
        return self.count


class _CompiledLinear:
    """CSR form of the linear rows, built once and shared across parity variants."""

    def __init__(self, n_vars: int, linear):
        lo, hi, ptr, cols, coefs = [], [], [0], [], []
        for c in linear:
            terms = sorted(c.terms, key=lambda t: -abs(t[0]))
            for coef, v in terms:
                if not 0 <= v < n_vars:
                    raise ConfigurationError(f"variable {v} out of range")
                cols.append(v)
                coefs.append(coef)
            ptr.append(len(cols))
            lo.append(c.bound if c.relation in (">=", "=") else -_INF)
            hi.append(c.bound if c.relation in ("<=", "=") else _INF)
        self.row_ptr = np.array(ptr, dtype=np.int64)
        self.row_col = np.array(cols, dtype=np.int64)
        self.row_coef = np.array(coefs, dtype=np.int64)
        self.row_lo = np.array(lo, dtype=np.int64)
        self.row_hi = np.array(hi, dtype=np.int64)
        n_rows = len(lo)
        row_of = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(self.row_ptr))
        self.var_ptr, self.var_row, self.var_coef = _transpose(n_vars, self.row_col, row_of, self.row_coef)


def _transpose(n_vars, cols, rows, coefs):
    order = np.argsort(cols, kind="stable")
    ptr = np.zeros(n_vars + 1, dtype=np.int64)
    np.add.at(ptr, cols + 1, 1)
    np.cumsum(ptr, out=ptr)
    return ptr, rows[order].astype(np.int64), coefs[order].astype(np.int64)


@dataclass(frozen=True, eq=False)
class ParityRows:
    """Dense parity system: row ``r`` requires ``matrix[r] . x == rhs[r] (mod 2)``.

    An all-zero row with odd right-hand side is allowed here and makes the
    problem unsatisfiable; it arises from the hash family's empty draws.
    """

    matrix: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=np.uint8))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=np.uint8))

    def __len__(self):
        return len(self.rhs)


@dataclass(frozen=True, eq=False)
class OracleProblem:
    """Binary variables with linear (pseudo-boolean) and parity constraints.

    ``priority`` optionally orders branching: lower values are decided first,
    ties broken at random per solve.
    """

    n_vars: int
    linear: tuple = ()
    parity: tuple | ParityRows = ()
    priority: np.ndarray | None = None
    _compiled: _CompiledLinear | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "linear", tuple(self.linear))
        if isinstance(self.parity, ParityRows):
            if self.parity.matrix.shape[1] != self.n_vars:
                raise ConfigurationError("parity matrix width differs from n_vars")
        else:
            object.__setattr__(self, "parity", tuple(self.parity))
            for p in self.parity:
                if p.var_ids and not 0 <= max(p.var_ids) < self.n_vars:
                    raise ConfigurationError("parity variable out of range")

    def parity_dense(self) -> tuple:
        """Parity system as a 0/1 matrix over variables plus right-hand sides."""
        if isinstance(self.parity, ParityRows):
            return self.parity.matrix, self.parity.rhs
        mat = np.zeros((len(self.parity), self.n_vars), dtype=np.uint8)
        for r, p in enumerate(self.parity):
            mat[r, list(p.var_ids)] = 1
        return mat, np.array([p.parity_bit for p in self.parity], dtype=np.uint8)

    def parity_list(self) -> list:
        if not isinstance(self.parity, ParityRows):
            return list(self.parity)
        mat, rhs = self.parity_dense()
        return [XorConstraint(tuple(int(v) for v in np.flatnonzero(row)), int(b))
                for row, b in zip(mat, rhs) if row.any() or b]

    @cached_property
    def compiled(self) -> _CompiledLinear:
        if self._compiled is not None:
            return self._compiled
        return _CompiledLinear(self.n_vars, self.linear)

    def with_parity(self, parity) -> "OracleProblem":
        """Same linear part (compiled once) with a different parity system."""
        if not isinstance(parity, ParityRows):
            parity = tuple(parity)
        return OracleProblem(self.n_vars, self.linear, parity, self.priority, self.compiled)

    def with_linear(self, extra) -> "OracleProblem":
        return OracleProblem(self.n_vars, self.linear + tuple(extra), self.parity, self.priority)

    def is_satisfied_by(self, assignment) -> bool:
        if not all(c.satisfied(assignment) for c in self.linear):
            return False
        mat, rhs = self.parity_dense()
        x = np.asarray(assignment, dtype=np.int64)
        return bool(np.all((mat.astype(np.int64) @ x) % 2 == rhs))


def pack_rows(rows: np.ndarray) -> np.ndarray:
    """Pack a 0/1 matrix into little-endian uint64 words per row."""
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    m, n = rows.shape
    nw = max(1, (n + 63) // 64)
    padded = np.zeros((m, nw * 64), dtype=np.uint8)
    padded[:, :n] = rows
    return np.packbits(padded, axis=1, bitorder="little").view(np.uint64).reshape(m, nw)


def _run(problem: OracleProblem, rng_seed: int, max_solutions: int, max_decisions: int,
         eliminate: bool, gauss: bool):
    n = problem.n_vars
    rows, rhs = problem.parity_dense()
    words = pack_rows(rows)
    ok, *xa = _core.prepare_parity(words, rhs.astype(np.int8), n, bool(eliminate))
    if not ok:
        return _core.UNSAT, 0, 0, 0, 0, None
    cl = problem.compiled
    rng = np.random.default_rng(rng_seed)
    prio = np.zeros(n) if problem.priority is None else np.asarray(problem.priority, float)
    order = np.lexsort((rng.random(n), prio)).astype(np.int64)
    phase = rng.integers(0, 2, size=n).astype(np.int8)
    out = np.zeros(n, dtype=np.int8)
    res = _core.search(n, cl.row_ptr, cl.row_col, cl.row_coef, cl.row_lo, cl.row_hi,
                       cl.var_ptr, cl.var_row, cl.var_coef, *xa, bool(gauss),
                       order, phase, np.int64(max_solutions), np.int64(max_decisions), out)
    return (*res, out)


def solve(problem: OracleProblem, rng_seed: int = 0, stats: OracleStats | None = None,
          max_decisions: int = DEFAULT_MAX_DECISIONS, eliminate: bool = True,
          gauss: bool = True) -> SolveResult:
    """One oracle query: a satisfying assignment, UNSAT, or TIMEOUT on budget exhaustion."""
    status, _, dec, props, confl, out = _run(problem, rng_seed, 1, max_decisions, eliminate, gauss)
    st = _STATUS[status]
    if stats is not None:
        stats.record(st, dec, props, confl)
    return SolveResult(st, out.copy() if st is Status.SAT else None, dec, props, confl)


def solve_all_count(problem: OracleProblem, cap: int, eliminate: bool = True, gauss: bool = True,
                    stats: OracleStats | None = None) -> CountResult:
    """Exact model count when it is at most ``cap``; otherwise ``exceeded=True``."""
    status, n_sol, dec, props, confl, _ = _run(problem, 0, cap + 1, DEFAULT_MAX_DECISIONS ** 2,
                                               eliminate, gauss)
    if stats is not None:
        stats.record(_STATUS[status], dec, props, confl)
    if n_sol > cap:
        return CountResult(cap, True)
    return CountResult(int(n_sol), False)


def brute_force_solutions(problem: OracleProblem, limit_vars: int = 22) -> np.ndarray:
    """All models as rows of a 0/1 matrix, by checking every assignment (test support)."""
    n = problem.n_vars
    if n > limit_vars:
        raise ConfigurationError(f"brute force limited to {limit_vars} variables")
    A = np.zeros((len(problem.linear), n), dtype=np.int64)
    lo = np.empty(len(problem.linear), dtype=np.int64)
    hi = np.empty(len(problem.linear), dtype=np.int64)
    for r, c in enumerate(problem.linear):
        for coef, v in c.terms:
            A[r, v] += coef
        lo[r] = c.bound if c.relation in (">=", "=") else -_INF
        hi[r] = c.bound if c.relation in ("<=", "=") else _INF
    X, rhs = problem.parity_dense()
    X = X.astype(np.int64)
    rhs = rhs.astype(np.int64)
    found = []
    chunk = 1 << 16
    weights = 1 << np.arange(n, dtype=np.int64)
    for start in range(0, 1 << n, chunk):
        ids = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((ids[:, None] & weights[None, :]) > 0).astype(np.int64)
        ok = np.ones(len(ids), dtype=bool)
        if len(lo):
            vals = bits @ A.T
            ok &= np.all((vals >= lo) & (vals <= hi), axis=1)
        if len(rhs):
            ok &= np.all((bits @ X.T) % 2 == rhs, axis=1)
        found.append(bits[ok])
    return np.concatenate(found).astype(np.int8) if found else np.zeros((0, n), dtype=np.int8)


def brute_force_count(problem: OracleProblem, limit_vars: int = 22) -> int:
    return int(len(brute_force_solutions(problem, limit_vars)))
