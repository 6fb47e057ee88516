"""XOR-sampling of constrained trajectories with weight ``exp(-theta . f(tau))``.

The weighted distribution is turned into a uniform one over an extended space
by a bucket embedding. Each trajectory gets ``c_j`` copies, indexed by extra
binary digits ``y``, where ``j`` is the trajectory's geometric energy bucket.
Random parity constraints then cut that space into a cell small enough that
the oracle's single answer is close to a uniform pick. Finally a per-sample
acceptance test with probability ``w / (c_j * kappa)`` removes the rounding
left by the buckets.

Survival under ``i`` random parities has probability ``2**-i`` for every
assignment, pairwise independently. An assignment that survives is returned
unless some other assignment also survives, which happens with probability
at most ``mu = |S| / 2**i``. The output distribution therefore lies within a
factor ``1 / (1 - mu)`` of the target. The parity count is chosen so that
``mu`` stays below ``1 - 1/delta``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .encoding import BinaryEncoding, LinearConstraint, XorConstraint, branching_priority, decode
from .errors import ConfigurationError, InfeasibleError, SamplingAborted
from .mdp import FeatureMap
from .oracle import OracleProblem, OracleStats, ParityRows, Status, solve

PARITY_POOLS = ("trajectory_vars_only",)
SEARCH_MODES = ("bisect", "scan")

# spawn-key tags separating the random streams of the two sampler phases
_SEARCH, _ATTEMPT = 0, 1


@dataclass(frozen=True)
class SamplerConfig:
    """Parameters of XOR-sampling.

    Args:
        delta: target approximation factor (> 1).
        failure_prob: allowed probability that one ``sample`` call fails.
        bucket_ratio: geometric ratio of weight buckets; ``delta**2`` if unset.
        max_buckets: cap on the number of buckets (lighter weights are clamped
            into the last one).
        repeats: attempts per ``sample`` call; derived from ``failure_prob``
            when unset.
        survivor_margin: safety factor between the estimated and the tolerated
            expected number of surviving assignments.
        max_consecutive_failures: abort threshold for ``batch_sample``.
        max_decisions: per-query oracle budget; exhaustion counts as failure.
        search: ``"bisect"`` locates the SAT/UNSAT transition with a doubling
            and bisection walk; ``"scan"`` probes every parity count from 0 to
            the number of hashing coordinates, the classical procedure whose
            first-sample cost is linear in that number.
    """

    delta: float = 1.2
    failure_prob: float = 0.05
    bucket_ratio: float | None = None
    max_buckets: int = 40
    repeats: int | None = None
    parity_pool: str = "trajectory_vars_only"
    survivor_margin: float = 2.0
    max_consecutive_failures: int = 5000
    max_decisions: int = 20_000_000
    search: str = "bisect"

    def __post_init__(self):
        if not self.delta > 1.0:
            raise ConfigurationError(f"delta must exceed 1, got {self.delta}")
        if not 0.0 < self.failure_prob < 1.0:
            raise ConfigurationError(f"failure_prob must lie in (0, 1), got {self.failure_prob}")
        if self.bucket_ratio is not None and not self.bucket_ratio > 1.0:
            raise ConfigurationError("bucket_ratio must exceed 1")
        if self.max_buckets < 1:
            raise ConfigurationError("max_buckets must be positive")
        if self.repeats is not None and self.repeats < 1:
            raise ConfigurationError("repeats must be positive")
        if self.parity_pool not in PARITY_POOLS:
            raise ConfigurationError(f"unknown parity pool {self.parity_pool!r}")
        if self.search not in SEARCH_MODES:
            raise ConfigurationError(f"unknown search mode {self.search!r}")
        if self.survivor_margin < 1.0:
            raise ConfigurationError("survivor_margin must be at least 1")

    @property
    def ratio(self) -> float:
        return self.delta ** 2 if self.bucket_ratio is None else self.bucket_ratio

    @property
    def mu_max(self) -> float:
        """Largest expected number of other survivors compatible with ``delta``."""
        return 1.0 - 1.0 / self.delta

    @property
    def mu_target(self) -> float:
        return self.mu_max / self.survivor_margin


@dataclass
class SampleOutcome:
    """Result of one ``sample`` call; ``result`` is ``None`` on failure."""

    result: object
    parity_count_used: int
    oracle_queries_used: int
    attempts: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.result is None


@dataclass(frozen=True, eq=False)
class WeightedInstance:
    """Oracle problem for one ``theta``: base constraints plus the bucket embedding."""

    enc: BinaryEncoding
    problem: OracleProblem
    coords: tuple  # hashing coordinates, each a tuple of variable ids
    energy: np.ndarray  # real energy per variable
    kvals: np.ndarray  # integer energy per variable
    thresholds: np.ndarray  # K thresholds of buckets 1..B-1
    copies: np.ndarray  # c_j per bucket
    log_kappa: float
    log2_upper: float  # log2 of an upper bound on the embedded model count
    y_vars: tuple
    g_vars: tuple

    @property
    def n_buckets(self) -> int:
        return len(self.copies)

    def bucket_of(self, assignment) -> int:
        K = int(self.kvals @ assignment)
        return int(np.searchsorted(self.thresholds, K, side="right"))

    def log_accept(self, assignment) -> float:
        e = float(self.energy @ assignment)
        j = self.bucket_of(assignment)
        return -e - math.log(self.copies[j]) - self.log_kappa

    @cached_property
    def n_coords(self) -> int:
        return len(self.coords)

    def expand(self, xc: XorConstraint) -> XorConstraint:
        """Map a parity over hashing coordinates to one over variables."""
        ids = [v for c in xc.var_ids for v in self.coords[c]]
        return XorConstraint(tuple(ids), xc.parity_bit)

    @cached_property
    def _var_coord(self) -> np.ndarray:
        vc = np.full(self.problem.n_vars, -1, dtype=np.int64)
        for c, vs in enumerate(self.coords):
            vc[list(vs)] = c
        return vc

    def random_rows(self, i: int, rng: np.random.Generator) -> ParityRows:
        """``i`` random parities over the hashing coordinates, expanded to variables."""
        masks = rng.integers(0, 2, size=(i, self.n_coords), dtype=np.uint8)
        rhs = rng.integers(0, 2, size=i, dtype=np.uint8)
        vc = self._var_coord
        rows = np.where(vc >= 0, masks[:, np.maximum(vc, 0)], 0).astype(np.uint8)
        return ParityRows(rows, rhs)


def build_instance(theta, enc: BinaryEncoding, base_constraints, fmap: FeatureMap,
                   cfg: SamplerConfig) -> WeightedInstance:
    """Add the bucket embedding for ``theta`` to the base constraint system."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ConfigurationError("theta has non-finite entries")
    energy = enc.energy_coefficients(theta, fmap)
    e_min, e_max = enc.path_extrema(energy)
    r = cfg.ratio
    log_r = math.log(r)
    span = e_max - e_min
    n_buckets = max(1, min(cfg.max_buckets, math.ceil(span / log_r - 1e-12)))
    linear = list(base_constraints)
    n = enc.n_vars
    y_vars, g_vars = [], []
    if n_buckets == 1:
        kvals = np.zeros(n, dtype=np.int64)
        thresholds = np.zeros(0, dtype=np.int64)
        copies = np.array([1.0])
        log_kappa = -e_min
    else:
        max_len = enc.horizon if enc.horizon is not None else len(enc.mdp.states)
        q = log_r / (4.0 * max(1, max_len))
        kvals = np.rint(energy / q).astype(np.int64)
        k_min, k_max = (int(round(v)) for v in enc.path_extrema(kvals.astype(float)))
        resid = np.abs(energy - q * kvals)
        slack = enc.path_extrema(resid)[1]
        steps = math.ceil(log_r / q)
        thresholds = np.array([k_min + j * steps for j in range(1, n_buckets)], dtype=np.int64)
        copies = np.array([max(1, round(r ** (n_buckets - 1 - j))) for j in range(n_buckets)],
                          dtype=float)
        log_wmax = [-e_min] + [-max(e_min, q * T - slack) for T in thresholds]
        log_kappa = max(lw - math.log(c) for lw, c in zip(log_wmax, copies))
        xv = np.flatnonzero(kvals)
        kterms = [(int(kvals[v]), int(v)) for v in xv]
        n_y = max(0, math.ceil(math.log2(copies[0]))) if copies[0] > 1 else 0
        y_vars = list(range(n, n + n_y))
        g_vars = list(range(n + n_y, n + n_y + len(thresholds)))
        for T, g in zip(thresholds, g_vars):
            T = int(T)
            # g = 1 iff K >= T
            linear.append(LinearConstraint(tuple(kterms) + ((-(T - k_min), g),), ">=", k_min))
            linear.append(LinearConstraint(tuple(kterms) + ((-(k_max - T + 1), g),), "<=", T - 1))
        for g_a, g_b in zip(g_vars, g_vars[1:]):
            linear.append(LinearConstraint(((1, g_b), (-1, g_a)), "<=", 0))
        if y_vars:
            terms = [(1 << k, y) for k, y in enumerate(y_vars)]
            terms += [(int(copies[j - 1] - copies[j]), g) for j, g in enumerate(g_vars, start=1)]
            linear.append(LinearConstraint(tuple(terms), "<=", int(copies[0]) - 1))
        kvals = np.concatenate([kvals, np.zeros(n_y + len(g_vars), dtype=np.int64)])
    n_total = n + len(y_vars) + len(g_vars)
    energy = np.concatenate([energy, np.zeros(n_total - n)])
    pri = branching_priority(enc)
    top = float(pri.max()) + 1.0 if len(pri) else 0.0
    pri = np.concatenate([pri, np.full(len(y_vars), top + 1.0), np.full(len(g_vars), top)])
    problem = OracleProblem(n_total, tuple(linear), (), pri)
    coords = tuple(enc.pool) + tuple((y,) for y in y_vars)
    count_ub = max(1.0, enc.structural_path_count())
    log2_upper = math.log2(count_ub) + math.log2(copies[0])
    return WeightedInstance(
        enc=enc, problem=problem, coords=coords, energy=energy, kvals=kvals,
        thresholds=thresholds, copies=copies, log_kappa=float(log_kappa),
        log2_upper=log2_upper, y_vars=tuple(y_vars), g_vars=tuple(g_vars))


def random_parity(n_vars: int, rng: np.random.Generator) -> XorConstraint | None:
    """Random parity over coordinates ``0..n_vars-1``.

    Each coordinate enters independently with probability 1/2 and the parity
    bit is uniform. An empty selection with an odd bit is unsatisfiable; it is
    returned as ``None`` so callers can treat that cell as empty without
    breaking the hash family's distribution.
    """
    if n_vars < 1:
        raise ConfigurationError("random_parity needs at least one coordinate")
    mask = rng.integers(0, 2, size=n_vars).astype(bool)
    bit = int(rng.integers(0, 2))
    ids = tuple(int(i) for i in np.flatnonzero(mask))
    if not ids and bit == 1:
        return None
    return XorConstraint(ids, bit)


def _stream(master: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(tag, index)))


def _master_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    if rng is None:
        raise ConfigurationError("a seed or Generator is required")
    return int(rng)


def _query(inst: WeightedInstance, i: int, stream: np.random.Generator, stats: OracleStats,
           cfg: SamplerConfig):
    """Add ``i`` fresh random parities and ask the oracle once.

    Returns ``(status, assignment)``.
    """
    rows = inst.random_rows(i, stream)
    seed = int(stream.integers(0, 2**31 - 1))
    res = solve(inst.problem.with_parity(rows), seed, stats, max_decisions=cfg.max_decisions)
    return res.status, res.assignment


def _estimate_log2_count(trials: dict) -> float:
    """Maximum-likelihood log2 model count from SAT frequencies per parity level.

    Under the Poisson approximation a cell with ``i`` parities is nonempty
    with probability ``1 - exp(-S / 2**i)``.
    """
    levels = sorted(trials)
    grid = np.linspace(-2.0, max(levels) + 4.0, 2000)
    ll = np.zeros_like(grid)
    for i in levels:
        sat, tot = trials[i]
        lam = np.exp2(grid - i)
        p = -np.expm1(-lam)
        p = np.clip(p, 1e-300, 1 - 1e-16)
        ll += sat * np.log(p) + (tot - sat) * np.log1p(-p)
    return float(grid[int(np.argmax(ll))])


@dataclass
class _SearchResult:
    parity_count: int
    log2_count: float
    queries: int
    trials: dict


def find_parity_count(inst: WeightedInstance, cfg: SamplerConfig, master: int,
                      stats: OracleStats) -> _SearchResult:
    """Locate the SAT/UNSAT transition (see ``SamplerConfig.search``), then MLE.

    Raises :class:`InfeasibleError` if the unhashed problem is UNSAT.
    """
    q0 = stats.queries
    res = solve(inst.problem, int(_stream(master, _SEARCH, 0).integers(0, 2**31 - 1)), stats,
                max_decisions=cfg.max_decisions)
    if res.status is Status.UNSAT:
        raise InfeasibleError("no trajectory satisfies the constraints")
    n = max(2, inst.n_coords)
    n_trials = max(3, math.ceil(math.log(n / cfg.failure_prob)))
    trials = {}
    counter = [1]

    def run_level(i):
        if i in trials:
            return trials[i][0] / trials[i][1]
        sat = 0
        for _ in range(n_trials):
            st, _ = _query(inst, i, _stream(master, _SEARCH, counter[0]), stats, cfg)
            counter[0] += 1
            sat += st is Status.SAT
        trials[i] = (sat, n_trials)
        return sat / n_trials

    if cfg.search == "scan":
        for i in range(inst.n_coords + 1):
            run_level(i)
        log2_s = _estimate_log2_count(trials)
        i_star = max(0, math.ceil(log2_s - math.log2(cfg.mu_target)))
        return _SearchResult(i_star, log2_s, stats.queries - q0, trials)
    upper = max(1, math.ceil(inst.log2_upper))
    # walk down from the upper bound in doubling steps until cells are mostly nonempty
    i, step, hi = upper, 0, None
    while True:
        if run_level(i) >= 0.5:
            lo = i
            break
        hi = i
        if i == 0:
            # even the unhashed problem mostly fails (oracle budget too small)
            lo = 0
            break
        step = 1 if step == 0 else 2 * step
        i = max(0, upper - step)
    while hi is None:
        # the bound was loose the other way: climb until cells are mostly empty
        i += 1
        if run_level(i) < 0.5 or i > inst.n_coords + 32:
            hi = i
        else:
            lo = i
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if run_level(mid) >= 0.5:
            lo = mid
        else:
            hi = mid
    log2_s = _estimate_log2_count(trials)
    i_star = max(0, math.ceil(log2_s - math.log2(cfg.mu_target)))
    return _SearchResult(i_star, log2_s, stats.queries - q0, trials)


def _repeats(cfg: SamplerConfig, inst: WeightedInstance) -> int:
    if cfg.repeats is not None:
        return cfg.repeats
    mu = cfg.mu_target / cfg.survivor_margin
    p_nonempty = mu * (1.0 - mu)
    # acceptance is at least about 1/(r * rounding) outside the clamped tail
    p_accept = 1.0 / (cfg.ratio ** 2 * 1.5)
    p = p_nonempty * p_accept
    return max(1, math.ceil(math.log(1.0 / cfg.failure_prob) / p))


def _attempt(inst: WeightedInstance, i: int, stream: np.random.Generator, stats: OracleStats,
             cfg: SamplerConfig):
    st, assignment = _query(inst, i, stream, stats, cfg)
    u = stream.random()
    if st is not Status.SAT:
        return None, st
    if math.log(u) >= inst.log_accept(assignment):
        return None, "rejected"
    return decode(assignment[: inst.enc.n_vars], inst.enc), "ok"


def sample(weight_params, enc: BinaryEncoding, base_constraints, cfg: SamplerConfig, rng,
           fmap: FeatureMap, stats: OracleStats | None = None,
           parity_count: int | None = None) -> SampleOutcome:
    """One XOR-sample: search the parity count (unless given) and attempt up to ``repeats`` times.

    Raises :class:`InfeasibleError` when no trajectory satisfies the constraints.
    """
    stats = OracleStats() if stats is None else stats
    q0 = stats.queries
    master = _master_seed(rng)
    inst = build_instance(weight_params, enc, base_constraints, fmap, cfg)
    diag = {}
    if parity_count is None:
        sr = find_parity_count(inst, cfg, master, stats)
        parity_count = sr.parity_count
        diag["log2_count"] = sr.log2_count
        diag["search_queries"] = sr.queries
    reps = _repeats(cfg, inst)
    for k in range(reps):
        traj, why = _attempt(inst, parity_count, _stream(master, _ATTEMPT, k), stats, cfg)
        if traj is not None:
            return SampleOutcome(traj, parity_count, stats.queries - q0, k + 1, diag)
    diag["reason"] = "repeats exhausted"
    return SampleOutcome(None, parity_count, stats.queries - q0, reps, diag)


@dataclass
class BatchResult:
    trajectories: list
    stats: OracleStats
    parity_count: int
    first_sample_queries: int
    attempts: int
    log2_count: float
    wall_seconds: float

    def __iter__(self):
        # allows ``trajs, stats = batch_sample(...)``
        return iter((self.trajectories, self.stats))


def batch_sample(count: int, weight_params, enc: BinaryEncoding, base_constraints,
                 cfg: SamplerConfig, rng, fmap: FeatureMap,
                 stats: OracleStats | None = None) -> BatchResult:
    """``count`` successful samples sharing one parity-count search.

    The first success pays for the search; afterwards every attempt draws
    fresh parities at the frozen count and makes exactly one oracle query.
    Attempt ``k`` always uses the random stream derived from ``(seed, k)``, so
    results do not depend on scheduling.
    """
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    t0 = time.perf_counter()
    stats = OracleStats() if stats is None else stats
    q0 = stats.queries
    master = _master_seed(rng)
    inst = build_instance(weight_params, enc, base_constraints, fmap, cfg)
    sr = find_parity_count(inst, cfg, master, stats)
    i = sr.parity_count
    out = []
    first_queries = None
    k = 0
    fails = 0
    while len(out) < count:
        traj, _ = _attempt(inst, i, _stream(master, _ATTEMPT, k), stats, cfg)
        k += 1
        if traj is None:
            fails += 1
            if fails >= cfg.max_consecutive_failures:
                raise SamplingAborted(
                    f"{fails} consecutive failed attempts at {i} parities "
                    f"(estimated log2 count {sr.log2_count:.2f})")
            continue
        fails = 0
        out.append(traj)
        if first_queries is None:
            first_queries = stats.queries - q0
    return BatchResult(out, stats, i, first_queries, k, sr.log2_count,
                       time.perf_counter() - t0)
