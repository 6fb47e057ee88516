"""Unconstrained comparison methods.

``maxent_fb`` is the classic forward-backward recursion for maximum-entropy
IRL over a finite horizon; ``reirl_train`` replaces the partition function by
self-normalized importance sampling from a reference policy; and
``masked_maxent_train`` is the DP baseline run on a model with forbidden
states removed. None of them can express multi-state constraints.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constraints import ConstraintSet
from .errors import ConfigurationError, InfeasibleError
from .learner import TrainConfig, demo_moments, sgd
from .mdp import FeatureMap, Mdp, Trajectory, default_horizon, path_feature

_NEG = -np.inf


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


@dataclass(frozen=True, eq=False)
class VisitationTable:
    """Forward-backward quantities over ``horizon`` layers.

    ``state_freq[t, s]`` is the probability of being in ``s`` after ``t``
    steps; the goal column accumulates trajectories that have already
    finished, so every layer sums to one. ``pair_freq[t, s, a]`` is the
    probability of taking ``a`` in ``s`` at step ``t``. ``policy[t]`` is the
    induced stochastic policy and ``log_z[t, s]`` the backward log partition;
    ``log_cont[t, s, a]`` is ``log sum_s' T(s' | s, a) Z_{t+1}(s')``.
    """

    mdp: Mdp
    horizon: int
    discount: float
    log_z: np.ndarray
    log_cont: np.ndarray
    policy: np.ndarray
    state_freq: np.ndarray
    pair_freq: np.ndarray
    log_partition: float

    @property
    def partition(self) -> float:
        return float(math.exp(self.log_partition))

    def expected_features(self, fmap: FeatureMap) -> np.ndarray:
        ftab = fmap.table(self.mdp)
        w = self.discount ** np.arange(1, self.horizon + 1)
        return np.einsum("t,tsa,sad->d", w, self.pair_freq, ftab)

    def sample(self, rng: np.random.Generator, n: int) -> list:
        """Roll out the induced policy; next states are drawn in proportion to
        ``T(s' | s, a) * Z_{t+1}(s')`` so every rollout reaches the goal."""
        mdp = self.mdp
        S, A = mdp.states, mdp.actions
        P = mdp.tensor
        goal = mdp.goal_index
        p0 = self.state_freq[0]
        out = []
        for _ in range(n):
            s = int(rng.choice(len(S), p=p0 / p0.sum()))
            steps = []
            t = 0
            while s != goal:
                if t >= self.horizon:
                    raise InfeasibleError("rollout exceeded the horizon")
                a = int(rng.choice(len(A), p=self.policy[t, s]))
                nxt = P[s, a] * np.exp(self.log_z[t + 1] - self.log_cont[t, s, a])
                s2 = int(rng.choice(len(S), p=nxt / nxt.sum()))
                steps.append((S[s], A[a]))
                s = s2
                t += 1
            out.append(Trajectory(tuple(steps), S[s]))
        return out


def maxent_fb(mdp: Mdp, fmap: FeatureMap, theta, horizon: int | None = None) -> VisitationTable:
    """Soft backward recursion in log space, then the forward visitation pass.

    Trajectory weight is ``d0 * prod T * exp(-theta . f(tau))`` restricted to
    trajectories that reach the goal within ``horizon`` steps.
    """
    if mdp.goal is None:
        raise ConfigurationError("forward-backward needs a goal state")
    H = default_horizon(mdp) if horizon is None else int(horizon)
    theta = np.asarray(theta, dtype=float)
    nS, nA = len(mdp.states), len(mdp.actions)
    g = mdp.goal_index
    P = mdp.tensor
    avail = mdp.available
    energy = fmap.table(mdp) @ theta  # [S, A]
    gam = mdp.discount ** np.arange(1, H + 1)
    with np.errstate(divide="ignore"):
        logP = np.log(P)
        log_d0 = np.log(mdp.d0)
    log_z = np.full((H + 1, nS), _NEG)
    log_z[:, g] = 0.0
    log_q = np.full((H, nS, nA), _NEG)
    log_cont = np.full((H, nS, nA), _NEG)
    for t in range(H - 1, -1, -1):
        cont = _logsumexp(logP + log_z[t + 1][None, None, :], axis=2)
        log_cont[t] = cont
        q = np.where(avail, -gam[t] * energy + cont, _NEG)
        q[g] = _NEG
        log_q[t] = q
        z = _logsumexp(q, axis=1)
        z[g] = 0.0
        log_z[t] = z
    log_partition = float(_logsumexp(log_d0 + log_z[0]))
    if not np.isfinite(log_partition):
        raise InfeasibleError("no trajectory reaches the goal within the horizon")
    with np.errstate(invalid="ignore"):
        policy = np.exp(log_q - log_z[:H, :, None])
    policy = np.nan_to_num(policy)
    state_freq = np.zeros((H + 1, nS))
    pair_freq = np.zeros((H, nS, nA))
    state_freq[0] = np.exp(log_d0 + log_z[0] - log_partition)
    for t in range(H):
        live = state_freq[t].copy()
        live[g] = 0.0
        pair_freq[t] = live[:, None] * policy[t]
        # successor distribution conditioned on finishing in time
        with np.errstate(invalid="ignore"):
            w = P * np.exp(log_z[t + 1][None, None, :] - log_cont[t][:, :, None])
        w = np.nan_to_num(w)
        nxt = np.einsum("sa,sak->k", pair_freq[t], w)
        nxt[g] += state_freq[t, g]
        state_freq[t + 1] = nxt
    return VisitationTable(mdp, H, mdp.discount, log_z, log_cont, policy, state_freq, pair_freq,
                           log_partition)


# -- training ------------------------------------------------------------------

def _prepare(mdp, fmap, demos, theta0):
    if len(demos) == 0:
        raise ConfigurationError("no demonstrations")
    for t in demos:
        if not t.is_structurally_valid(mdp):
            raise ConfigurationError("demonstration is not a trajectory of the model")
    theta0 = np.zeros(fmap.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    return demo_moments(demos, fmap, mdp.discount), theta0


def maxent_train(mdp: Mdp, fmap: FeatureMap, demos: Sequence[Trajectory], cfg: TrainConfig,
                 theta0=None, horizon: int | None = None) -> tuple:
    """Descent on the unconstrained likelihood with exact DP gradients.

    Returns ``(theta_bar, TrainState)``.
    """
    demo_mean, theta0 = _prepare(mdp, fmap, demos, theta0)

    def grad(theta, k):
        return demo_mean - maxent_fb(mdp, fmap, theta, horizon).expected_features(fmap)

    state = sgd(theta0, grad, cfg.iterations, cfg.learning_rate,
                max_wall_seconds=cfg.max_wall_seconds)
    return state.theta_bar, state


def masked_mdp(mdp: Mdp, cset: ConstraintSet) -> Mdp:
    """Copy of ``mdp`` with every action that can enter a forbidden state removed."""
    banned = cset.forbidden()
    if not banned:
        return mdp
    if mdp.goal in banned:
        raise InfeasibleError("the goal is forbidden")
    transition = {(s, a): row for (s, a), row in mdp.transition.items()
                  if s not in banned and not any(p > 0 and s2 in banned for s2, p in row.items())}
    init = {s: p for s, p in mdp.initial_dist.items() if p > 0 and s not in banned}
    total = sum(init.values())
    if total <= 0:
        raise InfeasibleError("every start state is forbidden")
    init = {s: p / total for s, p in init.items()}
    return Mdp(mdp.states, mdp.actions, transition, init, mdp.discount, mdp.goal)


def masked_maxent_train(mdp: Mdp, fmap: FeatureMap, demos: Sequence[Trajectory], cfg: TrainConfig,
                        cset: ConstraintSet, theta0=None, horizon: int | None = None) -> tuple:
    """:func:`maxent_train` on :func:`masked_mdp`; other constraint types are ignored.

    Returns ``(theta_bar, TrainState, masked)``; sample from ``masked``.
    """
    masked = masked_mdp(mdp, cset)
    if horizon is None:
        horizon = default_horizon(mdp)
    maxent_fb(masked, fmap, np.zeros(fmap.dim), horizon)  # raises if disconnected
    theta, state = maxent_train(masked, fmap, demos, cfg, theta0, horizon)
    return theta, state, masked


def uniform_policy(mdp: Mdp) -> np.ndarray:
    avail = mdp.available.astype(float)
    rows = avail.sum(axis=1, keepdims=True)
    return np.divide(avail, rows, out=np.zeros_like(avail), where=rows > 0)


def rollout(mdp: Mdp, policy: np.ndarray, rng: np.random.Generator, n: int,
            horizon: int) -> list:
    """Rollouts of a stationary ``[S, A]`` or time-indexed ``[H, S, A]`` policy.

    Rollouts that miss the goal within ``horizon`` steps are dropped.
    """
    S, A = mdp.states, mdp.actions
    P = mdp.tensor
    goal = mdp.goal_index
    out = []
    for _ in range(n):
        s = int(rng.choice(len(S), p=mdp.d0))
        steps = []
        for t in range(horizon):
            if s == goal:
                break
            pi = policy[t, s] if policy.ndim == 3 else policy[s]
            if pi.sum() <= 0:
                break
            a = int(rng.choice(len(A), p=pi / pi.sum()))
            s2 = int(rng.choice(len(S), p=P[s, a]))
            steps.append((S[s], A[a]))
            s = s2
        if s == goal:
            out.append(Trajectory(tuple(steps), S[s]))
    return out


def _log_policy_prob(traj: Trajectory, mdp: Mdp, policy: np.ndarray) -> float:
    si, ai = mdp.state_index, mdp.action_index
    lp = 0.0
    for t, (s, a) in enumerate(traj.steps):
        p = policy[t, si[s], ai[a]] if policy.ndim == 3 else policy[si[s], ai[a]]
        if p <= 0:
            return -math.inf
        lp += math.log(p)
    return lp


@dataclass
class ReferencePool:
    """Trajectories from the reference policy with features and log proposal terms."""

    trajectories: list = field(default_factory=list)
    features: np.ndarray | None = None
    log_ref: np.ndarray | None = None


def reirl_train(mdp: Mdp, fmap: FeatureMap, demos: Sequence[Trajectory], cfg: TrainConfig,
                reference_policy: np.ndarray | None = None, pool_size: int = 1000,
                min_ess: float = 2.0, max_doublings: int = 6, theta0=None,
                horizon: int | None = None) -> tuple:
    """Relative-entropy IRL: the model expectation is a self-normalized
    importance estimate over a fixed pool of reference-policy trajectories.

    The importance weight of ``tau`` is ``exp(-theta . f(tau)) / pi_ref(tau)``
    (the dynamics cancel). When the effective sample size falls below
    ``min_ess`` a warning is issued and the pool is doubled.
    Returns ``(theta_bar, TrainState)``.
    """
    demo_mean, theta0 = _prepare(mdp, fmap, demos, theta0)
    H = default_horizon(mdp) if horizon is None else int(horizon)
    policy = uniform_policy(mdp) if reference_policy is None else np.asarray(reference_policy)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,)))
    pool = ReferencePool()

    def grow(n):
        new = rollout(mdp, policy, rng, n, H)
        pool.trajectories.extend(new)
        feats = np.array([path_feature(t, fmap, mdp.discount) for t in new]).reshape(len(new), fmap.dim)
        lref = np.array([_log_policy_prob(t, mdp, policy) for t in new])
        pool.features = feats if pool.features is None else np.vstack([pool.features, feats])
        pool.log_ref = lref if pool.log_ref is None else np.concatenate([pool.log_ref, lref])

    grow(pool_size)

    def weights(theta):
        lw = -(pool.features @ theta) - pool.log_ref
        lw = lw - lw.max()
        w = np.exp(lw)
        return w / w.sum()

    def grad(theta, k):
        for _ in range(max_doublings + 1):
            if len(pool.trajectories) > 0:
                w = weights(theta)
                ess = 1.0 / float(np.sum(w ** 2))
                if ess >= min_ess:
                    return demo_mean - w @ pool.features, {"ess": ess}
            warnings.warn(f"reference pool effective sample size below {min_ess}; "
                          f"doubling the pool to {2 * max(1, len(pool.trajectories))}",
                          RuntimeWarning, stacklevel=2)
            grow(max(1, len(pool.trajectories)))
        if len(pool.trajectories) == 0:
            raise InfeasibleError("the reference policy never reaches the goal")
        w = weights(theta)
        return demo_mean - w @ pool.features, {"ess": 1.0 / float(np.sum(w ** 2))}

    state = sgd(theta0, grad, cfg.iterations, cfg.learning_rate,
                max_wall_seconds=cfg.max_wall_seconds)
    return state.theta_bar, state
