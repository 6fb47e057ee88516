"""Constrained maximum-entropy IRL trained with XOR-sampled gradients.

The objective is the negative log-likelihood of the demonstrations under

    P(tau | theta) = exp(-theta . f(tau)) D(tau) I_C(tau) / Z(theta)

which is convex in ``theta``. Its gradient, the demo feature mean minus
``E_P[f]``, is estimated from trajectories drawn with the XOR sampler from
the proposal ``Q ~ I_C exp(-theta . f)`` and reweighted by ``D``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .constraints import ConstraintSet, indicator
from .encoding import encode
from .errors import (ConfigurationError, DegenerateBatchError, InfeasibleError, InputError,
                     LearningRateWarning)
from .exact import EnumeratedSpace, enumerate_space, exact_sample
from .mdp import FeatureMap, Mdp, Trajectory, path_feature, transition_prob
from .oracle import OracleStats
from .sampler import SamplerConfig, batch_sample

GRADIENT_MODES = ("xor", "exact-sampler", "exact")
MAX_TRAIN_DELTA = math.sqrt(2.0)

# spawn-key tags for the per-iteration random streams
_DEMO, _MODEL = 2, 3


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of the training loop.

    ``gradient`` selects how model expectations are obtained: ``"xor"`` (the
    XOR sampler), ``"exact-sampler"`` (i.i.d. draws from the enumerated
    proposal, for verification) or ``"exact"`` (full enumeration, no noise).
    """

    iterations: int = 50
    learning_rate: float = 0.05
    demo_batch: int = 16
    model_batch: int = 8
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(delta=1.3))
    seed: int = 0
    variance_bounds: tuple | None = None
    gradient: str = "xor"
    track_loss: bool = False
    max_wall_seconds: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be at least 1")
        if not self.learning_rate >= 0.0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.demo_batch < 1 or self.model_batch < 1:
            raise ConfigurationError("batch sizes must be at least 1")
        if self.gradient not in GRADIENT_MODES:
            raise ConfigurationError(f"gradient must be one of {GRADIENT_MODES}")
        if self.gradient == "xor" and self.sampler.delta > MAX_TRAIN_DELTA + 1e-12:
            raise ConfigurationError("training requires delta <= sqrt(2)")
        if self.variance_bounds is not None and len(self.variance_bounds) != 2:
            raise ConfigurationError("variance_bounds is (sigma1_sq, sigma2_sq)")


@dataclass
class TrainState:
    """Iterates and bookkeeping; ``iterates[0]`` is ``theta_0``."""

    theta_k: np.ndarray
    iterate_sum: np.ndarray
    k: int = 0
    stats: OracleStats = field(default_factory=OracleStats)
    loss_trace: list | None = None
    iterates: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    stopped_early: bool = False
    variance_bounds: tuple | None = None

    @property
    def theta_bar(self) -> np.ndarray:
        if self.k == 0:
            return self.theta_k.copy()
        return self.iterate_sum / self.k


# -- gradients ----------------------------------------------------------------

def _features(trajs: Sequence[Trajectory], fmap: FeatureMap, discount: float) -> np.ndarray:
    return np.array([path_feature(t, fmap, discount) for t in trajs]).reshape(len(trajs), fmap.dim)


def estimate_gradient(theta, demos: Sequence[Trajectory], model_samples: Sequence[Trajectory],
                      mdp: Mdp, fmap: FeatureMap, discount: float) -> np.ndarray:
    """Stochastic gradient from demos and ``2 * M2`` proposal samples.

    The first half of ``model_samples`` gives the numerator
    ``sum D(tau) f(tau)``, the second half the denominator ``sum D(tau)``.
    ``theta`` is the parameter the proposal was drawn at; the estimator itself
    only needs the samples.
    """
    if len(demos) == 0:
        raise InputError("no demonstrations")
    if len(model_samples) == 0 or len(model_samples) % 2:
        raise InputError("model_samples must hold an even, nonzero number of trajectories")
    m2 = len(model_samples) // 2
    first, second = model_samples[:m2], model_samples[m2:]
    d_first = np.array([transition_prob(t, mdp) for t in first])
    d_second = np.array([transition_prob(t, mdp) for t in second])
    denom = float(d_second.sum())
    if denom <= 0.0:
        raise DegenerateBatchError("all second-half samples have zero transition probability")
    num = d_first @ _features(first, fmap, discount)
    return _features(demos, fmap, discount).mean(axis=0) - num / denom


def _space(mdp, cset, fmap, space):
    if space is None:
        space = enumerate_space(mdp, cset, fmap)
    return space


def _check_discount(space: EnumeratedSpace, discount):
    if discount is not None and not math.isclose(discount, space.discount):
        raise ConfigurationError("discount differs from the model's discount")


def exact_gradient(theta, demo_set: Sequence[Trajectory], mdp: Mdp, cset: ConstraintSet,
                   fmap: FeatureMap, discount: float | None = None,
                   space: EnumeratedSpace | None = None) -> np.ndarray:
    """``E_D[f] - E_P[f]`` by enumeration (``space`` may be passed to reuse one)."""
    space = _space(mdp, cset, fmap, space)
    _check_discount(space, discount)
    demo_mean = _features(demo_set, fmap, space.discount).mean(axis=0)
    return demo_mean - space.with_theta(theta).expected_features()


def nll_exact(theta, demo_set: Sequence[Trajectory], mdp: Mdp, cset: ConstraintSet,
              fmap: FeatureMap, discount: float | None = None,
              space: EnumeratedSpace | None = None) -> float:
    """Mean demo energy plus ``log Z``; the ``log D`` of the demos is omitted."""
    space = _space(mdp, cset, fmap, space)
    _check_discount(space, discount)
    if len(space) == 0:
        raise InfeasibleError("no feasible trajectory")
    theta = np.asarray(theta, dtype=float)
    demo_mean = _features(demo_set, fmap, space.discount).mean(axis=0)
    return float(theta @ demo_mean + space.with_theta(theta).log_partition)


def demo_moments(demo_set, fmap, discount) -> np.ndarray:
    return _features(demo_set, fmap, discount).mean(axis=0)


# -- the shared descent shell --------------------------------------------------

def sgd(theta0, grad_fn: Callable, iterations: int, learning_rate: float,
        state: TrainState | None = None, max_wall_seconds: float | None = None,
        on_step: Callable | None = None) -> TrainState:
    """``theta_{k+1} = theta_k - eta * g_k`` with iterate averaging over ``theta_1..theta_K``.

    ``grad_fn(theta, k)`` returns the gradient estimate, or a pair
    ``(g, info)`` whose ``info`` dict is merged into the trace row.
    """
    theta = np.array(theta0, dtype=float)
    if state is None:
        state = TrainState(theta_k=theta.copy(), iterate_sum=np.zeros_like(theta))
    state.iterates = [theta.copy()]
    t_start = time.perf_counter()
    for k in range(iterations):
        if max_wall_seconds is not None and time.perf_counter() - t_start >= max_wall_seconds:
            state.stopped_early = True
            break
        q0 = state.stats.queries
        t0 = time.perf_counter()
        out = grad_fn(theta, k)
        g, info = out if isinstance(out, tuple) else (out, {})
        g = np.asarray(g, dtype=float)
        theta = theta - learning_rate * g
        state.k += 1
        state.theta_k = theta.copy()
        state.iterate_sum = state.iterate_sum + theta
        state.iterates.append(theta.copy())
        row = {"k": state.k, "grad_norm": float(np.linalg.norm(g)),
               "queries": state.stats.queries - q0,
               "wall_ms": (time.perf_counter() - t0) * 1000.0}
        row.update(info)
        state.trace.append(row)
        if on_step is not None:
            on_step(state, row)
    return state


# -- training -----------------------------------------------------------------

def _stream(seed: int, tag: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, k)))


def validate_demos(demo_set, mdp: Mdp, cset: ConstraintSet) -> None:
    if len(demo_set) == 0:
        raise InputError("the demonstration set is empty")
    for i, t in enumerate(demo_set):
        if not t.is_structurally_valid(mdp):
            raise InputError(f"demonstration {i} is not a start-to-goal trajectory of the model")
        if not indicator(t, cset):
            raise InputError(f"demonstration {i} violates the constraints")


def lr_bound(delta: float, sigma2_sq: float) -> float:
    """Largest learning rate allowed by the convergence condition."""
    if sigma2_sq <= 0:
        return math.inf
    return (2.0 - delta ** 2) / (sigma2_sq * delta)


def _total_variance(feats: np.ndarray) -> float:
    if len(feats) < 2:
        return 0.0
    return float(np.sum(feats.var(axis=0, ddof=1)))


def train(cfg: TrainConfig, env, cset: ConstraintSet, demo_set: Sequence[Trajectory],
          theta0=None, space: EnumeratedSpace | None = None, encoding=None) -> tuple:
    """Run the training loop; returns ``(theta_bar, TrainState)``.

    ``env`` is a pair ``(mdp, fmap)`` (an :class:`~xorirl.presets.Environment`
    works too). ``space`` and ``encoding`` may be supplied to reuse an
    enumeration or a compiled ``(BinaryEncoding, constraints)`` pair.
    """
    mdp, fmap = env[0], env[1]
    discount = mdp.discount
    validate_demos(demo_set, mdp, cset)
    theta0 = np.zeros(fmap.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    if theta0.shape != (fmap.dim,):
        raise ConfigurationError(f"theta0 must have length {fmap.dim}")
    demo_feats = _features(demo_set, fmap, discount)
    demo_mean = demo_feats.mean(axis=0)
    need_space = cfg.gradient != "xor" or cfg.track_loss
    if need_space:
        space = _space(mdp, cset, fmap, space)
        if len(space) == 0:
            raise InfeasibleError("no feasible trajectory")
    if cfg.gradient == "xor":
        enc, base = encode(mdp, cset) if encoding is None else encoding
    if cfg.gradient == "exact-sampler":
        proposal = replace(space, log_d=np.zeros(len(space)))
    state = TrainState(theta_k=theta0.copy(), iterate_sum=np.zeros_like(theta0),
                       loss_trace=[] if cfg.track_loss else None)
    delta = cfg.sampler.delta
    warned = [False]

    def check_lr(sigma2_sq):
        if state.variance_bounds is None:
            state.variance_bounds = (_total_variance(demo_feats), sigma2_sq)
        bound = lr_bound(delta, state.variance_bounds[1])
        if cfg.learning_rate > bound and not warned[0]:
            warned[0] = True
            warnings.warn(f"learning rate {cfg.learning_rate:g} exceeds the convergence bound "
                          f"{bound:.4g} for delta={delta:g}", LearningRateWarning, stacklevel=3)

    if cfg.variance_bounds is not None:
        state.variance_bounds = tuple(float(v) for v in cfg.variance_bounds)
        check_lr(state.variance_bounds[1])

    def grad(theta, k):
        rng = _stream(cfg.seed, _DEMO, k)
        idx = rng.integers(0, len(demo_set), size=cfg.demo_batch)
        demos = [demo_set[i] for i in idx]
        info = {}
        if cfg.gradient == "exact":
            g = demo_mean - space.with_theta(theta).expected_features()
            if k == 0:
                check_lr(float(np.trace(space.with_theta(theta).feature_covariance())))
        else:
            n_model = 2 * cfg.model_batch
            if cfg.gradient == "xor":
                seed = int(_stream(cfg.seed, _MODEL, k).integers(0, 2**63 - 1))
                br = batch_sample(n_model, theta, enc, base, cfg.sampler, seed, fmap, state.stats)
                samples = br.trajectories
                info = {"parity_count": br.parity_count,
                        "first_sample_queries": br.first_sample_queries}
            else:
                samples = exact_sample(proposal.with_theta(theta), _stream(cfg.seed, _MODEL, k),
                                       n_model)
            if k == 0:
                check_lr(_total_variance(_features(samples, fmap, discount)))
            g = estimate_gradient(theta, demos, samples, mdp, fmap, discount)
        return g, info

    def on_step(st, row):
        if cfg.track_loss:
            loss = nll_exact(st.theta_k, demo_set, mdp, cset, fmap, space=space)
            st.loss_trace.append(loss)
            row["nll"] = loss

    sgd(theta0, grad, cfg.iterations, cfg.learning_rate, state, cfg.max_wall_seconds, on_step)
    return state.theta_bar, state
