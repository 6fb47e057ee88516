import warnings

import numpy as np
import pytest

from conftest import chain_mdp, grid
from xorirl.baselines import (maxent_fb, maxent_train, masked_maxent_train, masked_mdp,
                              reirl_train, rollout, uniform_policy)
from xorirl.constraints import ConstraintSet, ExactlyOneOf, ForbiddenStates, indicator
from xorirl.errors import ConfigurationError, InfeasibleError
from xorirl.exact import enumerate_space, exact_sample
from xorirl.learner import TrainConfig
from xorirl.mdp import FeatureMap, default_horizon


def _check_against_enumeration(mdp, fmap, theta, horizon):
    table = maxent_fb(mdp, fmap, theta, horizon)
    space = enumerate_space(mdp, ConstraintSet(), fmap, horizon=horizon, theta=theta)
    assert table.partition == pytest.approx(space.partition, rel=1e-9)
    assert np.allclose(table.expected_features(fmap), space.expected_features(), rtol=1e-9,
                       atol=1e-12)
    assert np.allclose(table.state_freq.sum(axis=1), 1.0)
    return table, space


@pytest.mark.parametrize("w,features,discount", [(3, "cell", 1.0), (4, "cell", 0.9),
                                                 (5, "distance", 1.0)])
def test_partition_matches_enumeration_on_grids(w, features, discount):
    mdp, fmap = grid(w, features=features, discount=discount)
    theta = np.random.default_rng(w).normal(0, 0.7, fmap.dim)
    _check_against_enumeration(mdp, fmap, theta, default_horizon(mdp))


def test_partition_matches_enumeration_on_stochastic_chain():
    mdp = chain_mdp(0.35)
    fmap = FeatureMap(2, {("a", "go"): [1.0, 0.0], ("a", "jump"): [0.0, 1.0],
                          ("b", "go"): [0.5, 0.5]})
    for horizon in (2, 3, 5):
        _check_against_enumeration(mdp, fmap, np.array([0.4, -0.3]), horizon)


def test_samples_follow_the_maxent_distribution(rng):
    mdp, fmap = grid(3, features="cell")
    theta = np.random.default_rng(1).normal(0, 1.0, fmap.dim)
    table, space = _check_against_enumeration(mdp, fmap, theta, default_horizon(mdp))
    n = 20_000
    counts = np.zeros(len(space))
    for t in table.sample(rng, n):
        assert t.is_structurally_valid(mdp)
        counts[space.index_of(t)] += 1
    se = np.sqrt(space.probs * (1 - space.probs) / n)
    assert np.all(np.abs(counts / n - space.probs) < 5 * se + 1e-12)


def test_goal_required_and_unreachable_horizon():
    mdp, fmap = grid(4)
    with pytest.raises(InfeasibleError):
        maxent_fb(mdp, fmap, np.zeros(1), horizon=2)


def test_maxent_training_matches_demo_moments(rng):
    mdp, fmap = grid(3, features="cell")
    truth = enumerate_space(mdp, ConstraintSet(), fmap, theta=np.linspace(-0.5, 0.5, fmap.dim))
    demos = exact_sample(truth, rng, 300)
    cfg = TrainConfig(iterations=300, learning_rate=1.0, gradient="exact", seed=0)
    _, st = maxent_train(mdp, fmap, demos, cfg)
    model = maxent_fb(mdp, fmap, st.theta_k).expected_features(fmap)
    demo_mean = np.mean([truth.features[truth.index_of(t)] for t in demos], axis=0)
    assert np.linalg.norm(model - demo_mean) < 1e-3


def test_masked_mdp_removes_forbidden_states():
    mdp, fmap = grid(4)
    cs = ConstraintSet((ForbiddenStates([(1, 2), (2, 2)]),))
    masked = masked_mdp(mdp, cs)
    space = enumerate_space(masked, ConstraintSet(), fmap)
    assert len(space) == len(enumerate_space(mdp, cs, fmap))
    # every path of the masked model avoids the forbidden cells
    assert all(indicator(t, cs) == 1 for t in space.trajectories)
    # constraints that forbid nothing leave the model unchanged
    assert masked_mdp(mdp, ConstraintSet((ExactlyOneOf([(1, 1)]),))) is mdp
    with pytest.raises(InfeasibleError):
        masked_mdp(mdp, ConstraintSet((ForbiddenStates([(3, 3)]),)))


def test_masked_training_only_places_mass_on_allowed_paths(rng):
    mdp, fmap = grid(4)
    cs = ConstraintSet((ForbiddenStates([(1, 2)]),))
    demos = exact_sample(enumerate_space(mdp, cs, fmap), rng, 50)
    cfg = TrainConfig(iterations=20, learning_rate=0.1, gradient="exact", seed=0)
    theta, _, masked = masked_maxent_train(mdp, fmap, demos, cfg, cs)
    samples = maxent_fb(masked, fmap, theta).sample(rng, 200)
    assert all(indicator(t, cs) == 1 for t in samples)


def test_rollouts_of_uniform_policy(rng):
    mdp, _ = grid(3)
    pi = uniform_policy(mdp)
    assert np.allclose(pi[mdp.available.any(axis=1)].sum(axis=1), 1.0)
    out = rollout(mdp, pi, rng, 100, default_horizon(mdp))
    assert len(out) == 100
    assert all(t.is_structurally_valid(mdp) for t in out)


def test_reirl_reduces_gradient_and_is_deterministic(rng):
    mdp, fmap = grid(3, features="cell")
    truth = enumerate_space(mdp, ConstraintSet(), fmap, theta=np.linspace(-0.5, 0.5, fmap.dim))
    demos = exact_sample(truth, rng, 200)
    cfg = TrainConfig(iterations=60, learning_rate=0.5, seed=3)
    a, st = reirl_train(mdp, fmap, demos, cfg, pool_size=2000)
    b, _ = reirl_train(mdp, fmap, demos, cfg, pool_size=2000)
    assert np.array_equal(a, b)
    assert st.trace[-1]["grad_norm"] < 0.5 * st.trace[0]["grad_norm"]


def test_reirl_warns_when_pool_degenerates(rng):
    mdp, fmap = grid(3, features="cell")
    demos = exact_sample(enumerate_space(mdp, ConstraintSet(), fmap), rng, 20)
    cfg = TrainConfig(iterations=1, learning_rate=0.1, seed=0)
    with pytest.warns(RuntimeWarning, match="effective sample size"):
        reirl_train(mdp, fmap, demos, cfg, pool_size=1, min_ess=50.0, max_doublings=2)


def test_invalid_demos_rejected():
    mdp, fmap = grid(3)
    with pytest.raises(ConfigurationError):
        maxent_train(mdp, fmap, [], TrainConfig(iterations=1, gradient="exact"))
