import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from conftest import chain_mdp, grid
from xorirl.constraints import ConstraintSet, ForbiddenStates, MustPass
from xorirl.errors import (ConfigurationError, DegenerateBatchError, InputError,
                           LearningRateWarning)
from xorirl.exact import enumerate_space, exact_sample
from xorirl.learner import (TrainConfig, estimate_gradient, exact_gradient, lr_bound, nll_exact,
                            sgd, train)
from xorirl.mdp import FeatureMap, Trajectory
from xorirl.sampler import SamplerConfig


@pytest.fixture
def setup4():
    mdp, fmap = grid(4, features="cell")
    cs = ConstraintSet((ForbiddenStates([(1, 2)]),))
    space = enumerate_space(mdp, cs, fmap)
    theta_true = np.random.default_rng(2).normal(0, 0.5, fmap.dim)
    demos = exact_sample(space.with_theta(theta_true), np.random.default_rng(3), 200)
    return mdp, fmap, cs, space, demos


def test_estimator_by_hand():
    mdp = chain_mdp(0.5)
    fmap = FeatureMap(1, {k: [1.0] for k in mdp.transition})
    short = Trajectory.from_states_actions(["a", "b", "g"], ["jump", "go"])          # D=1,   f=2
    slip = Trajectory.from_states_actions(["a", "a", "b", "g"], ["go", "go", "go"])  # D=.25, f=3
    g = estimate_gradient(None, [short], [short, slip, slip, short], mdp, fmap, 1.0)
    # numerator over the first half, denominator over the second
    assert g[0] == pytest.approx(2 - (1 * 2 + 0.25 * 3) / (0.25 + 1))


def test_estimator_input_checks():
    mdp, fmap = grid(2)
    t = Trajectory.from_states_actions([(0, 0), (1, 1)], ["diag"])
    with pytest.raises(InputError):
        estimate_gradient(None, [t], [t], mdp, fmap, 1.0)
    with pytest.raises(InputError):
        estimate_gradient(None, [], [t, t], mdp, fmap, 1.0)
    bogus = Trajectory.from_states_actions([(0, 0), (0, 1)], ["diag"])
    with pytest.raises(DegenerateBatchError):
        estimate_gradient(None, [t], [t, bogus], mdp, fmap, 1.0)


def test_exact_gradient_is_derivative_of_nll(setup4):
    mdp, fmap, cs, space, demos = setup4
    theta = np.random.default_rng(5).normal(0, 0.3, fmap.dim)
    g = exact_gradient(theta, demos, mdp, cs, fmap, space=space)
    h = 1e-6
    fd = np.array([(nll_exact(theta + h * e, demos, mdp, cs, fmap, space=space)
                    - nll_exact(theta - h * e, demos, mdp, cs, fmap, space=space)) / (2 * h)
                   for e in np.eye(fmap.dim)])
    assert np.allclose(g, fd, atol=1e-7)


def test_nll_matches_direct_formula(setup4):
    mdp, fmap, cs, space, demos = setup4
    theta = np.full(fmap.dim, 0.1)
    direct = np.mean([-math.log(np.exp(-space.features[space.index_of(t)] @ theta)
                                / space.with_theta(theta).partition) for t in demos])
    assert nll_exact(theta, demos, mdp, cs, fmap, space=space) == pytest.approx(direct)


def test_exact_training_matches_moments(setup4):
    mdp, fmap, cs, space, demos = setup4
    cfg = TrainConfig(iterations=400, learning_rate=1.0, gradient="exact", seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LearningRateWarning)
        _, st = train(cfg, (mdp, fmap), cs, demos, space=space)
    g = exact_gradient(st.theta_k, demos, mdp, cs, fmap, space=space)
    assert np.linalg.norm(g) < 1e-3


def test_sgd_averages_iterates():
    st = sgd(np.zeros(2), lambda th, k: th - np.array([1.0, -2.0]), 3, 0.5)
    assert len(st.iterates) == 4
    assert np.allclose(st.theta_bar, np.mean(st.iterates[1:], axis=0))
    assert [r["k"] for r in st.trace] == [1, 2, 3]


def test_xor_training_is_deterministic_and_moves_toward_optimum(setup4):
    mdp, fmap, cs, space, demos = setup4
    cfg = TrainConfig(iterations=6, learning_rate=0.1, demo_batch=16, model_batch=4, seed=9,
                      sampler=SamplerConfig(delta=1.2))
    runs = []
    for _ in range(2):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LearningRateWarning)
            runs.append(train(cfg, (mdp, fmap), cs, demos, space=space))
    assert np.array_equal(runs[0][0], runs[1][0])
    st = runs[0][1]
    assert st.k == 6 and st.stats.queries > 0
    assert all("parity_count" in r and r["queries"] > 0 for r in st.trace)
    assert nll_exact(st.theta_bar, demos, mdp, cs, fmap, space=space) < \
        nll_exact(np.zeros(fmap.dim), demos, mdp, cs, fmap, space=space)


def test_learning_rate_warning(setup4):
    mdp, fmap, cs, space, demos = setup4
    cfg = TrainConfig(iterations=2, learning_rate=50.0, gradient="exact-sampler", seed=1)
    with pytest.warns(LearningRateWarning):
        train(cfg, (mdp, fmap), cs, demos, space=space)
    assert lr_bound(math.sqrt(2), 3.0) == pytest.approx(0.0)
    assert lr_bound(1.2, 0.0) == math.inf


def test_delta_above_sqrt2_rejected_for_training():
    with pytest.raises(ConfigurationError):
        TrainConfig(sampler=SamplerConfig(delta=1.5))
    with pytest.raises(ConfigurationError):
        TrainConfig(gradient="newton")


def test_invalid_demo_rejected(setup4):
    mdp, fmap, cs, space, demos = setup4
    bad = Trajectory.from_states_actions([(0, 0), (1, 1), (1, 2), (2, 3), (3, 3)],
                                         ["diag", "up", "diag", "right"])
    with pytest.raises(InputError):
        train(TrainConfig(iterations=1), (mdp, fmap), cs, [bad])
    with pytest.raises(InputError):
        train(TrainConfig(iterations=1), (mdp, fmap), cs, [])


def test_wall_budget_stops_early(setup4):
    mdp, fmap, cs, space, demos = setup4
    cfg = TrainConfig(iterations=1000, gradient="exact-sampler", max_wall_seconds=0.0, seed=0)
    _, st = train(cfg, (mdp, fmap), cs, demos, space=space)
    assert st.stopped_early and st.k == 0


def test_loss_tracking(setup4):
    mdp, fmap, cs, space, demos = setup4
    cfg = TrainConfig(iterations=3, learning_rate=0.01, gradient="exact", track_loss=True)
    _, st = train(cfg, (mdp, fmap), cs, demos, space=space)
    assert len(st.loss_trace) == 3
    assert all("nll" in r for r in st.trace)


def test_stochastic_model_exact_sampler_estimates_gradient():
    mdp = chain_mdp(0.4)
    fmap = FeatureMap(2, {("a", "go"): [1.0, 0.0], ("a", "jump"): [0.0, 1.0],
                          ("b", "go"): [0.5, 0.5]})
    cs = ConstraintSet((MustPass("b"),))
    demos = [Trajectory.from_states_actions(["a", "b", "g"], ["jump", "go"])] * 3 + \
            [Trajectory.from_states_actions(["a", "a", "b", "g"], ["go", "jump", "go"])]
    theta = np.array([0.3, -0.2])
    space = enumerate_space(mdp, cs, fmap, horizon=4)
    exact = exact_gradient(theta, demos, mdp, cs, fmap, space=space)
    # proposal without transition probabilities; the estimator reweights by D
    proposal = replace(space, log_d=np.zeros(len(space))).with_theta(theta)
    rng = np.random.default_rng(4)
    est = np.array([estimate_gradient(theta, demos, exact_sample(proposal, rng, 400), mdp, fmap, 1.0)
                    for _ in range(200)])
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    # ratio estimator bias is O(1/M2), far below the Monte Carlo error here
    assert np.all(np.abs(est.mean(axis=0) - exact) < 4 * se + 1e-3)
