import math

import numpy as np
import pytest

from conftest import grid
from xorirl.constraints import ConstraintSet, ForbiddenStates
from xorirl.errors import ConfigurationError, InputError
from xorirl.evaluation import (class_distribution, generate, importance_resample, occupancy,
                               path_kl, valid_fraction)
from xorirl.exact import enumerate_space, upper_path
from xorirl.mdp import Trajectory
from xorirl.sampler import SamplerConfig

UPPER = Trajectory.from_states_actions([(0, 0), (0, 1), (0, 2), (1, 2), (2, 2)],
                                      ["up", "up", "right", "right"])
LOWER = Trajectory.from_states_actions([(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)],
                                      ["right", "right", "up", "up"])
DIAG = Trajectory.from_states_actions([(0, 0), (1, 1), (2, 2)], ["diag", "diag"])


def test_valid_fraction_counts_violations():
    cs = ConstraintSet((ForbiddenStates([(1, 0)]),))
    assert valid_fraction([UPPER, UPPER, DIAG, LOWER], cs) == 0.75
    assert valid_fraction([LOWER], cs) == 0.0
    with pytest.raises(InputError):
        valid_fraction([], cs)


def test_occupancy_marginals():
    occ = occupancy([UPPER])
    assert occ[(0, 1)] == 1.0 and occ[(0, 0)] == 1.0
    occ = occupancy([UPPER, LOWER])
    assert occ[(0, 1)] == 0.5 and occ[(1, 0)] == 0.5
    assert occ[(0, 0)] == occ[(2, 2)] == 1.0
    rows = occupancy([UPPER, DIAG], states=[(0, 0), (0, 1), (1, 0), (1, 1)]).grid_rows()
    assert rows == [(0, 0, 1.0), (0, 1, 0.5), (1, 0, 0.0), (1, 1, 0.5)]
    with pytest.raises(InputError):
        occupancy([])


def test_upper_path_classifier():
    assert upper_path(UPPER) and not upper_path(LOWER) and not upper_path(DIAG)
    assert np.allclose(class_distribution([UPPER, LOWER, LOWER, LOWER]), [0.25, 0.75])


def test_path_kl_values():
    model = [UPPER] * 5 + [LOWER] * 5
    demo = [UPPER] * 7 + [LOWER] * 3
    expected = 0.7 * math.log(0.7 / 0.5) + 0.3 * math.log(0.3 / 0.5)
    assert path_kl(model, demo) == pytest.approx(expected, abs=1e-5)
    reverse = 0.5 * math.log(0.5 / 0.7) + 0.5 * math.log(0.5 / 0.3)
    assert path_kl(model, demo, direction="model_demo") == pytest.approx(reverse, abs=1e-5)
    assert path_kl(demo, demo) < 1e-5
    # an empty class stays finite under smoothing
    assert 0 < path_kl([UPPER], [LOWER]) < math.inf
    with pytest.raises(ConfigurationError):
        path_kl(model, demo, direction="both")


def test_importance_resample_proportions(rng):
    n = 20_000
    out = importance_resample([UPPER, LOWER], [3.0, 1.0], n, rng)
    frac = sum(t == UPPER for t in out) / n
    assert abs(frac - 0.75) < 4 * math.sqrt(0.75 * 0.25 / n)
    with pytest.raises(InputError):
        importance_resample([UPPER], [0.0], 1, rng)


def test_generate_on_deterministic_grid():
    mdp, fmap = grid(4)
    cs = ConstraintSet((ForbiddenStates([(1, 2)]),))
    theta = np.array([0.5])
    a = generate(theta, (mdp, fmap), cs, SamplerConfig(delta=1.3), 60, 40, 7)
    b = generate(theta, (mdp, fmap), cs, SamplerConfig(delta=1.3), 60, 40, 7)
    assert a == b and len(a) == 40
    space = enumerate_space(mdp, cs, fmap)
    assert all(space.index_of(t) >= 0 for t in a)
    assert valid_fraction(a, cs) == 1.0
    with pytest.raises(ConfigurationError):
        generate(theta, (mdp, fmap), cs, SamplerConfig(), 10, 20, 0)
