import numpy as np
import pytest

from confperm.data import Dataset, split
from confperm.learners import LearnerSpec
from confperm.synthdata import BernoulliJoint, ClassGenParams, gen_classification


def make_confounded(n: int = 200, correlation: float = 0.8, beta: float = 1.0, theta: float = 1.0, seed: int = 7, p: int = 3):
    params = ClassGenParams(n=n, joint=BernoulliJoint.symmetric(correlation), beta=beta, theta=theta, rho=0.5, p=p)
    return gen_classification(params, np.random.default_rng(seed))


@pytest.fixture
def learner():
    return LearnerSpec()


@pytest.fixture
def confounded():
    return make_confounded()


@pytest.fixture
def confounded_split(confounded):
    return split(confounded, 0.5, "joint", seed=1)


@pytest.fixture
def balanced():
    """100 rows, 25 in each (confounder, label) cell."""
    rng = np.random.default_rng(3)
    return Dataset(
        features=rng.standard_normal((100, 2)),
        response=np.tile([0.0, 1.0], 50),
        confounder=np.repeat(["A", "B"], 50),
        task="classification",
        ids=[f"r{i}" for i in range(100)],
    )
