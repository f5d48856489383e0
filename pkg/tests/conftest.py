from fractions import Fraction

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from dyadiclab.core import CubeId, DyadicModel, StepFunction

settings.register_profile("lab", max_examples=40, deadline=None)
settings.load_profile("lab")

SMALL_MODELS = [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2)]

rationals = st.fractions(min_value=-4, max_value=4, max_denominator=6)
positive_rationals = st.fractions(min_value=Fraction(1, 4), max_value=4, max_denominator=6)


@st.composite
def models(draw, shapes=SMALL_MODELS):
    n, d = draw(st.sampled_from(shapes))
    return DyadicModel(n, d)


@st.composite
def step_functions(draw, model, values=rationals):
    vals = draw(st.lists(values, min_size=model.num_cells, max_size=model.num_cells))
    return StepFunction(model, vals, exact=True)


@st.composite
def cubes(draw, model, max_level=None):
    top = model.depth if max_level is None else max_level
    k = draw(st.integers(0, top))
    pos = tuple(draw(st.integers(0, 2**k - 1)) for _ in range(model.n))
    return CubeId(k, pos)


def to_list(f: StepFunction):
    return [Fraction(v) for v in f.values]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def m12():
    return DyadicModel(1, 2)
