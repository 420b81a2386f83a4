import pytest

from models import TruncationPolicy
from normalform import normal_form
from problems import BUILTIN_PROBLEMS, build_spec


@pytest.fixture
def small_policy():
    return TruncationPolicy(max_uv_degree=4, max_slow_degree=2, max_eps_order=2, n_slow_pairs=1)


@pytest.fixture
def roomy_policy():
    # products of degree-2 inputs never hit the bounds
    return TruncationPolicy(max_uv_degree=6, max_slow_degree=6, max_eps_order=3, n_slow_pairs=1)


@pytest.fixture(scope="session")
def landau_problem():
    return BUILTIN_PROBLEMS["landau"]


@pytest.fixture(scope="session")
def landau_spec(landau_problem):
    return build_spec(landau_problem)


@pytest.fixture(scope="session")
def landau_m2(landau_spec):
    return normal_form(landau_spec, 2)


@pytest.fixture
def degenerate_problem_json():
    return """{
  "schema_version": 1,
  "name": "flat",
  "h0_coeffs": [1.0],
  "g0_terms": [{"q": 1, "coeff": 1.0}],
  "truncation": {"max_uv_degree": 4, "max_slow_degree": 2, "max_eps_order": 2}
}"""
