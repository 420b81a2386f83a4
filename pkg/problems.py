# problems.py

import json
import logging
from math import comb
from pathlib import Path
from typing import Dict, List, Union

from pydantic import ValidationError

from errors import DegreeOverflowError, ProblemParseError
from models import ExperimentBlock, G0Term, ProblemFile, TruncationBlock
from normalform import HamiltonianSpec
from series import TruncatedSeries, from_action_polynomial, slow_names, variable, zero

logger = logging.getLogger(__name__)


# --------- Parsing ---------

def parse_problem(text: str) -> ProblemFile:
    """Problem JSON -> ProblemFile, every failure as ProblemParseError"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemParseError(f"Malformed problem JSON: {exc}")
    try:
        return ProblemFile.model_validate(raw)
    except ValidationError as exc:
        raise ProblemParseError(f"Invalid problem file: {exc}")


def load_problem(path: Union[str, Path]) -> ProblemFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemParseError(f"Cannot read problem file {path}: {exc}")
    return parse_problem(text)


def dump_problem(problem: ProblemFile) -> str:
    return json.dumps(problem.model_dump(mode="json", exclude_none=True), indent=2)


def build_spec(problem: ProblemFile) -> HamiltonianSpec:
    """Turn the user-facing polynomial data into series"""
    policy = problem.policy()
    h0 = from_action_polynomial(problem.h0_coeffs, policy)

    q = variable(policy, "q")
    p = variable(policy, "p")
    slow = [variable(policy, name) for name in slow_names(policy)]
    g0: TruncatedSeries = zero(policy)
    for term in problem.g0_terms:
        powers = term.y or [0] * len(slow)
        if term.q + term.p > policy.max_uv_degree or sum(powers) > policy.max_slow_degree:
            raise DegreeOverflowError(
                f"g0 term {term.model_dump()} exceeds the truncation "
                f"(max_uv_degree={policy.max_uv_degree}, max_slow_degree={policy.max_slow_degree})"
            )
        monomial = (q ** term.q) * (p ** term.p)
        for base, power in zip(slow, powers):
            if power:
                monomial = monomial * base ** power
        g0 = g0 + monomial * term.coeff
    logger.debug(f"build_spec({problem.name}): h0 {h0.nnz} terms, g0 {g0.nnz} terms")
    return HamiltonianSpec(h0=h0, g0=g0, policy=policy, label=problem.label or problem.name)


# --------- Built-in examples ---------

def _binomial_terms(power: int, fast: str, slot: int, coeff: float) -> List[G0Term]:
    """coeff * (fast + y_slot)^power with one slow pair"""
    terms = []
    for k in range(power + 1):
        y = [0, 0]
        y[slot] = power - k
        terms.append(G0Term(**{fast: k}, y=y, coeff=coeff * comb(power, k)))
    return terms


def _landau_terms(quartic: bool) -> List[G0Term]:
    # V(x1, x2) with x1 = q + y1, x2 = p + y2
    terms = _binomial_terms(2, "q", 0, 0.5) + _binomial_terms(2, "p", 1, 0.5)
    if quartic:
        terms += _binomial_terms(4, "q", 0, 0.125) + _binomial_terms(4, "p", 1, 0.125)
    return terms


BUILTIN_PROBLEMS: Dict[str, ProblemFile] = {
    "landau": ProblemFile(
        name="landau",
        label="Constant magnetic field with a small electric potential V = (x1^2 + x2^2)/2",
        h0_coeffs=[0.0, 1.0],
        g0_terms=_landau_terms(quartic=False),
        truncation=TruncationBlock(max_uv_degree=4, max_slow_degree=2, max_eps_order=5),
        experiments=ExperimentBlock(),
    ),
    "landau_quartic": ProblemFile(
        name="landau_quartic",
        label="Magnetic field with V = (x1^2 + x2^2)/2 + (x1^4 + x2^4)/8",
        h0_coeffs=[0.0, 1.0],
        g0_terms=_landau_terms(quartic=True),
        truncation=TruncationBlock(max_uv_degree=8, max_slow_degree=4, max_eps_order=4),
        experiments=ExperimentBlock(eps_list=[0.02, 0.01, 0.005], orders=[1, 2]),
    ),
    "averaged": ProblemFile(
        name="averaged",
        label="Angle-independent perturbation I*y1 + y2^2/2",
        h0_coeffs=[0.0, 1.0],
        g0_terms=[
            G0Term(q=2, y=[1, 0], coeff=0.5),
            G0Term(p=2, y=[1, 0], coeff=0.5),
            G0Term(y=[0, 2], coeff=0.5),
        ],
        truncation=TruncationBlock(max_uv_degree=4, max_slow_degree=2, max_eps_order=3),
        experiments=ExperimentBlock(orders=[1]),
    ),
}
