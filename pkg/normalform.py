# normalform.py

"""
Averaging iteration. Each step takes H = h + eps*g with h uv-diagonal,
solves the homological equation for S1 on the lowest eps-order part of g,
and pulls H back through the mixed-variable generating function

    S(q, P, y1, z2) = q P + y1 . z2 + eps S1(q, P, y1, z2)

so that p = P + eps S1_q, Q = q + eps S1_P, y2 = z2 + eps S1_y1,
z1 = y1 + eps S1_z2. Inside a series, S1 keeps its mixed arguments in the
ordinary slots: the q slot holds q, the p slot holds P, the y1 slots hold y1
and the y2 slots hold z2.
"""

import logging
from typing import List, Tuple

from pydantic import BaseModel, model_validator

from errors import FixedPointError, InternalConsistencyError, OrderOutOfRangeError
from homological import FrequencySeries, phase_average, solve_homological
from models import TruncationPolicy
from series import TruncatedSeries, compose, diff, zero

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12
CONSISTENCY_TOL = 1e-9


# --------- Domain Models ---------

class HamiltonianSpec(BaseModel):
    """H = h0(I) + eps g0(q, p, y1, y2)"""
    h0: TruncatedSeries
    g0: TruncatedSeries
    policy: TruncationPolicy
    label: str = ""

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @model_validator(mode="after")
    def _check_parts(self):
        if self.h0.policy != self.policy or self.g0.policy != self.policy:
            raise ValueError("h0 and g0 must share one truncation policy")
        if not self.h0.is_diagonal():
            raise ValueError("h0 must depend on the action only")
        if self.h0.eps_range(1).max_abs() > 0:
            raise ValueError("h0 must not depend on eps")
        return self

    @property
    def hamiltonian(self) -> TruncatedSeries:
        return self.h0 + self.g0.eps_shift(1)

    def scale(self) -> float:
        return max(1.0, self.h0.max_abs(), self.g0.max_abs())


class GeneratingFunction(BaseModel):
    """S1 of one step, in the mixed variables (q, P, y1, z2)"""
    s1: TruncatedSeries
    step_index: int

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @model_validator(mode="after")
    def _zero_average(self):
        if phase_average(self.s1).max_abs() > ZERO_TOL * max(1.0, self.s1.max_abs()):
            raise ValueError("S1 must have zero phase average")
        return self


class StepDiagnostic(BaseModel):
    step_index: int
    remainder_order: int
    g_norm: float
    s1_norm: float
    average_norm: float


class NormalFormResult(BaseModel):
    h_final: TruncatedSeries
    remainder: TruncatedSeries
    generators: List[GeneratingFunction] = []
    step_norms: List[float] = []
    diagnostics: List[StepDiagnostic] = []
    # eps * g after each step
    remainders: List[TruncatedSeries] = []
    order: int

    class Config:
        arbitrary_types_allowed = True

    @property
    def steps_taken(self) -> int:
        return len(self.step_norms)

    @property
    def hamiltonian(self) -> TruncatedSeries:
        return self.h_final + self.remainder


# --------- Pullback ---------

def _slow_gradient(sigma: TruncatedSeries, family: int) -> List[TruncatedSeries]:
    n = sigma.policy.n_slow_pairs
    return [diff(sigma, f"y{family}_{j}") for j in range(1, n + 1)]


def _implicit_shifts(sigma: TruncatedSeries, tol: float) -> Tuple[TruncatedSeries, List[TruncatedSeries]]:
    """
    Graded fixed point for the implicit half of the transform:

        dq  = -sigma_P (Q + dq, P, z1 + dy1, z2)
        dy1 = -sigma_z2(Q + dq, P, z1 + dy1, z2)

    Every sweep gains at least one power of eps.
    """
    policy = sigma.policy
    n = policy.n_slow_pairs
    sigma_p = diff(sigma, "p")
    sigma_z2 = _slow_gradient(sigma, 2)
    nil = zero(policy)
    dq = nil
    dy1 = [nil] * n
    last_order = -1
    for sweep in range(policy.max_eps_order + 2):
        shifts = dy1 + [nil] * n
        new_dq = -compose(sigma_p, dq=dq, dslow=shifts)
        new_dy1 = [-compose(term, dq=dq, dslow=shifts) for term in sigma_z2]
        orders = [
            (a - b).lowest_eps_order(tol)
            for a, b in zip([new_dq, *new_dy1], [dq, *dy1])
        ]
        dq, dy1 = new_dq, new_dy1
        live = [order for order in orders if order is not None]
        if not live:
            logger.debug(f"🔁 Fixed point settled after {sweep + 1} sweeps")
            return dq, dy1
        defect_order = min(live)
        if defect_order <= last_order:
            raise FixedPointError(
                f"Fixed-point defect stuck at eps order {defect_order} after sweep {sweep + 1}"
            )
        last_order = defect_order
    raise FixedPointError(f"Fixed point did not settle within {policy.max_eps_order + 2} sweeps")


def pullback_hamiltonian(h: TruncatedSeries, g: TruncatedSeries, s1: TruncatedSeries) -> TruncatedSeries:
    """H = h + eps g expressed in the new variables of the step generated by s1"""
    hamiltonian = h + g.eps_shift(1)
    sigma = s1.eps_shift(1)
    if sigma.is_zero():
        return hamiltonian
    tol = ZERO_TOL * max(1.0, sigma.max_abs())
    n = h.policy.n_slow_pairs
    dq, dy1 = _implicit_shifts(sigma, tol)
    nil = zero(h.policy)
    mixed = dy1 + [nil] * n
    dp = compose(diff(sigma, "q"), dq=dq, dslow=mixed)
    dy2 = [compose(term, dq=dq, dslow=mixed) for term in _slow_gradient(sigma, 1)]
    return compose(hamiltonian, dq=dq, dp=dp, dslow=dy1 + dy2)


def mixed_coordinate_defect(
    h: TruncatedSeries,
    g: TruncatedSeries,
    gen: GeneratingFunction,
    transformed: TruncatedSeries,
) -> TruncatedSeries:
    """
    H(q, P + sigma_q, y1, z2 + sigma_y1) - K(q + sigma_P, P, y1 + sigma_z2, z2)
    as a series in the mixed variables; zero when K is the exact pullback.
    """
    hamiltonian = h + g.eps_shift(1)
    sigma = gen.s1.eps_shift(1)
    n = h.policy.n_slow_pairs
    nil = zero(h.policy)
    old_side = compose(hamiltonian, dp=diff(sigma, "q"), dslow=[nil] * n + _slow_gradient(sigma, 1))
    new_side = compose(transformed, dq=diff(sigma, "p"), dslow=_slow_gradient(sigma, 2) + [nil] * n)
    return old_side - new_side


# --------- Iteration ---------

def normalization_step(
    h: TruncatedSeries,
    g: TruncatedSeries,
    step: int,
) -> Tuple[TruncatedSeries, TruncatedSeries, GeneratingFunction]:
    """One averaging step: (h, g) -> (h_next, g_next, generator)"""
    scale = max(1.0, h.max_abs(), g.max_abs())
    order = g.lowest_eps_order(ZERO_TOL * scale)
    nil = zero(h.policy)
    if order is None:
        return h, nil, GeneratingFunction(s1=nil, step_index=step)
    if g.is_diagonal(ZERO_TOL * scale):
        logger.debug(f"🔁 Step {step}: perturbation is already averaged")
        return h + phase_average(g).eps_shift(1), nil, GeneratingFunction(s1=nil, step_index=step)

    leading = g.eps_part(order)
    s1 = solve_homological(h, leading)
    h_next = h + phase_average(leading).eps_shift(1)
    transformed = pullback_hamiltonian(h, g, s1)

    excess = transformed - h_next
    low = excess.eps_range(0, order + 1)
    if low.max_abs() > CONSISTENCY_TOL * scale:
        raise InternalConsistencyError(
            f"Step {step}: remainder kept eps order <= {order + 1} (max coefficient {low.max_abs():.3e})"
        )
    g_next = excess.eps_range(order + 2).eps_shift(-1).chop(ZERO_TOL * scale).with_real(g.real and h.real)
    logger.debug(
        f"🔁 Step {step}: order {order} -> {g_next.lowest_eps_order()}, |S1| = {s1.max_abs():.3e}"
    )
    return h_next, g_next, GeneratingFunction(s1=s1, step_index=step)


def normal_form(spec: HamiltonianSpec, m: int) -> NormalFormResult:
    """Run m averaging steps (fewer when the perturbation is exhausted)"""
    policy = spec.policy
    if m < 1 or m > policy.max_eps_order:
        raise OrderOutOfRangeError(f"Order {m} outside 1..{policy.max_eps_order} allowed by the policy")
    FrequencySeries.of(spec.h0)

    tol = ZERO_TOL * spec.scale()
    h, g = spec.h0, spec.g0
    generators: List[GeneratingFunction] = []
    step_norms: List[float] = []
    diagnostics: List[StepDiagnostic] = []
    remainders: List[TruncatedSeries] = []
    for step in range(m):
        if g.is_zero(tol):
            logger.info(f"✅ Perturbation exhausted after {step} steps")
            break
        order = g.lowest_eps_order(tol)
        step_norms.append(g.max_abs())
        leading = g.eps_part(order)
        h, g, gen = normalization_step(h, g, step)
        generators.append(gen)
        remainders.append(g.eps_shift(1))
        diagnostics.append(
            StepDiagnostic(
                step_index=step,
                remainder_order=order + 1,
                g_norm=step_norms[-1],
                s1_norm=gen.s1.max_abs(),
                average_norm=phase_average(leading).max_abs(),
            )
        )
        logger.info(f"🔁 Step {step + 1}/{m}: |g| = {step_norms[-1]:.3e}, |S1| = {gen.s1.max_abs():.3e}")

    remainder = g.eps_shift(1)
    remainder_order = remainder.lowest_eps_order(tol)
    if remainder_order is not None and remainder_order < len(step_norms) + 1:
        raise InternalConsistencyError(
            f"Remainder has eps order {remainder_order} after {len(step_norms)} steps"
        )
    if not h.is_diagonal(CONSISTENCY_TOL * spec.scale()):
        raise InternalConsistencyError("Normal form picked up angle-dependent terms")
    return NormalFormResult(
        h_final=h,
        remainder=remainder,
        generators=generators,
        step_norms=step_norms,
        diagnostics=diagnostics,
        remainders=remainders,
        order=m,
    )
