# homological.py

"""
Phase averaging and the homological equation

    {W, w} + g - <g> = 0,    w = w(I, y, eps) uv-diagonal,

solved monomial by monomial: on a circle of constant I the monomial u^k v^l
rotates like exp(i (k - l) phi) and {W, w} = w'(I) dW/dphi. The solution is
the one with zero average, which is polynomial in (u, v) and therefore
analytic at I = 0. A Gauss-Legendre evaluation of the closed-form integral
solution is provided as an independent oracle.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np
from pydantic import BaseModel

from errors import ChartDegeneracyError, DegenerateFrequencyError, NonInvertibleSeriesError
from series import (
    SamplePoint,
    TruncatedSeries,
    diagonal_mask,
    evaluate,
    evaluate_many,
    mul,
    one,
    phase_weights,
    poisson_fast,
)

logger = logging.getLogger(__name__)

INVERTIBLE_TOL = 1e-12
CHART_RADIUS_MIN = 1e-8
QUADRATURE_NODES = 64
QUADRATURE_TOL = 1e-10
QUADRATURE_MAX_DOUBLINGS = 10


# --------- Projections ---------

def phase_average(g: TruncatedSeries) -> TruncatedSeries:
    """(1/2pi) * integral of g over the fast phase: the k == l monomials"""
    arr = np.where(diagonal_mask(g.policy), g.data, 0)
    return TruncatedSeries(g.policy, arr, real=g.real)


def oscillating_part(g: TruncatedSeries) -> TruncatedSeries:
    """<g> - g, the sign convention of the homological equation"""
    return phase_average(g) - g


def action_derivative(w: TruncatedSeries) -> TruncatedSeries:
    """d/dI of a uv-diagonal series: c (uv)^j -> -i j c (uv)^(j-1)"""
    if not w.is_diagonal():
        raise ValueError("action_derivative needs a uv-diagonal series")
    data = w.data
    arr = np.zeros_like(data)
    for j in range(1, min(data.shape[0], data.shape[1])):
        arr[j - 1, j - 1] = -1j * j * data[j, j]
    return TruncatedSeries(w.policy, arr, real=w.real)


def series_inverse(s: TruncatedSeries) -> TruncatedSeries:
    """1/s by the Neumann expansion around the constant term"""
    c0 = s.constant_term()
    if abs(c0) < INVERTIBLE_TOL:
        raise NonInvertibleSeriesError(f"Constant term {c0} is too small to invert")
    rest = (s - c0) * (-1.0 / c0)
    term = one(s.policy)
    total = one(s.policy)
    policy = s.policy
    # rest has no constant term, so its powers vanish after the total graded degree
    for _ in range(policy.max_uv_degree + policy.max_slow_degree + policy.max_eps_order + 1):
        term = mul(term, rest)
        if term.is_zero():
            break
        total = total + term
    return (total * (1.0 / c0)).with_real(s.real)


class FrequencySeries(BaseModel):
    """w'(I) and its inverse within the truncation"""
    wprime: TruncatedSeries
    wprime_inv: TruncatedSeries

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @classmethod
    def of(cls, w: TruncatedSeries) -> "FrequencySeries":
        wprime = action_derivative(w)
        if abs(wprime.constant_term()) < INVERTIBLE_TOL:
            raise DegenerateFrequencyError("dw/dI vanishes at the origin: the fast frequency is degenerate")
        return cls(wprime=wprime, wprime_inv=series_inverse(wprime))


# --------- Homological equation ---------

def solve_homological(w: TruncatedSeries, g: TruncatedSeries) -> TruncatedSeries:
    """
    Zero-average W with {W, w} + g - <g> = 0.

    Each off-diagonal monomial of <g> - g is divided by i (k - l) and the
    result multiplied by 1/w'. The diagonal of W is zero, which is the
    constant of integration that keeps W analytic at I = 0.
    """
    freq = FrequencySeries.of(w)
    g_tilde = oscillating_part(g)
    weights = phase_weights(g.policy)
    off = weights != 0
    arr = np.zeros_like(g_tilde.data)
    arr[off] = g_tilde.data[off] / (1j * weights[off])
    angular = TruncatedSeries(g.policy, arr, real=g.real)
    solution = mul(angular, freq.wprime_inv).with_real(g.real and w.real)
    logger.debug(f"solve_homological: {g.nnz} terms in, {solution.nnz} terms out")
    return solution


def homological_residual(w: TruncatedSeries, W: TruncatedSeries, g: TruncatedSeries) -> TruncatedSeries:
    return poisson_fast(W, w) + g - phase_average(g)


# --------- Quadrature oracle ---------

@lru_cache(maxsize=16)
def _legendre(nodes: int):
    return np.polynomial.legendre.leggauss(nodes)


def _gauss_legendre(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, panels: int) -> complex:
    x, w = _legendre(QUADRATURE_NODES)
    edges = np.linspace(a, b, panels + 1)
    half = (edges[1:] - edges[:-1]) / 2.0
    mid = (edges[1:] + edges[:-1]) / 2.0
    points = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    values = np.asarray(f(points)).reshape(panels, QUADRATURE_NODES)
    return complex(np.sum(half * (values @ w)))


def integrate(f: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> complex:
    """Composite Gauss-Legendre, doubling the panels until the value settles"""
    if a == b:
        return 0j
    panels = 1
    previous = _gauss_legendre(f, a, b, panels)
    for _ in range(QUADRATURE_MAX_DOUBLINGS):
        panels *= 2
        current = _gauss_legendre(f, a, b, panels)
        if abs(current - previous) < QUADRATURE_TOL * max(1.0, abs(current)):
            return current
        previous = current
    logger.warning(f"⚠️ Quadrature on [{a}, {b}] did not settle after {panels} panels")
    return previous


def _circle(point: Union[SamplePoint, Sequence]):
    q, p, y, eps = point
    action = (q * q + p * p) / 2.0
    rho = math.sqrt(action)
    if rho < CHART_RADIUS_MIN:
        raise ChartDegeneracyError(f"Point ({q}, {p}) is too close to I = 0 for the angle chart")
    radius = math.sqrt(2.0 * action)
    phi = math.atan2(-p, q)
    y = np.asarray(y, dtype=float)
    return radius, phi, y, eps


def _on_circle(g: TruncatedSeries, radius: float, y: np.ndarray, eps: float):
    def values(psi: np.ndarray) -> np.ndarray:
        return evaluate_many(g, radius * np.cos(psi), -radius * np.sin(psi), y, eps)
    return values


def phase_average_quadrature(g: TruncatedSeries, point: Union[SamplePoint, Sequence]) -> complex:
    radius, _, y, eps = _circle(point)
    return integrate(_on_circle(g, radius, y, eps), 0.0, 2.0 * math.pi) / (2.0 * math.pi)


def integral_formula_eval(
    w: TruncatedSeries,
    g: TruncatedSeries,
    point: Union[SamplePoint, Sequence],
    centered: bool = True,
) -> complex:
    """
    Closed-form solution (1/w') (1/2 int_0^phi g~ + 1/2 int_pi^phi g~) at one point,
    phi measured so that u ~ exp(i phi) (q = r cos phi, p = -r sin phi).

    The closed form carries its own constant of integration, an analytic
    function of I; centered=True removes its circle mean so the value is
    comparable with solve_homological.
    """
    radius, phi, y, eps = _circle(point)
    g_on_circle = _on_circle(g, radius, y, eps)
    mean = integrate(g_on_circle, 0.0, 2.0 * math.pi) / (2.0 * math.pi)

    def g_tilde(psi: np.ndarray) -> np.ndarray:
        return mean - g_on_circle(psi)

    wprime = evaluate(FrequencySeries.of(w).wprime, point)
    head = integrate(g_tilde, 0.0, phi)
    if centered:
        # circle mean of the raw closed form, up to the factor 1/w'
        weighted = integrate(lambda psi: psi * g_tilde(psi), 0.0, 2.0 * math.pi) / (2.0 * math.pi)
        return (head + weighted) / wprime
    return (head - 0.5 * integrate(g_tilde, 0.0, math.pi)) / wprime
