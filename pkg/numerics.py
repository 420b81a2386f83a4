# numerics.py

"""
Numeric validation: Hamiltonian flows in (q, p, y1, y2), point evaluation and
Newton inversion of the mixed-variable transforms, drift experiments for the
adiabatic invariant, symplecticity and energy checks.

States are ordered (q, p, y1_1..y1_n, y2_1..y2_n) and move by x' = Omega grad H.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, computed_field, field_serializer
from scipy.integrate import solve_ivp

from errors import DimensionMismatchError, EpsilonTooLargeError, EpsListError, PolicyMismatchError, StepSizeError
from models import FlowConfig, TruncationPolicy
from normalform import GeneratingFunction, HamiltonianSpec, NormalFormResult, normal_form
from series import SQRT2, TruncatedSeries, diff, shape_of, slow_names

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-14
NEWTON_MAX_ITER = 50
CONTRACTION_MARGIN = 0.5
FD_STEP = 1e-5
DEFAULT_INITIAL_ACTIONS = (0.0, 1e-4, 0.1, 0.5)
DEFAULT_SLOW_PAIR = (0.3, -0.2)
DT_HALVINGS = 4
# a drift is trusted only this far above the flow energy error
NOISE_FACTOR = 100.0


# --------- Compiled evaluation ---------

def state_names(policy: TruncationPolicy) -> List[str]:
    return ["q", "p"] + slow_names(policy)


def symplectic_matrix(n_slow_pairs: int) -> np.ndarray:
    size = 2 + 2 * n_slow_pairs
    omega = np.zeros((size, size))
    omega[0, 1], omega[1, 0] = 1.0, -1.0
    for j in range(n_slow_pairs):
        a, b = 2 + j, 2 + n_slow_pairs + j
        omega[a, b], omega[b, a] = 1.0, -1.0
    return omega


class CompiledSeries:
    """Evaluates a stack of series on the union of their monomials"""

    def __init__(self, series: Sequence[TruncatedSeries]):
        if not series:
            raise ValueError("CompiledSeries needs at least one series")
        policy = series[0].policy
        if any(s.policy != policy for s in series):
            raise PolicyMismatchError("All compiled series must share one policy")
        stacked = np.stack([s.data for s in series])
        support = np.any(stacked != 0, axis=0)
        self.policy = policy
        self.size = len(series)
        self.shape = shape_of(policy)
        self.exponents = np.argwhere(support)
        self.coefficients = stacked[:, support]

    def __call__(self, x: np.ndarray, eps: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n_slow = 2 * self.policy.n_slow_pairs
        if x.shape != (2 + n_slow,):
            raise DimensionMismatchError(f"State needs {2 + n_slow} entries, got shape {x.shape}")
        if not len(self.exponents):
            return np.zeros(self.size)
        q, p = x[0], x[1]
        bases = [(q - 1j * p) / SQRT2, (p - 1j * q) / SQRT2, *x[2:], eps]
        monomials = np.ones(len(self.exponents), dtype=complex)
        for axis, base in enumerate(bases):
            powers = complex(base) ** np.arange(self.shape[axis])
            monomials *= powers[self.exponents[:, axis]]
        return (self.coefficients @ monomials).real


class CompiledHamiltonian:
    """Value, gradient and Hessian of one series over the state variables"""

    def __init__(self, hamiltonian: TruncatedSeries):
        names = state_names(hamiltonian.policy)
        gradient = [diff(hamiltonian, name) for name in names]
        self.dim = len(names)
        self.omega = symplectic_matrix(hamiltonian.policy.n_slow_pairs)
        self.value = CompiledSeries([hamiltonian])
        self.gradient = CompiledSeries(gradient)
        self.hessian = CompiledSeries([diff(first, name) for first in gradient for name in names])

    def energy(self, x: np.ndarray, eps: float) -> float:
        return float(self.value(x, eps)[0])

    def vector_field(self, x: np.ndarray, eps: float) -> np.ndarray:
        return self.omega @ self.gradient(x, eps)

    def jacobian(self, x: np.ndarray, eps: float) -> np.ndarray:
        return self.omega @ self.hessian(x, eps).reshape(self.dim, self.dim)


def _newton(
    residual: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    error: type,
) -> np.ndarray:
    """Damped Newton; error is raised when the iteration stops contracting"""
    x = np.array(x0, dtype=float)
    value, jac = residual(x)
    norm = float(np.max(np.abs(value)))
    for _ in range(max_iter):
        if norm <= tol * (1.0 + float(np.max(np.abs(x)))):
            return x
        try:
            step = np.linalg.solve(jac, value)
        except np.linalg.LinAlgError as exc:
            raise error(f"Singular Newton matrix: {exc}")
        damping = 1.0
        while True:
            trial = x - damping * step
            trial_value, trial_jac = residual(trial)
            trial_norm = float(np.max(np.abs(trial_value)))
            if trial_norm < norm or damping < 1.0 / 1024:
                break
            damping /= 2.0
        if not trial_norm < norm:
            raise error(f"Newton iteration stopped contracting at residual {norm:.3e}")
        x, value, jac, norm = trial, trial_value, trial_jac, trial_norm
    if norm <= tol * (1.0 + float(np.max(np.abs(x)))):
        return x
    raise error(f"Newton iteration did not converge in {max_iter} steps (residual {norm:.3e})")


# --------- Flows ---------

class TrajectoryReport(BaseModel):
    state_names: List[str] = []
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    transformed_action: np.ndarray
    drift: float

    class Config:
        arbitrary_types_allowed = True

    @field_serializer("times", "states", "energy", "transformed_action")
    def _as_lists(self, value: np.ndarray) -> list:
        return value.tolist()

    @computed_field
    @property
    def energy_error(self) -> float:
        return _energy_error(self.energy)


def _energy_error(energy: np.ndarray) -> float:
    return float(np.max(np.abs(energy - energy[0])))


def _sample_indices(n_steps: int, max_samples: int) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, n_steps, min(max_samples, n_steps + 1))).astype(int))


def _implicit_midpoint_step(field: CompiledHamiltonian, x: np.ndarray, dt: float, eps: float, tol: float) -> np.ndarray:
    identity = np.eye(field.dim)

    def residual(x_new: np.ndarray):
        mid = (x + x_new) / 2.0
        value = x_new - x - dt * field.vector_field(mid, eps)
        jac = identity - dt / 2.0 * field.jacobian(mid, eps)
        return value, jac

    guess = x + dt * field.vector_field(x, eps)
    return _newton(residual, guess, tol, NEWTON_MAX_ITER, StepSizeError)


def _rk4_step(field: CompiledHamiltonian, x: np.ndarray, dt: float, eps: float) -> np.ndarray:
    k1 = field.vector_field(x, eps)
    k2 = field.vector_field(x + dt / 2.0 * k1, eps)
    k3 = field.vector_field(x + dt / 2.0 * k2, eps)
    k4 = field.vector_field(x + dt * k3, eps)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_states(
    field: CompiledHamiltonian,
    x0: np.ndarray,
    eps: float,
    cfg: FlowConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sampled (times, states) of the flow from x0 over [0, cfg.t_final]"""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (field.dim,):
        raise DimensionMismatchError(f"Initial state needs {field.dim} entries, got shape {x0.shape}")

    if cfg.method == "dop853":
        times = np.linspace(0.0, cfg.t_final, cfg.max_samples)
        solution = solve_ivp(
            lambda t, x: field.vector_field(x, eps),
            (0.0, cfg.t_final),
            x0,
            method="DOP853",
            t_eval=times,
            rtol=cfg.rtol,
            atol=cfg.atol,
            max_step=cfg.max_step or np.inf,
        )
        if not solution.success:
            raise StepSizeError(f"DOP853 failed: {solution.message}")
        return solution.t, solution.y.T

    n_steps = max(1, math.ceil(cfg.t_final / cfg.dt - 1e-12))
    dt = cfg.t_final / n_steps
    keep = _sample_indices(n_steps, cfg.max_samples)
    states = np.empty((len(keep), field.dim))
    states[0] = x0
    slot = 1
    x = x0
    for step in range(1, n_steps + 1):
        if cfg.method == "implicit-midpoint":
            x = _implicit_midpoint_step(field, x, dt, eps, cfg.tol)
        else:
            x = _rk4_step(field, x, dt, eps)
        if slot < len(keep) and keep[slot] == step:
            states[slot] = x
            slot += 1
    return keep * dt, states


def flow(
    hamiltonian: TruncatedSeries,
    x0: np.ndarray,
    eps: float,
    cfg: FlowConfig,
    gens: Optional[Sequence[GeneratingFunction]] = None,
) -> TrajectoryReport:
    """
    Trajectory of H from x0. J(t) = (Q^2 + P^2)/2 is measured in the variables
    produced by gens (the original variables when gens is empty).
    """
    field = CompiledHamiltonian(hamiltonian)
    times, states = integrate_states(field, x0, eps, cfg)
    energy = np.array([field.energy(x, eps) for x in states])
    action = transformed_actions(gens or [], states, eps)
    drift = float(np.max(np.abs(action - action[0])))
    logger.debug(f"🔁 flow: {len(times)} samples, drift {drift:.3e}, energy error {np.ptp(energy):.3e}")
    return TrajectoryReport(
        state_names=state_names(hamiltonian.policy),
        times=times,
        states=states,
        energy=energy,
        transformed_action=action,
        drift=drift,
    )


# --------- Transforms ---------

class CompiledGenerator:
    """Gradient and Hessian of eps-independent evaluation of one S1"""

    def __init__(self, gen: GeneratingFunction):
        policy = gen.s1.policy
        names = state_names(policy)
        gradient = [diff(gen.s1, name) for name in names]
        n = policy.n_slow_pairs
        self.n = n
        self.dim = len(names)
        self.gradient = CompiledSeries(gradient)
        self.hessian = CompiledSeries([diff(first, name) for first in gradient for name in names])
        # slots (q, y1) and (P, z2) of the mixed argument
        self.old_slots = [0] + [2 + j for j in range(n)]
        self.new_slots = [1] + [2 + n + j for j in range(n)]

    def contraction_margin(self, mixed: np.ndarray, eps: float, unknowns: List[int], equations: List[int]) -> float:
        block = self.hessian(mixed, eps).reshape(self.dim, self.dim)[np.ix_(equations, unknowns)]
        return abs(eps) * (self.n + 1) * float(np.max(np.abs(block)))

    def _solve(self, x: np.ndarray, eps: float, unknowns: List[int], equations: List[int]) -> np.ndarray:
        """Solve mixed[unknowns] + eps grad[equations](mixed) = x[unknowns] for the mixed point"""
        target = x[unknowns]
        margin = self.contraction_margin(x, eps, unknowns, equations)
        if margin >= CONTRACTION_MARGIN:
            raise EpsilonTooLargeError(
                f"eps = {eps} gives contraction margin {margin:.3f} >= {CONTRACTION_MARGIN}"
            )
        identity = np.eye(len(unknowns))
        mixed = np.array(x, dtype=float)

        def residual(values: np.ndarray):
            point = mixed.copy()
            point[unknowns] = values
            value = values + eps * self.gradient(point, eps)[equations] - target
            hess = self.hessian(point, eps).reshape(self.dim, self.dim)
            return value, identity + eps * hess[np.ix_(equations, unknowns)]

        mixed[unknowns] = _newton(residual, target, NEWTON_TOL, NEWTON_MAX_ITER, EpsilonTooLargeError)
        return mixed

    def forward(self, x_new: np.ndarray, eps: float) -> np.ndarray:
        """(Q, P, z1, z2) -> (q, p, y1, y2)"""
        if eps == 0:
            return np.array(x_new, dtype=float)
        # Q = q + eps S_P and z1 = y1 + eps S_z2 fix (q, y1)
        mixed = self._solve(x_new, eps, self.old_slots, self.new_slots)
        grad = self.gradient(mixed, eps)
        x_old = mixed.copy()
        x_old[self.new_slots] = mixed[self.new_slots] + eps * grad[self.old_slots]
        return x_old

    def inverse(self, x_old: np.ndarray, eps: float) -> np.ndarray:
        """(q, p, y1, y2) -> (Q, P, z1, z2)"""
        if eps == 0:
            return np.array(x_old, dtype=float)
        # p = P + eps S_q and y2 = z2 + eps S_y1 fix (P, z2)
        mixed = self._solve(x_old, eps, self.new_slots, self.old_slots)
        grad = self.gradient(mixed, eps)
        x_new = mixed.copy()
        x_new[self.old_slots] = mixed[self.old_slots] + eps * grad[self.new_slots]
        return x_new


@lru_cache(maxsize=256)
def compile_generator(gen: GeneratingFunction) -> CompiledGenerator:
    return CompiledGenerator(gen)


def transform_point(
    gens: Sequence[GeneratingFunction],
    x: np.ndarray,
    eps: float,
    direction: str = "inverse",
) -> np.ndarray:
    """
    Compose the step transforms at one point. "forward" maps the final new
    variables back to the original ones (last step first); "inverse" maps
    original variables to the final new ones (first step first).
    """
    x = np.asarray(x, dtype=float)
    if direction == "forward":
        for gen in reversed(list(gens)):
            x = compile_generator(gen).forward(x, eps)
        return x
    if direction == "inverse":
        for gen in gens:
            x = compile_generator(gen).inverse(x, eps)
        return x
    raise ValueError(f"direction must be 'forward' or 'inverse', got '{direction}'")


def transformed_actions(gens: Sequence[GeneratingFunction], states: np.ndarray, eps: float) -> np.ndarray:
    """J = (Q^2 + P^2)/2 of each original state"""
    actions = np.empty(len(states))
    for i, state in enumerate(states):
        new = transform_point(gens, state, eps, "inverse")
        actions[i] = (new[0] ** 2 + new[1] ** 2) / 2.0
    return actions


def symplecticity_check(
    gens: Sequence[GeneratingFunction],
    x: np.ndarray,
    eps: float,
    direction: str = "inverse",
) -> float:
    """max |M^T Omega M - Omega| of the composed transform, M by central differences"""
    x = np.asarray(x, dtype=float)
    dim = len(x)
    jac = np.empty((dim, dim))
    for col in range(dim):
        shift = np.zeros(dim)
        shift[col] = FD_STEP
        plus = transform_point(gens, x + shift, eps, direction)
        minus = transform_point(gens, x - shift, eps, direction)
        jac[:, col] = (plus - minus) / (2.0 * FD_STEP)
    omega = symplectic_matrix((dim - 2) // 2)
    return float(np.max(np.abs(jac.T @ omega @ jac - omega)))


def roundtrip_error(gens: Sequence[GeneratingFunction], x: np.ndarray, eps: float) -> float:
    x = np.asarray(x, dtype=float)
    back = transform_point(gens, transform_point(gens, x, eps, "inverse"), eps, "forward")
    return float(np.max(np.abs(back - x)))


def admissible_eps(gen: GeneratingFunction, points: Sequence[np.ndarray], delta: float = 0.1) -> float:
    """
    Admissible eps for one step, delta / (2 bound (n + 1)), with bound the largest
    first derivative of S1 over the sampled points.
    """
    compiled = compile_generator(gen)
    bound = max(float(np.max(np.abs(compiled.gradient(np.asarray(x, dtype=float), 0.0)))) for x in points)
    if bound == 0:
        return math.inf
    return delta / (2.0 * bound * (compiled.n + 1))


def remainder_sup_norms(result: NormalFormResult, eps: float, points: Sequence[np.ndarray]) -> List[float]:
    """sup over the points of |eps g_i| after each step"""
    norms = []
    for remainder in result.remainders:
        compiled = CompiledSeries([remainder])
        norms.append(max(abs(float(compiled(np.asarray(x, dtype=float), eps)[0])) for x in points))
    return norms


def consistency_defect(spec: HamiltonianSpec, result: NormalFormResult, x_new: np.ndarray, eps: float) -> float:
    """|K(x_new) - H(x_old)| with x_old the forward image of x_new"""
    x_old = transform_point(result.generators, x_new, eps, "forward")
    old = CompiledSeries([spec.hamiltonian])(x_old, eps)[0]
    new = CompiledSeries([result.hamiltonian])(np.asarray(x_new, dtype=float), eps)[0]
    return abs(float(new - old))


# --------- Experiments ---------

def default_initial_conditions(
    n_slow_pairs: int,
    initial_actions: Sequence[float] = DEFAULT_INITIAL_ACTIONS,
    slow_pair: Sequence[float] = DEFAULT_SLOW_PAIR,
) -> List[np.ndarray]:
    """phi = 0 (p = 0) on each action level, the same slow pair repeated per pair"""
    slow = [slow_pair[0]] * n_slow_pairs + [slow_pair[1]] * n_slow_pairs
    return [np.array([math.sqrt(2.0 * action), 0.0, *slow]) for action in initial_actions]


def sample_points(n_slow_pairs: int, count: int, seed: int, radius: float = 0.8) -> np.ndarray:
    """Seeded points in a box around the origin"""
    rng = np.random.default_rng(seed)
    fast = rng.uniform(-radius, radius, size=(count, 2))
    slow = rng.uniform(-0.5, 0.5, size=(count, 2 * n_slow_pairs))
    return np.hstack([fast, slow])


def log_log_slopes(eps: Sequence[float], values: Sequence[float]) -> List[Optional[float]]:
    """Local slopes d log(value) / d log(eps) between neighbours"""
    slopes: List[Optional[float]] = []
    for i in range(1, len(eps)):
        if values[i] > 0 and values[i - 1] > 0:
            slopes.append(math.log(values[i - 1] / values[i]) / math.log(eps[i - 1] / eps[i]))
        else:
            slopes.append(None)
    return slopes


def fitted_slope(xs: Sequence[float], values: Sequence[float]) -> Optional[float]:
    pairs = [(x, math.log(v)) for x, v in zip(xs, values) if v > 0]
    if len(pairs) < 2:
        return None
    coeffs = np.polyfit([x for x, _ in pairs], [y for _, y in pairs], 1)
    return float(coeffs[0])


def ordered_eps(eps_list: Sequence[float]) -> List[float]:
    if not eps_list:
        raise EpsListError("eps_list must not be empty")
    if any(eps <= 0 for eps in eps_list):
        raise EpsListError("eps values must be positive")
    ordered = sorted(set(float(eps) for eps in eps_list), reverse=True)
    if len(ordered) < 3:
        logger.warning(f"⚠️ Only {len(ordered)} eps value(s): the slope estimate is weak or missing")
    return ordered


def is_resolved(drift: float, noise_floor: float) -> bool:
    """A drift counts as measured when it sits NOISE_FACTOR above the integrator error"""
    return drift >= NOISE_FACTOR * noise_floor


def resolved_slopes(
    eps: Sequence[float],
    values: Sequence[float],
    resolved: Sequence[bool],
) -> List[Optional[float]]:
    """log_log_slopes with None wherever either end is below the noise floor"""
    slopes = log_log_slopes(eps, values)
    return [
        slope if resolved[i] and resolved[i + 1] else None
        for i, slope in enumerate(slopes)
    ]


def _noise_warning(eps: float, drift: float, noise_floor: float) -> str:
    return (
        f"eps={eps:g}: drift {drift:.3e} is within {NOISE_FACTOR:g}x of the "
        f"integrator energy error {noise_floor:.3e}; left out of the fits"
    )


class DriftRow(BaseModel):
    eps: float
    drift: float
    slope: Optional[float] = None
    # keyed by the initial action I(0)
    per_condition: Dict[str, float] = {}
    noise_floor: float = 0.0
    resolved: bool = True


class DriftExperiment(BaseModel):
    order: int
    horizon_factor: float
    rows: List[DriftRow] = []
    fit_slope: Optional[float] = None
    warnings: List[str] = []


class FlowRun(NamedTuple):
    states: np.ndarray
    energy_error: float


def _horizon_config(cfg: Optional[FlowConfig], eps: float, horizon_factor: float) -> FlowConfig:
    base = cfg or FlowConfig(method="dop853", dt=0.05, t_final=1.0)
    t_final = horizon_factor / eps
    return base.model_copy(update={"t_final": t_final, "dt": min(base.dt, t_final / 2.0)})


def _state_flows(
    spec: HamiltonianSpec,
    eps: float,
    initial_conditions: Sequence[np.ndarray],
    cfg: FlowConfig,
) -> List[FlowRun]:
    field = CompiledHamiltonian(spec.hamiltonian)
    runs = []
    for x0 in initial_conditions:
        states = integrate_states(field, x0, eps, cfg)[1]
        energy = np.array([field.energy(x, eps) for x in states])
        runs.append(FlowRun(states, _energy_error(energy)))
    return runs


def _drift(gens: Sequence[GeneratingFunction], states: np.ndarray, eps: float) -> float:
    action = transformed_actions(gens, states, eps)
    return float(np.max(np.abs(action - action[0])))


def _condition_drifts(
    spec: HamiltonianSpec,
    gens: Sequence[GeneratingFunction],
    eps: float,
    initial_conditions: Sequence[np.ndarray],
    cfg: FlowConfig,
) -> Tuple[List[float], float]:
    """
    Per-condition drift and the largest energy error of the runs; fixed-step
    methods halve dt until the drift settles to 1%.
    """
    runs = _state_flows(spec, eps, initial_conditions, cfg)
    drifts = [_drift(gens, run.states, eps) for run in runs]
    if cfg.method != "dop853":
        for _ in range(DT_HALVINGS):
            cfg = cfg.model_copy(update={"dt": cfg.dt / 2.0})
            runs = _state_flows(spec, eps, initial_conditions, cfg)
            finer = [_drift(gens, run.states, eps) for run in runs]
            settled = all(abs(a - b) <= 0.01 * max(abs(b), 1e-300) for a, b in zip(drifts, finer))
            drifts = finer
            if settled:
                break
    return drifts, max(run.energy_error for run in runs)


def drift_experiment(
    spec: HamiltonianSpec,
    m: int,
    eps_list: Sequence[float],
    c: float = 1.0,
    result: Optional[NormalFormResult] = None,
    initial_conditions: Optional[Sequence[np.ndarray]] = None,
    initial_actions: Sequence[float] = DEFAULT_INITIAL_ACTIONS,
    cfg: Optional[FlowConfig] = None,
) -> DriftExperiment:
    """
    Flow the original H over t in [0, c/eps], map each sample through the
    order-m transform and record the drift of J = (Q^2 + P^2)/2. Rows whose
    drift is not resolved above the integrator error stay in the table but
    are left out of the slopes and the fit.
    """
    if result is None:
        result = normal_form(spec, m)
    gens = result.generators[:m]
    conditions = list(initial_conditions or default_initial_conditions(spec.policy.n_slow_pairs, initial_actions))
    labels = [f"{(x[0] ** 2 + x[1] ** 2) / 2.0:g}" for x in conditions]
    ordered = ordered_eps(eps_list)

    rows: List[DriftRow] = []
    warnings: List[str] = []
    for eps in ordered:
        drifts, noise = _condition_drifts(spec, gens, eps, conditions, _horizon_config(cfg, eps, c))
        drift = max(drifts)
        row = DriftRow(
            eps=eps,
            drift=drift,
            per_condition=dict(zip(labels, drifts)),
            noise_floor=noise,
            resolved=is_resolved(drift, noise),
        )
        rows.append(row)
        logger.info(f"🔁 m={m} eps={eps:g}: drift {drift:.3e}, energy error {noise:.3e}")
        if not row.resolved:
            warnings.append(_noise_warning(eps, drift, noise))
            logger.warning(f"⚠️ {warnings[-1]}")

    drifts = [row.drift for row in rows]
    for row, slope in zip(rows[1:], resolved_slopes(ordered, drifts, [row.resolved for row in rows])):
        row.slope = slope
    kept = [row for row in rows if row.resolved]
    fit = fitted_slope([math.log(row.eps) for row in kept], [row.drift for row in kept])
    return DriftExperiment(order=m, horizon_factor=c, rows=rows, fit_slope=fit, warnings=warnings)


class ProbeResultRow(BaseModel):
    eps: float
    best_m: int
    min_drift: float
    drift_by_order: Dict[int, float] = {}
    noise_floor: float = 0.0
    resolved: bool = True


class ProbeResult(BaseModel):
    m_max: int
    rows: List[ProbeResultRow] = []
    fit_slope_inverse_eps: Optional[float] = None
    local_slopes: List[Optional[float]] = []
    best_m_monotone: bool = True
    super_polynomial: Optional[bool] = None
    warnings: List[str] = []


def summarize_order_scan(m_max: int, rows: Sequence[ProbeResultRow], warnings: Sequence[str] = ()) -> ProbeResult:
    """
    Shape of the optimal drift over rows ordered by decreasing eps: a straight
    line of log(min_drift) against 1/eps with strictly growing local log-log
    slopes points to an exponentially small remainder. Only rows resolved
    above the integrator error take part.
    """
    rows = list(rows)
    notes = list(warnings)
    for row in rows:
        if not row.resolved:
            notes.append(_noise_warning(row.eps, row.min_drift, row.noise_floor))
    kept = [row for row in rows if row.resolved]
    local = resolved_slopes([row.eps for row in rows], [row.min_drift for row in rows], [row.resolved for row in rows])
    fit = fitted_slope([1.0 / row.eps for row in kept], [row.min_drift for row in kept])
    monotone = all(a.best_m <= b.best_m for a, b in zip(kept, kept[1:]))

    super_polynomial: Optional[bool] = None
    known = [slope for slope in local if slope is not None]
    if len(rows) == 1:
        notes.append("single eps value: no fit")
    elif len(known) < 2 and len(rows) >= 3:
        notes.append("fewer than two resolved slopes: no super-polynomial verdict")
    elif len(known) >= 2:
        super_polynomial = monotone and all(a < b for a, b in zip(known, known[1:]))
    return ProbeResult(
        m_max=m_max,
        rows=rows,
        fit_slope_inverse_eps=fit,
        local_slopes=local,
        best_m_monotone=monotone,
        super_polynomial=super_polynomial,
        warnings=notes,
    )


def optimal_order_probe(
    spec: HamiltonianSpec,
    eps_list: Sequence[float],
    m_max: int,
    c: float = 1.0,
    initial_conditions: Optional[Sequence[np.ndarray]] = None,
    cfg: Optional[FlowConfig] = None,
) -> ProbeResult:
    """Best order per eps and the super-polynomial diagnostic"""
    result = normal_form(spec, m_max)
    conditions = list(initial_conditions or default_initial_conditions(spec.policy.n_slow_pairs))
    ordered = ordered_eps(eps_list)
    orders = list(range(1, max(1, result.steps_taken) + 1))

    rows: List[ProbeResultRow] = []
    for eps in ordered:
        runs = _state_flows(spec, eps, conditions, _horizon_config(cfg, eps, c))
        noise = max(run.energy_error for run in runs)
        by_order = {
            m: max(_drift(result.generators[:m], run.states, eps) for run in runs)
            for m in orders
        }
        best = min(orders, key=lambda m: (by_order[m], m))
        rows.append(
            ProbeResultRow(
                eps=eps,
                best_m=best,
                min_drift=by_order[best],
                drift_by_order=by_order,
                noise_floor=noise,
                resolved=is_resolved(by_order[best], noise),
            )
        )
        logger.info(f"🔁 probe eps={eps:g}: best m={best}, drift {by_order[best]:.3e}, energy error {noise:.3e}")

    warnings: List[str] = []
    if result.steps_taken < m_max:
        warnings.append(f"normal form stopped after {result.steps_taken} steps: perturbation exhausted")
    return summarize_order_scan(m_max, rows, warnings)
