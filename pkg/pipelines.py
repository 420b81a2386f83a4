# pipelines.py

"""
End-to-end runs shared by the CLI and the HTTP routers: problem file in,
pydantic report out. Report writers keep a fixed header and float format so
identical inputs give byte-identical files.
"""

import csv
import io
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel

from catalog import NF_DEFAULT_SEED
from errors import EpsilonTooLargeError
from models import (
    ExperimentBlock,
    FlowConfig,
    GateResult,
    GeneratorDocument,
    NormalFormDocument,
    ProbeReport,
    ProbeRow,
    ProblemFile,
    StepDiagnosticDocument,
    ValidateReport,
    ValidateRow,
)
from normalform import NormalFormResult, normal_form
from numerics import (
    NOISE_FACTOR,
    TrajectoryReport,
    admissible_eps,
    default_initial_conditions,
    drift_experiment,
    flow,
    optimal_order_probe,
    ordered_eps,
    remainder_sup_norms,
    roundtrip_error,
    sample_points,
    symplecticity_check,
)
from problems import build_spec
from series import to_document

logger = logging.getLogger(__name__)

VALIDATE_COLUMNS = ["eps", "drift", "slope_estimate", "symplecticity_defect", "roundtrip_error"]
PROBE_COLUMNS = ["eps", "best_m", "min_drift"]
TRAJECTORY_TAIL = ["energy", "J"]

SLOPE_TOLERANCE = 0.3
SYMPLECTICITY_MAX = 1e-6
ROUNDTRIP_MAX = 1e-10
UNIFORMITY_FACTOR = 10.0
NEAR_ORIGIN_ACTION = 1e-4
REFERENCE_ACTION = 0.1
ROUNDTRIP_POINTS = 20
SYMPLECTICITY_POINTS = 20


def _experiments(problem: ProblemFile) -> ExperimentBlock:
    return problem.experiments or ExperimentBlock()


def _flow_config(block: ExperimentBlock, dt: Optional[float]):
    update = {"max_samples": block.samples}
    if dt is not None:
        update["dt"] = dt
        if block.flow.method == "dop853":
            update["max_step"] = dt
    return block.flow.model_copy(update=update)


# --------- normalize ---------

def normal_form_document(problem: ProblemFile, result: NormalFormResult) -> NormalFormDocument:
    return NormalFormDocument(
        problem=problem.name,
        order=result.order,
        steps_taken=result.steps_taken,
        h_final=to_document(result.h_final),
        remainder=to_document(result.remainder),
        generators=[
            GeneratorDocument(step_index=gen.step_index, s1=to_document(gen.s1)) for gen in result.generators
        ],
        step_norms=result.step_norms,
        diagnostics=[StepDiagnosticDocument(**d.model_dump()) for d in result.diagnostics],
    )


def run_normalize(problem: ProblemFile, m: int) -> Tuple[NormalFormResult, NormalFormDocument]:
    spec = build_spec(problem)
    result = normal_form(spec, m)
    logger.info(f"✅ {problem.name}: normal form to order {m} in {result.steps_taken} steps")
    return result, normal_form_document(problem, result)


# --------- validate ---------

def _uniformity_gate(
    per_condition: Dict[str, Dict[str, float]],
    noise_floors: Optional[Dict[str, float]] = None,
) -> GateResult:
    """Near-origin drifts within UNIFORMITY_FACTOR of the I(0) = 0.1 drift, up to integrator noise"""
    noise_floors = noise_floors or {}
    worst = 0.0
    for eps, drifts in per_condition.items():
        by_action = {float(label): drift for label, drift in drifts.items()}
        reference = [d for a, d in by_action.items() if math.isclose(a, REFERENCE_ACTION, rel_tol=1e-9)]
        near = [d for a, d in by_action.items() if a <= NEAR_ORIGIN_ACTION]
        if not reference or not near:
            return GateResult(name="uniformity", passed=True, detail="skipped: I(0) = 0.1 or I(0) <= 1e-4 missing")
        ratio = max(near) / max(reference[0], 1e-300)
        worst = max(worst, ratio)
        allowance = NOISE_FACTOR * noise_floors.get(eps, 0.0) + 1e-15
        if max(near) > UNIFORMITY_FACTOR * reference[0] + allowance:
            return GateResult(name="uniformity", passed=False, detail=f"eps={eps}: near-origin drift {ratio:.2f}x the I(0)=0.1 drift")
    return GateResult(name="uniformity", passed=True, detail=f"worst ratio {worst:.2f}")


def _admissible_estimates(result: NormalFormResult, points) -> List[Optional[float]]:
    estimates = []
    for gen in result.generators:
        bound = admissible_eps(gen, points)
        estimates.append(None if math.isinf(bound) else bound)
    return estimates


def run_validate(
    problem: ProblemFile,
    m: int,
    eps_list: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    horizon_factor: Optional[float] = None,
) -> ValidateReport:
    """Drift scaling, canonicity and roundtrip checks at order m"""
    block = _experiments(problem)
    eps_values = ordered_eps(block.eps_list if eps_list is None else eps_list)
    seed = NF_DEFAULT_SEED if seed is None else seed
    c = horizon_factor or block.horizon_factor
    spec = build_spec(problem)
    points = sample_points(problem.n_slow_pairs, ROUNDTRIP_POINTS, seed)
    report = ValidateReport(
        problem=problem.name, order=m, seed=seed, horizon_factor=c, sample_points=points.tolist()
    )

    result = normal_form(spec, m)
    gens = result.generators
    report.admissible_eps = _admissible_estimates(result, points)
    known = [bound for bound in report.admissible_eps if bound is not None]
    if known and eps_values[0] > min(known):
        report.warnings.append(
            f"largest eps {eps_values[0]:g} exceeds the estimated admissible eps {min(known):.3g}"
        )
    try:
        checks = []
        for eps in eps_values:
            symplectic = max(symplecticity_check(gens, x, eps) for x in points[:SYMPLECTICITY_POINTS])
            roundtrip = max(roundtrip_error(gens, x, eps) for x in points)
            remainder = remainder_sup_norms(result, eps, points)[-1] if result.remainders else None
            checks.append((symplectic, roundtrip, remainder))
        conditions = default_initial_conditions(problem.n_slow_pairs, block.initial_actions, block.slow_point)
        drift = drift_experiment(
            spec, m, eps_values, c, result=result, initial_conditions=conditions, cfg=_flow_config(block, dt)
        )
    except EpsilonTooLargeError as exc:
        logger.warning(f"⚠️ {problem.name}: {exc}")
        report.error = str(exc)
        report.gates = [GateResult(name="eps_admissible", passed=False, detail=str(exc))]
        report.passed = False
        return report

    report.rows = [
        ValidateRow(
            eps=row.eps,
            drift=row.drift,
            slope_estimate=row.slope,
            symplecticity_defect=symplectic,
            roundtrip_error=roundtrip,
            noise_floor=row.noise_floor,
            resolved=row.resolved,
            remainder_sup=remainder,
        )
        for row, (symplectic, roundtrip, remainder) in zip(drift.rows, checks)
    ]
    report.warnings.extend(drift.warnings)
    report.per_condition_drift = {f"{row.eps:g}": row.per_condition for row in drift.rows}
    noise_floors = {f"{row.eps:g}": row.noise_floor for row in drift.rows}

    gates: List[GateResult] = [GateResult(name="eps_admissible", passed=True)]
    if drift.fit_slope is None:
        gates.append(
            GateResult(
                name="drift_scaling",
                passed=True,
                detail="skipped: fewer than two eps values with drift above the integrator noise floor",
            )
        )
    else:
        gates.append(
            GateResult(
                name="drift_scaling",
                passed=drift.fit_slope >= m - SLOPE_TOLERANCE,
                detail=f"slope {drift.fit_slope:.3f}, needs >= {m - SLOPE_TOLERANCE:.1f}",
            )
        )
    worst_symplectic = max(row.symplecticity_defect for row in report.rows)
    gates.append(
        GateResult(name="symplecticity", passed=worst_symplectic < SYMPLECTICITY_MAX, detail=f"max {worst_symplectic:.3e}")
    )
    worst_roundtrip = max(row.roundtrip_error for row in report.rows)
    gates.append(GateResult(name="roundtrip", passed=worst_roundtrip < ROUNDTRIP_MAX, detail=f"max {worst_roundtrip:.3e}"))
    gates.append(_uniformity_gate(report.per_condition_drift, noise_floors))

    report.gates = gates
    report.passed = all(gate.passed for gate in gates)
    status = "✅" if report.passed else "❌"
    logger.info(f"{status} {problem.name}: validate m={m} {'passed' if report.passed else 'failed'}")
    return report


# --------- probe ---------

def run_probe(
    problem: ProblemFile,
    m_max: int,
    eps_list: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    horizon_factor: Optional[float] = None,
) -> ProbeReport:
    block = _experiments(problem)
    eps_values = ordered_eps(block.eps_list if eps_list is None else eps_list)
    seed = NF_DEFAULT_SEED if seed is None else seed
    c = horizon_factor or block.horizon_factor
    spec = build_spec(problem)
    conditions = default_initial_conditions(problem.n_slow_pairs, block.initial_actions, block.slow_point)
    probe = optimal_order_probe(
        spec, eps_values, m_max, c, initial_conditions=conditions, cfg=_flow_config(block, dt)
    )
    for warning in probe.warnings:
        logger.warning(f"⚠️ {problem.name}: {warning}")
    return ProbeReport(
        problem=problem.name,
        m_max=m_max,
        seed=seed,
        rows=[
            ProbeRow(
                eps=row.eps,
                best_m=row.best_m,
                min_drift=row.min_drift,
                drift_by_order={str(m): drift for m, drift in row.drift_by_order.items()},
                noise_floor=row.noise_floor,
                resolved=row.resolved,
            )
            for row in probe.rows
        ],
        fit_slope_inverse_eps=probe.fit_slope_inverse_eps,
        local_slopes=probe.local_slopes,
        best_m_monotone=probe.best_m_monotone,
        super_polynomial=probe.super_polynomial,
        warnings=probe.warnings,
    )


# --------- trajectory ---------

def run_trajectory(
    problem: ProblemFile,
    m: int,
    eps: float,
    x0: Sequence[float],
    cfg: FlowConfig,
) -> TrajectoryReport:
    """Flow of the original H from x0; J is measured in the order-m variables (m = 0: the original ones)"""
    spec = build_spec(problem)
    gens = normal_form(spec, m).generators if m > 0 else []
    report = flow(spec.hamiltonian, x0, eps, cfg, gens)
    logger.info(
        f"✅ {problem.name}: {len(report.times)} samples, drift {report.drift:.3e}, "
        f"energy error {report.energy_error:.3e}"
    )
    return report


# --------- writers ---------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv(columns: List[str], rows: List[List]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def validate_csv(report: ValidateReport) -> str:
    return _csv(
        VALIDATE_COLUMNS,
        [[r.eps, r.drift, r.slope_estimate, r.symplecticity_defect, r.roundtrip_error] for r in report.rows],
    )


def probe_csv(report: ProbeReport) -> str:
    return _csv(PROBE_COLUMNS, [[r.eps, r.best_m, r.min_drift] for r in report.rows])


def trajectory_csv(report: TrajectoryReport) -> str:
    columns = ["t", *report.state_names, *TRAJECTORY_TAIL]
    rows = [
        [t, *state, energy, action]
        for t, state, energy, action in zip(
            report.times.tolist(),
            report.states.tolist(),
            report.energy.tolist(),
            report.transformed_action.tolist(),
        )
    ]
    return _csv(columns, rows)


def write_text(path: Union[str, Path], text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"📋 Report written to {path}")


def write_json(path: Union[str, Path], document: BaseModel) -> None:
    write_text(path, document.model_dump_json(indent=2) + "\n")


def sidecar_path(out: Union[str, Path]) -> Path:
    return Path(f"{out}.json")
