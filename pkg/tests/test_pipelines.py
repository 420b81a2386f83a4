import pytest

import pipelines
from models import ExperimentBlock
from numerics import DriftExperiment, DriftRow
from pipelines import SYMPLECTICITY_POINTS, _uniformity_gate, run_validate
from problems import BUILTIN_PROBLEMS


def conditions(origin, near, reference):
    return {"0": origin, "0.0001": near, "0.1": reference, "0.5": reference}


# --------- uniformity gate ---------

def test_uniformity_gate_passes_on_comparable_drifts():
    gate = _uniformity_gate({"0.02": conditions(3e-6, 2e-6, 1e-6), "0.01": conditions(1e-6, 1e-6, 1e-6)})
    assert gate.passed
    assert gate.detail == "worst ratio 3.00"


def test_uniformity_gate_fails_on_a_growing_origin_drift():
    gate = _uniformity_gate({"0.02": conditions(1e-6, 1e-6, 1e-6), "0.01": conditions(5e-5, 1e-6, 1e-6)})
    assert not gate.passed
    assert gate.detail.startswith("eps=0.01")


def test_uniformity_gate_allows_for_integrator_noise():
    per_condition = {"0.005": conditions(5e-12, 1e-13, 1e-13)}
    assert not _uniformity_gate(per_condition).passed
    assert _uniformity_gate(per_condition, {"0.005": 1e-13}).passed


def test_uniformity_gate_skips_without_the_reference_action():
    gate = _uniformity_gate({"0.01": {"0": 1.0, "0.5": 1e-9}})
    assert gate.passed
    assert gate.detail.startswith("skipped")


# --------- validate ---------

def fake_drift(resolved=True):
    rows = [
        DriftRow(eps=0.02, drift=2e-4, per_condition=conditions(2e-4, 2e-4, 1e-4), noise_floor=1e-14),
        DriftRow(
            eps=0.01,
            drift=1e-4,
            slope=1.0 if resolved else None,
            per_condition=conditions(1e-4, 1e-4, 1e-4),
            noise_floor=1e-14,
            resolved=resolved,
        ),
    ]
    warnings = [] if resolved else ["eps=0.01: drift at the noise floor"]
    return DriftExperiment(
        order=1, horizon_factor=1.0, rows=rows, fit_slope=1.0 if resolved else None, warnings=warnings
    )


@pytest.fixture
def landau_validate(mocker):
    drift = mocker.patch("pipelines.drift_experiment", return_value=fake_drift())
    symplectic = mocker.patch("pipelines.symplecticity_check", return_value=1e-15)
    report = run_validate(BUILTIN_PROBLEMS["landau"], 1, [0.01, 0.02], seed=5, dt=0.05)
    return report, drift, symplectic


def test_validate_checks_symplecticity_on_every_point(landau_validate):
    report, _, symplectic = landau_validate
    assert symplectic.call_count == SYMPLECTICITY_POINTS * 2
    assert all(row.symplecticity_defect == 1e-15 for row in report.rows)


def test_validate_caps_the_dop853_step(landau_validate):
    _, drift, _ = landau_validate
    cfg = drift.call_args.kwargs["cfg"]
    assert ExperimentBlock().flow.method == "dop853"
    assert cfg.max_step == 0.05


def test_validate_reports_remainders_and_admissible_eps(landau_validate):
    report, _, _ = landau_validate
    assert [row.eps for row in report.rows] == [0.02, 0.01]
    assert len(report.admissible_eps) == 1
    assert report.admissible_eps[0] > 0
    sups = [row.remainder_sup for row in report.rows]
    assert all(sup is not None and sup > 0 for sup in sups)
    # the first remainder starts at eps^2
    assert sups[0] == pytest.approx(4 * sups[1], rel=0.25)


def test_validate_gates(landau_validate):
    report, _, _ = landau_validate
    gates = {gate.name: gate for gate in report.gates}
    assert list(gates) == ["eps_admissible", "drift_scaling", "symplecticity", "roundtrip", "uniformity"]
    assert gates["drift_scaling"].passed
    assert gates["symplecticity"].passed
    assert gates["uniformity"].passed
    assert report.per_condition_drift["0.01"]["0.1"] == 1e-4


def test_validate_skips_the_slope_gate_at_the_noise_floor(mocker):
    mocker.patch("pipelines.drift_experiment", return_value=fake_drift(resolved=False))
    mocker.patch("pipelines.symplecticity_check", return_value=1e-15)
    report = run_validate(BUILTIN_PROBLEMS["landau"], 1, [0.02, 0.01], seed=5)
    gate = next(gate for gate in report.gates if gate.name == "drift_scaling")
    assert gate.passed
    assert "noise floor" in gate.detail
    assert report.rows[1].resolved is False
    assert "eps=0.01: drift at the noise floor" in report.warnings
