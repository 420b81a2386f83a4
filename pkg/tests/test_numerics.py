import json
import logging
import math

import numpy as np
import pytest

import numerics
from errors import DimensionMismatchError, EpsilonTooLargeError, EpsListError
from models import FlowConfig
from normalform import GeneratingFunction, normal_form
from numerics import (
    NOISE_FACTOR,
    CompiledHamiltonian,
    CompiledSeries,
    ProbeResultRow,
    admissible_eps,
    consistency_defect,
    default_initial_conditions,
    drift_experiment,
    flow,
    integrate_states,
    is_resolved,
    log_log_slopes,
    optimal_order_probe,
    ordered_eps,
    remainder_sup_norms,
    resolved_slopes,
    roundtrip_error,
    sample_points,
    symplectic_matrix,
    summarize_order_scan,
    symplecticity_check,
    transform_point,
)
from series import evaluate, variable, zero


def guiding_center(policy):
    """p y1 - q y2, the first Landau generator"""
    return variable(policy, "p") * variable(policy, "y1_1") - variable(policy, "q") * variable(policy, "y2_1")


# --------- compiled evaluation ---------

def test_compiled_series_matches_evaluate(small_policy):
    q = variable(small_policy, "q")
    p = variable(small_policy, "p")
    y1 = variable(small_policy, "y1_1")
    eps = variable(small_policy, "eps")
    f = q * q * p + 0.5 * p * y1 + eps * q * y1 * y1 + 2.0
    compiled = CompiledSeries([f, q * p])
    x = np.array([0.4, -0.3, 0.7, 0.2])
    values = compiled(x, 0.05)
    assert values[0] == pytest.approx(evaluate(f, (0.4, -0.3, [0.7, 0.2], 0.05)).real, abs=1e-14)
    assert values[1] == pytest.approx(-0.12, abs=1e-14)


def test_compiled_series_checks_the_state(small_policy):
    compiled = CompiledSeries([variable(small_policy, "q")])
    with pytest.raises(DimensionMismatchError):
        compiled(np.zeros(3), 0.0)


def test_symplectic_matrix():
    omega = symplectic_matrix(2)
    assert omega.shape == (6, 6)
    assert omega[0, 1] == 1.0 and omega[1, 0] == -1.0
    assert omega[2, 4] == 1.0 and omega[5, 3] == -1.0
    assert np.array_equal(omega.T, -omega)


def test_vector_field_of_the_action(small_policy):
    field = CompiledHamiltonian(variable(small_policy, "I"))
    # q' = p, p' = -q
    assert field.vector_field(np.array([0.3, 0.5, 0.0, 0.0]), 0.0) == pytest.approx([0.5, -0.3, 0.0, 0.0])


# --------- flows ---------

def test_rk4_returns_after_one_period(small_policy):
    field = CompiledHamiltonian(variable(small_policy, "I"))
    x0 = np.array([1.0, 0.0, 0.3, -0.2])
    cfg = FlowConfig(method="rk4-fixed", dt=1e-3, t_final=2.0 * math.pi)
    times, states = integrate_states(field, x0, 0.0, cfg)
    assert times[-1] == pytest.approx(2.0 * math.pi)
    assert np.max(np.abs(states[-1] - x0)) < 1e-8


def test_implicit_midpoint_conserves_quadratic_energy(small_policy):
    q = variable(small_policy, "q")
    y1 = variable(small_policy, "y1_1")
    y2 = variable(small_policy, "y2_1")
    hamiltonian = variable(small_policy, "I") + 0.3 * q * y1 + 0.5 * y2 * y2
    cfg = FlowConfig(method="implicit-midpoint", dt=0.05, t_final=5.0, max_samples=50)
    report = flow(hamiltonian, np.array([0.8, 0.1, 0.2, -0.4]), 0.0, cfg)
    assert report.energy_error < 1e-10
    assert len(report.times) == len(report.states) == len(report.energy)


def test_zero_eps_freezes_the_slow_pair(landau_spec):
    x0 = np.array([0.5, 0.2, 0.3, -0.2])
    cfg = FlowConfig(method="rk4-fixed", dt=0.01, t_final=1.0)
    report = flow(landau_spec.hamiltonian, x0, 0.0, cfg)
    assert np.all(report.states[:, 2:] == x0[2:])
    assert report.drift < 1e-9


def test_dop853_keeps_the_energy(landau_spec):
    cfg = FlowConfig(method="dop853", dt=0.05, t_final=20.0, max_samples=100)
    report = flow(landau_spec.hamiltonian, np.array([0.5, 0.0, 0.3, -0.2]), 0.02, cfg)
    assert len(report.times) == 100
    assert report.energy_error < 1e-9


def test_initial_state_dimension_is_checked(small_policy):
    field = CompiledHamiltonian(variable(small_policy, "I"))
    with pytest.raises(DimensionMismatchError):
        integrate_states(field, np.zeros(2), 0.0, FlowConfig(method="rk4-fixed", dt=0.1, t_final=1.0))


def test_dop853_step_cap(small_policy, mocker):
    spy = mocker.spy(numerics, "solve_ivp")
    field = CompiledHamiltonian(variable(small_policy, "I"))
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    integrate_states(field, x0, 0.0, FlowConfig(method="dop853", dt=0.1, t_final=1.0, max_samples=5))
    assert spy.call_args.kwargs["max_step"] == np.inf
    integrate_states(field, x0, 0.0, FlowConfig(method="dop853", dt=0.1, t_final=1.0, max_samples=5, max_step=0.05))
    assert spy.call_args.kwargs["max_step"] == 0.05


def test_trajectory_report_serializes(small_policy):
    cfg = FlowConfig(method="rk4-fixed", dt=0.1, t_final=1.0, max_samples=6)
    report = flow(variable(small_policy, "I"), np.array([1.0, 0.0, 0.3, -0.2]), 0.0, cfg)
    document = json.loads(report.model_dump_json())
    assert document["state_names"] == ["q", "p", "y1_1", "y2_1"]
    assert len(document["times"]) == len(document["states"]) == len(document["transformed_action"]) == 6
    assert document["states"][0] == [1.0, 0.0, 0.3, -0.2]
    assert document["energy_error"] == pytest.approx(report.energy_error)
    assert document["drift"] == report.drift


# --------- transforms ---------

def test_zero_eps_transforms_are_the_identity(landau_m2):
    x = np.array([0.4, -0.1, 0.3, 0.2])
    for direction in ("forward", "inverse"):
        assert np.array_equal(transform_point(landau_m2.generators, x, 0.0, direction), x)


def test_unknown_direction(landau_m2):
    with pytest.raises(ValueError):
        transform_point(landau_m2.generators, np.zeros(4), 0.01, "sideways")


def test_roundtrip_on_sampled_points(landau_m2):
    points = sample_points(1, 100, seed=11)
    assert max(roundtrip_error(landau_m2.generators, x, 1e-2) for x in points) < 1e-10


def test_guiding_center_shift(small_policy):
    # S = qP + y1 z2 + eps (P y1 - q z2) maps the slow pair to the guiding center
    gen = GeneratingFunction(s1=guiding_center(small_policy), step_index=0)
    eps = 0.1
    x = np.array([0.4, -0.2, 0.3, 0.5])
    new = transform_point([gen], x, eps, "inverse")
    p_new = x[1] + eps * new[3]
    assert new[1] == pytest.approx(p_new, abs=1e-14)
    assert transform_point([gen], new, eps, "forward") == pytest.approx(x, abs=1e-13)


def test_large_eps_is_refused(landau_m2):
    with pytest.raises(EpsilonTooLargeError):
        transform_point(landau_m2.generators[:1], np.array([0.4, -0.1, 0.3, 0.2]), 0.5, "inverse")


def test_transforms_are_symplectic(landau_m2):
    for x in sample_points(1, 20, seed=3):
        assert symplecticity_check(landau_m2.generators, x, 0.01) < 1e-6
        assert symplecticity_check(landau_m2.generators, x, 0.01, "forward") < 1e-6


def test_transformed_hamiltonian_matches_the_original(landau_spec, landau_m2):
    for x in sample_points(1, 5, seed=5):
        assert consistency_defect(landau_spec, landau_m2, x, 1e-3) < 1e-8


# --------- diagnostics ---------

def test_admissible_eps(small_policy):
    gen = GeneratingFunction(s1=guiding_center(small_policy), step_index=0)
    # largest first derivative at this point is |dS/dy1| = |p| = 0.5
    assert admissible_eps(gen, [np.array([0.2, 0.5, 0.1, -0.1])]) == pytest.approx(0.05)
    assert admissible_eps(GeneratingFunction(s1=zero(small_policy), step_index=0), [np.zeros(4)]) == math.inf


def test_remainder_sup_norms_scale_with_eps(landau_m2):
    points = sample_points(1, 10, seed=2)
    coarse = remainder_sup_norms(landau_m2, 0.02, points)
    fine = remainder_sup_norms(landau_m2, 0.01, points)
    assert len(coarse) == landau_m2.steps_taken
    # eps g after the first step starts at eps^2
    assert coarse[0] / fine[0] == pytest.approx(4.0, rel=0.25)


def test_remainders_decay_step_by_step(landau_spec):
    result = normal_form(landau_spec, 3)
    norms = remainder_sup_norms(result, 0.005, sample_points(1, 10, seed=4))
    assert len(norms) == result.steps_taken
    for before, after in zip(norms, norms[1:]):
        assert after <= 0.5 * before


def test_log_log_slopes():
    slopes = log_log_slopes([0.02, 0.01, 0.005], [4e-4, 1e-4, 0.0])
    assert slopes[0] == pytest.approx(2.0)
    assert slopes[1] is None


def test_ordered_eps(caplog):
    with caplog.at_level(logging.WARNING):
        assert ordered_eps([0.01, 0.02, 0.01]) == [0.02, 0.01]
    assert "Only 2 eps" in caplog.text
    with pytest.raises(EpsListError):
        ordered_eps([])
    with pytest.raises(EpsListError):
        ordered_eps([0.01, -0.02])


def test_default_initial_conditions():
    conditions = default_initial_conditions(1, [0.5, 0.0])
    assert conditions[0] == pytest.approx([1.0, 0.0, 0.3, -0.2])
    assert conditions[1] == pytest.approx([0.0, 0.0, 0.3, -0.2])
    assert len(default_initial_conditions(2)[0]) == 6


def test_sample_points_are_seeded():
    assert np.array_equal(sample_points(1, 5, seed=9), sample_points(1, 5, seed=9))
    assert sample_points(2, 5, seed=9).shape == (5, 6)


# --------- integrator noise floor ---------

def test_noise_floor_guard():
    assert is_resolved(1e-9, 1e-11)
    assert not is_resolved(1e-10, 1e-11)
    slopes = resolved_slopes([0.02, 0.01, 0.005], [4e-4, 1e-4, 1e-4], [True, True, False])
    assert slopes[0] == pytest.approx(2.0)
    assert slopes[1] is None


def test_drift_rows_at_the_noise_floor_leave_the_fit(landau_spec, mocker):
    def fake_drifts(spec, gens, eps, conditions, cfg):
        drift = eps if eps > 0.004 else 1e-12
        return [drift] * len(conditions), 1e-13

    mocker.patch("numerics._condition_drifts", side_effect=fake_drifts)
    experiment = drift_experiment(landau_spec, 1, [0.02, 0.01, 0.005, 0.0025])
    assert [row.resolved for row in experiment.rows] == [True, True, True, False]
    assert experiment.rows[3].noise_floor == 1e-13
    assert experiment.rows[1].slope == pytest.approx(1.0)
    assert experiment.rows[3].slope is None
    assert experiment.fit_slope == pytest.approx(1.0)
    assert len(experiment.warnings) == 1
    assert "eps=0.0025" in experiment.warnings[0]


SCAN_EPS = [0.04, 0.02, 0.01, 0.005]


def scan_rows(drifts, best_orders, noise=0.0):
    return [
        ProbeResultRow(eps=eps, best_m=m, min_drift=drift, noise_floor=noise, resolved=is_resolved(drift, noise))
        for eps, drift, m in zip(SCAN_EPS, drifts, best_orders)
    ]


def test_order_scan_summary_detects_exponential_smallness():
    drifts = [math.exp(-1.0 / eps) for eps in SCAN_EPS]
    summary = summarize_order_scan(4, scan_rows(drifts, [1, 2, 3, 4]))
    assert summary.super_polynomial is True
    assert summary.best_m_monotone
    assert summary.fit_slope_inverse_eps == pytest.approx(-1.0)
    assert summary.warnings == []


def test_order_scan_summary_rejects_a_power_law():
    # local slopes 3, 2.5, 2
    drifts = [1e-3, 1e-3 / 2 ** 3, 1e-3 / 2 ** 5.5, 1e-3 / 2 ** 7.5]
    summary = summarize_order_scan(4, scan_rows(drifts, [1, 2, 2, 3]))
    assert summary.local_slopes == pytest.approx([3.0, 2.5, 2.0])
    assert summary.super_polynomial is False


def test_order_scan_summary_needs_a_monotone_best_order():
    drifts = [math.exp(-1.0 / eps) for eps in SCAN_EPS]
    summary = summarize_order_scan(4, scan_rows(drifts, [1, 3, 2, 4]))
    assert not summary.best_m_monotone
    assert summary.super_polynomial is False


def test_order_scan_summary_skips_rows_at_the_noise_floor():
    summary = summarize_order_scan(4, scan_rows([1e-6, 1e-8, 5e-12, 5e-12], [1, 2, 3, 4], noise=5e-12))
    assert [row.resolved for row in summary.rows] == [True, True, False, False]
    assert summary.local_slopes[0] == pytest.approx(math.log(100.0) / math.log(2.0))
    assert summary.local_slopes[1:] == [None, None]
    assert summary.super_polynomial is None
    assert sum("integrator energy error" in warning for warning in summary.warnings) == 2
    assert any("no super-polynomial verdict" in warning for warning in summary.warnings)


def test_order_scan_summary_of_a_single_eps():
    summary = summarize_order_scan(2, scan_rows([1e-4], [2]))
    assert summary.local_slopes == []
    assert summary.super_polynomial is None
    assert summary.warnings == ["single eps value: no fit"]


# --------- experiments ---------

@pytest.mark.slow
def test_first_order_drift_scales_with_eps(landau_spec):
    cfg = FlowConfig(method="dop853", dt=0.05, t_final=1.0, max_samples=300)
    experiment = drift_experiment(landau_spec, 1, [0.02, 0.01, 0.005], c=1.0, cfg=cfg)
    assert [row.eps for row in experiment.rows] == [0.02, 0.01, 0.005]
    assert experiment.rows[0].slope is None
    assert set(experiment.rows[0].per_condition) == {"0", "0.0001", "0.1", "0.5"}
    assert experiment.fit_slope >= 0.7


@pytest.mark.slow
def test_probe_picks_an_order_per_eps(landau_spec):
    cfg = FlowConfig(method="dop853", dt=0.05, t_final=1.0, max_samples=200)
    probe = optimal_order_probe(landau_spec, [0.01, 0.02], 2, cfg=cfg)
    assert [row.eps for row in probe.rows] == [0.02, 0.01]
    assert all(row.best_m in (1, 2) for row in probe.rows)
    assert len(probe.local_slopes) == 1
    assert probe.super_polynomial is None
    assert probe.warnings == []


@pytest.mark.slow
@pytest.mark.parametrize("m", [2, 3])
def test_higher_order_drift_scales_with_eps(landau_spec, m):
    cfg = FlowConfig(method="dop853", dt=0.05, t_final=1.0, max_samples=400)
    experiment = drift_experiment(landau_spec, m, [0.02, 0.01, 0.005, 0.0025], cfg=cfg)
    assert sum(row.resolved for row in experiment.rows) >= 2
    assert experiment.fit_slope >= m - 0.3
    for row in experiment.rows:
        assert row.resolved == (row.drift >= NOISE_FACTOR * row.noise_floor)
