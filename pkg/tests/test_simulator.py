import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from critscen.scenario import full_factorial, highway_3dof, highway_6dof, latin_hypercube, scenarios_to_phys
from critscen.simulator import (STATUS_INFEASIBLE, STATUS_OK, TRAJECTORY_COLUMNS, NumericalFailure,
                                SimConfig, apriori_infeasible, criticality_vector, simulate,
                                simulate_batch, simulate_many, trajectory_rows)

from reference import apriori_count_exact, lateral_reference


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(t_end=0.01, dt=0.02)
    with pytest.raises(ValueError):
        SimConfig(road_edge=4.0)
    with pytest.raises(ValueError):
        SimConfig(c_wind=float("nan"))


def test_infeasible_corner():
    out = simulate([25.0, 0.0, 50.0])
    assert out.status == STATUS_INFEASIBLE
    assert out.c_lat == 1.75 and not out.off_road and out.trajectory is None
    assert criticality_vector(out).tolist() == [1.75, 4.0]


def test_infeasible_metric_is_start_offset():
    out = simulate([25.0, 0.0, 50.0, 0.3, 0.0, 0.8])
    assert out.status == STATUS_INFEASIBLE
    assert out.c_lat == abs(-1.75 + 0.3)


def test_slower_ego_never_leaves_its_lane():
    out = simulate([5.0, 20.0, 100.0])
    assert out.status == STATUS_OK and out.c_lat == 1.75 and not out.off_road


def test_wind_beyond_friction_limit_drives_off_road():
    # d0 = 50 here would already be a-priori infeasible (50 / 23 < 3.5)
    assert simulate([25.0, 2.0, 50.0, 0.0, 25.0, 0.2]).status == STATUS_INFEASIBLE
    x = (25.0, 2.0, 100.0, 0.0, 25.0, 0.2)
    out = simulate(x)
    assert out.status == STATUS_OK and out.off_road and out.c_lat > 3.5
    ref_c, ref_off = lateral_reference(*x)
    assert ref_off
    assert simulate(x, SimConfig(dt=0.001)).off_road
    assert abs(out.c_lat - ref_c) < 1e-3


def test_nominal_overtake_metric_range():
    out = simulate([13.0, 6.0, 80.0])
    assert out.status == STATUS_OK and not out.off_road
    assert 1.75 < out.c_lat <= 3.5
    ref_c, ref_off = lateral_reference(13.0, 6.0, 80.0)
    assert not ref_off and abs(out.c_lat - ref_c) < 1e-3


def test_apriori_predicate_matches_exact_count_on_grid():
    x = scenarios_to_phys(full_factorial(highway_3dof()))
    for t_feas, count in ((SimConfig().t_feas, 51), (3.5, 69)):
        status = simulate_batch(x, SimConfig(t_feas=t_feas))[0]
        assert int((status == STATUS_INFEASIBLE).sum()) == apriori_count_exact(x, t_feas) == count


def test_apriori_predicate_ignores_integration_settings():
    x = scenarios_to_phys(full_factorial(highway_3dof()))
    a = simulate_batch(x, SimConfig())[0]
    b = simulate_batch(x, SimConfig(dt=0.05, t_end=10.0, omega_n=2.0, zeta0=3.0))[0]
    assert np.array_equal(a, b)
    assert apriori_infeasible(20.0, 10.0, 34.0, 3.5) and not apriori_infeasible(20.0, 10.0, 35.0, 3.5)


def test_determinism_and_batch_agreement():
    scns = latin_hypercube(highway_6dof(), 40, 3)
    one = simulate_many(scns)
    again = simulate_many(scns)
    assert one == again
    status, c, off, t = simulate_batch(scenarios_to_phys(scns))
    for o, s_, c_, f_, t_ in zip(one, status, c, off, t):
        assert (o.status, o.c_lat, o.off_road) == (s_, c_, f_)
        assert (o.first_exceed_t is None) == math.isnan(t_)


def _status_ok_sample(space, n, seed):
    x = scenarios_to_phys(latin_hypercube(space, n, seed))
    return x[simulate_batch(x)[0] == STATUS_OK]


@pytest.mark.parametrize("space", [highway_3dof(), highway_6dof()], ids=["3dof", "6dof"])
def test_halving_dt_changes_metric_below_1mm(space):
    x = _status_ok_sample(space, 120, 5)
    c1 = simulate_batch(x, SimConfig())[1]
    c2 = simulate_batch(x, SimConfig(dt=0.01))[1]
    assert np.max(np.abs(c1 - c2)) < 1e-3


def test_against_adaptive_reference_integrator():
    x = _status_ok_sample(highway_6dof(), 40, 9)
    status, c, off, _ = simulate_batch(x)
    for row, c_, off_ in zip(x, c, off):
        ref_c, ref_off = lateral_reference(*row)
        assert abs(c_ - ref_c) < 1e-3
        assert off_ == ref_off


@given(st.floats(5.0, 25.0), st.floats(0.0, 20.0), st.floats(50.0, 100.0), st.floats(-0.5, 0.5),
       st.floats(0.0, 25.0), st.floats(0.2, 0.8))
def test_outcome_invariants(ve, vl, d0, x0, vw, mu):
    out = simulate([ve, vl, d0, x0, vw, mu])
    y0 = abs(-1.75 + x0)
    if out.status == STATUS_INFEASIBLE:
        assert out.c_lat == y0 and not out.off_road and out.trajectory is None
    else:
        assert out.c_lat >= y0
        assert out.off_road == (out.c_lat > 3.5)
        assert (out.first_exceed_t is not None) == out.off_road


def test_no_overshoot_when_overdamped():
    # zeta0 = 1.1 with mu = mu_ref and v_ego <= v_ref gives zeta >= 1
    cfg = SimConfig(zeta0=1.1)
    for ve in np.linspace(5.0, 15.0, 6):
        for vl in np.linspace(0.0, 20.0, 11):
            for d0 in (50.0, 75.0, 100.0):
                out = simulate([ve, vl, d0], cfg)
                if out.status != STATUS_OK:
                    continue
                if ve - vl <= 0:
                    assert out.c_lat <= 1.75 + 1e-6
                assert out.c_lat <= 3.5


def test_monotone_in_ego_speed_probe():
    ve = np.linspace(5.0, 25.0, 11)
    x = np.column_stack([ve, np.full(11, 10.0), np.full(11, 75.0)])
    c = simulate_batch(x)[1]
    assert np.all(np.diff(c) >= 0)


def test_trajectory_recording():
    out = simulate([15.0, 5.0, 60.0], record=True)
    tr = out.trajectory
    assert tr.shape == (2001, 6)
    assert tr[0, 0] == 0.0 and tr[-1, 0] == pytest.approx(40.0)
    assert np.max(np.abs(tr[:, 3])) <= out.c_lat
    rows = trajectory_rows(out)
    assert list(rows[0]) == list(TRAJECTORY_COLUMNS)
    assert {r["maneuver_state"] for r in rows} == {"follow", "overtake", "return"}
    assert simulate([15.0, 5.0, 60.0]).c_lat == out.c_lat


def test_trajectory_ends_at_road_departure():
    out = simulate([25.0, 2.0, 100.0, 0.0, 25.0, 0.2], record=True)
    last = out.trajectory[-1]
    assert last[0] == out.first_exceed_t
    assert abs(last[3]) == out.c_lat > 3.5
    assert np.all(np.abs(out.trajectory[:-1, 3]) <= 3.5)


def test_non_finite_state_is_an_error():
    with pytest.raises(NumericalFailure):
        simulate([20.0, 10.0, 80.0, 0.0, 1e200, 0.8])
    scns = [[10.0, 5.0, 80.0], [20.0, 10.0, 80.0, 0.0, 1e200, 0.8]]
    with pytest.raises(NumericalFailure, match="index 1"):
        simulate_many(scns)
    with pytest.raises(NumericalFailure, match="index 1"):
        simulate_batch(np.array([[10.0, 5.0, 80.0, 0, 0, 0.8], [20.0, 10.0, 80.0, 0.0, 1e200, 0.8]]))


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        simulate([float("nan"), 1.0, 60.0])
    with pytest.raises(ValueError):
        simulate([10.0, 1.0])
