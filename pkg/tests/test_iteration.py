"""Tests for the Duhamel trajectory map and the monotone Picard ladders."""

import json
import math

import numpy as np
import pytest

from heatlab.errors import OrderingViolation, TimeMeshMismatch
from heatlab.evolution import (
    BoundaryCondition,
    RadialField,
    apply_semigroup,
    field_from_table,
    make_grid,
    stability_dt,
    step_imex,
)
from heatlab.iteration import (
    IterationLadder,
    LadderSeed,
    Trajectory,
    check_immediate_boundedness,
    duhamel_map,
    fixed_point_residual,
    maximal_solution,
    run_ladder,
)
from heatlab.nonlinearity import pure_power
from heatlab.singular_ode import build_singular

CUBIC = pure_power(3.0)


@pytest.fixture(scope="module")
def table_cubic():
    return build_singular(CUBIC, 5)


def sandwich_grid(table, n_nodes=64, R=8.0):
    bc = BoundaryCondition("dirichlet", float(table.u_star(R)))
    return make_grid(5, R, n_nodes, bc=bc)


# ---------------------------------------------------------------------------
# trajectory container
# ---------------------------------------------------------------------------

def test_trajectory_validation():
    g = make_grid(5, 8.0, 16)
    with pytest.raises(ValueError):
        Trajectory(g, np.array([0.0, 0.1, 0.3]), np.zeros((3, g.n_nodes)))
    with pytest.raises(ValueError):
        Trajectory(g, np.array([0.1, 0.2]), np.zeros((2, g.n_nodes)))
    with pytest.raises(ValueError):
        Trajectory(g, np.array([0.0, 0.1]), np.zeros((2, 3)))


def test_constant_trajectory_interpolates_flat():
    g = make_grid(5, 8.0, 16)
    fld = RadialField(g, np.linspace(1.0, 0.0, g.n_nodes))
    traj = Trajectory.constant(fld, 0.5, 8)
    assert traj.n_slices == 8
    assert np.allclose(traj.interp(0.31), fld.u)
    assert np.array_equal(traj.final.u, fld.u)


def test_time_mesh_mismatch():
    g = make_grid(5, 8.0, 16)
    u0 = RadialField(g, np.ones(g.n_nodes))
    traj = Trajectory.constant(u0, 0.5, 8)
    with pytest.raises(TimeMeshMismatch):
        duhamel_map(traj, u0, CUBIC, 0.25)
    other = make_grid(5, 8.0, 32)
    with pytest.raises(TimeMeshMismatch):
        duhamel_map(traj, RadialField(other, np.ones(other.n_nodes)),
                    CUBIC, 0.5)


# ---------------------------------------------------------------------------
# Duhamel map
# ---------------------------------------------------------------------------

def test_zero_data_zero_seed_is_fixed():
    # f(0) = 0: the zero trajectory maps to the zero trajectory
    g = make_grid(5, 8.0, 33)
    zero = RadialField(g, np.zeros(g.n_nodes))
    traj = Trajectory.constant(zero, 0.1, 16)
    out = duhamel_map(traj, zero, CUBIC, 0.1)
    assert np.all(out.values == 0.0)


def test_reaction_free_step_reproduces_semigroup():
    # against a zero previous iterate the map returns S(t) u0; the
    # slice-recursion composition must agree with the direct operator
    g = make_grid(5, 8.0, 129)
    u0 = RadialField(g, np.exp(-g.r ** 2))
    zero = Trajectory.constant(RadialField(g, np.zeros(g.n_nodes)), 0.01, 64)
    out = duhamel_map(zero, u0, CUBIC, 0.01, interp="cubic")
    direct = apply_semigroup(u0, 0.01)
    assert np.abs(out.values[-1] - direct.u).max() <= 1e-3


def test_duhamel_map_is_monotone():
    # ordered previous iterates and ordered data give ordered outputs
    rng = np.random.default_rng(11)
    g = make_grid(5, 8.0, 33)
    lo_f = RadialField(g, rng.uniform(0.0, 1.0, g.n_nodes))
    hi_f = RadialField(g, lo_f.u + rng.uniform(0.0, 0.5, g.n_nodes))
    lo = Trajectory.constant(lo_f, 0.01, 16)
    hi = Trajectory.constant(hi_f, 0.01, 16)
    out_lo = duhamel_map(lo, lo_f, CUBIC, 0.01, interp="linear")
    out_hi = duhamel_map(hi, hi_f, CUBIC, 0.01, interp="linear")
    assert np.all(out_lo.values <= out_hi.values)


# ---------------------------------------------------------------------------
# monotone ladders
# ---------------------------------------------------------------------------

def test_sandwich_ladders(table_cubic):
    # 6 iterates each side bracket every integral solution:
    # v0 <= ... <= v6 <= w6 <= ... <= w0 nodewise
    g = sandwich_grid(table_cubic)
    envelope = field_from_table(table_cubic, g, cap=2.0, spec=CUBIC)
    u0 = RadialField(g, 0.9 * envelope.u, envelope.cap_mask.copy())
    below = run_ladder("from_below", u0, CUBIC, 0.01, k_max=6,
                       ladder_tol=0.0)
    above = run_ladder(LadderSeed.from_above(envelope), u0, CUBIC, 0.01,
                       k_max=6, ladder_tol=0.0)
    assert below.ordering_violation_max <= 1e-8
    assert above.ordering_violation_max <= 1e-8
    cross = max(float((below.trajectories[k].values
                       - above.trajectories[k].values).max())
                for k in range(7))
    assert cross <= 1e-8
    # the chains genuinely move and approach each other
    assert below.cauchy_gaps[0] > 0.1
    assert above.cauchy_gaps[-1] < above.cauchy_gaps[0]


def test_ordering_violation_raised(table_cubic):
    # a high cap is not a discrete supersolution: the from-above chain
    # must flag the break instead of silently absorbing it
    g = sandwich_grid(table_cubic)
    envelope = field_from_table(table_cubic, g, cap=50.0, spec=CUBIC)
    u0 = RadialField(g, 0.9 * envelope.u, envelope.cap_mask.copy())
    with pytest.raises(OrderingViolation):
        run_ladder(LadderSeed.from_above(envelope), u0, CUBIC, 0.01,
                   k_max=6)


def test_from_below_converges_with_small_horizon(table_cubic):
    g = sandwich_grid(table_cubic)
    envelope = field_from_table(table_cubic, g, cap=2.0, spec=CUBIC)
    u0 = RadialField(g, 0.5 * envelope.u, envelope.cap_mask.copy())
    ladder = run_ladder("from_below", u0, CUBIC, 1e-3, k_max=8,
                        ladder_tol=1e-8)
    assert ladder.converged
    assert ladder.cauchy_gaps[-1] <= 1e-8


def test_maximal_solution_gaps_decrease(table_cubic):
    g = sandwich_grid(table_cubic)
    envelope = field_from_table(table_cubic, g, cap=2.0, spec=CUBIC)
    u0 = RadialField(g, 0.9 * envelope.u, envelope.cap_mask.copy())
    ladder = run_ladder(LadderSeed.from_above(envelope), u0, CUBIC, 0.01,
                        k_max=6, ladder_tol=0.0)
    est = maximal_solution(ladder)
    assert est.gaps_decreasing
    assert np.all(est.field.u >= 0.0)


def test_ladder_report_serializes(table_cubic):
    g = sandwich_grid(table_cubic)
    envelope = field_from_table(table_cubic, g, cap=2.0, spec=CUBIC)
    u0 = RadialField(g, 0.9 * envelope.u, envelope.cap_mask.copy())
    ladder = run_ladder("from_below", u0, CUBIC, 0.01, k_max=3,
                        ladder_tol=0.0)
    doc = json.loads(ladder.to_json())
    assert doc["seed"] == "from_below"
    assert doc["k"] == 3
    assert len(doc["sup_norm_per_iterate"]) == 4
    assert len(doc["cauchy_gaps"]) == 3
    assert doc["ordering_violation_max"] <= 1e-8


def test_seed_validation():
    with pytest.raises(ValueError):
        LadderSeed("sideways")
    with pytest.raises(ValueError):
        LadderSeed("from_above")


# ---------------------------------------------------------------------------
# stationarity fixed point
# ---------------------------------------------------------------------------

def test_fixed_point_residual_contracts_under_refinement(table_cubic):
    # one Duhamel application almost reproduces the capped profile; the
    # defect away from the capped zone at least halves when every grid
    # interval is split in two
    bc = BoundaryCondition("dirichlet", float(table_cubic.u_star(8.0)))
    coarse = make_grid(5, 8.0, 65, bc=bc)
    fine = coarse.refined()
    resids = []
    for g in (coarse, fine):
        env = field_from_table(table_cubic, g, cap=50.0, spec=CUBIC)
        resids.append(fixed_point_residual(env, CUBIC, 0.01))
    assert resids[1] <= 1e-2          # tolerance from the refinement study
    assert resids[0] / resids[1] >= 1.5


# ---------------------------------------------------------------------------
# immediate boundedness
# ---------------------------------------------------------------------------

def test_immediate_boundedness_cap_stable(table_cubic):
    # singular-ish data regularizes instantly: the late iterates carry
    # finite sup and reaction norms, stable under a 10x cap change
    bc = BoundaryCondition("dirichlet", float(table_cubic.u_star(8.0)))
    g = make_grid(5, 8.0, 129, bc=bc)
    reports = []
    # caps kept low enough that the capped zone's unresolved reaction mass
    # (~ cap^3 x origin-cell volume) stays negligible on this grid
    for cap in (1e2, 1e3):
        env = field_from_table(table_cubic, g, cap=cap, spec=CUBIC)
        u0 = RadialField(g, 0.5 * env.u, env.cap_mask.copy())
        ladder = run_ladder("from_below", u0, CUBIC, 0.05, k_max=4,
                            ladder_tol=0.0, order_tol=1e-3)
        reports.append(check_immediate_boundedness(ladder, CUBIC,
                                                   (0.01, 0.05)))
    for rep in reports:
        assert rep["bounded"]
    a, b = (r["sup_iterate4"] for r in reports)
    assert abs(a - b) / a <= 0.05
    a, b = (r["reaction_ul_iterate3"] for r in reports)
    assert abs(a - b) / a <= 0.05


def test_immediate_boundedness_window_validated(table_cubic):
    g = sandwich_grid(table_cubic)
    env = field_from_table(table_cubic, g, cap=2.0, spec=CUBIC)
    u0 = RadialField(g, 0.5 * env.u, env.cap_mask.copy())
    ladder = run_ladder("from_below", u0, CUBIC, 0.01, k_max=2,
                        ladder_tol=0.0)
    with pytest.raises(ValueError):
        check_immediate_boundedness(ladder, CUBIC, (0.05, 0.01))


# ---------------------------------------------------------------------------
# agreement with the time stepper
# ---------------------------------------------------------------------------

def test_ladder_limit_matches_imex_evolution(table_cubic):
    # the converged from-below iterate and the IMEX march approximate the
    # same solution from bounded data
    bc = BoundaryCondition("dirichlet", float(table_cubic.u_star(8.0)))
    g = make_grid(5, 8.0, 129, bc=bc)
    env = field_from_table(table_cubic, g, cap=100.0, spec=CUBIC)
    u0 = RadialField(g, 0.5 * env.u, env.cap_mask.copy())
    t_obs = 0.05
    ladder = run_ladder("from_below", u0, CUBIC, t_obs, k_max=8,
                        ladder_tol=0.0, order_tol=1e-3, interp="cubic")
    duh = ladder.final.final.u

    cur, t = u0, 0.0
    while t < t_obs:
        dt = min(stability_dt(cur, CUBIC, dt_max=1e-3), t_obs - t)
        cur = step_imex(cur, CUBIC, dt)
        t += dt
    window = (g.r >= 0.5) & (g.r <= 4.0)
    rel = np.abs(duh[window] - cur.u[window]) / np.abs(cur.u[window])
    assert rel.max() <= 0.1
