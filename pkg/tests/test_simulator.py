import numpy as np
import pytest

from asymgame.errors import DimensionMismatch, IndefiniteCovariance
from asymgame.filtering import filter_step, one_step_params
from asymgame.finite import finite_value, solve_finite
from asymgame.lqg import filter_riccati
from asymgame.model import load_model
from asymgame.scenarios import X0, Z0_EVADER, Z0_PURSUER, scenario_config
from asymgame.simulator import (
    InitSpec,
    closed_loop_system,
    csv_header,
    from_solution,
    make_stream,
    mean_propagation,
    monte_carlo,
    read_csv,
    rollout,
    rollout_with_noise,
    sample_gaussian,
    seeded_rollout,
    write_mean_csv,
    write_trajectory_csv,
)
from asymgame.stationary import stationary_state_cov, value_iterate


def baseline_with(**over):
    cfg = scenario_config("pe-baseline")
    for k, v in over.items():
        cfg["matrices"][k] = np.asarray(v, dtype=float).tolist()
    return load_model(cfg)


@pytest.fixture(scope="module")
def baseline_loop(baseline_solution):
    return from_solution(baseline_solution)


# ------------------------------------------------------------ sampling


def test_zero_covariance_returns_mean_exactly() -> None:
    mean = np.array([1.5, -2.0, 0.25])
    out = sample_gaussian(mean, np.zeros((3, 3)), make_stream(1))
    np.testing.assert_array_equal(out, mean)


def test_same_seed_same_draw() -> None:
    a = sample_gaussian(np.zeros(4), np.eye(4), make_stream(123, 5))
    b = sample_gaussian(np.zeros(4), np.eye(4), make_stream(123, 5))
    c = sample_gaussian(np.zeros(4), np.eye(4), make_stream(123, 6))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_covariance_matches() -> None:
    cov = np.diag([4.0, 9.0])
    s = make_stream(2024)
    draws = np.array([sample_gaussian(np.zeros(2), cov, s) for _ in range(100_000)])
    emp = np.cov(draws.T)
    np.testing.assert_allclose(np.diag(emp), np.diag(cov), rtol=0.05)
    assert abs(emp[0, 1]) < 0.05 * 6.0


def test_rank_deficient_and_indefinite_covariances() -> None:
    v = np.array([1.0, 2.0])
    cov = np.outer(v, v)
    x = sample_gaussian(np.zeros(2), cov - 1e-14 * np.eye(2), make_stream(3))
    # the draw lies on the range of the rank-one covariance
    assert abs(x[0] * 2.0 - x[1]) < 1e-6
    with pytest.raises(IndefiniteCovariance):
        sample_gaussian(np.zeros(2), np.diag([1.0, -0.1]), make_stream(3))


# ------------------------------------------------------------ rollouts


def test_noise_free_estimates_track_truth() -> None:
    noisy = baseline_with(B2=np.zeros((4, 2)), S=-np.eye(2))
    sol = value_iterate(noisy)
    quiet = baseline_with(B2=np.zeros((4, 2)), S=-np.eye(2), W=np.zeros((4, 4)),
                          V1=np.zeros((2, 2)), V2=np.zeros((2, 2)))
    cl = closed_loop_system(quiet, sol.K1, sol.K2, sol.filters)
    x0 = np.array([3.0, -1.0, 0.5, 0.2])
    tr = rollout(cl, x0, x0, x0, 200, make_stream(0))
    assert np.abs(tr.z1 - tr.x).max() == 0.0


def test_trajectory_invariants(baseline_loop) -> None:
    cl = baseline_loop
    T = 50
    xi = make_stream(8).standard_normal((T, cl.n + cl.p1 + cl.p2))
    tr = rollout_with_noise(cl, X0, Z0_PURSUER, Z0_EVADER, xi)
    assert tr.x.shape == (T + 1, 4) and tr.u1.shape == (T, 2)
    fs = cl.filter_stage(0)
    for t in range(T):
        np.testing.assert_array_equal(tr.u1[t], cl.K1[0] @ tr.z1[t])
        np.testing.assert_array_equal(tr.u2[t], cl.K2[0] @ tr.z2[t])
        w = cl.Fw[0] @ xi[t, :4]
        v1 = cl.Fv1[0] @ xi[t, 4:6]
        expected_x = cl.A[0] @ tr.x[t] + cl.B1[0] @ tr.u1[t] + cl.B2[0] @ tr.u2[t] + w
        np.testing.assert_array_equal(tr.x[t + 1], expected_x)
        y1 = cl.C1[0] @ tr.x[t] + v1
        np.testing.assert_array_equal(tr.z1[t + 1], filter_step(tr.z1[t], tr.u1[t], y1, fs, 1, cl.C1[0]))
        cost = tr.x[t] @ cl.Q[0] @ tr.x[t] + tr.u1[t] @ cl.R[0] @ tr.u1[t] + tr.u2[t] @ cl.S[0] @ tr.u2[t]
        assert tr.stage_cost[t] == cost


def test_finite_rollout_ignores_stage_zero_measurement(finite_baseline) -> None:
    cl = from_solution(finite_baseline)
    x0 = np.array(X0)
    a = rollout_with_noise(cl, x0, x0, x0, np.zeros((3, 8)))
    xi = np.zeros((3, 8))
    xi[0, 4:] = 100.0
    b = rollout_with_noise(cl, x0, x0, x0, xi)
    np.testing.assert_array_equal(a.z1[1], b.z1[1])
    np.testing.assert_array_equal(a.z2[1], b.z2[1])


def test_too_many_steps_for_finite_solution(finite_baseline) -> None:
    cl = from_solution(finite_baseline)
    with pytest.raises(DimensionMismatch):
        rollout(cl, X0, X0, X0, 201, make_stream(0))


def test_mean_propagation_is_noise_free(baseline_loop) -> None:
    tr = mean_propagation(baseline_loop, X0, Z0_PURSUER, Z0_EVADER, 100)
    again = rollout_with_noise(baseline_loop, X0, Z0_PURSUER, Z0_EVADER, np.zeros((100, 8)))
    np.testing.assert_array_equal(tr.x, again.x)


def test_pursuer_y_excursion(baseline_loop) -> None:
    init = InitSpec(np.array(X0), z0_1=np.array(Z0_PURSUER), z0_2=np.array(Z0_EVADER))
    st = monte_carlo(baseline_loop, init, 1000, 300, base_seed=5)
    assert np.abs(st.mean_x[:, 1]).max() > 0.1


# ------------------------------------------------------------ Monte Carlo


def test_single_rollout_stats_equal_the_trajectory(baseline_loop) -> None:
    init = InitSpec(np.array(X0), z0_1=np.array(Z0_PURSUER), z0_2=np.array(Z0_EVADER))
    st = monte_carlo(baseline_loop, init, 1, 80, base_seed=99, use_numba=False)
    tr = seeded_rollout(baseline_loop, X0, Z0_PURSUER, Z0_EVADER, 80, 99, 0)
    np.testing.assert_allclose(st.mean_x, tr.x, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(st.mean_z1, tr.z1, rtol=1e-12, atol=1e-12)
    assert st.total_costs[0] == pytest.approx(tr.total_cost, rel=1e-12)
    assert st.average_cost_se == 0.0


def test_deterministic_and_thread_invariant(baseline_loop) -> None:
    init = InitSpec(np.zeros(4))
    a = monte_carlo(baseline_loop, init, 200, 5000, base_seed=1, threads=1)
    b = monte_carlo(baseline_loop, init, 200, 5000, base_seed=1, threads=4)
    c = monte_carlo(baseline_loop, init, 200, 5000, base_seed=1, threads=4)
    for s in (b, c):
        np.testing.assert_array_equal(a.mean_x, s.mean_x)
        np.testing.assert_array_equal(a.total_costs, s.total_costs)
        assert a.average_cost == s.average_cost


def test_rollout_depends_only_on_seed_and_index(baseline_loop) -> None:
    init = InitSpec(np.array(X0), x0_cov=np.eye(4))
    small = monte_carlo(baseline_loop, init, 3, 40, base_seed=17)
    big = monte_carlo(baseline_loop, init, 10, 40, base_seed=17)
    np.testing.assert_array_equal(small.total_costs, big.total_costs[:3])


def test_numba_and_numpy_kernels_agree(baseline_loop) -> None:
    init = InitSpec(np.array(X0), z0_1=np.array(Z0_PURSUER), z0_2=np.array(Z0_EVADER))
    a = monte_carlo(baseline_loop, init, 50, 300, base_seed=4, use_numba=True)
    b = monte_carlo(baseline_loop, init, 50, 300, base_seed=4, use_numba=False)
    np.testing.assert_allclose(a.total_costs, b.total_costs, rtol=1e-10)
    np.testing.assert_allclose(a.mean_x, b.mean_x, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(a.final_states, b.final_states, rtol=1e-9, atol=1e-9)


def test_kernel_matches_reference_rollout(baseline_loop) -> None:
    st = monte_carlo(baseline_loop, InitSpec(np.array(X0), z0_1=np.array(Z0_PURSUER)), 4, 60, base_seed=21)
    for k in range(4):
        tr = seeded_rollout(baseline_loop, X0, Z0_PURSUER, X0, 60, 21, k)
        X = np.concatenate((tr.x[-1], tr.x[-1] - tr.z1[-1], tr.x[-1] - tr.z2[-1]))
        np.testing.assert_allclose(st.final_states[k], X, rtol=1e-10, atol=1e-10)
        assert st.total_costs[k] == pytest.approx(tr.total_cost, rel=1e-10)


def test_empirical_average_cost_matches_stationary_J(baseline_solution, baseline_loop) -> None:
    st = monte_carlo(baseline_loop, InitSpec.stationary_draw(baseline_solution), 200, 5000, base_seed=7)
    assert abs(st.average_cost - baseline_solution.J) < 3 * st.average_cost_se


def test_finite_total_cost_matches_finite_value(finite_baseline) -> None:
    st = monte_carlo(from_solution(finite_baseline), InitSpec(np.array(X0)), 20000, 200, base_seed=11)
    assert abs(st.mean_total_cost - finite_value(finite_baseline)) < 3 * st.total_cost_se


def test_random_initial_state_matches_finite_value(baseline_model) -> None:
    X0c = np.diag([1.0, 1.0, 0.1, 0.1])
    eq = solve_finite(baseline_model.with_horizon(50, x0_mean=np.array(X0), x0_cov=X0c))
    st = monte_carlo(from_solution(eq), InitSpec(np.array(X0), x0_cov=X0c), 20000, 50, base_seed=12)
    assert abs(st.mean_total_cost - finite_value(eq)) < 3 * st.total_cost_se


def test_stationary_draw_matches_finite_value(finite_baseline, baseline_solution) -> None:
    sol = baseline_solution
    SX = stationary_state_cov(sol.model, sol.K1, sol.K2, sol.filters)
    J = finite_value(finite_baseline, np.zeros(4), X_cov=SX)
    st = monte_carlo(from_solution(finite_baseline), InitSpec(np.zeros(4), stationary=SX), 5000, 200, base_seed=13)
    assert abs(st.mean_total_cost - J) < 3 * st.total_cost_se


def test_estimates_are_unbiased(baseline_loop) -> None:
    st = monte_carlo(baseline_loop, InitSpec(np.array(X0)), 10_000, 200, base_seed=3)
    em = st.error_means
    se = em.std(axis=0, ddof=1) / np.sqrt(em.shape[0])
    assert np.linalg.norm(em.mean(axis=0)) < 3 * np.linalg.norm(se)


def test_decoupled_kalman_error_covariance() -> None:
    m = baseline_with()
    S1, L1 = filter_riccati(m.A, m.C1, m.W, m.V1)
    S2, L2 = filter_riccati(m.A, m.C2, m.W, m.V2)
    Z = np.zeros((2, 4))
    cl = closed_loop_system(m, Z, Z, one_step_params(m.A, m.B1, m.B2, Z, Z, L1, L2))
    st = monte_carlo(cl, InitSpec(np.zeros(4)), 20000, 300, base_seed=14)
    E = st.final_states[:, 4:]
    C = E.T @ E / E.shape[0]
    for emp, ref in ((C[:4, :4], S1), (C[4:, 4:], S2)):
        assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.1


def test_error_covariance_matches_closed_loop_covariance(baseline_solution, baseline_loop) -> None:
    sol = baseline_solution
    SX = stationary_state_cov(sol.model, sol.K1, sol.K2, sol.filters)
    st = monte_carlo(baseline_loop, InitSpec(np.zeros(4), stationary=SX), 20000, 300, base_seed=9)
    E = st.final_states[:, 4:]
    C = E.T @ E / E.shape[0]
    assert np.linalg.norm(C - SX[4:, 4:]) / np.linalg.norm(SX[4:, 4:]) < 0.1


@pytest.mark.xfail(strict=True, reason="the solver's Sigma uses blockdiag(W, W) for the shared process noise; it is ~23% from the closed-loop error covariance")
def test_error_covariance_matches_solver_sigma(baseline_solution, baseline_loop) -> None:
    sol = baseline_solution
    st = monte_carlo(baseline_loop, InitSpec.stationary_draw(sol), 20000, 300, base_seed=9)
    E = st.final_states[:, 4:]
    C = E.T @ E / E.shape[0]
    assert np.linalg.norm(C - sol.Sigma) / np.linalg.norm(sol.Sigma) < 0.1


def test_invalid_sample_count(baseline_loop) -> None:
    with pytest.raises(ValueError):
        monte_carlo(baseline_loop, InitSpec(np.zeros(4)), 0, 10)


# ------------------------------------------------------------ CSV


def test_csv_header() -> None:
    assert csv_header(2, 1, 1) == ["t", "x_1", "x_2", "z1_1", "z1_2", "z2_1", "z2_2", "u1_1", "u2_1", "stage_cost"]


def test_trajectory_csv_round_trip(baseline_loop, tmp_path) -> None:
    tr = seeded_rollout(baseline_loop, X0, Z0_PURSUER, Z0_EVADER, 20, 42)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(tr, path)
    header, rows = read_csv(path)
    assert header == csv_header(4, 2, 2)
    assert len(rows) == 21
    assert [int(r[0]) for r in rows] == list(range(21))
    for t in range(20):
        assert np.array_equal([float(v) for v in rows[t][1:5]], tr.x[t])
        assert float(rows[t][-1]) == tr.stage_cost[t]
    assert rows[-1][13:17] == ["", "", "", ""]
    assert float(rows[-1][-1]) == tr.terminal_cost


def test_mean_csv(baseline_loop, tmp_path) -> None:
    st = monte_carlo(baseline_loop, InitSpec(np.array(X0)), 5, 10, base_seed=1)
    path = tmp_path / "mean_trajectory.csv"
    write_mean_csv(st, baseline_loop, path, terminal=False)
    header, rows = read_csv(path)
    assert len(rows) == 11
    u1 = baseline_loop.K1[0] @ st.mean_z1[3]
    assert np.allclose([float(v) for v in rows[3][13:15]], u1, rtol=1e-15, atol=0)
    assert rows[-1][-1] == ""
