import itertools
import math

import numpy as np
import pytest

from uavnoma import inner
from uavnoma.errors import NumericalFailure
from uavnoma.inner import SmoothProgram, Status, check_gradients, kkt_residual, max_violation, solve


def quad(Q, c):
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    return lambda x: (0.5 * x @ Q @ x + c @ x, Q @ x + c, Q)


def lin(a, b):
    a = np.asarray(a, float)
    return lambda x: (a @ x - b, a, np.zeros((len(a), len(a))))


def test_one_dimensional_example():
    prog = SmoothProgram(1, lambda x: ((x[0] - 3) ** 2, np.array([2 * (x[0] - 3)])), [lin([1.0], 2.0)], [0.0], [10.0])
    rep = solve(prog, np.array([0.0]))
    assert rep.status is Status.CONVERGED
    assert rep.point[0] == pytest.approx(2.0, abs=1e-7)
    assert rep.objective_value == pytest.approx(1.0, abs=1e-6)


def test_two_dimensional_example():
    prog = SmoothProgram(2, quad(2 * np.eye(2), [0, 0]), [lin([-1.0, -1.0], -2.0)])
    rep = solve(prog, np.array([3.0, 3.0]))
    assert rep.converged
    assert rep.point == pytest.approx([1.0, 1.0], abs=1e-7)
    assert rep.objective_value == pytest.approx(2.0, abs=1e-6)


def active_set_oracle(Q, c, A, b):
    """Exact QP optimum by enumerating every active set."""
    n, k = len(c), len(b)
    best = math.inf
    for r in range(k + 1):
        for S in itertools.combinations(range(k), r):
            S = list(S)
            K = np.zeros((n + r, n + r))
            K[:n, :n] = Q
            K[:n, n:] = A[S].T
            K[n:, :n] = A[S]
            rhs = np.concatenate([-c, b[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(lam >= -1e-10) and np.all(A @ x - b <= 1e-10):
                best = min(best, 0.5 * x @ Q @ x + c @ x)
    return best


@pytest.mark.parametrize("seed", range(12))
def test_random_convex_qps_match_active_set_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    A = rng.normal(size=(3, n))
    x_feas = rng.normal(size=n)
    b = A @ x_feas + rng.uniform(0.1, 1.0, 3)
    prog = SmoothProgram(n, quad(Q, c), [lin(A[i], b[i]) for i in range(3)])
    rep = solve(prog, x_feas)
    assert rep.converged
    assert rep.objective_value == pytest.approx(active_set_oracle(Q, c, A, b), abs=1e-6, rel=1e-6)


def test_infeasible_start_goes_through_phase_one():
    prog = SmoothProgram(2, quad(np.eye(2), [0, 0]), [lin([-1.0, 0.0], -5.0)], [-10, -10], [10, 10])
    rep = solve(prog, np.array([0.0, 0.0]))
    assert rep.converged
    assert rep.point == pytest.approx([5.0, 0.0], abs=1e-6)


def test_infeasible_program_is_reported_not_raised():
    prog = SmoothProgram(1, quad([[1.0]], [0.0]), [lin([1.0], -1.0), lin([-1.0], -1.0)])
    rep = solve(prog, np.array([0.0]))
    assert rep.status is Status.INFEASIBLE


def test_non_finite_callback_names_constraint():
    prog = SmoothProgram(1, quad([[1.0]], [0.0]), [lin([1.0], 5.0), lambda x: (math.nan, np.zeros(1))])
    with pytest.raises(NumericalFailure) as exc:
        solve(prog, np.array([0.0]))
    assert exc.value.index == 1


def test_descent_and_kkt_on_feasible_start():
    rng = np.random.default_rng(7)
    Q = np.diag([1.0, 4.0, 9.0])
    c = np.array([-3.0, 1.0, 2.0])
    A = rng.normal(size=(3, 3))
    x0 = np.zeros(3)
    b = A @ x0 + 0.5
    prog = SmoothProgram(3, quad(Q, c), [lin(A[i], b[i]) for i in range(3)], [-5] * 3, [5] * 3)
    rep = solve(prog, x0)
    assert rep.objective_value <= prog.objective(x0)[0]
    lam = rep.multipliers
    zl, zu = rep.bound_multipliers
    assert kkt_residual(prog, rep.point, lam, zl, zu) <= 1e-8
    assert max_violation(prog, rep.point) <= 1e-9
    hist = [h for h in rep.history]
    assert all(b_ <= a_ + 1e-12 for a_, b_ in zip(hist, hist[1:])) or not hist


def test_determinism():
    prog = SmoothProgram(2, quad([[2, 0.3], [0.3, 1]], [1, -1]), [lin([1, 1], 0.5)], [-3, -3], [3, 3])
    a = solve(prog, np.array([-1.0, -1.0]))
    b = solve(prog, np.array([-1.0, -1.0]))
    assert np.array_equal(a.point, b.point)
    assert (a.objective_value, a.kkt_residual, a.iterations, a.status) == (b.objective_value, b.kkt_residual, b.iterations, b.status)


def test_fixed_variables_do_not_move():
    prog = SmoothProgram(2, quad(np.eye(2), [-1, -1]), [], [0.3, -5], [0.3, 5])
    rep = solve(prog, np.array([0.3, 0.0]))
    assert rep.point[0] == 0.3
    assert rep.point[1] == pytest.approx(1.0, abs=1e-7)


def test_missing_hessians_use_differences():
    prog = SmoothProgram(2, lambda x: (np.sum(np.exp(x)) - x @ [2, 3], np.exp(x) - [2, 3]), [lambda x: (x[0] + x[1] - 1, np.ones(2))])
    rep = solve(prog, np.array([-1.0, -1.0]))
    assert rep.converged
    # stationarity: exp(x) - (2, 3) + lam (1, 1) = 0 with x0 + x1 = 1
    assert rep.point.sum() == pytest.approx(1.0, abs=1e-7)
    assert math.exp(rep.point[0]) - 2 == pytest.approx(math.exp(rep.point[1]) - 3, abs=1e-6)


def test_check_gradients():
    prog = SmoothProgram(2, quad([[2, 0.3], [0.3, 1]], [1, -1]), [lin([1, 1], 0.5)])
    assert check_gradients(prog, np.array([0.2, -0.7])) <= 1e-9
    bad = SmoothProgram(2, lambda x: (x @ x, 2 * x + np.array([1.0, 0.0])), [])
    assert check_gradients(bad, np.array([0.2, -0.7])) > 0.1


def test_program_validation():
    with pytest.raises(ValueError):
        SmoothProgram(0, quad([[1]], [0]))
    with pytest.raises(ValueError):
        SmoothProgram(1, quad([[1]], [0]), [], [1.0], [0.0])


def test_power_stage_callbacks_have_consistent_gradients(moderate):
    from uavnoma import power

    params, link, pw, m = moderate
    stage = power._Stage(pw, link, m, params, fix_pu=False)
    prog = stage.program()
    x = stage.start()
    assert check_gradients(prog, x, step=1e-7) <= 1e-4


def test_barrier_constant_exported():
    assert inner.BARRIER_GROWTH > 1 and inner.T_MAX > 1e10
