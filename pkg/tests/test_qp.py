import numpy as np
import pytest

from interceptkit import qp

from oracles import qp_active_set_enumeration, qp_projected_gradient_box


def random_strictly_convex(rng, n, m_e=0, m_i=0):
    """Random QP, feasible by construction: bounds straddle a random point."""
    B = rng.normal(size=(n, n))
    H = B @ B.T + (0.5 + rng.uniform()) * np.eye(n)
    g = rng.normal(size=n)
    z_feas = rng.normal(size=n)
    A_eq = b_eq = A_in = lb = ub = None
    if m_e:
        A_eq = rng.normal(size=(m_e, n))
        b_eq = A_eq @ z_feas
    if m_i:
        A_in = rng.normal(size=(m_i, n))
        mid = A_in @ z_feas
        lb = mid - rng.uniform(0.1, 2.0, size=m_i)
        ub = mid + rng.uniform(0.1, 2.0, size=m_i)
    return qp.QProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, lb=lb, ub=ub)


def random_box_constrained(rng, n, m_i):
    """Strictly convex QP whose inequality rows are axis-aligned, so the
    projected-gradient oracle's projection is an exact clip."""
    B = rng.normal(size=(n, n))
    H = B @ B.T + (0.5 + rng.uniform()) * np.eye(n)
    g = rng.normal(size=n)
    idx = rng.choice(n, size=min(m_i, n), replace=False)
    z_feas = rng.normal(size=n)
    lb = z_feas[idx] - rng.uniform(0.1, 2.0, size=idx.size)
    ub = z_feas[idx] + rng.uniform(0.1, 2.0, size=idx.size)
    A_in = np.zeros((idx.size, n))
    A_in[np.arange(idx.size), idx] = 1.0
    prob = qp.QProblem(H=H, g=g, A_in=A_in, lb=lb, ub=ub)
    return prob, idx, lb, ub


class TestExamples:
    def test_unconstrained(self):
        b = np.array([1.0, -2.0, 0.5])
        sol = qp.solve(qp.QProblem(H=np.eye(3), g=-b))
        assert sol.status is qp.QpStatus.OPTIMAL
        np.testing.assert_allclose(sol.z, b, atol=1e-8)

    def test_active_box_bound(self):
        # minimize (z-2)^2 s.t. 0 <= z <= 1  ->  z = 1
        prob = qp.QProblem(H=np.array([[2.0]]), g=np.array([-4.0]),
                           A_in=np.array([[1.0]]), lb=np.array([0.0]),
                           ub=np.array([1.0]))
        sol = qp.solve(prob)
        assert sol.status is qp.QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(1.0, abs=1e-7)

    def test_symmetric_projection(self):
        # minimize z1^2 + z2^2 s.t. z1 + z2 = 1
        prob = qp.QProblem(H=2 * np.eye(2), g=np.zeros(2),
                           A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([1.0]))
        sol = qp.solve(prob)
        np.testing.assert_allclose(sol.z, [0.5, 0.5], atol=1e-8)

    def test_random_vs_projected_gradient_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(100):
            n = int(rng.integers(2, 11))
            m_i = int(rng.integers(1, 7))
            prob, idx, lb, ub = random_box_constrained(rng, n, m_i)
            sol = qp.solve(prob, tol=1e-8)
            assert sol.status is qp.QpStatus.OPTIMAL, f"trial {trial}"
            _, obj_ref = qp_projected_gradient_box(prob.H, prob.g, idx, lb, ub)
            assert abs(sol.objective - obj_ref) < 1e-6, f"trial {trial}"

    def test_random_vs_enumeration_oracle(self):
        # general constraint matrices (equalities plus dense rows), checked
        # against exact active-set enumeration
        rng = np.random.default_rng(11)
        for trial in range(60):
            n = int(rng.integers(2, 9))
            m_e = int(rng.integers(0, min(3, n)))
            m_i = int(rng.integers(1, 6))
            prob = random_strictly_convex(rng, n, m_e, m_i)
            sol = qp.solve(prob, tol=1e-8)
            assert sol.status is qp.QpStatus.OPTIMAL, f"trial {trial}"
            _, obj_ref = qp_active_set_enumeration(
                prob.H, prob.g, prob.A_eq, prob.b_eq, prob.A_in, prob.lb, prob.ub)
            assert abs(sol.objective - obj_ref) < 1e-7, f"trial {trial}"


class TestContracts:
    def test_kkt_stationarity_with_multipliers(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            prob = random_strictly_convex(rng, 6, 2, 4)
            sol = qp.solve(prob, tol=1e-8)
            assert sol.status is qp.QpStatus.OPTIMAL
            grad = (prob.H @ sol.z + prob.g + prob.A_eq.T @ sol.lam_eq
                    + prob.A_in.T @ sol.mu_in)
            assert np.max(np.abs(grad)) < 1e-8
            assert sol.primal_residual < 1e-8
            assert sol.dual_residual < 1e-8

    def test_scaling_invariance_of_argmin(self):
        rng = np.random.default_rng(5)
        prob = random_strictly_convex(rng, 5, 1, 3)
        sol1 = qp.solve(prob, tol=1e-10)
        scaled = qp.QProblem(H=7.3 * prob.H, g=7.3 * prob.g,
                             A_eq=prob.A_eq, b_eq=prob.b_eq,
                             A_in=prob.A_in, lb=prob.lb, ub=prob.ub)
        sol2 = qp.solve(scaled, tol=1e-10)
        np.testing.assert_allclose(sol1.z, sol2.z, atol=1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        prob = random_strictly_convex(rng, 8, 2, 5)
        a = qp.solve(prob, tol=1e-8)
        b = qp.solve(prob, tol=1e-8)
        assert np.array_equal(a.z, b.z)
        assert a.iterations == b.iterations

    def test_objective_monotone_after_feasibility(self):
        # the reported objective sequence must be non-increasing over the
        # iterates that have attained feasibility (within 1e-9)
        rng = np.random.default_rng(13)
        for _ in range(10):
            prob = random_strictly_convex(rng, 6, 1, 4)
            sol = qp.solve(prob, tol=1e-10)
            assert len(sol.objective_history) == len(sol.feasible_history)
            feas_objs = [o for o, f in zip(sol.objective_history,
                                           sol.feasible_history) if f]
            assert feas_objs, "solver never reported a feasible iterate"
            for a, b in zip(feas_objs, feas_objs[1:]):
                assert b <= a + 1e-9
            A = np.vstack([prob.A_eq, prob.A_in])
            l = np.concatenate([prob.b_eq, prob.lb])
            u = np.concatenate([prob.b_eq, prob.ub])
            v = A @ sol.z
            assert np.all(v <= u + 1e-7) and np.all(v >= l - 1e-7)

    def test_warm_start_converges_faster(self):
        rng = np.random.default_rng(17)
        prob = random_strictly_convex(rng, 10, 3, 6)
        cold = qp.solve(prob, tol=1e-8)
        warm = qp.solve(prob, tol=1e-8, z0=cold.z,
                        y0=np.concatenate([cold.lam_eq, cold.mu_in]))
        assert warm.iterations <= cold.iterations
        np.testing.assert_allclose(warm.z, cold.z, atol=1e-6)

    def test_tikhonov_floor_on_semidefinite(self):
        # zero-curvature coordinate must still solve deterministically
        H = np.diag([2.0, 0.0])
        prob = qp.QProblem(H=H, g=np.array([-2.0, 0.0]),
                           A_in=np.eye(2), lb=np.array([-1.0, -1.0]),
                           ub=np.array([1.0, 1.0]))
        sol = qp.solve(prob, tol=1e-8)
        assert sol.status is qp.QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(1.0, abs=1e-6)


class TestErrors:
    def test_inconsistent_equalities_infeasible(self):
        prob = qp.QProblem(H=np.eye(2), g=np.zeros(2),
                           A_eq=np.array([[1.0, 0.0], [1.0, 0.0]]),
                           b_eq=np.array([0.0, 1.0]))
        sol = qp.solve(prob)
        assert sol.status is qp.QpStatus.INFEASIBLE

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            qp.QProblem(H=np.eye(3), g=np.zeros(2))
        with pytest.raises(ValueError):
            qp.QProblem(H=np.eye(2), g=np.zeros(2),
                        A_eq=np.ones((1, 3)), b_eq=np.ones(1))

    def test_asymmetric_H_rejected(self):
        H = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            qp.QProblem(H=H, g=np.zeros(2))

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError):
            qp.QProblem(H=np.eye(1), g=np.zeros(1), A_in=np.eye(1),
                        lb=np.array([1.0]), ub=np.array([0.0]))
