from dataclasses import replace

import numpy as np
import pytest

from conftest import load_config
from delaytrack import cli, opmat
from delaytrack.chebwave import CoeffVector, WaveletBasis, reconstruct
from delaytrack.lqt_model import (ConstraintSet, DelayedLqtProblem, PointConstraint, TerminalConstraint,
                                  TimeFunction, WindowInequality, expand_problem)
from delaytrack.qp_assembler import (AssemblyError, apply_control_derivative_adjustment, assemble_compatibility,
                                     assemble_dynamics, assemble_hessian, assemble_point_constraints, assemble_qp,
                                     inequality_sample_points)
from delaytrack.tracker import solve_problem

SQPI = np.sqrt(np.pi)


def integrator(q=1, t_f=1.0, **kw):
    base = dict(q=q, r=q, A=TimeFunction.const(np.zeros((q, q))), B=TimeFunction.const(np.eye(q)),
                x0=np.zeros(q), Q=np.eye(q), R=TimeFunction.const(np.eye(q)), T=np.zeros((q, q)),
                reference=TimeFunction.const(np.zeros(q)), t_f=t_f)
    base.update(kw)
    return DelayedLqtProblem(**base)


@pytest.fixture(scope="module")
def ex1_exp():
    return expand_problem(cli.parse_problem(load_config("ex1a")), WaveletBasis(2, 5))


class TestHessian:
    def test_symmetric_psd(self, ex1_exp):
        H = assemble_hessian(ex1_exp)
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() > -1e-12

    def test_identity_weights(self):
        b = WaveletBasis(2, 4)
        H = assemble_hessian(expand_problem(integrator(q=2), b))
        C = opmat.gram_matrix(b).data
        want = np.zeros((32, 32))
        want[:16, :16] = np.kron(C, np.eye(2))
        want[16:, 16:] = np.kron(C, np.eye(2))
        assert np.allclose(H, want, atol=1e-14)

    def test_horizon_and_terminal(self):
        b = WaveletBasis(2, 3)
        H = assemble_hessian(expand_problem(integrator(t_f=2.0, T=np.eye(1) * 3.0), b))
        want = 2.0 * opmat.gram_matrix(b).data + 3.0 * opmat.endpoint_outer(b).data
        assert np.allclose(H[:6, :6], want)

    def test_quadratic_form_is_the_cost(self, rng):
        # x and u both constant 1 on [0, 2]: J = 1/2 (2 + 2) with Q = R = 1 and zero reference
        b = WaveletBasis(3, 4)
        H = assemble_hessian(expand_problem(integrator(t_f=2.0), b))
        one = np.tile(np.r_[1.0 / b.amplitudes[0], np.zeros(3)], b.n_sub)
        chi = np.concatenate([one, one])
        assert np.allclose(reconstruct(CoeffVector(b, 1, one), np.linspace(0, 1, 5)), 1.0)
        assert 0.5 * chi @ H @ chi == pytest.approx(2.0)

    def test_ex1a_state_block(self, ex1_exp):
        C = opmat.gram_matrix(ex1_exp.basis).data
        H = assemble_hessian(ex1_exp)
        E = opmat.endpoint_outer(ex1_exp.basis).data
        assert np.allclose(H[:10, :10], ex1_exp.t_f * C * ex1_exp.Q[0, 0] + E * ex1_exp.T[0, 0])


class TestDynamics:
    def test_integrator_reproduces_ramp(self):
        b = WaveletBasis(3, 5)
        exp = expand_problem(integrator(), b)
        rows, rhs = assemble_dynamics(exp)
        assert not np.any(rhs)
        # u = 1; the rows then force X = P^T U, which is the ramp x(t) = t
        U = np.tile(np.r_[1.0 / b.amplitudes[0], np.zeros(4)], b.n_sub)
        X = np.linalg.solve(rows[:, :b.s], -rows[:, b.s:] @ U)
        t = np.linspace(0, 1, 17)
        assert np.allclose(reconstruct(CoeffVector(b, 1, X), t)[:, 0], t, atol=1e-13)

    def test_shape_mismatch(self, ex1_exp):
        with pytest.raises(AssemblyError):
            assemble_dynamics(ex1_exp, WaveletBasis(3, 5))

    def test_zero_adjustment_is_noop(self, ex1_exp):
        rows, _ = assemble_dynamics(ex1_exp)
        out = apply_control_derivative_adjustment(rows, np.zeros((1, 1)), ex1_exp.basis, 1)
        assert np.array_equal(out, rows)

    def test_adjustment_columns(self, ex1_exp):
        rows, _ = assemble_dynamics(ex1_exp)
        Bu = np.array([[2.0]])
        out = apply_control_derivative_adjustment(rows, Bu, ex1_exp.basis, 1)
        assert np.allclose(out[:, 10:] - rows[:, 10:], 2.0 * np.eye(10))
        assert np.array_equal(out[:, :10], rows[:, :10])
        with pytest.raises(AssemblyError):
            apply_control_derivative_adjustment(rows, np.ones((3, 1)), ex1_exp.basis, 1)

    def test_solution_satisfies_rows(self, ex1a):
        qp = ex1a.qp
        assert np.abs(qp.A_eq @ ex1a.qp_solution.chi - qp.b_eq).max() < 1e-10


class TestCompatibility:
    def test_k2_m5_row(self):
        rows, rhs = assemble_compatibility(WaveletBasis(2, 5), 1)
        a, c = 2 / SQPI, 2 * np.sqrt(2) / SQPI
        assert np.allclose(rows, [[a, c, c, c, c, -a, c, -c, c, -c]])
        assert not np.any(rhs)

    def test_kills_jumps(self, rng):
        b = WaveletBasis(3, 4)
        rows, _ = assemble_compatibility(b, 2, 1)
        assert rows.shape == (2 * (b.n_sub - 1), 3 * b.s)
        # any vector in the null space is continuous at every interface
        _, _, vt = np.linalg.svd(rows)
        x = vt[rows.shape[0]:].T @ rng.normal(size=3 * b.s - rows.shape[0])
        X = CoeffVector(b, 2, x[:2 * b.s])
        t = b.interfaces()[1:-1]
        assert np.allclose(reconstruct(X, t), reconstruct(X, t, right_limit=True), atol=1e-12)


class TestPointAndWindows:
    def test_rows_evaluate(self, rng):
        b = WaveletBasis(2, 4)
        cons = ConstraintSet(point_equalities=(PointConstraint(0.3, [1.0, -2.0], [0.5], 0.7),),
                             terminal_equalities=(TerminalConstraint([0.0, 1.0], 2.0),))
        p = integrator(q=2, r=1, B=TimeFunction.const([[1.0], [0.0]]), R=TimeFunction.const([[1.0]]),
                       reference=TimeFunction(lambda t: np.stack([t, 0 * t], -1), (2,)), constraints=cons)
        exp = expand_problem(p, b)
        rows, rhs, labels = assemble_point_constraints(b, cons, exp)
        assert labels == ["point[0]", "terminal[0]"]
        chi = rng.normal(size=3 * b.s)
        Xb, U = CoeffVector(b, 2, chi[:2 * b.s]), CoeffVector(b, 1, chi[2 * b.s:])
        assert rows[0] @ chi == pytest.approx(reconstruct(Xb, 0.3) @ [1, -2] + 0.5 * reconstruct(U, 0.3)[0])
        assert rows[1] @ chi == pytest.approx(reconstruct(Xb, 1.0)[1])
        assert rhs[0] == pytest.approx(0.7 - 0.3)

    def test_out_of_range_time(self):
        b = WaveletBasis(2, 3)
        cons = ConstraintSet(point_equalities=(PointConstraint(2.0, [1.0], [0.0], 0.0),))
        with pytest.raises(ValueError):
            integrator(constraints=cons)
        with pytest.raises(AssemblyError):
            assemble_point_constraints(b, cons, expand_problem(integrator(), b))

    def test_duplicated_row_is_dropped(self):
        pin = PointConstraint(0.5, [1.0], [0.0], 1.0)
        p = integrator(constraints=ConstraintSet(point_equalities=(pin, pin)))
        sol = solve_problem(p, 2, 4)
        assert sol.status == "optimal"
        assert len(sol.qp_solution.kept_rows) == sol.qp.A_eq.shape[0] - 1
        assert sol.states(0.5)[0] == pytest.approx(1.0, abs=1e-9)

    def test_sample_points(self):
        b = WaveletBasis(2, 4)
        tau, right = inequality_sample_points(b, 0.0, 2.0, 4.0)
        assert tau[0] == 0.0 and tau[-1] == 0.5
        assert tau.size == 2 + 4  # one subinterval of four points
        assert right[0] and not right[1:].any()
        assert np.all(np.diff(tau) > 0)
        with pytest.raises(AssemblyError):
            inequality_sample_points(b, 0.0, 1.0, 1.0, per_sub=0)

    def test_window_rows_shape(self):
        w = WindowInequality(0.0, 1.0, TimeFunction.const([0.0]), TimeFunction.const([1.0]),
                             TimeFunction.const(0.5), "u<=0.5")
        p = integrator(constraints=ConstraintSet(window_inequalities=(w,)))
        qp = assemble_qp(expand_problem(p, WaveletBasis(2, 3)))
        assert qp.G_in.shape == (2 + 2 * 3, 2 * 6)
        assert np.allclose(qp.h_in, 0.5)


def test_feedthrough_reformulations_agree():
    # x = v + A_u u with C A_u = -D turns the feedthrough into an adjustment on the plant states
    doc = load_config("ex5")
    p1 = cli.parse_problem(doc)
    C = np.array(doc["output"]["C"], dtype=float)
    A_u = np.zeros((4, 3))
    A_u[1, 1] = 1.0
    D = np.array(doc["output"]["D"], dtype=float)
    assert np.allclose(C @ A_u, -D)
    Bu2 = -np.vstack([A_u, C @ A_u])
    A1 = p1.A(0.0)
    p2 = replace(p1, B=TimeFunction.const(p1.B(0.0) - A1 @ Bu2), derivative_adjustment=Bu2)
    s1, s2 = solve_problem(p1, 4, 6), solve_problem(p2, 4, 6)
    assert s1.objective == pytest.approx(s2.objective, rel=1e-8)
    assert np.allclose(s1.U.data, s2.U.data, atol=1e-6 * np.abs(s1.U.data).max())
    z1, z2 = s1.X.blocks[..., 4:], s2.X.blocks[..., 4:]
    assert np.allclose(z1, z2, atol=1e-6 * np.abs(z1).max())
