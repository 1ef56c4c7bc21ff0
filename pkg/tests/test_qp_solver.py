import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaytrack.qp_assembler import QuadraticProgram
from delaytrack.qp_solver import (INFEASIBLE, OPTIMAL, EqualityBasis, kkt_residuals, nullspace_split, prune_rows,
                                  solve, solve_equality_qp)


def make_qp(H, A=None, b=None, G=None, h=None, c=None):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    h = np.zeros(G.shape[0]) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    return QuadraticProgram(H=np.asarray(H, dtype=float), A_eq=A, b_eq=b, G_in=G, h_in=h, q=n, r=0, s=1,
                            t_f=1.0, c=None if c is None else np.asarray(c, dtype=float))


def random_qp(rng, n, m, p):
    L = rng.normal(size=(n, n))
    H = L @ L.T / n + 0.1 * np.eye(n)
    A = rng.normal(size=(m, n))
    G = rng.normal(size=(p, n))
    x_feas = rng.normal(size=n)
    return make_qp(H, A, A @ x_feas, G, G @ x_feas + rng.uniform(0.0, 1.0, p), rng.normal(size=n))


def enumerate_active_sets(qp):
    """Best KKT point over every active set; exponential, for small p only."""
    n, m, p = qp.n, qp.A_eq.shape[0], qp.G_in.shape[0]
    c = qp.c if qp.c is not None else np.zeros(n)
    best = np.inf
    for size in range(p + 1):
        for S in itertools.combinations(range(p), size):
            S = list(S)
            E = np.vstack([qp.A_eq, qp.G_in[S]])
            e = np.concatenate([qp.b_eq, qp.h_in[S]])
            K = np.block([[qp.H, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-c, e]))
            except np.linalg.LinAlgError:
                continue
            x, mult = sol[:n], sol[n:]
            if np.any(qp.G_in @ x - qp.h_in > 1e-9) or np.any(mult[m:] < -1e-9):
                continue
            best = min(best, qp.objective(x))
    return best


class TestSmall:
    def test_single_bound(self):
        sol = solve(make_qp([[1.0]], G=[[-1.0]], h=[-1.0]))
        assert sol.status == OPTIMAL
        assert sol.chi[0] == pytest.approx(1.0, abs=1e-7)
        assert sol.mu_in[0] == pytest.approx(1.0, abs=1e-6)

    def test_inactive_bound(self):
        sol = solve(make_qp([[1.0]], G=[[-1.0], [1.0]], h=[-1.0, 5.0]))
        assert sol.chi[0] == pytest.approx(1.0, abs=1e-7)
        assert sol.mu_in[1] == pytest.approx(0.0, abs=1e-7)

    def test_equality_only(self):
        sol = solve(make_qp(np.eye(4), A=[[1.0, 0, 0, 0]], b=[1.0]))
        assert sol.status == OPTIMAL
        assert np.allclose(sol.chi, [1, 0, 0, 0])
        assert sol.lambda_eq[0] == pytest.approx(-1.0)
        assert sol.objective == pytest.approx(0.5)

    def test_unconstrained(self):
        sol = solve(make_qp(np.diag([2.0, 4.0]), c=[-2.0, 4.0]))
        assert np.allclose(sol.chi, [1.0, -1.0])

    def test_singular_hessian_needs_constraints(self):
        # H = 0 on the second coordinate, which the equality pins
        sol = solve(make_qp(np.diag([1.0, 0.0]), A=[[0.0, 1.0]], b=[3.0]))
        assert sol.status == OPTIMAL and sol.shift == 0.0
        assert np.allclose(sol.chi, [0.0, 3.0])

    def test_inconsistent_equalities(self):
        sol = solve(make_qp(np.eye(2), A=[[1.0, 1.0], [2.0, 2.0]], b=[1.0, 3.0]))
        assert sol.status == INFEASIBLE

    def test_infeasible_inequalities(self):
        sol = solve(make_qp(np.eye(1), G=[[-1.0], [1.0]], h=[-1.0, 0.0]))
        assert sol.status != OPTIMAL


class TestEqualityBasis:
    def test_drops_dependent_rows(self, rng):
        A = rng.normal(size=(3, 6))
        A = np.vstack([A, A[0] + 2 * A[1]])
        x = rng.normal(size=6)
        kept, ok, resid = prune_rows(A, A @ x)
        assert ok and len(kept) == 3 and resid < 1e-10

    def test_split(self, rng):
        A = rng.normal(size=(2, 5))
        b = rng.normal(size=2)
        x_p, Z = nullspace_split(A, b)
        assert np.allclose(A @ x_p, b)
        assert np.allclose(A @ Z, 0) and np.allclose(Z.T @ Z, np.eye(3))

    def test_multipliers(self, rng):
        A = rng.normal(size=(2, 4))
        lam = rng.normal(size=2)
        basis = EqualityBasis(A, np.zeros(2))
        assert np.allclose(basis.multipliers(-A.T @ lam, 2), lam)


def test_against_pseudo_inverse_kkt(rng):
    n, m = 8, 3
    L = rng.normal(size=(n, 4))
    H = L @ L.T  # rank 4: the equalities make it definite on their null space
    A = rng.normal(size=(m, n))
    A = np.vstack([A, rng.normal(size=(2, n))])
    c = rng.normal(size=n)
    b = rng.normal(size=A.shape[0])
    qp = make_qp(H, A, b, c=c)
    K = np.block([[H, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
    ref = np.linalg.pinv(K) @ np.concatenate([-c, b])
    sol = solve_equality_qp(qp)
    assert np.allclose(sol.chi, ref[:n], atol=1e-8)
    assert np.allclose(sol.lambda_eq, ref[n:], atol=1e-7)


def test_random_against_enumeration(rng):
    for _ in range(50):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(0, min(n, 4)))
        p = int(rng.integers(1, 9))
        qp = random_qp(rng, n, m, p)
        sol = solve(qp)
        assert sol.status == OPTIMAL
        best = enumerate_active_sets(qp)
        assert sol.objective == pytest.approx(best, rel=1e-6, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reported_residuals_are_honest(seed):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng, 10, 3, 6)
    sol = solve(qp)
    again = kkt_residuals(qp, sol)
    assert np.allclose(sol.residuals, again)
    scale = max(1.0, np.abs(qp.H).max())
    assert again[1] < 1e-8 * max(1.0, np.abs(qp.b_eq).max())
    assert again[2] < 1e-7 and again[0] < 1e-6 * scale


@pytest.mark.parametrize("seed", range(20))
def test_merit_decreases(seed):
    qp = random_qp(np.random.default_rng(seed), 15, 4, 8)
    hist = np.array(solve(qp).merit_history)
    assert hist[-1] < 1e-6 * hist[0]
    assert np.all(np.diff(hist[2:]) <= 1e-12 * hist[2])


def test_deterministic(rng):
    qp = random_qp(rng, 12, 2, 5)
    a, b = solve(qp), solve(qp)
    assert np.array_equal(a.chi, b.chi) and a.iterations == b.iterations
