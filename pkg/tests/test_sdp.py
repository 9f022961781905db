import csv

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from ripforge import sdp
from ripforge.symbasis import smat, svec, svec_dim, sym_eye


def test_two_by_two_toy():
    # maximize -y subject to [[y, 1], [1, y]] PSD: optimum y = 1
    blk = sdp.ConeBlock(2, svec(np.array([[0.0, 1.0], [1.0, 0.0]])), sym_eye(2)[:, None], "toy")
    sol = sdp.solve(sdp.SdpProblem(1, np.array([-1.0]), np.zeros((0, 1)), np.zeros(0), (blk,)))
    assert sol.status == "optimal"
    assert abs(sol.y[0] - 1.0) < 1e-7


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_min_eigenvalue_over_spectraplex(seed):
    # maximize -<C, X> subject to tr X = 1, X PSD: value -lambda_min(C)
    rng = np.random.default_rng(seed)
    n = 5
    C = rng.standard_normal((n, n))
    C = C + C.T
    N = svec_dim(n)
    blk = sdp.ConeBlock(n, np.zeros(N), np.eye(N), "X")
    prob = sdp.SdpProblem(N, -svec(C), sym_eye(n)[None, :], np.array([1.0]), (blk,))
    sol = sdp.solve(prob)
    assert sol.ok
    assert abs(sol.objective + np.linalg.eigvalsh(C)[0]) < 1e-7
    assert abs(sol.objective - sol.dual_objective) < 1e-6


def test_linear_program_matches_linprog():
    rng = np.random.default_rng(3)
    m, d = 8, 3
    G = rng.standard_normal((m, d))
    h = rng.uniform(1.0, 2.0, m)
    c = rng.standard_normal(d)
    # h - G y >= 0 as m scalar blocks, plus a box to keep it bounded
    blocks = [sdp.ConeBlock(1, np.array([h[i]]), -G[i:i + 1], f"row{i}") for i in range(m)]
    for k in range(d):
        e = np.zeros((1, d))
        e[0, k] = 1.0
        blocks += [sdp.ConeBlock(1, np.array([5.0]), -e), sdp.ConeBlock(1, np.array([5.0]), e)]
    sol = sdp.solve(sdp.SdpProblem(d, c, np.zeros((0, d)), np.zeros(0), tuple(blocks)))
    ref = linprog(-c, A_ub=G, b_ub=h, bounds=[(-5, 5)] * d, method="highs")
    assert sol.ok and ref.success
    assert abs(sol.objective + ref.fun) < 1e-6


def test_sparse_blocks_and_equalities():
    # maximize y0 + 2 y1 subject to y0 + y1 = 1, y >= 0: optimum at (0, 1)
    blk = sdp.ConeBlock(1, np.array([0.0]), sp.csr_matrix([[1.0, 0.0]]), "y0")
    blk2 = sdp.ConeBlock(1, np.array([0.0]), sp.csr_matrix([[0.0, 1.0]]), "y1")
    prob = sdp.SdpProblem(2, np.array([1.0, 2.0]), np.array([[1.0, 1.0]]), np.array([1.0]), (blk, blk2))
    sol = sdp.solve(prob)
    assert sol.ok
    assert np.allclose(sol.y, [0.0, 1.0], atol=1e-6)
    assert sol.eq_residual < 1e-10


def test_infeasible_problem_is_reported():
    lo = sdp.ConeBlock(1, np.array([-1.0]), np.array([[1.0]]), "y>=1")
    hi = sdp.ConeBlock(1, np.array([-1.0]), np.array([[-1.0]]), "y<=-1")
    prob = sdp.SdpProblem(1, np.array([0.0]), np.zeros((0, 1)), np.zeros(0), (lo, hi))
    res = sdp.feasibility(prob)
    assert not res.feasible and res.witness is None
    assert res.margin < -0.5
    assert sdp.solve(prob).status != "optimal"


def test_inconsistent_equalities():
    blk = sdp.ConeBlock(1, np.array([1.0]), np.zeros((1, 1)))
    prob = sdp.SdpProblem(1, np.array([0.0]), np.array([[1.0], [1.0]]), np.array([0.0, 1.0]), (blk,))
    sol = sdp.solve(prob)
    assert sol.status == "infeasible" and "inconsistent" in sol.diagnostic


def test_feasibility_witness():
    # {y : [[1, y], [y, 1]] PSD} contains y = 0 with margin 1
    blk = sdp.ConeBlock(2, sym_eye(2), svec(np.array([[0.0, 1.0], [1.0, 0.0]]))[:, None])
    prob = sdp.SdpProblem(1, np.zeros(1), np.zeros((0, 1)), np.zeros(0), (blk,))
    res = sdp.feasibility(prob, margin=0.5)
    assert res.feasible and res.margin >= 0.5 - 1e-8
    assert np.min(np.linalg.eigvalsh(blk.value(res.witness))) >= 0.5 - 1e-8


def test_trace_csv(tmp_path):
    blk = sdp.ConeBlock(2, svec(np.array([[0.0, 1.0], [1.0, 0.0]])), sym_eye(2)[:, None])
    prob = sdp.SdpProblem(1, np.array([-1.0]), np.zeros((0, 1)), np.zeros(0), (blk,))
    path = tmp_path / "trace.csv"
    sol = sdp.solve(prob, trace=path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == sol.iterations
    assert list(rows[0]) == ["iteration", "objective", "dual_objective", "gap", "primal_residual",
                             "dual_residual", "step_primal", "step_dual"]


def test_malformed_problem():
    with pytest.raises(sdp.SdpError):
        sdp.ConeBlock(2, np.zeros(2), np.zeros((3, 1)))
    blk = sdp.ConeBlock(1, np.zeros(1), np.zeros((1, 2)))
    with pytest.raises(sdp.SdpError):
        sdp.SdpProblem(1, np.zeros(1), np.zeros((0, 1)), np.zeros(0), (blk,))


def test_random_lmi_against_cvxpy():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(7)
    n, d = 4, 3
    F = [rng.standard_normal((n, n)) for _ in range(d)]
    F = [0.5 * (a + a.T) for a in F]
    c = rng.standard_normal(d)
    blk = sdp.ConeBlock(n, sym_eye(n), np.column_stack([svec(a) for a in F]))
    box = [sdp.ConeBlock(1, np.array([3.0]), s * np.eye(d)[k:k + 1]) for k in range(d) for s in (1.0, -1.0)]
    sol = sdp.solve(sdp.SdpProblem(d, c, np.zeros((0, d)), np.zeros(0), (blk, *box)))
    y = cp.Variable(d)
    cons = [np.eye(n) + sum(y[k] * F[k] for k in range(d)) >> 0, cp.abs(y) <= 3]
    val = cp.Problem(cp.Maximize(c @ y), cons).solve()
    assert abs(sol.objective - val) < 1e-5 * (1 + abs(val))
