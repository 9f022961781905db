import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ripforge import sdp
from ripforge.lmi import (DegenerateGeometry, ForgeResult, KernelError, KernelMatrix, assemble_delta_lb,
                          assemble_feasibility, assemble_opt, build_operators, delta_lb_bisection, eta_to_delta,
                          extend_to_full, factor_kernel, forge, full_L, full_M, full_space_operators,
                          kernel_from_solution, solve_delta_lb, solve_delta_ub, symmetric_embedding)
from ripforge.rank1 import construct_H_tau, soc_values, geometry
from ripforge.sensing import (EXAMPLE1_SPURIOUS, SensingInstance, certify, example1_instance, gradient, hessian,
                              rip_full, rotation_complement)
from ripforge.symbasis import smat, svec, svec_dim

X1 = np.array([[0.0], [1.0 / np.sqrt(2.0)]])
Z1 = np.array([[1.0], [0.0]])


def random_instance(rng, n, r, m):
    A = rng.standard_normal((m, n, n))
    return SensingInstance.from_measurements(A + A.transpose(0, 2, 1), rng.standard_normal((n, r)))


@pytest.mark.parametrize("n,r", [(2, 1), (3, 1), (4, 2), (3, 3)])
def test_operators_reproduce_gradient_and_hessian(rng, n, r):
    inst = random_instance(rng, n, r, 2 * n * n)
    x = rng.standard_normal((n, r))
    ops = build_operators(x, inst.z)
    H = inst.gram()
    g = gradient(inst, x)
    assert np.allclose(ops.L(H), g, rtol=1e-12, atol=1e-12 * np.abs(g).max())
    Hx = hessian(inst, x)
    assert np.allclose(2.0 * ops.M(H), Hx, rtol=1e-12, atol=1e-11 * np.abs(Hx).max())


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.integers(1, 2), st.integers(0, 10 ** 6))
def test_adjoint_identities(n, r, seed):
    rng = np.random.default_rng(seed)
    ops = build_operators(rng.standard_normal((n, r)), rng.standard_normal((n, r)))
    N = ops.N
    H = rng.standard_normal((N, N))
    H = H + H.T
    y = rng.standard_normal((n, r))
    V = rng.standard_normal((n * r, n * r))
    V = V + V.T
    lhs = np.sum(ops.L(H) * y)
    rhs = np.sum(H * ops.L_adjoint(y))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * 10
    lhs = np.sum(ops.M(H) * V)
    rhs = np.sum(H * ops.M_adjoint(V))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * 10


def test_matrix_forms_match_operators(rng):
    ops = build_operators(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
    N = ops.N
    H = rng.standard_normal((N, N))
    H = H + H.T
    h = svec(H)
    assert np.allclose(ops.L_matrix() @ h, ops.L(H).reshape(-1, order="F"), atol=1e-12)
    assert np.allclose(ops.M_matrix() @ h, svec(ops.M(H)), atol=1e-12)


def test_xmat_small_case():
    ops = build_operators([1.0, 0.0], [0.0, 1.0])
    u = np.array([0.7, -0.3])
    want = np.array([[2 * 0.7, -0.3], [-0.3, 0.0]])
    assert np.allclose(smat(ops.Xmat @ u), want)


def test_skew_extension_changes_nothing(rng):
    n, r = 2, 1
    x, z = rng.standard_normal((n, r)), rng.standard_normal((n, r))
    ops = build_operators(x, z)
    inst = random_instance(rng, n, r, 5)
    H = inst.gram()
    Hf = extend_to_full(H, n)
    e, Xf = full_space_operators(x, z)
    assert np.allclose(full_L(Hf, e, Xf, n, r), ops.L(H), atol=1e-12)
    assert np.allclose(full_M(Hf, e, Xf, n, r), ops.M(H), atol=1e-12)
    w, wf = np.linalg.eigvalsh(H), np.linalg.eigvalsh(Hf)
    # the skew eigenvalue 1 sits inside [lambda_min, lambda_max] only after normalization
    Hn = H / np.sqrt(w[0] * w[-1])
    wn = np.linalg.eigvalsh(extend_to_full(Hn, n))
    assert np.isclose(wn[-1] / wn[0], w[-1] / w[0])
    Q = symmetric_embedding(n)
    assert np.allclose(Q.T @ Q, np.eye(svec_dim(n)))


def test_rotation_null_space_of_M(rng):
    x, z = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    ops = build_operators(x, z)
    Lm = ops.L_matrix()
    h = rng.standard_normal(Lm.shape[1])
    h -= np.linalg.pinv(Lm) @ (Lm @ h)
    H = smat(h, ops.N)
    u = (x @ np.array([[0.0, 1.0], [-1.0, 0.0]])).reshape(-1, order="F")
    assert np.linalg.norm(ops.L(H)) < 1e-10
    assert np.linalg.norm(ops.M(H) @ u) < 1e-10 * np.linalg.norm(ops.M(H))


def test_example1_feasibility():
    ops = build_operators(X1, Z1)
    H = example1_instance().gram()
    assert np.linalg.norm(ops.L(H)) < 1e-12
    assert np.linalg.eigvalsh(ops.M(H))[0] > -1e-12
    res = sdp.feasibility(assemble_feasibility(ops, 0.0))
    assert res.feasible


def test_example1_first_order_optimum():
    ops = build_operators(X1, Z1)
    sol = sdp.solve(assemble_opt(ops, 0.0, second_order=False))
    assert sol.ok
    assert abs(sol.objective - (3 - np.sqrt(5)) / 2) < 1e-7
    assert abs(eta_to_delta(sol.objective) - 1 / np.sqrt(5)) < 1e-7


def test_example1_full_optimum():
    ops = build_operators(X1, Z1)
    delta, sol = solve_delta_ub(ops)
    assert sol.ok
    assert abs(sol.objective - 1 / 3) < 1e-7
    assert delta <= 0.5 + 1e-4
    g = geometry(X1, Z1)
    assert delta <= soc_values(g).delta_soc


def test_example1_delta_lb_two_ways():
    ops = build_operators(X1, Z1)
    lb, sol = solve_delta_lb(ops)
    assert sol.ok and lb >= 0.5 - 1e-3
    bis = delta_lb_bisection(ops)
    assert 0.49 <= bis <= 0.51


def test_delta_lb_with_full_basis_equals_delta_ub(rng):
    x, z = rng.standard_normal((2, 1)), rng.standard_normal((2, 1))
    ops = build_operators(x, z)
    ub, _ = solve_delta_ub(ops)
    lb, _ = solve_delta_lb(ops, np.eye(2))
    assert abs(ub - lb) < 1e-6


def test_delta_lb_problem_shapes():
    ops = build_operators(np.ones((3, 2)) + np.eye(3, 2), np.eye(3, 2))
    prob = assemble_delta_lb(ops)
    sizes = {b.name: b.size for b in prob.blocks}
    assert sizes["rip_lower"] == 6  # span of [x, z] is all of R^3
    assert sizes["M"] == 5  # 6 minus one rotation direction


def test_h_tau_is_feasible_for_soc_mu(rng):
    x, z = rng.standard_normal(4), rng.standard_normal(4)
    ops = build_operators(x, z)
    mu = soc_values(geometry(x, z)).mu
    H = construct_H_tau(x, z).kernel.H
    prob = assemble_feasibility(ops, mu)
    h = svec(H) / np.linalg.eigvalsh(H)[-1]
    # witness scaled into H <= I; M scales linearly, so compare with the scaled mu
    scale = 1 / np.linalg.eigvalsh(H)[-1]
    for blk in prob.blocks:
        val = blk.value(h)
        if blk.name == "M":
            val = val + (mu - mu * scale) * np.eye(blk.size)
        assert np.linalg.eigvalsh(val)[0] > -1e-9
    assert np.abs(prob.eq_matrix @ h).max() < 1e-10


def test_factor_kernel_roundtrip(rng):
    inst = random_instance(rng, 3, 1, 10)
    k = KernelMatrix.from_instance(inst)
    back = factor_kernel(k, inst.z)
    assert np.allclose(back.gram(), inst.gram(), atol=1e-10)
    with pytest.raises(KernelError):
        KernelMatrix(-np.eye(6), 3)


def test_forge_example1_geometry():
    res = forge(X1, Z1, mu=1e-4)
    assert res.delta_n <= 0.5 + 1e-4
    assert res.certificate.verdict == "strict_local_min"
    assert certify(res.instance, Z1).verdict == "global_min"
    assert abs(rip_full(res.instance).delta_full - res.delta_n) < 1e-6


@pytest.mark.parametrize("r", [1, 2])
def test_forge_soundness(rng, r):
    x, z = rng.standard_normal((4, r)), rng.standard_normal((4, r))
    res = forge(x, z)
    assert res.certificate.verdict == "strict_local_min"
    assert res.certificate.hessian_min_eig >= 2 * res.mu - 1e-6
    assert certify(res.instance, z).verdict == "global_min"
    assert abs(rip_full(res.instance).delta_full - res.delta_n) < 1e-6
    if r == 2:
        Q = rotation_complement(x)
        assert Q.shape[1] == 7


def test_forge_result_json_roundtrip(tmp_path, rng):
    res = forge(rng.standard_normal((3, 1)), rng.standard_normal((3, 1)))
    p = tmp_path / "bundle.json"
    res.save(p, include_kernel=True)
    back = ForgeResult.load(p)
    assert np.array_equal(back.x, res.x)
    assert back.eta == res.eta and back.delta_n == res.delta_n
    assert back.certificate == res.certificate
    assert np.allclose(back.kernel.H, res.kernel.H)
    scaled = res.rescaled(3.0)
    assert np.isclose(rip_full(scaled.instance).delta_full, res.delta_n, atol=1e-9)
    assert scaled.certificate.verdict == "strict_local_min"


def test_forge_rejects_ground_truth():
    with pytest.raises(DegenerateGeometry):
        forge(Z1, Z1)


def test_kernel_from_solution_respects_layout():
    ops = build_operators(X1, Z1)
    prob = assemble_opt(ops)
    sol = sdp.solve(prob)
    k = kernel_from_solution(prob, sol, 2)
    w = k.eigenvalues
    assert w[-1] <= 1 + 1e-7
    assert abs(w[0] / w[-1] - sol.objective) < 1e-6
