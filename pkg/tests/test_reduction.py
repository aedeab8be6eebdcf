import numpy as np
import pytest
import scipy.sparse as sp

from mixray.errors import ContractError
from mixray.fields import hodge_test_parts, random_polynomial
from mixray.geometry import grid_angles
from mixray.grid import GridModel
from mixray.inversion import assemble_many, mixing_matrix, relative_error, solve_least_squares
from mixray.reduction import (
    adjoint_mixing,
    build_pair,
    inside_restriction,
    kernel_basis,
    kernel_split,
    sampled_potential_basis,
    stability_probe,
    subspace_residual,
    symmetric_basis,
    transfer_normal,
    transfer_reconstruction,
)
from mixray.tensors import (
    AutomorphismField,
    GridField,
    Mixing,
    apply_mixing,
    fiber_inner,
    lambda_eval,
    mixing_for_mixed,
    sigma_hat_A,
    symmetrize,
)
from mixray.transforms import geodesic_xray, mixing_xray
from mixray.verify import random_mixing

X = np.random.default_rng(5).uniform(-0.6, 0.6, (100, 2))


def test_equal_pair_gives_identity(metric):
    A = random_mixing(np.random.default_rng(1), metric, 2)
    pair = build_pair(A, A)
    f = random_polynomial(2, seed=3)
    assert np.allclose(apply_mixing(pair.D, f).values(X), f.values(X), atol=1e-12)


def test_star_against_identity_is_minus_star(flat):
    pair = build_pair(mixing_for_mixed(1, 0, flat), Mixing.identity(1))
    D = pair.D.slots[0].matrix(X)
    assert np.allclose(D, -AutomorphismField.star(flat).matrix(X), atol=1e-15)


def test_pair_round_trip(hyper):
    rng = np.random.default_rng(8)
    pair = build_pair(random_mixing(rng, hyper, 3), random_mixing(rng, hyper, 3))
    f = random_polynomial(3, seed=4)
    back = apply_mixing(pair.D_inv, apply_mixing(pair.D, f)).values(X)
    assert np.max(np.abs(back - f.values(X))) <= 1e-12 * (1 + np.max(np.abs(f.values(X))))
    assert pair.check_residual <= 1e-12


def test_pair_degree_mismatch(flat):
    with pytest.raises(ContractError):
        build_pair(Mixing.identity(1), Mixing.identity(2))


def test_kernel_split_generic(hyper):
    rng = np.random.default_rng(2)
    A, At = random_mixing(rng, hyper, 2), random_mixing(rng, hyper, 2)
    pair = build_pair(A, At)
    f = random_polynomial(2, seed=6)
    h, w = kernel_split(pair, f)
    recon = (h + apply_mixing(pair.D, w)).values(X)
    assert np.max(np.abs(recon - f.values(X))) <= 1e-12
    v = rng.normal(size=X.shape)
    assert np.max(np.abs(lambda_eval(apply_mixing(A, h), X, v))) <= 1e-12
    Aw = apply_mixing(At, w).values(X)
    assert np.max(np.abs(Aw - Aw.swapaxes(1, 2))) <= 1e-12


def test_kernel_split_edge_cases(flat):
    A = mixing_for_mixed(1, 1, flat)
    pair = build_pair(A, Mixing.identity(2))
    f = sigma_hat_A(A, random_polynomial(2, seed=1))
    h, w = kernel_split(pair, f)
    assert np.max(np.abs(h.values(X))) <= 1e-12
    assert np.allclose(w.values(X), apply_mixing(pair.D_inv, f).values(X), atol=1e-12)
    g = random_polynomial(2, seed=2)
    anti = g - sigma_hat_A(A, g)
    h, w = kernel_split(pair, anti)
    assert np.max(np.abs(w.values(X))) <= 1e-12
    assert np.allclose(h.values(X), anti.values(X), atol=1e-12)


def test_kernel_split_through_transform(flat):
    A = mixing_for_mixed(1, 1, flat)
    pair = build_pair(A, Mixing.identity(2))
    f = random_polynomial(2, seed=7)
    h, w = kernel_split(pair, f)
    rays = grid_angles(10, 5)
    a = mixing_xray(flat, A, f, rays).values
    b = mixing_xray(flat, A, h + apply_mixing(pair.D, w), rays).values
    assert np.max(np.abs(a - b)) <= 1e-10


def test_kernel_split_rank_mismatch(flat):
    with pytest.raises(ContractError):
        kernel_split(build_pair(Mixing.identity(2), Mixing.identity(2)), random_polynomial(1))


def test_adjoint_mixing(hyper):
    rng = np.random.default_rng(4)
    assert adjoint_mixing(Mixing.identity(2), hyper).slots[0].kind == "identity"
    for k, l in ((1, 0), (1, 1), (2, 0), (0, 2)):
        A = mixing_for_mixed(k, l, hyper)
        f = random_polynomial(k + l, seed=k + 3 * l)
        lhs = apply_mixing(adjoint_mixing(A, hyper), f).values(X)
        assert np.allclose(lhs, (-1) ** k * apply_mixing(A, f).values(X), atol=1e-12)
    A = random_mixing(rng, hyper, 2)
    f, h = random_polynomial(2, seed=1), random_polynomial(2, seed=2)
    lhs = fiber_inner(hyper, X, apply_mixing(A, f), h)
    rhs = fiber_inner(hyper, X, f, apply_mixing(adjoint_mixing(A, hyper), h))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(lhs)))


@pytest.fixture(scope="module")
def small_ops(hyper):
    grid = GridModel(14)
    rays = grid_angles(20, 20)
    out = {}
    for k, l in ((1, 0), (0, 1), (1, 1), (2, 0)):
        m = k + l
        A = mixing_for_mixed(k, l, hyper)
        out[(k, l)] = (A, *assemble_many(hyper, [Mixing.identity(m), A], grid, rays))
    return grid, rays, out


@pytest.mark.parametrize("kl", [(1, 0), (0, 1), (1, 1), (2, 0)])
def test_transfer_normal_mixed(small_ops, kl):
    grid, _, ops = small_ops
    A, F_id, F_A = ops[kl]
    pair = build_pair(A, Mixing.identity(A.degree))
    u = np.random.default_rng(0).normal(size=F_A.shape[1])
    direct = F_A.normal(u)
    transferred = transfer_normal(pair, F_id, u)
    assert np.linalg.norm(direct - transferred) <= 1e-10 * np.linalg.norm(u) * max(1.0, np.abs(direct).max())
    M = mixing_matrix(grid, A)
    lemma = (-1) ** kl[0] * (M @ F_id.normal(M @ u))
    assert np.linalg.norm(direct - lemma) <= 1e-10 * np.linalg.norm(u) * max(1.0, np.abs(direct).max())


def test_transfer_normal_trivial_cases(small_ops, hyper):
    grid, rays, ops = small_ops
    A, F_id, F_A = ops[(1, 1)]
    u = np.random.default_rng(1).normal(size=F_A.shape[1])
    same = transfer_normal(build_pair(A, A), F_A, u)
    assert np.allclose(same, F_A.normal(u), rtol=1e-12, atol=1e-14)
    assert not np.any(transfer_normal(build_pair(A, A), F_A, np.zeros_like(u)))
    with pytest.raises(ContractError):
        transfer_normal(build_pair(A, A), F_A, u[:-1])
    with pytest.raises(ContractError):
        transfer_normal(build_pair(A, A), F_A.normal, u)


def test_transfer_normal_generic_pair(hyper):
    grid = GridModel(12)
    rays = grid_angles(16, 16)
    rng = np.random.default_rng(9)
    A, At = random_mixing(rng, hyper, 2), random_mixing(rng, hyper, 2)
    F_A, F_At = assemble_many(hyper, [A, At], grid, rays)
    u = rng.normal(size=F_A.shape[1])
    direct = F_A.normal(u)
    via = transfer_normal(build_pair(A, At), F_At, u)
    assert np.linalg.norm(direct - via) <= 1e-10 * np.linalg.norm(direct)


def test_transfer_reconstruction_star(flat):
    grid = GridModel(24)
    rays = grid_angles(40, 40)
    A = mixing_for_mixed(1, 0, flat)
    pair = build_pair(A, Mixing.identity(1))
    F_id, = assemble_many(flat, [Mixing.identity(1)], grid, rays)
    curl, _ = hodge_test_parts(flat)

    def R_tilde(data):
        return solve_least_squares(F_id, data).field(grid, 1)

    base = R_tilde(geodesic_xray(flat, curl, rays, h=5e-4).values)
    truth = GridField.sample(curl, grid).coefficients()
    e_base = relative_error(grid, flat, 1, base.coefficients(), truth)
    f = apply_mixing(A.inverse(), curl)
    recon = transfer_reconstruction(pair, R_tilde)(mixing_xray(flat, A, f, rays, h=5e-4).values)
    f_truth = GridField.sample(f, grid).coefficients()
    e_transfer = relative_error(grid, flat, 1, recon.coefficients(), f_truth)
    assert abs(e_transfer - e_base) <= 1e-10 * e_base
    zero = transfer_reconstruction(pair, R_tilde)(np.zeros(F_id.shape[0]))
    assert not np.any(zero.coefficients())


def test_transfer_reconstruction_equal_pair():
    A = Mixing.identity(1)
    f = random_polynomial(1, seed=1)
    out = transfer_reconstruction(build_pair(A, A), lambda: f)()
    assert np.array_equal(out.values(X), f.values(X))


def test_probe_isometry_transfer(flat):
    grid = GridModel(32)
    rays = grid_angles(48, 48)
    F_id, F_star = assemble_many(flat, [Mixing.identity(1), mixing_for_mixed(1, 0, flat)], grid, rays)
    a = stability_probe(F_id, method="svd").sigma_min
    b = stability_probe(F_star, method="svd").sigma_min
    assert a > 0
    assert abs(a - b) <= 1e-6 * a


def test_probe_methods_agree_when_well_conditioned(flat):
    grid = GridModel(10)
    F, = assemble_many(flat, [Mixing.identity(1)], grid, grid_angles(24, 24))
    Q = inside_restriction(grid, 1)
    svd = stability_probe(F, Q, method="svd").sigma_min
    dense = stability_probe(F, Q, method="dense").sigma_min
    assert dense == pytest.approx(svd, rel=1e-6)
    Q5 = Q @ np.random.default_rng(0).normal(size=(Q.shape[1], 5))
    power = stability_probe(F, Q5, method="power", tol=1e-15)
    assert power.converged
    assert power.sigma_min == pytest.approx(stability_probe(F, Q5, method="svd").sigma_min, rel=1e-6)


def test_probe_trivial_subspace(flat):
    grid = GridModel(8)
    F, = assemble_many(flat, [Mixing.identity(1)], grid, grid_angles(8, 8))
    res = stability_probe(F, sp.csr_matrix((F.shape[1], 0)))
    assert res.sigma_min is None and "not applicable" in res.note
    res = stability_probe(F, np.zeros((F.shape[1], 3)))
    assert res.sigma_min is None
    with pytest.raises(ContractError):
        stability_probe(F, method="bogus")


def test_kernel_basis_recovers_antisymmetric_fields(hyper):
    grid = GridModel(8)
    rays = grid_angles(24, 24)
    F, = assemble_many(hyper, [Mixing.identity(2)], grid, rays)
    K, sig = kernel_basis(F, sp.eye(F.shape[1], format="csr"))
    assert K.shape[1] == grid.n_active
    # antisymmetric fields: one per node, dx(x)dy - dy(x)dx
    anti = sp.kron(sp.eye(grid.n_active), sp.csr_matrix(np.array([[0.0], [1.0], [-1.0], [0.0]]))).toarray()
    assert subspace_residual(anti, K, F.V) <= 1e-8


def test_symmetric_basis_shapes(flat):
    grid = GridModel(8)
    B = symmetric_basis(grid, 2)
    assert B.shape == (grid.n_dofs(2), 3 * grid.n_active)
    u = B @ np.random.default_rng(0).normal(size=B.shape[1])
    T = u.reshape(-1, 2, 2)
    assert np.allclose(T, T.swapaxes(1, 2))


def test_sampled_potential_basis_is_exact_gradient(flat):
    grid = GridModel(16)
    P = sampled_potential_basis(grid, degree=2)
    assert P.shape == (grid.n_dofs(1), 6)
    # first column is the gradient of the bubble: -2x dx - 2y dy
    X = grid.active_nodes
    assert np.allclose(P[:, 0].reshape(-1, 2), -2 * X)


def test_subspace_residual_basics():
    V = np.ones(4)
    U = np.eye(4)[:, :2]
    assert subspace_residual(U, U @ np.array([[1.0, 2.0], [0.0, 1.0]]), V) <= 1e-15
    assert subspace_residual(U, np.eye(4)[:, 2:], V) == pytest.approx(1.0)
    assert subspace_residual(U, np.eye(4)[:, :1], V) == np.inf


def test_symmetrize_and_sigma_hat_agree_for_identity():
    f = random_polynomial(3, seed=4)
    assert np.allclose(sigma_hat_A(Mixing.identity(3), f).values(X), symmetrize(f).values(X))
