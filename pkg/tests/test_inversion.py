import math

import numpy as np
import pytest

from mixray.errors import ContractError
from mixray.fields import const_oneform, curl_potential, hodge_test_parts, potential_scalar, smooth_oneform, y_dx
from mixray.geometry import MetricField, boundary_grid, entry_state
from mixray.grid import GridModel
from mixray.inversion import (
    _interior_mask,
    assemble_forward,
    assemble_many,
    decomposition_error,
    h1_surrogate_norm,
    harmonic_residual,
    mixing_matrix,
    normal_on_extension,
    projection_decompose,
    reconstruct_oneform_combined,
    relative_error,
    solenoidal_decompose,
    solve_least_squares,
    stack_operators,
)
from mixray.tensors import (
    GridField,
    Mixing,
    PolynomialField,
    apply_mixing,
    curl_scalar,
    l2_inner,
    l2_norm,
    mixing_for_mixed,
    polynomial,
    scalar_polynomial,
)
from mixray.transforms import geodesic_xray, transverse_xray
from mixray.verify import random_mixing


@pytest.fixture(scope="module")
def flat64(flat):
    grid = GridModel(64)
    rays = boundary_grid(96, 96)
    return grid, rays, assemble_forward(flat, Mixing.identity(1), grid, rays)


@pytest.fixture(scope="module")
def small(flat):
    grid = GridModel(16)
    rays = boundary_grid(24, 24)
    return grid, rays


def test_constant_oneform_matches_v1_tau(flat, flat64):
    grid, rays, F = flat64
    u = GridField.sample(const_oneform(1, 0), grid).coefficients()
    s = geodesic_xray(flat, const_oneform(1, 0), rays)
    _, v0 = entry_state(flat, s.betas, s.alphas)
    assert np.max(np.abs(F.apply(u) - v0[:, 0] * s.tau)) <= 1e-3


def test_zero_coefficients_give_zero_data(flat64):
    _, _, F = flat64
    assert not np.any(F.apply(np.zeros(F.shape[1])))


def test_solenoidal_recovery_within_one_percent(flat, flat64):
    grid, rays, F = flat64
    curl, _ = hodge_test_parts(flat)
    data = geodesic_xray(flat, curl, rays, h=5e-4).values
    res = solve_least_squares(F, data, reg=1e-8)
    truth = GridField.sample(curl, grid).coefficients()
    assert res.converged
    assert relative_error(grid, flat, 1, res.coeffs, truth) <= 0.01


def test_pure_potential_recovers_nothing(flat, flat64):
    grid, rays, F = flat64
    _, dp = hodge_test_parts(flat)
    data = geodesic_xray(flat, dp, rays, h=5e-4).values
    res = solve_least_squares(F, data, reg=1e-8)
    fs = solenoidal_decompose(flat, grid, res.field(grid, 1)).solenoidal
    assert l2_norm(flat, grid, fs) <= 1e-3 * l2_norm(flat, grid, dp)


def test_zero_data_gives_zero(small, flat):
    grid, rays = small
    F = assemble_forward(flat, Mixing.identity(1), grid, rays)
    res = solve_least_squares(F, np.zeros(F.shape[0]), reg=1e-8)
    assert not np.any(res.coeffs) and res.converged


def test_mixing_assembly_factorizes(metric, small):
    grid, rays = small
    rng = np.random.default_rng(3)
    for m in (1, 2):
        A = random_mixing(rng, metric, m)
        F_id, F_A = assemble_many(metric, [Mixing.identity(m), A], grid, rays)
        u = rng.normal(size=F_id.shape[1])
        direct = F_A.apply(u)
        assert np.max(np.abs(direct - F_id.apply(mixing_matrix(grid, A) @ u))) <= 1e-10 * (1 + np.max(np.abs(direct)))


def test_mixing_matrix_matches_pointwise(hyper):
    grid = GridModel(12)
    A = mixing_for_mixed(1, 1, hyper)
    f = PolynomialField(2, np.random.default_rng(1).normal(size=(2, 2, 3, 3)))
    u = GridField.sample(f, grid).coefficients()
    expected = GridField.sample(apply_mixing(A, f), grid).coefficients()
    assert np.allclose(mixing_matrix(grid, A) @ u, expected, atol=1e-13)


def test_adjoint_pairing(hyper, small):
    grid, rays = small
    F = assemble_forward(hyper, mixing_for_mixed(1, 1, hyper), grid, rays)
    rng = np.random.default_rng(0)
    u, d = rng.normal(size=F.shape[1]), rng.normal(size=F.shape[0])
    lhs, rhs = F.data_inner(F.apply(u), d), F.field_inner(u, F.adjoint(d))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_shape_contracts(flat, small):
    grid, rays = small
    F = assemble_forward(flat, Mixing.identity(1), grid, rays)
    with pytest.raises(ContractError):
        solve_least_squares(F, np.zeros(3))
    with pytest.raises(ContractError):
        solve_least_squares(F, np.zeros(F.shape[0]), reg=-1.0)
    G = assemble_forward(flat, Mixing.identity(2), grid, rays)
    with pytest.raises(ContractError):
        stack_operators([F, G])
    with pytest.raises(ContractError):
        assemble_many(flat, [Mixing.identity(1), Mixing.identity(2)], grid, rays)


def test_combined_rejects_mismatched_rays(flat):
    grid = GridModel(12)
    a = geodesic_xray(flat, smooth_oneform(), boundary_grid(8, 8))
    b = transverse_xray(flat, smooth_oneform(), boundary_grid(8, 6))
    with pytest.raises(ContractError):
        reconstruct_oneform_combined(flat, grid, a, b)


def test_combined_zero_data(flat):
    grid = GridModel(12)
    z = geodesic_xray(flat, const_oneform(0, 0), boundary_grid(12, 12))
    f, res = reconstruct_oneform_combined(flat, grid, z, z)
    assert not np.any(f.coefficients())


# --- decomposition ----------------------------------------------------------------

def test_pure_potential_decomposes_to_gradient(flat):
    grid = GridModel(64)
    p0 = scalar_polynomial(polynomial({(1, 0): 1.0, (3, 0): -1.0, (1, 2): -1.0}))
    f = p0.derivative_field()
    dec = solenoidal_decompose(flat, grid, f)
    assert l2_norm(flat, grid, dec.solenoidal) <= 1e-2 * l2_norm(flat, grid, f)


def test_curl_is_left_alone(hyper):
    grid = GridModel(64)
    f = curl_scalar(hyper, curl_potential(1.0))
    dec = solenoidal_decompose(hyper, grid, f)
    assert decomposition_error(hyper, grid, dec, f) <= 1e-2
    assert l2_norm(hyper, grid, dec.gradient) <= 1e-2 * l2_norm(hyper, grid, f)


@pytest.mark.parametrize("method", ["poisson", "projection"])
def test_decomposition_reconstitutes(flat, method):
    grid = GridModel(33)
    f = smooth_oneform()
    fn = solenoidal_decompose if method == "poisson" else projection_decompose
    dec = fn(flat, grid, f)
    inside = grid.inside
    total = dec.solenoidal.samples[inside] + dec.gradient.samples[inside]
    assert np.allclose(total, f.values(grid.nodes[inside]), atol=1e-14, rtol=0)
    assert not np.any(dec.potential.samples[~inside])


def test_projection_orthogonality(hyper):
    grid = GridModel(33)
    dec = projection_decompose(hyper, grid, smooth_oneform())
    ip = l2_inner(hyper, grid, dec.solenoidal, dec.gradient)
    assert abs(ip) <= 1e-6 * l2_norm(hyper, grid, dec.solenoidal) * l2_norm(hyper, grid, dec.gradient)


def test_decomposition_is_second_order(flat):
    curl, dp = hodge_test_parts(flat)
    f = curl + dp
    errs, divs = [], []
    for N in (33, 65):
        grid = GridModel(N)
        dec = solenoidal_decompose(flat, grid, f)
        errs.append(decomposition_error(flat, grid, dec, curl))
        divs.append(dec.div_residual)
    assert errs[0] / errs[1] >= 3.5
    assert divs[0] / divs[1] >= 3.5


def test_decomposition_rank_contract(flat):
    with pytest.raises(ContractError):
        solenoidal_decompose(flat, GridModel(16), potential_scalar())


def test_harmonic_residual_examples(flat):
    grid = GridModel(40)
    assert harmonic_residual(flat, grid, np.zeros((40, 40))) == 0.0
    quad = scalar_polynomial(polynomial({(2, 0): 1.0, (0, 2): -1.0}))
    assert harmonic_residual(flat, grid, quad) <= 1e-10
    bub = scalar_polynomial(polynomial({(0, 0): 1.0, (2, 0): -1.0, (0, 2): -1.0}))
    count = int(_interior_mask(grid).sum())
    assert harmonic_residual(flat, grid, bub) == pytest.approx(4 * math.sqrt(count), rel=1e-9)


def test_h1_surrogate_of_simple_fields(flat):
    grid = GridModel(64)
    const = h1_surrogate_norm(flat, GridField.sample(const_oneform(1, 0), grid))
    assert abs(const**2 / math.pi - 1) <= 0.03
    f = GridField.sample(y_dx(), grid)
    l2 = l2_norm(flat, grid, f)
    assert abs(l2**2 / (math.pi / 4) - 1) <= 0.03
    # unit gradient: the surrogate adds the area of the nodes with a full stencil
    area = np.count_nonzero(_interior_mask(grid)) * grid.cell_area
    assert h1_surrogate_norm(flat, f) ** 2 - l2**2 == pytest.approx(area, rel=1e-10)


def test_h1_surrogate_dominates_l2(hyper):
    grid = GridModel(40)
    f = GridField.sample(smooth_oneform(), grid)
    assert h1_surrogate_norm(hyper, f) >= l2_norm(hyper, grid, f) * (1 - 1e-12)


@pytest.fixture(scope="module")
def extended(hyper):
    rays = boundary_grid(24, 24)
    return normal_on_extension(hyper, Mixing.identity(1), smooth_oneform(), 24, rays), rays


def test_normal_on_extension_reaches_the_annulus(hyper, extended):
    out, _ = extended
    assert out.grid.radius == pytest.approx(1.2)
    r = np.linalg.norm(out.grid.nodes, axis=-1)
    ring = (r > 1.02) & out.grid.inside
    assert np.all(np.isfinite(out.samples))
    assert np.max(np.abs(out.samples[ring])) > 1e-3 * np.max(np.abs(out.samples))


def test_normal_on_extension_is_positive(hyper, extended):
    out, rays = extended
    g1 = MetricField.constant_curvature(-0.5, 1.2)
    F = assemble_forward(g1, Mixing.identity(1), out.grid, rays)
    u = GridField.sample(smooth_oneform(), out.grid).samples
    u[np.linalg.norm(out.grid.nodes, axis=-1) >= 1.0] = 0.0
    u = GridField(1, out.grid, u).coefficients()
    Fu = F.apply(u)
    assert F.field_inner(out.coefficients(), u) == pytest.approx(F.data_inner(Fu, Fu), rel=1e-10)
    assert F.data_inner(Fu, Fu) > 0


def test_normal_on_extension_contracts(hyper):
    with pytest.raises(ContractError):
        normal_on_extension(hyper, Mixing.identity(1), smooth_oneform(), 16, boundary_grid(4, 4), factor=0.9)
