import math

import numpy as np
import pytest

from mixray.errors import ContractError, DomainError, NonTerminatingRayError
from mixray.geometry import (
    MetricField,
    RayCoordinate,
    boundary_grid,
    christoffel,
    entry_state,
    grid_angles,
    hodge_star,
    metric_eval,
    parallel_transport,
    shoot_from,
    shoot_geodesic,
    trace_states,
    unit_speed_drift,
)
from mixray.fields import make_metric

# reference values from scripts/oracles.py (adaptive DOP853, independent of this package)
HYP_DIAMETER_TAU = 4.985801921119645
HYP_CHORD_TAU = 3.241987957907045
EXP_LINEAR_CHORD_TAU = 1.8682772158208307


def test_euclidean_metric_is_identity(flat):
    assert np.allclose(metric_eval(flat, [0.3, -0.1]), np.eye(2))


def test_zero_curvature_factor_is_four():
    g = MetricField.constant_curvature(0.0)
    assert np.allclose(metric_eval(g, [[0.2, 0.4], [-0.7, 0.1]]), 4 * np.eye(2))


def test_hyperbolic_factor_at_center_and_rim(hyper):
    assert np.allclose(metric_eval(hyper, [0.0, 0.0]), 4 * np.eye(2))
    assert np.allclose(metric_eval(hyper, [1.0, 0.0]), 16 * np.eye(2))


def test_points_outside_disk_rejected(flat):
    with pytest.raises(DomainError):
        metric_eval(flat, [1.5, 0.0])


def test_flat_christoffel_vanishes(flat):
    assert np.all(christoffel(flat, np.random.default_rng(0).uniform(-0.5, 0.5, (10, 2))) == 0)


def test_hyperbolic_christoffel_zero_at_center(hyper):
    assert np.allclose(christoffel(hyper, [0.0, 0.0]), 0.0)


def test_exp_linear_christoffel_at_origin():
    g = make_metric({"kind": "custom", "family": "exp_linear", "params": {"a": [1.0, 0.0]}})
    G = christoffel(g, [0.0, 0.0])  # G[k, i, j] = Gamma^k_ij
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0] = 1.0
    expected[0, 1, 1] = -1.0
    expected[1, 0, 1] = expected[1, 1, 0] = 1.0
    assert np.allclose(G, expected, atol=1e-12)


def test_hodge_star_rotates(flat, hyper):
    assert np.allclose(hodge_star(flat, [0.0, 0.0], [1.0, 0.0]), [0.0, 1.0])
    v = np.array([0.3, -0.8])
    assert np.allclose(hodge_star(flat, [0.1, 0.1], hodge_star(flat, [0.1, 0.1], v)), -v)
    x = np.array([0.5, 0.0])
    w = hodge_star(hyper, x, v)
    assert np.allclose(w, [0.8, 0.3])
    assert math.isclose(hyper.norm(x, w), hyper.norm(x, v), rel_tol=1e-14)


def test_euclidean_diameter_and_chord(flat):
    ray = shoot_geodesic(flat, RayCoordinate(math.pi, 0.0))
    assert abs(ray.tau - 2.0) < 1e-9
    assert np.allclose(ray.x[0], [-1, 0]) and np.allclose(ray.x[-1], [1, 0], atol=1e-12)
    chord = shoot_geodesic(flat, RayCoordinate(math.pi / 2, math.pi / 4))
    assert abs(chord.tau - math.sqrt(2)) < 1e-9


def test_hyperbolic_diameter_against_oracle(hyper):
    ray = shoot_geodesic(hyper, RayCoordinate(math.pi, 0.0), h=1e-3)
    assert abs(ray.tau - HYP_DIAMETER_TAU) < 1e-7
    # closed form: integral of 2 / (1 - r^2 / 2) over [-1, 1]
    assert abs(ray.tau - 4 * math.sqrt(2) * math.atanh(1 / math.sqrt(2))) < 1e-7


def test_hyperbolic_chord_against_oracle(hyper):
    ray = shoot_geodesic(hyper, RayCoordinate(5 * math.pi / 6, math.pi / 6))
    assert abs(ray.tau - HYP_CHORD_TAU) < 1e-8


def test_custom_metric_chord_against_oracle():
    g = make_metric({"kind": "custom", "family": "exp_linear", "params": {"a": [0.3, 0.1]}})
    ray = shoot_geodesic(g, RayCoordinate(math.pi / 3, -0.4))
    assert abs(ray.tau - EXP_LINEAR_CHORD_TAU) < 1e-8


def test_tangential_entry_rejected(flat):
    with pytest.raises(DomainError):
        shoot_geodesic(flat, RayCoordinate(0.0, math.pi / 2))


def test_trapping_guard_raises(flat):
    with pytest.raises(NonTerminatingRayError):
        shoot_geodesic(flat, RayCoordinate(0.0, 0.0), max_length=1.0)


def test_step_must_be_positive(flat):
    x0, v0 = entry_state(flat, 0.0, 0.0)
    with pytest.raises(ContractError):
        trace_states(flat, x0, v0, 0.0)


def test_unit_speed_on_all_builtin_metrics(metric):
    b, a = grid_angles(16, 16)
    x0, v0 = entry_state(metric, b, a)
    assert unit_speed_drift(metric, trace_states(metric, x0, v0, 1e-3)) <= 1e-9


def test_reversibility(metric):
    ray = shoot_geodesic(metric, RayCoordinate(0.4, 0.9))
    back = shoot_from(metric, ray.x[-1], -ray.v[-1])
    assert np.linalg.norm(back.x[-1] - ray.x[0]) <= 1e-8


def test_transport_flat_is_constant(flat):
    ray = shoot_geodesic(flat, RayCoordinate(1.0, 0.3))
    w = parallel_transport(flat, ray, [0.2, -0.7], [0.1, 0.5, ray.tau])
    assert np.allclose(w, [0.2, -0.7], atol=1e-14)


def test_transport_of_velocity_and_rotated_velocity(hyper):
    ray = shoot_geodesic(hyper, RayCoordinate(2.0, -0.6))
    ts = np.array([0.0, 0.37, 1.1, ray.tau])
    idx = [int(np.argmin(np.abs(ray.t - t))) for t in ts]
    ts = ray.t[idx]
    w = parallel_transport(hyper, ray, ray.v[0], ts)
    assert np.max(np.abs(w - ray.v[idx])) <= 1e-8
    w = parallel_transport(hyper, ray, hodge_star(hyper, ray.x[0], ray.v[0]), ts)
    assert np.max(np.abs(w - hodge_star(hyper, ray.x[idx], ray.v[idx]))) <= 1e-8


def test_transport_outside_interval(hyper):
    ray = shoot_geodesic(hyper, RayCoordinate(2.0, -0.6))
    with pytest.raises(DomainError):
        parallel_transport(hyper, ray, [1.0, 0.0], ray.tau + 0.1)


def test_boundary_grid_layouts():
    (r,) = boundary_grid(1, 1)
    assert r.beta == 0.0 and abs(r.alpha) < 1e-15
    four = boundary_grid(4, 1)
    assert np.allclose([q.beta for q in four], [0, math.pi / 2, math.pi, 3 * math.pi / 2])
    full = boundary_grid(96, 96)
    assert len(full) == 9216
    assert all(-math.pi / 2 + 0.01 < q.alpha < math.pi / 2 - 0.01 for q in full)
    with pytest.raises(ContractError):
        boundary_grid(0, 3)


def test_euclidean_tau_formula(flat):
    b, a = grid_angles(16, 16)
    x0, v0 = entry_state(flat, b, a)
    tr = trace_states(flat, x0, v0, 1e-3)
    assert np.max(np.abs(tr.tau - 2 * np.cos(a))) <= 1e-9


def test_larger_radius_scales_chord():
    g = MetricField.euclidean(2.5)
    ray = shoot_geodesic(g, RayCoordinate(0.3, 0.2))
    assert abs(ray.tau - 5.0 * math.cos(0.2)) < 1e-9
