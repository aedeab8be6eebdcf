"""Named builtin fields, metrics and mixings for configs and experiments."""
from __future__ import annotations

import itertools
from typing import Any

import numpy as np

from .errors import ContractError
from .geometry import MetricField
from .tensors import (
    AutomorphismField,
    FunctionField,
    Mixing,
    PolynomialField,
    TensorField,
    component_polynomials,
    covariant_derivative,
    curl_scalar,
    metric_as_field,
    mixing_for_mixed,
    nabla_A,
    poly_mul,
    polynomial,
    scalar_polynomial,
    sigma_hat_A,
    symmetrize,
    zero_field,
)

def bubble(radius: float = 1.0) -> np.ndarray:
    return polynomial({(0, 0): 1.0, (2, 0): -1.0 / radius**2, (0, 2): -1.0 / radius**2})


def const_oneform(a: float, b: float) -> PolynomialField:
    return component_polynomials(1, {(0,): polynomial({(0, 0): a}), (1,): polynomial({(0, 0): b})})


def y_dx() -> PolynomialField:
    return component_polynomials(1, {(0,): polynomial({(0, 1): 1.0})}, name="y_dx")


def smooth_oneform() -> PolynomialField:
    """``y dx + (x + 0.3 y^2) dy``."""
    return component_polynomials(
        1, {(0,): polynomial({(0, 1): 1.0}), (1,): polynomial({(1, 0): 1.0, (0, 2): 0.3})},
        name="smooth_oneform")


def potential_scalar(radius: float = 1.0, tilt: float = 0.3) -> PolynomialField:
    """``p = (1 - |x|^2/R^2)(1 + tilt x)``; vanishes on the circle."""
    return scalar_polynomial(poly_mul(bubble(radius), polynomial({(0, 0): 1.0, (1, 0): tilt})), name="p")


def curl_potential(radius: float = 1.0) -> PolynomialField:
    """``phi = (1 - |x|^2/R^2)^2``; both phi and its gradient vanish on the circle."""
    b = bubble(radius)
    return scalar_polynomial(poly_mul(b, b), name="phi")


def hodge_test_parts(g: MetricField) -> tuple[TensorField, TensorField]:
    """``(curl phi, dp)``: a one-form with a known solenoidal/potential split.

    For a conformal metric the divergence of a one-form is ``c^-1`` times its
    flat divergence, so ``curl phi`` is solenoidal for every such metric.
    """
    return curl_scalar(g, curl_potential(g.radius)), potential_scalar(g.radius).derivative_field()


def vanishing_tensor(rank: int, radius: float = 1.0, seed: int = 0, degree: int = 2) -> PolynomialField:
    """Random polynomial ``rank``-tensor multiplied by the boundary bubble (rank 0 allowed)."""
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(2,) * rank + (degree + 1, degree + 1))
    b = bubble(radius)
    out = np.zeros((2,) * rank + (degree + 3, degree + 3))
    for idx in itertools.product(range(2), repeat=rank):
        out[idx] = poly_mul(base[idx], b)
    return PolynomialField(rank, out)


def random_polynomial(rank: int, seed: int = 0, degree: int = 2, scale: float = 1.0) -> PolynomialField:
    rng = np.random.default_rng(seed)
    return PolynomialField(rank, scale * rng.normal(size=(2,) * rank + (degree + 1, degree + 1)))


def potential_field(g: MetricField, rank: int, seed: int = 0) -> TensorField:
    """``sigma nabla u`` with ``u`` a rank-(m-1) field vanishing on the circle."""
    u = potential_scalar(g.radius) if rank == 1 else vanishing_tensor(rank - 1, g.radius, seed)
    return symmetrize(covariant_derivative(g, u))


def mixed_potential_field(g: MetricField, A: Mixing, seed: int = 0) -> TensorField:
    """``sigma_hat_A nabla^A u`` with ``u`` vanishing on the circle."""
    m = A.degree
    u = potential_scalar(g.radius) if m == 1 else vanishing_tensor(m - 1, g.radius, seed)
    return sigma_hat_A(A, nabla_A(A, g, u))


def metric_multiple(g: MetricField, seed: int = 0) -> TensorField:
    """``w g`` for a random polynomial weight ``w`` (rank 2)."""
    w = random_polynomial(0, seed, degree=2)
    gm = metric_as_field(g)
    return FunctionField(2, lambda X: w.values(X)[:, None, None] * gm.values(X), name="metric_multiple")


# --- config builders -------------------------------------------------------------

def make_metric(spec: dict[str, Any]) -> MetricField:
    kind = spec.get("kind", "euclidean")
    R = float(spec.get("radius", 1.0))
    if kind == "euclidean":
        return MetricField.euclidean(R)
    if kind == "constant_curvature":
        return MetricField.constant_curvature(float(spec.get("kappa", 0.0)), R)
    if kind == "custom":
        family = spec.get("family", "exp_linear")
        params = spec.get("params", {})
        if family == "exp_linear":
            a = np.asarray(params.get("a", [1.0, 0.0]), dtype=float)
            return MetricField.custom(lambda x: np.exp(2 * (x @ a)),
                                      lambda x: 2 * a * np.exp(2 * (x @ a))[..., None], R, "exp_linear")
        if family == "bump":
            amp, width = float(params.get("amplitude", 0.2)), float(params.get("width", 0.5))

            def c(x):
                return 1.0 + amp * np.exp(-np.sum(x * x, axis=-1) / (2 * width**2))

            def dc(x):
                e = amp * np.exp(-np.sum(x * x, axis=-1) / (2 * width**2))
                return -(e / width**2)[..., None] * x

            return MetricField.custom(c, dc, R, "bump")
        raise ContractError(f"unknown custom metric family {family!r}")
    raise ContractError(f"unknown metric kind {kind!r}")


def make_slot(spec, g: MetricField) -> AutomorphismField:
    if spec == "identity":
        return AutomorphismField.identity()
    if spec == "star":
        return AutomorphismField.star(g)
    if isinstance(spec, dict) and "matrix" in spec:
        return AutomorphismField.from_matrix(spec["matrix"])
    raise ContractError(f"unknown automorphism spec {spec!r}")


def make_mixing(spec, g: MetricField) -> Mixing:
    return Mixing(tuple(make_slot(s, g) for s in spec))


def transform_mixing(spec: dict[str, Any], g: MetricField, rank: int) -> Mixing:
    kind = spec.get("kind", "geodesic")
    if kind == "geodesic":
        return Mixing.identity(rank)
    if kind == "transverse":
        return mixing_for_mixed(rank, 0, g)
    if kind == "mixed":
        k, l = int(spec.get("k", 0)), int(spec.get("l", 0))
        if k + l != rank:
            raise ContractError("k + l must equal the field rank")
        return mixing_for_mixed(k, l, g)
    if kind == "mixing":
        A = make_mixing(spec["mixing"], g)
        if A.degree != rank:
            raise ContractError("mixing degree must equal the field rank")
        return A
    raise ContractError(f"unknown transform kind {kind!r}")


FIELD_NAMES = (
    "zero", "dx", "dy", "y_dx", "smooth_oneform", "potential", "curl",
    "random_polynomial", "metric_multiple", "mixed_potential", "curl_plus_potential",
)


def make_field(spec: dict[str, Any], g: MetricField, seed: int = 0) -> TensorField:
    """Build a field from ``{"name": ..., "params": {...}}`` or ``{"file": path}``."""
    if "file" in spec:
        from .io import read_grid_field

        return read_grid_field(spec["file"])
    name = spec["name"]
    p = spec.get("params", {})
    rank = int(p.get("rank", 1))
    fseed = int(p.get("seed", seed))
    if name == "zero":
        return zero_field(rank)
    if name == "dx":
        return const_oneform(1.0, 0.0)
    if name == "dy":
        return const_oneform(0.0, 1.0)
    if name == "y_dx":
        return y_dx()
    if name == "smooth_oneform":
        return smooth_oneform()
    if name == "potential":
        return potential_field(g, rank, fseed)
    if name == "curl":
        return curl_scalar(g, curl_potential(g.radius))
    if name == "random_polynomial":
        return random_polynomial(rank, fseed, int(p.get("degree", 2)))
    if name == "metric_multiple":
        return metric_multiple(g, fseed)
    if name == "curl_plus_potential":
        s, p_ = hodge_test_parts(g)
        return s + p_
    if name == "mixed_potential":
        return mixed_potential_field(g, make_mixing(p["mixing"], g), fseed)
    raise ContractError(f"unknown field {name!r}")

