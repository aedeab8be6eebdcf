"""Named invariant suite behind ``mixray verify``.

Every check returns a residual and a tolerance; the report is a plain dict
that serialises deterministically for a fixed seed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ContractError
from .fields import (
    curl_potential,
    make_mixing,
    mixed_potential_field,
    potential_field,
    potential_scalar,
    random_polynomial,
)
from .geometry import (
    MetricField,
    entry_state,
    grid_angles,
    hodge_star,
    trace_states,
    unit_speed_drift,
)
from .grid import GridModel
from .inversion import assemble_many, mixing_matrix, projection_decompose
from .reduction import build_pair, kernel_basis, kernel_split, subspace_residual
from .tensors import (
    AutomorphismField,
    Mixing,
    apply_mixing,
    contract_all,
    curl_scalar,
    fiber_norm,
    inner_array,
    lambda_eval,
    l2_inner,
    l2_norm,
    mixing_bound,
    mixing_for_mixed,
    sigma_hat_A,
    symmetrize_array,
)
from .transforms import mixed_xray, mixed_xray_intrinsic, sinograms


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float
    detail: dict | None = None

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def as_dict(self) -> dict:
        out = {"name": self.name, "residual": float(self.residual), "tolerance": self.tolerance,
               "passed": self.passed}
        if self.detail:
            out["detail"] = self.detail
        return out


# --- random objects -------------------------------------------------------------

def random_spd(rng: np.random.Generator, n: int = 2) -> np.ndarray:
    B = rng.normal(size=(n, n))
    return B @ B.T + 0.5 * np.eye(n)


def random_matrix(rng: np.random.Generator) -> np.ndarray:
    """Well-conditioned ``2 x 2`` matrix (singular values in [0.5, 2])."""
    q1, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    q2, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    return q1 @ np.diag(rng.uniform(0.5, 2.0, size=2)) @ q2


def random_automorphism(rng: np.random.Generator, g: MetricField) -> AutomorphismField:
    kind = rng.integers(3)
    if kind == 0:
        return AutomorphismField.star(g)
    if kind == 1:
        return AutomorphismField.from_matrix(random_matrix(rng))
    a, b = rng.normal(size=2)
    base = random_matrix(rng)

    def func(X, a=a, b=b, base=base):
        th = a * X[:, 0] + b * X[:, 1]
        c, s = np.cos(th), np.sin(th)
        rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        return rot @ base

    return AutomorphismField.custom(func, label="rotating")


def random_mixing(rng: np.random.Generator, g: MetricField, m: int) -> Mixing:
    return Mixing(tuple(random_automorphism(rng, g) for _ in range(m)))


def _disk_points(rng: np.random.Generator, n: int, radius: float, frac: float = 0.95) -> np.ndarray:
    r = radius * frac * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)


def _random_rays(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    return rng.uniform(0, 2 * np.pi, size=n), rng.uniform(-1.4, 1.4, size=n)


# --- geometry ---------------------------------------------------------------------

def check_unit_speed(g: MetricField, h: float) -> Check:
    b, a = grid_angles(16, 16)
    x0, v0 = entry_state(g, b, a)
    return Check("geometry.unit_speed", unit_speed_drift(g, trace_states(g, x0, v0, h)), 1e-9)


def check_reversibility(g: MetricField, h: float, rng) -> Check:
    b, a = _random_rays(rng, 50)
    x0, v0 = entry_state(g, b, a)
    fwd = trace_states(g, x0, v0, h)
    back = trace_states(g, fwd.x_exit, -fwd.v_exit, h)
    return Check("geometry.reversibility", float(np.max(np.linalg.norm(back.x_exit - x0, axis=1))), 1e-8)


def check_flow_invariance(g: MetricField, h: float, rng) -> Check:
    b, a = _random_rays(rng, 50)
    x0, v0 = entry_state(g, b, a)
    tr = trace_states(g, x0, v0, h)
    k = np.maximum(tr.n // 3, 1)
    cols = np.arange(tr.size)
    xs, vs = tr.x[k, cols], tr.v[k, cols]
    ahead = trace_states(g, xs, vs, h)
    behind = trace_states(g, xs, -vs, h)
    res = max(np.max(np.linalg.norm(ahead.x_exit - tr.x_exit, axis=1)),
              np.max(np.linalg.norm(behind.x_exit - x0, axis=1)))
    return Check("geometry.flow_invariance", float(res), 1e-8)


def check_transport(g: MetricField, h: float, rng) -> list[Check]:
    b, a = _random_rays(rng, 50)
    x0, v0 = entry_state(g, b, a)
    tr = trace_states(g, x0, v0, h, transport=True)
    w0 = hodge_star(g, x0, v0)
    w_exit = np.einsum("pij,pj->pi", tr.W_exit, w0)
    frame = np.max(np.linalg.norm(w_exit - hodge_star(g, tr.x_exit, tr.v_exit), axis=1))
    # norms along every stored sample
    w_all = np.einsum("kpij,pj->kpi", tr.W, w0)
    norms = g.norm(tr.x, w_all)
    drift = 0.0
    for p in range(tr.size):
        drift = max(drift, float(np.max(np.abs(norms[: tr.n[p] + 1, p] - 1.0))))
    return [Check("geometry.transport_isometry", drift, 1e-8),
            Check("geometry.hodge_frame_transport", float(frame), 1e-8)]


def check_euclidean_tau(h: float, radius: float) -> Check:
    g = MetricField.euclidean(radius)
    b, a = grid_angles(16, 16)
    x0, v0 = entry_state(g, b, a)
    tr = trace_states(g, x0, v0, h)
    return Check("geometry.euclidean_tau", float(np.max(np.abs(tr.tau - 2 * radius * np.cos(a)))), 1e-9)


# --- tensor algebra --------------------------------------------------------------

def check_sigma_orthogonality(rng, ranks, n_points: int) -> list[Check]:
    worst, worst_two = 0.0, 0.0
    for m in [r for r in ranks if r >= 2]:
        for _ in range(n_points // 10):
            F, H = rng.normal(size=(2, 1) + (2,) * m)
            ginv1 = np.linalg.inv(random_spd(rng))[None]
            ginv2 = np.linalg.inv(random_spd(rng))[None]
            sF, sH = symmetrize_array(F), symmetrize_array(H)
            scale = np.linalg.norm(F) * np.linalg.norm(H) + 1.0
            r1 = abs(inner_array(F - sF, sH, ginv1)[0]) / scale
            r2 = abs(inner_array(F - sF, sH, ginv2)[0]) / scale
            worst = max(worst, r1)
            worst_two = max(worst_two, r1, r2)
    return [Check("tensors.sigma_orthogonality", worst, 1e-12),
            Check("tensors.sigma_orthogonality_two_metrics", worst_two, 1e-12)]


def check_ker_sigma(rng, ranks, n_points: int) -> Check:
    worst = 0.0
    for m in [r for r in ranks if r >= 2]:
        F = rng.normal(size=(n_points,) + (2,) * m)
        K = F - symmetrize_array(F)
        v = rng.normal(size=(n_points, 2))
        worst = max(worst, float(np.max(np.abs(contract_all(K, v)))))
    return Check("tensors.ker_sigma_in_ker_lambda", worst, 1e-12)


def check_mixing_isometry(g: MetricField, rng, n_points: int) -> Check:
    X = _disk_points(rng, n_points, g.radius)
    worst = 0.0
    for m in (1, 2, 3):
        f = random_polynomial(m, int(rng.integers(1 << 30)))
        for k in range(m + 1):
            A = mixing_for_mixed(k, m - k, g)
            Af = apply_mixing(A, f)
            a, b = fiber_norm(g, X, Af), fiber_norm(g, X, f)
            worst = max(worst, float(np.max(np.abs(a - b) / (1.0 + b))))
    return Check("tensors.mixing_isometry", worst, 1e-12)


def check_adjoint_sign(g: MetricField, rng, n_points: int) -> Check:
    """The metric adjoint of ``A_{k,l}`` is ``(-1)^k A_{k,l}`` as an operator on fields."""
    X = _disk_points(rng, n_points, g.radius)
    worst = 0.0
    for m in (1, 2, 3):
        f = random_polynomial(m, int(rng.integers(1 << 30)))
        for k in range(m + 1):
            A = mixing_for_mixed(k, m - k, g)
            lhs = apply_mixing(A.adjoint(g), f).values(X)
            rhs = (-1) ** k * apply_mixing(A, f).values(X)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return Check("tensors.adjoint_sign", worst, 1e-12)


def check_mixing_bound(g: MetricField, rng, n_points: int) -> Check:
    X = _disk_points(rng, n_points, g.radius)
    worst = -math.inf
    for m in (1, 2, 3):
        A = random_mixing(rng, g, m)
        f = random_polynomial(m, int(rng.integers(1 << 30)))
        excess = fiber_norm(g, X, apply_mixing(A, f)) - mixing_bound(A, g, X) * fiber_norm(g, X, f)
        worst = max(worst, float(np.max(excess)))
    return Check("tensors.mixing_bound", max(worst, 0.0), 0.0)


def check_sigma_hat(g: MetricField, rng, ranks, n_points: int) -> list[Check]:
    X = _disk_points(rng, n_points, g.radius)
    idem, annih = 0.0, 0.0
    for m in [r for r in ranks if r >= 1]:
        A = random_mixing(rng, g, m)
        f = random_polynomial(m, int(rng.integers(1 << 30)))
        p = sigma_hat_A(A, f)
        scale = 1.0 + float(np.max(np.abs(f.values(X))))
        idem = max(idem, float(np.max(np.abs(sigma_hat_A(A, p).values(X) - p.values(X)))) / scale)
        h = f - p
        v = rng.normal(size=X.shape)
        annih = max(annih, float(np.max(np.abs(lambda_eval(apply_mixing(A, h), X, v)))) / scale)
    return [Check("tensors.sigma_hat_idempotent", idem, 1e-12),
            Check("tensors.sigma_hat_complement_in_kernel", annih, 1e-12)]


# --- transforms and reduction -------------------------------------------------------

def check_linearity(g: MetricField, h: float, rng, n_rays: int) -> Check:
    rays = _random_rays(rng, n_rays)
    f, k = random_polynomial(2, 1), random_polynomial(2, 2)
    a, b = rng.normal(size=2)
    A = random_mixing(rng, g, 2)
    combo = f * a + k * b
    s = sinograms(g, [(A, combo), (A, f), (A, k)], rays, h)
    res = np.max(np.abs(s[0].values - a * s[1].values - b * s[2].values))
    return Check("transforms.linearity", float(res), 1e-10)


def check_reduction(g: MetricField, h: float, rng, n_rays: int, n_pairs: int,
                    extra: tuple[Mixing, Mixing] | None) -> Check:
    rays = _random_rays(rng, n_rays)
    pairs = []
    for i in range(n_pairs):
        m = 1 + i % 3
        pairs.append((random_mixing(rng, g, m), random_mixing(rng, g, m)))
    if extra is not None:
        pairs.append(extra)
    jobs = []
    for A, At in pairs:
        pair = build_pair(A, At)
        for j in range(5):
            f = random_polynomial(A.degree, int(rng.integers(1 << 30)))
            jobs += [(A, f), (At, apply_mixing(pair.D_inv, f))]
    s = sinograms(g, jobs, rays, h)
    res = max(float(np.max(np.abs(s[i].values - s[i + 1].values))) for i in range(0, len(s), 2))
    return Check("transforms.reduction_identity", res, 1e-10, {"pairs": len(pairs), "fields_per_pair": 5})


def check_potential_kernel(g: MetricField, h: float, rng, ranks, n_rays: int) -> Check:
    rays = _random_rays(rng, n_rays)
    X = _disk_points(rng, 400, g.radius, 1.0)
    worst = 0.0
    jobs, scales = [], []
    for m in [r for r in ranks if r >= 1]:
        f = potential_field(g, m, int(rng.integers(1 << 30)))
        jobs.append((None, f))
        scales.append(float(np.max(np.abs(f.values(X)))))
        A = random_mixing(rng, g, m) if m > 1 else mixing_for_mixed(1, 0, g)
        fa = mixed_potential_field(g, A, int(rng.integers(1 << 30)))
        jobs.append((A, fa))
        scales.append(float(np.max(np.abs(apply_mixing(A, fa).values(X)))))
    for s, sc in zip(sinograms(g, jobs, rays, h), scales):
        worst = max(worst, float(np.max(np.abs(s.values))) / max(sc, 1e-300))
    return Check("transforms.potential_kernel", worst, 1e-6)


def check_antisymmetric_kernel(g: MetricField, h: float, rng, ranks, n_rays: int) -> Check:
    rays = _random_rays(rng, n_rays)
    jobs = []
    for m in [r for r in ranks if r >= 2]:
        A = random_mixing(rng, g, m)
        f = random_polynomial(m, int(rng.integers(1 << 30)))
        jobs.append((A, f - sigma_hat_A(A, f)))
    if not jobs:
        return Check("transforms.antisymmetric_kernel", 0.0, 1e-10, {"note": "no rank >= 2 requested"})
    res = max(float(np.max(np.abs(s.values))) for s in sinograms(g, jobs, rays, h))
    return Check("transforms.antisymmetric_kernel", res, 1e-10)


def check_formulations(g: MetricField, h: float, rng, n_rays: int) -> Check:
    rays = _random_rays(rng, n_rays)
    worst = 0.0
    for k, l in ((1, 0), (0, 1), (1, 1), (2, 0)):
        f = random_polynomial(k + l, int(rng.integers(1 << 30)))
        a = mixed_xray(g, k, l, f, rays, h).values
        b = mixed_xray_intrinsic(g, k, l, f, rays, h).pairing(g)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return Check("transforms.formulation_equivalence", worst, 1e-8)


def check_kernel_split(g: MetricField, rng, n_points: int) -> list[Check]:
    X = _disk_points(rng, n_points, g.radius)
    recon = annih = sym = direct = 0.0
    for m in (1, 2, 3):
        A, At = random_mixing(rng, g, m), random_mixing(rng, g, m)
        pair = build_pair(A, At)
        f = random_polynomial(m, int(rng.integers(1 << 30)))
        hpart, w = kernel_split(pair, f)
        fv = f.values(X)
        scale = 1.0 + float(np.max(np.abs(fv)))
        Dw = apply_mixing(pair.D, w)
        recon = max(recon, float(np.max(np.abs(hpart.values(X) + Dw.values(X) - fv))) / scale)
        v = rng.normal(size=X.shape)
        annih = max(annih, float(np.max(np.abs(lambda_eval(apply_mixing(A, hpart), X, v)))) / scale)
        Atw = apply_mixing(At, w).values(X)
        sym = max(sym, float(np.max(np.abs(Atw - symmetrize_array(Atw)))) / scale)
        # a field in both images: f' = D w' with At w' symmetric, then sigma_hat_A f' = f'
        # and (Id - sigma_hat_A) f' = 0; so the H-part of D w must vanish
        hh = Dw - sigma_hat_A(A, Dw)
        direct = max(direct, float(np.max(np.abs(hh.values(X)))) / scale)
    return [Check("reduction.split_reconstitution", recon, 1e-12),
            Check("reduction.split_h_annihilated", annih, 1e-12),
            Check("reduction.split_w_symmetric", sym, 1e-12),
            Check("reduction.split_directness", direct, 1e-12)]


def check_discrete(g: MetricField, h: float, rng) -> list[Check]:
    """Adjoint pairing, discrete normal identity and kernel transfer on small grids."""
    grid = GridModel(16, g.radius)
    rays = grid_angles(24, 24)
    out = []
    adj = normal = 0.0
    for k, l in ((1, 0), (0, 1), (1, 1), (2, 0)):
        m = k + l
        A = mixing_for_mixed(k, l, g)
        F_id, F_A = assemble_many(g, [Mixing.identity(m), A], grid, rays, h)
        M = mixing_matrix(grid, A)
        for _ in range(3):
            u = rng.normal(size=F_A.shape[1])
            d = rng.normal(size=F_A.shape[0])
            lhs, rhs = F_A.data_inner(F_A.apply(u), d), F_A.field_inner(u, F_A.adjoint(d))
            adj = max(adj, abs(lhs - rhs) / (1.0 + abs(lhs)))
            diff = F_A.normal(u) - (-1) ** k * (M @ F_id.normal(M @ u))
            normal = max(normal, math.sqrt(F_A.field_inner(diff, diff) / F_A.field_inner(u, u)))
    out.append(Check("inversion.adjoint_pairing", adj, 1e-10))
    out.append(Check("inversion.normal_identity", normal, 1e-10))

    small = GridModel(10, g.radius)
    A = mixing_for_mixed(1, 1, g)
    At = random_mixing(rng, g, 2)
    pair = build_pair(A, At)
    F_A, F_At = assemble_many(g, [A, At], small, rays, h)
    eye = sp.eye(F_A.shape[1], format="csr")
    K_A, _ = kernel_basis(F_A, eye, 1e-8)
    K_At, _ = kernel_basis(F_At, eye, 1e-8)
    res = subspace_residual(mixing_matrix(small, pair.D) @ K_At, K_A, F_A.V)
    out.append(Check("reduction.kernel_transfer", res, 1e-6,
                     {"kernel_dims": [int(K_A.shape[1]), int(K_At.shape[1])]}))
    return out


def check_decomposition(g: MetricField) -> Check:
    grid = GridModel(33, g.radius)
    f = curl_scalar(g, curl_potential(g.radius)) + potential_scalar(g.radius).derivative_field()
    dec = projection_decompose(g, grid, f)
    ip = abs(l2_inner(g, grid, dec.solenoidal, dec.gradient))
    denom = l2_norm(g, grid, dec.solenoidal) * l2_norm(g, grid, dec.gradient)
    return Check("inversion.decomposition_orthogonality", ip / denom, 1e-6)


# --- driver -------------------------------------------------------------------------

def run_suite(g: MetricField, *, seed: int = 0, h: float = 1e-3, ranks=(1, 2, 3), n_points: int = 1000,
              n_rays: int = 50, n_pairs: int = 20, configured_pair: tuple[Mixing, Mixing] | None = None,
              timings: bool = False) -> dict:
    """Run every named invariant; the result is JSON-ready and seed-deterministic."""
    rng = np.random.default_rng(seed)
    steps: list[tuple[str, Callable[[], Check | list[Check]]]] = [
        ("unit_speed", lambda: check_unit_speed(g, h)),
        ("reversibility", lambda: check_reversibility(g, h, rng)),
        ("flow", lambda: check_flow_invariance(g, h, rng)),
        ("transport", lambda: check_transport(g, h, rng)),
        ("tau", lambda: check_euclidean_tau(h, g.radius)),
        ("sigma", lambda: check_sigma_orthogonality(rng, ranks, n_points)),
        ("ker", lambda: check_ker_sigma(rng, ranks, n_points)),
        ("isometry", lambda: check_mixing_isometry(g, rng, n_points)),
        ("adjoint_sign", lambda: check_adjoint_sign(g, rng, n_points)),
        ("bound", lambda: check_mixing_bound(g, rng, n_points)),
        ("sigma_hat", lambda: check_sigma_hat(g, rng, ranks, n_points)),
        ("linearity", lambda: check_linearity(g, h, rng, n_rays)),
        ("reduction", lambda: check_reduction(g, h, rng, n_rays, n_pairs, configured_pair)),
        ("potential", lambda: check_potential_kernel(g, h, rng, ranks, n_rays)),
        ("antisym", lambda: check_antisymmetric_kernel(g, h, rng, ranks, n_rays)),
        ("formulations", lambda: check_formulations(g, h, rng, n_rays)),
        ("split", lambda: check_kernel_split(g, rng, n_points)),
        ("discrete", lambda: check_discrete(g, h, rng)),
        ("decomposition", lambda: check_decomposition(g)),
    ]
    checks: list[Check] = []
    clock = {}
    for key, fn in steps:
        t0 = time.perf_counter()
        got = fn()
        clock[key] = time.perf_counter() - t0
        checks.extend(got if isinstance(got, list) else [got])
    report = {
        "metric": g.describe(),
        "seed": seed,
        "h": h,
        "ranks": list(ranks),
        "checks": [c.as_dict() for c in checks],
        "passed": all(c.passed for c in checks),
        "n_failed": sum(not c.passed for c in checks),
    }
    if timings:
        report["seconds"] = clock
    return report


def configured_pair_from(spec_A, spec_At, g: MetricField) -> tuple[Mixing, Mixing]:
    A, At = make_mixing(spec_A, g), make_mixing(spec_At, g)
    if A.degree != At.degree:
        raise ContractError("reduce.A and reduce.A_tilde must have the same number of slots")
    return A, At
