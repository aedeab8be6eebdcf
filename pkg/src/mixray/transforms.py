"""Forward ray transforms over fan-beam boundary coordinates.

Every transform here is a line integral of a pointwise integrand along the
unit-speed geodesics traced by :mod:`mixray.geometry`.  Several integrands
can share one tracing pass through :func:`batch_xray`, which matters because
tracing dominates the cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .geometry import (
    MetricField,
    RayCoordinate,
    RayTrace,
    entry_state,
    ray_arrays,
    trace_rays,
)
from .tensors import (
    Mixing,
    TensorField,
    apply_mixing,
    contract_all,
    contract_last,
    mixing_for_mixed,
    pull_back,
)

Integrand = Callable[[np.ndarray, np.ndarray, np.ndarray | None], np.ndarray]


@dataclass
class Sinogram:
    """Transform data on a list of boundary rays.

    ``values`` is ``(P,)`` for scalar transforms or ``(P, 2, .., 2)`` for
    the intrinsic mixed transform (a ``k``-tensor at each entry point).
    """

    betas: np.ndarray
    alphas: np.ndarray
    tau: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape[0] != self.betas.shape[0]:
            raise ContractError("one value (block) per ray required")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite transform values")

    def __len__(self) -> int:
        return self.betas.shape[0]

    @property
    def rays(self) -> list[RayCoordinate]:
        return [RayCoordinate(float(b), float(a)) for b, a in zip(self.betas, self.alphas)]

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 1

    def pairing(self, g: MetricField) -> np.ndarray:
        """Scalar reduction of tensor-valued data: contract every slot with the rotated entry direction."""
        if self.is_scalar:
            return self.values
        _, v0 = entry_state(g, self.betas, self.alphas)
        rot = np.stack([-v0[:, 1], v0[:, 0]], axis=1)
        return contract_all(self.values, rot)

    def same_rays(self, other: "Sinogram") -> bool:
        return (
            self.betas.shape == other.betas.shape
            and np.array_equal(self.betas, other.betas)
            and np.array_equal(self.alphas, other.alphas)
        )


_EVAL_BLOCK = 1 << 16  # integrand points per call; small enough to stay in cache


def _line_integral(trace: RayTrace, integrand: Integrand) -> np.ndarray:
    P = trace.x.shape[1]
    X = trace.x.reshape(-1, 2)
    V = trace.v.reshape(-1, 2)
    W = None if trace.W is None else trace.W.reshape(-1, 2, 2)
    w, w_exit = trace.quadrature_weights
    q_exit = integrand(trace.x_exit, trace.v_exit, trace.W_exit)
    out = w_exit.reshape((P,) + (1,) * (q_exit.ndim - 1)) * q_exit
    acc = out.reshape(P, -1)
    # rays that already left the disk keep frozen samples with zero weight; skip them
    idx = np.flatnonzero(w)
    wk = w.reshape(-1)[idx]
    ray = idx % P
    for lo in range(0, idx.size, _EVAL_BLOCK):
        sel = idx[lo:lo + _EVAL_BLOCK]
        q = integrand(X[sel], V[sel], None if W is None else W[sel]).reshape(sel.size, -1)
        q = q * wk[lo:lo + _EVAL_BLOCK, None]
        for c in range(q.shape[1]):
            acc[:, c] += np.bincount(ray[lo:lo + _EVAL_BLOCK], weights=q[:, c], minlength=P)
    return out


def batch_xray(g: MetricField, integrands: Sequence[Integrand], rays, h: float, *,
               transport: bool = False, chunk: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
    """Integrate several integrands over one tracing pass.

    Each integrand maps ``(X (Q,2), V (Q,2), W (Q,2,2) | None)`` to ``(Q, ...)``.
    Returns ``(betas, alphas, tau, [values per integrand])``.
    """
    betas, alphas = ray_arrays(rays)
    P = betas.size
    outs: list[np.ndarray | None] = [None] * len(integrands)
    tau = np.empty(P)
    for sl, trace in trace_rays(g, (betas, alphas), h, transport=transport, chunk=chunk):
        tau[sl] = trace.tau
        for i, fn in enumerate(integrands):
            val = _line_integral(trace, fn)
            if outs[i] is None:
                outs[i] = np.empty((P,) + val.shape[1:])
            outs[i][sl] = val
    return betas, alphas, tau, outs


def lambda_integrand(f: TensorField) -> Integrand:
    return lambda X, V, W: contract_all(f.values(X), V)


def _meta(g, f, h, **extra):
    out = {"metric": g.describe(), "rank": f.rank, "h": h}
    out.update(extra)
    return out


def geodesic_xray(g: MetricField, f: TensorField, rays, h: float = 1e-3, *, chunk=None) -> Sinogram:
    """Integrate ``f(gamma', .., gamma')`` along each ray."""
    if f.rank < 1:
        raise ContractError("transforms take tensor fields of rank >= 1")
    b, a, tau, (vals,) = batch_xray(g, [lambda_integrand(f)], rays, h, chunk=chunk)
    return Sinogram(b, a, tau, vals, _meta(g, f, h, transform="geodesic", mixing="identity"))


def mixing_xray(g: MetricField, A: Mixing, f: TensorField, rays, h: float = 1e-3, *, chunk=None) -> Sinogram:
    """Geodesic transform of the mixed field ``A f``."""
    if A.degree != f.rank:
        raise ContractError(f"mixing of degree {A.degree} for a rank-{f.rank} field")
    sino = geodesic_xray(g, apply_mixing(A, f), rays, h, chunk=chunk)
    sino.metadata.update(transform="mixing", mixing=A.describe())
    return sino


def mixed_xray(g: MetricField, k: int, l: int, f: TensorField, rays, h: float = 1e-3, *, chunk=None) -> Sinogram:
    """``k`` slots paired with the rotated direction, ``l`` with the direction itself."""
    if f.rank != k + l:
        raise ContractError("rank must equal k + l")
    sino = mixing_xray(g, mixing_for_mixed(k, l, g), f, rays, h, chunk=chunk)
    sino.metadata.update(transform="mixed", k=k, l=l)
    return sino


def transverse_xray(g: MetricField, f: TensorField, rays, h: float = 1e-3, *, chunk=None) -> Sinogram:
    sino = mixed_xray(g, f.rank, 0, f, rays, h, chunk=chunk)
    sino.metadata.update(transform="transverse")
    return sino


def intrinsic_integrand(g: MetricField, k: int, l: int, f: TensorField) -> Integrand:
    """Contract the last ``l`` slots with the direction, project the first ``k``
    onto its g-orthogonal complement and pull back to the entry point."""

    def fn(X, V, W):
        T = contract_last(f.values(X), V, l)
        if k == 0:
            return T
        c = g.conformal_factor(X)
        # p_v(w) = w - g(w, v) v, as a matrix acting on vectors
        proj = np.eye(2) - c[:, None, None] * V[:, :, None] * V[:, None, :]
        T = pull_back(T, [proj] * k)
        return pull_back(T, [W] * k)

    return fn


def mixed_xray_intrinsic(g: MetricField, k: int, l: int, f: TensorField, rays, h: float = 1e-3,
                         *, chunk=None) -> Sinogram:
    """Tensor-valued mixed transform built from parallel transport.

    The result at each ray is a ``k``-tensor at the entry point;
    :meth:`Sinogram.pairing` reduces it to the scalar mixed transform.
    """
    if f.rank != k + l or k + l < 1:
        raise ContractError("rank must equal k + l >= 1")
    b, a, tau, (vals,) = batch_xray(g, [intrinsic_integrand(g, k, l, f)], rays, h,
                                    transport=k > 0, chunk=chunk)
    return Sinogram(b, a, tau, vals, _meta(g, f, h, transform="mixed_intrinsic", k=k, l=l))


def sinograms(g: MetricField, jobs: Sequence[tuple[Mixing | None, TensorField]], rays, h: float = 1e-3,
              *, chunk=None) -> list[Sinogram]:
    """Several mixing transforms sharing one tracing pass."""
    fns = []
    metas = []
    for A, f in jobs:
        if A is not None and A.degree != f.rank:
            raise ContractError("mixing degree does not match field rank")
        fns.append(lambda_integrand(f if A is None else apply_mixing(A, f)))
        metas.append(_meta(g, f, h, transform="mixing", mixing="identity" if A is None else A.describe()))
    b, a, tau, vals = batch_xray(g, fns, rays, h, chunk=chunk)
    return [Sinogram(b, a, tau, v, m) for v, m in zip(vals, metas)]
