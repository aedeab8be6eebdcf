"""Covariant tensor fields on the disk and their pointwise/differential algebra.

Components of a rank-``m`` field at ``P`` points are stored as an array of
shape ``(P, 2, ..., 2)`` with ``m`` trailing axes.  Scalars (rank 0) have
shape ``(P,)``; they only appear as potentials and test functions.

Automorphism fields are ``2 x 2`` matrices ``M[i, j] = A^i_j`` acting on
vectors; a mixing acts on a covariant tensor by pulling every slot back
through its automorphism, ``(Af)(v_1, ..., v_m) = f(A_1 v_1, ..., A_m v_m)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve2d

from .errors import ConditioningError, ContractError, StencilError
from .geometry import ROTATION, MetricField, christoffel
from .grid import GridModel

MAX_RANK = 4
DET_FLOOR = 1e-10
_FD_STEP = 1e-5


def _pts(X) -> tuple[np.ndarray, tuple]:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 2:
        raise ContractError("points need a trailing axis of length 2")
    return X.reshape(-1, 2), X.shape[:-1]


# --- array-level kernels ----------------------------------------------------

def det2(M: np.ndarray) -> np.ndarray:
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def inv2(M: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a stack of ``2 x 2`` matrices."""
    out = np.empty_like(M)
    d = det2(M)
    out[..., 0, 0] = M[..., 1, 1] / d
    out[..., 1, 1] = M[..., 0, 0] / d
    out[..., 0, 1] = -M[..., 0, 1] / d
    out[..., 1, 0] = -M[..., 1, 0] / d
    return out


def mul2(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A @ B`` for stacks of ``2 x 2`` matrices."""
    return A[..., :, 0:1] * B[..., 0:1, :] + A[..., :, 1:2] * B[..., 1:2, :]


def pull_back(F: np.ndarray, mats: Sequence[np.ndarray | None]) -> np.ndarray:
    """Apply slot matrices: ``out[..i_s..] = sum_j M_s[j, i_s] F[..j..]``.

    ``F`` has shape ``(P, 2, ..., 2)``; each entry of ``mats`` is ``(2, 2)``,
    ``(P, 2, 2)`` or ``None`` (identity).
    """
    m = F.ndim - 1
    if len(mats) != m:
        raise ContractError(f"{len(mats)} slot matrices for a rank-{m} tensor")
    out = F
    for s, M in enumerate(mats):
        if M is None:
            continue
        if M.ndim == 2:
            out = np.moveaxis(np.tensordot(out, M, axes=([s + 1], [0])), -1, s + 1)
            continue
        moved = np.moveaxis(out, s + 1, -1)
        # batched 2x2 matmul is slow; expand the row combination by hand
        rows = M.reshape((M.shape[0],) + (1,) * (moved.ndim - 2) + (2, 2))
        res = moved[..., 0:1] * rows[..., 0, :] + moved[..., 1:2] * rows[..., 1, :]
        out = np.moveaxis(res, -1, s + 1)
    return out


def contract_all(F: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``F(v, ..., v)`` for ``F`` of shape ``(P, 2, ..)`` and ``v`` of shape ``(P, 2)``."""
    out = F
    while out.ndim > 1:
        out = np.matmul(out.reshape(out.shape[0], -1, 2), v[:, :, None]).reshape(out.shape[:-1])
    return out


def contract_last(F: np.ndarray, v: np.ndarray, l: int) -> np.ndarray:
    """Contract the last ``l`` slots of ``F`` with ``v``."""
    out = F
    for _ in range(l):
        out = np.matmul(out.reshape(out.shape[0], -1, 2), v[:, :, None]).reshape(out.shape[:-1])
    return out


def symmetrize_array(F: np.ndarray) -> np.ndarray:
    m = F.ndim - 1
    if m <= 1:
        return F.copy()
    acc = np.zeros_like(F)
    for perm in itertools.permutations(range(1, m + 1)):
        acc += np.transpose(F, (0,) + perm)
    return acc / math.factorial(m)


def inner_array(F: np.ndarray, H: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Fiberwise pairing ``g^{i1 j1} ... g^{im jm} F_i H_j`` with ``ginv`` (P, 2, 2) or (2, 2)."""
    m = F.ndim - 1
    if H.ndim - 1 != m:
        raise ContractError("rank mismatch in fiber inner product")
    if m == 0:
        return F * H
    G = pull_back(H, [ginv.swapaxes(-1, -2) if ginv.ndim == 3 else ginv.T] * m)
    return np.sum((F * G).reshape(F.shape[0], -1), axis=1)


# --- fields -----------------------------------------------------------------

class TensorField:
    """Base class: a covariant ``rank``-tensor field on the disk."""

    rank: int
    support_radius: float | None = None

    def values(self, X: np.ndarray) -> np.ndarray:  # (P, 2) -> (P, 2..)
        raise NotImplementedError

    def gradient(self, X: np.ndarray) -> np.ndarray:
        """Partial derivatives ``d_j f_{i...}`` with the derivative index first."""
        X = np.asarray(X, dtype=float)
        parts = []
        for j in range(2):
            e = np.zeros(2)
            e[j] = _FD_STEP
            parts.append((self.values(X + e) - self.values(X - e)) / (2 * _FD_STEP))
        return np.stack(parts, axis=1)

    def __call__(self, X) -> np.ndarray:
        P, lead = _pts(X)
        out = self.values(P)
        return out.reshape(lead + out.shape[1:])

    def partials(self) -> "TensorField":
        """The field of partial derivatives (rank + 1)."""
        return FunctionField(self.rank + 1, self.gradient)

    # linear structure
    def __add__(self, other: "TensorField") -> "TensorField":
        return combine([(1.0, self), (1.0, other)])

    def __sub__(self, other: "TensorField") -> "TensorField":
        return combine([(1.0, self), (-1.0, other)])

    def __neg__(self) -> "TensorField":
        return combine([(-1.0, self)])

    def __mul__(self, a: float) -> "TensorField":
        return combine([(float(a), self)])

    __rmul__ = __mul__


@dataclass(eq=False)
class FunctionField(TensorField):
    """Field given by vectorised callables ``func(X) -> (P, 2..)`` (and optionally its gradient)."""

    rank: int
    func: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    support_radius: float | None = None
    name: str = ""

    def values(self, X):
        return np.asarray(self.func(np.asarray(X, dtype=float)), dtype=float)

    def gradient(self, X):
        if self.grad is not None:
            return np.asarray(self.grad(np.asarray(X, dtype=float)), dtype=float)
        return super().gradient(X)


def _powers(z: np.ndarray, n: int) -> np.ndarray:
    """Rows ``z**0 .. z**(n-1)``."""
    out = np.empty((n, z.size))
    out[0] = 1.0
    for i in range(1, n):
        np.multiply(out[i - 1], z, out=out[i])
    return out


@dataclass(eq=False)
class PolynomialField(TensorField):
    """Components are bivariate polynomials ``sum c[..., i, j] x^i y^j``.

    ``coeffs`` has shape ``(2,)*rank + (d+1, d+1)``.  Derivatives are exact.
    """

    rank: int
    coeffs: np.ndarray
    support_radius: float | None = None
    name: str = ""

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != self.rank + 2 or self.coeffs.shape[: self.rank] != (2,) * self.rank:
            raise ContractError("coefficient array does not match rank")

    @property
    def degree_shape(self) -> tuple[int, int]:
        return self.coeffs.shape[-2:]

    def values(self, X):
        X = np.asarray(X, dtype=float)
        dx, dy = self.degree_shape
        flat = self.coeffs.reshape(-1, dx, dy)
        C = flat.shape[0]
        # sum_i c[., i, j] x^i as one GEMM, then the y powers
        tmp = (flat.transpose(0, 2, 1).reshape(C * dy, dx) @ _powers(X[:, 0], dx)).reshape(C, dy, -1)
        out = np.einsum("cjp,jp->pc", tmp, _powers(X[:, 1], dy))
        return out.reshape((X.shape[0],) + (2,) * self.rank)

    def derivative_field(self) -> "PolynomialField":
        cx = npoly.polyder(self.coeffs, axis=self.rank)
        cy = npoly.polyder(self.coeffs, axis=self.rank + 1)
        dx = max(cx.shape[-2], cy.shape[-2], 1)
        dy = max(cx.shape[-1], cy.shape[-1], 1)
        out = np.zeros((2,) + (2,) * self.rank + (dx, dy))
        out[0][..., : cx.shape[-2], : cx.shape[-1]] = cx
        out[1][..., : cy.shape[-2], : cy.shape[-1]] = cy
        return PolynomialField(self.rank + 1, out)

    def gradient(self, X):
        return self.derivative_field().values(X)

    def partials(self):
        return self.derivative_field()


def polynomial(terms: dict[tuple[int, int], float]) -> np.ndarray:
    """Coefficient matrix of ``sum c x^i y^j`` from ``{(i, j): c}``."""
    dx = max(i for i, _ in terms) + 1
    dy = max(j for _, j in terms) + 1
    c = np.zeros((dx, dy))
    for (i, j), a in terms.items():
        c[i, j] += a
    return c


def poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return convolve2d(a, b)


def scalar_polynomial(coeffs, name: str = "") -> PolynomialField:
    return PolynomialField(0, np.asarray(coeffs, dtype=float), name=name)


def component_polynomials(rank: int, comps: dict[tuple[int, ...], np.ndarray], name: str = "") -> PolynomialField:
    """Assemble a polynomial tensor field from per-component coefficient matrices."""
    dx = max(c.shape[0] for c in comps.values())
    dy = max(c.shape[1] for c in comps.values())
    out = np.zeros((2,) * rank + (dx, dy))
    for idx, c in comps.items():
        out[idx][: c.shape[0], : c.shape[1]] += c
    return PolynomialField(rank, out, name=name)


@dataclass(eq=False)
class GridField(TensorField):
    """Nodal samples on a :class:`GridModel`, bilinearly interpolated.

    ``samples`` has shape ``(N, N) + (2,)*rank``; inactive nodes hold zero and
    the field vanishes outside the disk.  Evaluating at a node returns the
    sample exactly.
    """

    rank: int
    grid: GridModel
    samples: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        N = self.grid.N
        if self.samples.shape != (N, N) + (2,) * self.rank:
            raise ContractError("sample array does not match grid and rank")

    @property
    def support_radius(self):
        return self.grid.radius

    @classmethod
    def sample(cls, f: TensorField, grid: GridModel, active_only: bool = True) -> "GridField":
        vals = f.values(grid.nodes.reshape(-1, 2)).reshape((grid.N, grid.N) + (2,) * f.rank)
        if active_only:
            vals = vals * grid.active.reshape(grid.active.shape + (1,) * f.rank)
        return cls(f.rank, grid, vals)

    @classmethod
    def from_coefficients(cls, grid: GridModel, coeffs: np.ndarray, rank: int) -> "GridField":
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size != grid.n_dofs(rank):
            raise ContractError("coefficient vector length does not match grid DOFs")
        vals = np.zeros((grid.N, grid.N) + (2,) * rank)
        vals[grid.active] = coeffs.reshape((grid.n_active,) + (2,) * rank)
        return cls(rank, grid, vals)

    def coefficients(self) -> np.ndarray:
        return self.samples[self.grid.active].reshape(-1).copy()

    def _interp(self, table: np.ndarray, X: np.ndarray) -> np.ndarray:
        idx, w = self.grid.bilinear(X)
        flat = table.reshape((self.grid.N * self.grid.N,) + table.shape[2:])
        vals = flat[idx]  # (P, 4, ...)
        w = w.reshape(w.shape + (1,) * (vals.ndim - 2))
        used = w != 0
        bad = np.isnan(vals) & used
        if bad.any():
            raise StencilError("evaluation too close to the grid edge for a difference stencil")
        return np.sum(np.where(used, vals, 0.0) * w, axis=1)

    def values(self, X):
        return self._interp(self.samples, np.asarray(X, dtype=float))

    def node_gradient(self) -> np.ndarray:
        """Central differences at nodes, derivative index first; edge nodes are NaN."""
        s = self.samples
        d = self.grid.spacing
        out = np.full((s.shape[0], s.shape[1], 2) + s.shape[2:], np.nan)
        out[1:-1, :, 0] = (s[2:] - s[:-2]) / (2 * d)
        out[:, 1:-1, 1] = (s[:, 2:] - s[:, :-2]) / (2 * d)
        out[0, :, :] = np.nan
        out[-1, :, :] = np.nan
        out[:, 0, :] = np.nan
        out[:, -1, :] = np.nan
        return out

    def gradient(self, X):
        return self._interp(self.node_gradient(), np.asarray(X, dtype=float))

    def partials(self):
        return GridField(self.rank + 1, self.grid, self.node_gradient())


class _Combination(TensorField):
    def __init__(self, terms):
        self.terms = terms
        self.rank = terms[0][1].rank
        radii = [f.support_radius for _, f in terms]
        self.support_radius = None if any(r is None for r in radii) else max(radii)

    def values(self, X):
        return sum(a * f.values(X) for a, f in self.terms)

    def gradient(self, X):
        return sum(a * f.gradient(X) for a, f in self.terms)


def combine(terms: Sequence[tuple[float, TensorField]]) -> TensorField:
    """Linear combination ``sum a_i f_i`` keeping polynomial/grid representations."""
    ranks = {f.rank for _, f in terms}
    if len(ranks) != 1:
        raise ContractError("cannot combine fields of different rank")
    rank = ranks.pop()
    fields = [f for _, f in terms]
    if all(isinstance(f, PolynomialField) for f in fields):
        dx = max(f.degree_shape[0] for f in fields)
        dy = max(f.degree_shape[1] for f in fields)
        out = np.zeros((2,) * rank + (dx, dy))
        for a, f in terms:
            out[..., : f.degree_shape[0], : f.degree_shape[1]] += a * f.coeffs
        return PolynomialField(rank, out)
    if all(isinstance(f, GridField) for f in fields) and len({f.grid for f in fields}) == 1:
        return GridField(rank, fields[0].grid, sum(a * f.samples for a, f in terms))
    return _Combination(list(terms))


def zero_field(rank: int) -> PolynomialField:
    return PolynomialField(rank, np.zeros((2,) * rank + (1, 1)), name="zero")


# --- automorphisms and mixings ---------------------------------------------

@dataclass(frozen=True, eq=False)
class AutomorphismField:
    """Field of invertible ``2 x 2`` matrices ``x -> A(x)`` acting on tangent vectors.

    ``kind`` is ``identity``, ``star`` (quarter turn of ``metric``) or
    ``custom``.  ``constant`` is set when the matrix does not depend on
    ``x``, which keeps polynomial fields polynomial under mixing.
    """

    kind: str
    func: Callable[[np.ndarray], np.ndarray] | None = None
    constant: np.ndarray | None = None
    metric: MetricField | None = None
    label: str = ""
    det_floor: float = DET_FLOOR

    @classmethod
    def identity(cls) -> "AutomorphismField":
        return cls("identity", constant=np.eye(2), label="id")

    @classmethod
    def star(cls, metric: MetricField | None = None) -> "AutomorphismField":
        return cls("star", constant=ROTATION.copy(), metric=metric, label="star")

    @classmethod
    def from_matrix(cls, M, label: str = "") -> "AutomorphismField":
        M = np.asarray(M, dtype=float)
        if M.shape != (2, 2):
            raise ContractError("automorphism matrix must be 2x2")
        field_ = cls("custom", constant=M, label=label or "matrix")
        field_.check(M[None])
        return field_

    @classmethod
    def custom(cls, func, label: str = "custom") -> "AutomorphismField":
        return cls("custom", func=func, label=label)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def check(self, M: np.ndarray) -> np.ndarray:
        det = det2(M)
        scale = np.max(np.abs(M).reshape(M.shape[0], -1), axis=1) ** 2
        if np.any(np.abs(det) < self.det_floor * np.maximum(scale, 1.0)):
            raise ConditioningError(f"automorphism {self.label or self.kind} is numerically singular")
        return M

    def matrix(self, X) -> np.ndarray:
        """Matrices at points, shape ``(P, 2, 2)``."""
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        if self.constant is not None:
            return np.broadcast_to(self.constant, (X.shape[0], 2, 2))
        return self.check(np.asarray(self.func(X), dtype=float).reshape(-1, 2, 2))

    def inverse(self) -> "AutomorphismField":
        if self.kind == "identity":
            return self
        if self.constant is not None:
            return AutomorphismField("custom", constant=np.linalg.inv(self.constant),
                                     label=f"inv({self.label})")
        f = self.func
        owner = self
        return AutomorphismField("custom", func=lambda X: inv2(owner.check(np.asarray(f(X), float).reshape(-1, 2, 2))),
                                 label=f"inv({self.label})")

    def then(self, other: "AutomorphismField") -> "AutomorphismField":
        """Matrix product ``other(x) @ self(x)``."""
        if self.constant is not None and other.constant is not None:
            return AutomorphismField("custom", constant=other.constant @ self.constant,
                                     label=f"{other.label}*{self.label}")
        a, b = self, other
        return AutomorphismField("custom", func=lambda X: mul2(b.matrix(X), a.matrix(X)),
                                 label=f"{other.label}*{self.label}")

    def transpose_adjoint(self, metric: MetricField) -> "AutomorphismField":
        """Metric adjoint ``g^-1 A^T g`` (equal to ``A^T`` for conformal metrics)."""
        if self.kind == "identity":
            return self
        if self.constant is not None:
            return AutomorphismField("custom", constant=self.constant.T.copy(), label=f"adj({self.label})")
        a = self
        return AutomorphismField("custom", func=lambda X: a.matrix(X).swapaxes(-1, -2),
                                 label=f"adj({self.label})")

    def describe(self):
        if self.kind in ("identity", "star"):
            return self.kind
        if self.constant is not None:
            return {"matrix": self.constant.tolist()}
        return self.label


@dataclass(frozen=True)
class Mixing:
    """Ordered automorphism slots ``A = A_1 (x) ... (x) A_m``."""

    slots: tuple[AutomorphismField, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.slots:
            raise ContractError("a mixing needs at least one slot")

    @property
    def degree(self) -> int:
        return len(self.slots)

    @classmethod
    def identity(cls, m: int) -> "Mixing":
        return cls((AutomorphismField.identity(),) * m)

    @property
    def is_constant(self) -> bool:
        return all(s.is_constant for s in self.slots)

    def matrices(self, X) -> list[np.ndarray]:
        return [s.matrix(X) for s in self.slots]

    def inverse(self) -> "Mixing":
        return Mixing(tuple(s.inverse() for s in self.slots))

    def compose(self, other: "Mixing") -> "Mixing":
        """Operator composition ``self o other`` on tensor fields.

        ``self(other f)(v) = f(B_i A_i v)``: slot matrices multiply as
        ``B_i @ A_i`` with ``B = other``.
        """
        if other.degree != self.degree:
            raise ContractError("mixings of different degree")
        return Mixing(tuple(a.then(b) for a, b in zip(self.slots, other.slots)))

    def adjoint(self, metric: MetricField) -> "Mixing":
        return Mixing(tuple(s.transpose_adjoint(metric) for s in self.slots))

    def describe(self):
        return [s.describe() for s in self.slots]


def _check_rank(A: Mixing, f: TensorField):
    if f.rank != A.degree:
        raise ContractError(f"mixing of degree {A.degree} applied to rank-{f.rank} field")


def _rank_ok(f: TensorField):
    if f.rank > MAX_RANK:
        raise ContractError(f"rank {f.rank} exceeds the supported maximum {MAX_RANK}")


class _MixedField(TensorField):
    def __init__(self, A: Mixing, f: TensorField):
        self.A, self.f, self.rank = A, f, f.rank
        self.support_radius = f.support_radius

    def values(self, X):
        # constant slots go through the (2, 2) GEMM path of pull_back
        mats = [None if s.kind == "identity" else s.constant if s.is_constant else s.matrix(X)
                for s in self.A.slots]
        return pull_back(self.f.values(X), mats)


def apply_mixing(A: Mixing, f: TensorField) -> TensorField:
    """``(Af)(v_1..v_m) = f(A_1 v_1, ..., A_m v_m)``, i.e. ``(Af)_i = A^j_i f_j`` per slot."""
    _check_rank(A, f)
    _rank_ok(f)
    if isinstance(f, GridField):
        mats = [None if s.kind == "identity" else M
                for s, M in zip(A.slots, A.matrices(f.grid.nodes.reshape(-1, 2)))]
        flat = f.samples.reshape((-1,) + (2,) * f.rank)
        out = pull_back(flat, mats).reshape(f.samples.shape)
        out = out * f.grid.active.reshape(f.grid.active.shape + (1,) * f.rank)
        return GridField(f.rank, f.grid, out)
    if isinstance(f, PolynomialField) and A.is_constant:
        c = np.moveaxis(f.coeffs, (-2, -1), (0, 1))
        dx, dy = c.shape[:2]
        flat = c.reshape((dx * dy,) + (2,) * f.rank)
        out = pull_back(flat, [None if s.kind == "identity" else s.constant for s in A.slots])
        out = np.moveaxis(out.reshape(c.shape), (0, 1), (-2, -1))
        return PolynomialField(f.rank, out)
    return _MixedField(A, f)


def mixing_for_mixed(k: int, l: int, g: MetricField | None = None) -> Mixing:
    """Mixing of the mixed transform: ``k`` star slots followed by ``l`` identity slots."""
    if k < 0 or l < 0 or k + l < 1:
        raise ContractError("mixed transform needs k + l >= 1")
    return Mixing((AutomorphismField.star(g),) * k + (AutomorphismField.identity(),) * l)


def custom_mixing(matrices: Sequence) -> Mixing:
    return Mixing(tuple(AutomorphismField.from_matrix(M) for M in matrices))


def lambda_eval(f: TensorField, x, v) -> np.ndarray:
    """``f_x(v, ..., v)`` at points ``x`` (``(2,)`` or ``(P, 2)``) and vectors ``v``."""
    X, lead = _pts(x)
    V = np.broadcast_to(np.asarray(v, dtype=float), X.shape)
    out = contract_all(f.values(X), V)
    return out.reshape(lead)


class _SymField(TensorField):
    def __init__(self, f):
        self.f, self.rank, self.support_radius = f, f.rank, f.support_radius

    def values(self, X):
        return symmetrize_array(self.f.values(X))


def symmetrize(f: TensorField) -> TensorField:
    """Average over all slot permutations."""
    if f.rank < 1:
        raise ContractError("symmetrization needs rank >= 1")
    if f.rank == 1:
        return f
    if isinstance(f, PolynomialField):
        c = np.moveaxis(f.coeffs, (-2, -1), (0, 1))
        flat = c.reshape((-1,) + (2,) * f.rank)
        out = np.moveaxis(symmetrize_array(flat).reshape(c.shape), (0, 1), (-2, -1))
        return PolynomialField(f.rank, out)
    if isinstance(f, GridField):
        flat = f.samples.reshape((-1,) + (2,) * f.rank)
        return GridField(f.rank, f.grid, symmetrize_array(flat).reshape(f.samples.shape))
    return _SymField(f)


def sigma_hat_A(A: Mixing, f: TensorField) -> TensorField:
    """Projection ``A^-1 sigma A`` onto the ``A``-symmetric fields."""
    _check_rank(A, f)
    return apply_mixing(A.inverse(), symmetrize(apply_mixing(A, f)))


# --- differential operators ----------------------------------------------------

class _CovariantDerivative(TensorField):
    def __init__(self, g: MetricField, f: TensorField):
        self.g, self.f, self.rank = g, f, f.rank + 1
        self.support_radius = f.support_radius

    def values(self, X):
        return _nabla_values(self.g, self.f.gradient(X), self.f.values(X), X)


def _nabla_values(g: MetricField, dF: np.ndarray, F: np.ndarray, X: np.ndarray) -> np.ndarray:
    m = F.ndim - 1
    if m == 0 or g.is_flat:
        return dF
    gam = christoffel(g, X).reshape(-1, 2, 4)  # (P, r, j i)
    P = X.shape[0]
    out = dF.copy()
    for s in range(m):
        # sum_r Gamma^r_{j i_s} F[.., r, ..]
        Fs = np.moveaxis(F, s + 1, -1)  # (P, ..., r)
        rest = Fs.shape[1:-1]
        term = np.matmul(Fs.reshape(P, -1, 2), gam).reshape((P,) + rest + (2, 2))  # (P, ..., j, i)
        term = np.moveaxis(term, -2, 1)  # (P, j, ..., i)
        out -= np.moveaxis(term, -1, s + 2)
    return out


def covariant_derivative(g: MetricField, f: TensorField) -> TensorField:
    """``(nabla f)_{j i_1..i_m} = d_j f_{i..} - sum_s Gamma^r_{j i_s} f_{..r..}``.

    Grid fields use central differences at nodes; the outer ring of nodes
    has no stencil and raises :class:`StencilError` when touched.
    """
    if f.rank + 1 > MAX_RANK:
        raise ContractError("derivative rank exceeds supported maximum")
    if isinstance(f, GridField):
        dF = f.node_gradient()
        flat_d = dF.reshape((-1,) + dF.shape[2:])
        flat = f.samples.reshape((-1,) + f.samples.shape[2:])
        X = f.grid.nodes.reshape(-1, 2)
        if f.rank == 0 or g.is_flat:
            vals = flat_d
        else:
            inside = np.linalg.norm(X, axis=1) <= g.radius * (1 + 1e-6)
            vals = np.full(flat_d.shape, np.nan)
            vals[inside] = _nabla_values(g, flat_d[inside], flat[inside], X[inside])
        return GridField(f.rank + 1, f.grid, vals.reshape(dF.shape))
    if (f.rank == 0 or g.is_flat) and isinstance(f, PolynomialField):
        return f.derivative_field()
    return _CovariantDerivative(g, f)


def nabla_A(A: Mixing, g: MetricField, u: TensorField) -> TensorField:
    """``A^-1 nabla u`` for ``u`` of rank ``deg(A) - 1``."""
    if A.degree != u.rank + 1:
        raise ContractError("nabla_A needs deg(A) = rank(u) + 1")
    return apply_mixing(A.inverse(), covariant_derivative(g, u))


class _Divergence(TensorField):
    rank = 0

    def __init__(self, g, f):
        self.g, self.f = g, f
        self.support_radius = f.support_radius

    def values(self, X):
        d = self.f.gradient(X)
        return (d[:, 0, 0] + d[:, 1, 1]) / self.g.conformal_factor(X)


def divergence(g: MetricField, f: TensorField) -> TensorField:
    """``div_g`` of the vector field dual to a one-form: ``c^-1 (d_1 f_1 + d_2 f_2)``."""
    if f.rank != 1:
        raise ContractError("divergence is defined here for one-forms")
    if isinstance(f, GridField):
        dF = f.node_gradient()
        c = g.conformal_factor(f.grid.nodes)
        return GridField(0, f.grid, (dF[:, :, 0, 0] + dF[:, :, 1, 1]) / c)
    return _Divergence(g, f)


class _Curl(TensorField):
    rank = 1

    def __init__(self, phi):
        self.phi = phi
        self.support_radius = phi.support_radius

    def values(self, X):
        d = self.phi.gradient(X)
        return np.stack([d[:, 1], -d[:, 0]], axis=1)


def curl_scalar(g: MetricField, phi: TensorField) -> TensorField:
    """``curl(phi) = e_2(phi) e^1 - e_1(phi) e^2``; in Cartesian components ``(d_2 phi, -d_1 phi)``."""
    if phi.rank != 0:
        raise ContractError("curl_scalar takes a scalar field")
    if isinstance(phi, PolynomialField):
        d = phi.derivative_field().coeffs
        return PolynomialField(1, np.stack([d[1], -d[0]]))
    if isinstance(phi, GridField):
        d = phi.node_gradient()
        return GridField(1, phi.grid, np.stack([d[:, :, 1], -d[:, :, 0]], axis=-1))
    return _Curl(phi)


def metric_as_field(g: MetricField) -> TensorField:
    """The metric itself as a rank-2 field (used for compatibility checks)."""
    eye = np.eye(2)
    return FunctionField(
        2,
        lambda X: g.conformal_factor(X)[:, None, None] * eye,
        grad=lambda X: g.factor_gradient(X)[:, :, None, None] * eye,
        name="metric",
    )


# --- inner products --------------------------------------------------------------

def fiber_inner(g: MetricField, x, f: TensorField, h: TensorField) -> np.ndarray:
    """``g^{i1 j1}..g^{im jm} f_i h_j`` at points ``x``."""
    if f.rank != h.rank:
        raise ContractError("rank mismatch")
    X, lead = _pts(x)
    g.check_domain(X)
    c = g.conformal_factor(X)
    F, H = f.values(X), h.values(X)
    out = np.sum((F * H).reshape(X.shape[0], -1), axis=1) * c ** (-f.rank)
    return out.reshape(lead)


def fiber_norm(g: MetricField, x, f: TensorField) -> np.ndarray:
    return np.sqrt(np.maximum(fiber_inner(g, x, f, f), 0.0))


def l2_inner(g: MetricField, grid: GridModel, f: TensorField, h: TensorField) -> float:
    """Nodal quadrature of ``int g_x(f, h) dV_g`` over the nodes inside the disk."""
    if f.rank != h.rank:
        raise ContractError("rank mismatch")
    X = grid.inside_nodes
    c = g.conformal_factor(X)
    F, H = f.values(X), h.values(X)
    pair = np.sum((F * H).reshape(X.shape[0], -1), axis=1) * c ** (-f.rank)
    return float(np.sum(pair * c) * grid.cell_area)


def l2_norm(g: MetricField, grid: GridModel, f: TensorField) -> float:
    return math.sqrt(max(l2_inner(g, grid, f, f), 0.0))


def mixing_bound(A: Mixing, g: MetricField, X) -> np.ndarray:
    """Pointwise constant ``n^m C_1(x) ... C_m(x)`` with ``C_i`` the g-operator norms."""
    X, lead = _pts(X)
    bound = np.full(X.shape[0], 2.0 ** A.degree)
    for M in A.matrices(X):
        # conformal metric: g-operator norm equals the Euclidean spectral norm
        bound *= np.linalg.norm(M, ord=2, axis=(1, 2))
    return bound.reshape(lead)
