"""Transfer of kernels, reconstructions, adjoints and normal operators between mixings.

For mixings ``A`` and ``At`` of equal degree, ``D = A^-1 o At`` satisfies
``I_A = I_At o D^-1``.  Everything below is either that identity or a
consequence of it, checked on analytic fields or on assembled discrete
operators.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ContractError, ConvergenceError
from .geometry import MetricField
from .fields import bubble
from .grid import GridModel
from .inversion import DiscreteOperator, mixing_matrix
from .tensors import (
    GridField,
    Mixing,
    PolynomialField,
    TensorField,
    apply_mixing,
    poly_mul,
    polynomial,
    scalar_polynomial,
    sigma_hat_A,
)

_CHECK_TOL = 1e-12


@dataclass(frozen=True)
class MixingPair:
    """``A``, ``At`` and the connecting mixings ``D = A^-1 o At`` and ``D^-1``.

    As operators on fields ``(B o C) f = B(C f)``, so the slot matrices of
    ``D`` are ``At_i(x) @ A_i(x)^-1``.
    """

    A: Mixing
    A_tilde: Mixing
    D: Mixing
    D_inv: Mixing
    check_residual: float

    def describe(self) -> dict:
        return {"A": self.A.describe(), "A_tilde": self.A_tilde.describe()}


def _probe_field(rank: int, seed: int = 12345) -> PolynomialField:
    rng = np.random.default_rng(seed)
    return PolynomialField(rank, rng.normal(size=(2,) * rank + (3, 3)))


def build_pair(A: Mixing, A_tilde: Mixing, *, check_points: int = 64, seed: int = 12345) -> MixingPair:
    """Compose ``D`` and verify ``D f = A^-1(At f)`` on a random field before use."""
    if A.degree != A_tilde.degree:
        raise ContractError("mixings must have equal degree")
    D = A.inverse().compose(A_tilde)
    D_inv = D.inverse()
    f = _probe_field(A.degree, seed)
    X = np.random.default_rng(seed + 1).uniform(-0.7, 0.7, size=(check_points, 2))
    direct = apply_mixing(D, f).values(X)
    chained = apply_mixing(A.inverse(), apply_mixing(A_tilde, f)).values(X)
    scale = max(1.0, float(np.max(np.abs(chained))))
    res = float(np.max(np.abs(direct - chained))) / scale
    if res > 1e3 * _CHECK_TOL:
        raise ContractError(f"composition convention check failed (residual {res:.2e})")
    return MixingPair(A, A_tilde, D, D_inv, res)


def kernel_split(pair: MixingPair, f: TensorField) -> tuple[TensorField, TensorField]:
    """``h = f - sigma_hat_A f`` (killed by lambda o A) and ``w = sigma_hat_At(D^-1 f)``.

    ``f = h + D w`` exactly.
    """
    if f.rank != pair.A.degree:
        raise ContractError("field rank does not match the pair")
    h = f - sigma_hat_A(pair.A, f)
    w = sigma_hat_A(pair.A_tilde, apply_mixing(pair.D_inv, f))
    return h, w


def transfer_reconstruction(pair: MixingPair, R_tilde: Callable[..., TensorField]) -> Callable[..., TensorField]:
    """Turn a left inverse of ``I_At`` into one of ``I_A``: ``data -> D(R_tilde(data))``."""

    def reconstruct(*args, **kwargs) -> TensorField:
        return apply_mixing(pair.D, R_tilde(*args, **kwargs))

    return reconstruct


def adjoint_mixing(A: Mixing, g: MetricField) -> Mixing:
    """Slot-wise metric adjoint ``g^-1 A_i^T g``; for conformal metrics this is ``A_i^T``."""
    return A.adjoint(g)


def discrete_adjoint(M: sp.spmatrix, V: np.ndarray) -> sp.csr_matrix:
    """Adjoint of a DOF map in the weighted pairing ``<u, w> = sum V u w``."""
    return (sp.diags(1.0 / V) @ M.T @ sp.diags(V)).tocsr()


def transfer_normal(pair: MixingPair, N_tilde, f, grid: GridModel | None = None,
                    V: np.ndarray | None = None) -> np.ndarray:
    """``(D^-1)^* N_tilde (D^-1 f)`` on coefficient vectors.

    ``N_tilde`` is a :class:`DiscreteOperator` (its normal operator is used)
    or a callable on coefficient vectors, in which case ``grid`` and ``V``
    must be given.
    """
    if isinstance(N_tilde, DiscreteOperator):
        grid, V, apply = N_tilde.grid, N_tilde.V, N_tilde.normal
    else:
        if grid is None or V is None:
            raise ContractError("grid and weights are required with a bare normal operator")
        apply = N_tilde
    u = f.coefficients() if isinstance(f, GridField) else np.asarray(f, dtype=float)
    if u.shape != (V.size,):
        raise ContractError("coefficient vector does not match the operator")
    M = mixing_matrix(grid, pair.D_inv)
    return discrete_adjoint(M, V) @ apply(M @ u)


# --- subspaces -------------------------------------------------------------------

def symmetric_basis(grid: GridModel, rank: int, A: Mixing | None = None) -> sp.csr_matrix:
    """V-orthonormal-per-node basis of the discrete ``A``-symmetric fields ``A^-1(S_m)``.

    Columns are ``A^-1`` applied to normalised symmetrised unit tensors, one
    per multiset of indices and node.
    """
    reps = [c for c in itertools.combinations_with_replacement(range(2), rank)]
    local = np.zeros((2**rank, len(reps)))
    for col, rep in enumerate(reps):
        for perm in set(itertools.permutations(rep)):
            local[int("".join(map(str, perm)), 2) if rank else 0, col] = 1.0
        local[:, col] /= np.linalg.norm(local[:, col])
    n = grid.n_active
    B = sp.kron(sp.eye(n), sp.csr_matrix(local)).tocsr()
    if A is not None:
        B = (mixing_matrix(grid, A.inverse()) @ B).tocsr()
    return B


def inside_restriction(grid: GridModel, rank: int) -> sp.csr_matrix:
    """Columns selecting the DOFs at nodes strictly inside the disk."""
    keep = np.flatnonzero(grid.inside_dofs(rank))
    return sp.csr_matrix((np.ones(keep.size), (keep, np.arange(keep.size))), shape=(grid.n_dofs(rank), keep.size))


def sampled_potential_basis(grid: GridModel, degree: int = 6) -> np.ndarray:
    """Node samples of ``dp`` for ``p = (1 - r^2/R^2) x^i y^j``, ``i + j <= degree``.

    These are exact gradients of potentials vanishing on the circle, so
    they span a grid-resolved slice of the continuum potential space.
    """
    cols = []
    b = bubble(grid.radius)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            p = scalar_polynomial(poly_mul(b, polynomial({(i, j): grid.radius ** -(i + j)})))
            cols.append(GridField.sample(p.derivative_field(), grid).coefficients())
    return np.array(cols).T


def solenoidal_basis(G: sp.spmatrix, V: np.ndarray, restrict: sp.spmatrix | None = None) -> np.ndarray:
    """Dense basis of the V-orthogonal complement of ``range(G)`` (inside ``range(restrict)``)."""
    Gd = G.toarray()
    if restrict is None:
        return sla.null_space(Gd.T * V)
    R = restrict.toarray()
    C = sla.null_space((Gd.T * V) @ R)
    return R @ C


@dataclass
class ProbeResult:
    sigma_min: float | None
    C_emp: float | None
    dim: int
    method: str
    iterations: int = 0
    converged: bool = True
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "sigma_min": self.sigma_min,
            "C_emp": self.C_emp,
            "dim": self.dim,
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
            "note": self.note,
        }


def _restricted_pencil(F: DiscreteOperator, Q) -> tuple[np.ndarray, np.ndarray]:
    FQ = F.matrix @ Q
    if sp.issparse(FQ):
        gram = (FQ.T @ sp.diags(F.W) @ FQ).toarray()
        mass = (Q.T @ sp.diags(F.V) @ Q).toarray()
    else:
        FQ = np.asarray(FQ)
        Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
        gram = FQ.T @ (F.W[:, None] * FQ)
        mass = Qd.T @ (F.V[:, None] * Qd)
    return 0.5 * (gram + gram.T), 0.5 * (mass + mass.T)


def stability_probe(F: DiscreteOperator, Q=None, *, method: str = "dense", max_iter: int = 10000,
                    tol: float = 1e-12, seed: int = 0) -> ProbeResult:
    """Smallest singular value of ``F`` on ``span(Q)`` in the weighted norms.

    ``sigma_min^2`` is the smallest eigenvalue of the pencil
    ``(Q^T F^T W F Q, Q^T V Q)``.  ``dense`` solves the pencil directly
    (absolute accuracy near ``1e-8 * sigma_max``); ``svd`` works on the
    whitened operator and is accurate to round-off but needs a dense copy;
    ``power`` runs a shifted power iteration on the restricted normal
    operator and reports non-convergence instead of a number.
    ``Q = None`` means the full DOF space; an empty or zero ``Q`` gives a
    not-applicable result.
    """
    if Q is None:
        Q = sp.eye(F.shape[1], format="csr")
    ncols = Q.shape[1]
    Qnorm = abs(Q).sum() if sp.issparse(Q) else float(np.abs(Q).sum())
    if ncols == 0 or Qnorm == 0:
        return ProbeResult(None, None, 0, method, note="trivial subspace: not applicable")
    if method == "svd":
        B, _, _ = _whitened(F, Q)
        sig = sla.svdvals(B)
        smin = float(sig.min()) if B.shape[0] >= B.shape[1] else 0.0
        return ProbeResult(smin, (1.0 / smin if smin > 0 else math.inf), ncols, method)
    gram, mass = _restricted_pencil(F, Q)
    if method == "dense":
        lam = sla.eigh(gram, mass, eigvals_only=True, subset_by_index=[0, 0])[0]
        smin = math.sqrt(max(lam, 0.0))
        return ProbeResult(smin, (1.0 / smin if smin > 0 else math.inf), ncols, method)
    if method != "power":
        raise ContractError(f"unknown probe method {method!r}")
    L = sla.cholesky(mass, lower=True)
    Kop = sla.solve_triangular(L, sla.solve_triangular(L, gram, lower=True).T, lower=True).T
    rng = np.random.default_rng(seed)
    lam_max, it1, ok1 = _power(Kop, rng, max_iter, tol)
    shifted = lam_max * np.eye(ncols) - Kop
    top, it2, ok2 = _power(shifted, rng, max_iter, tol)
    lam_min = max(lam_max - top, 0.0)
    ok = ok1 and ok2
    if not ok:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
    smin = math.sqrt(lam_min)
    return ProbeResult(smin, (1.0 / smin if smin > 0 else math.inf), ncols, method, it1 + it2, ok)


def _power(K: np.ndarray, rng, max_iter: int, tol: float) -> tuple[float, int, bool]:
    x = rng.normal(size=K.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = K @ x
        new = float(x @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0, it, True
        x = y / nrm
        if abs(new - lam) <= tol * max(abs(new), 1e-300):
            return new, it, True
        lam = new
    return lam, max_iter, False


def _whitened(F: DiscreteOperator, Q):
    """``(B, L, Qd)`` with ``B = W^1/2 F Q L^-T`` and ``Q^T V Q = L L^T``."""
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    FQ = F.matrix @ Qd
    mass = Qd.T @ (F.V[:, None] * Qd)
    L = sla.cholesky(0.5 * (mass + mass.T), lower=True)
    B = sla.solve_triangular(L, (np.sqrt(F.W)[:, None] * FQ).T, lower=True).T
    return B, L, Qd


def kernel_basis(F: DiscreteOperator, Q, threshold: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Columns spanning ``{u in span(Q) : sigma(u) <= threshold * sigma_max}``.

    Singular values come from an SVD of the whitened operator; going through
    the normal equations would put a floor of about ``1e-8 * sigma_max`` on
    every one of them.  Returns ``(K, singular_values)``.
    """
    B, L, Qd = _whitened(F, Q)
    _, sig, vt = sla.svd(B, full_matrices=True)
    full = np.zeros(Qd.shape[1])
    full[: sig.size] = sig
    keep = full <= threshold * full.max()
    coef = sla.solve_triangular(L.T, vt[keep].T, lower=False)
    return Qd @ coef, full


def subspace_residual(U: np.ndarray, K: np.ndarray, V: np.ndarray) -> float:
    """Largest sine of the principal angles between ``span(U)`` and ``span(K)`` in the V-inner product."""
    if U.shape[1] != K.shape[1]:
        return math.inf
    if U.shape[1] == 0:
        return 0.0
    s = np.sqrt(V)[:, None]
    Uo = sla.orth(s * U)
    Ko = sla.orth(s * K)
    if Uo.shape[1] != Ko.shape[1]:
        return math.inf
    # sine taken from the projection residual directly; sqrt(1 - cos^2) bottoms out near 1e-8
    return float(np.linalg.norm(Ko - Uo @ (Uo.T @ Ko), 2))
