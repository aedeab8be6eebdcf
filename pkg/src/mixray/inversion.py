"""Discrete forward operators, least-squares inversion and the one-form decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, spsolve

from .errors import ContractError, ConvergenceError
from .geometry import TANGENTIAL_EPS, MetricField, ray_arrays, trace_rays
from .grid import GridModel
from .tensors import GridField, Mixing, TensorField, l2_norm, mixing_for_mixed

__all__ = [
    "GridModel",
    "DiscreteOperator",
    "LeastSquaresResult",
    "Decomposition",
    "ray_weights",
    "assemble_forward",
    "assemble_many",
    "mixing_matrix",
    "stack_operators",
    "solve_least_squares",
    "potential_gradient_matrix",
    "solenoidal_decompose",
    "projection_decompose",
    "reconstruct_oneform_combined",
    "harmonic_residual",
    "decomposition_error",
    "relative_error",
    "h1_surrogate_norm",
    "normal_on_extension",
]

_BLOCK = 400_000  # samples per assembly block
DIV_REGION = 0.9  # radius fraction on which decomposition div residuals are reported
EXTENSION = 1.2  # radius factor of the enlarged disk carrying normal-operator outputs


def ray_weights(betas: np.ndarray, alphas: np.ndarray, eps: float = TANGENTIAL_EPS) -> np.ndarray:
    """Fan-beam measure ``dbeta * dalpha * cos(alpha)`` per ray.

    Tensor-product grids use their own spacings; scattered ray sets share
    the total measure ``2 pi (pi - 2 eps)`` evenly.
    """
    betas, alphas = np.asarray(betas, float), np.asarray(alphas, float)
    nb, na = np.unique(betas).size, np.unique(alphas).size
    if nb * na == betas.size:
        cell = (2 * np.pi / nb) * ((np.pi - 2 * eps) / na)
    else:
        cell = 2 * np.pi * (np.pi - 2 * eps) / betas.size
    return cell * np.cos(alphas)


@dataclass
class DiscreteOperator:
    """Sparse forward map ``F`` (rays x DOFs) with ray weights ``W`` and DOF weights ``V``.

    Data pairing ``<d, e> = sum W d e``; field pairing ``<u, w> = sum V u w``.
    The adjoint is ``V^-1 F^T W`` and the normal operator ``V^-1 F^T W F``.
    """

    matrix: sp.csr_matrix
    grid: GridModel
    rank: int
    W: np.ndarray
    V: np.ndarray
    betas: np.ndarray
    alphas: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.matrix.shape != (self.W.size, self.V.size):
            raise ContractError("operator shape does not match weights")
        if not np.all(np.isfinite(self.matrix.data)):
            raise FloatingPointError("non-finite operator entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def adjoint(self, d: np.ndarray) -> np.ndarray:
        return (self.matrix.T @ (self.W * d)) / self.V

    def normal(self, u: np.ndarray) -> np.ndarray:
        return self.adjoint(self.apply(u))

    def weighted_normal_matrix(self) -> sp.csr_matrix:
        """``F^T W F`` as a sparse matrix (can be dense-ish)."""
        return (self.matrix.T @ sp.diags(self.W) @ self.matrix).tocsr()

    def data_inner(self, d: np.ndarray, e: np.ndarray) -> float:
        return float(np.sum(self.W * d * e))

    def field_inner(self, u: np.ndarray, w: np.ndarray) -> float:
        return float(np.sum(self.V * u * w))

    def compose_right(self, M: sp.spmatrix, **meta) -> "DiscreteOperator":
        """Operator ``F M`` for a DOF-space map ``M`` (same grid and rank)."""
        md = dict(self.metadata)
        md.update(meta)
        return DiscreteOperator((self.matrix @ M).tocsr(), self.grid, self.rank, self.W, self.V,
                                self.betas, self.alphas, md)


@dataclass
class LeastSquaresResult:
    coeffs: np.ndarray
    iterations: int
    residual: float
    converged: bool
    reg: float

    def field(self, grid: GridModel, rank: int) -> GridField:
        return GridField.from_coefficients(grid, self.coeffs, rank)


# --- assembly ---------------------------------------------------------------

def _slot_tables(grid: GridModel, A: Mixing) -> list[np.ndarray | None]:
    X = grid.nodes.reshape(-1, 2)
    return [None if s.kind == "identity" else np.ascontiguousarray(s.matrix(X)) for s in A.slots]


def _factors(tables, nodes: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Per-sample ``prod_s (A_s(node) v)^{j_s}`` over multi-indices ``j``, shape ``(Q, 2**m)``."""
    out = np.ones((V.shape[0], 1))
    for T in tables:
        u = V if T is None else np.einsum("qij,qj->qi", T[nodes], V)
        out = (out[:, :, None] * u[:, None, :]).reshape(V.shape[0], -1)
    return out


def _assemble_trace(trace, grid: GridModel, tables_list, rank: int) -> list[sp.csr_matrix]:
    S, P = trace.x.shape[:2]
    w, w_exit = trace.quadrature_weights
    si, pi = np.nonzero(w > 0)
    X = np.concatenate([trace.x[si, pi], trace.x_exit])
    V = np.concatenate([trace.v[si, pi], trace.v_exit])
    wq = np.concatenate([w[si, pi], w_exit])
    rows = np.concatenate([pi, np.arange(P)])
    active_flat = grid.active_index.reshape(-1)
    ncomp = 2**rank
    ndof = grid.n_dofs(rank)
    acc = [sp.csr_matrix((P, ndof)) for _ in tables_list]
    for start in range(0, X.shape[0], _BLOCK):
        b = slice(start, start + _BLOCK)
        idx, bw = grid.bilinear(X[b])
        parts_r, parts_c, parts_v = [[] for _ in tables_list], [[] for _ in tables_list], [[] for _ in tables_list]
        for corner in range(4):
            node = idx[:, corner]
            a = active_flat[node]
            keep = (a >= 0) & (bw[:, corner] != 0)
            if not keep.any():
                continue
            base = (wq[b] * bw[:, corner])[keep]
            r = rows[b][keep]
            cols = (a[keep][:, None] * ncomp + np.arange(ncomp)).reshape(-1)
            rr = np.repeat(r, ncomp)
            for t, tables in enumerate(tables_list):
                fac = _factors(tables, node[keep], V[b][keep])
                parts_r[t].append(rr)
                parts_c[t].append(cols)
                parts_v[t].append((base[:, None] * fac).reshape(-1))
        for t in range(len(tables_list)):
            if parts_r[t]:
                acc[t] = acc[t] + sp.coo_matrix(
                    (np.concatenate(parts_v[t]), (np.concatenate(parts_r[t]), np.concatenate(parts_c[t]))),
                    shape=(P, ndof)).tocsr()
    return acc


def assemble_many(g: MetricField, mixings: Sequence[Mixing], grid: GridModel, rays, h: float = 1e-3,
                  *, chunk: int | None = None) -> list[DiscreteOperator]:
    """Assemble the discrete mixing transforms for several mixings in one tracing pass.

    Entry ``(ray, (node, j))`` is the sum over quadrature samples of
    ``weight * bilinear weight * prod_s (A_s(node) v)^{j_s}``; the mixing is
    applied at the grid node, so ``F_A = F_Id M_A`` holds exactly.
    """
    if not mixings:
        raise ContractError("no mixings to assemble")
    ranks = {A.degree for A in mixings}
    if len(ranks) != 1:
        raise ContractError("all mixings must share the degree")
    rank = ranks.pop()
    betas, alphas = ray_arrays(rays)
    if betas.size == 0:
        raise ContractError("empty ray list")
    tables_list = [_slot_tables(grid, A) for A in mixings]
    blocks: list[list[sp.csr_matrix]] = [[] for _ in mixings]
    for _, trace in trace_rays(g, (betas, alphas), h, chunk=chunk):
        for t, m in enumerate(_assemble_trace(trace, grid, tables_list, rank)):
            blocks[t].append(m)
    W = ray_weights(betas, alphas)
    Vw = grid.dof_weights(g, rank)
    out = []
    for A, blk in zip(mixings, blocks):
        F = sp.vstack(blk).tocsr()
        F.sum_duplicates()
        out.append(DiscreteOperator(F, grid, rank, W, Vw, betas, alphas,
                                    {"metric": g.describe(), "mixing": A.describe(), "h": h, "N": grid.N}))
    return out


def assemble_forward(g: MetricField, A: Mixing, grid: GridModel, rays, h: float = 1e-3,
                     *, chunk: int | None = None) -> DiscreteOperator:
    """Discrete ``I_A`` on bilinear grid fields of rank ``deg(A)``."""
    return assemble_many(g, [A], grid, rays, h, chunk=chunk)[0]


def mixing_matrix(grid: GridModel, A: Mixing) -> sp.csr_matrix:
    """Block-diagonal DOF map ``u -> coeffs(A u)`` (one ``2^m`` block per active node)."""
    X = grid.active_nodes
    n = X.shape[0]
    block = np.ones((n, 1, 1))
    for s in A.slots:
        M = np.broadcast_to(np.eye(2), (n, 2, 2)) if s.kind == "identity" else s.matrix(X)
        Mt = M.swapaxes(1, 2)
        block = np.einsum("nab,ncd->nacbd", block, Mt).reshape(n, block.shape[1] * 2, block.shape[2] * 2)
    return _bsr(block)


def _bsr(block: np.ndarray) -> sp.csr_matrix:
    n, b, _ = block.shape
    return sp.bsr_matrix((block, np.arange(n), np.arange(n + 1)), shape=(n * b, n * b)).tocsr()


def stack_operators(ops: Sequence[DiscreteOperator]) -> DiscreteOperator:
    """Row-wise stacking ``[F_1; F_2; ...]`` with concatenated ray weights."""
    first = ops[0]
    for op in ops[1:]:
        if op.grid != first.grid or op.rank != first.rank:
            raise ContractError("stacked operators must share grid and rank")
    return DiscreteOperator(
        sp.vstack([op.matrix for op in ops]).tocsr(), first.grid, first.rank,
        np.concatenate([op.W for op in ops]), first.V,
        np.concatenate([op.betas for op in ops]), np.concatenate([op.alphas for op in ops]),
        {"stacked": [op.metadata.get("mixing") for op in ops]},
    )


# --- least squares ------------------------------------------------------------

def trace_scale(F: DiscreteOperator) -> float:
    """``trace(F^T W F) / sum V``: makes the regularization weight dimensionless."""
    sq = F.matrix.multiply(F.matrix).T @ F.W
    return float(np.sum(sq) / np.sum(F.V))


def solve_least_squares(F: DiscreteOperator, data: np.ndarray, reg: float = 1e-8, tol: float = 1e-6,
                        maxiter: int = 5000, *, strict: bool = False) -> LeastSquaresResult:
    """Conjugate gradients on ``(F^T W F + reg * s * V) u = F^T W d``.

    ``s`` is :func:`trace_scale`.  Preconditioning by ``V^-1`` makes the
    iterates minimal in the ``V``-norm, so components with no data signal
    stay at zero.  Non-convergence is flagged (or raised when ``strict``).

    The default ``tol`` stops early on purpose: with interpolation-level
    model error in the data, iterating much further amplifies weakly
    observed grid-scale modes.
    """
    data = np.asarray(data, dtype=float)
    if data.shape != (F.shape[0],):
        raise ContractError("data length does not match operator rows")
    if reg < 0:
        raise ContractError("regularization must be non-negative")
    lam = reg * trace_scale(F)
    M = F.matrix
    MT = M.T.tocsr()
    WV = F.W
    n = F.shape[1]

    def matvec(u):
        return MT @ (WV * (M @ u)) + lam * F.V * u

    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    pre = LinearOperator((n, n), matvec=lambda r: r / F.V, dtype=float)
    rhs = MT @ (WV * data)
    if not np.any(rhs):
        return LeastSquaresResult(np.zeros(n), 0, 0.0, True, lam)
    count = [0]

    def cb(_):
        count[0] += 1

    u, info = cg(op, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=pre, callback=cb)
    res = float(np.linalg.norm(matvec(u) - rhs) / np.linalg.norm(rhs))
    ok = info == 0
    if strict and not ok:
        raise ConvergenceError(f"CG stopped after {count[0]} iterations, relative residual {res:.3e}")
    return LeastSquaresResult(u, count[0], res, ok, lam)


def relative_error(grid: GridModel, g: MetricField, rank: int, u: np.ndarray, truth: np.ndarray) -> float:
    """Weighted relative L2 error over DOFs at nodes inside the disk."""
    Vw = grid.dof_weights(g, rank) * grid.inside_dofs(rank)
    return float(math.sqrt(np.sum(Vw * (u - truth) ** 2) / np.sum(Vw * truth**2)))


def h1_surrogate_norm(g: MetricField, f: GridField) -> float:
    """Discrete H1 surrogate: nodal L2 of the samples plus their central-difference gradient.

    The gradient term only uses inside nodes whose axis neighbours are inside
    as well, so one cell is lost at the rim.  This is a stand-in for a
    continuum Sobolev norm, not a discretisation of one.
    """
    grid, m = f.grid, f.rank
    X = grid.nodes[grid.inside]
    c = g.conformal_factor(X)
    value = np.sum(f.samples[grid.inside].reshape(X.shape[0], -1) ** 2, axis=1) * c ** (1 - m)
    mask = _interior_mask(grid)
    cg_ = g.conformal_factor(grid.nodes[mask])
    grad = np.sum(f.node_gradient()[mask].reshape(cg_.size, -1) ** 2, axis=1) * cg_ ** (-m)
    return float(math.sqrt((np.sum(value) + np.sum(grad)) * grid.cell_area))


def normal_on_extension(g: MetricField, A: Mixing, f: TensorField, N: int, rays, h: float = 1e-3,
                        factor: float = EXTENSION) -> GridField:
    """Discrete normal operator ``F_A^* F_A f`` with rays and output on the disk of radius ``factor * R``.

    ``f`` is sampled on an ``N x N`` grid over the enlarged square and set to
    zero outside the original disk.  The metric keeps its formula; only the
    radius grows, so it must stay simple there (checked for constant curvature).
    """
    if factor < 1:
        raise ContractError("extension factor must be at least 1")
    g1 = replace(g, radius=g.radius * factor)
    grid1 = GridModel(N, g1.radius)
    (F,) = assemble_many(g1, [A], grid1, rays, h)
    u = GridField.sample(f, grid1).samples
    outside = np.linalg.norm(grid1.nodes, axis=-1) >= g.radius
    u[outside] = 0.0
    return GridField.from_coefficients(grid1, F.normal(GridField(f.rank, grid1, u).coefficients()), f.rank)


# --- potentials and the one-form decomposition -------------------------------------

def potential_gradient_matrix(grid: GridModel) -> tuple[sp.csr_matrix, np.ndarray]:
    """Central-difference gradient from interior potentials to one-form DOFs.

    Potentials live on active nodes outside :meth:`GridModel.boundary_band`
    and vanish elsewhere, so their bilinear interpolant is zero on the
    circle.  Returns ``(G, mask)`` with ``G`` of shape ``(n_dofs(1), n_p)``.
    """
    N, d = grid.N, grid.spacing
    mask = grid.active & ~grid.boundary_band()
    pidx = np.full((N, N), -1, dtype=np.int64)
    pidx[mask] = np.arange(int(mask.sum()))
    rows, cols, vals = [], [], []
    act = np.argwhere(grid.active)
    aidx = grid.active_index[act[:, 0], act[:, 1]]
    for comp, (di, dj) in enumerate(((1, 0), (0, 1))):
        for sign in (1, -1):
            ni, nj = act[:, 0] + sign * di, act[:, 1] + sign * dj
            ok = (ni >= 0) & (ni < N) & (nj >= 0) & (nj < N)
            p = np.full(act.shape[0], -1)
            p[ok] = pidx[ni[ok], nj[ok]]
            keep = p >= 0
            rows.append(aidx[keep] * 2 + comp)
            cols.append(p[keep])
            vals.append(np.full(keep.sum(), sign / (2 * d)))
    G = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.n_dofs(1), int(mask.sum()))).tocsr()
    return G, mask


@dataclass
class Decomposition:
    """``f = f_s + dp`` on the nodes inside the disk; ``p`` is zero on all other nodes."""

    solenoidal: GridField
    potential: GridField
    gradient: GridField
    div_residual: float
    method: str


def _boundary_fraction(grid: GridModel, i: np.ndarray, j: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Fraction ``theta`` of the step from node ``(i, j)`` towards ``(i+di, j+dj)`` at which the circle is hit."""
    x = grid.nodes[i, j]
    e = np.array([di, dj], dtype=float)
    # |x + s e|^2 = R^2, s > 0
    b = x @ e
    c = np.sum(x * x, axis=-1) - grid.radius**2
    s = -b + np.sqrt(np.maximum(b * b - c, 0.0))
    return np.clip(s / grid.spacing, 1e-12, 1.0)


def _sw_operators(grid: GridModel):
    """Shortley-Weller Laplacian and second-order gradient on inside nodes (Dirichlet zero on the circle)."""
    N, d = grid.N, grid.spacing
    act = np.argwhere(grid.inside)
    idx = np.full((N, N), -1, dtype=np.int64)
    idx[grid.inside] = np.arange(act.shape[0])
    n = act.shape[0]
    Lr, Lc, Lv = [], [], []
    Gr, Gc, Gv = [], [], []
    diag = np.zeros(n)
    for comp, (di, dj) in enumerate(((1, 0), (0, 1))):
        hp = np.ones(n)
        hm = np.ones(n)
        ip, jp = act[:, 0] + di, act[:, 1] + dj
        im, jm = act[:, 0] - di, act[:, 1] - dj
        inp = grid.inside[ip, jp]
        inm = grid.inside[im, jm]
        hp[~inp] = _boundary_fraction(grid, act[~inp, 0], act[~inp, 1], di, dj)
        hm[~inm] = _boundary_fraction(grid, act[~inm, 0], act[~inm, 1], -di, -dj)
        a, b = hm * d, hp * d
        me = np.arange(n)
        # second derivative: 2/(a+b) * ((u+ - u)/b - (u - u-)/a)
        cp, cm = 2.0 / (b * (a + b)), 2.0 / (a * (a + b))
        diag -= cp + cm
        Lr += [me[inp], me[inm]]
        Lc += [idx[ip[inp], jp[inp]], idx[im[inm], jm[inm]]]
        Lv += [cp[inp], cm[inm]]
        # first derivative on nodes -a, 0, +b
        gp, g0, gm = a / (b * (a + b)), (b - a) / (a * b), -b / (a * (a + b))
        rows = me * 2 + comp
        Gr += [rows, rows[inp], rows[inm]]
        Gc += [me, idx[ip[inp], jp[inp]], idx[im[inm], jm[inm]]]
        Gv += [g0, gp[inp], gm[inm]]
    L = sp.coo_matrix((np.concatenate(Lv + [diag]), (np.concatenate(Lr + [np.arange(n)]), np.concatenate(Lc + [np.arange(n)]))),
                      shape=(n, n)).tocsr()
    G = sp.coo_matrix((np.concatenate(Gv), (np.concatenate(Gr), np.concatenate(Gc))), shape=(2 * n, n)).tocsr()
    return L, G


def _interior_mask(grid: GridModel, reach: int = 1) -> np.ndarray:
    """Inside nodes whose axis neighbours up to ``reach`` steps away are inside too."""
    a = grid.inside
    m = a.copy()
    for k in range(1, reach + 1):
        shifted = np.zeros_like(a)
        shifted[k:-k, :] = a[2 * k:, :] & a[:-2 * k, :]
        m &= shifted
        shifted = np.zeros_like(a)
        shifted[:, k:-k] = a[:, 2 * k:] & a[:, :-2 * k]
        m &= shifted
    return m


def _central_div(grid: GridModel, F: np.ndarray) -> np.ndarray:
    """``d_1 F_1 + d_2 F_2`` by central differences at every node with a full stencil (NaN elsewhere)."""
    d = grid.spacing
    out = np.full(F.shape[:2], np.nan)
    out[1:-1, 1:-1] = ((F[2:, 1:-1, 0] - F[:-2, 1:-1, 0]) + (F[1:-1, 2:, 1] - F[1:-1, :-2, 1])) / (2 * d)
    return out


def _samples_all_nodes(f: TensorField, grid: GridModel) -> np.ndarray:
    if isinstance(f, GridField):
        if f.grid != grid:
            raise ContractError("grid field lives on a different grid")
        return f.samples
    return f.values(grid.nodes.reshape(-1, 2)).reshape(grid.N, grid.N, 2)


def solenoidal_decompose(g: MetricField, grid: GridModel, f: TensorField) -> Decomposition:
    """Split a one-form as ``f = f_s + dp`` with ``p = 0`` on the circle.

    ``p`` solves the Dirichlet Poisson problem ``Lap p = d_1 f_1 + d_2 f_2``
    with a Shortley-Weller five-point stencil (the circle is placed at its
    true distance between nodes).  The conformal factor cancels between
    ``div_g`` and ``Lap_g`` for one-forms, so ``g`` only enters the
    reported residual.  ``f`` is sampled on all nodes so that the divergence
    stencil is central everywhere inside the disk.
    """
    if f.rank != 1:
        raise ContractError("decomposition implemented for one-forms")
    F = _samples_all_nodes(f, grid)
    div = _central_div(grid, F)
    if np.isnan(div[grid.inside]).any():
        raise ContractError("grid must extend at least one node beyond the disk")
    L, G = _sw_operators(grid)
    p = spsolve(L.tocsc(), div[grid.inside])
    if not np.all(np.isfinite(p)):
        raise ConvergenceError("Poisson solve failed")
    return _finish(g, grid, F, p, G @ p, "poisson")


def projection_decompose(g: MetricField, grid: GridModel, f: TensorField) -> Decomposition:
    """Discrete orthogonal projection onto central-difference gradients.

    ``p`` minimises ``|f - G p|_V`` over potentials supported on
    :func:`potential_gradient_matrix` nodes, so ``f_s`` is exactly
    orthogonal to every discrete gradient (first order at the boundary).
    """
    if f.rank != 1:
        raise ContractError("decomposition implemented for one-forms")
    F = _samples_all_nodes(f, grid)
    N = grid.N
    G, mask = potential_gradient_matrix(grid)
    Vw = grid.dof_weights(g, 1) * grid.inside_dofs(1)
    u = F[grid.active].reshape(-1)
    A = (G.T @ sp.diags(Vw) @ G).tocsc()
    pm = spsolve(A, G.T @ (Vw * u))
    pfull = np.zeros((grid.N, grid.N))
    pfull[mask] = pm
    dp = np.zeros((N, N, 2))
    dp[grid.active] = (G @ pm).reshape(-1, 2)
    return _finish(g, grid, F, pfull[grid.inside], dp[grid.inside].reshape(-1), "projection")


def _finish(g, grid, F, p_inside, grad_inside, method) -> Decomposition:
    N = grid.N
    P = np.zeros((N, N))
    P[grid.inside] = p_inside
    dP = np.zeros((N, N, 2))
    dP[grid.inside] = grad_inside.reshape(-1, 2)
    Fs = np.zeros((N, N, 2))
    Fs[grid.inside] = F[grid.inside] - dP[grid.inside]
    # fixed interior disk: the near-boundary layer of the Dirichlet solve converges at a lower rate
    r = np.linalg.norm(grid.nodes, axis=-1)
    interior = _interior_mask(grid, reach=2) & (r <= DIV_REGION * grid.radius)
    div = _central_div(grid, Fs)[interior] / g.conformal_factor(grid.nodes[interior])
    res = float(np.sqrt(np.sum(div**2) * grid.cell_area))
    return Decomposition(GridField(1, grid, Fs), GridField(0, grid, P), GridField(1, grid, dP), res, method)


def decomposition_error(g: MetricField, grid: GridModel, dec: Decomposition, solenoidal_truth: TensorField) -> float:
    """Relative L2 error of the recovered solenoidal part over the nodes inside the disk."""
    return l2_norm(g, grid, dec.solenoidal - solenoidal_truth) / l2_norm(g, grid, solenoidal_truth)


def harmonic_residual(g: MetricField, grid: GridModel, p) -> float:
    """2-norm of the five-point Laplacian of ``p`` over nodes whose stencil stays inside the disk."""
    if isinstance(p, GridField):
        P = p.samples
    elif isinstance(p, TensorField):
        P = p.values(grid.nodes.reshape(-1, 2)).reshape(grid.N, grid.N)
    else:
        P = np.asarray(p, dtype=float)
    d = grid.spacing
    lap = np.full(P.shape, np.nan)
    lap[1:-1, 1:-1] = (P[2:, 1:-1] + P[:-2, 1:-1] + P[1:-1, 2:] + P[1:-1, :-2] - 4 * P[1:-1, 1:-1]) / d**2
    return float(np.linalg.norm(lap[_interior_mask(grid)]))


# --- combined one-form reconstruction ---------------------------------------------

def reconstruct_oneform_combined(g: MetricField, grid: GridModel, data_I, data_perp, reg: float = 1e-8,
                                 tol: float = 1e-6, h: float = 1e-3, maxiter: int = 5000,
                                 operators: tuple[DiscreteOperator, DiscreteOperator] | None = None):
    """Recover a full one-form from its geodesic and transverse sinograms.

    Returns ``(GridField, LeastSquaresResult)``.  Pass prebuilt
    ``operators=(F_id, F_star)`` to skip assembly.
    """
    if not data_I.same_rays(data_perp):
        raise ContractError("the two sinograms must share the ray set")
    if not (data_I.is_scalar and data_perp.is_scalar):
        raise ContractError("scalar sinograms required")
    if operators is None:
        F_id, F_star = assemble_many(g, [Mixing.identity(1), mixing_for_mixed(1, 0, g)], grid,
                                     (data_I.betas, data_I.alphas), h)
    else:
        F_id, F_star = operators
    stacked = stack_operators([F_id, F_star])
    res = solve_least_squares(stacked, np.concatenate([data_I.values, data_perp.values]), reg, tol, maxiter)
    return res.field(grid, 1), res
