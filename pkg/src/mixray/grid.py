"""Cartesian node grid over ``[-R, R]^2`` with the disk's interior nodes active."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class GridModel:
    """``N x N`` nodes over ``[-R, R]^2``.

    ``inside`` marks nodes strictly inside the disk (the quadrature set).
    DOFs live on ``active`` nodes: every corner of a cell that meets the
    open disk, so the bilinear interpolant is complete up to the circle.
    DOFs are laid out node-major: ``dof = active_index * 2**m + component``
    with components in lexicographic index order.
    """

    N: int
    radius: float = 1.0

    def __post_init__(self):
        if self.N < 3:
            raise ContractError("grid needs at least 3 nodes per axis")
        if not self.inside.any():
            raise ContractError("empty active set")

    @cached_property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.N - 1)

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.N)

    @cached_property
    def nodes(self) -> np.ndarray:
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @cached_property
    def inside(self) -> np.ndarray:
        r = np.linalg.norm(self.nodes, axis=-1)
        return r < self.radius * (1 - 1e-12)

    @cached_property
    def _cell_near_far(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.axis
        lo, hi = a[:-1], a[1:]
        near1 = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
        far1 = np.maximum(np.abs(lo), np.abs(hi))
        near = np.hypot(near1[:, None], near1[None, :])
        far = np.hypot(far1[:, None], far1[None, :])
        return near, far

    def _cell_nodes(self, cells: np.ndarray) -> np.ndarray:
        out = np.zeros((self.N, self.N), dtype=bool)
        for di in (0, 1):
            for dj in (0, 1):
                out[di:self.N - 1 + di, dj:self.N - 1 + dj] |= cells
        return out

    @cached_property
    def active(self) -> np.ndarray:
        near, _ = self._cell_near_far
        return self._cell_nodes(near < self.radius * (1 - 1e-12))

    @cached_property
    def active_index(self) -> np.ndarray:
        idx = np.full((self.N, self.N), -1, dtype=np.int64)
        idx[self.active] = np.arange(int(self.active.sum()))
        return idx

    @cached_property
    def active_nodes(self) -> np.ndarray:
        return self.nodes[self.active]

    @cached_property
    def inside_nodes(self) -> np.ndarray:
        return self.nodes[self.inside]

    @cached_property
    def inside_of_active(self) -> np.ndarray:
        """Boolean mask over active nodes selecting those inside the disk."""
        return self.inside[self.active]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def n_dofs(self, rank: int) -> int:
        return self.n_active * 2**rank

    def node_weights(self, g, rank: int) -> np.ndarray:
        """Per active node weight of the discrete L2 pairing: ``c^(1-m) * cell area``.

        One factor ``c`` is the volume density, ``c^-m`` the inverse metric on
        the ``m`` covariant slots.
        """
        c = g.conformal_factor(self.active_nodes)
        return c ** (1 - rank) * self.cell_area

    def dof_weights(self, g, rank: int) -> np.ndarray:
        return np.repeat(self.node_weights(g, rank), 2**rank)

    def inside_dofs(self, rank: int) -> np.ndarray:
        return np.repeat(self.inside_of_active, 2**rank)

    def bilinear(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Flat node indices ``(P, 4)`` and weights ``(P, 4)`` of the bilinear stencil.

        Points outside the disk get zero weights.
        """
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        u = (X + self.radius) / self.spacing
        i0 = np.clip(np.floor(u).astype(np.int64), 0, self.N - 2)
        fr = u - i0
        ix, iy = i0[:, 0], i0[:, 1]
        fx, fy = fr[:, 0], fr[:, 1]
        idx = np.stack([
            ix * self.N + iy,
            (ix + 1) * self.N + iy,
            ix * self.N + iy + 1,
            (ix + 1) * self.N + iy + 1,
        ], axis=1)
        w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
        outside = np.sum(X * X, axis=1) > self.radius**2
        w[outside] = 0.0
        return idx, w

    def boundary_band(self) -> np.ndarray:
        """Nodes of every cell that meets the boundary circle, plus all nodes not inside."""
        near, far = self._cell_near_far
        R = self.radius
        crossing = (near <= R) & (far >= R)
        return self._cell_nodes(crossing) | ~self.inside
