"""Conformal metrics on a disk, geodesic shooting and parallel transport.

All metrics are of the form ``g = c(x) * identity`` on the closed disk of a
given radius.  Geodesics are integrated with a fixed-step classical RK4
scheme; the boundary exit is refined by bisection on the length of the
final sub-step.  Ray tracing is vectorised over many rays at once.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable

import numpy as np

from .errors import ContractError, DomainError, NonTerminatingRayError

# rays closer than this to tangential entry are excluded from boundary grids
TANGENTIAL_EPS = 0.01
EXIT_TOL = 1e-12
_BISECTION_STEPS = 60
_FD_STEP = 1e-6

ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MIXRAY_THREADS", "1")))
    except ValueError:
        return 1


_THREADS = default_threads()


def set_threads(n: int) -> None:
    """Cap the number of worker threads used for ray tracing."""
    global _THREADS
    _THREADS = max(1, int(n))


def get_threads() -> int:
    return _THREADS


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ContractError(f"points must have a trailing axis of length 2, got {x.shape}")
    return x


@dataclass(frozen=True)
class MetricField:
    """Conformal metric ``c(x) * identity`` on the disk ``|x| <= radius``.

    ``kind`` is one of ``"euclidean"``, ``"constant_curvature"`` or
    ``"custom"``.  Constant curvature metrics use
    ``c(x) = 4 / (1 + kappa |x|^2)^2`` (Gaussian curvature ``kappa <= 0``).
    Custom metrics take a vectorised callable ``factor(X) -> c`` and an
    optional ``factor_grad(X) -> dc``; without the latter the gradient is
    taken by central differences.  Simplicity of custom metrics is not
    checked.
    """

    kind: str = "euclidean"
    kappa: float = 0.0
    radius: float = 1.0
    factor: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    factor_grad: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("radius must be positive")
        if self.kind == "constant_curvature":
            if self.kappa > 0:
                raise DomainError("constant_curvature metrics require kappa <= 0")
            if 1.0 + self.kappa * self.radius**2 <= 0:
                raise DomainError("1 + kappa * radius^2 must be positive")
        elif self.kind == "custom":
            if self.factor is None:
                raise ContractError("custom metric needs a conformal factor callable")
        elif self.kind != "euclidean":
            raise ContractError(f"unknown metric kind {self.kind!r}")

    @classmethod
    def euclidean(cls, radius: float = 1.0) -> "MetricField":
        return cls("euclidean", 0.0, radius)

    @classmethod
    def constant_curvature(cls, kappa: float, radius: float = 1.0) -> "MetricField":
        return cls("constant_curvature", float(kappa), radius)

    @classmethod
    def custom(cls, factor, factor_grad=None, radius: float = 1.0, label: str = "") -> "MetricField":
        return cls("custom", 0.0, radius, factor, factor_grad, label)

    @property
    def is_flat(self) -> bool:
        return self.kind == "euclidean"

    def describe(self) -> dict:
        out = {"kind": self.kind, "radius": self.radius}
        if self.kind == "constant_curvature":
            out["kappa"] = self.kappa
        if self.label:
            out["label"] = self.label
        return out

    # vectorised primitives; no domain checks so integrators may step slightly outside
    def conformal_factor(self, x) -> np.ndarray:
        x = _points(x)
        if self.kind == "euclidean":
            return np.ones(x.shape[:-1])
        if self.kind == "constant_curvature":
            r2 = np.sum(x * x, axis=-1)
            return 4.0 / (1.0 + self.kappa * r2) ** 2
        return np.asarray(self.factor(x), dtype=float)

    def factor_gradient(self, x) -> np.ndarray:
        x = _points(x)
        if self.kind == "euclidean":
            return np.zeros(x.shape)
        if self.kind == "constant_curvature":
            r2 = np.sum(x * x, axis=-1)[..., None]
            return -16.0 * self.kappa * x / (1.0 + self.kappa * r2) ** 3
        if self.factor_grad is not None:
            return np.asarray(self.factor_grad(x), dtype=float)
        out = np.empty(x.shape)
        for j in range(2):
            e = np.zeros(2)
            e[j] = _FD_STEP
            out[..., j] = (self.factor(x + e) - self.factor(x - e)) / (2 * _FD_STEP)
        return out

    def grad_log_factor(self, x) -> np.ndarray:
        x = _points(x)
        if self.kind == "euclidean":
            return np.zeros(x.shape)
        if self.kind == "constant_curvature":
            r2 = (x[..., 0] * x[..., 0] + x[..., 1] * x[..., 1])[..., None]
            return (-4.0 * self.kappa) * x / (1.0 + self.kappa * r2)
        return self.factor_gradient(x) / self.conformal_factor(x)[..., None]

    def check_domain(self, x, slack: float = 1e-12) -> np.ndarray:
        x = _points(x)
        if np.any(np.linalg.norm(x, axis=-1) > self.radius * (1 + slack)):
            raise DomainError("point outside the closed disk")
        return x

    def norm(self, x, v) -> np.ndarray:
        """Length of tangent vectors ``v`` at ``x`` in the metric."""
        c = self.conformal_factor(x)
        return np.sqrt(c * np.sum(np.asarray(v) ** 2, axis=-1))


def metric_eval(g: MetricField, x) -> np.ndarray:
    """Metric matrix ``c(x) I`` at a point (or stack of points)."""
    x = g.check_domain(x)
    c = g.conformal_factor(x)
    return c[..., None, None] * np.eye(2)


def christoffel(g: MetricField, x) -> np.ndarray:
    """Christoffel symbols ``G[..., i, j, k]`` of the second kind.

    ``G^i_jk = (d_j c delta_ik + d_k c delta_ij - delta_jk d_i c) / (2c)``.
    """
    x = _points(x)
    if np.any(np.linalg.norm(x, axis=-1) > g.radius * (1 + 1e-6)):
        raise DomainError("christoffel symbols requested outside the disk")
    half = 0.5 * g.grad_log_factor(x)
    a, b = half[..., 0], half[..., 1]
    gam = np.empty(x.shape[:-1] + (2, 2, 2))
    gam[..., 0, 0, 0] = a
    gam[..., 0, 0, 1] = gam[..., 0, 1, 0] = b
    gam[..., 0, 1, 1] = -a
    gam[..., 1, 0, 0] = -b
    gam[..., 1, 0, 1] = gam[..., 1, 1, 0] = a
    gam[..., 1, 1, 1] = b
    return gam


def hodge_star(g: MetricField, x, v) -> np.ndarray:
    """Counter-clockwise quarter turn of tangent vectors.

    For a conformal metric the Cartesian frame is a rescaled orthonormal
    frame, so the rotation acts on Cartesian components directly.
    """
    g.check_domain(x)
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class RayCoordinate:
    """Inward unit vector at the boundary point ``radius * (cos beta, sin beta)``.

    ``alpha`` is measured counter-clockwise from the inward normal.
    """

    beta: float
    alpha: float


def entry_state(g: MetricField, beta, alpha) -> tuple[np.ndarray, np.ndarray]:
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(np.abs(alpha) >= np.pi / 2):
        raise DomainError("tangential or outward entry direction")
    normal = -np.stack([np.cos(beta), np.sin(beta)], axis=-1)
    x0 = -g.radius * normal
    ca, sa = np.cos(alpha)[..., None], np.sin(alpha)[..., None]
    d = ca * normal + sa * (normal @ ROTATION.T)
    v0 = d / np.sqrt(g.conformal_factor(x0))[..., None]
    return x0, v0


def boundary_grid(n_beta: int, n_alpha: int, eps: float = TANGENTIAL_EPS) -> list[RayCoordinate]:
    """Uniform fan-beam grid of inward directions, beta-major."""
    if n_beta < 1 or n_alpha < 1:
        raise ContractError("grid sizes must be positive")
    betas, alphas = grid_angles(n_beta, n_alpha, eps)
    return [RayCoordinate(float(b), float(a)) for b, a in zip(betas, alphas)]


def grid_angles(n_beta: int, n_alpha: int, eps: float = TANGENTIAL_EPS) -> tuple[np.ndarray, np.ndarray]:
    b = 2 * np.pi * np.arange(n_beta) / n_beta
    a = -np.pi / 2 + eps + (np.pi - 2 * eps) * (np.arange(n_alpha) + 0.5) / n_alpha
    bb, aa = np.meshgrid(b, a, indexing="ij")
    return bb.ravel(), aa.ravel()


def ray_arrays(rays) -> tuple[np.ndarray, np.ndarray]:
    """Accept a sequence of RayCoordinate or a ``(betas, alphas)`` pair."""
    if isinstance(rays, RayCoordinate):
        rays = [rays]
    if isinstance(rays, tuple) and len(rays) == 2 and not isinstance(rays[0], RayCoordinate):
        return np.atleast_1d(np.asarray(rays[0], float)), np.atleast_1d(np.asarray(rays[1], float))
    rays = list(rays)
    if not rays:
        raise ContractError("empty ray list")
    return np.array([r.beta for r in rays]), np.array([r.alpha for r in rays])


# --- integrator -----------------------------------------------------------

def _rhs(g: MetricField, x, v, W):
    if g.is_flat:
        return v, np.zeros_like(v), (None if W is None else np.zeros_like(W))
    ell = g.grad_log_factor(x)
    lv = (ell[..., 0] * v[..., 0] + ell[..., 1] * v[..., 1])[..., None]
    vv = (v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1])[..., None]
    a = 0.5 * vv * ell - v * lv
    dW = None
    if W is not None:
        # columns of W are transported vectors
        lw = np.einsum("pi,pik->pk", ell, W)[:, None, :]
        vw = np.einsum("pi,pik->pk", v, W)[:, None, :]
        dW = -0.5 * (v[:, :, None] * lw + W * lv[:, :, None] - vw * ell[:, :, None])
    return v, a, dW


def rk4_step(g: MetricField, x, v, W, s):
    """One classical RK4 step of size ``s`` (scalar or per-ray array)."""
    s = np.asarray(s, dtype=float)
    sv = s[..., None] if s.ndim else s
    sW = s[..., None, None] if s.ndim else s
    k1x, k1v, k1w = _rhs(g, x, v, W)
    k2x, k2v, k2w = _rhs(g, x + 0.5 * sv * k1x, v + 0.5 * sv * k1v,
                         None if W is None else W + 0.5 * sW * k1w)
    k3x, k3v, k3w = _rhs(g, x + 0.5 * sv * k2x, v + 0.5 * sv * k2v,
                         None if W is None else W + 0.5 * sW * k2w)
    k4x, k4v, k4w = _rhs(g, x + sv * k3x, v + sv * k3v,
                         None if W is None else W + sW * k3w)
    xn = x + sv / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v + sv / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    Wn = None if W is None else W + sW / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    return xn, vn, Wn


@dataclass
class RayTrace:
    """Samples of a batch of geodesics.

    ``x[k, p]`` is the state at ``t = k h`` for ``k <= n[p]``; rows beyond
    ``n[p]`` repeat the last interior sample.  The exit state at ``tau[p]``
    is stored separately.  ``W`` holds transported frames (columns) when
    requested.
    """

    h: float
    x: np.ndarray
    v: np.ndarray
    n: np.ndarray
    tau: np.ndarray
    x_exit: np.ndarray
    v_exit: np.ndarray
    W: np.ndarray | None = None
    W_exit: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.n.shape[0]

    @cached_property
    def quadrature_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``(w_samples[S+1, P], w_exit[P])`` so that the line integral of
        ``q`` is ``sum_k w[k, p] q[k, p] + w_exit[p] q_exit[p]``."""
        S = self.x.shape[0]
        w = np.zeros((S, self.size))
        w_exit = np.zeros(self.size)
        for p in range(self.size):
            n = int(self.n[p])
            w[: n + 1, p] = _composite_weights(n) * self.h
            delta = self.tau[p] - n * self.h
            # trapezoid closing segment of exact length
            w[n, p] += 0.5 * delta
            w_exit[p] = 0.5 * delta
        return w, w_exit


_WEIGHT_CACHE: dict[int, np.ndarray] = {}


def _composite_weights(n: int) -> np.ndarray:
    """Unit-step weights on ``n + 1`` equispaced nodes (Simpson, 3/8 tail)."""
    w = _WEIGHT_CACHE.get(n)
    if w is not None:
        return w
    w = np.zeros(n + 1)
    if n == 1:
        w[:] = 0.5
    elif n >= 2:
        m = n if n % 2 == 0 else n - 3
        if m > 0:
            w[0:m + 1:2] += 2.0 / 3.0
            w[1:m:2] += 4.0 / 3.0
            w[0] -= 1.0 / 3.0
            w[m] -= 1.0 / 3.0
        if n % 2 == 1:
            w[m:m + 4] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    _WEIGHT_CACHE[n] = w
    return w


def trace_states(g: MetricField, x0, v0, h: float, *, transport: bool = False,
                 max_length: float | None = None) -> RayTrace:
    """Integrate geodesics from the given states until they leave the disk."""
    if not h > 0:
        raise ContractError("step must be positive")
    x = np.array(x0, dtype=float).reshape(-1, 2)
    v = np.array(v0, dtype=float).reshape(-1, 2)
    P = x.shape[0]
    R = g.radius
    max_length = 100.0 * R if max_length is None else max_length
    W = np.tile(np.eye(2), (P, 1, 1)) if transport else None

    xs, vs, Ws = [x.copy()], [v.copy()], ([W.copy()] if transport else None)
    n = np.zeros(P, dtype=int)
    alive = np.arange(P)
    step = 0
    while alive.size:
        if (step + 1) * h > max_length:
            raise NonTerminatingRayError(
                f"{alive.size} ray(s) still inside after length {max_length}")
        xa, va = x[alive], v[alive]
        Wa = W[alive] if transport else None
        xn, vn, Wn = rk4_step(g, xa, va, Wa, h)
        inside = np.sum(xn * xn, axis=-1) <= R * R
        stay = alive[inside]
        n[alive[~inside]] = step
        x[stay], v[stay] = xn[inside], vn[inside]
        if transport:
            W[stay] = Wn[inside]
        alive = stay
        step += 1
        if alive.size:
            xs.append(x.copy())
            vs.append(v.copy())
            if transport:
                Ws.append(W.copy())

    # x, v, W now hold the last interior state of every ray
    lo = np.zeros(P)
    hi = np.full(P, h)
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        xm, _, _ = rk4_step(g, x, v, None, mid)
        ok = np.sum(xm * xm, axis=-1) <= R * R
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    s = 0.5 * (lo + hi)
    x_exit, v_exit, W_exit = rk4_step(g, x, v, W, s)
    return RayTrace(
        h=h,
        x=np.stack(xs),
        v=np.stack(vs),
        n=n,
        tau=n * h + s,
        x_exit=x_exit,
        v_exit=v_exit,
        W=np.stack(Ws) if transport else None,
        W_exit=W_exit,
    )


_CHUNK_BYTES = 320e6


def diameter_length(g: MetricField, samples: int = 401) -> float:
    """Metric length of the horizontal diameter (a cheap chord-length scale)."""
    r = np.linspace(-g.radius, g.radius, samples)
    c = g.conformal_factor(np.stack([r, np.zeros_like(r)], axis=-1))
    return float(np.trapezoid(np.sqrt(c), r))


def auto_chunk(g: MetricField, h: float, transport: bool = False) -> int:
    steps = 1.5 * diameter_length(g) / h + 2
    per_ray = steps * (4 + (4 if transport else 0)) * 8
    return int(np.clip(_CHUNK_BYTES / per_ray, 16, 2048))


def trace_rays(g: MetricField, rays, h: float, *, transport: bool = False,
               chunk: int | None = None, max_length: float | None = None) -> Iterable[tuple[slice, RayTrace]]:
    """Trace boundary rays in chunks; yields ``(slice, RayTrace)`` in ray order.

    The default chunk keeps each stored trace near ``_CHUNK_BYTES``.
    """
    betas, alphas = ray_arrays(rays)
    x0, v0 = entry_state(g, betas, alphas)
    P = betas.size
    if chunk is None:
        chunk = auto_chunk(g, h, transport)
    slices = [slice(i, min(i + chunk, P)) for i in range(0, P, chunk)]

    def run(sl):
        return sl, trace_states(g, x0[sl], v0[sl], h, transport=transport, max_length=max_length)

    if _THREADS > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=_THREADS) as pool:
            # map keeps submission order, so output is deterministic
            yield from pool.map(run, slices)
    else:
        for sl in slices:
            yield run(sl)


@dataclass
class GeodesicRay:
    """A single traced geodesic with samples ``(t, x(t), v(t))`` on ``[0, tau]``."""

    entry: RayCoordinate | None
    h: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    tau: float


def _single(trace: RayTrace, entry) -> GeodesicRay:
    n = int(trace.n[0])
    t = np.append(np.arange(n + 1) * trace.h, trace.tau[0])
    x = np.vstack([trace.x[: n + 1, 0], trace.x_exit[:1]])
    v = np.vstack([trace.v[: n + 1, 0], trace.v_exit[:1]])
    return GeodesicRay(entry, trace.h, t, x, v, float(trace.tau[0]))


def shoot_geodesic(g: MetricField, entry: RayCoordinate, h: float = 1e-3,
                   max_length: float | None = None) -> GeodesicRay:
    """Shoot the unit-speed geodesic from a boundary coordinate to its exit."""
    if not abs(entry.alpha) < np.pi / 2:
        raise DomainError("tangential entry direction")
    x0, v0 = entry_state(g, entry.beta, entry.alpha)
    return _single(trace_states(g, x0, v0, h, max_length=max_length), entry)


def shoot_from(g: MetricField, x, v, h: float = 1e-3, max_length: float | None = None) -> GeodesicRay:
    """Shoot forward from an arbitrary state inside the disk."""
    g.check_domain(x, slack=1e-9)
    return _single(trace_states(g, x, v, h, max_length=max_length), None)


def parallel_transport(g: MetricField, ray: GeodesicRay, w0, t) -> np.ndarray:
    """Transport ``w0`` (a vector at ``ray.x[0]``) to time(s) ``t`` along the ray.

    The geodesic is re-integrated jointly with the transport equation with
    the ray's own step, finishing with a partial step at each requested time.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0) or np.any(ts > ray.tau * (1 + 1e-12)):
        raise DomainError("transport time outside [0, tau]")
    w0 = np.asarray(w0, dtype=float)
    order = np.argsort(ts)
    out = np.empty((ts.size, 2))
    x, v = ray.x[:1].copy(), ray.v[:1].copy()
    W = np.eye(2)[None]
    clock = 0.0
    k = 0
    for idx in order:
        target = ts[idx]
        while (k + 1) * ray.h <= target:
            x, v, W = rk4_step(g, x, v, W, ray.h)
            k += 1
            clock = k * ray.h
        xs, vs, Ws = rk4_step(g, x, v, W, target - clock)
        out[idx] = Ws[0] @ w0
    return out[0] if np.ndim(t) == 0 else out


def unit_speed_drift(g: MetricField, trace: RayTrace) -> float:
    """Largest ``| |v|_g - 1 |`` over all valid samples of a trace."""
    worst = 0.0
    speed = g.norm(trace.x, trace.v)
    for p in range(trace.size):
        worst = max(worst, float(np.max(np.abs(speed[: trace.n[p] + 1, p] - 1.0))))
    exit_speed = g.norm(trace.x_exit, trace.v_exit)
    return max(worst, float(np.max(np.abs(exit_speed - 1.0))))
