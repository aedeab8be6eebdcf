"""Independent reference values for the frozen numbers in the test suite.

Uses scipy's adaptive DOP853 on the conformal geodesic equation, with the
line integrals carried as extra ODE states.  Nothing from mixray's
integrator or quadrature is used; only plain numpy/scipy.
"""
from __future__ import annotations

import json

import numpy as np
from scipy.integrate import solve_ivp


def conformal(kind: str, **p):
    if kind == "euclidean":
        return lambda x: 1.0, lambda x: np.zeros(2)
    if kind == "constant_curvature":
        k = p["kappa"]
        return (lambda x: 4.0 / (1 + k * (x @ x)) ** 2,
                lambda x: -16.0 * k * x / (1 + k * (x @ x)) ** 3)
    if kind == "exp_linear":
        a = np.asarray(p["a"], float)
        return lambda x: np.exp(2 * (x @ a)), lambda x: 2 * a * np.exp(2 * (x @ a))
    raise ValueError(kind)


def chord(c, dc, beta, alpha, integrands=(), R=1.0):
    """Return (tau, [integrals]) for the unit-speed geodesic entering at (beta, alpha)."""
    x0 = R * np.array([np.cos(beta), np.sin(beta)])
    n = -x0 / R
    d = np.cos(alpha) * n + np.sin(alpha) * np.array([-n[1], n[0]])
    v0 = d / np.sqrt(c(x0))

    def rhs(t, y):
        x, v = y[:2], y[2:4]
        cx, g = c(x), dc(x)
        # a^k = -(1/2c) (2 v^k (grad c . v) - |v|^2 d_k c)
        acc = -(2 * v * (g @ v) - (v @ v) * g) / (2 * cx)
        return np.concatenate([v, acc, [f(x, v) for f in integrands]])

    def leave(t, y):
        return y[0] ** 2 + y[1] ** 2 - R * R - 1e-14 if t > 1e-6 else -1.0

    leave.terminal, leave.direction = True, 1
    y0 = np.concatenate([x0, v0, np.zeros(len(integrands))])
    sol = solve_ivp(rhs, (0, 50), y0, method="DOP853", rtol=1e-13, atol=1e-14, events=leave)
    return float(sol.t_events[0][0]), [float(s) for s in sol.y_events[0][0][4:]]


def main() -> None:
    ydx = lambda x, v: x[1] * v[0]
    perp_dx = lambda x, v: -v[1]  # dx(star v), star v = (-v2, v1)
    # f = dx (x) dy + 0.5 x dy (x) dy under A_{1,1}: f(star v, v)
    mixed11 = lambda x, v: (-v[1]) * v[1] + 0.5 * x[0] * v[0] * v[1]
    out = {}
    c, dc = conformal("constant_curvature", kappa=-0.5)
    out["hyp_diameter_tau"] = chord(c, dc, np.pi, 0.0)[0]
    out["hyp_diameter_tau_closed_form"] = 4 * np.sqrt(2) * np.arctanh(1 / np.sqrt(2))
    tau, (i1, i2, i3) = chord(c, dc, 5 * np.pi / 6, np.pi / 6, (ydx, perp_dx, mixed11))
    out["hyp_chord"] = {"tau": tau, "I_ydx": i1, "Iperp_dx": i2, "L11_f": i3}
    c, dc = conformal("exp_linear", a=[0.3, 0.1])
    tau, (i1,) = chord(c, dc, np.pi / 3, -0.4, (ydx,))
    out["exp_linear_chord"] = {"tau": tau, "I_ydx": i1}
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
