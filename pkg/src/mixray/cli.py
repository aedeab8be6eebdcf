"""Command-line front end: ``mixray {sinogram,reconstruct,verify,reduce,decompose}``."""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, load
from .errors import (
    ConditioningError,
    ContractError,
    ConvergenceError,
    DomainError,
    NonTerminatingRayError,
    StencilError,
)
from .fields import hodge_test_parts, make_field, make_metric, make_mixing, transform_mixing
from .geometry import grid_angles, set_threads
from .grid import GridModel

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
_NUMERIC = (ConditioningError, ConvergenceError, StencilError, NonTerminatingRayError, DomainError,
            FloatingPointError, np.linalg.LinAlgError)
# dense sigma_min probes above this many unknowns are skipped in CLI reports
PROBE_LIMIT = 4000


def _rays(cfg: ExperimentConfig):
    return grid_angles(cfg.rays.n_beta, cfg.rays.n_alpha)


def _out(cfg: ExperimentConfig, override: str | None) -> Path:
    path = Path(override or cfg.output.dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _summary(cfg: ExperimentConfig) -> dict:
    return {k: cfg.as_dict()[k] for k in ("metric", "field", "transform", "rays", "grid", "seed")}


# --- subcommands -----------------------------------------------------------------

def cmd_sinogram(cfg: ExperimentConfig, out: Path) -> int:
    from .tensors import mixing_for_mixed
    from .transforms import sinograms

    g = make_metric(cfg.metric)
    f = make_field(cfg.field, g, cfg.seed)
    kind = cfg.transform.get("kind", "geodesic")
    if kind == "combined":
        if f.rank != 1:
            raise ContractError("combined sinograms need a one-form")
        jobs = {"geodesic": None, "transverse": mixing_for_mixed(1, 0, g)}
    else:
        jobs = {kind: transform_mixing(cfg.transform, g, f.rank)}
    sinos = sinograms(g, [(A, f) for A in jobs.values()], _rays(cfg), cfg.rays.h)
    report = {"config": _summary(cfg), "outputs": {}}
    for (name, _), s in zip(jobs.items(), sinos):
        if not np.all(np.isfinite(s.values)):
            raise FloatingPointError("non-finite sinogram values")
        stem = "sinogram" if len(jobs) == 1 else f"sinogram_{name}"
        s.metadata["transform"] = name
        io.write_sinogram(out / f"{stem}.csv", s)
        entry = {"csv": f"{stem}.csv", "rows": len(s), "max_abs": float(np.max(np.abs(s.values)))}
        if cfg.output.svg and io.heatmap_svg(out / f"{stem}.svg", s, cfg.rays.n_beta, cfg.rays.n_alpha, stem):
            entry["svg"] = f"{stem}.svg"
        report["outputs"][name] = entry
    io.write_json(out / "sinogram.json", report)
    return EXIT_OK


def _probe(F, Q=None) -> dict:
    from .reduction import stability_probe

    dim = F.shape[1] if Q is None else Q.shape[1]
    if dim > PROBE_LIMIT:
        return {"sigma_min": None, "note": f"skipped: {dim} unknowns exceed the dense probe limit {PROBE_LIMIT}"}
    return stability_probe(F, Q).as_dict()


def cmd_reconstruct(cfg: ExperimentConfig, out: Path) -> int:
    from .inversion import (
        assemble_many,
        h1_surrogate_norm,
        reconstruct_oneform_combined,
        relative_error,
        solve_least_squares,
        stack_operators,
    )
    from .reduction import inside_restriction
    from .tensors import GridField, Mixing, mixing_for_mixed
    from .transforms import sinograms

    g = make_metric(cfg.metric)
    f = make_field(cfg.field, g, cfg.seed)
    grid = GridModel(cfg.grid.N, g.radius)
    rays = _rays(cfg)
    h = cfg.rays.h
    kind = cfg.transform.get("kind", "geodesic")
    if kind == "combined":
        if f.rank != 1:
            raise ContractError("combined reconstruction needs a one-form")
        perp = mixing_for_mixed(1, 0, g)
        ops = assemble_many(g, [Mixing.identity(1), perp], grid, rays, h)
        # data from the analytic field at half the assembly step
        d_I, d_perp = sinograms(g, [(None, f), (perp, f)], rays, h / 2)
        rec, res = reconstruct_oneform_combined(g, grid, d_I, d_perp, cfg.grid.reg, cfg.grid.tol,
                                                h, cfg.grid.maxiter, operators=ops)
        F = stack_operators(list(ops))
    else:
        A = transform_mixing(cfg.transform, g, f.rank)
        (F,) = assemble_many(g, [A], grid, rays, h)
        (data,) = sinograms(g, [(A, f)], rays, h / 2)
        res = solve_least_squares(F, data.values, cfg.grid.reg, cfg.grid.tol, cfg.grid.maxiter)
        rec = res.field(grid, f.rank)
    if not np.all(np.isfinite(res.coeffs)):
        raise FloatingPointError("non-finite reconstruction")
    truth = GridField.sample(f, grid).coefficients()
    err = relative_error(grid, g, f.rank, rec.coefficients(), truth) if np.any(truth) else None
    h1_err = None
    if err is not None:
        sampled = GridField.sample(f, grid)
        diff = GridField(f.rank, grid, rec.samples - sampled.samples)
        h1_err = h1_surrogate_norm(g, diff) / h1_surrogate_norm(g, sampled)
    io.write_grid_field(out / "reconstruction.csv", rec)
    report = {
        "config": _summary(cfg),
        "relative_error": err,
        # central-difference stand-in for an H1 norm; informational only
        "h1_surrogate_error": h1_err,
        "iterations": res.iterations,
        "residual": res.residual,
        "converged": res.converged,
        "reg_weight": res.reg,
        "sigma_min": _probe(F, inside_restriction(grid, f.rank)),
        "csv": "reconstruction.csv",
    }
    io.write_json(out / "reconstruct.json", report)
    return EXIT_OK


def cmd_reduce(cfg: ExperimentConfig, out: Path) -> int:
    import scipy.sparse as sp

    from .inversion import assemble_many, mixing_matrix
    from .reduction import (
        build_pair,
        kernel_basis,
        kernel_split,
        stability_probe,
        subspace_residual,
        transfer_normal,
    )
    from .tensors import apply_mixing, lambda_eval, symmetrize_array

    g = make_metric(cfg.metric)
    A, At = make_mixing(list(cfg.reduce.A), g), make_mixing(list(cfg.reduce.A_tilde), g)
    pair = build_pair(A, At)
    rng = np.random.default_rng(cfg.seed)
    f = make_field(cfg.field, g, cfg.seed)
    if f.rank != A.degree:
        raise ContractError("field rank must match the mixing degree")

    # pointwise kernel split
    r = g.radius * 0.95 * np.sqrt(rng.uniform(size=500))
    t = rng.uniform(0, 2 * np.pi, size=500)
    X = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    hpart, w = kernel_split(pair, f)
    fv = f.values(X)
    scale = 1.0 + float(np.max(np.abs(fv)))
    recon = float(np.max(np.abs(hpart.values(X) + apply_mixing(pair.D, w).values(X) - fv))) / scale
    v = rng.normal(size=X.shape)
    annih = float(np.max(np.abs(lambda_eval(apply_mixing(A, hpart), X, v)))) / scale
    Atw = apply_mixing(At, w).values(X)
    sym = float(np.max(np.abs(Atw - symmetrize_array(Atw)))) / scale

    # discrete normal operators
    grid = GridModel(cfg.grid.N, g.radius)
    F_A, F_At = assemble_many(g, [A, At], grid, _rays(cfg), cfg.rays.h)
    worst = 0.0
    for _ in range(cfg.reduce.n_vectors):
        u = rng.normal(size=F_A.shape[1])
        diff = F_A.normal(u) - transfer_normal(pair, F_At, u)
        worst = max(worst, math.sqrt(F_A.field_inner(diff, diff) / F_A.field_inner(u, u)))

    report = {
        "config": _summary(cfg),
        "pair": pair.describe(),
        "composition_check": pair.check_residual,
        "reconstitution_residual": recon,
        "kernel_residuals": {"h_annihilated": annih, "w_symmetric": sym},
        "normal_identity_residual": worst,
    }
    if cfg.reduce.probe != "none":
        if F_A.shape[1] > PROBE_LIMIT:
            note = f"skipped: {F_A.shape[1]} unknowns exceed the dense probe limit {PROBE_LIMIT}"
            report["sigma_min"] = {"A": {"sigma_min": None, "note": note}, "A_tilde": {"sigma_min": None, "note": note}}
        else:
            report["sigma_min"] = {"A": stability_probe(F_A, method=cfg.reduce.probe).as_dict(),
                                   "A_tilde": stability_probe(F_At, method=cfg.reduce.probe).as_dict()}
        if F_A.shape[1] <= 1500:
            eye = sp.eye(F_A.shape[1], format="csr")
            K_A, _ = kernel_basis(F_A, eye)
            K_At, _ = kernel_basis(F_At, eye)
            report["kernel_transfer"] = {
                "dims": [int(K_A.shape[1]), int(K_At.shape[1])],
                "residual": subspace_residual(mixing_matrix(grid, pair.D) @ K_At, K_A, F_A.V),
            }
    io.write_json(out / "reduce.json", report)
    return EXIT_OK


def cmd_decompose(cfg: ExperimentConfig, out: Path) -> int:
    from .inversion import decomposition_error, projection_decompose, solenoidal_decompose
    from .tensors import l2_inner, l2_norm

    g = make_metric(cfg.metric)
    f = make_field(cfg.field, g, cfg.seed)
    if f.rank != 1:
        raise ContractError("decomposition needs a one-form field")
    truth = hodge_test_parts(g)[0] if cfg.field.get("name") == "curl_plus_potential" else None
    solve = solenoidal_decompose if cfg.decompose.method == "poisson" else projection_decompose
    rows = []
    dec = None
    for N in cfg.decompose.sizes:
        grid = GridModel(N, g.radius)
        dec = solve(g, grid, f)
        ns, np_ = l2_norm(g, grid, dec.solenoidal), l2_norm(g, grid, dec.gradient)
        ortho = abs(l2_inner(g, grid, dec.solenoidal, dec.gradient)) / (ns * np_) if ns * np_ > 0 else 0.0
        outside = ~grid.inside
        rows.append({
            "N": N,
            "cell": grid.spacing,
            "div_residual": dec.div_residual,
            "orthogonality": ortho,
            "p_max_off_disk": float(np.max(np.abs(dec.potential.samples[outside]))),
            "recovery_error": None if truth is None else decomposition_error(g, grid, dec, truth),
        })
    ratios = {}
    for key in ("div_residual", "recovery_error"):
        vals = [r[key] for r in rows]
        if all(v is not None and v > 0 for v in vals):
            ratios[key] = [vals[i] / vals[i + 1] for i in range(len(vals) - 1)]
    report = {"config": _summary(cfg), "method": cfg.decompose.method, "levels": rows, "ratios": ratios,
              "csv": "solenoidal.csv"}
    io.write_grid_field(out / "solenoidal.csv", dec.solenoidal)
    if cfg.output.svg and len(rows) > 1:
        series = {"div residual": [r["div_residual"] for r in rows]}
        if truth is not None:
            series["recovery error"] = [r["recovery_error"] for r in rows]
        io.line_plot_svg(out / "decompose.svg", [r["cell"] for r in rows], series, "cell size", "value")
        report["svg"] = "decompose.svg"
    io.write_json(out / "decompose.json", report)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    from .verify import configured_pair_from, run_suite

    g = make_metric(cfg.metric)
    pair = configured_pair_from(list(cfg.reduce.A), list(cfg.reduce.A_tilde), g)
    report = run_suite(g, seed=cfg.seed, h=cfg.rays.h, ranks=tuple(cfg.verify.ranks),
                       n_points=cfg.verify.n_points, n_rays=cfg.verify.n_rays, n_pairs=cfg.verify.n_pairs,
                       configured_pair=pair)
    io.write_json(out / "verify.json", report)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} residual={c['residual']:.3e} tol={c['tolerance']:.0e}")
    return EXIT_OK if report["passed"] else EXIT_INVARIANT


COMMANDS = {
    "sinogram": cmd_sinogram,
    "reconstruct": cmd_reconstruct,
    "verify": cmd_verify,
    "reduce": cmd_reduce,
    "decompose": cmd_decompose,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixray", description="Mixing ray transforms on conformal disks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, help="worker cap (fallback: MIXRAY_THREADS)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads if args.threads is not None else int(os.environ.get("MIXRAY_THREADS", "1"))
        if threads < 1:
            raise ConfigError("thread count must be at least 1")
        set_threads(threads)
        cfg = load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg = ExperimentConfig(**{**cfg.__dict__, "seed": args.seed})
        out = _out(cfg, args.out)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, ContractError, ValueError) as exc:
        if isinstance(exc, _NUMERIC):
            print(f"numeric error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
