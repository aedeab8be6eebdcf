"""CSV, JSON and SVG output. All writers are byte-deterministic."""
from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ContractError
from .grid import GridModel
from .tensors import GridField
from .transforms import Sinogram


def _fmt(x: float) -> str:
    return repr(float(x))


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isfinite(x):
            return x
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def component_labels(rank: int) -> list[str]:
    return ["f_" + "".join(str(i + 1) for i in idx) for idx in itertools.product(range(2), repeat=rank)]


# --- sinograms ------------------------------------------------------------------

def write_sinogram(path, sino: Sinogram) -> Path:
    """``#`` metadata lines, then ``beta,alpha,tau,value...``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vals = sino.values.reshape(len(sino), -1)
    names = ["value"] if sino.is_scalar else ["value_" + lab[2:] for lab in component_labels(sino.values.ndim - 1)]
    with path.open("w", newline="") as fh:
        for key in sorted(sino.metadata):
            fh.write(f"# {key}={json.dumps(_jsonable(sino.metadata[key]), sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "alpha", "tau"] + names)
        for i in range(len(sino)):
            w.writerow([_fmt(sino.betas[i]), _fmt(sino.alphas[i]), _fmt(sino.tau[i])] + [_fmt(v) for v in vals[i]])
    return path


def read_sinogram(path) -> Sinogram:
    meta: dict[str, Any] = {}
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = json.loads(val)
            else:
                rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    data = np.array([[float(x) for x in r] for r in reader])
    if data.size == 0:
        raise ContractError("empty sinogram file")
    values = data[:, 3:]
    ncol = len(header) - 3
    if ncol == 1:
        values = values[:, 0]
    else:
        k = int(round(np.log2(ncol)))
        values = values.reshape((-1,) + (2,) * k)
    return Sinogram(data[:, 0], data[:, 1], data[:, 2], values, meta)


# --- grid fields ---------------------------------------------------------------------

def write_grid_field(path, f: GridField) -> Path:
    """Header ``rank,m,N,n,radius,R``; then ``x,y,f_...`` rows in node order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = f.grid
    flat = f.samples.reshape(grid.N * grid.N, -1)
    X = grid.nodes.reshape(-1, 2)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", f.rank, "N", grid.N, "radius", _fmt(grid.radius)])
        w.writerow(["x", "y"] + component_labels(f.rank))
        for i in range(X.shape[0]):
            w.writerow([_fmt(X[i, 0]), _fmt(X[i, 1])] + [_fmt(v) for v in flat[i]])
    return path


def read_grid_field(path) -> GridField:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        head = next(reader)
        try:
            meta = dict(zip(head[0::2], head[1::2]))
            rank, N, R = int(meta["rank"]), int(meta["N"]), float(meta["radius"])
        except (KeyError, ValueError) as exc:
            raise ContractError(f"bad grid field header: {head}") from exc
        cols = next(reader)
        if cols[:2] != ["x", "y"] or len(cols) != 2 + 2**rank:
            raise ContractError("grid field columns do not match the rank")
        data = np.array([[float(x) for x in r] for r in reader])
    if data.shape != (N * N, 2 + 2**rank):
        raise ContractError(f"expected {N * N} rows of {2 + 2**rank} values")
    grid = GridModel(N, R)
    if not np.allclose(data[:, :2], grid.nodes.reshape(-1, 2), atol=1e-9 * R):
        raise ContractError("node coordinates do not match the declared grid")
    samples = data[:, 2:].reshape((N, N) + (2,) * rank)
    samples = samples * grid.active.reshape(grid.active.shape + (1,) * rank)
    return GridField(rank, grid, samples, name=Path(path).stem)


# --- figures -------------------------------------------------------------------------------

def heatmap_svg(path, sino: Sinogram, n_beta: int, n_alpha: int, title: str = "") -> Path | None:
    """``beta x alpha`` heatmap of a scalar sinogram on a tensor-product ray grid."""
    if not sino.is_scalar or len(sino) != n_beta * n_alpha:
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = sino.values.reshape(n_beta, n_alpha).T
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(img, origin="lower", aspect="auto",
                   extent=[0, 2 * np.pi, sino.alphas.min(), sino.alphas.max()], cmap="RdBu_r")
    ax.set_xlabel("beta")
    ax.set_ylabel("alpha")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def line_plot_svg(path, xs, series: dict[str, list[float]], xlabel: str, ylabel: str, logy: bool = True) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, ys in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    if logy:
        ax.set_yscale("log")
    ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
