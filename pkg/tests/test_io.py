import json

import numpy as np
import pytest

from mixray import io
from mixray.errors import ContractError
from mixray.fields import random_polynomial, y_dx
from mixray.geometry import grid_angles
from mixray.grid import GridModel
from mixray.tensors import GridField
from mixray.transforms import geodesic_xray, mixed_xray_intrinsic


def test_scalar_sinogram_round_trip(tmp_path, flat):
    s = geodesic_xray(flat, y_dx(), grid_angles(6, 5))
    back = io.read_sinogram(io.write_sinogram(tmp_path / "s.csv", s))
    for name in ("betas", "alphas", "tau", "values"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    assert back.metadata["transform"] == "geodesic"
    assert back.metadata["metric"]["kind"] == "euclidean"


def test_tensor_sinogram_round_trip(tmp_path, hyper):
    s = mixed_xray_intrinsic(hyper, 2, 0, random_polynomial(2, seed=1), grid_angles(4, 3))
    back = io.read_sinogram(io.write_sinogram(tmp_path / "t.csv", s))
    assert back.values.shape == s.values.shape
    assert np.array_equal(back.values, s.values)


def test_sinogram_bytes_are_deterministic(tmp_path, flat):
    s = geodesic_xray(flat, y_dx(), grid_angles(5, 5))
    a = io.write_sinogram(tmp_path / "a.csv", s).read_bytes()
    b = io.write_sinogram(tmp_path / "b.csv", s).read_bytes()
    assert a == b


def test_empty_sinogram_file_rejected(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("beta,alpha,tau,value\n")
    with pytest.raises(ContractError):
        io.read_sinogram(p)


def test_grid_field_round_trip(tmp_path):
    grid = GridModel(12)
    for rank in (0, 1, 2):
        f = GridField.sample(random_polynomial(rank, seed=rank), grid)
        back = io.read_grid_field(io.write_grid_field(tmp_path / f"f{rank}.csv", f))
        assert back.rank == rank and back.grid == grid
        assert np.array_equal(back.coefficients(), f.coefficients())


def test_grid_field_bad_inputs(tmp_path):
    grid = GridModel(8)
    f = GridField.sample(random_polynomial(1, seed=0), grid)
    text = io.write_grid_field(tmp_path / "f.csv", f).read_text().splitlines()
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(["rank,x"] + text[1:]) + "\n")
    with pytest.raises(ContractError):
        io.read_grid_field(bad)
    bad.write_text("\n".join(text[:-3]) + "\n")
    with pytest.raises(ContractError):
        io.read_grid_field(bad)
    bad.write_text("\n".join([text[0], "x,y,f_1"] + text[2:]) + "\n")
    with pytest.raises(ContractError):
        io.read_grid_field(bad)


def test_json_handles_numpy_and_nonfinite(tmp_path):
    payload = {"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True), "d": float("inf"), "e": (1, np.int64(2))}
    out = json.loads(io.write_json(tmp_path / "x.json", payload).read_text())
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": True, "d": "inf", "e": [1, 2]}


def test_heatmap_only_for_scalar_grids(tmp_path, flat):
    s = geodesic_xray(flat, y_dx(), grid_angles(6, 5))
    assert io.heatmap_svg(tmp_path / "h.svg", s, 6, 5) is not None
    assert (tmp_path / "h.svg").read_text().lstrip().startswith("<?xml")
    assert io.heatmap_svg(tmp_path / "no.svg", s, 5, 5) is None


def test_labels():
    assert io.component_labels(2) == ["f_11", "f_12", "f_21", "f_22"]
    assert io.component_labels(0) == ["f_"]
