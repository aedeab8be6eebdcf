import json
import math
from pathlib import Path

import numpy as np
import pytest

from mixray import io
from mixray.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERIC, EXIT_OK, main
from mixray.config import ConfigError, ExperimentConfig, GridConfig, from_dict, load, validate
from mixray.geometry import get_threads, set_threads

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.json"))
SMALL_VERIFY = {
    "verify": {"ranks": [1], "n_points": 40, "n_rays": 8, "n_pairs": 2},
}


def write(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


@pytest.fixture(autouse=True)
def _restore_threads():
    before = get_threads()
    yield
    set_threads(before)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load(path)
    assert isinstance(cfg, ExperimentConfig)


def test_defaults():
    cfg = from_dict({})
    assert cfg.grid == GridConfig()
    assert cfg.rays.n_beta == 96 and cfg.seed == 0
    assert "source" not in cfg.as_dict()


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"grid": {"N": 64, "extra": True}},
    {"rays": {"n_beta": 0}},
    {"field": {"name": "y_dx", "file": "x.csv"}},
    {"reduce": {"A": [{"matrix": [[1, 0]]}]}},
    {"transform": {"kind": "attenuated"}},
    {"seed": -1},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigError):
        validate(raw)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json")
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load(p)


def test_field_file_resolved_relative_to_config(tmp_path):
    (tmp_path / "sub").mkdir()
    cfg = load(write(tmp_path / "sub", {"field": {"file": "f.csv"}}))
    assert cfg.field["file"] == str(tmp_path / "sub" / "f.csv")


def test_unknown_key_exits_2(tmp_path, capsys):
    code = main(["sinogram", "--config", write(tmp_path, {"grid": {"size": 3}}), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_bad_thread_count_exits_2(tmp_path):
    cfg = write(tmp_path, {"field": {"name": "dx"}, "rays": {"n_beta": 4, "n_alpha": 4}})
    assert main(["sinogram", "--config", cfg, "--out", str(tmp_path), "--threads", "0"]) == EXIT_CONFIG


@pytest.fixture(scope="module")
def ydx_sinogram(tmp_path_factory):
    out = tmp_path_factory.mktemp("ydx")
    code = main(["sinogram", "--config", str(CONFIGS[0].parent / "sinogram_ydx.json"), "--out", str(out)])
    assert code == EXIT_OK
    return out, io.read_sinogram(out / "sinogram.csv")


def ydx_chord(beta, alpha):
    """Exact Euclidean integral of y dx along the unit-disk chord entering at (beta, alpha)."""
    n = -np.stack([np.cos(beta), np.sin(beta)], axis=-1)
    d = np.cos(alpha)[:, None] * n + np.sin(alpha)[:, None] * np.stack([-n[:, 1], n[:, 0]], axis=-1)
    tau = 2 * np.cos(alpha)
    return d[:, 0] * (-n[:, 1] * tau + d[:, 1] * tau**2 / 2)


def test_sinogram_ydx_rows_are_exact(ydx_sinogram):
    out, s = ydx_sinogram
    assert len(s) == 9216
    assert (out / "sinogram.svg").exists()
    assert np.max(np.abs(s.values - ydx_chord(s.betas, s.alphas))) <= 1e-8


@pytest.mark.xfail(strict=True, reason="nearest 96x96 grid ray is half an alpha cell off the anchor chord")
def test_sinogram_ydx_nearest_row_anchor(ydx_sinogram):
    _, s = ydx_sinogram
    i = int(np.argmin((s.betas - 5 * math.pi / 6) ** 2 + (s.alphas - math.pi / 6) ** 2))
    assert abs(s.values[i] - 0.8660254) <= 1e-3


def test_sinogram_zero_field(tmp_path):
    assert main(["sinogram", "--config", str(CONFIGS[0].parent / "sinogram_zero.json"), "--out", str(tmp_path)]) == EXIT_OK
    s = io.read_sinogram(tmp_path / "sinogram.csv")
    assert len(s) == 576 and not np.any(s.values)
    assert not (tmp_path / "sinogram.svg").exists()


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    cfg = write(tmp_path, {"metric": {"kind": "constant_curvature", "kappa": -0.5},
                           "field": {"name": "random_polynomial", "params": {"rank": 2}},
                           "rays": {"n_beta": 12, "n_alpha": 10}, "output": {"svg": False}})
    assert main(["sinogram", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "2"]) == EXIT_OK
    assert get_threads() == 2
    monkeypatch.setenv("MIXRAY_THREADS", "3")
    assert main(["sinogram", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    assert get_threads() == 3
    a = (tmp_path / "a" / "sinogram.csv").read_bytes()
    assert a == (tmp_path / "b" / "sinogram.csv").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write(tmp_path, {"field": {"name": "random_polynomial", "params": {"rank": 1}}, "seed": 1,
                           "rays": {"n_beta": 6, "n_alpha": 6}, "output": {"svg": False}})
    outs = {}
    for tag, extra in (("cfg", []), ("one", ["--seed", "1"]), ("two", ["--seed", "2"])):
        assert main(["sinogram", "--config", cfg, "--out", str(tmp_path / tag)] + extra) == EXIT_OK
        outs[tag] = (tmp_path / tag / "sinogram.csv").read_bytes()
    assert outs["cfg"] == outs["one"] != outs["two"]


def test_verify_is_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_VERIFY)
    for tag in ("a", "b"):
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / tag)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS geometry.unit_speed" in out
    assert (tmp_path / "a" / "verify.json").read_bytes() == (tmp_path / "b" / "verify.json").read_bytes()
    report = json.loads((tmp_path / "a" / "verify.json").read_text())
    assert report["passed"] and report["n_failed"] == 0


def test_singular_mixing_exits_3(tmp_path, capsys):
    code = main(["verify", "--config", str(CONFIGS[0].parent / "verify_singular.json"), "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert "numeric error" in capsys.readouterr().err


def test_invariant_failure_exits_1(tmp_path, monkeypatch):
    from mixray import verify

    real = verify.run_suite

    def broken(*args, **kwargs):
        rep = real(*args, **kwargs)
        rep["checks"][0]["passed"] = False
        rep["passed"], rep["n_failed"] = False, 1
        return rep

    monkeypatch.setattr(verify, "run_suite", broken)
    assert main(["verify", "--config", write(tmp_path, SMALL_VERIFY), "--out", str(tmp_path)]) == EXIT_INVARIANT


def test_reconstruct_single_and_combined(tmp_path):
    base = {"field": {"name": "smooth_oneform"}, "rays": {"n_beta": 24, "n_alpha": 24},
            "grid": {"N": 16}, "output": {"svg": False}}
    for kind in ("geodesic", "combined"):
        cfg = write(tmp_path, {**base, "transform": {"kind": kind}}, f"{kind}.json")
        assert main(["reconstruct", "--config", cfg, "--out", str(tmp_path / kind)]) == EXIT_OK
        rep = json.loads((tmp_path / kind / "reconstruct.json").read_text())
        assert rep["converged"] and math.isfinite(rep["relative_error"])
        assert (tmp_path / kind / "reconstruction.csv").exists()
        assert rep["h1_surrogate_error"] >= 0
    full = json.loads((tmp_path / "combined" / "reconstruct.json").read_text())["relative_error"]
    partial = json.loads((tmp_path / "geodesic" / "reconstruct.json").read_text())["relative_error"]
    assert full < partial


def test_reduce_small(tmp_path):
    cfg = write(tmp_path, {"field": {"name": "random_polynomial", "params": {"rank": 1}},
                           "rays": {"n_beta": 16, "n_alpha": 16}, "grid": {"N": 10},
                           "reduce": {"A": ["star"], "A_tilde": ["identity"], "probe": "svd"}})
    assert main(["reduce", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "reduce.json").read_text())
    assert rep["reconstitution_residual"] <= 1e-12
    assert rep["normal_identity_residual"] <= 1e-10
    assert rep["kernel_transfer"]["residual"] <= 1e-6


def test_decompose_small(tmp_path):
    cfg = write(tmp_path, {"field": {"name": "curl_plus_potential"},
                           "decompose": {"sizes": [17, 33], "method": "poisson"}, "output": {"svg": False}})
    assert main(["decompose", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "decompose.json").read_text())
    assert len(rep["levels"]) == 2
    assert (tmp_path / "solenoidal.csv").exists()
