from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from fraclab.config import ExperimentConfig, default_config, dump_config, load_config
from fraclab.errors import ConfigError
from fraclab.grid import write_dump
from fraclab.pdo import gaussian_coefficient

CONFIGS = sorted((Path(__file__).parents[1] / "configs").glob("*.yaml"))


def key_path_of(data: dict) -> str:
    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.from_dict(data)
    return excinfo.value.key_path


def test_default_config():
    cfg = default_config()
    assert (cfg.grid.n, cfg.grid.N, cfg.grid.L) == (1, 128, 2.0)
    assert set(cfg.coefficients) == {"0", "1"}
    assert cfg.reference == {}
    assert cfg.domains["W1"].center == [-1.5]
    experiment = cfg.build()
    assert experiment.problem.m == 1
    assert experiment.reference.coeffs.is_zero()


def test_serialize_parse_is_idempotent():
    cfg = default_config()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


def test_dump_and_load(tmp_path):
    cfg = ExperimentConfig.from_dict({"s": 0.6, "recover": {"peel": False}})
    path = dump_config(cfg, tmp_path / "sub" / "exp.yaml")
    assert load_config(path) == cfg


def test_exponent_without_dot(tmp_path):
    # YAML 1.1 reads 1e-8 as a string
    path = tmp_path / "exp.yaml"
    path.write_text("solver:\n  dense_tol: 1e-8\n")
    assert load_config(path).solver.dense_tol == 1e-8


@pytest.mark.parametrize(
    ("data", "key_path"),
    [
        ({"s": 1.0}, "s"),
        ({"s": -0.5}, "s"),
        ({"s": 0.4, "m": 1}, "m"),
        ({"m": 0.5}, "m"),
        ({"grid": {"foo": 1}}, "grid.foo"),
        ({"grid": {"N": 15}}, "grid"),
        ({"seed": -1}, "seed"),
        ({"solver": {"method": "cg"}}, "solver.method"),
        ({"runge": {"sizes": [16, 8]}}, "runge.sizes"),
        ({"runge": {"target": {"host": "W1"}}}, "runge.target.host"),
        ({"verify": {"suites": ["symbols", "nope"]}}, "verify.suites[1]"),
        ({"m": 0, "coefficients": {"1": {"width": 0.1}}}, "coefficients.1"),
        ({"coefficients": {"0": {"center": 0.0}}}, "coefficients.0.width"),
        ({"coefficients": {"0": {"family": "spline"}}}, "coefficients.0.family"),
        (
            {"coefficients": {"0": {"family": "polynomial", "coefficients": {"0-1": 1.0}}}},
            "coefficients.0.coefficients.0-1",
        ),
        (
            {"coefficients": {"0": {"family": "dump", "path": "a0.fcl", "collar": 0.1}}},
            "coefficients.0.collar",
        ),
        ({"dictionary": {"stride": 0}}, "dictionary.stride"),
        ({"recover": {"peel": "yes"}}, "recover.peel"),
    ],
)
def test_schema_errors(data, key_path):
    assert key_path_of(data) == key_path


def test_unknown_key_message():
    with pytest.raises(ConfigError, match="unknown key; expected one of"):
        ExperimentConfig.from_dict({"alessandrini": {"draw": 3}})


def test_domain_errors():
    domains = {
        "Omega": {"shape": "ball", "center": 0.0, "radius": 1.0},
        "W1": {"shape": "ball", "center": 0.5, "radius": 0.4},
        "W2": {"shape": "ball", "center": 1.5, "radius": 0.4},
    }
    assert key_path_of({"domains": domains}) == "domains.W1"
    del domains["W2"]
    assert key_path_of({"domains": domains}) == "domains.W2"
    box = {"shape": "box", "center": -1.5, "radius": 0.3}
    assert key_path_of({"domains": {**domains, "W1": box}}) == "domains.W1.radius"


def test_two_dimensional_defaults():
    cfg = ExperimentConfig.from_dict({"grid": {"n": 2, "N": 32}})
    assert set(cfg.coefficients) == {"0-0", "1-0"}
    # scalar centres are broadcast to every axis
    assert cfg.domains["W2"].center == [1.5, 1.5]
    assert cfg.build().problem.coeffs.alphas == [(0, 0), (1, 0)]


def test_zero_perturbation_and_reference():
    cfg = ExperimentConfig.from_dict(
        {"coefficients": {}, "reference": {"0": {"width": 0.2, "amplitude": 0.5}}}
    )
    experiment = cfg.build()
    assert experiment.problem.coeffs.is_zero()
    assert experiment.reference.coeffs.alphas == [(0,)]


def test_dump_coefficient_family(tmp_path):
    experiment = default_config().build()
    a = gaussian_coefficient(experiment.omega, 0.1, 0.2, 2.0)
    path = write_dump(tmp_path / "a0.fcl", a)
    cfg = ExperimentConfig.from_dict({"coefficients": {"0": {"family": "dump", "path": str(path)}}})
    assert np.array_equal(cfg.build().problem.coeffs.get((0,)).values, a.values)
    missing = ExperimentConfig.from_dict(
        {"coefficients": {"0": {"family": "dump", "path": str(tmp_path / "none.fcl")}}}
    )
    with pytest.raises(ConfigError) as excinfo:
        missing.build()
    assert excinfo.value.key_path == "coefficients.0"


def test_recovery_config_follows_spec():
    recover = {"rho": 0.1, "peel": False, "fixed_point_sweeps": 0}
    cfg = ExperimentConfig.from_dict({"recover": recover})
    rc = cfg.build().recovery_config(progress=True)
    assert (rc.m, rc.rho, rc.peel, rc.fixed_point_sweeps, rc.progress) == (1, 0.1, False, 0, True)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [1, 2\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="expected a mapping"):
        load_config(listing)


def test_empty_file_is_default(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == default_config()


@pytest.mark.parametrize("path", CONFIGS, ids=[p.stem for p in CONFIGS])
def test_shipped_configs_build(path):
    experiment = load_config(path).build()
    assert experiment.omega.count > 0
