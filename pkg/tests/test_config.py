"""Configuration validation and construction."""

import copy

import numpy as np
import pytest
import yaml

from strongqbm.config import build_config, config_hash, load_config, profile, validate
from strongqbm.errors import ConfigError

BASE = {
    "model": {"family": "ohmic_lorentz", "gamma0": 2.0, "cutoff": 10.0, "temperature": 0.5, "omega": 2.0},
    "grid": {"t_max": 1.0, "dt": 0.01},
}


def with_changes(**blocks):
    raw = copy.deepcopy(BASE)
    for name, block in blocks.items():
        if block is None:
            raw.pop(name, None)
        else:
            raw.setdefault(name, {}).update(block)
    return raw


def paths(diags, level="error"):
    return [d.path for d in diags if d.level == level]


def test_minimal_configuration_is_valid():
    assert validate(BASE) == []


def test_missing_temperature_gives_one_error():
    raw = copy.deepcopy(BASE)
    del raw["model"]["temperature"]
    assert paths(validate(raw)) == ["model.temperature"]


def test_errors_are_aggregated():
    raw = copy.deepcopy(BASE)
    raw["model"]["family"] = "drude"
    raw["model"]["gamma0"] = -1.0
    raw["grid"]["colour"] = "blue"
    assert set(paths(validate(raw))) == {"model.family", "model.gamma0", "grid.colour"}


def test_missing_blocks():
    assert set(paths(validate({}))) == {"model", "grid"}
    assert paths(validate([1, 2])) == ["<root>"]


def test_cutoff_is_optional_for_local_damping():
    raw = with_changes(model={"family": "local"})
    del raw["model"]["cutoff"]
    assert validate(raw) == []
    raw["model"]["family"] = "ohmic_exp"
    assert paths(validate(raw)) == ["model.cutoff"]


def test_coarse_step_is_a_warning():
    diags = validate(with_changes(grid={"dt": 0.05, "t_max": 1.0}))
    assert paths(diags) == []
    assert paths(diags, "warning") == ["grid.dt"]
    assert "dt <= 0.1/max(omega, gamma0, cutoff) = 0.01" in diags[0].message


def test_grid_multiples():
    assert paths(validate(with_changes(grid={"t_max": 1.005, "dt": 0.01}))) == ["grid.t_max"]
    assert paths(validate(with_changes(grid={"master_dt": 0.015}))) == ["grid.master_dt"]


@pytest.mark.parametrize(
    "forcing, bad",
    [
        ({"kind": "external"}, "forcing.force"),
        ({"kind": "external", "force": [0.0]}, "forcing.force"),
        ({"kind": "external", "force": [0.0, {"offset": 1.0, "period": 2.0}]}, "forcing.force[1].period"),
        ({"kind": "linear", "matrix": [[0, 1]]}, "forcing.matrix"),
        ({"kind": "quartic"}, "forcing.kind"),
        ({"kind": "polynomial", "terms": [{"d": 0, "b": 0, "coefficient": 1.0}]}, "forcing.terms[0]"),
        ({"kind": "cubic", "k2": 1.0, "contraction_sign": 2}, "forcing.contraction_sign"),
    ],
)
def test_forcing_errors(forcing, bad):
    assert bad in paths(validate(with_changes(forcing=forcing)))


def test_wigner_block_checks():
    good = {"x_window": [-4, 4], "p_window": [-4, 4], "nx": 33, "np": 33, "covariance": [[0.25, 0], [0, 0.25]]}
    assert validate(with_changes(wigner=good)) == []
    narrow = dict(good, x_window=[-2, 2])
    assert paths(validate(with_changes(wigner=narrow))) == ["wigner.x_window"]
    assert paths(validate(with_changes(wigner=dict(good, covariance=[[1, 2], [2, 1]])))) == ["wigner.covariance"]
    assert paths(validate(with_changes(wigner=dict(good, nx=4)))) == ["wigner.nx"]
    assert paths(validate(with_changes(wigner=dict(good, generator="L0+L1")))) == ["wigner.generator"]
    assert paths(validate(with_changes(wigner=dict(good, t_end=0.333)))) == ["wigner.t_end"]


def test_oracle_times_must_lie_on_the_grid():
    diags = validate(with_changes(oracle={"times": [0.5, 0.505], "pairs": [[0.5, 2.0]]}))
    assert set(paths(diags)) == {"oracle.times[1]", "oracle.pairs[0][1]"}


def test_build_config_objects():
    raw = with_changes(grid={"master_dt": 0.05}, forcing={"kind": "quadratic", "k1": 0.3, "contraction_sign": -1})
    config = build_config(raw, seed=99)
    assert config.grid.n == 100
    assert config.master_stride == 5
    assert config.seed == 99
    assert config.contraction_sign == -1.0
    spec = config.forcing_spec()
    assert np.all(spec.terms[0].coef == 0.3)
    assert raw.get("oracle") is None  # the caller's mapping is not modified


def test_build_config_raises_with_every_error():
    raw = copy.deepcopy(BASE)
    del raw["model"]["omega"]
    raw["grid"]["dt"] = "small"
    with pytest.raises(ConfigError) as info:
        build_config(raw)
    assert len(info.value.diagnostics) == 2


def test_profile_values():
    t = np.array([0.0, 1.0])
    assert np.array_equal(profile(2.5, t), [2.5, 2.5])
    spec = {"offset": 1.0, "amplitude": 2.0, "frequency": np.pi / 2, "phase": 0.0}
    assert np.allclose(profile(spec, t), [1.0, 3.0])


def test_hash_is_canonical():
    a = {"model": {"gamma0": 1.0, "family": "local"}, "grid": {"dt": 0.1}}
    b = {"grid": {"dt": 0.1}, "model": {"family": "local", "gamma0": 1.0}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "grid": {"dt": 0.2}})


def test_load_config_from_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(BASE))
    assert load_config(path).model.gamma0 == 2.0
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_shipped_benchmark_configuration_is_valid():
    from pathlib import Path

    raw = yaml.safe_load((Path(__file__).parent.parent / "configs" / "benchmark.yaml").read_text())
    assert validate(raw) == []
