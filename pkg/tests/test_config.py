"""Configuration parsing, validation, and echo round-trips."""

from fractions import Fraction

import numpy as np
import pytest

from perfhom import config as cfgmod
from perfhom.errors import ConfigValidationError


BASE = """\
[experiment]
kind = Converge
seed = 7

[geometry]
holes = disk 0.0 0.0 0.25
c0 = 0.2
omega = 2 1

[weight]
mode = distance

[discretization]
n = 16
eps = 1/4 1/8 1/16

[rhs]
form = weighted_source
f = constant 1
"""


def load_text(tmp_path, text, name="exp.cfg", **overrides):
    path = tmp_path / name
    path.write_text(text)
    return cfgmod.load_config(str(path), **overrides)


def load_mutated(tmp_path, old, new, **overrides):
    assert old in BASE
    return load_text(tmp_path, BASE.replace(old, new), **overrides)


def test_full_config_parses(tmp_path):
    cfg = load_text(tmp_path, BASE)
    assert cfg.kind == "Converge"
    assert cfg.seed == 7
    assert cfg.omega == (2, 1)
    assert cfg.weight_mode == "distance"
    assert cfg.n == 16
    assert cfg.eps_list == [Fraction(1, 4), Fraction(1, 8), Fraction(1, 16)]
    assert cfg.rhs_form == "weighted_source"
    assert cfg.f == 1.0
    assert cfg.F is None
    assert len(cfg.cell.holes) == 1


def test_defaults_fill_every_field(tmp_path):
    cfg = load_text(tmp_path, "")
    assert cfg.kind == "All"
    assert cfg.cell.empty
    assert cfg.omega == (1, 1)
    assert cfg.eps_list == [Fraction(1, 4), Fraction(1, 8), Fraction(1, 16)]
    assert cfg.workers == 1
    assert cfg.trials >= 1


@pytest.mark.parametrize("old,new,field", [
    ("kind = Converge", "kind = Sideways", "experiment.kind"),
    ("seed = 7", "seed = -3", "experiment.seed"),
    ("eps = 1/4 1/8 1/16", "eps = 0.3 1/8 1/16", "discretization.eps"),
    ("eps = 1/4 1/8 1/16", "eps = 2/3 1/8 1/16", "discretization.eps"),
    ("eps = 1/4 1/8 1/16", "eps = 1/4 1/4 1/8", "discretization.eps"),
    ("eps = 1/4 1/8 1/16", "eps = 1/4 1/8", "discretization.eps"),
    ("n = 16", "n = 4", "discretization.n"),
    ("holes = disk 0.0 0.0 0.25", "holes = square 0 0 1", "geometry.holes"),
    ("holes = disk 0.0 0.0 0.25", "holes = disk 0.0 0.0 0.45", "geometry"),
    ("omega = 2 1", "omega = 2.5 1", "geometry.omega"),
    ("omega = 2 1", "omega = 2", "geometry.omega"),
    ("mode = distance", "mode = inverse", "weight.mode"),
    ("form = weighted_source\nf = constant 1", "form = poisson", "rhs.form"),
    ("f = constant 1", "f = constant 1\nF = constant 2", "rhs.F"),
])
def test_validation_names_the_offending_field(tmp_path, old, new, field):
    with pytest.raises(ConfigValidationError) as err:
        load_mutated(tmp_path, old, new)
    assert err.value.field == field


def test_eps_fraction_parse_error_message(tmp_path):
    with pytest.raises(ConfigValidationError) as err:
        load_mutated(tmp_path, "eps = 1/4 1/8 1/16", "eps = 1/4 1/8 foo")
    assert err.value.field == "discretization.eps"
    assert "foo" in err.value.reason


def test_overrides_beat_file_values(tmp_path):
    cfg = load_text(tmp_path, BASE, out_override="/tmp/somewhere",
                    seed_override=99, workers_override=3)
    assert cfg.out_dir == "/tmp/somewhere"
    assert cfg.seed == 99
    assert cfg.workers == 3


def test_spectrum_kind_requires_ground_state(tmp_path):
    text = BASE.replace("kind = Converge", "kind = Spectrum")
    with pytest.raises(ConfigValidationError) as err:
        load_text(tmp_path, text)
    assert err.value.field == "weight.mode"
    ok = load_text(tmp_path, text.replace("mode = distance", "mode = ground_state"),
                   name="ok.cfg")
    assert ok.kind == "Spectrum"


def test_div_form_parses_vector_and_F(tmp_path):
    text = BASE.replace("kind = Converge", "kind = Lipschitz").replace(
        "form = weighted_source\nf = constant 1",
        "form = div_form\nf = constant 1 -2\nF = constant 3")
    cfg = load_text(tmp_path, text)
    assert np.array_equal(cfg.f, [1.0, -2.0])
    assert cfg.F == 3.0


def test_scalar_presets_evaluate_to_formulas(tmp_path):
    text = BASE.replace("f = constant 1", "f = sine 2")
    cfg = load_text(tmp_path, text)
    pts = np.array([[1.0, 0.5], [0.5, 0.25]])  # omega = (2, 1)
    expected = 2.0 * np.sin(np.pi * pts[:, 0] / 2.0) * np.sin(np.pi * pts[:, 1])
    assert np.allclose(cfg.f(pts), expected, atol=1e-15)

    text = BASE.replace("f = constant 1", "f = bump")
    cfg = load_text(tmp_path, text, name="bump.cfg")
    center = np.array([[1.0, 0.5]])
    assert cfg.f(center)[0] == pytest.approx(1.0)  # normalized peak
    far = np.array([[0.0, 0.0]])
    assert cfg.f(far)[0] == 0.0


def test_cosine_coefficient_preset_is_elliptic(tmp_path):
    text = BASE + "\n[coefficient]\npreset = cosine 0.5\n"
    cfg = load_text(tmp_path, text)
    vals = cfg.coefficient.at(np.array([[0.0, 0.0], [0.25, 0.25]]))
    assert vals[0, 0, 0] == pytest.approx(1.5)
    assert np.all(np.linalg.eigvalsh(vals) > 0.0)
    with pytest.raises(ConfigValidationError):
        load_text(tmp_path, BASE + "\n[coefficient]\npreset = cosine 1.5\n",
                  name="bad.cfg")


def test_echo_round_trip_reproduces_the_config(tmp_path):
    cfg = load_text(tmp_path, BASE)
    assert "output" not in cfg.echo  # the echo never pins output paths
    clone = cfgmod.config_from_echo(cfg.echo, out_dir="elsewhere")
    assert clone.kind == cfg.kind
    assert clone.seed == cfg.seed
    assert clone.omega == cfg.omega
    assert clone.eps_list == cfg.eps_list
    assert clone.n == cfg.n
    assert clone.weight_mode == cfg.weight_mode
    assert clone.rhs_form == cfg.rhs_form
    assert clone.echo == cfg.echo
    assert clone.out_dir == "elsewhere"


def test_echo_is_json_friendly(tmp_path):
    import json
    cfg = load_text(tmp_path, BASE)
    dumped = json.dumps(cfg.echo, sort_keys=True)
    assert "Converge" in dumped
