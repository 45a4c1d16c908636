"""Experiment configuration: INI-style text files -> validated dataclass.

Right-hand sides and coefficients are named analytic presets rather than
parsed expressions, which keeps runs reproducible byte-for-byte and avoids
an expression-language dependency.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import geometry
from .errors import ConfigParseError, ConfigValidationError
from .fem import CoefficientField, LinearSolveSpec

KINDS = ("CellOnly", "Converge", "Lipschitz", "Spectrum", "Probes", "All")


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    workers: int
    cell: geometry.CellGeometry
    omega: tuple
    weight_mode: str
    coefficient: CoefficientField
    n: int
    eps_list: list            # list[Fraction], each 1/N
    solid_scale: float
    spectrum_k: int
    spectrum_solid_n: int
    rhs_form: str
    f: object                 # scalar or vector preset (callable or constant)
    F: object
    solve_spec: LinearSolveSpec
    trials: int
    enlarged_n: int
    out_dir: str
    echo: dict = field(default_factory=dict)   # normalized config for the report


def _get(cp, section, option, default=None):
    if cp.has_option(section, option):
        return cp.get(section, option).strip()
    return default


def _parse_holes(text: str):
    if text is None or text.lower() in ("", "none"):
        return []
    holes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        tokens = part.split()
        if tokens[0] != "disk" or len(tokens) != 4:
            raise ConfigValidationError(
                "geometry.holes", f"expected 'disk cx cy r' entries, got {part!r}")
        try:
            cx, cy, r = (float(t) for t in tokens[1:])
        except ValueError:
            raise ConfigValidationError(
                "geometry.holes", f"non-numeric disk parameters in {part!r}") from None
        holes.append(geometry.HoleSpec.disk(cx, cy, r, label=len(holes)))
    return holes


def _parse_eps(text: str):
    if not text:
        raise ConfigValidationError("discretization.eps", "at least one value required")
    values = []
    for token in text.replace(",", " ").split():
        try:
            frac = Fraction(token)
        except (ValueError, ZeroDivisionError):
            raise ConfigValidationError(
                "discretization.eps", f"{token!r} is not a fraction") from None
        if frac.numerator != 1 or frac.denominator < 1:
            raise ConfigValidationError(
                "discretization.eps", f"{token} is not of the form 1/N")
        values.append(frac)
    if len(set(values)) != len(values):
        raise ConfigValidationError("discretization.eps", "duplicate values")
    return values


def _parse_coefficient(text: str) -> tuple:
    tokens = (text or "identity").split()
    name = tokens[0]
    if name == "identity":
        if len(tokens) != 1:
            raise ConfigValidationError("coefficient.preset", "identity takes no arguments")
        return CoefficientField.constant(np.eye(2)), "identity"
    if name == "matrix":
        if len(tokens) != 4:
            raise ConfigValidationError(
                "coefficient.preset", "matrix preset needs 'matrix a11 a12 a22'")
        a11, a12, a22 = (float(t) for t in tokens[1:])
        return CoefficientField.constant(np.array([[a11, a12], [a12, a22]])), text
    if name == "cosine":
        if len(tokens) != 2:
            raise ConfigValidationError("coefficient.preset", "cosine preset needs 'cosine mu'")
        mu = float(tokens[1])
        if not 0 <= mu < 1:
            raise ConfigValidationError("coefficient.preset", "cosine mu must be in [0, 1)")

        def A(points):
            a = 1.0 + mu * np.cos(2 * np.pi * points[:, 0]) * np.cos(2 * np.pi * points[:, 1])
            out = np.zeros((points.shape[0], 2, 2))
            out[:, 0, 0] = a
            out[:, 1, 1] = a
            return out

        return CoefficientField.periodic(A, mu=1.0 - mu), text
    raise ConfigValidationError("coefficient.preset", f"unknown preset {name!r}")


def _scalar_preset(text: str, omega, fieldname: str):
    if text is None or text.lower() == "none":
        return None, "none"
    tokens = text.split()
    name = tokens[0]
    w, h = float(omega[0]), float(omega[1])
    if name == "constant":
        if len(tokens) != 2:
            raise ConfigValidationError(fieldname, "scalar constant needs one value")
        return float(tokens[1]), text
    if name == "sine":
        amp = float(tokens[1]) if len(tokens) == 2 else 1.0

        def f(points):
            return amp * np.sin(np.pi * points[:, 0] / w) * np.sin(np.pi * points[:, 1] / h)

        return f, f"sine {amp:g}"
    if name == "bump":
        amp = float(tokens[1]) if len(tokens) == 2 else 1.0
        cx, cy, rad = 0.5 * w, 0.5 * h, 0.45 * min(w, h)

        def f(points):
            s2 = ((points[:, 0] - cx) ** 2 + (points[:, 1] - cy) ** 2) / rad ** 2
            out = np.zeros(points.shape[0])
            inside = s2 < 1.0
            out[inside] = amp * math.e * np.exp(-1.0 / (1.0 - s2[inside]))
            return out

        return f, f"bump {amp:g}"
    raise ConfigValidationError(fieldname, f"unknown scalar preset {name!r}")


def _vector_preset(text: str, fieldname: str):
    tokens = (text or "").split()
    if not tokens:
        raise ConfigValidationError(fieldname, "div_form needs a vector f preset")
    if tokens[0] == "constant" and len(tokens) == 3:
        return np.array([float(tokens[1]), float(tokens[2])]), text
    raise ConfigValidationError(fieldname, "vector preset must be 'constant fx fy'")


def load_config(path: str, out_override: str | None = None,
                seed_override: int | None = None,
                workers_override: int | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep option case: rhs has both 'f' and 'F'
    try:
        with open(path) as handle:
            cp.read_file(handle)
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigParseError(f"cannot parse config file {path}: {exc}") from exc
    return _from_parser(cp, out_override, seed_override, workers_override)


def config_from_echo(echo: dict, out_dir: str = "out") -> ExperimentConfig:
    """Rebuild a validated config from a report's config echo.

    The echo holds only strings/numbers, so it crosses process boundaries;
    worker processes use this to reconstruct callable presets locally.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    for section, options in echo.items():
        cp.add_section(section)
        for key, value in options.items():
            cp.set(section, key, str(value))
    return _from_parser(cp, out_dir, None, None)


def _from_parser(cp, out_override, seed_override, workers_override) -> ExperimentConfig:
    kind = _get(cp, "experiment", "kind", "All")
    if kind not in KINDS:
        raise ConfigValidationError("experiment.kind",
                                    f"must be one of {', '.join(KINDS)}, got {kind!r}")
    seed = seed_override if seed_override is not None else int(_get(cp, "experiment", "seed", "0"))
    if seed < 0:
        raise ConfigValidationError("experiment.seed", "must be >= 0")
    workers = workers_override if workers_override is not None \
        else int(_get(cp, "experiment", "workers", "1"))
    if workers < 1:
        raise ConfigValidationError("experiment.workers", "must be >= 1")

    holes = _parse_holes(_get(cp, "geometry", "holes", "none"))
    try:
        c0 = float(_get(cp, "geometry", "c0", "0.2"))
    except ValueError:
        raise ConfigValidationError("geometry.c0", "must be a number") from None
    try:
        cell = geometry.build_cell_geometry(holes, c0)
    except Exception as exc:
        raise ConfigValidationError("geometry", str(exc)) from exc
    omega_txt = (_get(cp, "geometry", "omega", "1 1")).split()
    if len(omega_txt) != 2 or not all(t.isdigit() for t in omega_txt):
        raise ConfigValidationError("geometry.omega", "expected two positive integers")
    omega = (int(omega_txt[0]), int(omega_txt[1]))
    if omega[0] < 1 or omega[1] < 1:
        raise ConfigValidationError("geometry.omega", "sides must be >= 1")

    mode = _get(cp, "weight", "mode", "distance")
    if mode not in ("distance", "ground_state"):
        raise ConfigValidationError("weight.mode", f"must be distance or ground_state, got {mode!r}")
    if kind == "Spectrum" and mode != "ground_state":
        raise ConfigValidationError(
            "weight.mode", "Spectrum runs need the ground_state weight (lambda_bar)")

    coefficient, coeff_echo = _parse_coefficient(_get(cp, "coefficient", "preset", "identity"))

    n = int(_get(cp, "discretization", "n", "16"))
    if n < 2:
        raise ConfigValidationError("discretization.n", "must be >= 2")
    if kind in ("Converge", "All") and n < 8:
        raise ConfigValidationError("discretization.n", "Converge runs need n >= 8")
    eps_list = _parse_eps(_get(cp, "discretization", "eps", "1/4 1/8 1/16"))
    if kind in ("Converge", "All") and len(eps_list) < 3:
        raise ConfigValidationError("discretization.eps",
                                    "convergence fits need at least 3 epsilon values")
    if kind in ("Lipschitz", "Spectrum") and len(eps_list) < 2:
        raise ConfigValidationError("discretization.eps",
                                    f"{kind} runs need at least 2 epsilon values")
    solid_scale = float(_get(cp, "discretization", "solid_scale", "0.5"))
    if not 0.0 < solid_scale <= 4.0:
        raise ConfigValidationError("discretization.solid_scale", "must be in (0, 4]")
    spectrum_k = int(_get(cp, "discretization", "spectrum_k", "3"))
    if spectrum_k < 1:
        raise ConfigValidationError("discretization.spectrum_k", "must be >= 1")
    spectrum_solid_n = int(_get(cp, "discretization", "spectrum_solid_n", "96"))
    if spectrum_solid_n < 8:
        raise ConfigValidationError("discretization.spectrum_solid_n", "must be >= 8")

    form = _get(cp, "rhs", "form", "weighted_source")
    if form not in ("weighted_source", "div_form"):
        raise ConfigValidationError("rhs.form",
                                    "must be weighted_source or div_form")
    if form == "weighted_source":
        f, f_echo = _scalar_preset(_get(cp, "rhs", "f", "constant 1"), omega, "rhs.f")
        if f is None:
            raise ConfigValidationError("rhs.f", "weighted_source needs a scalar f")
        F, F_echo = None, "none"
        if _get(cp, "rhs", "F", "none").lower() != "none":
            raise ConfigValidationError("rhs.F", "weighted_source form takes no F term")
    else:
        f, f_echo = _vector_preset(_get(cp, "rhs", "f", "constant 1 0"), "rhs.f")
        F, F_echo = _scalar_preset(_get(cp, "rhs", "F", "none"), omega, "rhs.F")

    tol = float(_get(cp, "solver", "tolerance", "1e-10"))
    max_it = int(_get(cp, "solver", "max_iterations", "50000"))
    try:
        solve_spec = LinearSolveSpec(tolerance=tol, max_iterations=max_it)
    except Exception as exc:
        raise ConfigValidationError("solver", str(exc)) from exc

    trials = int(_get(cp, "probes", "trials", "100"))
    if trials < 1:
        raise ConfigValidationError("probes.trials", "must be >= 1")
    enlarged_n = int(_get(cp, "probes", "enlarged_n", "32"))
    if enlarged_n < 8:
        raise ConfigValidationError("probes.enlarged_n", "must be >= 8")

    out_dir = out_override if out_override is not None else _get(cp, "output", "directory", "out")

    echo = {
        "experiment": {"kind": kind, "seed": seed, "workers": workers},
        "geometry": {
            "holes": "; ".join(f"disk {h.center[0]:g} {h.center[1]:g} {h.radius:g}"
                               for h in holes) or "none",
            "c0": c0,
            "omega": f"{omega[0]} {omega[1]}",
        },
        "weight": {"mode": mode},
        "coefficient": {"preset": coeff_echo},
        "discretization": {
            "n": n,
            "eps": " ".join(str(e) for e in eps_list),
            "solid_scale": solid_scale,
            "spectrum_k": spectrum_k,
            "spectrum_solid_n": spectrum_solid_n,
        },
        "rhs": {"form": form, "f": f_echo, "F": F_echo},
        "solver": {"tolerance": tol, "max_iterations": max_it},
        "probes": {"trials": trials, "enlarged_n": enlarged_n},
    }
    return ExperimentConfig(
        kind=kind, seed=seed, workers=workers, cell=cell, omega=omega,
        weight_mode=mode, coefficient=coefficient, n=n, eps_list=eps_list,
        solid_scale=solid_scale, spectrum_k=spectrum_k,
        spectrum_solid_n=spectrum_solid_n, rhs_form=form, f=f, F=F,
        solve_spec=solve_spec, trials=trials, enlarged_n=enlarged_n,
        out_dir=out_dir, echo=echo)
