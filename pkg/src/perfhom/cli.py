"""Declarative experiment runner.

``perfhom run <config>`` parses an experiment description, executes the
requested pipelines, and writes ``report.json`` plus one CSV per plot series
into the output directory.  ``perfhom cell <config>`` restricts the run to the
cell quantities (weight, correctors, homogenized tensor) regardless of the
configured kind, and ``perfhom check`` executes the built-in acceptance suite.

With a fixed seed the report and the CSVs are byte-identical across runs:
every mapping is emitted with sorted keys, per-eps results are ordered by the
configured ladder, and wall-clock timings live in a separate ``timings.json``
sidecar so they never perturb the report bytes.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__, analysis, config
from .errors import ConfigValidationError, IoFailure, PerfhomError


# ---------------------------------------------------------------------------
# json plumbing
# ---------------------------------------------------------------------------

def _jsonable(obj, path="report"):
    """Recursively convert to plain JSON types, refusing non-finite numbers."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            raise IoFailure(f"non-finite number at {path}")
        return v
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist(), path)
    if dataclasses.is_dataclass(obj):
        return _jsonable(dataclasses.asdict(obj), path)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v, f"{path}.{k}") for k, v in obj.items()}
    raise IoFailure(f"cannot serialize {type(obj).__name__} at {path}")


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


# ---------------------------------------------------------------------------
# run report
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RunReport:
    """Everything one experiment produced, ready for serialization.

    Stage entries are either the stage's report payload or a
    ``{"skipped": reason}`` marker, so absent stages are always explicit.
    Timings are kept apart from the data sections: they change run to run
    while the rest of the report is deterministic.
    """

    version: str
    kind: str
    config_echo: dict
    cell: dict
    converge: dict
    lipschitz: dict
    spectrum: dict
    probes: dict
    timings: dict


_STAGES = ("converge", "lipschitz", "spectrum", "probes")

_KIND_STAGES = {
    "CellOnly": (),
    "Converge": ("converge",),
    "Lipschitz": ("lipschitz",),
    "Spectrum": ("spectrum",),
    "Probes": ("probes",),
    "All": _STAGES,
}


def _cell_report(cfg, art) -> dict:
    return {
        "a_hat": art.tensor.a_hat,
        "a0": art.tensor.a0,
        "energy_discrepancy": art.tensor.energy_discrepancy,
        "lambda_bar": art.weight.lambda_bar,
        "weight_mode": cfg.weight_mode,
        "comparability": list(art.weight.comparability),
        "corrector_residuals": list(art.correctors.residuals),
        "corrector_iterations": list(art.correctors.iterations),
        "corrector_means": art.correctors.mean_values,
    }


def _plan_stages(cfg) -> tuple[dict, set]:
    """Decide which stages run; the rest get an explicit skip reason."""
    stage_out = {s: {"skipped": f"stage not requested by kind {cfg.kind}"}
                 for s in _STAGES}
    wanted = set(_KIND_STAGES[cfg.kind])
    if "converge" in wanted and cfg.rhs_form != "weighted_source":
        stage_out["converge"] = {
            "skipped": "the convergence stage homogenizes the weighted_source "
                       "form; the configured right side is div_form"}
        wanted.discard("converge")
    if "spectrum" in wanted and cfg.weight_mode != "ground_state":
        stage_out["spectrum"] = {
            "skipped": "the spectral stage needs the ground_state weight"}
        wanted.discard("spectrum")
    return stage_out, wanted


def _execute(cfg) -> RunReport:
    timings: dict = {}
    t0 = time.perf_counter()
    art = analysis.build_cell_artifacts(cfg)
    timings["cell"] = time.perf_counter() - t0

    stage_out, wanted = _plan_stages(cfg)

    records = None
    if wanted:
        t0 = time.perf_counter()
        records = analysis.run_ladder(cfg, wanted, art)
        timings["ladder"] = time.perf_counter() - t0

    if "converge" in wanted:
        t0 = time.perf_counter()
        stage_out["converge"] = analysis.convergence_study(cfg, art, records)
        timings["converge"] = time.perf_counter() - t0
    if "lipschitz" in wanted:
        t0 = time.perf_counter()
        stage_out["lipschitz"] = analysis.lipschitz_uniformity(cfg, art, records)
        timings["lipschitz"] = time.perf_counter() - t0
    if "spectrum" in wanted:
        t0 = time.perf_counter()
        stage_out["spectrum"] = analysis.spectrum_study(cfg, art, records)
        timings["spectrum"] = time.perf_counter() - t0
    if "probes" in wanted:
        t0 = time.perf_counter()
        stage_out["probes"] = analysis.probe_study(cfg, art, records)
        timings["probes"] = time.perf_counter() - t0

    return RunReport(
        version=__version__, kind=cfg.kind, config_echo=cfg.echo,
        cell=_cell_report(cfg, art),
        converge=_jsonable(stage_out["converge"], "converge"),
        lipschitz=_jsonable(stage_out["lipschitz"], "lipschitz"),
        spectrum=_jsonable(stage_out["spectrum"], "spectrum"),
        probes=_jsonable(stage_out["probes"], "probes"),
        timings=timings)


# ---------------------------------------------------------------------------
# plot series
# ---------------------------------------------------------------------------

def _series_of(report: RunReport):
    """(experiment, series, eps list, value list) for every present series."""
    out = []

    def stage_records(stage):
        payload = getattr(report, stage)
        return None if "skipped" in payload else payload

    conv = stage_records("converge")
    if conv is not None:
        eps = [r["eps_float"] for r in conv["records"]]
        out.append(("converge", "grad", eps, [r["E_grad"] for r in conv["records"]]))
        out.append(("converge", "l2", eps, [r["E_L2"] for r in conv["records"]]))

    lip = stage_records("lipschitz")
    if lip is not None:
        eps = [config.Fraction(e) for e in lip["eps_values"]]
        for series, key in (("rinf", "r_inf"), ("rp2", "r_p2"), ("rp4", "r_p4")):
            pairs = [(float(e), v) for e, v in zip(eps, lip[key]) if v is not None]
            if pairs:
                out.append(("lipschitz", series,
                            [p[0] for p in pairs], [p[1] for p in pairs]))

    spec = stage_records("spectrum")
    if spec is not None:
        eps = [float(config.Fraction(e)) for e in spec["eps_values"]]
        out.append(("spectrum", "residual", eps, [r[0] for r in spec["residuals"]]))

    prob = stage_records("probes")
    if prob is not None:
        eps = [float(config.Fraction(e)) for e in prob["eps_values"]]
        out.append(("probes", "poincare", eps, prob["c_p"]))
        out.append(("probes", "sobolev", eps, prob["sobolev"]))

    return out


def emit_plot_data(report: RunReport, out_dir: str) -> list:
    """Write one `<experiment>_<series>.csv` per series; returns the paths.

    Header row ``epsilon,value``; 12 significant digits; rows in ladder
    order.  Emitting the same report twice produces byte-identical files.
    """
    paths = []
    for experiment, series, eps, values in _series_of(report):
        lines = ["epsilon,value"]
        lines += ["%.12g,%.12g" % (e, v) for e, v in zip(eps, values)]
        path = os.path.join(out_dir, f"{experiment}_{series}.csv")
        _write_text(path, "\n".join(lines) + "\n")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def run_experiment(config_path: str, out_override=None, seed_override=None,
                   workers_override=None, kind_override=None):
    """Full pipeline: config file in, (RunReport, written paths) out."""
    cfg = config.load_config(config_path, out_override=out_override,
                             seed_override=seed_override,
                             workers_override=workers_override)
    if kind_override is not None and kind_override != cfg.kind:
        echo = {section: dict(options) for section, options in cfg.echo.items()}
        echo["experiment"]["kind"] = kind_override
        cfg = config.config_from_echo(echo, out_dir=cfg.out_dir)
    report = _execute(cfg)

    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {cfg.out_dir}: {exc}") from None
    body = dataclasses.asdict(report)
    timings = body.pop("timings")
    report_path = os.path.join(cfg.out_dir, "report.json")
    _write_text(report_path, json.dumps(_jsonable(body), indent=2,
                                        sort_keys=True) + "\n")
    paths = [report_path]
    paths += emit_plot_data(report, cfg.out_dir)
    _write_text(os.path.join(cfg.out_dir, "timings.json"),
                json.dumps(_jsonable(timings, "timings"), indent=2,
                           sort_keys=True) + "\n")
    return report, paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="perfhom",
        description="Homogenization experiments for degenerate elliptic "
                    "operators on perforated planar domains.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "execute the configured experiment"),
                       ("cell", "cell quantities only (correctors, tensor)")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="experiment config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=None,
                       help="concurrent eps-instances")
        p.add_argument("--seed", type=int, default=None, help="probe seed override")
    check = sub.add_parser("check", help="run the built-in acceptance suite")
    check.add_argument("--quick", action="store_true",
                       help="skip the long-running ladder criteria")
    args = parser.parse_args(argv)

    try:
        if args.command == "check":
            from . import acceptance
            return 0 if acceptance.run_all(quick=args.quick) else 1
        _, paths = run_experiment(
            args.config, out_override=args.out, seed_override=args.seed,
            workers_override=args.workers,
            kind_override="CellOnly" if args.command == "cell" else None)
        for path in paths:
            print(path)
        return 0
    except PerfhomError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigValidationError):
            record["field"] = exc.field
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
