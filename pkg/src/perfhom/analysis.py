"""Convergence ladders, uniformity checks, and inequality probes.

The measurements all revolve around the first-order approximation

    w_eps = u_eps - u0 - eps * chi_l(x/eps) (d_l u0) eta_eps,

whose weighted energy decays at the homogenization rate when the cell
problems and the homogenized tensor are consistent.  The epsilon-ladder
keeps the per-cell resolution n fixed so the FEM error scales down with
eps and the fitted slope measures the homogenization rate, not mesh
refinement.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import cell_problem, fem, geometry, solvers
from . import mesh as meshmod
from . import weight as weightmod
from .config import ExperimentConfig, config_from_echo
from .errors import (ConfigValidationError, EigenIterationDivergence,
                     MeshLineageMismatch, SlopeUnreliable)
from .fem import IDENTITY
from .mesh import Mesh


# ---------------------------------------------------------------------------
# first-order approximation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstOrderField:
    """w = u_eps - u0 - eps chi (grad u0) eta on the perforated mesh."""

    mesh: Mesh
    w: np.ndarray
    u_diff: np.ndarray          # u_eps - u0 (u0 interpolated), no corrector
    eta: np.ndarray             # boundary-layer cutoff at the vertices
    c1: float
    layer: tuple                # (c1 eps, 2 c1 eps)


def first_order_approximation(u_eps: solvers.EpsSolution,
                              u0: solvers.HomogenizedSolution,
                              correctors: cell_problem.CorrectorSet,
                              spec: geometry.PerforatedDomainSpec) -> FirstOrderField:
    """Assemble w_eps with the boundary-layer cutoff.

    chi is evaluated through the tiling's vertex index map (exact cell
    preimages); grad u0 comes from the recovered (area-averaged) nodal
    gradient interpolated at the perforated mesh's vertices; eta ramps
    linearly from 0 to 1 as dist(x, boundary) crosses [c1 eps, 2 c1 eps].
    """
    dm = u_eps.mesh
    lin = dm.lineage
    if lin is None:
        raise MeshLineageMismatch("first-order field needs a tiled domain mesh")
    if lin.cell_token != correctors.mesh_token:
        raise MeshLineageMismatch("correctors were built on a different cell mesh")
    if (lin.spec.cell.signature() != spec.cell.signature()
            or lin.spec.epsilon != spec.epsilon or lin.spec.omega != spec.omega):
        raise MeshLineageMismatch("domain mesh was tiled for a different spec")

    pts = dm.vertices
    u0_i = u0.mesh.interpolate(u0.u0, pts)
    g1 = u0.mesh.interpolate(u0.recovered_gradient[:, 0], pts)
    g2 = u0.mesh.interpolate(u0.recovered_gradient[:, 1], pts)
    chi = correctors.chi[lin.vertex_source]  # (nv, 2)

    w_len, h_len = float(spec.omega[0]), float(spec.omega[1])
    d = np.minimum(np.minimum(pts[:, 0], w_len - pts[:, 0]),
                   np.minimum(pts[:, 1], h_len - pts[:, 1]))
    eps = float(spec.epsilon)
    c1 = spec.cell.c0 / 4.0
    eta = np.clip(d / (c1 * eps) - 1.0, 0.0, 1.0)

    u_diff = u_eps.u - u0_i
    w = u_diff - eps * eta * (chi[:, 0] * g1 + chi[:, 1] * g2)
    return FirstOrderField(mesh=dm, w=w, u_diff=u_diff, eta=eta, c1=c1,
                           layer=(c1 * eps, 2.0 * c1 * eps))


# ---------------------------------------------------------------------------
# log-log rate fitting
# ---------------------------------------------------------------------------

def fit_loglog(x, y):
    """Least-squares fit log y = slope log x + intercept.

    Returns (slope, intercept, rms_residual) with residuals in natural-log
    units.  Raises SlopeUnreliable when the data cannot support a fit
    (fewer than two points, or nonpositive values).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size != x.size:
        raise SlopeUnreliable("rate fit needs at least two (x, y) pairs")
    if np.any(~np.isfinite(y)) or np.any(y <= 0.0) or np.any(x <= 0.0):
        raise SlopeUnreliable("rate fit data degenerate (nonpositive or nonfinite values)")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    rms = float(np.sqrt(np.mean((ly - fit) ** 2)))
    return float(coef[0]), float(coef[1]), rms


# ---------------------------------------------------------------------------
# shared per-epsilon pipeline
# ---------------------------------------------------------------------------

@dataclass
class CellArtifacts:
    cell: geometry.CellGeometry
    cell_mesh: Mesh
    weight: weightmod.WeightField
    correctors: cell_problem.CorrectorSet
    tensor: cell_problem.HomogenizedTensor


def build_cell_artifacts(cfg: ExperimentConfig) -> CellArtifacts:
    cm = meshmod.triangulate_cell(cfg.cell, cfg.n)
    if cfg.weight_mode == "ground_state":
        w = weightmod.ground_state_weight(cfg.cell, cm, cfg.coefficient)
    else:
        w = weightmod.distance_weight(cfg.cell, cm)
    cors = cell_problem.solve_correctors(cm, cfg.coefficient, w, cfg.solve_spec)
    tensor = cell_problem.homogenized_matrix(cm, cfg.coefficient, w, cors)
    return CellArtifacts(cell=cfg.cell, cell_mesh=cm, weight=w,
                         correctors=cors, tensor=tensor)


def _eps_record(cfg: ExperimentConfig, art: CellArtifacts, eps: Fraction,
                stages) -> dict:
    """Everything the studies need at a single epsilon, as plain data."""
    N = eps.denominator
    dspec = geometry.build_perforated_domain(cfg.cell, cfg.omega, N)
    dm = meshmod.tile_domain_mesh(art.cell_mesh, dspec)
    phi = weightmod.evaluate_weight_on_domain(art.weight, dspec, dm)
    rec = {"eps": str(eps), "eps_float": float(eps), "n_vertices": dm.n_vertices}

    needs_solve = "converge" in stages or "lipschitz" in stages
    if needs_solve:
        sol = solvers.solve_eps_problem(dm, cfg.coefficient, phi,
                                        (cfg.rhs_form, cfg.f, cfg.F), cfg.solve_spec)
        rec.update(energy=sol.energy, energy_constant=sol.energy_constant,
                   iterations=sol.iterations, residual=sol.residual)
        sup = fem.weighted_norm(dm, sol.u, phi, np.inf, gradient=True)
        p2 = fem.weighted_norm(dm, sol.u, phi, 2.0, gradient=True)
        p4 = fem.weighted_norm(dm, sol.u, phi, 4.0, gradient=True)
        if cfg.rhs_form == "weighted_source":
            f2 = solvers._field_norm(dm, cfg.f, 2.0)
            f4 = solvers._field_norm(dm, cfg.f, 4.0)
        else:
            f2 = (solvers._field_norm(dm, cfg.f, 2.0, vector=True)
                  + solvers._field_norm(dm, cfg.F, 2.0))
            f4 = (solvers._field_norm(dm, cfg.f, 4.0, vector=True)
                  + solvers._field_norm(dm, cfg.F, 4.0))
        rec.update(
            r_inf=float(sup / f4) if f4 > 0.0 else None,
            r_p2=float(p2 / f2) if f2 > 0.0 else None,
            r_p4=float(p4 / f4) if f4 > 0.0 else None,
        )

    if "converge" in stages:
        n_solid = max(4, round(cfg.n * N * cfg.solid_scale))
        sm = meshmod.triangulate_solid(cfg.omega, n_solid)
        F_eps = solvers.make_F_eps(art.cell_mesh, art.weight, eps, cfg.f)
        u0 = solvers.solve_homogenized(sm, art.tensor, F_eps, cfg.solve_spec)
        fof = first_order_approximation(sol, u0, art.correctors, dspec)
        rec.update(
            n_solid=n_solid,
            E_grad=fem.weighted_norm(dm, fof.w, phi, 2.0, gradient=True),
            E_L2=fem.weighted_norm(dm, fof.u_diff, phi, 2.0, gradient=False),
            E_grad_plain=fem.weighted_norm(dm, fof.u_diff, phi, 2.0, gradient=True),
        )

    if "probes" in stages:
        rec["c_p"] = poincare_probe(dm, phi)
        rec["sobolev_ratio"] = sobolev_linf_probe(dm, phi, cfg.trials, seed=cfg.seed)

    if "spectrum" in stages:
        # The low eigenvalues all sit near eps^-2 lambda_bar + mu_j, so plain
        # inverse iteration contracts at the ratio of nearly equal numbers and
        # stalls.  Shift halfway into the first homogenized eigenvalue: the
        # rectangle ground state of the constant-coefficient limit gives
        # mu_1 ~ pi^2 (a11/w^2 + a22/h^2) / a0, an estimate that is accurate
        # far beyond the factor-two margin used here, and the contraction
        # ratio of the shifted iteration no longer degrades as eps shrinks.
        w_om, h_om = cfg.omega
        mu1 = (np.pi ** 2 * (art.tensor.a_hat[0, 0] / w_om ** 2
                             + art.tensor.a_hat[1, 1] / h_om ** 2) / art.tensor.a0)
        shift = art.weight.lambda_bar / float(eps) ** 2 + 0.5 * mu1
        lam = solvers.dirichlet_spectrum_eps(dm, cfg.coefficient, cfg.spectrum_k,
                                             shift=shift)
        rec["lambda_eps"] = [float(v) for v in lam]

    return rec


def _eps_instance(echo: dict, eps_str: str, stages: tuple) -> dict:
    """Worker entry point: rebuilds config and cell artifacts locally."""
    cfg = config_from_echo(echo)
    art = build_cell_artifacts(cfg)
    return _eps_record(cfg, art, Fraction(eps_str), set(stages))


def run_ladder(cfg: ExperimentConfig, stages, art: CellArtifacts | None = None):
    """Per-epsilon records, in the config's epsilon order.

    With workers > 1 the instances run in separate processes; results are
    collected in submission order so concurrency never alters the report.
    """
    stages = set(stages)
    if cfg.workers > 1 and len(cfg.eps_list) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_eps_instance, cfg.echo, str(e), tuple(sorted(stages)))
                       for e in cfg.eps_list]
            return [f.result() for f in futures]
    if art is None:
        art = build_cell_artifacts(cfg)
    return [_eps_record(cfg, art, e, stages) for e in cfg.eps_list]


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    eps_values: list            # "1/4", ... in run order
    records: list               # per-eps dicts from _eps_record
    grad_slope: float
    grad_intercept: float
    grad_residual: float
    l2_slope: float
    l2_intercept: float
    l2_residual: float
    chi_max: float
    no_homogenization_contrast: bool
    corrector_improved: list    # per eps: E_grad < E_grad_plain
    l2_consistent: bool         # soft check: l2 slope >= grad slope - 0.1


def convergence_study(cfg: ExperimentConfig,
                      art: CellArtifacts | None = None,
                      records: list | None = None) -> ConvergenceReport:
    """Run the eps-ladder and fit the decay rates of the two error norms.

    A caller that already ran a fused ladder (several stages in one pass)
    can hand the per-eps records in to avoid re-solving.
    """
    if cfg.rhs_form != "weighted_source":
        raise ConfigValidationError(
            "rhs.form", "the convergence study homogenizes the weighted_source form")
    if art is None:
        art = build_cell_artifacts(cfg)
    if records is None:
        records = run_ladder(cfg, {"converge"}, art)
    chi_max = float(np.max(np.abs(art.correctors.chi)))

    eps_f = [r["eps_float"] for r in records]
    e_grad = [r["E_grad"] for r in records]
    e_l2 = [r["E_L2"] for r in records]
    gs, gi, gr = fit_loglog(eps_f, e_grad)
    ls, li, lr = fit_loglog(eps_f, e_l2)
    if max(gr, lr) > 0.1:
        raise SlopeUnreliable(
            f"log-log fit residual {max(gr, lr):.3f} exceeds 0.1; the ladder does "
            "not follow a power law")
    return ConvergenceReport(
        eps_values=[r["eps"] for r in records], records=records,
        grad_slope=gs, grad_intercept=gi, grad_residual=gr,
        l2_slope=ls, l2_intercept=li, l2_residual=lr,
        chi_max=chi_max,
        no_homogenization_contrast=chi_max <= 1e-12,
        corrector_improved=[bool(r["E_grad"] < r["E_grad_plain"]) for r in records],
        l2_consistent=bool(ls >= gs - 0.1))


# ---------------------------------------------------------------------------
# Lipschitz/uniform-regularity ladder
# ---------------------------------------------------------------------------

@dataclass
class LipschitzReport:
    eps_values: list
    r_inf: list                 # ||phi grad u||_inf / ||f||_4 per eps
    r_p2: list
    r_p4: list
    energy_constants: list
    spread_inf: float | None    # max/min across the ladder
    spread_p2: float | None
    spread_p4: float | None
    not_applicable: bool


def _spread(values):
    vals = [v for v in values if v is not None]
    if not vals or min(vals) <= 0.0:
        return None
    return float(max(vals) / min(vals))


def lipschitz_uniformity(cfg: ExperimentConfig,
                         art: CellArtifacts | None = None,
                         records: list | None = None) -> LipschitzReport:
    """Cross-eps boundedness of the weighted-gradient ratios."""
    if records is None:
        records = run_ladder(cfg, {"lipschitz"}, art)
    r_inf = [r["r_inf"] for r in records]
    r_p2 = [r["r_p2"] for r in records]
    r_p4 = [r["r_p4"] for r in records]
    return LipschitzReport(
        eps_values=[r["eps"] for r in records],
        r_inf=r_inf, r_p2=r_p2, r_p4=r_p4,
        energy_constants=[r["energy_constant"] for r in records],
        spread_inf=_spread(r_inf), spread_p2=_spread(r_p2), spread_p4=_spread(r_p4),
        not_applicable=all(v is None for v in r_inf + r_p2 + r_p4))


# ---------------------------------------------------------------------------
# inequality probes
# ---------------------------------------------------------------------------

def poincare_probe(domain_mesh: Mesh, phi_eps: np.ndarray) -> float:
    """C_P = lambda_min^{-1/2} of the weighted-stiffness / unweighted-mass pencil."""
    S = fem.assemble_weighted_stiffness(domain_mesh, IDENTITY, phi_eps, power=2)
    M = fem.assemble_weighted_mass(domain_mesh, None, power=0)
    values, _ = fem.smallest_eigenpairs(
        S, M, 1, dirichlet=domain_mesh.outer_dirichlet_vertices())
    lam = float(values[0])
    if lam <= 0.0:
        raise EigenIterationDivergence(f"nonpositive smallest eigenvalue {lam:g}")
    return lam ** -0.5


@dataclass(frozen=True)
class ExtensionProbe:
    c_e: float                  # max gradient-amplification ratio over trials
    linear_ratio: float         # the f = x_1 trial (analytic value known)
    n_trials: int


def extension_probe(cell_mesh: Mesh, trials: int, seed: int = 0) -> ExtensionProbe:
    """Harmonic-extension gradient amplification on the enlarged-hole cell.

    For each trial field on the punctured cell, solve the discrete Laplace
    problem inside the (enlarged) holes with the field as Dirichlet trace,
    and record ||grad E(f)||_{L2(Y)} / ||grad f||_{L2(Y_*')}.

    Trials are smooth low-frequency trig combinations: the continuum
    extension constant is a property of H^1 fields, and rough nodal noise
    would only probe a mesh-dependent (vanishing) ratio.
    """
    full = meshmod.fill_holes(cell_mesh)
    base = full.base_vertices
    pts = cell_mesh.vertices
    rng = np.random.default_rng(np.random.PCG64(seed))

    fields = [pts[:, 0].copy()]  # linear trial first: extension is exact
    for _ in range(trials):
        v = np.zeros(base)
        for _m in range(6):
            amp = rng.standard_normal()
            kx, ky = rng.integers(0, 4, size=2)
            px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
            v += amp * np.cos(2.0 * np.pi * kx * pts[:, 0] + px) \
                     * np.cos(2.0 * np.pi * ky * pts[:, 1] + py)
        fields.append(v)

    has_fill = full.n_vertices > base
    if has_fill:
        S = fem.assemble_weighted_stiffness(full, IDENTITY, None, power=0)
        fixed = np.arange(base)

    ratios = []
    linear_ratio = None
    for idx, fvals in enumerate(fields):
        den = fem.weighted_norm(cell_mesh, fvals, None, 2.0, gradient=True)
        scale = float(np.max(np.abs(fvals)))
        if den <= 1e-10 * max(scale, 1.0):
            continue  # (near-)constant trial: ratio 0/0, excluded
        if has_fill:
            lift = np.zeros(full.n_vertices)
            lift[:base] = fvals
            corr, _, _ = fem.solve_spd(S, -(S.csr @ lift), dirichlet=fixed)
            u = lift + corr
            num = fem.weighted_norm(full, u, None, 2.0, gradient=True)
        else:
            num = den  # nothing to extend
        ratio = float(num / den)
        if idx == 0:
            linear_ratio = ratio
        ratios.append(ratio)
    if not ratios:
        raise SlopeUnreliable("all extension trials were excluded as constant")
    return ExtensionProbe(c_e=float(max(ratios)),
                          linear_ratio=float(linear_ratio) if linear_ratio else float("nan"),
                          n_trials=len(ratios))


def sobolev_linf_probe(domain_mesh: Mesh, phi_eps: np.ndarray, trials: int,
                       seed: int = 0) -> float:
    """Max sampled ratio ||phi u||_inf / ||phi grad u||_4 over smooth trial fields.

    Trial fields vanish on the outer boundary (sine products); the sampled
    max is a lower bound for the embedding constant, and its stability
    across the eps-ladder is the diagnostic.
    """
    pts = domain_mesh.vertices
    w_len = float(np.max(pts[:, 0]))
    h_len = float(np.max(pts[:, 1]))
    sx = [np.sin(k * np.pi * pts[:, 0] / w_len) for k in range(1, 4)]
    sy = [np.sin(l * np.pi * pts[:, 1] / h_len) for l in range(1, 4)]
    rng = np.random.default_rng(np.random.PCG64(seed))
    best = 0.0
    for _ in range(trials):
        u = np.zeros(pts.shape[0])
        for k in range(3):
            for l in range(3):
                amp = rng.standard_normal() / ((k + 1) ** 2 + (l + 1) ** 2)
                u += amp * sx[k] * sy[l]
        num = fem.weighted_norm(domain_mesh, u, phi_eps, np.inf)
        den = fem.weighted_norm(domain_mesh, u, phi_eps, 4.0, gradient=True)
        if den <= 1e-12 * max(num, 1e-300):
            continue
        best = max(best, float(num / den))
    return best


@dataclass
class ProbeReport:
    eps_values: list
    c_p: list                   # Poincare constants per eps
    sobolev: list               # sampled embedding ratios per eps
    c_e: float                  # cell-level extension constant
    linear_ratio: float
    spread_cp: float | None
    spread_sobolev: float | None


def probe_study(cfg: ExperimentConfig, art: CellArtifacts | None = None,
                records: list | None = None) -> ProbeReport:
    if records is None:
        records = run_ladder(cfg, {"probes"}, art)
    enlarged = cfg.cell.enlarged()
    em = meshmod.triangulate_cell(enlarged, cfg.enlarged_n)
    ext = extension_probe(em, cfg.trials, seed=cfg.seed)
    c_p = [r["c_p"] for r in records]
    sob = [r["sobolev_ratio"] for r in records]
    return ProbeReport(eps_values=[r["eps"] for r in records],
                       c_p=c_p, sobolev=sob,
                       c_e=ext.c_e, linear_ratio=ext.linear_ratio,
                       spread_cp=_spread(c_p), spread_sobolev=_spread(sob))


# ---------------------------------------------------------------------------
# spectral study
# ---------------------------------------------------------------------------

def spectrum_study(cfg: ExperimentConfig,
                   art: CellArtifacts | None = None,
                   records: list | None = None) -> solvers.SpectralReport:
    """Check lambda_eps^j ~ eps^-2 lambda_bar + mu_j across the ladder.

    lambda_bar comes from the ground-state weight on the same cell mesh
    used for tiling; the 2D stiffness form is scale-invariant, so the
    eps^-2-scaled cell eigenvalue cancels the discretization error of the
    leading term and the residual isolates the O(eps) correction.
    """
    if cfg.weight_mode != "ground_state":
        raise ConfigValidationError(
            "weight.mode", "the spectral study needs the ground_state weight")
    if art is None:
        art = build_cell_artifacts(cfg)
    lam_bar = art.weight.lambda_bar
    sm = meshmod.triangulate_solid(cfg.omega, cfg.spectrum_solid_n)
    mu = solvers.homogenized_spectrum(sm, art.tensor, cfg.spectrum_k)

    if records is None:
        records = run_ladder(cfg, {"spectrum"}, art)
    residuals = []
    for r in records:
        e = r["eps_float"]
        lam = np.asarray(r["lambda_eps"])
        residuals.append(np.abs(lam - lam_bar / e ** 2 - mu[:lam.size]))
    slope, _, _ = fit_loglog([r["eps_float"] for r in records],
                             [res[0] for res in residuals])
    return solvers.SpectralReport(
        eps_values=[r["eps"] for r in records],
        lambda_eps=[r["lambda_eps"] for r in records],
        lambda_bar=float(lam_bar), mu0=mu,
        residuals=[res.tolist() for res in residuals],
        slope=slope)
