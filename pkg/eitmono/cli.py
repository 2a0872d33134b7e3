"""
EIT Monotonicity Command Line
Runs one pipeline stage per subcommand and writes its artifacts, a config echo
and a hashed manifest into the run directory
"""

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .coeff import (MatrixField, build_phantom, check_assumptions, matrix_bound_checks,
                    random_admissible_field)
from .config import (LOG_LEVELS, RunConfig, apply_environment, apply_overrides, build_bounds,
                     build_gamma, build_phantom_spec, build_run_mesh, load_config, parse_matrix,
                     resolve_mask, validate_config)
from .data_exporter import EITDataExporter
from .errors import SolverError, ValidationError
from .forward import assemble_and_factor, energy_integral, fourier_current, l2_gradient_norm, solve_neumann
from .locpot import localized_current
from .mesh import RegionMask
from .mono import (RELATIVE_TOL, TestContext, calibrate_tolerance, default_tolerance,
                   generate_candidates, reconstruct, run_inclusion_test)
from .ndmap import compute_nd, generalized_eigenvalues, gram_norm
from .verify import (general_mono_bounds, improved_mono_bounds, loewner_product_check,
                     remainder_chain_check, sample_mono_bounds)
from .visualizer import EITVisualizer

logger = logging.getLogger(__name__)

COMMANDS = ("mesh", "phantom", "forward", "ndmap", "test", "reconstruct", "locpot", "verify")

# Settings that change how a run executes but never what it computes.
RUNTIME_KEYS = ("jobs", "log_level", "output_dir", "plots")


def _banner(title: str) -> None:
    print(f"\n{title}")
    print("=" * max(30, len(title)))


class PipelineRun:
    """Shared state of one run: the mesh, Γ, phantom and artifact writers."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.exporter = EITDataExporter(config.output_dir)
        self.visualizer = EITVisualizer(config.output_dir) if config.plots else None

        _banner("📥 Step 1: Building Mesh and Coefficients")
        self.mesh = build_run_mesh(config)
        self.gamma = build_gamma(config, self.mesh)
        self.phantom = build_phantom_spec(config, self.mesh)
        self.A0 = self.phantom.background
        self.AD, self.D, self.M = build_phantom(self.phantom, self.mesh)
        self.bounds = build_bounds(config, self.AD, self.A0)
        print(f"🔺 Mesh: {self.mesh.n_nodes:,} nodes, {self.mesh.n_triangles:,} triangles")
        print(f"📏 Γ: {self.gamma.n_edges} edges, arc length {self.gamma.arc_length:.4f}")
        print(f"🎯 Inclusion D: {self.D.count} elements, M = supp(A0^I): {self.M.count} elements")

    def context(self) -> TestContext:
        return TestContext(self.mesh, self.gamma, self.A0, self.bounds)

    def disk_reference(self, A: MatrixField):
        """Radius / σ when the exact disk spectrum R/(σn) applies, else None."""
        spec = self.config.mesh
        if spec.get("type") != "disk" or self.config.gamma not in (None, "full"):
            return None
        sigma = A.values[0, 0, 0]
        if not np.allclose(A.values, sigma * np.eye(2), atol=1e-14) or abs(sigma.imag) > 0.0:
            return None
        return float(spec.get("radius", 1.0)) / float(sigma.real)

    def tolerance(self, context: TestContext, data, candidates) -> float:
        settings = self.config.tolerance
        if settings.get("absolute") is not None:
            return float(settings["absolute"])
        if settings.get("calibrate"):
            return calibrate_tolerance(context, self.config.method, candidates,
                                       float(settings.get("safety", 10.0)), self.config.one_sided,
                                       self.config.jobs)
        relative = float(settings.get("relative", RELATIVE_TOL))
        return default_tolerance(data) * relative / RELATIVE_TOL

    def finish(self) -> None:
        config = self.config.to_dict()
        for key in RUNTIME_KEYS:
            config.pop(key)
        self.exporter.write_json("config.json", config)
        self.exporter.write_manifest()
        print(f"\n📁 Artifacts written to {self.config.output_dir}")


# --- subcommands ------------------------------------------------------------

def cmd_mesh(run: PipelineRun) -> int:
    mesh, gamma = run.mesh, run.gamma
    run.exporter.write_mesh(mesh)
    run.exporter.write_json("mesh_summary.json", {
        "n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles,
        "n_boundary_edges": mesh.n_boundary_edges, "max_edge_length": mesh.max_edge_length,
        "total_area": mesh.total_area, "perimeter": mesh.perimeter,
        "gamma_edges": gamma.n_edges, "gamma_arc_length": gamma.arc_length})
    return 0


def cmd_phantom(run: PipelineRun) -> int:
    _banner("📊 Step 2: Phantom and Assumptions")
    config, mesh = run.config, run.mesh
    ball = config.assumptions.get("ball")
    report = check_assumptions(run.phantom, mesh, run.gamma,
                               int(config.assumptions.get("collar_depth", 2)),
                               resolve_mask(config, mesh, ball) if ball else None, run.bounds)
    run.exporter.write_mask(run.D, "mask_D.csv")
    run.exporter.write_pgm(mesh, run.D, "mask_D.pgm")
    run.exporter.write_mask(run.M, "mask_M.csv")
    run.exporter.write_json("phantom.json", {
        "D_elements": run.D.count, "D_area": run.D.area(mesh), "M_elements": run.M.count,
        "bounds": run.bounds.to_dict(), "assumptions": report.to_dict(),
        "matrix_bounds": matrix_bound_checks(run.A0, run.AD, run.bounds)})
    if run.visualizer:
        run.visualizer.plot_mask(mesh, run.D, "mask_D.png", title="Inclusion D")
    print(f"{'✅' if report.holds else '⚠️ '} Assumptions {'hold' if report.holds else 'do not all hold'}")
    return 0


def cmd_forward(run: PipelineRun) -> int:
    _banner("📊 Step 2: Forward Solve")
    settings = run.config.forward
    f = fourier_current(run.mesh, run.gamma, int(settings.get("mode", 1)), settings.get("kind", "cos"))
    u = solve_neumann(assemble_and_factor(run.mesh, run.AD, run.gamma), f)
    run.exporter.write_solution(run.mesh, u.values)
    run.exporter.write_current(f.values, run.gamma.edge_indices)
    run.exporter.write_json("forward.json", {
        "mode": settings.get("mode", 1), "kind": settings.get("kind", "cos"),
        "pairing": u.pairing(f), "trace_mean": u.trace_mean(),
        "energy": energy_integral(u, u, run.AD), "grad_l2_norm": l2_gradient_norm(u)})
    print(f"⚡ ⟨f, Λf⟩ = {u.pairing(f):.6g}")
    return 0


def cmd_ndmap(run: PipelineRun) -> int:
    _banner("📊 Step 2: Neumann-to-Dirichlet Operator")
    L = compute_nd(assemble_and_factor(run.mesh, run.AD, run.gamma), label="Λ(A_D)")
    adjoint = compute_nd(assemble_and_factor(run.mesh, run.AD.adjoint(), run.gamma), basis=L.basis,
                         label="Λ(A_D*)")
    scale = max(1.0, float(np.abs(L.matrix).max()))
    residual = float(np.abs(adjoint.matrix - L.matrix.conj().T).max()) / scale
    run.exporter.write_nd(L)
    run.exporter.write_gram(L.basis)
    spectrum = run.exporter.write_spectrum(L, disk_radius=run.disk_reference(run.AD))
    run.exporter.write_json("ndmap.json", {
        "dimension": L.dimension, "hermitian_defect": L.hermitian_defect(),
        "adjoint_residual": residual, "gram_norm": gram_norm(L),
        "leading_eigenvalues": generalized_eigenvalues(L)[:8]})
    if run.visualizer:
        run.visualizer.plot_spectrum(spectrum)
    print(f"📈 Leading eigenvalues: {', '.join(f'{v:.5f}' for v in spectrum['eigenvalue'][:6])}")
    return 0


def cmd_test(run: PipelineRun) -> int:
    _banner(f"🔍 Step 2: Inclusion Test ({run.config.method})")
    spec = run.config.test.get("candidate")
    if spec is None:
        raise ValidationError("config: test.candidate is required for the test subcommand")
    C = resolve_mask(run.config, run.mesh, spec)
    context = run.context()
    data = context.simulate(run.AD)
    tol = run.tolerance(context, data, [])
    report = run_inclusion_test(run.config.method, data, C, context, 0, tol, run.config.one_sided)
    run.exporter.write_mask(C, "candidate.csv")
    run.exporter.write_json("test_report.json", {**report.to_dict(), "D_subset_C": run.D.issubset(C)})
    for r in report.inequalities:
        print(f"   {'✅' if r.passed else '❌'} {r.name}: min eigenvalue {r.min_eig:.3e}")
    return 0


def _dictionary(run: PipelineRun) -> dict:
    dictionary = dict(run.config.dictionary)
    if dictionary.get("type") == "user_masks":
        dictionary["masks"] = [resolve_mask(run.config, run.mesh, spec) for spec in dictionary.get("masks", [])]
    return dictionary


def cmd_reconstruct(run: PipelineRun) -> int:
    config = run.config
    _banner(f"🔍 Step 2: Reconstruction ({config.method})")
    context = run.context()
    candidates = generate_candidates(run.mesh, context.M, _dictionary(run),
                                     require_lipschitz=(config.method == "extreme"))
    data = context.simulate(run.AD)
    tol = run.tolerance(context, data, candidates)
    result = reconstruct(config.method, data, candidates, context, tol, config.one_sided, config.jobs)

    run.exporter.write_mask(result.mask, "mask.csv")
    run.exporter.write_pgm(run.mesh, result.mask, "mask.pgm")
    offsets = run.exporter.write_offsets(result.reports, candidates)
    contains = run.D.issubset(result.mask)
    run.exporter.write_json("recon.json", {**result.to_dict(), "n_candidates": len(candidates),
                                           "mask_area": result.mask.area(run.mesh),
                                           "D_elements": run.D.count, "mask_contains_D": contains})
    if run.visualizer:
        run.visualizer.plot_mask(run.mesh, result.mask, title=f"Reconstruction ({config.method})", truth=run.D)
        run.visualizer.plot_offsets(offsets)
    print(f"🧩 {len(result.passing_ids)} of {len(candidates)} candidates pass (tol {tol:.2e})")
    print(f"{'✅' if contains else '⚠️ '} Reconstruction {'contains' if contains else 'misses part of'} D")
    return 0


def cmd_locpot(run: PipelineRun) -> int:
    _banner("🔦 Step 2: Localized Potentials")
    settings = run.config.locpot
    U = resolve_mask(run.config, run.mesh, settings.get("U", {"type": "all"}))
    B = resolve_mask(run.config, run.mesh, settings.get("B", {"type": "ball", "center": [0.0, 0.0],
                                                                 "radius": 0.2}))
    result = localized_current(run.mesh, run.A0, run.gamma, U, B, float(settings.get("reg", 1e-8)),
                               settings.get("ucp_condition", "assumed"),
                               float(settings.get("mesh_power", 0.0)))
    run.exporter.write_current(result.current.values, run.gamma.edge_indices, "locpot_current.csv")
    run.exporter.write_json("locpot.json", result.to_dict())
    print(f"🔦 Energy ratio E_B / E_outside = {result.ratio:.4g}")
    return 0


def cmd_verify(run: PipelineRun) -> int:
    _banner("🧪 Step 2: Verification Oracles")
    settings, mesh, gamma = run.config.verify, run.mesh, run.gamma
    alpha, beta, eta = (float(settings.get(k, d)) for k, d in (("alpha", 0.5), ("beta", 2.0), ("eta", 1.0)))
    sample = sample_mono_bounds(mesh, gamma, int(settings.get("n_pairs", 10)),
                                int(settings.get("n_currents", 5)), run.config.seed,
                                alpha, beta, eta, run.config.jobs)

    f = fourier_current(mesh, gamma, 1, "cos")
    witness = MatrixField.constant(mesh.n_triangles, parse_matrix(settings.get(
        "witness", {"re": [[1.0, 0.0], [0.0, 1.0]], "im": [[0.5, 0.0], [0.0, -0.5]]})))
    optimality = {"general": general_mono_bounds(witness, witness, f, mesh, gamma).to_dict(),
                  "improved": improved_mono_bounds(witness, witness, f, mesh, gamma).to_dict()}

    rng = np.random.default_rng([run.config.seed, 1])
    remainders = []
    for _ in range(int(settings.get("remainder_pairs", 3))):
        A1 = random_admissible_field(mesh.n_triangles, alpha, beta, eta, rng)
        A2 = random_admissible_field(mesh.n_triangles, alpha, beta, eta, rng)
        for j in (1, 2):
            remainders.append(remainder_chain_check(A1, A2, j, f, mesh, gamma,
                                                    int(settings.get("n_quad", 8))).to_dict())

    full = RegionMask.full(mesh.n_triangles)
    const = lambda m: MatrixField.constant(mesh.n_triangles, m)
    loewner = [
        loewner_product_check(const(1.0), const(2.0), full, 1.0, "i").to_dict(),
        loewner_product_check(const(2.0), const(1.0), full, 1.0, "ii").to_dict(),
        loewner_product_check(const(np.diag([1.0, 2.0])), const(np.diag([3.0, 4.0])), full, 1.0, "i").to_dict(),
    ]

    ok = (sample.all_hold and optimality["improved"]["holds"]
          and all(r["closes"] and r["intermediate_holds"] for r in remainders)
          and all(r["holds"] for r in loewner))
    run.exporter.write_json("verify.json", {"sample": sample.to_dict(), "optimality": optimality,
                                            "remainder": remainders, "loewner": loewner, "all_hold": ok})
    print(f"🧪 Worst relative margins: {sample.worst_general_margin:.2e} (general), "
          f"{sample.worst_improved_margin:.2e} (improved)")
    print(f"{'✅' if ok else '❌'} Verification {'passed' if ok else 'FAILED'}")
    return 0 if ok else 1


HANDLERS = {"mesh": cmd_mesh, "phantom": cmd_phantom, "forward": cmd_forward, "ndmap": cmd_ndmap,
            "test": cmd_test, "reconstruct": cmd_reconstruct, "locpot": cmd_locpot, "verify": cmd_verify}


def run(config: RunConfig, command: str = "reconstruct") -> int:
    """Run one subcommand on a validated config; returns the exit status."""
    if command not in HANDLERS:
        raise ValidationError(f"cli: unknown subcommand {command!r}")
    pipeline = PipelineRun(config)
    status = HANDLERS[command](pipeline)
    pipeline.finish()
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run config')
    common.add_argument('--method', help='nonlinear, linearized, corollary or extreme')
    common.add_argument('--one-sided', dest='one_sided', help='both, upper_only or lower_only')
    common.add_argument('--jobs', type=int, help='worker threads for candidate sweeps')
    common.add_argument('--output-dir', dest='output_dir', help='run directory')
    common.add_argument('--seed', type=int, help='seed for random fields and currents')
    common.add_argument('--tol', type=float, help='absolute Loewner tolerance')
    common.add_argument('--plots', action='store_true', help='also write PNG figures')
    common.add_argument('--log-level', dest='log_level', choices=LOG_LEVELS)

    parser = argparse.ArgumentParser(prog='eitmono',
                                     description='Monotonicity-based inclusion detection for EIT')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    print(f"🔬 EIT Monotonicity Toolkit v{__version__}")
    print("=" * 50)
    try:
        config = load_config(args.config) if args.config else RunConfig()
        apply_overrides(config, method=args.method, one_sided=args.one_sided, jobs=args.jobs,
                        output_dir=args.output_dir, seed=args.seed, tol=args.tol,
                        plots=True if args.plots else None, log_level=args.log_level)
        apply_environment(config)
        logging.basicConfig(level=config.log_level, format='%(levelname)s %(name)s: %(message)s')
        validate_config(config)
        return run(config, args.command)
    except ValidationError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except SolverError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 3
