"""
Verification Oracles
Numerical checks of the monotonicity bounds, the improved two-solution bounds,
the Taylor remainder chain and the matrix Loewner estimates on explicit solution pairs
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed

from .coeff import (SUPPORT_TOL, CoefficientBounds, MatrixField, matrix_bound_checks,
                    min_real_eigenvalue, random_admissible_field, support)
from .errors import SolverError, ValidationError
from .forward import (BoundaryCurrent, FactorizedSystem, assemble_and_factor, solve_neumann,
                      stiffness)
from .mesh import GammaSpec, Mesh, RegionMask, check_mask, dilate
from .ndmap import boundary_basis, compute_nd

logger = logging.getLogger(__name__)

MARGIN_TOL = 1e-9
IDENTITY_TOL = 1e-10


def _adjoint(values: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(values, -1, -2))


def _element_grads(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    return np.einsum("tia,ti->ta", mesh.gradients, u[mesh.triangles])


def _integral(mesh: Mesh, X: np.ndarray, gu: np.ndarray, gv: np.ndarray,
              region: Optional[RegionMask] = None) -> complex:
    """∫ X ∇u · conj(∇v) dx from element gradients."""
    density = np.einsum("ta,tab,tb->t", np.conj(gv), X, gu) * mesh.areas
    if region is not None:
        density = density[region.element_flags]
    return complex(density.sum())


def _grad_norm(mesh: Mesh, g: np.ndarray, region: Optional[RegionMask] = None) -> float:
    density = np.sum(np.abs(g) ** 2, axis=1) * mesh.areas
    if region is not None:
        density = density[region.element_flags]
    return float(np.sqrt(density.sum()))


def mixed_skew_term(A1: MatrixField, A2: MatrixField) -> MatrixField:
    """[A2^R (A1^R)^-1 A2^I]^I element-wise, with [X]^I = (X - X*) / 2i."""
    X = A2.real_part @ np.linalg.inv(A1.real_part) @ A2.imag_part
    return MatrixField((X - _adjoint(X)) / 2j)


class _PairFields:
    """Element-wise integrands shared by every current tested on one pair."""

    def __init__(self, A1: MatrixField, A2: MatrixField):
        R1, I1 = A1.real_part, A1.imag_part
        R2, I2 = A2.real_part, A2.imag_part
        R1inv = np.linalg.inv(R1)
        self.R1, self.I1, self.R2, self.I2 = R1, I1, R2, I2
        self.diff = R2 - R1
        self.skew1 = I1 @ R1inv @ I1
        self.ratio = R2 @ R1inv @ (R2 - R1)
        self.skew2 = I2 @ R1inv @ I2
        self.mixed = mixed_skew_term(A1, A2).values
        self.self_adjoint = A1.is_self_adjoint() and A2.is_self_adjoint()
        self.equal = bool(np.allclose(A1.values, A2.values, rtol=0.0, atol=1e-14))


@dataclass
class MonoBoundsReport:
    kind: str
    lhs: float
    lower_bound: float
    upper_bound: float
    terms: Dict[str, float]
    scale: float
    imag_residual: float
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def lower_margin(self) -> float:
        return self.lhs - self.lower_bound

    @property
    def upper_margin(self) -> float:
        return self.upper_bound - self.lhs

    @property
    def holds(self) -> bool:
        tol = MARGIN_TOL * self.scale
        return (self.lower_margin >= -tol and self.upper_margin >= -tol
                and all(self.checks.values()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lhs": self.lhs, "lower_bound": self.lower_bound,
                "upper_bound": self.upper_bound, "lower_margin": self.lower_margin,
                "upper_margin": self.upper_margin, "scale": self.scale,
                "imag_residual": self.imag_residual, "terms": dict(self.terms),
                "checks": dict(self.checks), "holds": self.holds}


def _bound_reports(mesh: Mesh, P: _PairFields, g1: np.ndarray, g2: np.ndarray,
                   p1: complex, p2: complex) -> Tuple[MonoBoundsReport, MonoBoundsReport]:
    raw = {
        "diff": _integral(mesh, P.diff, g2, g2),
        "skew_1": _integral(mesh, P.skew1, g2, g2),
        "ratio": _integral(mesh, P.ratio, g2, g2),
        "skew_2": _integral(mesh, P.skew2, g2, g2),
        "mixed": _integral(mesh, P.mixed, g2, g2),
    }
    imag_residual = max(abs(v.imag) for v in raw.values())
    terms = {k: v.real for k, v in raw.items()}
    lhs = p1.real - p2.real
    scale = max(abs(p1), abs(p2), *(abs(v) for v in terms.values()), np.finfo(float).tiny)

    general = MonoBoundsReport(
        "general", lhs,
        terms["diff"] - terms["skew_1"],
        terms["ratio"] + terms["skew_2"] - 2.0 * terms["mixed"],
        terms, scale, imag_residual,
        {"real_forms": imag_residual <= IDENTITY_TOL * scale})

    cross_1 = _integral(mesh, P.I1, g1, g2).imag
    cross_2 = _integral(mesh, P.I2, g1, g2).imag
    mixed_1 = _integral(mesh, P.R1, g1, g2).real - (_integral(mesh, P.R2, g2, g2).real + cross_1)
    mixed_2 = _integral(mesh, P.R2, g1, g2).real - (_integral(mesh, P.R1, g1, g1).real - cross_2)
    improved_terms = {"diff": terms["diff"], "ratio": terms["ratio"], "cross_1": cross_1,
                      "cross_2": cross_2, "mixed_identity_1": mixed_1, "mixed_identity_2": mixed_2}
    lower = terms["diff"] + 2.0 * cross_1
    upper = terms["ratio"] + 2.0 * cross_2
    tol = IDENTITY_TOL * scale
    checks = {"real_forms": imag_residual <= tol,
              "mixed_identity_1": abs(mixed_1) <= tol,
              "mixed_identity_2": abs(mixed_2) <= tol}
    if P.equal:
        checks["vanishes_for_equal_fields"] = abs(lower) <= MARGIN_TOL * scale and abs(upper) <= MARGIN_TOL * scale
    if P.self_adjoint:
        checks["reduces_to_general"] = (abs(lower - general.lower_bound) <= tol
                                        and abs(upper - general.upper_bound) <= tol)
    improved = MonoBoundsReport("improved", lhs, lower, upper, improved_terms, scale, imag_residual, checks)
    return general, improved


def _pair_systems(mesh: Mesh, A1: MatrixField, A2: MatrixField, gamma: GammaSpec,
                  systems: Optional[Tuple[FactorizedSystem, FactorizedSystem]]):
    if systems is not None:
        return systems
    for name, A in (("A1", A1), ("A2", A2)):
        if not min_real_eigenvalue(A) > 0.0:
            raise ValidationError(f"verify: {name} is not admissible")
    return assemble_and_factor(mesh, A1, gamma), assemble_and_factor(mesh, A2, gamma)


def _solve_pair(mesh, A1, A2, f, gamma, systems):
    s1, s2 = _pair_systems(mesh, A1, A2, gamma, systems)
    u1, u2 = solve_neumann(s1, f), solve_neumann(s2, f)
    return _bound_reports(mesh, _PairFields(A1, A2), u1.gradients(), u2.gradients(),
                          u1.pairing(f), u2.pairing(f))


def general_mono_bounds(A1: MatrixField, A2: MatrixField, f: BoundaryCurrent, mesh: Mesh,
                        gamma: GammaSpec,
                        systems: Optional[Tuple[FactorizedSystem, FactorizedSystem]] = None) -> MonoBoundsReport:
    """lower ≤ ⟨f, (Λ1^R - Λ2^R) f⟩ ≤ upper with both bounds built from u2 alone."""
    general, _ = _solve_pair(mesh, A1, A2, f, gamma, systems)
    logger.debug("General bounds: %.6g <= %.6g <= %.6g", general.lower_bound, general.lhs, general.upper_bound)
    return general


def improved_mono_bounds(A1: MatrixField, A2: MatrixField, f: BoundaryCurrent, mesh: Mesh,
                         gamma: GammaSpec,
                         systems: Optional[Tuple[FactorizedSystem, FactorizedSystem]] = None) -> MonoBoundsReport:
    """Bounds with the cross terms 2 Im∫ A_j^I ∇u1 · conj(∇u2); they vanish when A1 = A2."""
    _, improved = _solve_pair(mesh, A1, A2, f, gamma, systems)
    logger.debug("Improved bounds: %.6g <= %.6g <= %.6g", improved.lower_bound, improved.lhs,
                 improved.upper_bound)
    return improved


# --- Taylor remainder of the cross term --------------------------------------

@dataclass
class RemainderReport:
    j: int
    n_quad: int
    cross_term: float
    self_term: float
    samples: List[dict]
    taylor_error: float
    alpha: float
    C1: float
    C2: float
    norms: Dict[str, float]
    chain_bound: float
    final_bound: float
    localized_bound: float
    W_elements: int

    @property
    def intermediate_holds(self) -> bool:
        return all(s["holds"] for s in self.samples)

    @property
    def closes(self) -> bool:
        tol = MARGIN_TOL * max(self.final_bound, self.norms["grad_u2_omega"] ** 2 * self.norms["A_j_imag_M"])
        return abs(self.cross_term) <= self.final_bound + tol

    @property
    def slack(self) -> float:
        return float("inf") if self.cross_term == 0.0 else self.final_bound / abs(self.cross_term)

    def to_dict(self) -> dict:
        return {"j": self.j, "n_quad": self.n_quad, "cross_term": self.cross_term,
                "self_term": self.self_term, "samples": list(self.samples),
                "taylor_error": self.taylor_error, "alpha": self.alpha, "C1": self.C1, "C2": self.C2,
                "norms": dict(self.norms), "chain_bound": self.chain_bound,
                "final_bound": self.final_bound, "localized_bound": self.localized_bound,
                "localized_bound_checked": False, "W_elements": self.W_elements,
                "intermediate_holds": self.intermediate_holds, "closes": self.closes,
                "slack": self.slack}


def trace_constant(mesh: Mesh, gamma: GammaSpec) -> float:
    """Discrete norm of u ↦ u|_Γ from (mean-free) H¹ to L²(Γ): sqrt λ_max(Λ_Laplace, Gram)."""
    unit = MatrixField.constant(mesh.n_triangles, np.eye(2))
    L = compute_nd(assemble_and_factor(mesh, unit, gamma), label="Λ(I)")
    H = (L.matrix + L.matrix.conj().T) / 2.0
    top = scipy.linalg.eigh(H, L.gram, eigvals_only=True)[-1]
    return float(np.sqrt(max(top, 0.0)))


def flux_constant(mesh: Mesh, A: MatrixField, gamma: GammaSpec) -> float:
    """Discrete sup ‖f‖_{L²(Γ)} / ‖A ∇u_f‖_{L²(Ω)} over mean-free currents."""
    basis = boundary_basis(mesh, gamma)
    U = assemble_and_factor(mesh, A, gamma).solve_load(basis.load)
    K = stiffness(mesh, MatrixField(np.einsum("tba,tbc->tac", np.conj(A.values), A.values)))
    Q = U.conj().T @ (K @ U)
    low = scipy.linalg.eigh((Q + Q.conj().T) / 2.0, basis.gram, eigvals_only=True)[0]
    if not low > 0.0:
        raise SolverError("verify: flux form is not positive definite")
    return float(1.0 / np.sqrt(low))


def remainder_chain_check(A1: MatrixField, A2: MatrixField, j: int, f: BoundaryCurrent, mesh: Mesh,
                          gamma: GammaSpec, n_quad: int = 8,
                          W: Optional[RegionMask] = None) -> RemainderReport:
    """Bound Im∫ A_j^I ∇u1 · conj(∇u2) through the path A_t = A2 + t(A1 - A2).

    u1 - u2 = ∫₀¹ w_t dt, where w_t solves ∫ A_t ∇w_t · conj(∇v) = ∫ (A2 - A1) ∇u_t · conj(∇v).
    The asserted bound uses M = supp(A_j^I) over all of Ω; the W ∩ M form is reported only.
    """
    if j not in (1, 2):
        raise ValidationError("verify: j must be 1 or 2")
    if n_quad < 2:
        raise ValidationError("verify: n_quad must be at least 2")
    alpha = min(min_real_eigenvalue(A1), min_real_eigenvalue(A2))
    if not alpha > 0.0:
        raise ValidationError("verify: fields are not admissible")
    delta = A1 - A2
    S = support(delta.values)
    if W is None:
        W = dilate(mesh, S, 1)
    else:
        check_mask(mesh, W, "W")
        if not S.issubset(W):
            raise ValidationError("verify: W must contain supp(A1 - A2)")
    Aj = A1 if j == 1 else A2
    AjI = MatrixField(Aj.imag_part)
    M = support(AjI.values)

    s1, s2 = assemble_and_factor(mesh, A1, gamma), assemble_and_factor(mesh, A2, gamma)
    u1, u2 = solve_neumann(s1, f).values, solve_neumann(s2, f).values
    g1, g2 = _element_grads(mesh, u1), _element_grads(mesh, u2)
    cross = _integral(mesh, AjI.values, g1, g2).imag
    self_term = _integral(mesh, AjI.values, g2, g2).imag

    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    ts, ws = (nodes + 1.0) / 2.0, weights / 2.0
    K_step = stiffness(mesh, A2 - A1)
    norm_delta_W = delta.hnorm(W)
    increment = np.zeros_like(u1)
    samples = []
    u_norms_W = []
    for t, w in zip(ts, ws):
        system = assemble_and_factor(mesh, A2 + delta * t, gamma)
        u_t = solve_neumann(system, f).values
        w_t = system.solve_load(K_step @ u_t)
        increment += w * w_t
        gw, gu = _element_grads(mesh, w_t), _element_grads(mesh, u_t)
        w_norm, u_norm_W = _grad_norm(mesh, gw), _grad_norm(mesh, gu, W)
        rhs = norm_delta_W * u_norm_W / alpha
        samples.append({"t": float(t), "weight": float(w), "w_norm": w_norm,
                        "w_norm_M": _grad_norm(mesh, gw, M), "u_norm": _grad_norm(mesh, gu),
                        "u_norm_W": u_norm_W, "intermediate_bound": rhs,
                        "holds": w_norm <= rhs * (1.0 + MARGIN_TOL) + 1e-14})
        u_norms_W.append(u_norm_W)

    diff = u1 - u2 - increment
    if not np.all(np.isfinite(diff)):
        raise SolverError("verify: remainder quadrature diverged")
    reference = max(_grad_norm(mesh, g1 - g2), _grad_norm(mesh, g1), np.finfo(float).tiny)
    taylor_error = _grad_norm(mesh, _element_grads(mesh, diff)) / reference

    C1 = trace_constant(mesh, gamma)
    C2 = flux_constant(mesh, A2, gamma)
    norms = {
        "A_j_imag_M": AjI.hnorm(M),
        "A_j_imag_WM": AjI.hnorm(W & M),
        "delta_W": norm_delta_W,
        "A2_omega": A2.hnorm(),
        "grad_u2_omega": _grad_norm(mesh, g2),
        "grad_u2_M": _grad_norm(mesh, g2, M),
        "grad_u2_WM": _grad_norm(mesh, g2, W & M),
    }
    chain = norms["A_j_imag_M"] * norm_delta_W / alpha * float(np.dot(ws, u_norms_W)) * norms["grad_u2_M"]
    common = C1 * C2 / alpha ** 2 * norm_delta_W * norms["A2_omega"] * norms["grad_u2_omega"]
    final = common * norms["A_j_imag_M"] * norms["grad_u2_M"]
    localized = common * norms["A_j_imag_WM"] * norms["grad_u2_WM"]
    report = RemainderReport(j, n_quad, float(cross), float(self_term), samples, float(taylor_error),
                             alpha, C1, C2, norms, chain, final, localized, W.count)
    logger.info("Remainder chain (j=%d): |cross| = %.3e, bound = %.3e, Taylor error = %.2e",
                j, abs(cross), final, taylor_error)
    return report


# --- element-wise Loewner estimates ------------------------------------------

@dataclass
class LoewnerReport:
    case: str
    c: float
    alpha: float
    beta: float
    hypothesis_extreme: float
    hypothesis_holds: bool
    product_extreme: float
    required: float
    holds: bool
    isotropic: bool
    sharper_required: Optional[float] = None
    sharper_holds: Optional[bool] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def loewner_product_check(A1: MatrixField, A2: MatrixField, V: RegionMask, c: float, case: str) -> LoewnerReport:
    """Check A2 A1⁻¹ (A2 - A1) ⪰ cI (case i) or ⪯ -c(α/β)²I (case ii) on V.

    α is the lower bound of A2 and β the upper bound of A1 on V; isotropic pairs
    are also checked against -c(α/β).
    """
    if case not in ("i", "ii"):
        raise ValidationError("verify: case must be 'i' or 'ii'")
    if c < 0.0:
        raise ValidationError("verify: c must be non-negative")
    if V.element_flags.shape != (A1.n_elements,) or A2.n_elements != A1.n_elements:
        raise ValidationError("verify: V and the fields must share one element count")
    if V.is_empty:
        raise ValidationError("verify: V is empty")
    flags = V.element_flags
    for name, A in (("A1", A1), ("A2", A2)):
        if np.abs(A.imag_part[flags]).max() > SUPPORT_TOL:
            raise ValidationError(f"verify: {name} must be self-adjoint on V")

    R1, R2 = A1.real_part[flags], A2.real_part[flags]
    alpha = float(np.linalg.eigvalsh(R2)[:, 0].min())
    beta = float(np.linalg.eigvalsh(R1)[:, -1].max())
    step = np.linalg.eigvalsh(R2 - R1)
    P = R2 @ np.linalg.inv(R1) @ (R2 - R1)
    product = np.linalg.eigvalsh((P + _adjoint(P)) / 2.0)
    isotropic = A1.is_isotropic() and A2.is_isotropic()
    tol = 1e-12 * max(1.0, c, float(np.abs(product).max()))

    if case == "i":
        hyp = float(step[:, 0].min())
        hyp_ok = hyp >= c - tol
        extreme = float(product[:, 0].min())
        required = c
        report = LoewnerReport(case, c, alpha, beta, hyp, hyp_ok, extreme, required,
                               extreme >= required - tol, isotropic)
    else:
        hyp = float(step[:, -1].max())
        hyp_ok = hyp <= -c + tol
        extreme = float(product[:, -1].max())
        required = -c * (alpha / beta) ** 2
        report = LoewnerReport(case, c, alpha, beta, hyp, hyp_ok, extreme, required,
                               extreme <= required + tol, isotropic)
        if isotropic:
            report.sharper_required = -c * alpha / beta
            report.sharper_holds = extreme <= report.sharper_required + tol
    if not hyp_ok:
        logger.warning("Loewner case %s: hypothesis violated (extreme eigenvalue %.4g, c = %.4g)", case, hyp, c)
    return report


# --- randomized sweep --------------------------------------------------------

@dataclass
class SampleReport:
    seed: int
    n_pairs: int
    n_currents: int
    bounds: CoefficientBounds
    pairs: List[dict]

    @property
    def worst_general_margin(self) -> float:
        return min(p["general_margin"] for p in self.pairs)

    @property
    def worst_improved_margin(self) -> float:
        return min(p["improved_margin"] for p in self.pairs)

    @property
    def all_hold(self) -> bool:
        return all(p["holds"] for p in self.pairs)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n_pairs": self.n_pairs, "n_currents": self.n_currents,
                "bounds": self.bounds.to_dict(), "worst_general_margin": self.worst_general_margin,
                "worst_improved_margin": self.worst_improved_margin, "all_hold": self.all_hold,
                "pairs": list(self.pairs)}


def _sample_pair(mesh: Mesh, gamma: GammaSpec, basis, bounds: CoefficientBounds, seed: int,
                 pair_id: int, n_currents: int) -> dict:
    rng = np.random.default_rng([seed, pair_id])
    isotropic = pair_id % 4 == 3
    A1 = random_admissible_field(mesh.n_triangles, bounds.alpha, bounds.beta, bounds.eta, rng, isotropic)
    A2 = random_admissible_field(mesh.n_triangles, bounds.alpha, bounds.beta, bounds.eta, rng, isotropic)
    s1, s2 = assemble_and_factor(mesh, A1, gamma), assemble_and_factor(mesh, A2, gamma)
    coords = rng.standard_normal((basis.dimension, n_currents)) + 1j * rng.standard_normal((basis.dimension, n_currents))
    loads = basis.load @ coords
    U1, U2 = s1.solve_load(loads), s2.solve_load(loads)
    P = _PairFields(A1, A2)

    general_margin = improved_margin = np.inf
    holds = True
    for col in range(n_currents):
        b = loads[:, col]
        general, improved = _bound_reports(mesh, P, _element_grads(mesh, U1[:, col]),
                                           _element_grads(mesh, U2[:, col]),
                                           complex(np.vdot(b, U1[:, col])), complex(np.vdot(b, U2[:, col])))
        general_margin = min(general_margin, min(general.lower_margin, general.upper_margin) / general.scale)
        improved_margin = min(improved_margin, min(improved.lower_margin, improved.upper_margin) / improved.scale)
        holds = holds and general.holds and improved.holds

    matrix_checks = {**matrix_bound_checks(A1, A2, bounds)}
    mixed_max = float(mixed_skew_term(A1, A2).hnorm())
    if isotropic:
        matrix_checks["mixed_term_vanishes"] = mixed_max <= 1e-12
    holds = holds and all(v for k, v in matrix_checks.items() if k.endswith(("holds", "vanishes")))
    return {"pair": pair_id, "seed": [seed, pair_id], "isotropic": isotropic,
            "general_margin": float(general_margin), "improved_margin": float(improved_margin),
            "mixed_term_max": mixed_max, "matrix_checks": matrix_checks, "holds": bool(holds)}


def sample_mono_bounds(mesh: Mesh, gamma: GammaSpec, n_pairs: int = 100, n_currents: int = 10,
                       seed: int = 0, alpha: float = 0.5, beta: float = 2.0, eta: float = 1.0,
                       jobs: int = 1) -> SampleReport:
    """Random admissible pairs and currents; both bound sets must hold on every sample."""
    if n_pairs < 1 or n_currents < 1:
        raise ValidationError("verify: n_pairs and n_currents must be positive")
    bounds = CoefficientBounds(alpha, beta, eta)
    basis = boundary_basis(mesh, gamma)
    pairs = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(_sample_pair)(mesh, gamma, basis, bounds, seed, i, n_currents) for i in range(n_pairs))
    report = SampleReport(seed, n_pairs, n_currents, bounds, sorted(pairs, key=lambda p: p["pair"]))
    logger.info("Sampled %d pairs x %d currents: worst margins %.2e (general), %.2e (improved)",
                n_pairs, n_currents, report.worst_general_margin, report.worst_improved_margin)
    return report
