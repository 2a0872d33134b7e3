"""
Monotonicity Tests and Reconstruction
Loewner-order tests of candidate inclusions against measured ND data and the
intersection of passing candidates
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed

from .coeff import SUPPORT_TOL, CoefficientBounds, MatrixField, support
from .errors import ValidationError
from .forward import assemble_and_factor
from .mesh import (GammaSpec, Mesh, RegionMask, admissible_test_inclusion, boundary_distance,
                   check_mask)
from .ndmap import (BoundaryBasis, NDOperator, background_operator, boundary_basis, compute_nd,
                    extreme_operators, generalized_eigenvalues, hermitian_split,
                    linearized_test_operators, nonlinear_test_operators)

logger = logging.getLogger(__name__)

METHODS = ("nonlinear", "linearized", "corollary", "extreme")
ONE_SIDED = ("both", "upper_only", "lower_only")
RELATIVE_TOL = 1e-9


def is_psd(H: NDOperator, tol: float) -> Tuple[bool, float]:
    """(min generalized eigenvalue of (H, Gram) ≥ -tol, that eigenvalue)."""
    if tol < 0.0:
        raise ValidationError("mono: tolerance must be non-negative")
    if not H.is_hermitian(1e-8):
        raise ValidationError(f"mono: operator {H.label!r} is not Hermitian "
                              f"(defect {H.hermitian_defect():.2e})")
    sym = (H.matrix + H.matrix.conj().T) / 2.0
    k = H.dimension
    min_eig = float(scipy.linalg.eigh(sym, H.gram, eigvals_only=True, subset_by_index=[0, 0])[0]) if k else 0.0
    return min_eig >= -tol, min_eig


def default_tolerance(data: NDOperator) -> float:
    """1e-9 times the largest |generalized eigenvalue| of the data."""
    data_r, _ = hermitian_split(data)
    return RELATIVE_TOL * float(np.abs(generalized_eigenvalues(data_r)).max())


@dataclass
class InequalityResult:
    name: str
    side: str
    min_eig: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TestReport:
    __test__ = False

    candidate_id: int
    method: str
    inequalities: List[InequalityResult]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.inequalities)

    def min_eig(self, side: str) -> Optional[float]:
        values = [r.min_eig for r in self.inequalities if r.side == side]
        return min(values) if values else None

    def to_dict(self) -> dict:
        return {"candidate_id": self.candidate_id, "method": self.method,
                "tolerance": self.tolerance, "passed": self.passed,
                "inequalities": [r.to_dict() for r in self.inequalities]}


@dataclass
class ReconResult:
    method: str
    passing_ids: List[int]
    mask: RegionMask
    reports: List[TestReport]
    tolerance: float
    one_sided: str = "both"
    warning: Optional[str] = None

    def to_dict(self) -> dict:
        return {"method": self.method, "one_sided": self.one_sided, "tolerance": self.tolerance,
                "warning": self.warning, "passing_ids": list(self.passing_ids),
                "mask_count": self.mask.count,
                "reports": [r.to_dict() for r in self.reports]}


@dataclass(eq=False)
class TestContext:
    """Everything a candidate test needs besides the data and the candidate."""

    __test__ = False

    mesh: Mesh
    gamma: GammaSpec
    background: MatrixField
    bounds: CoefficientBounds
    basis: Optional[BoundaryBasis] = None

    def __post_init__(self):
        if self.basis is None:
            self.basis = boundary_basis(self.mesh, self.gamma)

    @cached_property
    def M(self) -> RegionMask:
        return support(self.background.imag_part)

    @cached_property
    def background_real(self) -> NDOperator:
        return background_operator(self.mesh, self.background, self.gamma, self.basis)

    def prepare(self, method: str) -> None:
        """Warm the shared caches before a concurrent sweep."""
        _ = self.M
        if method in ("linearized", "corollary"):
            _ = self.background_real

    def simulate(self, A: MatrixField, label: str = "Λ(A_D)") -> NDOperator:
        """Synthetic measurement Λ(A) on the context's boundary basis."""
        return compute_nd(assemble_and_factor(self.mesh, A, self.gamma), basis=self.basis, label=label)


def _check_method(method: str, one_sided: str, context: TestContext) -> None:
    if method not in METHODS:
        raise ValidationError(f"mono: unknown method {method!r} (expected one of {', '.join(METHODS)})")
    if one_sided not in ONE_SIDED:
        raise ValidationError(f"mono: one_sided must be one of {', '.join(ONE_SIDED)}")
    if method in ("corollary", "extreme"):
        skew = MatrixField(context.background.imag_part).hnorm()
        if skew > SUPPORT_TOL:
            raise ValidationError(
                f"mono: the {method} method requires a self-adjoint background "
                f"(A0^I = 0), but ‖A0^I‖ = {skew:.3e}")


def _inequalities(method: str, data_r: NDOperator, C: RegionMask,
                  context: TestContext) -> List[Tuple[str, str, Callable[[], NDOperator]]]:
    mesh, A0, bounds, gamma, basis = (context.mesh, context.background, context.bounds,
                                      context.gamma, context.basis)
    cache: Dict[str, Any] = {}

    def nonlinear():
        if "nl" not in cache:
            cache["nl"] = nonlinear_test_operators(mesh, A0, C, bounds, gamma, basis)
        return cache["nl"]

    def linearized():
        if "lin" not in cache:
            cache["lin"] = linearized_test_operators(mesh, A0, C, bounds, gamma, context.background_real)
        return cache["lin"]

    def extreme():
        if "ext" not in cache:
            cache["ext"] = extreme_operators(mesh, A0, C, gamma, basis)
        return cache["ext"]

    nonlinear_pair = [
        ("Λ_C^- ⪰ Λ^R(A_D)", "lower", lambda: nonlinear().minus - data_r),
        ("Λ^R(A_D) ⪰ Λ_C^+ + DΛ⁺_{M∖C}", "upper",
         lambda: data_r - nonlinear().plus - nonlinear().skew_correction),
    ]
    linearized_pair = [
        ("DΛ_C^- ⪰ Λ^R(A_D) - Λ(A0^R)", "lower",
         lambda: linearized().minus - (data_r - linearized().background)),
        ("Λ^R(A_D) - Λ(A0^R) ⪰ DΛ_C^+ + DΛ_{M∖C}", "upper",
         lambda: data_r - linearized().background - linearized().plus - linearized().skew),
    ]
    if method == "nonlinear":
        return nonlinear_pair
    if method == "linearized":
        return linearized_pair
    if method == "corollary":
        return nonlinear_pair + linearized_pair
    return [
        ("Λ_C^∅ ⪰ Λ^R(A_D)", "lower", lambda: extreme().insulating - data_r),
        ("Λ^R(A_D) ⪰ Λ_∅^C", "upper", lambda: data_r - extreme().conducting),
    ]


def run_inclusion_test(method: str, data: NDOperator, C: RegionMask, context: TestContext,
                       candidate_id: int = 0, tol: Optional[float] = None,
                       one_sided: str = "both") -> TestReport:
    """Evaluate the method's Loewner inequalities for the test inclusion C."""
    _check_method(method, one_sided, context)
    check_mask(context.mesh, C, "C")
    admissible = admissible_test_inclusion(context.mesh, C, context.M,
                                           require_lipschitz=(method == "extreme"))
    if not admissible.admissible:
        raise ValidationError(
            f"mono: candidate {candidate_id} is not an admissible test inclusion: "
            + ", ".join(admissible.reasons))

    data_r, _ = hermitian_split(data)
    tol = default_tolerance(data) if tol is None else float(tol)
    results = []
    for name, side, build in _inequalities(method, data_r, C, context):
        if (one_sided == "upper_only" and side != "upper") or (one_sided == "lower_only" and side != "lower"):
            continue
        passed, min_eig = is_psd(build(), tol)
        results.append(InequalityResult(name, side, min_eig, passed))
    report = TestReport(candidate_id, method, results, tol)
    logger.debug("Candidate %d (%s): %s", candidate_id, method, "pass" if report.passed else "fail")
    return report


# --- candidate dictionaries --------------------------------------------------

@dataclass(frozen=True, eq=False)
class Candidate:
    candidate_id: int
    mask: RegionMask
    meta: Dict[str, Any] = field(default_factory=dict)


def _cap_masks(mesh: Mesh, n_dirs: int, n_offsets: int, margin: Optional[float]):
    if n_dirs < 1 or n_offsets < 1:
        raise ValidationError("mono: n_dirs and n_offsets must be at least 1")
    delta = 2.0 * mesh.max_edge_length if margin is None else float(margin)
    interior = boundary_distance(mesh, mesh.centroids) > delta
    interior &= ~np.any(mesh.boundary_node_flags[mesh.triangles], axis=1)
    if not interior.any():
        raise ValidationError(f"mono: no element lies farther than δ = {delta:g} from ∂Ω")
    for i in range(n_dirs):
        angle = 2.0 * math.pi * i / n_dirs
        s = mesh.centroids @ np.array([math.cos(angle), math.sin(angle)])
        for j in range(1, n_offsets + 1):
            t = float(np.quantile(s[interior], j / n_offsets))
            yield RegionMask(interior & (s <= t)), {"direction": i, "angle": angle,
                                                    "quantile": j / n_offsets, "offset": t}


def generate_candidates(mesh: Mesh, M: RegionMask, dictionary: Mapping[str, Any],
                        require_lipschitz: bool = False) -> List[Candidate]:
    """Admissible candidate inclusions from a half-space-cap or user-mask dictionary."""
    kind = dictionary.get("type", "halfspace_caps")
    if kind == "halfspace_caps":
        raw = _cap_masks(mesh, int(dictionary.get("n_dirs", 8)), int(dictionary.get("n_offsets", 8)),
                         dictionary.get("margin"))
    elif kind == "user_masks":
        raw = ((mask, {"source": index}) for index, mask in enumerate(dictionary["masks"]))
    else:
        raise ValidationError(f"mono: unknown dictionary type {kind!r}")

    candidates, seen = [], set()
    for mask, meta in raw:
        check_mask(mesh, mask, "candidate")
        key = mask.key()
        if mask.is_empty or key in seen:
            continue
        seen.add(key)
        report = admissible_test_inclusion(mesh, mask, M, require_lipschitz)
        if not report.admissible:
            logger.info("Dropped candidate %s: %s", meta, ", ".join(report.reasons))
            continue
        candidates.append(Candidate(len(candidates), mask, meta))
    if not candidates:
        raise ValidationError("mono: empty candidate dictionary after filtering")
    logger.info("Generated %d admissible candidates (%s)", len(candidates), kind)
    return candidates


# --- reconstruction ----------------------------------------------------------

def reconstruct(method: str, data: NDOperator, candidates: Sequence[Candidate], context: TestContext,
                tol: Optional[float] = None, one_sided: str = "both", jobs: int = 1) -> ReconResult:
    """Intersect every candidate that passes the method's test."""
    if not candidates:
        raise ValidationError("mono: reconstruction needs at least one candidate")
    _check_method(method, one_sided, context)
    tol = default_tolerance(data) if tol is None else float(tol)
    context.prepare(method)

    reports = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(run_inclusion_test)(method, data, c.mask, context, c.candidate_id, tol, one_sided)
        for c in candidates)
    reports = sorted(reports, key=lambda r: r.candidate_id)
    by_id = {c.candidate_id: c for c in candidates}
    passing = [r.candidate_id for r in reports if r.passed]

    warning = None
    flags = np.ones(context.mesh.n_triangles, dtype=bool)
    if passing:
        for cid in passing:
            flags &= by_id[cid].mask.element_flags
    else:
        warning = "no candidate passed; returning the whole domain"
        logger.warning("Reconstruction (%s): %s", method, warning)
    logger.info("Reconstruction (%s): %d of %d candidates pass", method, len(passing), len(reports))
    return ReconResult(method, passing, RegionMask(flags), reports, tol, one_sided, warning)


def calibrate_tolerance(context: TestContext, method: str, candidates: Sequence[Candidate],
                        safety: float = 10.0, one_sided: str = "both", jobs: int = 1) -> float:
    """Tolerance from a known-background run: safety × the worst negative min-eigenvalue seen."""
    data = context.simulate(context.background, label="Λ(A0)")
    floor = default_tolerance(data)
    result = reconstruct(method, data, candidates, context, tol=0.0, one_sided=one_sided, jobs=jobs)
    worst = min(r.min_eig for report in result.reports for r in report.inequalities)
    tol = max(floor, safety * max(0.0, -worst))
    logger.info("Calibrated tolerance %.3e (worst background eigenvalue %.3e)", tol, worst)
    return tol
