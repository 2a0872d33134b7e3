"""
Coefficient Module
Piecewise-constant 2x2 complex coefficient fields, their self-/skew-adjoint
parts, bounds, phantoms and the test and truncated coefficients built from them
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .mesh import (GammaSpec, Mesh, RegionMask, check_mask, components,
                   inner_collar, outer_shape)

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12
IDENTITY = np.eye(2, dtype=complex)


def matrix_from_reals(values: Sequence[float]) -> np.ndarray:
    """2x2 complex matrix from 8 reals: (re, im) per entry, row major."""
    v = np.asarray(values, dtype=float)
    if v.shape != (8,):
        raise ValidationError("coeff: a matrix value needs exactly 8 reals (re/im per entry)")
    return (v[0::2] + 1j * v[1::2]).reshape(2, 2)


def matrix_to_reals(matrix: np.ndarray) -> List[float]:
    m = np.asarray(matrix, dtype=complex).ravel()
    return [float(x) for pair in zip(m.real, m.imag) for x in pair]


def _hermitian_parts(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    adjoint = np.conj(np.swapaxes(values, -1, -2))
    return (values + adjoint) / 2.0, (values - adjoint) / 2j


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Per-element 2x2 complex coefficient A with cached A^R and A^I."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=complex)
        if values.ndim != 3 or values.shape[1:] != (2, 2):
            raise ValidationError("coeff: a matrix field must have shape (T, 2, 2)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, n_elements: int, matrix) -> "MatrixField":
        m = np.asarray(matrix, dtype=complex)
        if m.ndim == 0:
            m = m * IDENTITY
        return cls(np.broadcast_to(m, (n_elements, 2, 2)))

    @property
    def n_elements(self) -> int:
        return self.values.shape[0]

    @cached_property
    def real_part(self) -> np.ndarray:
        return _hermitian_parts(self.values)[0]

    @cached_property
    def imag_part(self) -> np.ndarray:
        return _hermitian_parts(self.values)[1]

    def adjoint(self) -> "MatrixField":
        return MatrixField(np.conj(np.swapaxes(self.values, -1, -2)))

    def where(self, mask: RegionMask, other) -> "MatrixField":
        """This field off ``mask`` and ``other`` (field or 2x2 matrix) on it."""
        other_values = other.values if isinstance(other, MatrixField) else np.asarray(other, dtype=complex)
        values = np.array(self.values)
        flags = mask.element_flags
        values[flags] = other_values[flags] if other_values.ndim == 3 else other_values
        return MatrixField(values)

    def restricted(self, mask: RegionMask) -> "MatrixField":
        values = np.array(self.values)
        values[~mask.element_flags] = 0.0
        return MatrixField(values)

    def __add__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.values + other.values)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.values - other.values)

    def __mul__(self, scalar) -> "MatrixField":
        return MatrixField(self.values * scalar)

    __rmul__ = __mul__

    def spectral_norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, ord=2, axis=(1, 2))

    def hnorm(self, region: Optional[RegionMask] = None) -> float:
        """sup over ``region`` of the element spectral norms (0 on an empty region)."""
        norms = self.spectral_norms()
        if region is not None:
            norms = norms[region.element_flags]
        return float(norms.max()) if norms.size else 0.0

    def is_self_adjoint(self, tol: float = SUPPORT_TOL) -> bool:
        return MatrixField(self.imag_part).hnorm() <= tol

    def is_isotropic(self, tol: float = 1e-14) -> bool:
        v = self.values
        scale = max(1.0, float(np.abs(v).max()))
        return bool(np.all(np.abs(v[:, 0, 1]) <= tol * scale) and np.all(np.abs(v[:, 1, 0]) <= tol * scale)
                    and np.all(np.abs(v[:, 0, 0] - v[:, 1, 1]) <= tol * scale))


def decompose(A: MatrixField) -> Tuple[MatrixField, MatrixField]:
    """Split A = A^R + i A^I into its two Hermitian parts."""
    return MatrixField(A.real_part), MatrixField(A.imag_part)


def check_admissible_field(A: MatrixField, c_min: float) -> bool:
    """True iff λ_min(A^R) ≥ c_min on every element."""
    if c_min <= 0.0:
        raise ValidationError("coeff: c_min must be positive")
    return bool(np.linalg.eigvalsh(A.real_part).min() >= c_min)


def min_real_eigenvalue(A: MatrixField) -> float:
    return float(np.linalg.eigvalsh(A.real_part).min())


@dataclass(frozen=True)
class CoefficientBounds:
    """Known bounds: αI ⪯ A^R ⪯ βI and ‖A^I‖ ≤ η."""

    alpha: float
    beta: float
    eta: float = 0.0

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta >= self.alpha and self.eta >= 0.0):
            raise ValidationError(
                f"coeff: invalid bounds alpha={self.alpha}, beta={self.beta}, eta={self.eta} "
                "(need 0 < alpha <= beta and eta >= 0)")

    @property
    def plus_value(self) -> float:
        return self.beta + self.eta ** 2 / self.alpha

    @property
    def minus_value(self) -> float:
        return self.alpha

    @property
    def linearized_minus_value(self) -> float:
        return self.beta ** 2 / self.alpha

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "eta": self.eta}


@dataclass(frozen=True)
class BoundsEstimate:
    bounds: CoefficientBounds
    norm_A: float
    norm_AR: float
    norm_AI: float

    def to_dict(self) -> dict:
        return {**self.bounds.to_dict(), "norm_A": self.norm_A,
                "norm_AR": self.norm_AR, "norm_AI": self.norm_AI}


def bounds_estimate(A: MatrixField, region: Optional[RegionMask] = None) -> BoundsEstimate:
    """α, β, η and the ℋ(V) norms of A, A^R, A^I over ``region``."""
    flags = np.ones(A.n_elements, dtype=bool) if region is None else region.element_flags
    if not flags.any():
        raise ValidationError("coeff: bounds requested on an empty region")
    eig_r = np.linalg.eigvalsh(A.real_part[flags])
    AR, AI = decompose(A)
    mask = RegionMask(flags)
    bounds = CoefficientBounds(float(eig_r[:, 0].min()), float(eig_r[:, -1].max()), AI.hnorm(mask))
    return BoundsEstimate(bounds, A.hnorm(mask), AR.hnorm(mask), AI.hnorm(mask))


def joint_bounds(*fields: MatrixField, region: Optional[RegionMask] = None) -> CoefficientBounds:
    """Bounds valid for every field at once."""
    estimates = [bounds_estimate(f, region).bounds for f in fields]
    return CoefficientBounds(min(b.alpha for b in estimates),
                             max(b.beta for b in estimates),
                             max(b.eta for b in estimates))


def truncation_threshold(bounds: CoefficientBounds) -> float:
    """Largest ε for which Λ^R(A_D) ⪰ Λ(A_ε) is guaranteed."""
    return 1.0 / (1.0 + (bounds.eta / bounds.alpha) ** 2)


def build_test_coeff(A0: MatrixField, C: RegionMask, bounds: CoefficientBounds, sign: str) -> MatrixField:
    """A_C^- = αI on C, A_C^+ = (β + η²/α)I on C, A0^R elsewhere."""
    if sign == "minus":
        value = bounds.minus_value
    elif sign == "plus":
        value = bounds.plus_value
    else:
        raise ValidationError(f"coeff: sign must be 'minus' or 'plus', got {sign!r}")
    return MatrixField(A0.real_part).where(C, value * IDENTITY)


def skew_penalty(A0: MatrixField, region: Optional[RegionMask] = None) -> MatrixField:
    """A0^I (A0^R)^-1 A0^I, optionally restricted to ``region``."""
    penalty = MatrixField(A0.imag_part @ np.linalg.inv(A0.real_part) @ A0.imag_part)
    return penalty if region is None else penalty.restricted(region)


def linearized_direction(A0: MatrixField, C: RegionMask, bounds: CoefficientBounds, sign: str) -> MatrixField:
    """Bracket of the linearized test operators, supported on C.

    plus: (β + η²/α)I - A0^R; minus: A0^R - (β²/α)I.
    """
    AR = A0.real_part
    if sign == "plus":
        values = bounds.plus_value * IDENTITY - AR
    elif sign == "minus":
        values = AR - bounds.linearized_minus_value * IDENTITY
    else:
        raise ValidationError(f"coeff: sign must be 'minus' or 'plus', got {sign!r}")
    return MatrixField(values).restricted(C)


def build_truncated_coeff(A0: MatrixField, AD_R: MatrixField, C: RegionMask, epsilon: float) -> MatrixField:
    """A_ε = A0 off C and ε^-1 A_D^R on C."""
    if not epsilon > 0.0:
        raise ValidationError("coeff: truncation epsilon must be positive")
    return A0.where(C, AD_R.values / epsilon)


# --- phantoms ---------------------------------------------------------------

@dataclass
class InclusionPiece:
    mask: RegionMask
    value: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=complex).reshape(2, 2)


@dataclass
class PhantomSpec:
    """Background A0, inclusion pieces and optional margins τ⁺, τ⁻."""

    background: MatrixField
    pieces: List[InclusionPiece] = field(default_factory=list)
    tau_plus: Optional[float] = None
    tau_minus: Optional[float] = None


def support(values: np.ndarray, tol: float = SUPPORT_TOL) -> RegionMask:
    return RegionMask(np.abs(values).max(axis=(1, 2)) > tol)


def build_phantom(spec: PhantomSpec, mesh: Mesh) -> Tuple[MatrixField, RegionMask, RegionMask]:
    """Assemble A_D from the pieces and derive D = supp(A_D - A0), M = supp(A0^I)."""
    A0 = spec.background
    if A0.n_elements != mesh.n_triangles:
        raise ValidationError("coeff: background field does not match the mesh")
    values = np.array(A0.values)
    owner = np.full(mesh.n_triangles, -1)
    for index, piece in enumerate(spec.pieces):
        check_mask(mesh, piece.mask, f"piece {index}")
        flags = piece.mask.element_flags
        for other in np.unique(owner[flags & (owner >= 0)]):
            if not np.allclose(spec.pieces[other].value, piece.value, rtol=0.0, atol=SUPPORT_TOL):
                raise ValidationError(
                    f"coeff: inclusion pieces {other} and {index} overlap with contradictory values")
        values[flags] = piece.value
        owner[flags] = index
    AD = MatrixField(values)
    D = support(AD.values - A0.values)
    M = support(A0.imag_part)
    logger.info("Phantom: |D| = %d elements, |M| = %d elements", D.count, M.count)
    return AD, D, M


@dataclass
class CaseReport:
    holds: bool
    tau_required: float
    tau_used: float
    extreme_on_collar: float
    margin: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AssumptionReport:
    bounds: CoefficientBounds
    d_compactly_contained: bool
    collar_size: int
    case_a: Optional[CaseReport]
    case_b: Optional[CaseReport]
    tau_plus_required_isotropic: Optional[float]
    s_reaches_gamma: bool
    s_details: dict
    ucp: str = "assumed, not checked"

    @property
    def holds(self) -> bool:
        case = any(c is not None and c.holds for c in (self.case_a, self.case_b))
        return case and self.s_reaches_gamma and self.d_compactly_contained

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.to_dict(),
            "d_compactly_contained": self.d_compactly_contained,
            "collar_size": self.collar_size,
            "case_a": self.case_a.to_dict() if self.case_a else None,
            "case_b": self.case_b.to_dict() if self.case_b else None,
            "tau_plus_required_isotropic": self.tau_plus_required_isotropic,
            "s_reaches_gamma": self.s_reaches_gamma,
            "s_details": self.s_details,
            "ucp": self.ucp,
            "holds": self.holds,
        }


def _s_check(mesh: Mesh, gamma: GammaSpec, D_out: RegionMask, D: RegionMask, M: RegionMask) -> dict:
    """Does the component of Ω∖(D∪M) bordering ∂D• reach Γ?"""
    flags = D_out.element_flags
    neighbours = (mesh.element_adjacency @ flags.astype(float) > 0) & ~flags
    free = ~(D | M)
    _, labels = components(mesh, free)
    touching = np.unique(labels[neighbours & free.element_flags])
    gamma_owners = mesh.boundary_owner[gamma.edge_indices]
    gamma_labels = set(int(x) for x in labels[gamma_owners] if x >= 0)
    neighbours_in_m = int(np.sum(neighbours & M.element_flags))
    reaches = (neighbours_in_m == 0 and touching.size == 1 and int(touching[0]) in gamma_labels)
    return {"reaches_gamma": bool(reaches), "neighbours_in_M": neighbours_in_m,
            "components_touching": int(touching.size)}


def check_assumptions(phantom: PhantomSpec, mesh: Mesh, gamma: GammaSpec, collar_depth: int = 2,
                      ball: Optional[RegionMask] = None,
                      bounds: Optional[CoefficientBounds] = None) -> AssumptionReport:
    """Report which margin case holds on the collar V of ∂D• and whether S reaches Γ."""
    A0 = phantom.background
    AD, D, M = build_phantom(phantom, mesh)
    bounds = bounds or joint_bounds(AD, A0)
    D_out = outer_shape(mesh, D)
    contained = not np.any(mesh.boundary_node_flags[mesh.triangles[D_out.element_flags]])
    V = inner_collar(mesh, D_out, collar_depth)
    B = V if ball is None else (ball & V)
    s_details = _s_check(mesh, gamma, D_out, D, M)

    if V.is_empty:
        logger.warning("Assumption check: D is empty, margin cases are not applicable")
        return AssumptionReport(bounds, contained, 0, None, None, None,
                                s_details["reaches_gamma"], s_details)

    eig = np.linalg.eigvalsh(AD.real_part - A0.real_part)
    lo_v, hi_v = float(eig[V.element_flags, 0].min()), float(eig[V.element_flags, -1].max())
    lo_b = float(eig[B.element_flags, 0].min()) if not B.is_empty else lo_v
    hi_b = float(eig[B.element_flags, -1].max()) if not B.is_empty else hi_v
    a, b = bounds.alpha, bounds.beta
    a0i = MatrixField(A0.imag_part).hnorm(V)
    adi = MatrixField(AD.imag_part).hnorm(V)

    req_plus = b ** 2 / a ** 3 * a0i ** 2
    tau_plus = req_plus if phantom.tau_plus is None else float(phantom.tau_plus)
    margin_a = lo_b - tau_plus
    case_a = CaseReport(bool(tau_plus >= req_plus and lo_v >= tau_plus and margin_a > 0.0),
                        req_plus, tau_plus, lo_v, margin_a)

    req_minus = adi ** 2 / a
    tau_minus = req_minus if phantom.tau_minus is None else float(phantom.tau_minus)
    margin_b = -hi_b - tau_minus
    case_b = CaseReport(bool(tau_minus >= req_minus and -hi_v >= tau_minus and margin_b > 0.0),
                        req_minus, tau_minus, hi_v, margin_b)

    iso = b / a ** 2 * a0i ** 2 if (A0.is_isotropic() and AD.is_isotropic()) else None
    report = AssumptionReport(bounds, contained, V.count, case_a, case_b, iso,
                              s_details["reaches_gamma"], s_details)
    logger.info("Assumption check: case (a) %s, case (b) %s, S reaches Γ: %s",
                case_a.holds, case_b.holds, report.s_reaches_gamma)
    return report


# --- element-wise bound checks and random fields -----------------------------

def matrix_bound_checks(A0: MatrixField, AD: MatrixField, bounds: CoefficientBounds) -> dict:
    """Element-wise A^I(A^R)^-1 A^I ⪯ (η²/α)I and A0^R(A_D^R)^-1 A0^R ⪯ (β²/α)I."""
    skew = max(float(np.linalg.eigvalsh(skew_penalty(f).values).max()) for f in (A0, AD))
    AR0 = A0.real_part
    ratio = float(np.linalg.eigvalsh(AR0 @ np.linalg.inv(AD.real_part) @ AR0).max())
    skew_bound = bounds.eta ** 2 / bounds.alpha
    ratio_bound = bounds.beta ** 2 / bounds.alpha
    tol = 1e-12 * max(1.0, skew_bound, ratio_bound)
    return {
        "skew_penalty_max": skew, "skew_penalty_bound": skew_bound,
        "skew_penalty_holds": skew <= skew_bound + tol,
        "background_ratio_max": ratio, "background_ratio_bound": ratio_bound,
        "background_ratio_holds": ratio <= ratio_bound + tol,
    }


def _random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2))
    q, r = np.linalg.qr(z)
    phases = np.diagonal(r, axis1=1, axis2=2)
    return q * (phases / np.abs(phases))[:, None, :]


def random_admissible_field(n_elements: int, alpha: float, beta: float, eta: float,
                            rng: np.random.Generator, isotropic: bool = False) -> MatrixField:
    """Random field with eigenvalues of A^R in [α, β] and ‖A^I‖ ≤ η on every element."""
    if isotropic:
        lam = rng.uniform(alpha, beta, n_elements)
        skew = rng.uniform(-eta, eta, n_elements)
        return MatrixField((lam + 1j * skew)[:, None, None] * IDENTITY)

    q = _random_unitary(rng, n_elements)
    lam = rng.uniform(alpha, beta, (n_elements, 2))
    AR = q @ (lam[:, :, None] * np.conj(np.swapaxes(q, 1, 2)))
    x = rng.standard_normal((n_elements, 2, 2)) + 1j * rng.standard_normal((n_elements, 2, 2))
    H = (x + np.conj(np.swapaxes(x, 1, 2))) / 2.0
    norms = np.linalg.norm(H, ord=2, axis=(1, 2))
    AI = H * (rng.uniform(0.0, eta, n_elements) / np.maximum(norms, 1e-300))[:, None, None]
    AR = (AR + np.conj(np.swapaxes(AR, 1, 2))) / 2.0
    AI = (AI + np.conj(np.swapaxes(AI, 1, 2))) / 2.0
    return MatrixField(AR + 1j * AI)
