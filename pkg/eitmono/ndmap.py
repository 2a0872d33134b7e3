"""
Neumann-to-Dirichlet Operators
Discrete ND maps on the mean-free boundary space, their Hermitian/skew split
and every test operator built from them
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .coeff import (CoefficientBounds, MatrixField, build_test_coeff, linearized_direction,
                    skew_penalty, support)
from .errors import ValidationError
from .forward import (BoundaryCurrent, FactorizedSystem, assemble_and_factor, assemble_extreme,
                      boundary_load_matrix, stiffness)
from .mesh import GammaSpec, Mesh, RegionMask, check_mask

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class BoundaryBasis:
    """Orthonormal basis of mean-free piecewise-constant currents on Γ.

    Columns of ``Q`` hold edge values; ``gram`` is Qᵀ diag(ℓ) Q and ``load``
    is the nodal load L Q of every basis current.
    """

    mesh: Mesh
    gamma: GammaSpec
    lengths: np.ndarray
    Q: np.ndarray
    gram: np.ndarray
    load: np.ndarray

    @property
    def dimension(self) -> int:
        return self.Q.shape[1]

    def current(self, coords: np.ndarray) -> BoundaryCurrent:
        return BoundaryCurrent(self.gamma, self.lengths, self.Q @ np.asarray(coords, dtype=complex))

    def coordinates(self, f: BoundaryCurrent) -> np.ndarray:
        return np.linalg.solve(self.gram, self.Q.T @ (self.lengths * f.values))


def boundary_basis(mesh: Mesh, gamma: GammaSpec) -> BoundaryBasis:
    if gamma.n_edges < 2:
        raise ValidationError("ndmap: Γ needs at least two edges for a mean-free current")
    lengths = gamma.lengths(mesh)
    root = np.sqrt(lengths)
    N = scipy.linalg.null_space((root / np.linalg.norm(root))[None, :])
    Q = N / root[:, None]
    gram = Q.T @ (lengths[:, None] * Q)
    load = boundary_load_matrix(mesh, gamma) @ Q
    return BoundaryBasis(mesh, gamma, lengths, Q, gram, np.asarray(load))


@dataclass(frozen=True, eq=False)
class NDOperator:
    """Pairing matrix G with fᴴ G g = ∫_Γ conj(f) Λg ds in basis coordinates.

    ``solutions`` keeps the nodal solutions of the basis currents when the
    operator came from a solve, so derivative operators can reuse them.
    """

    matrix: np.ndarray
    basis: BoundaryBasis
    label: str = ""
    solutions: Optional[np.ndarray] = None

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        k = self.basis.dimension
        if matrix.shape != (k, k):
            raise ValidationError(f"ndmap: operator must be {k}x{k}, got {matrix.shape}")
        object.__setattr__(self, "matrix", matrix)

    @property
    def gram(self) -> np.ndarray:
        return self.basis.gram

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def _same_basis(self, other: "NDOperator") -> None:
        if other.basis is self.basis:
            return
        if (other.dimension != self.dimension
                or not np.array_equal(other.basis.gamma.edge_indices, self.basis.gamma.edge_indices)):
            raise ValidationError("ndmap: operators live on different boundary bases")

    def __add__(self, other: "NDOperator") -> "NDOperator":
        self._same_basis(other)
        return NDOperator(self.matrix + other.matrix, self.basis, f"{self.label}+{other.label}")

    def __sub__(self, other: "NDOperator") -> "NDOperator":
        self._same_basis(other)
        return NDOperator(self.matrix - other.matrix, self.basis, f"{self.label}-{other.label}")

    def __neg__(self) -> "NDOperator":
        return NDOperator(-self.matrix, self.basis, f"-{self.label}")

    def scaled(self, factor) -> "NDOperator":
        return NDOperator(self.matrix * factor, self.basis, self.label)

    def adjoint(self) -> "NDOperator":
        return NDOperator(self.matrix.conj().T, self.basis, f"{self.label}*")

    def hermitian_defect(self) -> float:
        scale = max(1.0, float(np.abs(self.matrix).max()))
        return float(np.abs(self.matrix - self.matrix.conj().T).max()) / scale

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermitian_defect() <= tol

    def form(self, coords: np.ndarray, other: Optional[np.ndarray] = None) -> complex:
        """aᴴ G b."""
        b = coords if other is None else other
        return complex(np.conj(coords) @ self.matrix @ b)


def compute_nd(system: FactorizedSystem, gamma: Optional[GammaSpec] = None,
               basis: Optional[BoundaryBasis] = None, label: str = "Λ") -> NDOperator:
    """ND operator of a factorized system: one block solve for all basis currents."""
    gamma = gamma or system.gamma
    if not np.array_equal(gamma.edge_indices, system.gamma.edge_indices):
        raise ValidationError("ndmap: system was assembled with a different Γ")
    basis = basis or boundary_basis(system.mesh, gamma)
    U = system.solve_load(basis.load)
    G = basis.load.T @ U
    logger.debug("Computed %s (%s system, dimension %d)", label, system.kind, basis.dimension)
    return NDOperator(G, basis, label, U)


def hermitian_split(L: NDOperator):
    """(L^R, L^I) with L^R = (L + L*)/2 and L^I = (L - L*)/(2i)."""
    G = L.matrix
    GH = G.conj().T
    return (NDOperator((G + GH) / 2.0, L.basis, f"{L.label}^R"),
            NDOperator((G - GH) / 2j, L.basis, f"{L.label}^I"))


def quadratic_form_operator(mesh: Mesh, solutions: np.ndarray, field: MatrixField,
                            basis: BoundaryBasis, label: str, sign: float = -1.0) -> NDOperator:
    """Operator with form sign · ∫ M ∇u_g · conj(∇u_f) dx over the given solution set."""
    K = stiffness(mesh, field)
    H = sign * (solutions.conj().T @ (K @ solutions))
    return NDOperator((H + H.conj().T) / 2.0, basis, label)


def frechet_derivative(mesh: Mesh, background: NDOperator, direction: MatrixField) -> NDOperator:
    """Derivative of Λ at a self-adjoint coefficient in a Hermitian direction: -Uᴴ K_H U."""
    if background.solutions is None:
        raise ValidationError("ndmap: background operator carries no solutions")
    return quadratic_form_operator(mesh, background.solutions, direction, background.basis,
                                   f"DΛ[{background.label}]")


@dataclass(frozen=True)
class NonlinearTestOperators:
    minus: NDOperator
    plus: NDOperator
    skew_correction: NDOperator


@dataclass(frozen=True)
class LinearizedTestOperators:
    plus: NDOperator
    minus: NDOperator
    skew: NDOperator
    background: NDOperator


@dataclass(frozen=True)
class ExtremeOperators:
    insulating: NDOperator
    conducting: NDOperator


def nonlinear_test_operators(mesh: Mesh, A0: MatrixField, C: RegionMask, bounds: CoefficientBounds,
                             gamma: GammaSpec, basis: Optional[BoundaryBasis] = None) -> NonlinearTestOperators:
    """Λ_C^-, Λ_C^+ and DΛ⁺_{M∖C} (built from the solves behind Λ_C^+)."""
    check_mask(mesh, C, "C")
    basis = basis or boundary_basis(mesh, gamma)
    M = support(A0.imag_part)
    minus = compute_nd(assemble_and_factor(mesh, build_test_coeff(A0, C, bounds, "minus"), gamma),
                       basis=basis, label="Λ_C^-")
    plus = compute_nd(assemble_and_factor(mesh, build_test_coeff(A0, C, bounds, "plus"), gamma),
                      basis=basis, label="Λ_C^+")
    correction = quadratic_form_operator(mesh, plus.solutions, skew_penalty(A0, M - C), basis,
                                         "DΛ⁺_{M∖C}")
    return NonlinearTestOperators(minus, plus, correction)


def background_operator(mesh: Mesh, A0: MatrixField, gamma: GammaSpec,
                        basis: Optional[BoundaryBasis] = None) -> NDOperator:
    """Λ(A0^R), with its solutions kept for the linearized operators."""
    basis = basis or boundary_basis(mesh, gamma)
    system = assemble_and_factor(mesh, MatrixField(A0.real_part), gamma)
    return compute_nd(system, basis=basis, label="Λ(A0^R)")


def linearized_test_operators(mesh: Mesh, A0: MatrixField, C: RegionMask, bounds: CoefficientBounds,
                              gamma: GammaSpec,
                              background: Optional[NDOperator] = None) -> LinearizedTestOperators:
    """DΛ_C^+, DΛ_C^- and DΛ_{M∖C}, all from the solves with A0^R."""
    check_mask(mesh, C, "C")
    background = background or background_operator(mesh, A0, gamma)
    M = support(A0.imag_part)
    plus = frechet_derivative(mesh, background, linearized_direction(A0, C, bounds, "plus"))
    minus = frechet_derivative(mesh, background, linearized_direction(A0, C, bounds, "minus"))
    skew = frechet_derivative(mesh, background, skew_penalty(A0, M - C))
    return LinearizedTestOperators(plus, minus, skew, background)


def extreme_operators(mesh: Mesh, A0: MatrixField, C: RegionMask, gamma: GammaSpec,
                      basis: Optional[BoundaryBasis] = None) -> ExtremeOperators:
    """Λ_C^∅ (insulating C) and Λ_∅^C (perfectly conducting C)."""
    basis = basis or boundary_basis(mesh, gamma)
    insulating = compute_nd(assemble_extreme(mesh, A0, C, "insulating", gamma), basis=basis,
                            label="Λ_C^∅")
    conducting = compute_nd(assemble_extreme(mesh, A0, C, "conducting", gamma), basis=basis,
                            label="Λ_∅^C")
    return ExtremeOperators(insulating, conducting)


# --- spectra and norms -------------------------------------------------------

def generalized_eigenvalues(L: NDOperator) -> np.ndarray:
    """Eigenvalues of (G, Gram), sorted descending; real when G is Hermitian."""
    if L.is_hermitian(1e-8):
        H = (L.matrix + L.matrix.conj().T) / 2.0
        return scipy.linalg.eigh(H, L.gram, eigvals_only=True)[::-1]
    values = scipy.linalg.eigvals(L.matrix, L.gram)
    return values[np.lexsort((-values.imag, -values.real))]


def gram_norm(L: NDOperator) -> float:
    """Operator norm of Λ in L²(Γ): sqrt of the top eigenvalue of (Gᴴ Gram⁻¹ G, Gram)."""
    G = L.matrix
    W = L.gram
    H = G.conj().T @ np.linalg.solve(W, G)
    top = scipy.linalg.eigh((H + H.conj().T) / 2.0, W, eigvals_only=True)[-1]
    return float(np.sqrt(max(top, 0.0)))
