"""
Localized Potentials
Boundary currents that concentrate gradient energy in a ball B while keeping
it small outside a set U connected to Γ
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coeff import IDENTITY, MatrixField, min_real_eigenvalue
from .errors import ValidationError
from .forward import BoundaryCurrent, assemble_and_factor, stiffness
from .mesh import GammaSpec, Mesh, RegionMask, check_mask, components
from .ndmap import BoundaryBasis, boundary_basis

logger = logging.getLogger(__name__)

UCP_CONDITIONS = ("d2_real_AR", "lipschitz_AR", "assumed")


@dataclass
class LocpotResult:
    current: BoundaryCurrent
    energy_in_B: float
    energy_outside_U: float
    ratio: float
    quotient: float
    reg: float
    reg_effective: float
    mesh_power: float
    floor: float
    ucp_condition: str = "assumed"

    def to_dict(self) -> dict:
        return {"energy_in_B": self.energy_in_B, "energy_outside_U": self.energy_outside_U,
                "ratio": self.ratio, "quotient": self.quotient, "reg": self.reg,
                "reg_effective": self.reg_effective, "mesh_power": self.mesh_power,
                "floor": self.floor, "ucp_condition": self.ucp_condition,
                "ucp": "assumed, not checked"}


@dataclass(frozen=True)
class EnergyForms:
    """Hermitian boundary-space forms E_B, E_{Ω∖U} and the Gram matrix."""

    inside: np.ndarray
    outside: np.ndarray
    gram: np.ndarray
    basis: BoundaryBasis

    def quotient(self, coords: np.ndarray, reg: float) -> float:
        a = np.asarray(coords)
        num = np.real(np.conj(a) @ self.inside @ a)
        den = np.real(np.conj(a) @ (self.outside + reg * self.gram) @ a)
        return float(num / den)


def _check_sets(mesh: Mesh, gamma: GammaSpec, U: RegionMask, B: RegionMask) -> None:
    check_mask(mesh, U, "U")
    check_mask(mesh, B, "B")
    if B.is_empty:
        raise ValidationError("locpot: B is empty")
    if not B.issubset(U):
        raise ValidationError("locpot: B ⊄ U")
    count, _ = components(mesh, U)
    owners = mesh.boundary_owner[gamma.edge_indices]
    if count != 1 or not np.any(U.element_flags[owners]):
        raise ValidationError("locpot: U must be edge-connected and reach Γ")


def energy_forms(mesh: Mesh, A: MatrixField, gamma: GammaSpec, U: RegionMask, B: RegionMask,
                 basis: BoundaryBasis = None) -> EnergyForms:
    basis = basis or boundary_basis(mesh, gamma)
    solutions = assemble_and_factor(mesh, A, gamma).solve_load(basis.load)
    unit = MatrixField.constant(mesh.n_triangles, IDENTITY)

    def form(region: RegionMask) -> np.ndarray:
        K = stiffness(mesh, unit, region)
        H = solutions.conj().T @ (K @ solutions)
        return (H + H.conj().T) / 2.0

    return EnergyForms(form(B), form(~U), basis.gram, basis)


def localized_current(mesh: Mesh, A: MatrixField, gamma: GammaSpec, U: RegionMask, B: RegionMask,
                      reg: float, ucp_condition: str = "assumed", mesh_power: float = 0.0) -> LocpotResult:
    """Maximize E_B(f) / (E_{Ω∖U}(f) + reg_h ‖f‖²) over mean-free currents f.

    ``reg_h = reg · h_max**mesh_power``. A positive ``mesh_power`` shrinks the floor
    under refinement, so the ratio follows the growth of the discrete current space
    instead of settling at ``E_B / reg``.
    """
    if not reg > 0.0:
        raise ValidationError("locpot: regularization reg must be positive")
    if not mesh_power >= 0.0:
        raise ValidationError("locpot: mesh_power must be non-negative")
    if ucp_condition not in UCP_CONDITIONS:
        raise ValidationError(f"locpot: ucp_condition must be one of {', '.join(UCP_CONDITIONS)}")
    if not min_real_eigenvalue(A) > 0.0:
        raise ValidationError("locpot: coefficient is not admissible")
    _check_sets(mesh, gamma, U, B)

    reg_h = reg * mesh.max_edge_length ** mesh_power
    forms = energy_forms(mesh, A, gamma, U, B)
    k = forms.basis.dimension
    _, vectors = scipy.linalg.eigh(forms.inside, forms.outside + reg_h * forms.gram,
                                   subset_by_index=[k - 1, k - 1])
    coords = vectors[:, 0]
    coords = coords / np.sqrt(np.real(np.conj(coords) @ forms.gram @ coords))
    # Fix the global phase so reruns serialize identically.
    pivot = coords[np.argmax(np.abs(coords))]
    coords = coords * (abs(pivot) / pivot)

    e_in = float(np.real(np.conj(coords) @ forms.inside @ coords))
    e_out = float(np.real(np.conj(coords) @ forms.outside @ coords))
    floor = reg_h * float(np.real(np.conj(coords) @ forms.gram @ coords))
    ratio = e_in / max(e_out, floor)
    logger.info("Localized current: E_B = %.4g, E_outside = %.4g, floor = %.3g, ratio = %.4g",
                e_in, e_out, floor, ratio)
    return LocpotResult(forms.basis.current(coords), e_in, e_out, ratio, e_in / (e_out + floor),
                        reg, reg_h, mesh_power, floor, ucp_condition)
