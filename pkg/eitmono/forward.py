"""
Forward Solver
Conforming P1 Galerkin solves of the Neumann problem with a complex,
non-symmetric coefficient, gauged by ∫_Γ u ds = 0, plus the insulating and
conducting extreme solvers
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import norm as sparse_norm
from scipy.sparse.linalg import splu

from .coeff import SUPPORT_TOL, MatrixField, min_real_eigenvalue
from .errors import SolverError, ValidationError
from .mesh import GammaSpec, Mesh, RegionMask, check_mask, components

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


def stiffness(mesh: Mesh, A: MatrixField, region: Optional[RegionMask] = None) -> sparse.csr_matrix:
    """K[i, j] = ∫_region A ∇φ_j · ∇φ_i dx (no gauge)."""
    if A.n_elements != mesh.n_triangles:
        raise ValidationError("forward: coefficient field does not match the mesh")
    G = mesh.gradients
    local = np.einsum("tia,tab,tjb->tij", G, A.values, G) * mesh.areas[:, None, None]
    tri = mesh.triangles
    if region is not None:
        check_mask(mesh, region, "region")
        local = local[region.element_flags]
        tri = tri[region.element_flags]
    rows = np.broadcast_to(tri[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(tri[:, None, :], local.shape).ravel()
    n = mesh.n_nodes
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_load_matrix(mesh: Mesh, gamma: GammaSpec) -> sparse.csr_matrix:
    """L[i, e] = ∫_e φ_i ds for the piecewise-constant Γ-edge basis."""
    edges = gamma.edges(mesh)
    half = gamma.lengths(mesh) / 2.0
    m = gamma.n_edges
    rows = edges.ravel()
    cols = np.repeat(np.arange(m), 2)
    return sparse.csr_matrix((np.repeat(half, 2), (rows, cols)), shape=(mesh.n_nodes, m))


@dataclass(frozen=True, eq=False)
class BoundaryCurrent:
    """Piecewise-constant current density on the Γ edges."""

    gamma: GammaSpec
    lengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex).reshape(-1)
        if values.size != self.gamma.n_edges:
            raise ValidationError("forward: current needs one value per Γ edge")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, mesh: Mesh, gamma: GammaSpec, values) -> "BoundaryCurrent":
        return cls(gamma, gamma.lengths(mesh), values)

    @classmethod
    def from_function(cls, mesh: Mesh, gamma: GammaSpec,
                      func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "BoundaryCurrent":
        """Edge averages of ``func(x, y)`` (two-point Gauss) minus the weighted mean."""
        edges = gamma.edges(mesh)
        a, b = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
        s = 0.5 / np.sqrt(3.0)
        total = 0.0
        for t in (0.5 - s, 0.5 + s):
            p = a + t * (b - a)
            total = total + 0.5 * np.asarray(func(p[:, 0], p[:, 1]), dtype=complex)
        lengths = gamma.lengths(mesh)
        total = total - np.dot(lengths, total) / lengths.sum()
        return cls(gamma, lengths, total)

    @property
    def mean(self) -> complex:
        return complex(np.dot(self.lengths, self.values) / self.lengths.sum())

    def is_mean_free(self, tol: float = 1e-12) -> bool:
        scale = float(np.dot(self.lengths, np.abs(self.values)))
        return abs(np.dot(self.lengths, self.values)) <= tol * max(scale, np.finfo(float).tiny)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.dot(self.lengths, np.abs(self.values) ** 2)))

    def __add__(self, other: "BoundaryCurrent") -> "BoundaryCurrent":
        return BoundaryCurrent(self.gamma, self.lengths, self.values + other.values)

    def __mul__(self, scalar) -> "BoundaryCurrent":
        return BoundaryCurrent(self.gamma, self.lengths, self.values * scalar)

    __rmul__ = __mul__


def fourier_current(mesh: Mesh, gamma: GammaSpec, mode: int, kind: str = "cos",
                    center=(0.0, 0.0)) -> BoundaryCurrent:
    """cos(nθ) or sin(nθ) about ``center``, projected onto the Γ edges."""
    if kind not in ("cos", "sin"):
        raise ValidationError(f"forward: Fourier kind must be 'cos' or 'sin', got {kind!r}")
    if mode < 1:
        raise ValidationError("forward: Fourier mode must be at least 1")
    trig = np.cos if kind == "cos" else np.sin
    cx, cy = center
    return BoundaryCurrent.from_function(
        mesh, gamma, lambda x, y: trig(mode * np.arctan2(y - cy, x - cx)))


@dataclass(eq=False)
class FactorizedSystem:
    """Gauged stiffness system for one coefficient, factorized once.

    ``reduction`` maps reduced unknowns to nodes: identity for the standard
    problem, a node selection for the insulating solver and a node
    identification for the conducting one.
    """

    mesh: Mesh
    coefficient: MatrixField
    gamma: GammaSpec
    stiffness: sparse.csr_matrix
    reduction: sparse.csr_matrix
    active_elements: np.ndarray
    kind: str = "standard"
    _lu: object = field(default=None, repr=False)
    _augmented: sparse.csc_matrix = field(default=None, repr=False)
    _norm1: float = field(default=0.0, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def load_matrix(self) -> sparse.csr_matrix:
        return boundary_load_matrix(self.mesh, self.gamma)

    def solve_load(self, load: np.ndarray) -> np.ndarray:
        """Solve K u = load under the Γ gauge; ``load`` is (n,) or (n, k)."""
        load = np.asarray(load, dtype=complex)
        single = load.ndim == 1
        b = load.reshape(self.mesh.n_nodes, -1)
        rhs = np.vstack([self.reduction.T @ b, np.zeros((1, b.shape[1]), dtype=complex)])
        with self._lock:
            sol = self._lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError(f"forward: non-finite solution for the {self.kind} system")

        residual = np.linalg.norm(self._augmented @ sol - rhs, axis=0)
        scale = (self._norm1 * np.linalg.norm(sol, axis=0)
                 + np.linalg.norm(rhs, axis=0))
        relative = np.where(scale > 0, residual / np.where(scale > 0, scale, 1.0), 0.0)
        if relative.max(initial=0.0) > RESIDUAL_TOL:
            raise SolverError(
                f"forward: residual {relative.max():.3e} exceeds {RESIDUAL_TOL:g} for the {self.kind} system")

        u = self.reduction @ sol[:-1]
        return u[:, 0] if single else u


def _factor(mesh: Mesh, A: MatrixField, gamma: GammaSpec, K: sparse.csr_matrix,
            reduction: sparse.csr_matrix, active: np.ndarray, kind: str) -> FactorizedSystem:
    gauge = boundary_load_matrix(mesh, gamma) @ np.ones(gamma.n_edges)
    Kr = (reduction.T @ K @ reduction).astype(complex)
    cr = sparse.csr_matrix((reduction.T @ gauge).reshape(-1, 1))
    augmented = sparse.bmat([[Kr, cr], [cr.T, None]], format="csc").astype(complex)
    try:
        lu = splu(augmented)
    except RuntimeError as e:
        raise SolverError(f"forward: singular factorization of the {kind} system ({e})")
    logger.debug("Factorized %s system with %d unknowns", kind, augmented.shape[0])
    return FactorizedSystem(mesh, A, gamma, K, reduction, active, kind, lu, augmented,
                           float(sparse_norm(augmented, 1)))


def assemble_and_factor(mesh: Mesh, A: MatrixField, gamma: GammaSpec) -> FactorizedSystem:
    """Assemble the stiffness matrix of A, add the Γ gauge multiplier and factorize."""
    alpha = min_real_eigenvalue(A)
    if not alpha > 0.0:
        raise ValidationError(f"forward: coefficient is not admissible (min eigenvalue of A^R is {alpha:.3e})")
    K = stiffness(mesh, A)
    identity = sparse.identity(mesh.n_nodes, format="csr")
    return _factor(mesh, A, gamma, K, identity, np.ones(mesh.n_triangles, dtype=bool), "standard")


def assemble_extreme(mesh: Mesh, A0: MatrixField, C: RegionMask, kind: str,
                     gamma: GammaSpec) -> FactorizedSystem:
    """Factorize the insulating (C removed) or conducting (C identified) problem."""
    check_mask(mesh, C, "C")
    if kind not in ("insulating", "conducting"):
        raise ValidationError(f"forward: extreme kind must be 'insulating' or 'conducting', got {kind!r}")
    if not A0.is_self_adjoint(SUPPORT_TOL):
        raise ValidationError("forward: extreme solvers require a self-adjoint background (A0^I = 0)")
    if C.is_empty:
        system = assemble_and_factor(mesh, A0, gamma)
        system.kind = kind
        return system
    if np.any(mesh.boundary_node_flags[mesh.triangles[C.element_flags]]):
        raise ValidationError("forward: extreme inclusion C touches ∂Ω")
    n_free, _ = components(mesh, ~C)
    if n_free != 1:
        raise ValidationError("forward: Ω∖C is disconnected")

    keep = ~C.element_flags
    K = stiffness(mesh, A0, RegionMask(keep))
    n = mesh.n_nodes
    if kind == "insulating":
        nodes = np.unique(mesh.triangles[keep])
        reduction = sparse.csr_matrix((np.ones(nodes.size), (nodes, np.arange(nodes.size))),
                                      shape=(n, nodes.size))
    else:
        inc = mesh.incidence[C.element_flags]
        linked = (inc.T @ inc).tocsr()
        n_unknowns, labels = connected_components(linked, directed=False)
        reduction = sparse.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, n_unknowns))
    return _factor(mesh, A0, gamma, K, reduction, keep, kind)


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Nodal potential of one solve, with the system and current that produced it."""

    system: FactorizedSystem
    values: np.ndarray
    current: Optional[BoundaryCurrent] = None

    @property
    def mesh(self) -> Mesh:
        return self.system.mesh

    @property
    def coefficient(self) -> MatrixField:
        return self.system.coefficient

    def gradients(self) -> np.ndarray:
        """Element-wise constant gradient, (T, 2); zero on removed elements."""
        mesh = self.mesh
        grads = np.einsum("tia,ti->ta", mesh.gradients, self.values[mesh.triangles])
        grads[~self.system.active_elements] = 0.0
        return grads

    def trace(self) -> np.ndarray:
        """L²(Γ) projection of the trace onto the Γ edge basis (edge averages)."""
        edges = self.system.gamma.edges(self.mesh)
        return self.values[edges].mean(axis=1)

    def trace_mean(self) -> complex:
        lengths = self.system.gamma.lengths(self.mesh)
        return complex(np.dot(lengths, self.trace()) / lengths.sum())

    def pairing(self, f: BoundaryCurrent) -> complex:
        """∫_Γ conj(f) u ds."""
        return complex(np.dot(np.conj(f.values) * f.lengths, self.trace()))


def _check_current(system: FactorizedSystem, f: BoundaryCurrent) -> None:
    if f.gamma is not system.gamma and not np.array_equal(f.gamma.edge_indices, system.gamma.edge_indices):
        raise ValidationError("forward: current and system use different Γ")
    if not f.is_mean_free():
        raise ValidationError(f"forward: boundary current is not mean-free (mean {f.mean:.3e})")


def solve_neumann(system: FactorizedSystem, f: BoundaryCurrent) -> FieldSolution:
    """Discrete weak solution for the mean-free current f."""
    _check_current(system, f)
    u = system.solve_load(system.load_matrix @ f.values)
    return FieldSolution(system, u, f)


def solve_many(system: FactorizedSystem, currents: np.ndarray) -> np.ndarray:
    """Nodal solutions (n, k) for a block of Γ-edge currents (m, k)."""
    return system.solve_load(system.load_matrix @ np.asarray(currents, dtype=complex))


def solve_extreme(mesh: Mesh, A0: MatrixField, C: RegionMask, kind: str, f: BoundaryCurrent,
                  gamma: Optional[GammaSpec] = None) -> FieldSolution:
    system = assemble_extreme(mesh, A0, C, kind, gamma or f.gamma)
    return solve_neumann(system, f)


def energy_integral(u: FieldSolution, v: FieldSolution, Mfield: MatrixField,
                    region: Optional[RegionMask] = None) -> complex:
    """∫_region M ∇u · conj(∇v) dx, exact per element."""
    mesh = u.mesh
    if v.mesh is not mesh:
        raise ValidationError("forward: energy_integral needs solutions on the same mesh")
    if Mfield.n_elements != mesh.n_triangles:
        raise ValidationError("forward: energy_integral field does not match the mesh")
    gu, gv = u.gradients(), v.gradients()
    density = np.einsum("ta,tab,tb->t", np.conj(gv), Mfield.values, gu) * mesh.areas
    if region is not None:
        check_mask(mesh, region, "region")
        density = density[region.element_flags]
    return complex(density.sum())


def l2_gradient_norm(u: FieldSolution, region: Optional[RegionMask] = None) -> float:
    """‖∇u‖ in L²(region)."""
    g = u.gradients()
    density = np.sum(np.abs(g) ** 2, axis=1) * u.mesh.areas
    if region is not None:
        density = density[region.element_flags]
    return float(np.sqrt(density.sum()))
