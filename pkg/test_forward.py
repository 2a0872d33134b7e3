"""
Forward Solver Tests
Neumann solves on the unit disk against closed-form potentials, plus the extreme solvers
"""

import math
import unittest

import numpy as np

from eitmono.coeff import MatrixField
from eitmono.errors import ValidationError
from eitmono.forward import (BoundaryCurrent, assemble_and_factor, assemble_extreme,
                             energy_integral, fourier_current, l2_gradient_norm, solve_extreme,
                             solve_many, solve_neumann, stiffness)
from eitmono.mesh import build_mesh, mask_from_predicate, select_gamma


class TestNeumannSolve(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.1)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.ones = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        cls.system = assemble_and_factor(cls.mesh, cls.ones, cls.gamma)
        cls.f = fourier_current(cls.mesh, cls.gamma, 1, "cos")
        cls.u = solve_neumann(cls.system, cls.f)

    def test_first_mode_pairing(self):
        # u = r cos θ, so ∫_Γ f u ds = π
        self.assertAlmostEqual(self.u.pairing(self.f).real, math.pi, delta=0.03 * math.pi)
        self.assertAlmostEqual(self.u.pairing(self.f).imag, 0.0, places=10)

    def test_gradient_is_unit_x(self):
        g = self.u.gradients()
        weights = self.mesh.areas / self.mesh.total_area
        np.testing.assert_allclose(weights @ g.real, [1.0, 0.0], atol=0.03)
        self.assertAlmostEqual(l2_gradient_norm(self.u) ** 2, math.pi, delta=0.05 * math.pi)

    def test_gauge(self):
        self.assertAlmostEqual(abs(self.u.trace_mean()), 0.0, places=10)

    def test_energy_matches_pairing(self):
        A = MatrixField.constant(self.mesh.n_triangles, np.array([[1.0 + 0.5j, 0.2], [-0.1j, 2.0]]))
        u = solve_neumann(assemble_and_factor(self.mesh, A, self.gamma), self.f)
        self.assertAlmostEqual(energy_integral(u, u, A), np.conj(u.pairing(self.f)), places=10)

    def test_complex_scaling_is_exact(self):
        c = 1.0 + 0.5j
        scaled = MatrixField.constant(self.mesh.n_triangles, c)
        u = solve_neumann(assemble_and_factor(self.mesh, scaled, self.gamma), self.f)
        np.testing.assert_allclose(u.values * c, self.u.values, atol=1e-10)

    def test_block_solve_agrees(self):
        g = fourier_current(self.mesh, self.gamma, 2, "sin")
        block = solve_many(self.system, np.column_stack([self.f.values, g.values]))
        np.testing.assert_allclose(block[:, 0], self.u.values, atol=1e-12)
        np.testing.assert_allclose(block[:, 1], solve_neumann(self.system, g).values, atol=1e-12)

    def test_stiffness_annihilates_constants(self):
        K = stiffness(self.mesh, self.ones)
        np.testing.assert_allclose(K @ np.ones(self.mesh.n_nodes), 0.0, atol=1e-12)

    def test_current_not_mean_free(self):
        f = BoundaryCurrent.from_values(self.mesh, self.gamma, np.ones(self.gamma.n_edges))
        with self.assertRaises(ValidationError):
            solve_neumann(self.system, f)

    def test_bad_fourier_requests(self):
        with self.assertRaises(ValidationError):
            fourier_current(self.mesh, self.gamma, 1, "tan")
        with self.assertRaises(ValidationError):
            fourier_current(self.mesh, self.gamma, 0)

    def test_wrong_current_length(self):
        with self.assertRaises(ValidationError):
            BoundaryCurrent.from_values(self.mesh, self.gamma, np.ones(3))

    def test_inadmissible_coefficient(self):
        with self.assertRaises(ValidationError):
            assemble_and_factor(self.mesh, MatrixField.constant(self.mesh.n_triangles, -1.0), self.gamma)

    def test_partial_boundary(self):
        gamma = select_gamma(self.mesh, {"type": "angle", "start": 0.0, "stop": math.pi})
        f = fourier_current(self.mesh, gamma, 1, "cos")
        self.assertTrue(f.is_mean_free())
        u = solve_neumann(assemble_and_factor(self.mesh, self.ones, gamma), f)
        self.assertAlmostEqual(abs(u.trace_mean()), 0.0, places=10)
        self.assertGreater(u.pairing(f).real, 0.0)


class TestExtremeSolvers(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.1)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.A0 = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        cls.C = mask_from_predicate(cls.mesh, {"type": "ball", "radius": 0.4})
        cls.f = fourier_current(cls.mesh, cls.gamma, 1, "cos")
        cls.standard = solve_neumann(assemble_and_factor(cls.mesh, cls.A0, cls.gamma), cls.f)

    def test_insulating_hole(self):
        u = solve_extreme(self.mesh, self.A0, self.C, "insulating", self.f)
        # (1 + a²)/(1 - a²) π for a hole of radius a
        self.assertAlmostEqual(u.pairing(self.f).real / math.pi, 1.16 / 0.84, delta=0.15)
        self.assertGreater(u.pairing(self.f).real, self.standard.pairing(self.f).real)
        np.testing.assert_array_equal(u.gradients()[self.C.element_flags], 0.0)

    def test_conducting_core(self):
        u = solve_extreme(self.mesh, self.A0, self.C, "conducting", self.f)
        # (1 - a²)/(1 + a²) π for a perfect conductor of radius a
        self.assertAlmostEqual(u.pairing(self.f).real / math.pi, 0.84 / 1.16, delta=0.15)
        self.assertLess(u.pairing(self.f).real, self.standard.pairing(self.f).real)
        core = np.unique(self.mesh.triangles[self.C.element_flags])
        self.assertLess(np.ptp(u.values[core].real), 1e-10)

    def test_empty_inclusion_is_standard(self):
        empty = self.C & ~self.C
        u = solve_extreme(self.mesh, self.A0, empty, "conducting", self.f)
        np.testing.assert_allclose(u.values, self.standard.values, atol=1e-12)

    def test_complex_background_rejected(self):
        A0 = MatrixField.constant(self.mesh.n_triangles, 1.0 + 0.1j)
        with self.assertRaises(ValidationError):
            assemble_extreme(self.mesh, A0, self.C, "insulating", self.gamma)

    def test_unknown_kind(self):
        with self.assertRaises(ValidationError):
            assemble_extreme(self.mesh, self.A0, self.C, "standard", self.gamma)

    def test_inclusion_touching_boundary(self):
        outer = mask_from_predicate(self.mesh, {"type": "annulus", "r_inner": 0.8, "r_outer": 1.1})
        with self.assertRaises(ValidationError):
            assemble_extreme(self.mesh, self.A0, outer, "conducting", self.gamma)


if __name__ == "__main__":
    unittest.main()
