"""
ND Map Tests
Boundary basis, spectra on the unit disk, adjoints, derivatives and the test operators
"""

import unittest

import numpy as np

from eitmono.coeff import CoefficientBounds, MatrixField
from eitmono.errors import ValidationError
from eitmono.forward import assemble_and_factor
from eitmono.mesh import build_mesh, mask_from_predicate, select_gamma
from eitmono.ndmap import (NDOperator, background_operator, boundary_basis, compute_nd,
                           extreme_operators, frechet_derivative, generalized_eigenvalues,
                           gram_norm, hermitian_split, linearized_test_operators,
                           nonlinear_test_operators)


def _min_eig(L: NDOperator) -> float:
    return float(generalized_eigenvalues(L).real.min())


class TestBoundaryBasis(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.2)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.basis = boundary_basis(cls.mesh, cls.gamma)

    def test_dimension_and_gram(self):
        self.assertEqual(self.basis.dimension, self.gamma.n_edges - 1)
        np.testing.assert_allclose(self.basis.gram, np.eye(self.basis.dimension), atol=1e-12)

    def test_currents_are_mean_free(self):
        coords = np.random.default_rng(0).standard_normal(self.basis.dimension)
        f = self.basis.current(coords)
        self.assertTrue(f.is_mean_free())
        np.testing.assert_allclose(self.basis.coordinates(f), coords, atol=1e-12)

    def test_operator_shape_checked(self):
        with self.assertRaises(ValidationError):
            NDOperator(np.eye(3), self.basis)


class TestDiskSpectrum(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.1)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.basis = boundary_basis(cls.mesh, cls.gamma)
        ones = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        cls.L = compute_nd(assemble_and_factor(cls.mesh, ones, cls.gamma), basis=cls.basis)

    def test_eigenvalues_pair_up_as_one_over_n(self):
        eig = generalized_eigenvalues(self.L)
        expected = np.array([1.0, 1.0, 0.5, 0.5, 1 / 3, 1 / 3])
        np.testing.assert_allclose(eig[:6], expected, rtol=0.05)
        self.assertGreaterEqual(eig.min(), -1e-12)

    def test_hermitian_for_real_coefficient(self):
        self.assertTrue(self.L.is_hermitian())

    def test_gram_norm_is_top_eigenvalue(self):
        self.assertAlmostEqual(gram_norm(self.L), generalized_eigenvalues(self.L)[0], places=8)


class TestComplexOperators(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, {"type": "angle", "start": 0.0, "stop": 4.0})
        cls.basis = boundary_basis(cls.mesh, cls.gamma)
        ball = mask_from_predicate(cls.mesh, {"type": "ball", "center": [0.2, 0.1], "radius": 0.35})
        value = np.array([[2.0 + 0.4j, 0.3 - 0.2j], [0.1j, 1.5 - 0.3j]])
        cls.A = MatrixField.constant(cls.mesh.n_triangles, 1.0).where(ball, value)
        cls.L = compute_nd(assemble_and_factor(cls.mesh, cls.A, cls.gamma), basis=cls.basis)

    def test_not_hermitian(self):
        self.assertFalse(self.L.is_hermitian())

    def test_adjoint_is_nd_of_adjoint_coefficient(self):
        La = compute_nd(assemble_and_factor(self.mesh, self.A.adjoint(), self.gamma), basis=self.basis)
        np.testing.assert_allclose(La.matrix, self.L.adjoint().matrix, atol=1e-10)

    def test_split_recombines(self):
        LR, LI = hermitian_split(self.L)
        self.assertTrue(LR.is_hermitian())
        self.assertTrue(LI.is_hermitian())
        np.testing.assert_allclose(LR.matrix + 1j * LI.matrix, self.L.matrix, atol=1e-14)

    def test_non_hermitian_spectrum_is_complex(self):
        eig = generalized_eigenvalues(self.L)
        self.assertEqual(eig.size, self.basis.dimension)
        self.assertTrue(np.iscomplexobj(eig))

    def test_operators_on_other_basis_rejected(self):
        other = boundary_basis(self.mesh, select_gamma(self.mesh, "full"))
        with self.assertRaises(ValidationError):
            self.L - NDOperator(np.eye(other.dimension), other)


class TestDerivativesAndTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.basis = boundary_basis(cls.mesh, cls.gamma)
        cls.C = mask_from_predicate(cls.mesh, {"type": "ball", "radius": 0.35})
        cls.A0 = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        cls.L0 = background_operator(cls.mesh, cls.A0, cls.gamma, cls.basis)

    def test_frechet_derivative_first_order(self):
        H = MatrixField.constant(self.mesh.n_triangles, np.diag([1.0, 0.5])).restricted(self.C)
        D = frechet_derivative(self.mesh, self.L0, H)
        scale = np.abs(D.matrix).max()
        errors = []
        for t in (1e-2, 1e-3, 1e-4):
            Lt = compute_nd(assemble_and_factor(self.mesh, self.A0 + H * t, self.gamma), basis=self.basis)
            errors.append(np.abs((Lt.matrix - self.L0.matrix) / t - D.matrix).max() / scale)
        self.assertLess(errors[1], 5e-3)
        self.assertLess(errors[2], 5e-4)
        for coarse, fine in zip(errors, errors[1:]):
            self.assertLess(fine, 0.2 * coarse)
        self.assertLessEqual(generalized_eigenvalues(D).max(), 1e-12)

    def test_derivative_needs_solutions(self):
        bare = NDOperator(self.L0.matrix, self.basis)
        with self.assertRaises(ValidationError):
            frechet_derivative(self.mesh, bare, self.A0)

    def test_extreme_operators_bracket_background(self):
        ext = extreme_operators(self.mesh, self.A0, self.C, self.gamma, self.basis)
        self.assertGreaterEqual(_min_eig(ext.insulating - self.L0), -1e-10)
        self.assertGreaterEqual(_min_eig(self.L0 - ext.conducting), -1e-10)

    def test_nonlinear_operators_for_real_background(self):
        bounds = CoefficientBounds(0.5, 2.0, 0.0)
        ops = nonlinear_test_operators(self.mesh, self.A0, self.C, bounds, self.gamma, self.basis)
        self.assertEqual(float(np.abs(ops.skew_correction.matrix).max()), 0.0)
        self.assertGreaterEqual(_min_eig(ops.minus - self.L0), -1e-10)
        self.assertGreaterEqual(_min_eig(self.L0 - ops.plus), -1e-10)

    def test_linearized_operators_signs(self):
        bounds = CoefficientBounds(0.5, 2.0, 0.0)
        ops = linearized_test_operators(self.mesh, self.A0, self.C, bounds, self.gamma, self.L0)
        self.assertLessEqual(generalized_eigenvalues(ops.plus).max(), 1e-12)
        self.assertGreaterEqual(generalized_eigenvalues(ops.minus).min(), -1e-12)
        self.assertIs(ops.background, self.L0)


if __name__ == "__main__":
    unittest.main()
