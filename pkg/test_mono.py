"""
Monotonicity Test Suite
Candidate tests, dictionaries and reconstruction on small synthetic phantoms
"""

import unittest

import numpy as np

from eitmono.coeff import CoefficientBounds, MatrixField, joint_bounds
from eitmono.errors import ValidationError
from eitmono.mesh import RegionMask, build_mesh, mask_from_predicate, select_gamma
from eitmono.mono import (METHODS, TestContext, calibrate_tolerance, default_tolerance,
                          generate_candidates, is_psd, reconstruct, run_inclusion_test)
from eitmono.ndmap import NDOperator, boundary_basis


class TestPsd(unittest.TestCase):
    def setUp(self):
        mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.4)
        self.basis = boundary_basis(mesh, select_gamma(mesh, "full"))
        self.k = self.basis.dimension

    def test_identity_and_negative(self):
        passed, min_eig = is_psd(NDOperator(np.eye(self.k), self.basis), 0.0)
        self.assertTrue(passed)
        self.assertAlmostEqual(min_eig, 1.0)
        passed, min_eig = is_psd(NDOperator(-np.eye(self.k), self.basis), 0.5)
        self.assertFalse(passed)
        self.assertAlmostEqual(min_eig, -1.0)

    def test_tolerance_absorbs_small_negatives(self):
        H = np.eye(self.k)
        H[0, 0] = -1e-12
        self.assertTrue(is_psd(NDOperator(H, self.basis), 1e-10)[0])
        self.assertFalse(is_psd(NDOperator(H, self.basis), 0.0)[0])

    def test_rejects_non_hermitian_and_negative_tolerance(self):
        H = np.eye(self.k, dtype=complex)
        H[0, 1] = 1j
        with self.assertRaises(ValidationError):
            is_psd(NDOperator(H, self.basis), 0.0)
        with self.assertRaises(ValidationError):
            is_psd(NDOperator(np.eye(self.k), self.basis), -1.0)


class TestInclusionTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.A0 = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        cls.D = mask_from_predicate(cls.mesh, {"type": "ball", "center": [0.2, 0.1], "radius": 0.25})
        cls.AD = cls.A0.where(cls.D, 2.0 * np.eye(2))
        cls.context = TestContext(cls.mesh, cls.gamma, cls.A0, CoefficientBounds(1.0, 2.0, 0.0))
        cls.data = cls.context.simulate(cls.AD)
        cls.cover = mask_from_predicate(cls.mesh, {"type": "ball", "center": [0.2, 0.1], "radius": 0.5})
        cls.away = mask_from_predicate(cls.mesh, {"type": "ball", "center": [-0.45, -0.1], "radius": 0.25})

    def test_containing_candidate_passes_every_smooth_method(self):
        for method in ("nonlinear", "linearized", "corollary"):
            report = run_inclusion_test(method, self.data, self.cover, self.context)
            self.assertTrue(report.passed, f"{method}: {report.to_dict()}")

    def test_disjoint_candidate_fails(self):
        report = run_inclusion_test("nonlinear", self.data, self.away, self.context)
        self.assertFalse(report.passed)
        self.assertLess(report.min_eig("upper"), -report.tolerance)

    def test_background_data_passes_anything(self):
        data = self.context.simulate(self.A0, "Λ(A0)")
        for C in (self.cover, self.away):
            self.assertTrue(run_inclusion_test("nonlinear", data, C, self.context).passed)

    def test_one_sided_selection(self):
        upper = run_inclusion_test("corollary", self.data, self.cover, self.context, one_sided="upper_only")
        self.assertEqual({r.side for r in upper.inequalities}, {"upper"})
        self.assertEqual(len(upper.inequalities), 2)
        lower = run_inclusion_test("nonlinear", self.data, self.cover, self.context, one_sided="lower_only")
        self.assertEqual([r.side for r in lower.inequalities], ["lower"])
        self.assertIsNone(lower.min_eig("upper"))

    def test_default_tolerance_scale(self):
        tol = default_tolerance(self.data)
        self.assertGreater(tol, 0.0)
        self.assertLess(tol, 1e-8)

    def test_candidate_touching_boundary(self):
        with self.assertRaises(ValidationError):
            run_inclusion_test("nonlinear", self.data, RegionMask.full(self.mesh.n_triangles), self.context)

    def test_unknown_method_and_side(self):
        with self.assertRaises(ValidationError):
            run_inclusion_test("quadratic", self.data, self.cover, self.context)
        with self.assertRaises(ValidationError):
            run_inclusion_test("nonlinear", self.data, self.cover, self.context, one_sided="middle")

    def test_self_adjoint_methods_reject_complex_background(self):
        A0 = MatrixField.constant(self.mesh.n_triangles, 1.0 + 0.2j)
        context = TestContext(self.mesh, self.gamma, A0, CoefficientBounds(1.0, 2.0, 0.2))
        for method in ("corollary", "extreme"):
            with self.assertRaises(ValidationError) as caught:
                run_inclusion_test(method, self.data, self.cover, context)
            self.assertIn("self-adjoint background", str(caught.exception))


class TestComplexBackground(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, "full")
        ring = mask_from_predicate(cls.mesh, {"type": "annulus", "r_inner": 0.7, "r_outer": 0.85})
        cls.A0 = MatrixField.constant(cls.mesh.n_triangles, 1.0).where(ring, (1.0 + 0.3j) * np.eye(2))
        cls.D = mask_from_predicate(cls.mesh, {"type": "ball", "radius": 0.2})
        AD = cls.A0.where(cls.D, np.array([[2.0 + 0.1j, 0.1], [0.1, 1.8]]))
        bounds = CoefficientBounds(1.0, 2.1, 0.3)
        cls.context = TestContext(cls.mesh, cls.gamma, cls.A0, bounds)
        cls.data = cls.context.simulate(AD)

    def test_nonlinear_and_linearized_sound(self):
        C = mask_from_predicate(self.mesh, {"type": "ball", "radius": 0.45})
        for method in ("nonlinear", "linearized"):
            self.assertTrue(run_inclusion_test(method, self.data, C, self.context).passed, method)

    def test_candidate_meeting_skew_region_rejected(self):
        C = mask_from_predicate(self.mesh, {"type": "ball", "radius": 0.75})
        with self.assertRaises(ValidationError):
            run_inclusion_test("nonlinear", self.data, C, self.context)


class TestExtremeMethod(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "rectangle", "extents": [-1.0, 1.0, -1.0, 1.0]}, 0.2)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.A0 = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        D = mask_from_predicate(cls.mesh, {"type": "box", "xmin": -0.2, "xmax": 0.2, "ymin": -0.2, "ymax": 0.2})
        cls.context = TestContext(cls.mesh, cls.gamma, cls.A0, CoefficientBounds(1.0, 3.0, 0.0))
        cls.data = cls.context.simulate(cls.A0.where(D, 3.0 * np.eye(2)))

    def test_square_block_passes(self):
        C = mask_from_predicate(self.mesh, {"type": "box", "xmin": -0.4, "xmax": 0.4, "ymin": -0.4, "ymax": 0.4})
        report = run_inclusion_test("extreme", self.data, C, self.context)
        self.assertTrue(report.passed, report.to_dict())

    def test_pinched_candidate_rejected(self):
        C = mask_from_predicate(self.mesh, {"type": "union", "parts": [
            {"type": "box", "xmin": -0.4, "xmax": 0.0, "ymin": -0.4, "ymax": 0.0},
            {"type": "box", "xmin": 0.0, "xmax": 0.4, "ymin": 0.0, "ymax": 0.4}]})
        with self.assertRaises(ValidationError):
            run_inclusion_test("extreme", self.data, C, self.context)


class TestReconstruction(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.A0 = MatrixField.constant(cls.mesh.n_triangles, 1.0)
        cls.D = mask_from_predicate(cls.mesh, {"type": "ball", "center": [0.3, 0.0], "radius": 0.2})
        cls.context = TestContext(cls.mesh, cls.gamma, cls.A0, CoefficientBounds(1.0, 2.0, 0.0))
        cls.data = cls.context.simulate(cls.A0.where(cls.D, 2.0 * np.eye(2)))
        cls.candidates = generate_candidates(cls.mesh, cls.context.M,
                                             {"type": "halfspace_caps", "n_dirs": 4, "n_offsets": 4})

    def test_candidates_are_admissible_and_numbered(self):
        self.assertLessEqual(len(self.candidates), 16)
        self.assertEqual([c.candidate_id for c in self.candidates], list(range(len(self.candidates))))
        keys = {c.mask.key() for c in self.candidates}
        self.assertEqual(len(keys), len(self.candidates))

    def test_every_covering_candidate_passes(self):
        result = reconstruct("nonlinear", self.data, self.candidates, self.context)
        passing = set(result.passing_ids)
        for c in self.candidates:
            if self.D.issubset(c.mask):
                self.assertIn(c.candidate_id, passing)
        self.assertLess(len(passing), len(self.candidates))
        self.assertLess(result.mask.count, self.mesh.n_triangles)
        self.assertIsNone(result.warning)

    def test_parallel_sweep_matches_serial(self):
        serial = reconstruct("linearized", self.data, self.candidates, self.context, jobs=1)
        threaded = reconstruct("linearized", self.data, self.candidates, self.context, jobs=2)
        self.assertEqual(serial.passing_ids, threaded.passing_ids)
        self.assertTrue(serial.mask.equals(threaded.mask))
        self.assertEqual([r.to_dict() for r in serial.reports], [r.to_dict() for r in threaded.reports])

    def test_nothing_passes_returns_domain(self):
        away = mask_from_predicate(self.mesh, {"type": "ball", "center": [-0.4, 0.0], "radius": 0.25})
        candidates = generate_candidates(self.mesh, self.context.M, {"type": "user_masks", "masks": [away]})
        result = reconstruct("nonlinear", self.data, candidates, self.context)
        self.assertEqual(result.passing_ids, [])
        self.assertEqual(result.mask.count, self.mesh.n_triangles)
        self.assertIsNotNone(result.warning)

    def test_calibrated_tolerance(self):
        tol = calibrate_tolerance(self.context, "nonlinear", self.candidates[:3])
        self.assertGreaterEqual(tol, default_tolerance(self.context.simulate(self.A0)))

    def test_empty_dictionary(self):
        with self.assertRaises(ValidationError):
            generate_candidates(self.mesh, self.context.M, {"type": "user_masks", "masks": []})
        with self.assertRaises(ValidationError):
            reconstruct("nonlinear", self.data, [], self.context)

    def test_methods_listed(self):
        self.assertEqual(set(METHODS), {"nonlinear", "linearized", "corollary", "extreme"})

class TestSoundnessSweep(unittest.TestCase):
    """Every dictionary candidate that contains D passes, for each applicable method."""

    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.n = cls.mesh.n_triangles

    def _region(self, spec) -> RegionMask:
        return mask_from_predicate(self.mesh, spec)

    def _candidates(self, context: TestContext, margin=None, require_lipschitz=False):
        caps = generate_candidates(self.mesh, context.M, {"type": "halfspace_caps", "n_dirs": 6,
                                                          "n_offsets": 6, "margin": margin})
        balls = [self._region({"type": "ball", "center": center, "radius": radius})
                 for center, radius in (([0.0, 0.0], 0.5), ([0.1, 0.0], 0.45), ([0.0, -0.1], 0.55))]
        return generate_candidates(self.mesh, context.M,
                                   {"type": "user_masks", "masks": [c.mask for c in caps] + balls},
                                   require_lipschitz=require_lipschitz)

    def _check(self, A0, AD, D, methods, margin=None):
        context = TestContext(self.mesh, self.gamma, A0, joint_bounds(AD, A0))
        data = context.simulate(AD)
        for method in methods:
            candidates = self._candidates(context, margin, require_lipschitz=method == "extreme")
            covering = [c for c in candidates if D.issubset(c.mask)]
            self.assertTrue(covering, method)
            result = reconstruct(method, data, covering, context, jobs=2)
            failed = [r.to_dict() for r in result.reports if not r.passed]
            self.assertEqual(failed, [], method)

    def test_increasing_isotropic_ball(self):
        A0 = MatrixField.constant(self.n, 1.0)
        D = self._region({"type": "ball", "center": [0.1, 0.1], "radius": 0.25})
        self._check(A0, A0.where(D, 2.0 * np.eye(2)), D, METHODS)

    def test_decreasing_isotropic_ball(self):
        A0 = MatrixField.constant(self.n, 1.0)
        D = self._region({"type": "ball", "center": [-0.1, 0.0], "radius": 0.25})
        self._check(A0, A0.where(D, 0.5 * np.eye(2)), D, METHODS)

    def test_complex_anisotropic_inclusion(self):
        A0 = MatrixField.constant(self.n, 1.0)
        D = self._region({"type": "ball", "center": [0.0, 0.1], "radius": 0.2})
        AD = A0.where(D, np.array([[2.0 + 0.3j, 0.2], [0.2, 1.6 + 0.2j]]))
        self._check(A0, AD, D, METHODS)

    def test_complex_background_away_from_inclusion(self):
        ring = self._region({"type": "annulus", "r_inner": 0.7, "r_outer": 0.85})
        A0 = MatrixField.constant(self.n, 1.0).where(ring, (1.0 + 0.3j) * np.eye(2))
        D = self._region({"type": "ball", "radius": 0.2})
        AD = A0.where(D, np.array([[2.0 + 0.2j, 0.1], [0.1, 1.8 + 0.1j]]))
        self._check(A0, AD, D, ("nonlinear", "linearized"), margin=0.45)

    def test_anisotropic_background_two_balls(self):
        base = np.array([[1.2, 0.1], [0.1, 0.9]])
        A0 = MatrixField.constant(self.n, base)
        D = self._region({"type": "union", "parts": [
            {"type": "ball", "center": [0.25, 0.2], "radius": 0.15},
            {"type": "ball", "center": [-0.25, -0.2], "radius": 0.15}]})
        self._check(A0, A0.where(D, 0.5 * base), D, METHODS)



if __name__ == "__main__":
    unittest.main()
