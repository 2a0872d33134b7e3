"""
Localized Potential Tests
Energy concentration in a ball, optimality of the computed current and input checks
"""

import unittest

import numpy as np

from eitmono.coeff import MatrixField
from eitmono.errors import ValidationError
from eitmono.locpot import energy_forms, localized_current
from eitmono.mesh import build_mesh, mask_from_predicate, select_gamma


class TestLocalizedCurrent(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.15)
        cls.gamma = select_gamma(cls.mesh, "full")
        cls.A = MatrixField.constant(cls.mesh.n_triangles, np.array([[1.0 + 0.2j, 0.1], [0.0, 1.5]]))
        cls.U = mask_from_predicate(cls.mesh, {"type": "halfplane", "normal": [-1.0, 0.0], "offset": 0.1})
        cls.B = mask_from_predicate(cls.mesh, {"type": "ball", "center": [0.45, 0.0], "radius": 0.2})
        cls.result = localized_current(cls.mesh, cls.A, cls.gamma, cls.U, cls.B, 1e-6)
        cls.forms = energy_forms(cls.mesh, cls.A, cls.gamma, cls.U, cls.B)

    def test_energy_concentrates_in_ball(self):
        self.assertGreater(self.result.ratio, 1.0)
        self.assertGreater(self.result.energy_in_B, self.result.energy_outside_U)
        self.assertAlmostEqual(self.result.current.l2_norm(), 1.0, places=10)
        self.assertTrue(self.result.current.is_mean_free())

    def test_quotient_beats_random_currents(self):
        rng = np.random.default_rng(2)
        k = self.forms.basis.dimension
        for _ in range(20):
            coords = rng.standard_normal(k) + 1j * rng.standard_normal(k)
            self.assertLessEqual(self.forms.quotient(coords, 1e-6), self.result.quotient * (1.0 + 1e-9))

    def test_quotient_decreases_with_regularization(self):
        loose = localized_current(self.mesh, self.A, self.gamma, self.U, self.B, 1e-2)
        self.assertLessEqual(loose.quotient, self.result.quotient * (1.0 + 1e-9))
        self.assertAlmostEqual(loose.floor, 1e-2)

    def test_report_fields(self):
        data = self.result.to_dict()
        self.assertEqual(data["ucp"], "assumed, not checked")
        self.assertEqual(data["reg"], 1e-6)
        self.assertEqual(data["reg_effective"], 1e-6)
        self.assertNotIn("iterations", data)

    def test_mesh_power_shrinks_floor_with_h(self):
        h = self.mesh.max_edge_length
        scaled = localized_current(self.mesh, self.A, self.gamma, self.U, self.B, 1e-2, mesh_power=2.0)
        plain = localized_current(self.mesh, self.A, self.gamma, self.U, self.B, 1e-2 * h ** 2)
        self.assertAlmostEqual(scaled.reg_effective, 1e-2 * h ** 2, delta=1e-15)
        self.assertAlmostEqual(scaled.quotient, plain.quotient, delta=1e-8 * plain.quotient)
        self.assertAlmostEqual(scaled.ratio, plain.ratio, delta=1e-8 * plain.ratio)
        self.assertEqual(scaled.to_dict()["mesh_power"], 2.0)

    def test_ball_outside_u(self):
        B = mask_from_predicate(self.mesh, {"type": "ball", "center": [-0.5, 0.0], "radius": 0.2})
        with self.assertRaises(ValidationError):
            localized_current(self.mesh, self.A, self.gamma, self.U, B, 1e-6)

    def test_non_positive_regularization(self):
        for reg in (0.0, -1.0):
            with self.assertRaises(ValidationError):
                localized_current(self.mesh, self.A, self.gamma, self.U, self.B, reg)
        with self.assertRaises(ValidationError):
            localized_current(self.mesh, self.A, self.gamma, self.U, self.B, 1e-6, mesh_power=-1.0)

    def test_u_must_reach_gamma(self):
        gamma = select_gamma(self.mesh, {"type": "angle", "start": 2.5, "stop": 3.8})
        with self.assertRaises(ValidationError):
            localized_current(self.mesh, self.A, gamma, self.U, self.B, 1e-6)

    def test_unknown_ucp_condition(self):
        with self.assertRaises(ValidationError):
            localized_current(self.mesh, self.A, self.gamma, self.U, self.B, 1e-6, ucp_condition="hope")


if __name__ == "__main__":
    unittest.main()
