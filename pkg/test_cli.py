"""
Command Line and Export Tests
Subcommand runs on small configs, exit codes, reproducible artifacts and ND file round trips
"""

import contextlib
import io
import json
import os
import tempfile
import unittest

import numpy as np

from eitmono.cli import main
from eitmono.coeff import MatrixField
from eitmono.config import (RunConfig, apply_environment, config_from_dict, parse_matrix,
                            validate_config)
from eitmono.data_exporter import EITDataExporter, clean, read_nd
from eitmono.errors import ValidationError
from eitmono.forward import assemble_and_factor
from eitmono.mesh import build_mesh, select_gamma
from eitmono.ndmap import compute_nd

SMALL_RUN = {
    "mesh": {"type": "disk", "radius": 1.0, "h": 0.2},
    "background": {"value": 1.0},
    "phantom": {"pieces": [{"region": {"type": "ball", "center": [0.25, 0.0], "radius": 0.25},
                            "value": 2.0}]},
    "method": "nonlinear",
    "dictionary": {"type": "halfspace_caps", "n_dirs": 4, "n_offsets": 3, "margin": 0.15},
}


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        status = main(argv)
    return status, out.getvalue(), err.getvalue()


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _config(self, payload, name="run.json"):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle)
        return path

    def _out(self, name):
        return os.path.join(self.tmp.name, name)

    def test_ndmap_writes_artifacts(self):
        status, out, _ = _run(["ndmap", "--config", self._config(SMALL_RUN), "--output-dir", self._out("nd")])
        self.assertEqual(status, 0)
        self.assertIn("Leading eigenvalues", out)
        for name in ("nd_matrix.csv", "gram.csv", "spectrum.csv", "ndmap.json", "config.json", "manifest.json"):
            self.assertTrue(os.path.exists(os.path.join(self._out("nd"), name)), name)
        with open(os.path.join(self._out("nd"), "ndmap.json"), encoding="utf-8") as handle:
            summary = json.load(handle)
        self.assertLess(summary["adjoint_residual"], 1e-10)
        with open(os.path.join(self._out("nd"), "manifest.json"), encoding="utf-8") as handle:
            manifest = json.load(handle)
        self.assertIn("config.json", [a["path"] for a in manifest["artifacts"]])

    def test_reconstruct_contains_inclusion(self):
        masks = [{"type": "ball", "center": [0.25, 0.0], "radius": 0.45},
                 {"type": "ball", "center": [-0.4, 0.0], "radius": 0.3},
                 {"type": "box", "xmin": -0.1, "xmax": 0.6, "ymin": -0.4, "ymax": 0.4}]
        payload = {**SMALL_RUN, "dictionary": {"type": "user_masks", "masks": masks}}
        status, _, _ = _run(["reconstruct", "--config", self._config(payload),
                             "--output-dir", self._out("recon")])
        self.assertEqual(status, 0)
        with open(os.path.join(self._out("recon"), "recon.json"), encoding="utf-8") as handle:
            recon = json.load(handle)
        self.assertTrue(recon["mask_contains_D"])
        with open(os.path.join(self._out("recon"), "mask.pgm"), encoding="ascii") as handle:
            self.assertEqual(handle.readline().strip(), "P2")

    def test_reruns_are_byte_identical_across_jobs(self):
        path = self._config(SMALL_RUN)
        for jobs, folder in (("1", "a"), ("4", "b")):
            status, _, _ = _run(["reconstruct", "--config", path, "--jobs", jobs, "--output-dir", self._out(folder)])
            self.assertEqual(status, 0)
        names = sorted(os.listdir(self._out("a")))
        self.assertEqual(names, sorted(os.listdir(self._out("b"))))
        for name in names:
            with open(os.path.join(self._out("a"), name), "rb") as a, open(os.path.join(self._out("b"), name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)

    def test_corollary_with_complex_background_exits_2(self):
        payload = {**SMALL_RUN, "background": {"value": [1.0, 0.2]}, "method": "corollary"}
        status, _, err = _run(["reconstruct", "--config", self._config(payload),
                               "--output-dir", self._out("bad")])
        self.assertEqual(status, 2)
        self.assertIn("self-adjoint background", err)
        self.assertFalse(os.path.exists(self._out("bad")))

    def test_missing_config_exits_2(self):
        status, _, err = _run(["mesh", "--config", self._out("nope.json")])
        self.assertEqual(status, 2)
        self.assertIn("config file not found", err)

    def test_unknown_key_exits_2(self):
        status, _, err = _run(["mesh", "--config", self._config({"meshh": {}})])
        self.assertEqual(status, 2)
        self.assertIn("unknown keys", err)

    def test_test_subcommand_needs_candidate(self):
        status, _, err = _run(["test", "--config", self._config(SMALL_RUN), "--output-dir", self._out("t")])
        self.assertEqual(status, 2)
        self.assertIn("test.candidate", err)

    def test_malformed_sections_exit_2(self):
        cases = (
            ({"bounds": {"beta": 2.0}}, "bounds is missing alpha"),
            ({"phantom": {"pieces": [{"region": {"type": "ball", "radius": 0.2}}]}}, "needs 'region' and 'value'"),
            ({"background": {"value": "one"}}, "cannot read a 2x2 coefficient value"),
            ({"mesh": {"type": "disk", "h": "fine"}}, "malformed entry"),
            ({"phantom": {"pieces": [{"region": {"type": "ball"}, "value": 2.0}]}}, "malformed region"),
        )
        for index, (change, message) in enumerate(cases):
            payload = {**SMALL_RUN, **change}
            status, _, err = _run(["reconstruct", "--config", self._config(payload, f"bad{index}.json"),
                                   "--output-dir", self._out(f"bad{index}")])
            self.assertEqual(status, 2, change)
            self.assertIn(message, err)

    def test_single_candidate(self):
        payload = {**SMALL_RUN, "test": {"candidate": {"type": "ball", "center": [0.25, 0.0], "radius": 0.45}}}
        status, out, _ = _run(["test", "--config", self._config(payload), "--output-dir", self._out("t")])
        self.assertEqual(status, 0)
        with open(os.path.join(self._out("t"), "test_report.json"), encoding="utf-8") as handle:
            report = json.load(handle)
        self.assertTrue(report["passed"])
        self.assertTrue(report["D_subset_C"])


class TestConfig(unittest.TestCase):
    def test_sections_merge_over_defaults(self):
        config = config_from_dict({"tolerance": {"absolute": 1e-6}})
        self.assertEqual(config.tolerance["absolute"], 1e-6)
        self.assertEqual(config.tolerance["safety"], 10.0)
        self.assertNotIn("base_dir", config.to_dict())

    def test_parse_matrix_forms(self):
        np.testing.assert_array_equal(parse_matrix(2.0), 2.0 * np.eye(2))
        np.testing.assert_array_equal(parse_matrix([1.0, 0.5]), (1.0 + 0.5j) * np.eye(2))
        np.testing.assert_array_equal(parse_matrix({"re": [[1, 0], [0, 2]], "im": [[0, 1], [1, 0]]}),
                                      [[1, 1j], [1j, 2]])
        np.testing.assert_array_equal(parse_matrix([1, 0, 0, 0, 0, 0, 3, 0]), np.diag([1.0, 3.0]))
        with self.assertRaises(ValidationError):
            parse_matrix([1.0, 2.0, 3.0])

    def test_validation_rejects_bad_values(self):
        for payload in ({"method": "guess"}, {"one_sided": "left"}, {"jobs": 0},
                        {"mesh": {"type": "disk", "h": 0.0}}, {"background": {"value": -1.0}},
                        {"tolerance": {"relative": -1.0}}, {"locpot": {"reg": 0.0}},
                        {"bounds": {"alpha": 2.0, "beta": 1.0}}):
            with self.assertRaises(ValidationError, msg=str(payload)):
                validate_config(config_from_dict(payload))

    def test_environment_clamps_jobs(self):
        config = RunConfig()
        previous = os.environ.get("EITMONO_JOBS")
        try:
            os.environ["EITMONO_JOBS"] = "1000"
            self.assertEqual(apply_environment(config).jobs, 64)
            os.environ["EITMONO_JOBS"] = "many"
            self.assertEqual(apply_environment(config).jobs, 64)
        finally:
            if previous is None:
                os.environ.pop("EITMONO_JOBS", None)
            else:
                os.environ["EITMONO_JOBS"] = previous


class TestExport(unittest.TestCase):
    def test_nd_file_round_trip(self):
        mesh = build_mesh({"type": "disk", "radius": 1.0}, 0.3)
        gamma = select_gamma(mesh, "full")
        A = MatrixField.constant(mesh.n_triangles, np.array([[1.0 + 0.2j, 0.1], [0.0, 1.3]]))
        L = compute_nd(assemble_and_factor(mesh, A, gamma))
        with tempfile.TemporaryDirectory() as tmp:
            path = EITDataExporter(tmp).write_nd(L)
            loaded = read_nd(path, L.basis)
        np.testing.assert_allclose(loaded.matrix, L.matrix, rtol=1e-11, atol=1e-12)

    def test_clean_rounds_and_flattens(self):
        payload = clean({"x": 1.0 / 3.0, "z": 1 + 2j, "n": np.int64(3), "bad": float("nan"), "flag": np.bool_(True)})
        self.assertEqual(payload["x"], 0.333333333333)
        self.assertEqual(payload["z"], {"re": 1.0, "im": 2.0})
        self.assertEqual(payload["n"], 3)
        self.assertEqual(payload["bad"], "nan")
        self.assertIs(payload["flag"], True)


if __name__ == "__main__":
    unittest.main()
