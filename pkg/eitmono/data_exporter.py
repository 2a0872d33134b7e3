"""
EIT Data Exporter
Writes run artifacts (mesh, ND matrices, spectra, masks, reports and plot data)
with rounded, reproducible serialization and a hashed manifest
"""

import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd
from matplotlib.tri import Triangulation, TrapezoidMapTriFinder

from .errors import ValidationError
from .mesh import Mesh, RegionMask
from .ndmap import BoundaryBasis, NDOperator, generalized_eigenvalues

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


def round_float(x: float) -> float:
    """Round to 12 significant digits (and fold -0.0 into 0.0)."""
    value = float(f"{float(x):.12g}")
    return 0.0 if value == 0.0 else value


def clean(obj):
    """JSON-safe copy of a report payload with every float rounded."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, RegionMask):
        return {"count": obj.count}
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": round_float(obj.real), "im": round_float(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            return str(float(obj))
        return round_float(obj)
    return obj


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


class EITDataExporter:
    def __init__(self, output_dir: str = "runs/"):
        self.output_dir = output_dir
        self.artifacts = []

        # Ensure output directory exists
        os.makedirs(self.output_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        path = os.path.join(self.output_dir, name)
        if name not in self.artifacts:
            self.artifacts.append(name)
        return path

    def _write_frame(self, df: pd.DataFrame, name: str, preamble: str = "") -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(preamble)
            df.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.debug("Wrote %s (%d rows)", path, len(df))
        return path

    def write_json(self, name: str, payload) -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(clean(payload), handle, indent=2, sort_keys=True, ensure_ascii=False)
            handle.write("\n")
        return path

    def write_mesh(self, mesh: Mesh, name: str = "mesh.json") -> str:
        return self.write_json(name, mesh.to_dict())

    # --- boundary operators ---------------------------------------------------

    def write_nd(self, L: NDOperator, name: str = "nd_matrix.csv") -> str:
        """``dimension,k`` line, then one ``i,j,re,im`` row per entry."""
        k = L.dimension
        i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        df = pd.DataFrame({"i": i.ravel(), "j": j.ravel(),
                           "re": [round_float(x) for x in L.matrix.real.ravel()],
                           "im": [round_float(x) for x in L.matrix.imag.ravel()]})
        return self._write_frame(df, name, f"dimension,{k}\n")

    def write_gram(self, basis: BoundaryBasis, name: str = "gram.csv") -> str:
        k = basis.dimension
        i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        df = pd.DataFrame({"i": i.ravel(), "j": j.ravel(),
                           "value": [round_float(x) for x in basis.gram.ravel()]})
        return self._write_frame(df, name, f"dimension,{k}\n")

    def write_spectrum(self, L: NDOperator, name: str = "spectrum.csv",
                       disk_radius=None) -> pd.DataFrame:
        """Generalized eigenvalues against mode number (two per Fourier mode)."""
        values = generalized_eigenvalues(L)
        df = pd.DataFrame({"index": np.arange(values.size),
                           "eigenvalue": [round_float(v) for v in np.real(values)],
                           "mode": np.arange(values.size) // 2 + 1})
        if np.iscomplexobj(values) and np.abs(np.imag(values)).max(initial=0.0) > 0.0:
            df["eigenvalue_imag"] = [round_float(v) for v in np.imag(values)]
        if disk_radius is not None:
            df["reference"] = [round_float(disk_radius / m) for m in df["mode"]]
            df["relative_error"] = [round_float(abs(e - r) / r) for e, r in zip(df["eigenvalue"], df["reference"])]
        self._write_frame(df, name)
        return df

    # --- fields and masks -----------------------------------------------------

    def write_solution(self, mesh: Mesh, values: np.ndarray, name: str = "solution.csv") -> str:
        df = pd.DataFrame({"node": np.arange(mesh.n_nodes),
                           "x": mesh.nodes[:, 0], "y": mesh.nodes[:, 1],
                           "re": [round_float(v) for v in np.real(values)],
                           "im": [round_float(v) for v in np.imag(values)]})
        return self._write_frame(df, name)

    def write_current(self, values: np.ndarray, edge_indices: np.ndarray, name: str = "current.csv") -> str:
        df = pd.DataFrame({"edge": np.asarray(edge_indices),
                           "re": [round_float(v) for v in np.real(values)],
                           "im": [round_float(v) for v in np.imag(values)]})
        return self._write_frame(df, name)

    def write_mask(self, mask: RegionMask, name: str = "mask.csv") -> str:
        df = pd.DataFrame({"element": np.arange(len(mask)),
                           "flag": mask.element_flags.astype(int)})
        return self._write_frame(df, name)

    def write_pgm(self, mesh: Mesh, mask: RegionMask, name: str = "mask.pgm", resolution: int = 256) -> str:
        """Plain PGM raster: 255 on the mask, 128 elsewhere in Ω, 0 outside."""
        if resolution < 2:
            raise ValidationError("export: PGM resolution must be at least 2")
        lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
        width = resolution
        height = max(2, int(round(resolution * (hi[1] - lo[1]) / (hi[0] - lo[0]))))
        xs = lo[0] + (np.arange(width) + 0.5) * (hi[0] - lo[0]) / width
        ys = hi[1] - (np.arange(height) + 0.5) * (hi[1] - lo[1]) / height
        X, Y = np.meshgrid(xs, ys)
        finder = TrapezoidMapTriFinder(Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles))
        element = np.asarray(finder(X.ravel(), Y.ravel()))
        pixels = np.zeros(element.size, dtype=int)
        inside = element >= 0
        pixels[inside] = np.where(mask.element_flags[element[inside]], 255, 128)
        rows = pixels.reshape(height, width)

        path = self._path(name)
        with open(path, "w", encoding="ascii", newline="\n") as handle:
            handle.write(f"P2\n{width} {height}\n255\n")
            for row in rows:
                handle.write(" ".join(str(v) for v in row) + "\n")
        return path

    # --- plot data ------------------------------------------------------------

    def write_offsets(self, reports, candidates, name: str = "min_eig_vs_offset.csv") -> pd.DataFrame:
        """Per-candidate minimum eigenvalues against cap direction and offset."""
        by_id = {c.candidate_id: c for c in candidates}
        rows = []
        for report in reports:
            meta = by_id[report.candidate_id].meta
            rows.append({"candidate_id": report.candidate_id,
                         "direction": meta.get("direction", -1),
                         "angle": meta.get("angle", np.nan),
                         "quantile": meta.get("quantile", np.nan),
                         "offset": meta.get("offset", np.nan),
                         "min_eig_lower": report.min_eig("lower"),
                         "min_eig_upper": report.min_eig("upper"),
                         "passed": int(report.passed)})
        df = pd.DataFrame(rows, columns=["candidate_id", "direction", "angle", "quantile", "offset",
                                         "min_eig_lower", "min_eig_upper", "passed"])
        self._write_frame(df, name)
        return df

    def write_manifest(self, name: str = "manifest.json") -> str:
        entries = [{"path": artifact, "sha256": _sha256(os.path.join(self.output_dir, artifact))}
                   for artifact in sorted(self.artifacts) if artifact != name]
        path = os.path.join(self.output_dir, name)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump({"artifacts": entries}, handle, indent=2, sort_keys=True)
            handle.write("\n")
        logger.info("Manifest lists %d artifacts in %s", len(entries), self.output_dir)
        return path


def read_nd(path: str, basis: BoundaryBasis, label: str = "Λ") -> NDOperator:
    """Read an ND matrix written by :meth:`EITDataExporter.write_nd`."""
    with open(path, "r", encoding="utf-8") as handle:
        head = handle.readline().strip().split(",")
        if len(head) != 2 or head[0] != "dimension":
            raise ValidationError(f"export: {path} does not start with a 'dimension,k' line")
        k = int(head[1])
        df = pd.read_csv(handle)
    if k != basis.dimension:
        raise ValidationError(f"export: {path} has dimension {k}, basis has {basis.dimension}")
    matrix = np.zeros((k, k), dtype=complex)
    matrix[df["i"].to_numpy(), df["j"].to_numpy()] = df["re"].to_numpy() + 1j * df["im"].to_numpy()
    return NDOperator(matrix, basis, label)
