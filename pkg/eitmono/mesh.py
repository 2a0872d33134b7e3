"""
Mesh Module
Triangulated domains, boundary arcs, element masks and the topological
predicates used to qualify test inclusions
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
from matplotlib.path import Path
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .errors import ValidationError

logger = logging.getLogger(__name__)

# Ring offsets rotate by the golden fraction so no three rings line up radially.
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

PointPredicate = Callable[[np.ndarray], np.ndarray]


def _signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _order_boundary_loops(edges: np.ndarray) -> np.ndarray:
    """Chain oriented boundary edges into closed loops, loop by loop."""
    successor = {}
    for index, (a, _b) in enumerate(edges):
        if int(a) in successor:
            raise ValidationError("mesh: boundary is not a set of simple closed loops")
        successor[int(a)] = index

    ordered = []
    used = np.zeros(len(edges), dtype=bool)
    for start in range(len(edges)):
        if used[start]:
            continue
        current = start
        while not used[current]:
            used[current] = True
            ordered.append(current)
            nxt = successor.get(int(edges[current, 1]))
            if nxt is None:
                raise ValidationError("mesh: boundary loop is not closed")
            current = nxt
    return edges[np.asarray(ordered, dtype=int)]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with an oriented boundary-edge list.

    Triangles are stored counter-clockwise; boundary edges are oriented so the
    domain lies on their left, which makes (dy, -dx)/length the outward normal.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    region_label: Optional[np.ndarray] = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        triangles = np.array(self.triangles, dtype=np.int64)
        boundary_edges = np.array(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or not np.all(np.isfinite(nodes)):
            raise ValidationError("mesh: nodes must be a finite (N, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise ValidationError("mesh: triangles must be a non-empty (T, 3) index array")
        if triangles.min() < 0 or triangles.max() >= len(nodes):
            raise ValidationError("mesh: triangle node index out of range")
        if len(boundary_edges) and (boundary_edges.min() < 0 or boundary_edges.max() >= len(nodes)):
            raise ValidationError("mesh: boundary edge node index out of range")
        if np.any(_signed_areas(nodes, triangles) <= 0.0):
            raise ValidationError("mesh: every triangle must have positive signed area")

        if self.region_label is None:
            labels = np.zeros(len(triangles), dtype=np.int64)
        else:
            labels = np.array(self.region_label, dtype=np.int64)
            if labels.shape != (len(triangles),):
                raise ValidationError("mesh: region_label length must equal the triangle count")

        for name, value in (("nodes", nodes), ("triangles", triangles),
                            ("boundary_edges", boundary_edges), ("region_label", labels)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        self._check_boundary()

    def _check_boundary(self):
        keys = self._edge_table
        counts = dict(zip(map(tuple, keys["unique"]), keys["counts"]))
        given = np.sort(self.boundary_edges, axis=1)
        for a, b in given:
            if counts.get((int(a), int(b)), 0) != 1:
                raise ValidationError("mesh: each boundary edge must belong to exactly one triangle")
        if len(given) != int(np.sum(keys["counts"] == 1)):
            raise ValidationError("mesh: boundary_edges must list every edge owned by a single triangle")
        starts = np.bincount(self.boundary_edges[:, 0], minlength=self.n_nodes)
        ends = np.bincount(self.boundary_edges[:, 1], minlength=self.n_nodes)
        if np.any(starts != ends) or np.any(starts > 1):
            raise ValidationError("mesh: boundary edges must form closed loops")

    @classmethod
    def from_triangulation(cls, nodes, triangles, region_label=None) -> "Mesh":
        """Orient triangles counter-clockwise and derive the boundary loops."""
        nodes = np.asarray(nodes, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        flip = _signed_areas(nodes, triangles) < 0.0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]

        local = np.concatenate([triangles[:, list(pair)] for pair in _LOCAL_EDGES])
        keys = np.sort(local, axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = np.asarray(inverse).reshape(-1)
        boundary = local[counts[inverse] == 1]
        return cls(nodes, triangles, _order_boundary_loops(boundary), region_label)

    # --- sizes -------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary_edges(self) -> int:
        return len(self.boundary_edges)

    # --- element geometry ---------------------------------------------------

    @cached_property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.nodes, self.triangles)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three P1 hat functions, shape (T, 3, 2)."""
        p = self.nodes[self.triangles]
        grads = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = p[:, j, 1] - p[:, k, 1]
            grads[:, i, 1] = p[:, k, 0] - p[:, j, 0]
        return grads / (2.0 * self.areas)[:, None, None]

    @cached_property
    def max_edge_length(self) -> float:
        p = self.nodes[self.triangles]
        lengths = [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in _LOCAL_EDGES]
        return float(np.max(lengths))

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    # --- boundary geometry --------------------------------------------------

    @cached_property
    def boundary_lengths(self) -> np.ndarray:
        tangent = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.linalg.norm(tangent, axis=1)

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        tangent = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.column_stack([tangent[:, 1], -tangent[:, 0]]) / self.boundary_lengths[:, None]

    @cached_property
    def boundary_midpoints(self) -> np.ndarray:
        return self.nodes[self.boundary_edges].mean(axis=1)

    @cached_property
    def boundary_node_flags(self) -> np.ndarray:
        flags = np.zeros(self.n_nodes, dtype=bool)
        flags[self.boundary_edges.ravel()] = True
        return flags

    @property
    def perimeter(self) -> float:
        return float(self.boundary_lengths.sum())

    # --- connectivity -------------------------------------------------------

    @cached_property
    def _edge_table(self) -> dict:
        local = np.concatenate([self.triangles[:, list(pair)] for pair in _LOCAL_EDGES])
        owners = np.tile(np.arange(self.n_triangles), 3)
        keys = np.sort(local, axis=1)
        unique, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        return {"keys": keys, "owners": owners, "unique": unique,
                "inverse": np.asarray(inverse).reshape(-1), "counts": counts}

    @cached_property
    def interior_edges(self) -> tuple:
        """(node pairs, owner pairs) for every edge shared by two triangles."""
        table = self._edge_table
        order = np.argsort(table["inverse"], kind="stable")
        inv = table["inverse"][order]
        same = np.flatnonzero(inv[1:] == inv[:-1])
        first, second = order[same], order[same + 1]
        nodes = table["keys"][first]
        owners = np.column_stack([table["owners"][first], table["owners"][second]])
        return nodes, owners

    @cached_property
    def element_adjacency(self) -> sparse.csr_matrix:
        """Symmetric triangle adjacency through shared edges."""
        _, owners = self.interior_edges
        n = self.n_triangles
        rows = np.concatenate([owners[:, 0], owners[:, 1]])
        cols = np.concatenate([owners[:, 1], owners[:, 0]])
        return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    @cached_property
    def boundary_owner(self) -> np.ndarray:
        """Triangle index owning each boundary edge."""
        table = self._edge_table
        lookup = {}
        for key, owner in zip(map(tuple, table["keys"]), table["owners"]):
            lookup.setdefault(key, int(owner))
        keys = np.sort(self.boundary_edges, axis=1)
        return np.array([lookup[(int(a), int(b))] for a, b in keys], dtype=np.int64)

    @cached_property
    def incidence(self) -> sparse.csr_matrix:
        """Triangle-by-node incidence matrix."""
        rows = np.repeat(np.arange(self.n_triangles), 3)
        return sparse.csr_matrix((np.ones(rows.size), (rows, self.triangles.ravel())),
                                 shape=(self.n_triangles, self.n_nodes))

    # --- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "region_label": self.region_label.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Mesh":
        try:
            return cls(np.asarray(data["nodes"], dtype=float),
                       np.asarray(data["triangles"], dtype=np.int64),
                       np.asarray(data["boundary_edges"], dtype=np.int64),
                       data.get("region_label"))
        except KeyError as e:
            raise ValidationError(f"mesh: mesh file is missing the {e} array")


def load_mesh(path: str) -> Mesh:
    if not os.path.exists(path):
        raise ValidationError(f"mesh: mesh file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return Mesh.from_dict(json.load(f))


# --- generation -------------------------------------------------------------

def _disk_points(radius: float, center, h: float) -> np.ndarray:
    spacing = 0.9 * h
    n_rings = max(1, math.ceil(radius / spacing))
    points = [np.zeros((1, 2))]
    for k in range(1, n_rings + 1):
        r = radius * k / n_rings
        n_k = max(6, math.ceil(2.0 * math.pi * r / spacing))
        offset = ((k * _GOLDEN) % 1.0) * 2.0 * math.pi / n_k
        theta = offset + 2.0 * math.pi * np.arange(n_k) / n_k
        points.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    return np.vstack(points) + np.asarray(center, dtype=float)


def _rectangle_mesh(x0: float, x1: float, y0: float, y1: float, h: float) -> Mesh:
    nx = max(1, math.ceil((x1 - x0) / h))
    ny = max(1, math.ceil((y1 - y0) / h))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    n1, n3 = n0 + 1, n0 + nx + 1
    n2 = n3 + 1
    triangles = np.vstack([np.column_stack([n0, n1, n2]), np.column_stack([n0, n2, n3])])
    return Mesh.from_triangulation(nodes, triangles)


def build_mesh(spec: Mapping[str, Any], h: float) -> Mesh:
    """Triangulate a disk or rectangle with target edge length ``h``.

    ``spec`` is ``{"type": "disk", "radius": R, "center": [x, y]}`` or
    ``{"type": "rectangle", "extents": [x0, x1, y0, y1]}``.
    """
    if not (h > 0.0 and math.isfinite(h)):
        raise ValidationError("mesh: target edge length h must be positive")
    kind = spec.get("type")
    if kind == "disk":
        radius = float(spec.get("radius", 1.0))
        if radius <= 0.0:
            raise ValidationError("mesh: degenerate extents (disk radius must be positive)")
        points = _disk_points(radius, spec.get("center", (0.0, 0.0)), h)
        mesh = Mesh.from_triangulation(points, Delaunay(points).simplices)
    elif kind == "rectangle":
        x0, x1, y0, y1 = (float(v) for v in spec.get("extents", (0.0, 1.0, 0.0, 1.0)))
        if x1 <= x0 or y1 <= y0:
            raise ValidationError("mesh: degenerate extents (rectangle must have positive width and height)")
        mesh = _rectangle_mesh(x0, x1, y0, y1, h)
    else:
        raise ValidationError(f"mesh: unknown domain type {kind!r} (expected 'disk' or 'rectangle')")

    logger.info("Built %s mesh: %d nodes, %d triangles, %d boundary edges, max edge %.4g",
                kind, mesh.n_nodes, mesh.n_triangles, mesh.n_boundary_edges, mesh.max_edge_length)
    if mesh.max_edge_length > 1.5 * h:
        logger.warning("Max edge %.4g exceeds 1.5*h = %.4g", mesh.max_edge_length, 1.5 * h)
    return mesh


# --- boundary arcs ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GammaSpec:
    """The accessible boundary arc: a union of whole boundary edges."""

    edge_indices: np.ndarray
    arc_length: float

    def __post_init__(self):
        indices = np.unique(np.asarray(self.edge_indices, dtype=np.int64))
        if indices.size == 0:
            raise ValidationError("mesh: empty Γ (no boundary edge selected)")
        indices.setflags(write=False)
        object.__setattr__(self, "edge_indices", indices)

    @property
    def n_edges(self) -> int:
        return int(self.edge_indices.size)

    def lengths(self, mesh: Mesh) -> np.ndarray:
        return mesh.boundary_lengths[self.edge_indices]

    def edges(self, mesh: Mesh) -> np.ndarray:
        return mesh.boundary_edges[self.edge_indices]

    def midpoints(self, mesh: Mesh) -> np.ndarray:
        return mesh.boundary_midpoints[self.edge_indices]


def _gamma_predicate(spec) -> Callable[[np.ndarray], np.ndarray]:
    if spec is None or spec == "full":
        return lambda pts: np.ones(len(pts), dtype=bool)
    if callable(spec):
        return spec
    kind = spec.get("type", "full")
    if kind == "full":
        return lambda pts: np.ones(len(pts), dtype=bool)
    if kind == "angle":
        cx, cy = spec.get("center", (0.0, 0.0))
        start = float(spec["start"])
        width = float(spec["stop"]) - start
        if width >= 2.0 * math.pi:
            return lambda pts: np.ones(len(pts), dtype=bool)

        def in_arc(pts):
            theta = np.arctan2(pts[:, 1] - cy, pts[:, 0] - cx)
            return np.mod(theta - start, 2.0 * math.pi) < width
        return in_arc
    if kind == "box":
        return _region_predicate(spec)
    raise ValidationError(f"mesh: unknown Γ predicate type {kind!r}")


def select_gamma(mesh: Mesh, predicate=None) -> GammaSpec:
    """Select the boundary edges whose midpoint satisfies ``predicate``.

    ``predicate`` may be ``None``/``{"type": "full"}``, an angular interval
    ``{"type": "angle", "start": a, "stop": b}`` (radians, half-open, taken
    modulo 2π), a ``box`` or any callable on an (E, 2) midpoint array.
    """
    selected = np.flatnonzero(_gamma_predicate(predicate)(mesh.boundary_midpoints))
    if selected.size == 0:
        raise ValidationError("mesh: empty Γ (predicate selects no boundary edge)")
    gamma = GammaSpec(selected, float(mesh.boundary_lengths[selected].sum()))
    logger.info("Selected Γ: %d edges, arc length %.6g", gamma.n_edges, gamma.arc_length)
    return gamma


# --- region masks -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegionMask:
    """One boolean flag per triangle, with set algebra."""

    element_flags: np.ndarray

    def __post_init__(self):
        flags = np.array(self.element_flags, dtype=bool).reshape(-1)
        flags.setflags(write=False)
        object.__setattr__(self, "element_flags", flags)

    @classmethod
    def empty(cls, n: int) -> "RegionMask":
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def full(cls, n: int) -> "RegionMask":
        return cls(np.ones(n, dtype=bool))

    def __len__(self) -> int:
        return self.element_flags.size

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.element_flags & other.element_flags)

    def __or__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.element_flags | other.element_flags)

    def __sub__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.element_flags & ~other.element_flags)

    def __invert__(self) -> "RegionMask":
        return RegionMask(~self.element_flags)

    @property
    def count(self) -> int:
        return int(self.element_flags.sum())

    @property
    def is_empty(self) -> bool:
        return not self.element_flags.any()

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.element_flags)

    def issubset(self, other: "RegionMask") -> bool:
        return not np.any(self.element_flags & ~other.element_flags)

    def equals(self, other: "RegionMask") -> bool:
        return np.array_equal(self.element_flags, other.element_flags)

    def area(self, mesh: Mesh) -> float:
        check_mask(mesh, self)
        return float(mesh.areas[self.element_flags].sum())

    def key(self) -> bytes:
        return np.packbits(self.element_flags).tobytes()


def check_mask(mesh: Mesh, mask: RegionMask, name: str = "mask") -> None:
    if len(mask) != mesh.n_triangles:
        raise ValidationError(
            f"mesh: {name} has {len(mask)} flags but the mesh has {mesh.n_triangles} triangles")


def _region_predicate(spec: Mapping[str, Any]) -> PointPredicate:
    kind = spec.get("type")
    if kind == "ball":
        center = np.asarray(spec.get("center", (0.0, 0.0)), dtype=float)
        radius = float(spec["radius"])
        return lambda pts: np.linalg.norm(pts - center, axis=1) <= radius
    if kind == "annulus":
        center = np.asarray(spec.get("center", (0.0, 0.0)), dtype=float)
        r_in, r_out = float(spec["r_inner"]), float(spec["r_outer"])

        def in_annulus(pts):
            r = np.linalg.norm(pts - center, axis=1)
            return (r >= r_in) & (r <= r_out)
        return in_annulus
    if kind == "box":
        lo = np.array([spec.get("xmin", -np.inf), spec.get("ymin", -np.inf)], dtype=float)
        hi = np.array([spec.get("xmax", np.inf), spec.get("ymax", np.inf)], dtype=float)
        return lambda pts: np.all((pts >= lo) & (pts <= hi), axis=1)
    if kind == "halfplane":
        normal = np.asarray(spec["normal"], dtype=float)
        offset = float(spec.get("offset", 0.0))
        return lambda pts: pts @ normal <= offset
    if kind == "polygon":
        path = Path(np.asarray(spec["vertices"], dtype=float))
        return lambda pts: path.contains_points(pts)
    if kind == "all":
        return lambda pts: np.ones(len(pts), dtype=bool)
    if kind == "none":
        return lambda pts: np.zeros(len(pts), dtype=bool)
    if kind == "union":
        parts = [_region_predicate(p) for p in spec["parts"]]
        return lambda pts: np.logical_or.reduce([p(pts) for p in parts])
    if kind == "intersection":
        parts = [_region_predicate(p) for p in spec["parts"]]
        return lambda pts: np.logical_and.reduce([p(pts) for p in parts])
    if kind == "difference":
        base, minus = _region_predicate(spec["base"]), _region_predicate(spec["minus"])
        return lambda pts: base(pts) & ~minus(pts)
    raise ValidationError(f"mesh: unknown region predicate type {kind!r}")


def mask_from_predicate(mesh: Mesh, predicate: Union[PointPredicate, Mapping[str, Any]]) -> RegionMask:
    """Flag exactly the triangles whose centroid satisfies ``predicate``."""
    test = predicate if callable(predicate) else _region_predicate(predicate)
    flags = np.asarray(test(mesh.centroids), dtype=bool)
    if flags.shape != (mesh.n_triangles,):
        raise ValidationError("mesh: region predicate must return one boolean per centroid")
    return RegionMask(flags)


def load_mask_csv(mesh: Mesh, path: str) -> RegionMask:
    """Read a 0/1 per-element CSV (columns ``element,flag``)."""
    if not os.path.exists(path):
        raise ValidationError(f"mesh: mask file not found: {path}")
    df = pd.read_csv(path)
    if "flag" not in df.columns:
        raise ValidationError(f"mesh: mask file {path} has no 'flag' column")
    if "element" in df.columns:
        df = df.sort_values("element")
    mask = RegionMask(df["flag"].to_numpy() != 0)
    check_mask(mesh, mask, path)
    return mask


def mask_from_spec(mesh: Mesh, spec: Mapping[str, Any], base_dir: str = ".") -> RegionMask:
    """Resolve a config mask source: a predicate spec or ``{"type": "csv", "path": ...}``."""
    if spec.get("type") == "csv":
        return load_mask_csv(mesh, os.path.join(base_dir, spec["path"]))
    return mask_from_predicate(mesh, spec)


# --- topology ---------------------------------------------------------------

def _free_graph(mesh: Mesh, flags: np.ndarray) -> sparse.csr_matrix:
    """Adjacency of unflagged triangles plus an exterior vertex at index T."""
    n = mesh.n_triangles
    free = ~flags
    adj = mesh.element_adjacency.tocoo()
    keep = free[adj.row] & free[adj.col]
    owners = mesh.boundary_owner[free[mesh.boundary_owner]]
    rows = np.concatenate([adj.row[keep], owners, np.full(owners.size, n)])
    cols = np.concatenate([adj.col[keep], np.full(owners.size, n), owners])
    return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n + 1, n + 1))


def _complement_labels(mesh: Mesh, flags: np.ndarray):
    _, labels = connected_components(_free_graph(mesh, flags), directed=False)
    return labels[:-1], labels[-1]


def connected_complement(mesh: Mesh, C: RegionMask) -> bool:
    """True iff the unflagged triangles and the exterior form one component."""
    check_mask(mesh, C, "C")
    flags = C.element_flags
    labels, exterior = _complement_labels(mesh, flags)
    return bool(np.all(labels[~flags] == exterior))


def outer_shape(mesh: Mesh, D: RegionMask) -> RegionMask:
    """D together with every complement pocket not reachable from the exterior."""
    check_mask(mesh, D, "D")
    flags = D.element_flags
    labels, exterior = _complement_labels(mesh, flags)
    return RegionMask(flags | (labels != exterior))


def components(mesh: Mesh, mask: RegionMask):
    """Edge-connected components of a mask: (count, labels with -1 off the mask)."""
    idx = mask.indices
    labels = np.full(mesh.n_triangles, -1, dtype=np.int64)
    if idx.size == 0:
        return 0, labels
    sub = mesh.element_adjacency[idx][:, idx]
    count, sub_labels = connected_components(sub, directed=False)
    labels[idx] = sub_labels
    return int(count), labels


def mask_boundary_nodes(mesh: Mesh, C: RegionMask) -> np.ndarray:
    """Node flags of the edge-boundary of C (edges between C and non-C, and C's edges on ∂Ω)."""
    nodes, owners = mesh.interior_edges
    flags = C.element_flags
    cut = flags[owners[:, 0]] != flags[owners[:, 1]]
    out = np.zeros(mesh.n_nodes, dtype=bool)
    out[nodes[cut].ravel()] = True
    on_outer = flags[mesh.boundary_owner]
    out[mesh.boundary_edges[on_outer].ravel()] = True
    return out


def lipschitz_boundary(mesh: Mesh, C: RegionMask) -> bool:
    """Every node on the edge-boundary of C has exactly two incident boundary edges."""
    nodes, owners = mesh.interior_edges
    flags = C.element_flags
    cut = nodes[flags[owners[:, 0]] != flags[owners[:, 1]]]
    outer = mesh.boundary_edges[flags[mesh.boundary_owner]]
    degree = np.bincount(np.concatenate([cut.ravel(), outer.ravel()]), minlength=mesh.n_nodes)
    return bool(np.all((degree == 0) | (degree == 2)))


def dilate(mesh: Mesh, mask: RegionMask, rings: int = 1) -> RegionMask:
    """Grow a mask by ``rings`` layers of vertex-sharing triangles."""
    flags = mask.element_flags.astype(float)
    inc = mesh.incidence
    for _ in range(max(0, rings)):
        node_hit = inc.T @ flags > 0
        flags = (inc @ node_hit.astype(float) > 0).astype(float)
    return RegionMask(flags > 0)


def inner_collar(mesh: Mesh, D: RegionMask, depth: int) -> RegionMask:
    """Triangles of D within ``depth`` edge-steps of D's edge-boundary (depth 1 = the rim)."""
    check_mask(mesh, D, "D")
    flags = D.element_flags
    adj = mesh.element_adjacency
    outside_neighbours = adj @ (~flags).astype(float) > 0
    touches_outer = np.zeros(mesh.n_triangles, dtype=bool)
    touches_outer[mesh.boundary_owner] = True
    collar = flags & (outside_neighbours | touches_outer)
    for _ in range(max(0, depth - 1)):
        collar = flags & (collar | (adj @ collar.astype(float) > 0))
    return RegionMask(collar)


def boundary_distance(mesh: Mesh, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Distance from each point to the polygonal boundary ∂Ω."""
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    d = mesh.nodes[mesh.boundary_edges[:, 1]] - a
    dd = np.einsum("ij,ij->i", d, d)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pei,ei->pe", p, d) / dd, 0.0, 1.0)
        diff = p - t[..., None] * d[None, :, :]
        out[start:start + chunk] = np.sqrt(np.min(np.einsum("pei,pei->pe", diff, diff), axis=1))
    return out


@dataclass
class AdmissibilityReport:
    admissible: bool
    reasons: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"admissible": self.admissible, "reasons": list(self.reasons)}


def admissible_test_inclusion(mesh: Mesh, C: RegionMask, M: Optional[RegionMask] = None,
                              require_lipschitz: bool = False) -> AdmissibilityReport:
    """Check the discrete criteria for a test inclusion C.

    C must not touch ∂Ω, must have a connected complement, and no triangle of
    M may touch C's edge-boundary. ``require_lipschitz`` adds the no-pinch
    condition used by the extreme method.
    """
    check_mask(mesh, C, "C")
    reasons = []
    flags = C.element_flags
    if np.any(mesh.boundary_node_flags[mesh.triangles[flags]]):
        reasons.append("not compactly contained")
    if not connected_complement(mesh, C):
        reasons.append("complement not connected")
    if M is not None and not M.is_empty:
        check_mask(mesh, M, "M")
        rim = mask_boundary_nodes(mesh, C)
        if np.any(rim[mesh.triangles[M.element_flags]]):
            reasons.append("∂C ∩ M ≠ ∅")
    if require_lipschitz and not lipschitz_boundary(mesh, C):
        reasons.append("∂C not Lipschitz (pinched vertex)")
    return AdmissibilityReport(not reasons, reasons)
