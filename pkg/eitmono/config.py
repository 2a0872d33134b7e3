"""
Run Configuration
JSON run configs, flag and environment overrides, validation before any solve,
and the builders that turn config sections into meshes, fields and masks
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from .coeff import (CoefficientBounds, InclusionPiece, MatrixField, PhantomSpec, joint_bounds,
                    matrix_from_reals)
from .errors import ValidationError
from .mesh import GammaSpec, Mesh, RegionMask, build_mesh, load_mesh, mask_from_spec, select_gamma
from .mono import METHODS, ONE_SIDED
from .locpot import UCP_CONDITIONS

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
MAX_JOBS = 64


@dataclass
class RunConfig:
    mesh: Dict[str, Any] = field(default_factory=lambda: {"type": "disk", "radius": 1.0, "h": 0.1})
    gamma: Any = "full"
    background: Dict[str, Any] = field(default_factory=lambda: {"value": 1.0, "pieces": []})
    phantom: Dict[str, Any] = field(default_factory=lambda: {"pieces": []})
    bounds: Optional[Dict[str, float]] = None
    method: str = "nonlinear"
    one_sided: str = "both"
    dictionary: Dict[str, Any] = field(default_factory=lambda: {"type": "halfspace_caps",
                                                                "n_dirs": 8, "n_offsets": 8})
    tolerance: Dict[str, Any] = field(default_factory=lambda: {"relative": 1e-9, "absolute": None,
                                                               "calibrate": False, "safety": 10.0})
    test: Dict[str, Any] = field(default_factory=dict)
    forward: Dict[str, Any] = field(default_factory=lambda: {"mode": 1, "kind": "cos"})
    locpot: Dict[str, Any] = field(default_factory=dict)
    verify: Dict[str, Any] = field(default_factory=dict)
    assumptions: Dict[str, Any] = field(default_factory=lambda: {"collar_depth": 2})
    output_dir: str = "runs/latest"
    seed: int = 0
    jobs: int = 1
    plots: bool = False
    log_level: str = "INFO"
    base_dir: str = "."

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data.pop("base_dir")
        return data


def config_from_dict(data: Mapping[str, Any], base_dir: str = ".") -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"base_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"config: unknown keys {', '.join(unknown)}")
    defaults = RunConfig()
    merged = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        # Sections merge over their defaults so partial configs stay valid.
        merged[key] = {**default, **value} if isinstance(default, dict) and isinstance(value, dict) else value
    return RunConfig(**merged, base_dir=base_dir)


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ValidationError(f"config: config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config: {path} is not valid JSON ({e})")
    if not isinstance(data, dict):
        raise ValidationError("config: top level must be a JSON object")
    return config_from_dict(data, os.path.dirname(os.path.abspath(path)))


def apply_overrides(config: RunConfig, **flags) -> RunConfig:
    """Command-line flags win over the file; ``None`` means not given."""
    for key, value in flags.items():
        if value is None:
            continue
        if key == "tol":
            config.tolerance = {**config.tolerance, "absolute": float(value)}
        elif hasattr(config, key):
            setattr(config, key, value)
        else:
            raise ValidationError(f"config: unknown override {key!r}")
    return config


def apply_environment(config: RunConfig) -> RunConfig:
    # EITMONO_JOBS caps the worker pool, clamped to a sane range
    raw = os.environ.get("EITMONO_JOBS")
    if raw is not None:
        try:
            jobs = int(raw)
        except ValueError:
            logger.warning("Ignoring EITMONO_JOBS=%r (not an integer)", raw)
            jobs = config.jobs
        config.jobs = max(1, min(jobs, MAX_JOBS))

    level = os.environ.get("EITMONO_LOG_LEVEL")
    if level is not None:
        if level.upper() in LOG_LEVELS:
            config.log_level = level.upper()
        else:
            logger.warning("Ignoring EITMONO_LOG_LEVEL=%r", level)
    return config


# --- value parsing ----------------------------------------------------------

def parse_matrix(raw) -> np.ndarray:
    """2x2 complex value from a scalar, a ``[re, im]`` scalar, 8 reals or ``{"re": .., "im": ..}``."""
    if isinstance(raw, (int, float)):
        return float(raw) * np.eye(2, dtype=complex)
    if isinstance(raw, Mapping):
        re = np.asarray(raw.get("re", np.zeros((2, 2))), dtype=float)
        im = np.asarray(raw.get("im", np.zeros((2, 2))), dtype=float)
        if re.shape != (2, 2) or im.shape != (2, 2):
            raise ValidationError("config: matrix 're'/'im' parts must be 2x2")
        return re + 1j * im
    try:
        values = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"config: cannot read a 2x2 coefficient value from {raw!r}")
    if values.shape == (2,):
        return complex(values[0], values[1]) * np.eye(2, dtype=complex)
    if values.shape == (8,):
        return matrix_from_reals(values)
    if values.shape == (2, 2):
        return values.astype(complex)
    raise ValidationError(f"config: cannot read a 2x2 coefficient value from {raw!r}")


def _mask_specs(node) -> List[Mapping[str, Any]]:
    """Every mask spec nested anywhere under a config section."""
    found = []
    if isinstance(node, Mapping):
        if node.get("type") == "csv":
            found.append(node)
        for value in node.values():
            found.extend(_mask_specs(value))
    elif isinstance(node, list):
        for value in node:
            found.extend(_mask_specs(value))
    return found


def _check_sections(config: RunConfig) -> None:
    """Required keys and container types, so later lookups cannot fail on a missing entry."""
    for name in ("mesh", "background", "phantom", "dictionary", "tolerance", "test", "forward",
                 "locpot", "verify", "assumptions"):
        if not isinstance(getattr(config, name), Mapping):
            raise ValidationError(f"config: {name} must be a JSON object")
    for name in ("background", "phantom"):
        pieces = getattr(config, name).get("pieces", [])
        if not isinstance(pieces, list):
            raise ValidationError(f"config: {name}.pieces must be a list")
        for i, piece in enumerate(pieces):
            if not isinstance(piece, Mapping) or "region" not in piece or "value" not in piece:
                raise ValidationError(f"config: {name}.pieces[{i}] needs 'region' and 'value'")
            if not isinstance(piece["region"], Mapping):
                raise ValidationError(f"config: {name}.pieces[{i}].region must be a JSON object")
    if config.bounds is not None:
        if not isinstance(config.bounds, Mapping):
            raise ValidationError("config: bounds must be a JSON object")
        missing = [k for k in ("alpha", "beta") if k not in config.bounds]
        if missing:
            raise ValidationError(f"config: bounds is missing {', '.join(missing)}")
    if config.dictionary.get("type") == "user_masks" and not isinstance(config.dictionary.get("masks"), list):
        raise ValidationError("config: dictionary.masks must be a list of regions")


def _all_values(section: Mapping[str, Any]) -> List[np.ndarray]:
    values = [parse_matrix(section.get("value", 1.0))] if "value" in section else []
    values += [parse_matrix(p["value"]) for p in section.get("pieces", [])]
    return values


def validate_config(config: RunConfig) -> None:
    """Reject a config before any mesh is built or system factorized."""
    _check_sections(config)
    try:
        _check_values(config)
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"config: malformed entry ({e!r})")


def _check_values(config: RunConfig) -> None:
    mesh = config.mesh
    if "path" in mesh:
        if not os.path.exists(os.path.join(config.base_dir, mesh["path"])):
            raise ValidationError(f"config: mesh file not found: {mesh['path']}")
    elif not float(mesh.get("h", 0.0)) > 0.0:
        raise ValidationError("config: mesh.h must be positive")

    if config.method not in METHODS:
        raise ValidationError(f"config: unknown method {config.method!r} (expected one of {', '.join(METHODS)})")
    if config.one_sided not in ONE_SIDED:
        raise ValidationError(f"config: one_sided must be one of {', '.join(ONE_SIDED)}")
    for key in ("relative", "absolute"):
        value = config.tolerance.get(key)
        if value is not None and float(value) < 0.0:
            raise ValidationError(f"config: tolerance.{key} must be non-negative")
    if not float(config.tolerance.get("safety", 10.0)) >= 1.0:
        raise ValidationError("config: tolerance.safety must be at least 1")
    if int(config.jobs) < 1:
        raise ValidationError("config: jobs must be at least 1")
    if config.log_level.upper() not in LOG_LEVELS:
        raise ValidationError(f"config: log_level must be one of {', '.join(LOG_LEVELS)}")
    if "reg" in config.locpot and not float(config.locpot["reg"]) > 0.0:
        raise ValidationError("config: locpot.reg must be positive")
    if not float(config.locpot.get("mesh_power", 0.0)) >= 0.0:
        raise ValidationError("config: locpot.mesh_power must be non-negative")
    if config.locpot.get("ucp_condition", "assumed") not in UCP_CONDITIONS:
        raise ValidationError(f"config: locpot.ucp_condition must be one of {', '.join(UCP_CONDITIONS)}")

    for spec in _mask_specs(config.to_dict()):
        if not os.path.exists(os.path.join(config.base_dir, spec["path"])):
            raise ValidationError(f"config: mask file not found: {spec['path']}")

    background = _all_values(config.background)
    for value in background + _all_values(config.phantom):
        # Values are checked again per element after the mesh exists.
        if np.linalg.eigvalsh((value + value.conj().T) / 2.0).min() <= 0.0:
            raise ValidationError("config: coefficient value is not admissible (A^R must be positive definite)")
    if config.method in ("corollary", "extreme"):
        skew = max(float(np.abs(v - v.conj().T).max()) / 2.0 for v in background)
        if skew > 0.0:
            raise ValidationError(
                f"config: the {config.method} method requires a self-adjoint background "
                f"(A0^I = 0), but ‖A0^I‖ = {skew:.3e}")
    if config.bounds is not None:
        CoefficientBounds(float(config.bounds["alpha"]), float(config.bounds["beta"]),
                          float(config.bounds.get("eta", 0.0)))


# --- builders ---------------------------------------------------------------

def build_run_mesh(config: RunConfig) -> Mesh:
    spec = config.mesh
    if "path" in spec:
        return load_mesh(os.path.join(config.base_dir, spec["path"]))
    return build_mesh(spec, float(spec["h"]))


def build_gamma(config: RunConfig, mesh: Mesh) -> GammaSpec:
    return select_gamma(mesh, config.gamma)


def resolve_mask(config: RunConfig, mesh: Mesh, spec: Optional[Mapping[str, Any]]) -> RegionMask:
    if spec is None:
        return RegionMask.empty(mesh.n_triangles)
    try:
        return mask_from_spec(mesh, spec, config.base_dir)
    except (KeyError, TypeError) as e:
        raise ValidationError(f"config: malformed region {spec!r} (missing or bad entry {e})")


def build_field(config: RunConfig, mesh: Mesh, section: Mapping[str, Any],
                base: Optional[MatrixField] = None) -> MatrixField:
    """A constant ``value`` (or ``base``) overwritten piece by piece."""
    if base is None:
        base = MatrixField.constant(mesh.n_triangles, parse_matrix(section.get("value", 1.0)))
    values = np.array(base.values)
    for piece in section.get("pieces", []):
        values[resolve_mask(config, mesh, piece["region"]).element_flags] = parse_matrix(piece["value"])
    return MatrixField(values)


def build_phantom_spec(config: RunConfig, mesh: Mesh) -> PhantomSpec:
    A0 = build_field(config, mesh, config.background)
    pieces = [InclusionPiece(resolve_mask(config, mesh, p["region"]), parse_matrix(p["value"]))
              for p in config.phantom.get("pieces", [])]
    return PhantomSpec(A0, pieces, config.phantom.get("tau_plus"), config.phantom.get("tau_minus"))


def build_bounds(config: RunConfig, *fields: MatrixField) -> CoefficientBounds:
    if config.bounds is not None:
        b = config.bounds
        return CoefficientBounds(float(b["alpha"]), float(b["beta"]), float(b.get("eta", 0.0)))
    return joint_bounds(*fields)
