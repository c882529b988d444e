"""Weak perspective camera: uniform scale plus 2D principal offset.

Projection drops the depth coordinate and maps x = s * (X_x, X_y) + rho.
Fitting the camera to matched 3D/2D points is a linear least squares
problem with a closed-form solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_SCALE = 1e-6


class DegenerateConfigurationError(ValueError):
    """Too few or coincident correspondences to determine the camera."""


@dataclass(frozen=True)
class WeakPerspectiveCamera:
    """scale in pixels per meter, offset (rho) in pixels."""

    scale: float
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64).reshape(2))
        if not np.isfinite(self.scale) or self.scale < MIN_SCALE:
            raise ValueError(f"camera scale must be >= {MIN_SCALE}")

    def to_dict(self) -> dict:
        return {"scale": float(self.scale), "offset": [float(v) for v in self.offset]}

    @staticmethod
    def from_dict(d: dict) -> "WeakPerspectiveCamera":
        return WeakPerspectiveCamera(scale=float(d["scale"]), offset=np.asarray(d["offset"], float))


def project(camera: WeakPerspectiveCamera, points3d: np.ndarray) -> np.ndarray:
    """Project (N,3) points to (N,2) pixels."""
    pts = np.asanyarray(points3d, dtype=np.float64)
    return camera.scale * pts[..., :2] + camera.offset


def estimate_camera(
    points3d: np.ndarray,
    points2d: np.ndarray,
    visibility: np.ndarray | None = None,
) -> WeakPerspectiveCamera:
    """Least-squares scale and offset from matched 3D/2D points.

    Centering both point sets decouples the two unknowns: the scale is the
    ratio of the centered 2D cloud onto the centered projected 3D cloud,
    and the offset is whatever aligns the means afterwards.

    Args:
        points3d: (N,3) model-space points.
        points2d: (N,2) observed pixels.
        visibility: optional (N,) mask; only visible rows are used.

    Raises:
        DegenerateConfigurationError: fewer than two visible points, or all
            visible projections coincide (scale undetermined).
    """
    p3 = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    p2 = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    if p3.shape[0] != p2.shape[0]:
        raise ValueError("points3d and points2d must pair up")
    if visibility is not None:
        mask = np.asarray(visibility, dtype=bool).reshape(-1)
        p3, p2 = p3[mask], p2[mask]
    if p3.shape[0] < 2:
        raise DegenerateConfigurationError("camera fit needs at least 2 visible points")
    xy = p3[:, :2]
    xy_c = xy - xy.mean(axis=0)
    uv_c = p2 - p2.mean(axis=0)
    denom = float((xy_c * xy_c).sum())
    if denom < 1e-18:
        raise DegenerateConfigurationError("visible projections coincide; scale undetermined")
    s = float((uv_c * xy_c).sum()) / denom
    s = max(s, MIN_SCALE)
    rho = p2.mean(axis=0) - s * xy.mean(axis=0)
    return WeakPerspectiveCamera(scale=s, offset=rho)
