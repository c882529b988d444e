"""Joint observations that drive a fit.

Holds per-joint 3D targets (meters), 2D keypoints (pixels), visibility
masks, and optional direct parameter targets. Pixel convention: origin at
the top-left image corner, +x right, +y down.

Invisible rows are allowed to hold anything (NaN included); only visible
entries are validated and used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Observations:
    """Targets for one fitting problem over K joints.

    Args:
        joints3d: (K,3) target joint positions, meters; None if unused.
        vis3d: (K,) bool mask of usable 3D rows.
        joints2d: (K,2) keypoint pixels; None if unused.
        vis2d: (K,) bool mask of usable 2D rows.
        param_targets: optional (pose, shape) arrays for direct parameter
            supervision.
    """

    joints3d: np.ndarray | None = None
    vis3d: np.ndarray | None = None
    joints2d: np.ndarray | None = None
    vis2d: np.ndarray | None = None
    param_targets: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.joints3d is None and self.joints2d is None:
            raise ValueError("observations need joints3d or joints2d")
        k = self.joint_count
        if self.joints3d is None:
            self.joints3d = np.full((k, 3), np.nan)
        self.joints3d = np.asarray(self.joints3d, dtype=np.float64).reshape(k, 3)
        if self.joints2d is None:
            self.joints2d = np.full((k, 2), np.nan)
        self.joints2d = np.asarray(self.joints2d, dtype=np.float64).reshape(k, 2)
        if self.vis3d is None:
            self.vis3d = np.zeros(k, dtype=bool)
        self.vis3d = np.asarray(self.vis3d, dtype=bool).reshape(k)
        if self.vis2d is None:
            self.vis2d = np.zeros(k, dtype=bool)
        self.vis2d = np.asarray(self.vis2d, dtype=bool).reshape(k)
        if self.param_targets is not None:
            p, s = self.param_targets
            self.param_targets = (
                np.asarray(p, dtype=np.float64).reshape(-1),
                np.asarray(s, dtype=np.float64).reshape(-1),
            )
        self.validate()

    @property
    def joint_count(self) -> int:
        src = self.joints3d if self.joints3d is not None else self.joints2d
        return np.asarray(src).reshape(-1, np.asarray(src).shape[-1]).shape[0]

    def validate(self, joint_count: int | None = None) -> None:
        k = self.joint_count
        if joint_count is not None and k != joint_count:
            raise ValueError(f"observations cover {k} joints, model has {joint_count}")
        if not (self.vis3d.any() or self.vis2d.any()):
            raise ValueError("at least one joint must be visible")
        if self.vis3d.any() and not np.all(np.isfinite(self.joints3d[self.vis3d])):
            raise ValueError("visible joints3d entries must be finite")
        if self.vis2d.any() and not np.all(np.isfinite(self.joints2d[self.vis2d])):
            raise ValueError("visible joints2d entries must be finite")
        if self.param_targets is not None:
            p, s = self.param_targets
            if p.size != 3 * k:
                raise ValueError(f"pose target must have {3 * k} entries")
            if not (np.all(np.isfinite(p)) and np.all(np.isfinite(s))):
                raise ValueError("param_targets must be finite")

    def copy(self) -> "Observations":
        return Observations(
            joints3d=self.joints3d.copy(),
            vis3d=self.vis3d.copy(),
            joints2d=self.joints2d.copy(),
            vis2d=self.vis2d.copy(),
            param_targets=None
            if self.param_targets is None
            else (self.param_targets[0].copy(), self.param_targets[1].copy()),
        )
