"""Decomposition of the 24-joint skeleton into six kinematic chains.

The solver updates one chain at a time: a torso chain rooted at the
pelvis, then head, arms, and legs hanging off it. Each chain lists its
joints in root-to-tip order and names one end-effector. A chain's
influence set (its joints plus every strict descendant) is the set of
joints whose positions its pose blocks can move.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kinematics import KinematicTree, PARENTS


class UnsupportedSkeletonError(ValueError):
    """Tree topology does not match the standard 24-joint skeleton."""


class ChainId(str, Enum):
    ROOT = "root"
    HEAD = "head"
    LEFT_ARM = "left_arm"
    RIGHT_ARM = "right_arm"
    LEFT_LEG = "left_leg"
    RIGHT_LEG = "right_leg"


# Root-to-tip joint index lists for the standard skeleton.
_CHAIN_JOINTS = {
    ChainId.ROOT: (0, 3, 6, 9),
    ChainId.HEAD: (12, 15),
    ChainId.LEFT_ARM: (13, 16, 18, 20, 22),
    ChainId.RIGHT_ARM: (14, 17, 19, 21, 23),
    ChainId.LEFT_LEG: (1, 4, 7, 10),
    ChainId.RIGHT_LEG: (2, 5, 8, 11),
}

# Child chains attach below the torso; solve order follows this listing.
CHILD_CHAIN_ORDER = (
    ChainId.HEAD,
    ChainId.LEFT_ARM,
    ChainId.RIGHT_ARM,
    ChainId.LEFT_LEG,
    ChainId.RIGHT_LEG,
)


@dataclass(frozen=True)
class Chain:
    """One kinematic chain: ordered joints, end-effector, influence set.

    joints are in root-to-tip order; end_effector is the last of them.
    influence is the sorted tuple of joints whose positions depend on this
    chain's pose blocks (the chain itself plus all strict descendants).
    """

    chain_id: ChainId
    joints: tuple[int, ...]
    end_effector: int
    influence: tuple[int, ...]

    @property
    def pose_dim(self) -> int:
        return 3 * len(self.joints)

    def slice_pose(self, pose: np.ndarray) -> np.ndarray:
        """Extract this chain's axis-angle blocks as a flat (3L,) vector."""
        pose = np.asarray(pose, dtype=np.float64).reshape(-1)
        out = np.empty(self.pose_dim)
        for k, j in enumerate(self.joints):
            out[3 * k : 3 * k + 3] = pose[3 * j : 3 * j + 3]
        return out

    def scatter_pose(self, pose: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Return a copy of pose with this chain's blocks replaced."""
        pose = np.asarray(pose, dtype=np.float64).reshape(-1).copy()
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != self.pose_dim:
            raise ValueError(f"expected {self.pose_dim} values, got {values.size}")
        for k, j in enumerate(self.joints):
            pose[3 * j : 3 * j + 3] = values[3 * k : 3 * k + 3]
        return pose

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id.value,
            "joints": list(self.joints),
            "end_effector": self.end_effector,
        }


@dataclass(frozen=True)
class ChainSet:
    """All six chains plus lookup helpers."""

    chains: tuple[Chain, ...]

    @property
    def root(self) -> Chain:
        return self.chains[0]

    @property
    def children(self) -> tuple[Chain, ...]:
        return self.chains[1:]

    def by_id(self, chain_id: ChainId) -> Chain:
        for c in self.chains:
            if c.chain_id == chain_id:
                return c
        raise KeyError(chain_id)

    def to_dict(self) -> dict:
        return {"chains": [c.to_dict() for c in self.chains]}


def _build_chain(tree: KinematicTree, cid: ChainId) -> Chain:
    joints = _CHAIN_JOINTS[cid]
    influence = set(joints)
    for j in joints:
        influence |= tree.descendant_sets[j]
    return Chain(
        chain_id=cid,
        joints=joints,
        end_effector=joints[-1],
        influence=tuple(sorted(influence)),
    )


def default_chain_set(tree: KinematicTree) -> ChainSet:
    """Six-chain decomposition of the standard skeleton.

    The chain tables are tied to the standard topology, so any other
    parent array is rejected rather than silently mis-grouped.
    """
    if tuple(tree.parent) != PARENTS:
        raise UnsupportedSkeletonError(
            "chain decomposition requires the standard 24-joint skeleton topology"
        )
    chains = [_build_chain(tree, ChainId.ROOT)]
    chains.extend(_build_chain(tree, cid) for cid in CHILD_CHAIN_ORDER)
    return ChainSet(chains=tuple(chains))
