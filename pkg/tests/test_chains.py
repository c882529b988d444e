import numpy as np
import pytest

from chainfit.chains import (
    CHILD_CHAIN_ORDER,
    ChainId,
    UnsupportedSkeletonError,
    default_chain_set,
)
from chainfit.kinematics import KinematicTree, standard_tree


@pytest.fixture(scope="module")
def chains():
    return default_chain_set(standard_tree())


class TestStructure:
    def test_root_first_then_child_order(self, chains):
        assert chains.root.chain_id == ChainId.ROOT
        assert tuple(c.chain_id for c in chains.children) == CHILD_CHAIN_ORDER

    def test_joints_partition_skeleton(self, chains):
        seen = []
        for c in chains.chains:
            seen.extend(c.joints)
        assert sorted(seen) == list(range(24))

    def test_chains_are_parent_linked_paths(self, chains):
        tree = standard_tree()
        for c in chains.chains:
            for a, b in zip(c.joints, c.joints[1:]):
                assert tree.parent[b] == a, f"{c.chain_id}: {b} not child of {a}"

    def test_end_effector_is_tip(self, chains):
        for c in chains.chains:
            assert c.end_effector == c.joints[-1]

    def test_child_chains_attach_to_root_chain(self, chains):
        tree = standard_tree()
        root_joints = set(chains.root.joints)
        for c in chains.children:
            assert tree.parent[c.joints[0]] in root_joints

    def test_influence_is_joints_plus_strict_descendants(self, chains):
        tree = standard_tree()
        for c in chains.chains:
            want = set(c.joints)
            for j in c.joints:
                want |= set(tree.descendants(j))
            assert c.influence == tuple(sorted(want))

    def test_root_influences_everything(self, chains):
        assert chains.root.influence == tuple(range(24))

    def test_limb_influence_is_own_joints(self, chains):
        for cid in (ChainId.LEFT_ARM, ChainId.RIGHT_ARM, ChainId.LEFT_LEG,
                    ChainId.RIGHT_LEG, ChainId.HEAD):
            c = chains.by_id(cid)
            assert c.influence == tuple(sorted(c.joints))


class TestPoseSlicing:
    def test_slice_scatter_round_trip(self, chains, rng):
        pose = rng.normal(0, 1, 72)
        for c in chains.chains:
            vals = c.slice_pose(pose)
            assert vals.shape == (c.pose_dim,)
            back = c.scatter_pose(pose, vals)
            np.testing.assert_array_equal(back, pose)

    def test_scatter_only_touches_chain_blocks(self, chains, rng):
        pose = rng.normal(0, 1, 72)
        c = chains.by_id(ChainId.LEFT_ARM)
        new = c.scatter_pose(pose, np.zeros(c.pose_dim))
        touched = {i for i in range(72) if new[i] != pose[i]}
        allowed = {3 * j + k for j in c.joints for k in range(3)}
        assert touched <= allowed
        for j in c.joints:
            np.testing.assert_array_equal(new[3 * j : 3 * j + 3], 0.0)

    def test_scatter_size_mismatch_rejected(self, chains, rng):
        with pytest.raises(ValueError):
            chains.root.scatter_pose(rng.normal(0, 1, 72), np.zeros(5))


class TestUnsupportedSkeleton:
    def test_wrong_joint_count_rejected(self):
        tree = KinematicTree(
            parent=(-1, 0, 1),
            names=("a", "b", "c"),
            rest_joints=np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]),
        )
        with pytest.raises(UnsupportedSkeletonError):
            default_chain_set(tree)
