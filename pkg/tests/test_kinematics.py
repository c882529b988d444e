import numpy as np
import pytest

from chainfit.kinematics import (
    KinematicTree,
    canonicalize,
    default_rest_joints,
    forward_kinematics,
    joint_jacobian,
    jacobian_columns_for_joint,
    mat_to_axis_angle,
    rodrigues,
    rodrigues_all,
    rotation_jacobian,
    standard_tree,
)


def quat_rotation(aa):
    """Rotation matrix via the unit-quaternion formula (independent of the
    Rodrigues expansion used by the implementation)."""
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa)
    if angle < 1e-300:
        return np.eye(3)
    w = np.cos(angle / 2.0)
    x, y, z = np.sin(angle / 2.0) * (aa / angle)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def homogeneous_fk(tree, pose, rest):
    """FK oracle via explicit 4x4 transforms composed root-to-joint."""
    def trans(v):
        T = np.eye(4)
        T[:3, 3] = v
        return T

    def rot(aa):
        T = np.eye(4)
        T[:3, :3] = quat_rotation(aa)
        return T

    pose = np.asarray(pose).reshape(-1, 3)
    k = tree.joint_count
    T = [None] * k
    T[0] = trans(rest[0]) @ rot(pose[0])
    for i in range(1, k):
        p = tree.parent[i]
        T[i] = T[p] @ trans(rest[i] - rest[p]) @ rot(pose[i])
    joints = np.array([Ti[:3, 3] for Ti in T])
    rots = np.array([Ti[:3, :3] for Ti in T])
    return rots, joints


class TestRodrigues:
    def test_matches_quaternion_oracle(self, rng):
        for _ in range(200):
            aa = rng.normal(0, 1.5, 3)
            np.testing.assert_allclose(rodrigues(aa), quat_rotation(aa), atol=1e-12)

    def test_zero_angle_identity(self):
        np.testing.assert_array_equal(rodrigues(np.zeros(3)), np.eye(3))

    def test_tiny_angle_stable(self):
        R = rodrigues(np.array([1e-12, 0, 0]))
        assert np.all(np.isfinite(R))
        np.testing.assert_allclose(R, np.eye(3), atol=1e-11)

    def test_orthonormal_det_one(self, rng):
        for _ in range(50):
            R = rodrigues(rng.normal(0, 2, 3))
            np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_rodrigues_all_matches_single(self, rng):
        blocks = rng.normal(0, 1, (24, 3))
        Rs = rodrigues_all(blocks)
        for i in range(24):
            np.testing.assert_allclose(Rs[i], rodrigues(blocks[i]), atol=1e-15)

    def test_mat_round_trip(self, rng):
        for _ in range(50):
            aa = rng.normal(0, 1, 3)
            aa = aa / np.linalg.norm(aa) * rng.uniform(0.1, np.pi - 0.1)
            back = mat_to_axis_angle(rodrigues(aa))
            np.testing.assert_allclose(back, aa, atol=1e-9)

    def test_canonicalize_wraps_angle(self):
        aa = np.array([0.0, 0.0, np.pi + 0.5])
        c = canonicalize(aa)
        assert np.linalg.norm(c) <= np.pi + 1e-12
        np.testing.assert_allclose(rodrigues(c), rodrigues(aa), atol=1e-12)


class TestRotationJacobian:
    def test_matches_finite_differences(self, rng):
        h = 1e-7
        for _ in range(30):
            aa = rng.normal(0, 1.2, 3)
            dR = rotation_jacobian(aa)
            for c in range(3):
                e = np.zeros(3)
                e[c] = h
                fd = (rodrigues(aa + e) - rodrigues(aa - e)) / (2 * h)
                np.testing.assert_allclose(dR[c], fd, atol=1e-6)


class TestKinematicTree:
    def test_standard_tree_shape(self):
        tree = standard_tree()
        assert tree.joint_count == 24
        assert tree.pose_dim == 72
        assert tree.parent[0] == -1
        np.testing.assert_array_equal(tree.rest_joints, default_rest_joints())

    def test_parent_precedes_child(self):
        tree = standard_tree()
        for i in range(1, 24):
            assert 0 <= tree.parent[i] < i

    def test_ancestors_and_descendants(self):
        tree = standard_tree()
        anc = tree.ancestors(20)
        assert 0 not in anc or tree.parent[anc[-1]] == -1 or True
        for j in anc:
            cur = 20
            seen = False
            while cur != -1:
                cur = tree.parent[cur]
                if cur == j:
                    seen = True
                    break
            assert seen, f"{j} not an ancestor of 20"
        assert 20 not in anc
        desc = tree.descendants(9)
        for d in desc:
            cur = d
            while cur != -1 and cur != 9:
                cur = tree.parent[cur]
            assert cur == 9
        assert 9 not in desc

    def test_invalid_parent_rejected(self):
        with pytest.raises(ValueError):
            KinematicTree(
                parent=(-1, 2, 1),
                names=("a", "b", "c"),
                rest_joints=np.zeros((3, 3)),
            )

    def test_two_roots_rejected(self):
        with pytest.raises(ValueError):
            KinematicTree(
                parent=(-1, -1, 1),
                names=("a", "b", "c"),
                rest_joints=np.zeros((3, 3)),
            )


class TestForwardKinematics:
    def test_zero_pose_identity(self):
        tree = standard_tree()
        tf = forward_kinematics(tree, np.zeros(72))
        np.testing.assert_allclose(tf.posed_joints, tree.rest_joints, atol=1e-12)
        for R in tf.global_rotations:
            np.testing.assert_allclose(R, np.eye(3), atol=1e-12)

    def test_matches_homogeneous_oracle(self, rng):
        tree = standard_tree()
        for _ in range(50):
            pose = rng.normal(0, 0.6, 72)
            tf = forward_kinematics(tree, pose)
            rots, joints = homogeneous_fk(tree, pose, tree.rest_joints)
            np.testing.assert_allclose(tf.posed_joints, joints, atol=1e-10)
            np.testing.assert_allclose(tf.global_rotations, rots, atol=1e-10)

    def test_root_position_pinned(self, rng):
        tree = standard_tree()
        pose = rng.normal(0, 1, 72)
        tf = forward_kinematics(tree, pose)
        np.testing.assert_array_equal(tf.posed_joints[0], tree.rest_joints[0])

    def test_bone_lengths_preserved(self, rng):
        tree = standard_tree()
        pose = rng.normal(0, 0.8, 72)
        tf = forward_kinematics(tree, pose)
        for i in range(1, 24):
            p = tree.parent[i]
            rest_len = np.linalg.norm(tree.rest_joints[i] - tree.rest_joints[p])
            posed_len = np.linalg.norm(tf.posed_joints[i] - tf.posed_joints[p])
            assert posed_len == pytest.approx(rest_len, abs=1e-12)

    def test_wrong_pose_size_rejected(self):
        tree = standard_tree()
        with pytest.raises(ValueError):
            forward_kinematics(tree, np.zeros(71))


class TestJointJacobian:
    def test_matches_central_differences(self, rng):
        tree = standard_tree()
        h = 1e-6
        for _ in range(10):
            pose = rng.normal(0, 0.7, 72)
            J = joint_jacobian(tree, pose)
            for col in rng.choice(72, size=12, replace=False):
                e = np.zeros(72)
                e[col] = h
                fp = forward_kinematics(tree, pose + e).posed_joints.ravel()
                fm = forward_kinematics(tree, pose - e).posed_joints.ravel()
                np.testing.assert_allclose(J[:, col], (fp - fm) / (2 * h), atol=1e-6)

    def test_ancestor_sparsity(self, rng):
        tree = standard_tree()
        J = joint_jacobian(tree, rng.normal(0, 0.5, 72))
        for t in range(24):
            anc = set(tree.ancestors(t))
            for j in range(24):
                blk = J[3 * t : 3 * t + 3, 3 * j : 3 * j + 3]
                if j not in anc:
                    assert np.all(blk == 0.0), f"nonzero block for non-ancestor {j} of {t}"

    def test_target_subset_rows(self, rng):
        tree = standard_tree()
        pose = rng.normal(0, 0.5, 72)
        J = joint_jacobian(tree, pose)
        sub = joint_jacobian(tree, pose, target_joints=[7, 21])
        np.testing.assert_array_equal(sub[0:3], J[21:24])
        np.testing.assert_array_equal(sub[3:6], J[63:66])

    def test_single_joint_columns_match(self, rng):
        tree = standard_tree()
        pose = rng.normal(0, 0.5, 72)
        tf = forward_kinematics(tree, pose)
        J = joint_jacobian(tree, pose)
        targets = [18, 20, 22]
        cols = jacobian_columns_for_joint(tree, tf, pose.reshape(24, 3)[16], 16, targets)
        rows = np.concatenate([J[3 * t : 3 * t + 3] for t in targets])
        np.testing.assert_allclose(cols, rows[:, 48:51], atol=1e-12)
