"""Axis-angle rotations, forward kinematics, and analytic position Jacobians.

The skeleton is a rooted tree of ball joints. Every joint carries a 3-vector
axis-angle rotation relative to its parent; the root block doubles as the
global orientation. Joint positions in model units (meters) follow from
composing the per-joint rotations down the tree, and the Jacobian of any
joint position with respect to any pose component is available in closed
form, which is what the chain solver consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle (radians) the Rodrigues map and its derivative
# switch to their series limits to avoid 0/0 at the identity.
SMALL_ANGLE = 1e-8

# Standard 24-joint body skeleton: names, parent table (root sentinel -1).
JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
)

PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

NUM_BODY_JOINTS = 24
POSE_DIM = 3 * NUM_BODY_JOINTS


def default_rest_joints() -> np.ndarray:
    """Rest positions (meters) of the standard skeleton, y-up, T-pose.

    The spine carries slight forward/backward offsets so no long run of
    joints is exactly collinear.
    """
    return np.array(
        [
            [0.000, 0.950, 0.000],   # pelvis
            [0.090, 0.910, 0.010],   # left_hip
            [-0.090, 0.910, 0.010],  # right_hip
            [0.000, 1.050, 0.010],   # spine1
            [0.100, 0.500, 0.012],   # left_knee
            [-0.100, 0.500, 0.012],  # right_knee
            [0.000, 1.170, 0.020],   # spine2
            [0.110, 0.090, 0.000],   # left_ankle
            [-0.110, 0.090, 0.000],  # right_ankle
            [0.000, 1.280, 0.012],   # spine3
            [0.120, 0.020, 0.120],   # left_foot
            [-0.120, 0.020, 0.120],  # right_foot
            [0.000, 1.450, 0.000],   # neck
            [0.060, 1.400, 0.005],   # left_collar
            [-0.060, 1.400, 0.005],  # right_collar
            [0.000, 1.600, 0.020],   # head
            [0.180, 1.420, -0.010],  # left_shoulder
            [-0.180, 1.420, -0.010], # right_shoulder
            [0.450, 1.410, -0.020],  # left_elbow
            [-0.450, 1.410, -0.020], # right_elbow
            [0.700, 1.400, -0.020],  # left_wrist
            [-0.700, 1.400, -0.020], # right_wrist
            [0.780, 1.390, -0.020],  # left_hand
            [-0.780, 1.390, -0.020], # right_hand
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class KinematicTree:
    """Rooted joint tree: parent indices in topological order, joint names,
    and rest positions (meters). parent[0] == -1 identifies the single root.
    """

    parent: tuple[int, ...]
    names: tuple[str, ...]
    rest_joints: np.ndarray

    # Derived adjacency, filled in __post_init__.
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    descendant_sets: tuple[frozenset[int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        k = len(self.parent)
        if len(self.names) != k or self.rest_joints.shape != (k, 3):
            raise ValueError("parent/names/rest_joints size mismatch")
        if self.parent[0] != -1 or any(self.parent[i] == -1 for i in range(1, k)):
            raise ValueError("exactly one root (index 0) required")
        if any(not (0 <= self.parent[i] < i) for i in range(1, k)):
            raise ValueError("parent[i] must precede i (topological order)")
        if len(set(self.names)) != k:
            raise ValueError("joint names must be unique")
        if not np.all(np.isfinite(self.rest_joints)):
            raise ValueError("rest_joints must be finite")
        kids: list[list[int]] = [[] for _ in range(k)]
        for i in range(1, k):
            kids[self.parent[i]].append(i)
        object.__setattr__(self, "children", tuple(tuple(c) for c in kids))
        desc: list[set[int]] = [set() for _ in range(k)]
        for i in range(k - 1, 0, -1):
            desc[self.parent[i]].add(i)
            desc[self.parent[i]].update(desc[i])
        object.__setattr__(self, "descendant_sets", tuple(frozenset(s) for s in desc))

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    @property
    def pose_dim(self) -> int:
        return 3 * len(self.parent)

    def ancestors(self, joint: int) -> list[int]:
        """Strict ancestors of `joint`, root last."""
        out = []
        j = self.parent[joint]
        while j != -1:
            out.append(j)
            j = self.parent[j]
        out.reverse()
        return out

    def descendants(self, joint: int) -> list[int]:
        """Strict descendants of `joint` in topological order."""
        return sorted(self.descendant_sets[joint])


def standard_tree(rest_joints: np.ndarray | None = None) -> KinematicTree:
    """The 24-joint body skeleton, with default or supplied rest positions."""
    rest = default_rest_joints() if rest_joints is None else np.asarray(rest_joints, dtype=np.float64)
    return KinematicTree(parent=PARENTS, names=JOINT_NAMES, rest_joints=rest)


@dataclass
class JointTransforms:
    """Global (model-frame) transform of every joint for one pose.

    global_rotations: (K,3,3) orthonormal, det +1.
    global_translations: (K,3) meters; equals posed_joints.
    """

    global_rotations: np.ndarray
    global_translations: np.ndarray

    @property
    def posed_joints(self) -> np.ndarray:
        return self.global_translations


def rodrigues(aa: np.ndarray) -> np.ndarray:
    """Rotation matrix of an axis-angle 3-vector via the exponential map.

    Uses the 2nd-order series below SMALL_ANGLE so the map is continuous
    (and exactly the identity) at v = 0.
    """
    v = np.asarray(aa, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError("axis-angle components must be finite")
    theta = float(np.linalg.norm(v))
    K = _skew(v)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rodrigues_all(aa_blocks: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues over (K,3) axis-angle blocks -> (K,3,3)."""
    v = np.asarray(aa_blocks, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("axis-angle components must be finite")
    k = v.shape[0]
    theta = np.linalg.norm(v, axis=1)
    K = np.zeros((k, 3, 3))
    K[:, 0, 1] = -v[:, 2]
    K[:, 0, 2] = v[:, 1]
    K[:, 1, 0] = v[:, 2]
    K[:, 1, 2] = -v[:, 0]
    K[:, 2, 0] = -v[:, 1]
    K[:, 2, 1] = v[:, 0]
    KK = K @ K
    small = theta < SMALL_ANGLE
    ts = np.where(small, 1.0, theta)  # avoid 0/0; overwritten below for small
    a = np.sin(ts) / ts
    b = (1.0 - np.cos(ts)) / (ts * ts)
    a[small] = 1.0
    b[small] = 0.5
    return np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * KK


def rotation_jacobian(aa: np.ndarray) -> np.ndarray:
    """Partial derivatives of the Rodrigues matrix: (3,3,3) where [c] is
    dR/dv_c. Exact compact formula away from the identity; [e_c]_x limit
    below SMALL_ANGLE.
    """
    v = np.asarray(aa, dtype=np.float64).reshape(3)
    theta2 = float(v @ v)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.stack([_skew(_EYE3[c]) for c in range(3)])
    R = rodrigues(v)
    ImR = np.eye(3) - R
    out = np.empty((3, 3, 3))
    Kv = _skew(v)
    for c in range(3):
        w = v[c] * Kv + _skew(np.cross(v, ImR[:, c]))
        out[c] = (w / theta2) @ R
    return out


def mat_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Axis-angle (angle in [0, pi]) of a rotation matrix, via the
    quaternion intermediate for stability near 0 and pi.
    """
    R = np.asarray(R, dtype=np.float64)
    q = _mat_to_quat(R)
    if q[0] < 0.0:
        q = -q
    w = min(q[0], 1.0)
    s = float(np.linalg.norm(q[1:]))
    if s < SMALL_ANGLE:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, w)
    return (angle / s) * q[1:]


def canonicalize(aa: np.ndarray) -> np.ndarray:
    """Equivalent axis-angle with norm <= pi.

    Angle is reduced modulo 2*pi into (-pi, pi]; the axis direction flips
    with the sign of the reduced angle.
    """
    v = np.asarray(aa, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError("axis-angle components must be finite")
    theta = float(np.linalg.norm(v))
    if theta <= np.pi:
        return v.copy()
    reduced = np.fmod(theta, 2.0 * np.pi)
    if reduced > np.pi:
        reduced -= 2.0 * np.pi
    return v * (reduced / theta)


def forward_kinematics(
    tree: KinematicTree, pose: np.ndarray, rest_joints: np.ndarray | None = None
) -> JointTransforms:
    """Compose per-joint rotations over the tree.

    The root transform is (rodrigues(block 0), rest_joints[0]); each child
    transform is its parent's global transform composed with the child's
    local rotation about the child's rest offset. There is no translation
    parameter: root position is pinned to its rest position.
    """
    rest = tree.rest_joints if rest_joints is None else np.asarray(rest_joints, dtype=np.float64)
    k = tree.joint_count
    theta = np.asarray(pose, dtype=np.float64).reshape(-1)
    if theta.size != 3 * k:
        raise ValueError(f"pose has {theta.size} components, tree needs {3 * k}")
    if rest.shape != (k, 3):
        raise ValueError("rest_joints inconsistent with tree")
    local = rodrigues_all(theta.reshape(k, 3))
    rot = np.empty((k, 3, 3))
    trans = np.empty((k, 3))
    rot[0] = local[0]
    trans[0] = rest[0]
    for i in range(1, k):
        p = tree.parent[i]
        rot[i] = rot[p] @ local[i]
        trans[i] = rot[p] @ (rest[i] - rest[p]) + trans[p]
    return JointTransforms(global_rotations=rot, global_translations=trans)


def joint_jacobian(
    tree: KinematicTree,
    pose: np.ndarray,
    rest_joints: np.ndarray | None = None,
    target_joints: list[int] | None = None,
) -> np.ndarray:
    """Analytic Jacobian of posed joint positions w.r.t. all pose components.

    Returns (3*len(targets), 3*K). Row block t, column block j holds
    d posed(t) / d v_j; it is zero unless j is a strict ancestor of t,
    since a joint's position depends only on rotations above it.
    """
    k = tree.joint_count
    targets = list(range(k)) if target_joints is None else list(target_joints)
    if any(not (0 <= t < k) for t in targets):
        raise ValueError("target joint index out of range")
    theta = np.asarray(pose, dtype=np.float64).reshape(k, 3)
    tf = forward_kinematics(tree, theta, rest_joints)
    J = np.zeros((3 * len(targets), 3 * k))
    dR = {j: rotation_jacobian(theta[j]) for j in range(k)}
    anc = {t: set(tree.ancestors(t)) for t in targets}
    for row, t in enumerate(targets):
        pt = tf.global_translations[t]
        for j in anc[t]:
            # d posed(t)/d v_j = R_gp(j) dR_j z with z the position of t in
            # j's local frame; z does not depend on v_j.
            p = tree.parent[j]
            Rgp = tf.global_rotations[p] if p != -1 else np.eye(3)
            z = tf.global_rotations[j].T @ (pt - tf.global_translations[j])
            for c in range(3):
                J[3 * row : 3 * row + 3, 3 * j + c] = Rgp @ (dR[j][c] @ z)
    return J


def jacobian_columns_for_joint(
    tree: KinematicTree,
    tf: JointTransforms,
    pose_block: np.ndarray,
    joint: int,
    targets: list[int],
) -> np.ndarray:
    """Jacobian restricted to one joint's 3 pose components: (3*T, 3).

    `tf` must be the forward kinematics of the pose that `pose_block`
    (= that joint's axis-angle) belongs to. Rows for targets that are not
    strict descendants of `joint` are zero.
    """
    dR = rotation_jacobian(pose_block)
    p = tree.parent[joint]
    Rgp = tf.global_rotations[p] if p != -1 else _EYE3
    Rj = tf.global_rotations[joint]
    tj = tf.global_translations[joint]
    desc = tree.descendant_sets[joint]
    J = np.zeros((3 * len(targets), 3))
    base = np.stack([Rgp @ dR[c] for c in range(3)])  # (3,3,3)
    for row, t in enumerate(targets):
        if t not in desc:
            continue
        z = Rj.T @ (tf.global_translations[t] - tj)
        J[3 * row : 3 * row + 3, :] = (base @ z).T
    return J


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _mat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) of a rotation matrix (Shepperd's method)."""
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(R)))
    if i == 0:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 1:
        s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return np.array(q)


_EYE3 = np.eye(3)
