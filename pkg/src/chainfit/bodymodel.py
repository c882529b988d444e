"""Parametric body mesh: shape blendshapes, joint regression, skinning.

A TemplateModel bundles the rest-pose vertices, a 10-coefficient shape
basis, per-vertex skinning weights, and the joint regressor that maps
vertices to the 24 skeleton joints. Posing composes: deform by shape,
regress rest joints, run forward kinematics, then linear blend skinning.

Real registered body meshes are licensed assets, so this module also
provides a procedural synthetic model with the same contracts, plus JSON
model-file I/O and OBJ export.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import jsonpack
from .kinematics import (
    JOINT_NAMES,
    PARENTS,
    JointTransforms,
    KinematicTree,
    default_rest_joints,
    forward_kinematics,
)

NUM_JOINTS = 24
NUM_SHAPE = 10

UNITS_NOTE = "angles: radians; 3D: meters; 2D: pixels"


class ModelFormatError(ValueError):
    """Model file failed to parse or violates a model invariant."""


@dataclass
class TemplateModel:
    """Rest mesh plus the linear machinery that poses it.

    template_vertices: (N,3) meters. shape_basis: (N,3,10) meters per unit
    shape coefficient. skin_weights: (N,24) convex rows. joint_regressor:
    (24,N) convex rows. faces: (F,3) int vertex indices. An optional
    (N,3,207) pose-corrective basis is carried for file compatibility and
    is zero in synthetic models.
    """

    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    template_vertices: np.ndarray
    shape_basis: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    faces: np.ndarray
    pose_corrective_basis: np.ndarray | None = None
    _tree: KinematicTree = field(init=False, repr=False, default=None)

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    def validate(self) -> None:
        n = self.vertex_count
        if self.template_vertices.shape != (n, 3):
            raise ModelFormatError("template_vertices must be (N,3)")
        if self.shape_basis.shape != (n, 3, NUM_SHAPE):
            raise ModelFormatError(f"shape_basis must be (N,3,{NUM_SHAPE})")
        if self.skin_weights.shape != (n, NUM_JOINTS):
            raise ModelFormatError(f"skin_weights must be (N,{NUM_JOINTS})")
        if self.joint_regressor.shape != (NUM_JOINTS, n):
            raise ModelFormatError(f"joint_regressor must be ({NUM_JOINTS},N)")
        if len(self.joint_names) != NUM_JOINTS or len(self.parents) != NUM_JOINTS:
            raise ModelFormatError("joint_names/parents must list 24 joints")
        if np.any(self.skin_weights < -1e-12):
            row = int(np.argwhere(self.skin_weights < -1e-12)[0, 0])
            raise ModelFormatError(f"skin_weights row {row} has a negative entry")
        sums = self.skin_weights.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > 1e-9)[0]
        if bad.size:
            raise ModelFormatError(
                f"skin_weights row {int(bad[0])} sums to {sums[bad[0]]:.6g}, expected 1"
            )
        if np.any(self.joint_regressor < -1e-12):
            row = int(np.argwhere(self.joint_regressor < -1e-12)[0, 0])
            raise ModelFormatError(f"joint_regressor row {row} has a negative entry")
        rsums = self.joint_regressor.sum(axis=1)
        bad = np.nonzero(np.abs(rsums - 1.0) > 1e-9)[0]
        if bad.size:
            raise ModelFormatError(
                f"joint_regressor row {int(bad[0])} sums to {rsums[bad[0]]:.6g}, expected 1"
            )
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ModelFormatError("face indices out of range")
        for arr in (self.template_vertices, self.shape_basis, self.skin_weights, self.joint_regressor):
            if not np.all(np.isfinite(arr)):
                raise ModelFormatError("model arrays must be finite")

    def tree(self, rest_joints: np.ndarray | None = None) -> KinematicTree:
        """Kinematic tree for these joints; rest positions default to the
        joints regressed from the undeformed template."""
        if rest_joints is None:
            if self._tree is None:
                rest = regress_rest_joints(self, self.template_vertices)
                self._tree = KinematicTree(self.parents, self.joint_names, rest)
            return self._tree
        return KinematicTree(self.parents, self.joint_names, np.asarray(rest_joints, float))


@dataclass
class PosedMesh:
    """Vertices (N,3) and the joints (24,3) regressed from them."""

    vertices: np.ndarray
    joints: np.ndarray


def shape_deform(model: TemplateModel, beta: np.ndarray) -> np.ndarray:
    """Template plus the beta-weighted sum of shape basis slices."""
    b = np.asarray(beta, dtype=np.float64).reshape(-1)
    if b.size != NUM_SHAPE:
        raise ValueError(f"beta must have {NUM_SHAPE} coefficients")
    return model.template_vertices + model.shape_basis @ b


def regress_rest_joints(model: TemplateModel, shaped_vertices: np.ndarray) -> np.ndarray:
    return model.joint_regressor @ shaped_vertices


def skin(
    model: TemplateModel, shaped_vertices: np.ndarray, transforms: JointTransforms
) -> PosedMesh:
    """Linear blend skinning of the shaped vertices by the joint transforms.

    The relative transform of joint j maps the rest configuration to the
    posed one: x -> R_j (x - rest_j) + t_j, with rest joints regressed from
    the same shaped vertices the transforms were built on. That consistency
    is checked, since skinning against foreign rest joints is silent
    garbage otherwise.
    """
    rest = regress_rest_joints(model, shaped_vertices)
    _check_transform_consistency(model, rest, transforms)
    R = transforms.global_rotations  # (K,3,3)
    t = transforms.global_translations  # (K,3)
    # posed_v = sum_j w[v,j] * (R_j shaped_v + (t_j - R_j rest_j))
    offset = t - np.einsum("kij,kj->ki", R, rest)
    rotated = np.einsum("kij,nj->nki", R, shaped_vertices)  # (N,K,3)
    posed = np.einsum("nk,nki->ni", model.skin_weights, rotated)
    posed += model.skin_weights @ offset
    return PosedMesh(vertices=posed, joints=model.joint_regressor @ posed)


def mesh_function(model: TemplateModel, pose: np.ndarray, beta: np.ndarray) -> PosedMesh:
    """Full mesh: shape deform -> rest joints -> forward kinematics -> skin."""
    shaped = shape_deform(model, beta)
    rest = regress_rest_joints(model, shaped)
    tf = forward_kinematics(model.tree(rest), pose, rest)
    return skin(model, shaped, tf)


def _check_transform_consistency(
    model: TemplateModel, rest: np.ndarray, tf: JointTransforms, tol: float = 1e-8
) -> None:
    t = tf.global_translations
    R = tf.global_rotations
    if np.abs(t[0] - rest[0]).max() > tol:
        raise ValueError("transforms were not built on the regressed rest joints (root)")
    for i in range(1, NUM_JOINTS):
        p = model.parents[i]
        pred = R[p] @ (rest[i] - rest[p]) + t[p]
        if np.abs(pred - t[i]).max() > tol:
            raise ValueError(
                f"transforms were not built on the regressed rest joints (joint {i})"
            )


# ---------------------------------------------------------------------------
# Synthetic model generation

# Zero-sum anchor-cluster offset patterns per cluster size.
_CLUSTER_OFFSETS = {
    1: np.zeros((1, 3)),
    2: np.array([[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]]) / np.sqrt(3.0),
    3: np.array([[1.0, 0.0, 0.0], [-0.5, np.sqrt(3.0) / 2.0, 0.0], [-0.5, -np.sqrt(3.0) / 2.0, 0.0]]),
    4: np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]) / np.sqrt(3.0),
}

_ANCHOR_SCALE = 0.02  # meters; half-extent of a joint's anchor cluster
_SURFACE_SIGMA = 0.05  # meters; scatter of surface vertices around bones
_WEIGHT_SIGMA = 0.12  # meters; falloff of distance-based skin weights
_SHAPE_SCALE = 0.5  # magnitude of the orthonormal shape basis


def synth_model(seed: int, n_vertices: int = 512) -> TemplateModel:
    """Procedural humanoid-proportioned template, reproducible per seed.

    Each joint gets a small zero-mean anchor cluster of vertices rigidly
    skinned to it, with the joint regressor row uniform over the cluster,
    so regressed joints track the cluster centroids exactly. Remaining
    vertices scatter around the bones with smooth distance-based weights.
    """
    if n_vertices < NUM_JOINTS:
        raise ValueError(f"n_vertices must be >= {NUM_JOINTS}, got {n_vertices}")
    rng = np.random.default_rng(seed)
    joints = default_rest_joints()
    cluster = min(4, n_vertices // NUM_JOINTS)
    offsets = _CLUSTER_OFFSETS[cluster] * _ANCHOR_SCALE
    n_anchor = cluster * NUM_JOINTS
    n_surface = n_vertices - n_anchor

    verts = np.empty((n_vertices, 3))
    weights = np.zeros((n_vertices, NUM_JOINTS))
    regressor = np.zeros((NUM_JOINTS, n_vertices))
    for j in range(NUM_JOINTS):
        lo = j * cluster
        verts[lo : lo + cluster] = joints[j] + offsets
        weights[lo : lo + cluster, j] = 1.0
        regressor[j, lo : lo + cluster] = 1.0 / cluster

    if n_surface:
        bones = [(PARENTS[i], i) for i in range(1, NUM_JOINTS)]
        picks = rng.integers(0, len(bones), size=n_surface)
        ts = rng.uniform(0.0, 1.0, size=n_surface)
        scatter = rng.normal(0.0, _SURFACE_SIGMA, size=(n_surface, 3))
        for i in range(n_surface):
            p, c = bones[picks[i]]
            verts[n_anchor + i] = joints[p] + ts[i] * (joints[c] - joints[p]) + scatter[i]
        d2 = ((verts[n_anchor:, None, :] - joints[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-d2 / (2.0 * _WEIGHT_SIGMA**2))
        weights[n_anchor:] = w / w.sum(axis=1, keepdims=True)

    basis_flat = rng.normal(size=(3 * n_vertices, NUM_SHAPE))
    q, _ = np.linalg.qr(basis_flat)
    shape_basis = (q * _SHAPE_SCALE).reshape(n_vertices, 3, NUM_SHAPE)

    faces = []
    if cluster >= 3:
        tris = [(0, 1, 2)] if cluster == 3 else [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]
        for j in range(NUM_JOINTS):
            lo = j * cluster
            faces.extend((lo + a, lo + b, lo + c) for a, b, c in tris)
    faces_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

    model = TemplateModel(
        joint_names=JOINT_NAMES,
        parents=PARENTS,
        template_vertices=verts,
        shape_basis=shape_basis,
        skin_weights=weights,
        joint_regressor=regressor,
        faces=faces_arr,
    )
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Model file I/O

_ARRAY_FIELDS = ["template_vertices", "shape_basis", "skin_weights", "joint_regressor", "faces"]


def save_model(model: TemplateModel, path) -> None:
    doc = {
        "version": 1,
        "units": UNITS_NOTE,
        "joint_names": list(model.joint_names),
        "parents": list(model.parents),
        "shapes": {},
    }
    arrays = {
        "template_vertices": model.template_vertices,
        "shape_basis": model.shape_basis,
        "skin_weights": model.skin_weights,
        "joint_regressor": model.joint_regressor,
        "faces": model.faces.astype(np.float64),
    }
    if model.pose_corrective_basis is not None:
        arrays["pose_corrective_basis"] = model.pose_corrective_basis
    jsonpack.pack_fields(doc, arrays)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> TemplateModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ModelFormatError(f"{path}: missing or unsupported 'version' (expected 1)")
    for key in ("joint_names", "parents"):
        if key not in doc:
            raise ModelFormatError(f"{path}: missing field '{key}'")
    names = _ARRAY_FIELDS + (
        ["pose_corrective_basis"] if "pose_corrective_basis" in doc else []
    )
    try:
        arrays = jsonpack.unpack_fields(doc, names)
    except jsonpack.ContainerError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    model = TemplateModel(
        joint_names=tuple(doc["joint_names"]),
        parents=tuple(int(p) for p in doc["parents"]),
        template_vertices=arrays["template_vertices"],
        shape_basis=arrays["shape_basis"],
        skin_weights=arrays["skin_weights"],
        joint_regressor=arrays["joint_regressor"],
        faces=arrays["faces"].astype(np.int64),
        pose_corrective_basis=arrays.get("pose_corrective_basis"),
    )
    try:
        model.validate()
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    return model


def save_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """ASCII OBJ: 'v x y z' lines then 1-indexed 'f a b c' lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in np.asarray(faces, dtype=np.int64).reshape(-1, 3):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
