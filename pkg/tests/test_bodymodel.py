import json

import numpy as np
import pytest

from chainfit.bodymodel import (
    NUM_JOINTS,
    NUM_SHAPE,
    ModelFormatError,
    load_model,
    mesh_function,
    regress_rest_joints,
    save_model,
    save_obj,
    shape_deform,
    skin,
    synth_model,
)
from chainfit.kinematics import forward_kinematics


def naive_lbs(model, shaped, tf):
    """Per-vertex, per-joint double loop over the skinning sum."""
    rest = np.zeros((NUM_JOINTS, 3))
    for j in range(NUM_JOINTS):
        for v in range(shaped.shape[0]):
            rest[j] += model.joint_regressor[j, v] * shaped[v]
    out = np.zeros_like(shaped)
    for v in range(shaped.shape[0]):
        for j in range(NUM_JOINTS):
            w = model.skin_weights[v, j]
            if w == 0.0:
                continue
            R = tf.global_rotations[j]
            t = tf.global_translations[j]
            out[v] += w * (R @ (shaped[v] - rest[j]) + t)
    return out


class TestSynthModel:
    def test_deterministic(self):
        a = synth_model(seed=5)
        b = synth_model(seed=5)
        np.testing.assert_array_equal(a.template_vertices, b.template_vertices)
        np.testing.assert_array_equal(a.shape_basis, b.shape_basis)
        np.testing.assert_array_equal(a.skin_weights, b.skin_weights)
        np.testing.assert_array_equal(a.joint_regressor, b.joint_regressor)

    def test_seed_changes_model(self):
        a = synth_model(seed=5)
        b = synth_model(seed=6)
        assert np.abs(a.template_vertices - b.template_vertices).max() > 0

    def test_convex_rows(self, model):
        assert np.all(model.skin_weights >= 0)
        np.testing.assert_allclose(model.skin_weights.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(model.joint_regressor >= 0)
        np.testing.assert_allclose(model.joint_regressor.sum(axis=1), 1.0, atol=1e-9)

    def test_too_few_vertices_rejected(self):
        with pytest.raises(ValueError):
            synth_model(seed=0, n_vertices=10)

    def test_regressed_joints_track_kinematic_joints(self, model, rng):
        # the synthetic family guarantees regressor-consistency: joints
        # regressed from the posed mesh equal the FK joint positions
        beta = rng.uniform(-2, 2, NUM_SHAPE)
        pose = rng.normal(0, 0.4, 72)
        posed = mesh_function(model, pose, beta)
        shaped = shape_deform(model, beta)
        rest = regress_rest_joints(model, shaped)
        tf = forward_kinematics(model.tree(rest), pose, rest)
        np.testing.assert_allclose(posed.joints, tf.posed_joints, atol=1e-8)


class TestShapeDeform:
    def test_zero_beta_is_template(self, model):
        np.testing.assert_array_equal(shape_deform(model, np.zeros(NUM_SHAPE)),
                                      model.template_vertices)

    def test_linear_in_beta(self, model, rng):
        b1 = rng.normal(0, 1, NUM_SHAPE)
        b2 = rng.normal(0, 1, NUM_SHAPE)
        v1 = shape_deform(model, b1) - model.template_vertices
        v2 = shape_deform(model, b2) - model.template_vertices
        v12 = shape_deform(model, b1 + b2) - model.template_vertices
        np.testing.assert_allclose(v12, v1 + v2, atol=1e-12)

    def test_wrong_size_rejected(self, model):
        with pytest.raises(ValueError):
            shape_deform(model, np.zeros(9))


class TestRegressor:
    def test_matches_double_loop(self, model, rng):
        shaped = shape_deform(model, rng.uniform(-2, 2, NUM_SHAPE))
        fast = regress_rest_joints(model, shaped)
        slow = np.zeros((NUM_JOINTS, 3))
        for j in range(NUM_JOINTS):
            for v in range(shaped.shape[0]):
                slow[j] += model.joint_regressor[j, v] * shaped[v]
        np.testing.assert_allclose(fast, slow, atol=1e-10)


class TestSkinning:
    def test_matches_naive_lbs(self, model, rng):
        for _ in range(3):
            beta = rng.uniform(-1.5, 1.5, NUM_SHAPE)
            pose = rng.normal(0, 0.5, 72)
            shaped = shape_deform(model, beta)
            rest = regress_rest_joints(model, shaped)
            tf = forward_kinematics(model.tree(rest), pose, rest)
            posed = skin(model, shaped, tf)
            np.testing.assert_allclose(posed.vertices, naive_lbs(model, shaped, tf), atol=1e-10)

    def test_zero_pose_identity(self, model):
        shaped = model.template_vertices
        rest = regress_rest_joints(model, shaped)
        tf = forward_kinematics(model.tree(rest), np.zeros(72), rest)
        posed = skin(model, shaped, tf)
        np.testing.assert_allclose(posed.vertices, shaped, atol=1e-12)

    def test_inconsistent_rest_rejected(self, model, rng):
        shaped = shape_deform(model, rng.uniform(-2, 2, NUM_SHAPE))
        tf = forward_kinematics(model.tree(), np.zeros(72))  # template rest
        with pytest.raises(ValueError):
            skin(model, shaped, tf)


class TestModelFiles:
    def test_round_trip_lossless(self, model, tmp_path):
        path = tmp_path / "m.json"
        save_model(model, path)
        back = load_model(path)
        np.testing.assert_array_equal(back.template_vertices, model.template_vertices)
        np.testing.assert_array_equal(back.shape_basis, model.shape_basis)
        np.testing.assert_array_equal(back.skin_weights, model.skin_weights)
        np.testing.assert_array_equal(back.joint_regressor, model.joint_regressor)
        np.testing.assert_array_equal(back.faces, model.faces)
        assert back.joint_names == model.joint_names
        assert back.parents == model.parents

    def test_save_deterministic(self, model, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_tampered_payload_rejected(self, model, tmp_path):
        path = tmp_path / "m.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        doc["shapes"]["template_vertices"] = [3, 3]
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_save_obj_format(self, tmp_path):
        path = tmp_path / "m.obj"
        save_obj(path, np.array([[0.0, 1, 2], [3, 4, 5], [6, 7, 8]]),
                 np.array([[0, 1, 2]]))
        lines = path.read_text().splitlines()
        assert lines[0] == "v 0 1 2"
        assert lines[-1] == "f 1 2 3"
