import numpy as np
import pytest

from chainfit.camera import WeakPerspectiveCamera, project
from chainfit.objectives import (
    DEFAULT_LATENT_DIM,
    LossBreakdown,
    LossWeights,
    PosePrior,
    combine_terms,
    default_pose_prior,
    fit_prior,
    load_prior,
    loss_2d,
    loss_3d,
    loss_smpl,
    predict_joints,
    prior_gradient,
    prior_penalty,
    sample_plausible_poses,
    save_prior,
    total_loss,
)
from chainfit.observations import Observations


class TestWeights:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(w_3d=-1.0)

    def test_round_trip(self):
        w = LossWeights(w_3d=2.0, w_2d=0.5, w_smpl=0.0, w_kl=1e-4)
        assert LossWeights.from_dict(w.to_dict()) == w


class TestDataLosses:
    def test_loss_3d_matches_double_loop(self, rng):
        pred = rng.normal(0, 1, (24, 3))
        target = rng.normal(0, 1, (24, 3))
        vis = rng.random(24) < 0.7
        vis[0] = True
        obs = Observations(joints3d=target, vis3d=vis)
        slow = 0.0
        for j in range(24):
            if vis[j]:
                for c in range(3):
                    slow += abs(pred[j, c] - target[j, c])
        assert loss_3d(pred, obs) == pytest.approx(slow, abs=1e-12)

    def test_loss_2d_matches_double_loop(self, rng):
        pred = rng.normal(0, 50, (24, 2))
        target = rng.normal(0, 50, (24, 2))
        vis = rng.random(24) < 0.6
        vis[3] = True
        obs = Observations(joints2d=target, vis2d=vis)
        slow = 0.0
        for j in range(24):
            if vis[j]:
                for c in range(2):
                    slow += abs(pred[j, c] - target[j, c])
        assert loss_2d(pred, obs) == pytest.approx(slow, abs=1e-10)

    def test_invisible_rows_ignored(self, rng):
        target = rng.normal(0, 1, (24, 3))
        vis = np.ones(24, bool)
        obs = Observations(joints3d=target, vis3d=vis)
        pred = target.copy()
        full = loss_3d(pred + 1.0, obs)
        vis2 = vis.copy()
        vis2[10] = False
        obs2 = Observations(joints3d=target, vis3d=vis2)
        assert loss_3d(pred + 1.0, obs2) == pytest.approx(full - 3.0, abs=1e-12)

    def test_loss_smpl(self, rng):
        pose = rng.normal(0, 1, 72)
        shape = rng.normal(0, 1, 10)
        tp = rng.normal(0, 1, 72)
        ts = rng.normal(0, 1, 10)
        want = float(((pose - tp) ** 2).sum() + ((shape - ts) ** 2).sum())
        assert loss_smpl(pose, shape, (tp, ts)) == pytest.approx(want, abs=1e-12)
        assert loss_smpl(pose, shape, None) == 0.0

    def test_combine_terms_formula(self):
        w = LossWeights(w_3d=2.0, w_2d=3.0, w_smpl=5.0, w_kl=7.0)
        assert combine_terms(1.0, 10.0, 100.0, 1000.0, w) == 5 * 100 + 2 * 1 + 3 * 10 + 7 * 1000


class TestPrior:
    def test_penalty_zero_at_mean(self):
        prior = default_pose_prior()
        pose = np.zeros(72)
        pose[3:] = prior.mean
        assert prior_penalty(prior, pose) == 0.0

    def test_penalty_matches_explicit_mahalanobis(self, rng):
        prior = default_pose_prior()
        # explicit oracle: 0.5 (x-mu)^T B diag(1/var) B^T (x-mu), double loop
        M = np.zeros((prior.dim, prior.dim))
        for k in range(prior.latent_dim):
            b = prior.basis[:, k]
            M += np.outer(b, b) / prior.variances[k]
        for _ in range(10):
            pose = rng.normal(0, 0.5, 72)
            d = pose[3:] - prior.mean
            want = 0.5 * float(d @ M @ d)
            assert prior_penalty(prior, pose) == pytest.approx(want, rel=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        prior = default_pose_prior()
        pose = rng.normal(0, 0.4, 72)
        g = prior_gradient(prior, pose)
        h = 1e-6
        for i in rng.choice(72, size=10, replace=False):
            e = np.zeros(72)
            e[i] = h
            fd = (prior_penalty(prior, pose + e) - prior_penalty(prior, pose - e)) / (2 * h)
            assert g[i] == pytest.approx(fd, abs=1e-6)

    def test_global_block_unpenalized(self, rng):
        prior = default_pose_prior()
        pose = rng.normal(0, 0.4, 72)
        moved = pose.copy()
        moved[:3] += rng.normal(0, 2, 3)
        assert prior_penalty(prior, moved) == prior_penalty(prior, pose)
        assert np.all(prior_gradient(prior, pose)[:3] == 0.0)

    def test_fit_prior_recovers_variances(self, rng):
        # diagonal Gaussian with known per-axis variances on the top axes
        d, m, n = 69, 8, 10000
        true_var = np.linspace(4.0, 0.5, m)
        X = np.zeros((n, d))
        X[:, :m] = rng.normal(0, np.sqrt(true_var), (n, m))
        X[:, m:] = rng.normal(0, 1e-3, (n, d - m))
        prior = fit_prior(X, m)
        got = np.sort(prior.variances)[::-1]
        np.testing.assert_allclose(got, true_var, rtol=0.10)

    def test_default_prior_deterministic(self):
        a = default_pose_prior()
        b = default_pose_prior()
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.basis, b.basis)
        np.testing.assert_array_equal(a.variances, b.variances)

    def test_prior_round_trip(self, tmp_path):
        prior = default_pose_prior()
        path = tmp_path / "prior.json"
        save_prior(prior, path)
        back = load_prior(path)
        np.testing.assert_array_equal(back.mean, prior.mean)
        np.testing.assert_array_equal(back.basis, prior.basis)
        np.testing.assert_array_equal(back.variances, prior.variances)

    def test_non_orthonormal_basis_rejected(self):
        with pytest.raises(ValueError):
            PosePrior(mean=np.zeros(4), basis=np.ones((4, 2)), variances=np.ones(2))


class TestSamplePlausiblePoses:
    def test_shape_and_determinism(self):
        a = sample_plausible_poses(16, 3)
        b = sample_plausible_poses(16, 3)
        assert a.shape == (16, 72)
        np.testing.assert_array_equal(a, b)

    def test_within_two_sigma(self):
        # truncation: no component may exceed two of its joint's sigmas;
        # global scale stays within a plausible range of motion
        samples = sample_plausible_poses(500, 0)
        assert np.abs(samples).max() < np.pi


class TestTotalLoss:
    def test_recomputation_bitwise(self, model, rng):
        pose = rng.normal(0, 0.3, 72)
        shape = rng.uniform(-1, 1, 10)
        cam = WeakPerspectiveCamera(scale=80.0, offset=np.array([128.0, 128.0]))
        gt = predict_joints(model, pose, shape)
        obs = Observations(
            joints3d=gt + rng.normal(0, 0.01, (24, 3)),
            vis3d=np.ones(24, bool),
            joints2d=project(cam, gt),
            vis2d=np.ones(24, bool),
        )
        prior = default_pose_prior()
        w = LossWeights()
        bd = total_loss(model, pose, shape, cam, obs, prior, w)
        assert bd.total == combine_terms(bd.l_3d, bd.l_2d, bd.l_smpl, bd.l_kl, w)
        assert isinstance(bd, LossBreakdown)

    def test_flags_missing_pieces(self, model, rng):
        pose = rng.normal(0, 0.3, 72)
        obs = Observations(joints3d=predict_joints(model, pose, np.zeros(10)),
                           vis3d=np.ones(24, bool))
        bd = total_loss(model, pose, np.zeros(10), None, obs, None, LossWeights())
        assert "no_camera" in bd.flags or "no_visible_2d" in bd.flags
        assert bd.l_2d == 0.0
        assert bd.l_kl == 0.0
