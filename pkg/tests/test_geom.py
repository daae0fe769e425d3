import math

import numpy as np
import pytest

from splatview.geom import (
    CorrespondenceSet,
    DegenerateGeometryError,
    NoConsensusError,
    RigidTransform,
    SimilarityTransform,
    TangentVector6,
    camera_position,
    compose,
    exp,
    fibonacci_hemisphere,
    log,
    look_at,
    pose_distance,
    procrustes_se3,
    ransac_procrustes,
    random_rigid_transform,
    rotation_angle,
    umeyama_align,
)


def rand_transform(rng, max_trans=1.0):
    return random_rigid_transform(rng, max_trans)


class TestCompose:
    def test_identity(self):
        rng = np.random.default_rng(0)
        t = rand_transform(rng)
        assert compose(RigidTransform.identity(), t).almost_equal(t)
        assert compose(t, RigidTransform.identity()).almost_equal(t)

    def test_inverse(self):
        rng = np.random.default_rng(1)
        t = rand_transform(rng)
        assert compose(t, t.inverse()).almost_equal(RigidTransform.identity())
        assert compose(t.inverse(), t).almost_equal(RigidTransform.identity())

    def test_matches_pointwise_application(self):
        # Oracle: applying the composite equals applying b then a, point by point.
        rng = np.random.default_rng(2)
        a, b = rand_transform(rng), rand_transform(rng)
        pts = rng.uniform(-1, 1, size=(10, 3))
        got = compose(a, b).apply(pts)
        want = a.apply(b.apply(pts))
        assert np.abs(got - want).max() < 1e-9

    def test_group_laws_seeded(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            a, b, c = (rand_transform(rng) for _ in range(3))
            lhs = compose(compose(a, b), c)
            rhs = compose(a, compose(b, c))
            worst = max(worst, pose_distance(lhs, rhs, 1.0))
            worst = max(worst, pose_distance(compose(a, a.inverse()), RigidTransform.identity(), 1.0))
        assert worst < 1e-9


class TestExpLog:
    def test_exp_zero(self):
        assert exp(TangentVector6(np.zeros(3), np.zeros(3))).almost_equal(RigidTransform.identity())

    def test_exp_pure_translation(self):
        t = exp(TangentVector6(np.zeros(3), [1.0, 2.0, 3.0]))
        assert np.allclose(t.trans, [1, 2, 3], atol=1e-12)
        assert rotation_angle(t, RigidTransform.identity()) < 1e-12

    def test_round_trips_seeded(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(1000):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(0, math.pi - 1e-3)
            v = TangentVector6(axis * angle, rng.uniform(-2, 2, size=3))
            back = log(exp(v))
            worst = max(worst, np.abs(back.as_array() - v.as_array()).max())
        assert worst < 1e-9

    def test_log_at_pi_branch(self):
        # Half-turn about y: log magnitude is pi, exp(log(T)) returns T.
        t = RigidTransform([0.0, 0.0, 1.0, 0.0], [0.1, -0.2, 0.3])
        v = log(t)
        assert abs(np.linalg.norm(v.rot) - math.pi) < 1e-9
        assert exp(v).almost_equal(t)


class TestPoseDistance:
    def test_zero_on_equal(self):
        rng = np.random.default_rng(5)
        t = rand_transform(rng)
        assert pose_distance(t, t, 1.0) == 0.0

    def test_pure_translation(self):
        a = RigidTransform.identity()
        b = RigidTransform(trans=[0.1, 0.0, 0.0])
        assert abs(pose_distance(a, b, 1.0) - 0.1) < 1e-12

    def test_rotation_term(self):
        # 90 degrees about z with weight 0.5 contributes pi/4.
        q = [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)]
        a = RigidTransform(trans=[0.3, 0.2, 0.1])
        b = RigidTransform(q, [0.3, 0.2, 0.1])
        assert abs(pose_distance(a, b, 0.5) - math.pi / 4) < 1e-9

    def test_metric_properties_seeded(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            a, b, c = (rand_transform(rng) for _ in range(3))
            dab = pose_distance(a, b, 0.1)
            dba = pose_distance(b, a, 0.1)
            assert abs(dab - dba) < 1e-12
            assert pose_distance(a, c, 0.1) <= dab + pose_distance(b, c, 0.1) + 1e-9


GENERIC_POINTS = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.1, -0.2], [-0.3, 1.2, 0.4], [0.5, -0.7, 1.1]]
)


class TestUmeyama:
    def test_identity(self):
        s = umeyama_align(GENERIC_POINTS, GENERIC_POINTS)
        assert abs(s.scale - 1.0) < 1e-9
        assert s.rigid.almost_equal(RigidTransform.identity())

    def test_pure_scaling(self):
        s = umeyama_align(GENERIC_POINTS, 2.0 * GENERIC_POINTS)
        assert abs(s.scale - 2.0) < 1e-9
        assert rotation_angle(s.rigid, RigidTransform.identity()) < 1e-9

    def test_recovers_seeded_sim3(self):
        rng = np.random.default_rng(7)
        src = rng.uniform(-0.5, 0.5, size=(6, 3))
        truth = SimilarityTransform(1.37, rand_transform(rng, 0.4))
        dst = truth.apply(src)
        got = umeyama_align(src, dst)
        assert abs(got.scale - truth.scale) < 1e-9
        assert got.rigid.almost_equal(truth.rigid, tol=1e-9)

    def test_noisy_recovery_rms(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(-0.5, 0.5, size=(6, 3))
        truth = SimilarityTransform(1.37, rand_transform(rng, 0.4))
        dst = truth.apply(src) + rng.normal(scale=1e-3, size=(6, 3))
        got = umeyama_align(src, dst)
        rms = math.sqrt(np.mean(np.sum((dst - got.apply(src)) ** 2, axis=1)))
        assert rms <= 2e-3

    def test_equivariance(self):
        rng = np.random.default_rng(9)
        src = rng.uniform(-0.5, 0.5, size=(8, 3))
        truth = SimilarityTransform(0.8, rand_transform(rng))
        dst = truth.apply(src)
        extra = SimilarityTransform(1.6, rand_transform(rng))
        got = umeyama_align(src, extra.apply(dst))
        want = extra @ umeyama_align(src, dst)
        assert abs(got.scale - want.scale) < 1e-9
        assert got.rigid.almost_equal(want.rigid, tol=1e-8)

    def test_too_few_points(self):
        with pytest.raises(DegenerateGeometryError):
            umeyama_align(GENERIC_POINTS[:2], GENERIC_POINTS[:2])

    def test_collinear(self):
        line = np.outer(np.linspace(0, 1, 5), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateGeometryError):
            umeyama_align(line, line * 2.0)

    def test_three_noncollinear_points_work(self):
        # Planar (rank-2) configurations are solvable; only collinear input fails.
        rng = np.random.default_rng(10)
        src = np.array([[0.0, 0, 0], [0.4, 0, 0], [0.0, 0.3, 0]])
        truth = SimilarityTransform(1.1, rand_transform(rng))
        got = umeyama_align(src, truth.apply(src))
        assert abs(got.scale - truth.scale) < 1e-9
        assert got.rigid.almost_equal(truth.rigid, tol=1e-8)


def corrs_from(points_a, points_b, source="oracle"):
    return CorrespondenceSet.from_points(points_a, points_b, source=source)


class TestProcrustes:
    def test_identity(self):
        c = corrs_from(GENERIC_POINTS, GENERIC_POINTS)
        assert procrustes_se3(c).almost_equal(RigidTransform.identity())

    def test_exact_recovery(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-0.5, 0.5, size=(12, 3))
        truth = rand_transform(rng, 0.5)
        got = procrustes_se3(corrs_from(pts, truth.apply(pts)))
        assert got.almost_equal(truth, tol=1e-9)

    def test_planar_mirror_keeps_proper_rotation(self):
        # Reflection-adversarial set: points_b are a mirror image of points_a.
        # The least-squares rotation must still come out with det +1.
        pa = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.2, 0]])
        pb = pa.copy()
        pb[:, 0] = -pb[:, 0]
        got = procrustes_se3(corrs_from(pa, pb))
        assert np.linalg.det(got.rotation_matrix) > 0.999999

    def test_collinear_raises(self):
        line = np.outer(np.linspace(0, 1, 5), [1.0, 1.0, 0.0])
        with pytest.raises(DegenerateGeometryError):
            procrustes_se3(corrs_from(line, line))


class TestRansacProcrustes:
    def test_all_inliers_noiseless(self):
        rng = np.random.default_rng(12)
        pts = rng.uniform(-0.3, 0.3, size=(100, 3))
        truth = rand_transform(rng, 0.4)
        model, mask = ransac_procrustes(
            corrs_from(pts, truth.apply(pts)), iterations=64, inlier_threshold=1e-6, seed=0
        )
        assert mask.all()
        assert model.almost_equal(truth, tol=1e-9)

    def test_contaminated_recovery_over_seeds(self):
        # Generate-and-recover oracle: 70 noisy inliers + 30 box outliers.
        successes = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            truth = rand_transform(rng, 0.3)
            pts = rng.uniform(-0.25, 0.25, size=(70, 3))
            dst = truth.apply(pts) + rng.normal(scale=2e-3, size=(70, 3))
            out_a = rng.uniform(-0.25, 0.25, size=(30, 3))
            out_b = rng.uniform(-0.25, 0.25, size=(30, 3))
            c = corrs_from(np.vstack([pts, out_a]), np.vstack([dst, out_b]))
            try:
                model, mask = ransac_procrustes(
                    c, iterations=512, inlier_threshold=8e-3, min_inliers=30, seed=seed
                )
            except NoConsensusError:
                continue
            rot_err = math.degrees(rotation_angle(model, truth))
            trans_err = np.linalg.norm(model.trans - truth.trans)
            if rot_err < 0.5 and trans_err < 5e-3 and mask[:70].sum() >= 65:
                successes += 1
        assert successes >= 99

    def test_too_few_pairs(self):
        with pytest.raises(DegenerateGeometryError):
            ransac_procrustes(corrs_from(GENERIC_POINTS[:2], GENERIC_POINTS[:2]))

    def test_no_consensus(self):
        rng = np.random.default_rng(13)
        pa = rng.uniform(-1, 1, size=(20, 3))
        pb = rng.uniform(-1, 1, size=(20, 3))
        with pytest.raises(NoConsensusError):
            ransac_procrustes(
                corrs_from(pa, pb), iterations=128, inlier_threshold=1e-4, min_inliers=10, seed=3
            )

    def test_refit_permutation_invariant(self):
        # For a fixed inlier set the refit result does not depend on row order.
        rng = np.random.default_rng(14)
        pts = rng.uniform(-0.3, 0.3, size=(40, 3))
        truth = rand_transform(rng, 0.2)
        dst = truth.apply(pts) + rng.normal(scale=1e-3, size=(40, 3))
        c = corrs_from(pts, dst)
        perm = rng.permutation(40)
        fit_a = procrustes_se3(c)
        fit_b = procrustes_se3(c.subset(perm))
        assert pose_distance(fit_a, fit_b, 1.0) < 1e-9


class TestFibonacciHemisphere:
    def test_single_point_at_band_top(self):
        pts = fibonacci_hemisphere(1, [0, 0, 0], 2.0, (math.radians(10), math.radians(60)))
        assert pts.shape == (1, 3)
        elev = math.asin(pts[0, 2] / 2.0)
        assert abs(elev - math.radians(60)) < 1e-9

    def test_radius_invariant(self):
        center = np.array([0.3, -0.2, 0.5])
        pts = fibonacci_hemisphere(128, center, 0.7, (0.1, 1.2))
        r = np.linalg.norm(pts - center, axis=1)
        assert np.abs(r - 0.7).max() < 1e-9

    def test_elevation_band(self):
        pts = fibonacci_hemisphere(64, [0, 0, 0], 1.0, (0.2, 1.0))
        elev = np.arcsin(np.clip(pts[:, 2], -1, 1))
        assert elev.min() >= 0.2 - 1e-9 and elev.max() <= 1.0 + 1e-9

    def test_spacing_uniformity(self):
        # Low-discrepancy check: nearest-neighbour angular gaps are even.
        pts = fibonacci_hemisphere(256, [0, 0, 0], 1.0, (0.0, math.pi / 2))
        dots = np.clip(pts @ pts.T, -1, 1)
        ang = np.arccos(dots)
        np.fill_diagonal(ang, np.inf)
        nn = ang.min(axis=1)
        assert nn.std() / nn.mean() < 0.5


class TestLookAt:
    def test_canonical_downward_view(self):
        pose = look_at([0, 0, 1], [0, 0, 0], up=[0, 1, 0])
        assert np.allclose(camera_position(pose), [0, 0, 1], atol=1e-12)
        # Camera forward axis (third row of R) points along world -z.
        assert np.allclose(pose.rotation_matrix[2], [0, 0, -1], atol=1e-12)

    def test_target_on_optical_axis(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            eye = rng.uniform(-1, 1, size=3)
            target = rng.uniform(-1, 1, size=3)
            if np.linalg.norm(target - eye) < 1e-3:
                continue
            pose = look_at(eye, target)
            p_cam = pose.apply(target)
            assert abs(p_cam[0]) < 1e-9 and abs(p_cam[1]) < 1e-9
            assert p_cam[2] > 0

    def test_parallel_up_raises(self):
        with pytest.raises(ValueError):
            look_at([0, 0, 0], [0, 0, 1], up=[0, 0, 1])
