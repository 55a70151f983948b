import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from sklearn.linear_model import LogisticRegression

from cvmim.data import (L_HIP, NUM_CLASSES, NUM_JOINTS, R_HIP, CameraPose, DataError, DatasetConfig,
                        Pose3D, bone_lengths, build_dataset, generate_action_sequence, load_dataset,
                        make_positive_pair, normalize, project, project_and_normalize, sample_camera,
                        sample_camera_angles, save_dataset)
from cvmim.train import sample_training_batch


def torso_length(p2d):
    hip = 0.5 * (p2d[L_HIP] + p2d[R_HIP])
    neck = 0.5 * (p2d[1] + p2d[2])
    return np.linalg.norm(neck - hip)


# ----------------------------------------------------------------------------
# action sequences

def test_sequence_is_deterministic():
    a = generate_action_sequence(0, 7, 1)
    b = generate_action_sequence(0, 7, 1)
    assert np.array_equal(a.joints, b.joints)


def test_seed_changes_trajectory_not_label():
    a = generate_action_sequence(0, 7, 30)
    b = generate_action_sequence(0, 8, 30)
    assert a.label == b.label == 0
    assert not np.allclose(a.joints, b.joints)


def test_bone_lengths_constant_within_sequence():
    seq = generate_action_sequence(3, 11, 40)
    bl = bone_lengths(seq.joints)
    assert np.all(bl > 0)
    np.testing.assert_allclose(bl, np.broadcast_to(bl[0], bl.shape), atol=1e-12)


def test_class_out_of_range():
    with pytest.raises(DataError):
        generate_action_sequence(NUM_CLASSES, 0, 5)


def test_classes_linearly_separable_in_3d():
    x, y = [], []
    for c in range(NUM_CLASSES):
        for s in range(100):
            x.append(generate_action_sequence(c, 1000 * c + s, 30).joints.ravel())
            y.append(c)
    x, y = np.array(x), np.array(y)
    x = (x - x.mean(0)) / (x.std(0) + 1e-9)
    clf = LogisticRegression(max_iter=2000).fit(x, y)
    assert clf.score(x, y) >= 0.95


def test_frames_are_pose3d_with_13_joints():
    seq = generate_action_sequence(1, 2, 3)
    assert len(seq.frames) == 3
    assert all(f.joints.shape == (NUM_JOINTS, 3) for f in seq.frames)


# ----------------------------------------------------------------------------
# cameras

def test_camera_sampling_ranges_and_uniformity():
    a = sample_camera_angles(np.random.default_rng(0), 100_000)
    assert -180 <= a[:, 0].min() <= -178 and 178 <= a[:, 0].max() <= 180
    assert np.all(np.abs(a[:, 1:]) <= 30)
    assert stats.kstest(a[:, 0], stats.uniform(-180, 360).cdf).statistic <= 0.01


def test_sample_camera_deterministic():
    c1 = sample_camera(np.random.default_rng(4))
    c2 = sample_camera(np.random.default_rng(4))
    assert c1 == c2 and c1.distance == 4.0 and c1.focal == 1.0


def test_camera_angle_validation():
    with pytest.raises(DataError):
        CameraPose(0.0, 95.0, 0.0)
    assert CameraPose(270.0, 0.0, 0.0).azimuth == -90.0


# ----------------------------------------------------------------------------
# projection and normalisation

def _pose(seed=3, frame=5):
    return Pose3D(generate_action_sequence(2, seed, frame + 1).joints[frame], (0, frame))


def test_mid_hip_projects_to_origin():
    j = _pose().joints.copy()
    # put both hip joints at the mid-hip so the projected hip is the projected mid-hip
    j[[L_HIP, R_HIP]] = 0.5 * (j[L_HIP] + j[R_HIP])
    uv = project(j[None], np.array([[37.0, 12.0, -8.0]]))[0]
    np.testing.assert_allclose(uv[[L_HIP, R_HIP]], 0.0, atol=1e-12)


def test_opposite_azimuths_mirror_x_at_long_range():
    j = _pose().joints
    for a in (0.0, 30.0, 90.0):
        u1 = project(j[None], np.array([[a, 0.0, 0.0]]), distance=400.0)[0]
        u2 = project(j[None], np.array([[a + 180.0, 0.0, 0.0]]), distance=400.0)[0]
        scale = np.abs(u1).max()
        np.testing.assert_allclose(u1[:, 0] / scale, -u2[:, 0] / scale, atol=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-180, 180), st.floats(-30, 30), st.floats(-30, 30))
def test_normalize_idempotent_and_unit_torso(az, el, ro):
    p = project_and_normalize(_pose(), CameraPose(az, el, ro)).joints
    np.testing.assert_allclose(normalize(p), p, atol=1e-12)
    assert abs(torso_length(p) - 1.0) <= 1e-9
    hip = 0.5 * (p[L_HIP] + p[R_HIP])
    np.testing.assert_allclose(hip, 0.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(-180, 180), st.floats(-30, 30))
def test_scale_invariance(s, az, el):
    pose = _pose()
    hip = 0.5 * (pose.joints[L_HIP] + pose.joints[R_HIP])
    scaled = Pose3D(hip + s * (pose.joints - hip))
    cam = CameraPose(az, el, 0.0)
    a = project_and_normalize(pose, cam, orthographic=True).joints
    b = project_and_normalize(scaled, cam, orthographic=True).joints
    np.testing.assert_allclose(a, b, atol=1e-9)
    far = CameraPose(az, el, 0.0, distance=400.0)
    a = project_and_normalize(pose, far).joints
    b = project_and_normalize(scaled, far).joints
    np.testing.assert_allclose(a, b, atol=2e-2)


def test_behind_camera_rejected():
    with pytest.raises(DataError, match="behind camera"):
        project_and_normalize(_pose(), CameraPose(0.0, 0.0, 0.0, distance=0.3))


def test_zero_torso_rejected():
    p = np.zeros((NUM_JOINTS, 2))
    with pytest.raises(DataError, match="zero torso"):
        normalize(p)


# ----------------------------------------------------------------------------
# positive pairs

def test_same_camera_pair_identical():
    cam = CameraPose(20.0, 5.0, 0.0)
    a, b = make_positive_pair(_pose(), cam, cam, allow_same_view=True)
    assert np.array_equal(a.joints, b.joints)


def test_same_camera_pair_needs_opt_in():
    cam = CameraPose(20.0, 5.0, 0.0)
    with pytest.raises(DataError):
        make_positive_pair(_pose(), cam, cam)


def test_front_and_side_pair_distinct_but_same_source():
    wave = Pose3D(generate_action_sequence(0, 1, 8).joints[4], (17, 4))
    a, b = make_positive_pair(wave, CameraPose(0.0, 0.0, 0.0), CameraPose(90.0, 0.0, 0.0))
    assert not np.allclose(a.joints, b.joints)
    assert a.source == b.source == (17, 4)


def test_training_pairs_share_source(tiny_dataset):
    rng = np.random.default_rng(0)
    ds = tiny_dataset
    T = ds.poses.shape[2]
    checked = 0
    while checked < 10_000:
        b = sample_training_batch(ds, 64, rng, augment=False)
        s, t = b.source[:, 0], b.source[:, 1]
        np.testing.assert_array_equal(b.x.reshape(-1, NUM_JOINTS, 2), ds.poses[s, b.views[:, 0], t])
        np.testing.assert_array_equal(b.x_pos.reshape(-1, NUM_JOINTS, 2), ds.poses[s, b.views[:, 1], t])
        assert len(np.unique(s * T + t)) == len(s)
        checked += len(s)


# ----------------------------------------------------------------------------
# datasets

def test_default_dataset_arithmetic():
    cfg = DatasetConfig(frames=2)
    ds = build_dataset(cfg)
    assert len(ds.sequences) == 400
    fs = ds.splits["fully_supervised"]
    assert len(fs.train_seqs) == 320 and len(fs.test_seqs) == 80
    assert not set(fs.train_seqs) & set(fs.test_seqs)
    single = [k for k in ds.splits if k.startswith("single_shot_")]
    assert len(single) == 4
    assert cfg.base_azimuths() == [0.0, 90.0, 180.0, -90.0]


def test_single_shot_splits_train_on_one_view(tiny_dataset):
    covered = set()
    for v in range(tiny_dataset.num_views):
        sp = tiny_dataset.splits[f"single_shot_{v}"]
        assert sp.train_views == [v]
        covered |= set(sp.test_views)
    assert covered == set(range(tiny_dataset.num_views))


def test_augmented_pool_matches_base_count(tiny_dataset):
    assert len(tiny_dataset.aug_poses) == tiny_dataset.poses[..., 0, 0].size


def test_needs_two_views():
    with pytest.raises(DataError):
        build_dataset(DatasetConfig(num_views=1, seqs_per_class=2, frames=2))


def test_serialisation_byte_identical_and_lossless(tmp_path):
    cfg = DatasetConfig(seqs_per_class=3, frames=5, seed=9, noise_sigma=0.01)
    save_dataset(build_dataset(cfg), tmp_path / "a")
    save_dataset(build_dataset(cfg), tmp_path / "b")
    for name in ("manifest.json", "poses.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ds = build_dataset(cfg)
    back = load_dataset(tmp_path / "a")
    assert np.array_equal(back.poses, ds.poses)
    assert np.array_equal(back.aug_poses, ds.aug_poses)
    assert np.array_equal(back.aug_index, ds.aug_index)
    assert np.array_equal(back.labels, ds.labels)
    assert back.splits == ds.splits
    header = (tmp_path / "a" / "poses.bin").read_bytes()[:16]
    assert header[:8] == b"CVMIMDS1"
    assert int.from_bytes(header[8:], "little") == 2 * ds.poses[..., 0, 0].size


def test_truncated_dataset_rejected(tmp_path):
    save_dataset(build_dataset(DatasetConfig(seqs_per_class=2, frames=2)), tmp_path)
    blob = (tmp_path / "poses.bin").read_bytes()
    (tmp_path / "poses.bin").write_bytes(blob[:-8])
    with pytest.raises(DataError):
        load_dataset(tmp_path)
