"""Synthetic multi-view skeleton actions.

Sequences are driven by sinusoidal joint-angle programs on a fixed-length
13-joint skeleton, rendered through pinhole cameras and normalised so the
mid-hip sits at the origin and the torso has unit length.  The neck used for
normalisation is the shoulder midpoint and the mid-hip is the hip midpoint.

World frame: x to the subject's right, y up, the subject faces -z.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

JOINTS = (
    "head",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_ankle", "r_ankle",
)
NUM_JOINTS = len(JOINTS)
POSE_DIM = 2 * NUM_JOINTS
L_SHO, R_SHO, L_HIP, R_HIP = 1, 2, 7, 8

# parent -> child edges of the kinematic tree (neck and mid-hip are virtual)
BONES = ((1, 3), (3, 5), (2, 4), (4, 6), (7, 9), (9, 11), (8, 10), (10, 12))

ACTION_NAMES = ("wave", "squat", "lunge", "jumping_jack", "bow", "twist", "kick", "reach")
NUM_CLASSES = len(ACTION_NAMES)
FPS = 15.0

# metres: torso (mid-hip->neck), neck->head, shoulder half width, hip half width,
# upper arm, forearm, thigh, shin
_BONE_LENGTHS = np.array([0.52, 0.22, 0.19, 0.11, 0.30, 0.27, 0.44, 0.42])

_REST = {
    "bow": 0.0, "twist": 0.0,
    "sh_a_l": 8.0, "sh_a_r": 8.0, "sh_f_l": 0.0, "sh_f_r": 0.0,
    "el_l": 10.0, "el_r": 10.0, "el_a_l": 0.0, "el_a_r": 0.0,
    "hip_a_l": 3.0, "hip_a_r": 3.0, "hip_f_l": 0.0, "hip_f_r": 0.0,
    "knee_l": 0.0, "knee_r": 0.0,
}

# class -> (frequency in Hz, [(channel, base, amplitude, phase shift), ...]); degrees
_PROGRAMS = (
    (0.9, [("sh_a_r", 100, 0, 0), ("sh_f_r", 10, 0, 0), ("el_r", 30, 0, 0),
           ("el_a_r", 35, 45, 0)]),
    (0.6, [("hip_f_l", 45, 45, 0), ("hip_f_r", 45, 45, 0), ("knee_l", 85, 85, 0),
           ("knee_r", 85, 85, 0), ("sh_f_l", 40, 40, 0), ("sh_f_r", 40, 40, 0),
           ("bow", 15, 15, 0)]),
    (0.7, [("hip_f_l", 35, 25, 0), ("knee_l", 40, 40, 0), ("hip_f_r", -20, 10, 0),
           ("knee_r", 20, 20, 0), ("bow", 5, 0, 0)]),
    (1.0, [("sh_a_l", 90, 70, 0), ("sh_a_r", 90, 70, 0), ("hip_a_l", 15, 12, 0),
           ("hip_a_r", 15, 12, 0)]),
    (0.6, [("bow", 35, 35, 0), ("sh_f_l", 20, 20, 0), ("sh_f_r", 20, 20, 0)]),
    (0.7, [("twist", 0, 50, 0), ("sh_a_l", 85, 0, 0), ("sh_a_r", 85, 0, 0),
           ("el_l", 5, 0, 0), ("el_r", 5, 0, 0)]),
    (0.8, [("hip_f_r", 40, 40, 0), ("knee_r", 30, 30, math.pi), ("sh_a_l", 30, 0, 0),
           ("sh_a_r", 30, 0, 0)]),
    (0.65, [("sh_f_r", 90, 60, 0), ("sh_f_l", 90, 60, math.pi), ("el_l", 5, 0, 0),
            ("el_r", 5, 0, 0)]),
)


class DataError(ValueError):
    pass


# ----------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Pose3D:
    joints: np.ndarray  # (13, 3) metres
    source: tuple[int, int] | None = None  # (sequence id, frame)

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.shape != (NUM_JOINTS, 3):
            raise DataError(f"Pose3D needs {NUM_JOINTS}x3 joints, got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise DataError("Pose3D has non-finite coordinates")
        object.__setattr__(self, "joints", j)

    def bone_lengths(self) -> np.ndarray:
        return bone_lengths(self.joints[None])[0]


@dataclass(frozen=True)
class Pose2D:
    joints: np.ndarray  # (13, 2)
    source: tuple[int, int] | None = None

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.shape != (NUM_JOINTS, 2):
            raise DataError(f"Pose2D needs {NUM_JOINTS}x2 joints, got {j.shape}")
        object.__setattr__(self, "joints", j)

    def flat(self) -> np.ndarray:
        return self.joints.reshape(-1)


@dataclass(frozen=True)
class CameraPose:
    azimuth: float
    elevation: float
    roll: float
    distance: float = 4.0
    focal: float = 1.0

    def __post_init__(self):
        az = (float(self.azimuth) + 180.0) % 360.0 - 180.0
        if az == -180.0 and self.azimuth > 0:
            az = 180.0
        object.__setattr__(self, "azimuth", az)
        for name in ("elevation", "roll"):
            v = float(getattr(self, name))
            if not -90.0 <= v <= 90.0:
                raise DataError(f"{name} must lie in [-90, 90], got {v}")
        if self.distance <= 0 or self.focal <= 0:
            raise DataError("camera distance and focal must be positive")

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.azimuth, self.elevation, self.roll)


@dataclass
class ActionSequence:
    joints: np.ndarray  # (T, 13, 3)
    label: int
    subject_seed: int
    seq_id: int = -1

    @property
    def frames(self) -> list[Pose3D]:
        return [Pose3D(j, (self.seq_id, t)) for t, j in enumerate(self.joints)]

    def __len__(self):
        return self.joints.shape[0]


# ----------------------------------------------------------------------------
# kinematics

def _segment(side: float, abduction: np.ndarray, flexion: np.ndarray) -> np.ndarray:
    a = np.radians(abduction)
    f = np.radians(flexion)
    return np.stack([side * np.sin(a) * np.cos(f), -np.cos(a) * np.cos(f), -np.sin(f)], axis=-1)


def _rot_y(deg: np.ndarray) -> np.ndarray:
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    z, o = np.zeros_like(t), np.ones_like(t)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1),
                     np.stack([-s, z, c], -1)], -2)


def _rot_x(deg: np.ndarray) -> np.ndarray:
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    z, o = np.zeros_like(t), np.ones_like(t)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1),
                     np.stack([z, s, c], -1)], -2)


def _rot_z(deg: np.ndarray) -> np.ndarray:
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    z, o = np.zeros_like(t), np.ones_like(t)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1),
                     np.stack([z, z, o], -1)], -2)


def forward_kinematics(angles: dict[str, np.ndarray], lengths: np.ndarray) -> np.ndarray:
    """Joint positions (T, 13, 3) for per-frame angle channels in degrees."""
    torso, neck_head, sho_w, hip_w, upper, fore, thigh, shin = lengths
    n = len(angles["bow"])
    out = np.zeros((n, NUM_JOINTS, 3))
    # upper body in a torso-local frame anchored at the mid-hip, then bent and twisted
    up = np.zeros((n, 7, 3))
    neck = np.array([0.0, torso, 0.0])
    up[:, 0] = neck + [0.0, neck_head, 0.0]
    for k, (side, s) in enumerate(((-1.0, "l"), (1.0, "r"))):
        sho = neck + [side * sho_w, 0.0, 0.0]
        elb = sho + upper * _segment(side, angles[f"sh_a_{s}"], angles[f"sh_f_{s}"])
        wri = elb + fore * _segment(side, angles[f"sh_a_{s}"] + angles[f"el_a_{s}"],
                                    angles[f"sh_f_{s}"] + angles[f"el_{s}"])
        up[:, 1 + k] = sho
        up[:, 3 + k] = elb
        up[:, 5 + k] = wri
    # bow pitches the trunk forward (towards -z)
    rot = _rot_y(angles["twist"]) @ _rot_x(-angles["bow"])
    out[:, :7] = np.einsum("tij,tkj->tki", rot, up)
    pelvis = _rot_y(0.3 * angles["twist"])
    for k, (side, s) in enumerate(((-1.0, "l"), (1.0, "r"))):
        hip = np.einsum("tij,j->ti", pelvis, np.array([side * hip_w, 0.0, 0.0]))
        knee = hip + thigh * _segment(side, angles[f"hip_a_{s}"], angles[f"hip_f_{s}"])
        ankle = knee + shin * _segment(side, angles[f"hip_a_{s}"],
                                       angles[f"hip_f_{s}"] - angles[f"knee_{s}"])
        out[:, 7 + k] = hip
        out[:, 9 + k] = knee
        out[:, 11 + k] = ankle
    return out


def bone_lengths(joints: np.ndarray) -> np.ndarray:
    """Lengths of the limb bones for joints of shape (..., 13, 3)."""
    a = np.array([b[0] for b in BONES])
    b = np.array([b[1] for b in BONES])
    return np.linalg.norm(joints[..., b, :] - joints[..., a, :], axis=-1)


def generate_action_sequence(class_id: int, seed: int, frames: int,
                             num_classes: int = NUM_CLASSES,
                             facing_jitter: float = 0.0) -> ActionSequence:
    """Deterministic 3D action clip for ``(class_id, seed, frames)``.

    The seed jitters each programmed amplitude by up to 15%, shifts the phase
    by up to 15% of a cycle, scales every bone by up to 10% and turns the
    subject about the vertical by up to ``facing_jitter`` degrees.
    """
    if not 0 <= class_id < num_classes or class_id >= len(_PROGRAMS):
        raise DataError(f"class_id {class_id} outside [0, {min(num_classes, len(_PROGRAMS))})")
    if frames < 1:
        raise DataError("frames must be >= 1")
    rng = make_rng(seed & 0xFFFFFFFFFFFFFFFF, 0xAC7)
    freq, program = _PROGRAMS[class_id]
    amp_jit = 1.0 + rng.uniform(-0.15, 0.15, size=len(program))
    phase0 = 2.0 * math.pi * rng.uniform(-0.15, 0.15)
    len_jit = 1.0 + rng.uniform(-0.10, 0.10, size=len(_BONE_LENGTHS))
    yaw = facing_jitter * rng.uniform(-1.0, 1.0)
    t = np.arange(frames, dtype=np.float64)
    phase = 2.0 * math.pi * freq * t / FPS + phase0
    angles = {k: np.full(frames, v) for k, v in _REST.items()}
    for (ch, base, amp, shift), j in zip(program, amp_jit):
        angles[ch] = base + amp * j * np.sin(phase + shift)
    joints = forward_kinematics(angles, _BONE_LENGTHS * len_jit)
    if yaw:
        root = 0.5 * (joints[:, L_HIP] + joints[:, R_HIP])
        joints = (joints - root[:, None]) @ _rot_y(yaw).T + root[:, None]
    return ActionSequence(joints=joints, label=class_id, subject_seed=int(seed))


# ----------------------------------------------------------------------------
# cameras and projection

def rotation_matrix(azimuth, elevation, roll) -> np.ndarray:
    """World->camera rotation, shape (..., 3, 3): azimuth about y, then elevation, then roll."""
    az, el, ro = (np.asarray(v, dtype=np.float64) for v in (azimuth, elevation, roll))
    return _rot_z(ro) @ _rot_x(el) @ _rot_y(az)


def sample_camera(rng: np.random.Generator, distance: float = 4.0, focal: float = 1.0) -> CameraPose:
    az, el, ro = sample_camera_angles(rng, 1)[0]
    return CameraPose(az, el, ro, distance, focal)


def sample_camera_angles(rng: np.random.Generator, n: int) -> np.ndarray:
    """(n, 3) array of azimuth ~ U(-180, 180), elevation and roll ~ U(-30, 30)."""
    out = np.empty((n, 3))
    out[:, 0] = rng.uniform(-180.0, 180.0, n)
    out[:, 1] = rng.uniform(-30.0, 30.0, n)
    out[:, 2] = rng.uniform(-30.0, 30.0, n)
    return out


def project(joints: np.ndarray, angles: np.ndarray, distance: float = 4.0, focal: float = 1.0,
            orthographic: bool = False) -> np.ndarray:
    """Project joints (N, 13, 3) through cameras ``angles`` (N, 3) -> (N, 13, 2).

    Rotation is about the subject's mid-hip; the camera sits ``distance`` metres
    back along its optical axis.
    """
    joints = np.asarray(joints, dtype=np.float64)
    angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), (joints.shape[0], 3))
    centre = 0.5 * (joints[:, L_HIP] + joints[:, R_HIP])
    rot = rotation_matrix(angles[:, 0], angles[:, 1], angles[:, 2])
    cam = np.einsum("nij,nkj->nki", rot, joints - centre[:, None, :])
    cam[..., 2] += distance
    if orthographic:
        return focal * cam[..., :2] / distance
    if np.any(cam[..., 2] <= 0.0):
        raise DataError("joint behind camera (Z <= 0)")
    return focal * cam[..., :2] / cam[..., 2:3]


def normalize(poses2d: np.ndarray) -> np.ndarray:
    """Move the mid-hip to the origin and scale the torso (neck to mid-hip) to 1.

    Accepts (13, 2) or (N, 13, 2).
    """
    p = np.asarray(poses2d, dtype=np.float64)
    single = p.ndim == 2
    if single:
        p = p[None]
    hip = 0.5 * (p[:, L_HIP] + p[:, R_HIP])
    neck = 0.5 * (p[:, L_SHO] + p[:, R_SHO])
    torso = np.linalg.norm(neck - hip, axis=-1)
    if np.any(torso < 1e-12):
        raise DataError("zero torso: neck coincides with mid-hip")
    out = (p - hip[:, None, :]) / torso[:, None, None]
    return out[0] if single else out


def project_and_normalize(pose: Pose3D, cam: CameraPose, orthographic: bool = False) -> Pose2D:
    uv = project(pose.joints[None], np.array([[cam.azimuth, cam.elevation, cam.roll]]),
                 cam.distance, cam.focal, orthographic)
    return Pose2D(normalize(uv[0]), pose.source)


def make_positive_pair(pose: Pose3D, cam_i: CameraPose, cam_j: CameraPose,
                       allow_same_view: bool = False) -> tuple[Pose2D, Pose2D]:
    """Two renders of one 3D pose; the pair keeps the pose's source id on both sides."""
    if cam_i == cam_j and not allow_same_view:
        raise DataError("identity-view pair requested without allow_same_view=True")
    return project_and_normalize(pose, cam_i), project_and_normalize(pose, cam_j)


# ----------------------------------------------------------------------------
# datasets

@dataclass
class DatasetConfig:
    num_classes: int = NUM_CLASSES
    seqs_per_class: int = 50
    frames: int = 30
    num_views: int = 4
    azimuths: list[float] | None = None  # default: evenly spaced starting at 0
    elevation: float = 10.0
    roll: float = 0.0
    distance: float = 4.0
    focal: float = 1.0
    train_fraction: float = 0.8
    augment: bool = True
    noise_sigma: float = 0.0
    facing_jitter: float = 0.0  # degrees of per-sequence subject yaw
    orthographic: bool = False
    seed: int = 1

    def base_azimuths(self) -> list[float]:
        if self.azimuths is not None:
            if len(self.azimuths) != self.num_views:
                raise DataError("azimuths must list one value per view")
            return [float(a) for a in self.azimuths]
        if self.num_views == 4:
            return [0.0, 90.0, 180.0, -90.0]
        return [CameraPose(360.0 * k / self.num_views, 0, 0).azimuth for k in range(self.num_views)]


@dataclass
class Split:
    train_views: list[int]
    test_views: list[int]
    train_seqs: list[int]
    test_seqs: list[int]


@dataclass
class MultiViewDataset:
    """Base-view renders for every sequence plus an optional augmented pool.

    ``poses[s, v, t]`` is the normalised 2D pose (13, 2) of sequence ``s`` seen
    from base view ``v`` at frame ``t``.  The augmented pool has one render per
    base render, each through its own random camera.
    """

    config: DatasetConfig
    sequences: list[ActionSequence]
    cameras: list[CameraPose]
    splits: dict[str, Split]
    poses: np.ndarray  # (S, V, T, 13, 2)
    aug_index: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    aug_angles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    aug_poses: np.ndarray = field(default_factory=lambda: np.zeros((0, NUM_JOINTS, 2)))

    @property
    def num_views(self) -> int:
        return len(self.cameras)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences])

    @property
    def joints3d(self) -> np.ndarray:
        return np.stack([s.joints for s in self.sequences])

    def train_test(self, split: str) -> Split:
        try:
            return self.splits[split]
        except KeyError:
            raise DataError(f"split {split!r} not registered") from None


def _sequence_seed(seed: int, class_id: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0x5E9, class_id, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_dataset(config: DatasetConfig) -> MultiViewDataset:
    if config.num_views < 2:
        raise DataError("need at least 2 views for cross-view pairs")
    if config.seqs_per_class < 2:
        raise DataError("need at least 2 sequences per class")
    sequences = []
    for c in range(config.num_classes):
        for i in range(config.seqs_per_class):
            seq = generate_action_sequence(c, _sequence_seed(config.seed, c, i), config.frames,
                                           config.num_classes, config.facing_jitter)
            seq.seq_id = len(sequences)
            sequences.append(seq)

    rng = make_rng(config.seed, 0xDA7A)
    train, test = [], []
    n_train = int(round(config.train_fraction * config.seqs_per_class))
    n_train = min(max(n_train, 1), config.seqs_per_class - 1)
    for c in range(config.num_classes):
        ids = np.arange(c * config.seqs_per_class, (c + 1) * config.seqs_per_class)
        perm = rng.permutation(ids)
        train.extend(sorted(perm[:n_train].tolist()))
        test.extend(sorted(perm[n_train:].tolist()))
    train.sort()
    test.sort()

    cams = [CameraPose(a, config.elevation, config.roll, config.distance, config.focal)
            for a in config.base_azimuths()]
    joints = np.stack([s.joints for s in sequences])  # (S, T, 13, 3)
    S, T = joints.shape[:2]
    V = len(cams)
    poses = np.empty((S, V, T, NUM_JOINTS, 2))
    flat = joints.reshape(S * T, NUM_JOINTS, 3)
    for v, cam in enumerate(cams):
        uv = project(flat, [cam.azimuth, cam.elevation, cam.roll], cam.distance, cam.focal,
                     config.orthographic)
        poses[:, v] = normalize(uv).reshape(S, T, NUM_JOINTS, 2)
    if config.noise_sigma > 0:
        poses = poses + rng.normal(0.0, config.noise_sigma, poses.shape)

    views = list(range(V))
    splits = {"fully_supervised": Split(views, views, train, test)}
    for v in range(V):
        splits[f"single_shot_{v}"] = Split([v], views, train, test)

    ds = MultiViewDataset(config, sequences, cams, splits, poses)
    if config.augment:
        # one random-camera render per base render: the even mixture
        n = S * V * T
        idx = np.stack(np.meshgrid(np.arange(S), np.arange(V), np.arange(T), indexing="ij"),
                       -1).reshape(n, 3)
        ds.aug_index = idx[:, [0, 2]].astype(np.int64)
        ds.aug_angles = sample_camera_angles(rng, n)
        uv = project(joints[ds.aug_index[:, 0], ds.aug_index[:, 1]], ds.aug_angles,
                     config.distance, config.focal, config.orthographic)
        ds.aug_poses = normalize(uv)
    return ds


# ----------------------------------------------------------------------------
# on-disk format: manifest.json + poses.bin

MAGIC = b"CVMIMDS1"
RECORD_DTYPE = np.dtype([("seq", "<u8"), ("frame", "<u4"), ("view", "<u4"),
                         ("pose", "<f8", (POSE_DIM,))])


def _records(ds: MultiViewDataset) -> np.ndarray:
    S, V, T = ds.poses.shape[:3]
    base = np.zeros(S * V * T, dtype=RECORD_DTYPE)
    s, v, t = np.meshgrid(np.arange(S), np.arange(V), np.arange(T), indexing="ij")
    base["seq"] = s.reshape(-1)
    base["frame"] = t.reshape(-1)
    base["view"] = v.reshape(-1)
    base["pose"] = ds.poses.reshape(-1, POSE_DIM)
    m = len(ds.aug_index)
    aug = np.zeros(m, dtype=RECORD_DTYPE)
    aug["seq"] = ds.aug_index[:, 0]
    aug["frame"] = ds.aug_index[:, 1]
    aug["view"] = V + np.arange(m)
    aug["pose"] = ds.aug_poses.reshape(-1, POSE_DIM)
    return np.concatenate([base, aug])


def save_dataset(ds: MultiViewDataset, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "CVMIMDS1",
        "config": asdict(ds.config),
        "sequences": [{"id": s.seq_id, "label": s.label, "seed": format(s.subject_seed, "x"),
                       "frames": len(s)} for s in ds.sequences],
        "cameras": [asdict(c) for c in ds.cameras],
        "augmented_cameras": ds.aug_angles.tolist(),
        "splits": {k: asdict(v) for k, v in ds.splits.items()},
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    rec = _records(ds)
    with open(path / "poses.bin", "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([len(rec)], dtype="<u8").tobytes())
        fh.write(rec.tobytes())


def load_dataset(path: str | os.PathLike) -> MultiViewDataset:
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    cfg = DatasetConfig(**manifest["config"])
    raw = (path / "poses.bin").read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError("poses.bin: bad magic/version header")
    count = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    if len(raw) != 16 + count * RECORD_DTYPE.itemsize:
        raise DataError("poses.bin: record count does not match file size")
    rec = np.frombuffer(raw[16:], dtype=RECORD_DTYPE)

    sequences = []
    for entry in manifest["sequences"]:
        seq = generate_action_sequence(entry["label"], int(entry["seed"], 16), entry["frames"],
                                       cfg.num_classes, cfg.facing_jitter)
        seq.seq_id = entry["id"]
        sequences.append(seq)
    cams = [CameraPose(**c) for c in manifest["cameras"]]
    S, V, T = len(sequences), len(cams), cfg.frames
    base = rec[rec["view"] < V]
    poses = np.empty((S, V, T, NUM_JOINTS, 2))
    poses[base["seq"], base["view"], base["frame"]] = base["pose"].reshape(-1, NUM_JOINTS, 2)
    aug = rec[rec["view"] >= V]
    aug = aug[np.argsort(aug["view"], kind="stable")]
    splits = {k: Split(**v) for k, v in manifest["splits"].items()}
    return MultiViewDataset(
        cfg, sequences, cams, splits, poses,
        aug_index=np.stack([aug["seq"].astype(np.int64), aug["frame"].astype(np.int64)], -1),
        aug_angles=np.asarray(manifest["augmented_cameras"], dtype=np.float64).reshape(-1, 3),
        aug_poses=aug["pose"].reshape(-1, NUM_JOINTS, 2).copy(),
    )
