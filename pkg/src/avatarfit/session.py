"""Tracker sessions: six-device frames, role identification, synthetic data.

A session is a recorded stream of frames, each holding the world poses of six
devices: one headset, two hand controllers, and three body trackers (lower
back and both feet). Sessions are files rather than live streams; the
calibration trigger press becomes `calibration_frame_index`.

Role identification fits a plane through the device positions of one T-pose
frame and classifies devices by height and lateral position on that plane.
The facing direction is recovered from the plane normal: the back tracker
sits behind the body plane while the feet trackers sit at or in front of it,
so forward points from the back tracker toward the feet.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .math3d import (
    UP,
    Transform,
    fit_plane,
    normalize,
    quat_angle_between,
    quat_canonical,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
)
from .motion import ScriptPose, pose_from_script
from .skeleton import SkeletonModel, bind_pose, forward_kinematics


class DeviceRole(str, Enum):
    HMD = "hmd"
    CONTROLLER_LEFT = "controller_left"
    CONTROLLER_RIGHT = "controller_right"
    TRACKER_ROOT = "tracker_root"
    TRACKER_FOOT_LEFT = "tracker_foot_left"
    TRACKER_FOOT_RIGHT = "tracker_foot_right"


ALL_ROLES = tuple(DeviceRole)

# Joint role each device drives.
ROLE_TO_JOINT = {
    DeviceRole.HMD: "head",
    DeviceRole.CONTROLLER_LEFT: "wrist_l",
    DeviceRole.CONTROLLER_RIGHT: "wrist_r",
    DeviceRole.TRACKER_ROOT: "root",
    DeviceRole.TRACKER_FOOT_LEFT: "ankle_l",
    DeviceRole.TRACKER_FOOT_RIGHT: "ankle_r",
}


class SessionFormatError(ValueError):
    """Malformed session file or frame."""


class RoleAmbiguityError(ValueError):
    """Two devices are too close on a deciding axis to classify."""


class PostureError(ValueError):
    """Device layout does not look like a T-pose facing the mirror."""


class ScriptError(ValueError):
    """Motion script violates generator preconditions."""


@dataclass
class DeviceFrame:
    timestamp: float
    devices: list[tuple[str, Transform]]  # exactly six (device_id, pose)

    def pose_of(self, device_id: str) -> Transform:
        for did, pose in self.devices:
            if did == device_id:
                return pose
        raise KeyError(f"no device {device_id!r} in frame")

    def positions(self) -> dict[str, np.ndarray]:
        return {did: pose.translation for did, pose in self.devices}


@dataclass
class Session:
    frames: list[DeviceFrame]
    role_map: dict[str, DeviceRole] | None = None
    calibration_frame_index: int | None = None

    def calibration_frame(self) -> DeviceFrame:
        if self.calibration_frame_index is None:
            raise SessionFormatError("session has no calibration frame marker")
        return self.frames[self.calibration_frame_index]


@dataclass
class GroundTruth:
    """True joint world transforms of the generating skeleton, per frame."""

    joint_names: list[str]
    joint_roles: list[str]
    frames: list[list[Transform]]
    eye_height: float

    def by_role(self, frame_index: int, role: str) -> Transform:
        return self.frames[frame_index][self.joint_roles.index(role)]


# ---------------------------------------------------------------------------
# Role identification
# ---------------------------------------------------------------------------

@dataclass
class IdentifyConfig:
    # Controllers must sit within this fraction of the headset height.
    controller_height_band: float = 0.35
    # Two candidates closer than this on a deciding axis are ambiguous.
    tie_margin: float = 0.02


def identify_roles(frame: DeviceFrame,
                   config: IdentifyConfig | None = None) -> dict[str, DeviceRole]:
    """Assign the six device roles from one T-pose frame.

    Classification: the highest device is the headset, the two lowest are
    the feet trackers, and of the remaining three the laterally extreme pair
    are the controllers, leaving the back tracker in the middle. Left/right
    follow the recovered facing direction.
    """
    cfg = config or IdentifyConfig()
    if len(frame.devices) != 6:
        raise SessionFormatError(f"expected 6 devices, got {len(frame.devices)}")
    ids = [did for did, _ in frame.devices]
    pos = {did: pose.translation for did, pose in frame.devices}

    plane = fit_plane(np.stack([pos[d] for d in ids]))
    centroid = np.stack([pos[d] for d in ids]).mean(axis=0)

    by_height = sorted(ids, key=lambda d: float(pos[d][1]), reverse=True)
    if pos[by_height[0]][1] - pos[by_height[1]][1] < cfg.tie_margin:
        raise RoleAmbiguityError(
            f"headset height is ambiguous between {by_height[0]!r} and {by_height[1]!r}"
        )
    hmd = by_height[0]

    lowest = sorted(ids, key=lambda d: float(pos[d][1]))
    if pos[lowest[2]][1] - pos[lowest[1]][1] < cfg.tie_margin:
        raise RoleAmbiguityError(
            f"foot tracker heights are ambiguous between {lowest[1]!r} and {lowest[2]!r}"
        )
    feet = lowest[:2]

    middle = [d for d in ids if d != hmd and d not in feet]

    # Lateral axis on the fitted plane; its sign is resolved after the root
    # is known, which only requires lateral *ordering*, not orientation.
    up_in_plane = normalize(UP - float(np.dot(UP, plane.normal)) * plane.normal)
    lateral_axis = np.cross(plane.normal, up_in_plane)
    lat = {d: float(np.dot(pos[d] - centroid, lateral_axis)) for d in ids}

    middle_sorted = sorted(middle, key=lambda d: lat[d])
    root = middle_sorted[1]
    controllers = [middle_sorted[0], middle_sorted[2]]
    for ctrl in controllers:
        if abs(lat[ctrl] - lat[root]) < cfg.tie_margin:
            raise RoleAmbiguityError(
                f"lateral positions of {ctrl!r} and {root!r} are ambiguous"
            )

    hmd_height = float(pos[hmd][1])
    band = cfg.controller_height_band
    for ctrl in controllers:
        h = float(pos[ctrl][1])
        if not (1.0 - band) * hmd_height <= h <= (1.0 + band) * hmd_height:
            raise PostureError(
                f"device {ctrl!r} at height {h:.2f} is outside the controller band "
                f"around the headset height {hmd_height:.2f}"
            )
    root_h = float(pos[root][1])
    feet_top = max(float(pos[d][1]) for d in feet)
    ctrl_bottom = min(float(pos[d][1]) for d in controllers)
    if not feet_top < root_h < ctrl_bottom:
        raise PostureError(
            f"back tracker height {root_h:.2f} is not between the feet and the controllers"
        )

    # Forward points from the back tracker toward the feet across the plane.
    feet_mid = 0.5 * (pos[feet[0]] + pos[feet[1]])
    forward = plane.normal if float(np.dot(feet_mid - pos[root], plane.normal)) > 0 else -plane.normal
    left_axis = normalize(np.cross(UP, forward))
    side = {d: float(np.dot(pos[d] - centroid, left_axis)) for d in ids}

    ctrl_left, ctrl_right = sorted(controllers, key=lambda d: side[d], reverse=True)
    foot_left, foot_right = sorted(feet, key=lambda d: side[d], reverse=True)
    if abs(side[ctrl_left] - side[ctrl_right]) < cfg.tie_margin:
        raise RoleAmbiguityError(
            f"left/right is ambiguous between controllers {ctrl_left!r} and {ctrl_right!r}"
        )
    if abs(side[foot_left] - side[foot_right]) < cfg.tie_margin:
        raise RoleAmbiguityError(
            f"left/right is ambiguous between feet {foot_left!r} and {foot_right!r}"
        )

    return {
        hmd: DeviceRole.HMD,
        ctrl_left: DeviceRole.CONTROLLER_LEFT,
        ctrl_right: DeviceRole.CONTROLLER_RIGHT,
        root: DeviceRole.TRACKER_ROOT,
        foot_left: DeviceRole.TRACKER_FOOT_LEFT,
        foot_right: DeviceRole.TRACKER_FOOT_RIGHT,
    }


# ---------------------------------------------------------------------------
# Synthetic sessions
# ---------------------------------------------------------------------------

@dataclass
class NoiseModel:
    """Isotropic Gaussian position noise plus small-angle rotation noise."""

    position_sigma: float = 0.0
    rotation_sigma: float = 0.0
    seed: int = 0


def default_mount_offsets() -> dict[DeviceRole, Transform]:
    """Device pose relative to its body segment joint.

    The headset sits at eye level slightly in front of the head joint; the
    controllers hang just below the palms; the back tracker is strapped
    behind the waist; the foot trackers ride on the insteps.
    """
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    return {
        DeviceRole.HMD: Transform(ident, np.array([0.0, 0.14, -0.08])),
        DeviceRole.CONTROLLER_LEFT: Transform(ident, np.array([0.0, -0.02, -0.05])),
        DeviceRole.CONTROLLER_RIGHT: Transform(ident, np.array([0.0, -0.02, -0.05])),
        DeviceRole.TRACKER_ROOT: Transform(ident, np.array([0.0, 0.0, 0.10])),
        DeviceRole.TRACKER_FOOT_LEFT: Transform(ident, np.array([0.0, 0.07, -0.04])),
        DeviceRole.TRACKER_FOOT_RIGHT: Transform(ident, np.array([0.0, 0.07, -0.04])),
    }


def rotated_mount_offsets() -> dict[DeviceRole, Transform]:
    """Mounts with deliberate non-identity rotations (straps at odd angles)."""
    mounts = default_mount_offsets()
    spins = {
        DeviceRole.CONTROLLER_LEFT: quat_from_axis_angle([0, 0, 1], math.radians(25)),
        DeviceRole.CONTROLLER_RIGHT: quat_from_axis_angle([0, 0, 1], math.radians(-25)),
        DeviceRole.TRACKER_ROOT: quat_from_axis_angle([0, 1, 0], math.pi),
        DeviceRole.TRACKER_FOOT_LEFT: quat_from_axis_angle([1, 0, 0], math.radians(30)),
        DeviceRole.TRACKER_FOOT_RIGHT: quat_from_axis_angle([1, 0, 0], math.radians(30)),
    }
    out = {}
    for role, mount in mounts.items():
        spin = spins.get(role)
        rot = mount.rotation if spin is None else quat_mul(spin, mount.rotation)
        out[role] = Transform(rot, mount.translation)
    return out


def _small_rotation(rng: np.random.Generator, sigma: float) -> np.ndarray:
    axis_angle = rng.normal(0.0, sigma, size=3)
    angle = float(np.linalg.norm(axis_angle))
    if angle < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return quat_from_axis_angle(axis_angle, angle)


def generate_synthetic_session(
    skeleton: SkeletonModel,
    script: list[ScriptPose],
    mount_offsets: dict[DeviceRole, Transform] | None = None,
    noise: NoiseModel | None = None,
) -> tuple[Session, GroundTruth]:
    """Simulate a six-device recording of `skeleton` performing `script`.

    Device poses are FK(segment) composed with the mount offset, optionally
    perturbed by the noise model. Frame 0 is the calibration frame and must
    be the bind T-pose (every scripted joint within 1 degree of bind).
    Returns the session plus the true joint transforms as ground truth.
    """
    mounts = mount_offsets or default_mount_offsets()
    noise = noise or NoiseModel()
    rng = np.random.default_rng(noise.seed)

    if not script:
        raise ScriptError("motion script is empty")
    first = pose_from_script(skeleton, script[0])
    bind = bind_pose(skeleton)
    for i in range(len(skeleton.joints)):
        delta = quat_angle_between(bind.local_rotations[i], first.local_rotations[i])
        if delta > math.radians(1.0):
            raise ScriptError(
                f"script must start in T-pose: joint {skeleton.joints[i].name!r} "
                f"is {math.degrees(delta):.2f} degrees from bind"
            )

    ids = [f"dev{i}" for i in range(6)]
    shuffled = list(ALL_ROLES)
    rng.shuffle(shuffled)
    role_map = {did: role for did, role in zip(ids, shuffled)}
    joint_for = {did: skeleton.role_index(ROLE_TO_JOINT[role]) for did, role in role_map.items()}

    frames: list[DeviceFrame] = []
    truth_frames: list[list[Transform]] = []
    for sp in script:
        world = forward_kinematics(skeleton, pose_from_script(skeleton, sp))
        truth_frames.append(world)
        devices = []
        for did in ids:
            pose = world[joint_for[did]] @ mounts[role_map[did]]
            if noise.position_sigma > 0.0:
                pose = Transform(pose.rotation,
                                 pose.translation + rng.normal(0.0, noise.position_sigma, 3))
            if noise.rotation_sigma > 0.0:
                pose = Transform(quat_mul(_small_rotation(rng, noise.rotation_sigma),
                                          pose.rotation),
                                 pose.translation)
            devices.append((did, pose))
        frames.append(DeviceFrame(sp.time, devices))

    session = Session(frames, role_map=dict(role_map), calibration_frame_index=0)
    truth = GroundTruth(
        joint_names=[j.name for j in skeleton.joints],
        joint_roles=[j.role for j in skeleton.joints],
        frames=truth_frames,
        eye_height=skeleton.eye_height_bind,
    )
    return session, truth


# ---------------------------------------------------------------------------
# Session files (JSONL)
# ---------------------------------------------------------------------------
# Optional header line: {"role_map": {...}, "calibration_frame": n}
# Frame lines: {"t": seconds, "devices": [{"id": str, "p": [x,y,z],
#                                          "q": [w,x,y,z]}, x6]}

def _pose_to_obj(pose: Transform) -> dict:
    q = quat_canonical(pose.rotation)
    return {"p": [float(v) for v in pose.translation], "q": [float(v) for v in q]}


def _pose_from_obj(obj: dict, where: str) -> Transform:
    try:
        p = np.asarray(obj["p"], dtype=np.float64)
        q = np.asarray(obj["q"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise SessionFormatError(f"{where}: malformed pose ({e})") from e
    if p.shape != (3,) or q.shape != (4,):
        raise SessionFormatError(f"{where}: pose needs p[3] and q[4]")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise SessionFormatError(f"{where}: pose is not finite")
    if abs(float(np.linalg.norm(q)) - 1.0) > 1e-6:
        raise SessionFormatError(f"{where}: rotation is not a unit quaternion")
    return Transform(quat_normalize(q), p)


def write_session(session: Session, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if session.role_map is not None or session.calibration_frame_index is not None:
            header: dict = {}
            if session.role_map is not None:
                header["role_map"] = {d: r.value for d, r in sorted(session.role_map.items())}
            if session.calibration_frame_index is not None:
                header["calibration_frame"] = session.calibration_frame_index
            f.write(json.dumps(header) + "\n")
        for frame in session.frames:
            obj = {
                "t": frame.timestamp,
                "devices": [{"id": did, **_pose_to_obj(pose)} for did, pose in frame.devices],
            }
            f.write(json.dumps(obj) + "\n")


def read_session(path) -> Session:
    frames: list[DeviceFrame] = []
    role_map = None
    calibration_frame = None
    last_t = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip("\r\n").strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SessionFormatError(f"{path}:{lineno}: invalid JSON ({e})") from e
            if "devices" not in obj:
                if lineno == 1 and ("role_map" in obj or "calibration_frame" in obj):
                    if "role_map" in obj:
                        try:
                            role_map = {d: DeviceRole(r) for d, r in obj["role_map"].items()}
                        except ValueError as e:
                            raise SessionFormatError(f"{path}:{lineno}: {e}") from e
                        if len(set(role_map.values())) != 6:
                            raise SessionFormatError(
                                f"{path}:{lineno}: role_map must cover all six roles"
                            )
                    calibration_frame = obj.get("calibration_frame")
                    continue
                raise SessionFormatError(f"{path}:{lineno}: frame line lacks 'devices'")
            devices = obj["devices"]
            if not isinstance(devices, list) or len(devices) != 6:
                raise SessionFormatError(
                    f"{path}:{lineno}: expected 6 devices, got "
                    f"{len(devices) if isinstance(devices, list) else type(devices).__name__}"
                )
            t = obj.get("t")
            if not isinstance(t, (int, float)):
                raise SessionFormatError(f"{path}:{lineno}: missing timestamp 't'")
            if last_t is not None and t <= last_t:
                raise SessionFormatError(
                    f"{path}:{lineno}: timestamps must be strictly increasing"
                )
            last_t = t
            parsed = []
            seen = set()
            for k, dev in enumerate(devices):
                did = dev.get("id")
                if not isinstance(did, str) or not did:
                    raise SessionFormatError(f"{path}:{lineno}: device {k} lacks an id")
                if did in seen:
                    raise SessionFormatError(f"{path}:{lineno}: duplicate device id {did!r}")
                seen.add(did)
                parsed.append((did, _pose_from_obj(dev, f"{path}:{lineno} device {did!r}")))
            frames.append(DeviceFrame(float(t), parsed))
    if not frames:
        raise SessionFormatError(f"{path}: session contains no frames")
    return Session(frames, role_map=role_map, calibration_frame_index=calibration_frame)


# ---------------------------------------------------------------------------
# Ground-truth files (JSONL)
# ---------------------------------------------------------------------------
# Header: {"format": 1, "joints": [...], "roles": [...], "eye_height": m}
# Frames: {"t": s, "p": [[x,y,z] x J], "q": [[w,x,y,z] x J]}

def write_ground_truth(truth: GroundTruth, session: Session, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        header = {
            "format": 1,
            "joints": truth.joint_names,
            "roles": truth.joint_roles,
            "eye_height": truth.eye_height,
        }
        f.write(json.dumps(header) + "\n")
        for frame, world in zip(session.frames, truth.frames):
            obj = {
                "t": frame.timestamp,
                "p": [[float(v) for v in w.translation] for w in world],
                "q": [[float(v) for v in quat_canonical(w.rotation)] for w in world],
            }
            f.write(json.dumps(obj) + "\n")


def read_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in (raw.strip("\r\n").strip() for raw in f) if ln]
    if not lines:
        raise SessionFormatError(f"{path}: empty ground-truth file")
    try:
        header = json.loads(lines[0])
        names = list(header["joints"])
        roles = list(header["roles"])
        eye_height = float(header["eye_height"])
        frames = []
        for ln in lines[1:]:
            obj = json.loads(ln)
            frames.append([
                Transform(np.asarray(q, dtype=np.float64), np.asarray(p, dtype=np.float64))
                for p, q in zip(obj["p"], obj["q"])
            ])
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        raise SessionFormatError(f"{path}: malformed ground truth ({e})") from e
    return GroundTruth(names, roles, frames, eye_height)
