"""Finger posing against a capsule-shaped controller.

Each finger blends between an authored open and closed pose: every joint j of
finger f carries a factor t_f^j in [0, 1] interpolating its local rotation
from open to closed. Posing minimizes, per finger, the summed distance of the
finger's joint points to the capsule surface, with penetration penalized:

    objective_f = sum_j |penalize(sdf(p_f^j))|,
    penalize(x) = x if x >= 0 else penalty * x.

The gradient is taken numerically (central differences) and followed with a
fixed learning rate; factors are clamped back into [0, 1] after every step.
Fingers are independent, so each descends on its own three factors. A button
target can be added for the thumb: its objective gains the distance from the
thumb tip to the button point.

Setting max_iters=1 in the config gives the per-rendered-frame single-step
mode; the default iterates to convergence per invocation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .math3d import Transform, quat_canonical, quat_from_axis_angle, quat_mul, \
    quat_normalize, quat_rotate, quat_slerp


# ---------------------------------------------------------------------------
# Capsule signed distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CapsuleShape:
    start: np.ndarray
    end: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=np.float64))
        if self.radius <= 0.0:
            raise ValueError("capsule radius must be positive")
        if float(np.linalg.norm(self.end - self.start)) <= 0.0:
            raise ValueError("capsule endpoints must be distinct")


def capsule_sdf(shape: CapsuleShape, p) -> float:
    """Signed distance from p to the capsule surface (negative inside)."""
    v1 = np.asarray(p, dtype=np.float64) - shape.start
    v2 = shape.end - shape.start
    h = float(np.dot(v1, v2)) / float(np.dot(v2, v2))
    h = min(1.0, max(0.0, h))
    return float(np.linalg.norm(v1 - v2 * h)) - shape.radius


def transform_capsule(shape: CapsuleShape, t: Transform) -> CapsuleShape:
    return CapsuleShape(t.apply(shape.start), t.apply(shape.end), shape.radius)


# ---------------------------------------------------------------------------
# Hand model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FingerJointSpec:
    open_rotation: np.ndarray   # local rotation at t = 0
    closed_rotation: np.ndarray  # local rotation at t = 1
    offset: np.ndarray           # translation to the next point, joint frame


@dataclass(frozen=True)
class Finger:
    name: str
    base_local: Transform  # knuckle placement relative to the wrist
    joints: tuple[FingerJointSpec, ...]


@dataclass(frozen=True)
class HandModel:
    side: str  # "left" or "right"
    fingers: tuple[Finger, ...]
    palm_anchor: Transform  # palm grip point relative to the wrist

    def finger_index(self, name: str) -> int:
        for i, f in enumerate(self.fingers):
            if f.name == name:
                return i
        raise KeyError(f"hand has no finger {name!r}")


@dataclass
class FingerParams:
    """Interpolation factors, one array per finger (clamped to [0, 1])."""

    values: list[np.ndarray]

    @classmethod
    def open_hand(cls, hand: HandModel) -> "FingerParams":
        return cls([np.zeros(len(f.joints)) for f in hand.fingers])

    def copy(self) -> "FingerParams":
        return FingerParams([v.copy() for v in self.values])

    def clamped(self) -> "FingerParams":
        return FingerParams([np.clip(v, 0.0, 1.0) for v in self.values])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.zeros(0)


@dataclass
class DescentConfig:
    eta: float = 0.1            # learning rate
    penalty: float = 10.0       # multiplier on negative (inside) distances
    fd_step: float = 1e-3       # finite-difference step on the factors
    max_iters: int = 200
    converge_tol: float = 1e-6  # stop when the objective changes less
    button_weight: float = 1.0  # weight of the thumb-to-button term

    def __post_init__(self):
        for name in ("eta", "penalty", "fd_step", "converge_tol", "button_weight"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


# ---------------------------------------------------------------------------
# Finger kinematics and objective
# ---------------------------------------------------------------------------

def finger_rotations(finger: Finger, t_vec) -> list[np.ndarray]:
    """Interpolated local rotation per joint (shortest-arc, extrapolates)."""
    return [
        quat_slerp(spec.open_rotation, spec.closed_rotation, float(t))
        for spec, t in zip(finger.joints, t_vec)
    ]


# The descent evaluates the finger chain thousands of times per grip, so the
# inner FK and SDF run on plain floats; numpy's per-call overhead on 3-vectors
# would dominate otherwise.

def _slerp_s(a, b, t):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    d = aw * bw + ax * bx + ay * by + az * bz
    if d < 0.0:
        bw, bx, by, bz = -bw, -bx, -by, -bz
        d = -d
    if d > 1.0 - 1e-9:
        w = aw + t * (bw - aw)
        x = ax + t * (bx - ax)
        y = ay + t * (by - ay)
        z = az + t * (bz - az)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        return w / n, x / n, y / n, z / n
    theta = math.acos(d if d < 1.0 else 1.0)
    s = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / s
    kb = math.sin(t * theta) / s
    return (ka * aw + kb * bw, ka * ax + kb * bx, ka * ay + kb * by, ka * az + kb * bz)


class _FingerChain:
    """Float-tuple snapshot of one finger for fast repeated evaluation."""

    __slots__ = ("base_rot", "base_pos", "open", "closed", "offsets", "is_thumb")

    def __init__(self, finger: Finger, wrist_world: Transform | None):
        base = finger.base_local if wrist_world is None else wrist_world @ finger.base_local
        self.base_rot = tuple(float(v) for v in base.rotation)
        self.base_pos = tuple(float(v) for v in base.translation)
        self.open = [tuple(float(v) for v in j.open_rotation) for j in finger.joints]
        self.closed = [tuple(float(v) for v in j.closed_rotation) for j in finger.joints]
        self.offsets = [tuple(float(v) for v in j.offset) for j in finger.joints]
        self.is_thumb = finger.name == "thumb"

    def points(self, t_vec):
        rw, rx, ry, rz = self.base_rot
        px, py, pz = self.base_pos
        out = []
        for open_q, closed_q, off, t in zip(self.open, self.closed, self.offsets, t_vec):
            qw, qx, qy, qz = _slerp_s(open_q, closed_q, float(t))
            rw, rx, ry, rz = (
                rw * qw - rx * qx - ry * qy - rz * qz,
                rw * qx + rx * qw + ry * qz - rz * qy,
                rw * qy - rx * qz + ry * qw + rz * qx,
                rw * qz + rx * qy - ry * qx + rz * qw,
            )
            ox, oy, oz = off
            # p += rot * offset (quaternion sandwich, expanded)
            tx = 2.0 * (ry * oz - rz * oy)
            ty = 2.0 * (rz * ox - rx * oz)
            tz = 2.0 * (rx * oy - ry * ox)
            px += ox + rw * tx + (ry * tz - rz * ty)
            py += oy + rw * ty + (rz * tx - rx * tz)
            pz += oz + rw * tz + (rx * ty - ry * tx)
            out.append((px, py, pz))
        return out


class _CapsuleEval:
    __slots__ = ("sx", "sy", "sz", "vx", "vy", "vz", "vv", "r")

    def __init__(self, shape: CapsuleShape):
        self.sx, self.sy, self.sz = (float(v) for v in shape.start)
        ex, ey, ez = (float(v) for v in shape.end)
        self.vx, self.vy, self.vz = ex - self.sx, ey - self.sy, ez - self.sz
        self.vv = self.vx * self.vx + self.vy * self.vy + self.vz * self.vz
        self.r = float(shape.radius)

    def sdf(self, p):
        ux = p[0] - self.sx
        uy = p[1] - self.sy
        uz = p[2] - self.sz
        h = (ux * self.vx + uy * self.vy + uz * self.vz) / self.vv
        if h < 0.0:
            h = 0.0
        elif h > 1.0:
            h = 1.0
        dx = ux - self.vx * h
        dy = uy - self.vy * h
        dz = uz - self.vz * h
        return math.sqrt(dx * dx + dy * dy + dz * dz) - self.r


def finger_points(finger: Finger, t_vec, wrist_world: Transform | None = None) -> list[np.ndarray]:
    """World position of each measured point: the end of every phalanx."""
    chain = _FingerChain(finger, wrist_world)
    return [np.array(p) for p in chain.points(t_vec)]


def _penalized(x: float, penalty: float) -> float:
    return abs(x) if x >= 0.0 else penalty * abs(x)


def finger_objective(
    hand: HandModel,
    finger_index: int,
    params: FingerParams,
    shape: CapsuleShape,
    penalty: float,
    wrist_world: Transform | None = None,
    button: np.ndarray | None = None,
    button_weight: float = 1.0,
) -> float:
    """Summed penalized surface distance of one finger's joint points."""
    finger = hand.fingers[finger_index]
    points = finger_points(finger, params.values[finger_index], wrist_world)
    total = sum(_penalized(capsule_sdf(shape, p), penalty) for p in points)
    if button is not None and finger.name == "thumb":
        total += button_weight * float(np.linalg.norm(points[-1] - np.asarray(button)))
    return total


@dataclass
class FingerDescent:
    name: str
    iterations: int
    objective: float
    converged: bool
    history: list[float] = field(default_factory=list)
    first_clamp_iteration: int | None = None


def descend(
    hand: HandModel,
    params: FingerParams,
    shape: CapsuleShape,
    config: DescentConfig | None = None,
    wrist_world: Transform | None = None,
    button: np.ndarray | None = None,
) -> tuple[FingerParams, list[FingerDescent]]:
    """Gradient-descend every finger's factors independently.

    Gradients are central finite differences per factor; evaluation points may
    leave [0, 1] (the interpolation extrapolates) but the updated factors are
    clamped back. Non-convergence within max_iters is reported in the
    diagnostics, never raised.
    """
    cfg = config or DescentConfig()
    out = params.copy().clamped()
    capsule = _CapsuleEval(shape)
    button_f = None if button is None else tuple(float(v) for v in np.asarray(button))
    reports = []
    for fi, finger in enumerate(hand.fingers):
        t = out.values[fi]
        n = len(t)
        chain = _FingerChain(finger, wrist_world)
        penalty = cfg.penalty
        bw = cfg.button_weight

        def objective(vec) -> float:
            total = 0.0
            points = chain.points(vec)
            for p in points:
                d = capsule.sdf(p)
                total += d if d >= 0.0 else -penalty * d
            if button_f is not None and chain.is_thumb:
                tip = points[-1]
                total += bw * math.sqrt(
                    (tip[0] - button_f[0]) ** 2
                    + (tip[1] - button_f[1]) ** 2
                    + (tip[2] - button_f[2]) ** 2
                )
            return total

        prev = objective(t)
        history = [prev]
        first_clamp = None
        iterations = 0
        converged = False
        for it in range(1, cfg.max_iters + 1):
            iterations = it
            grad = np.zeros(n)
            for k in range(n):
                plus = t.copy()
                minus = t.copy()
                plus[k] += cfg.fd_step
                minus[k] -= cfg.fd_step
                grad[k] = (objective(plus) - objective(minus)) / (2.0 * cfg.fd_step)
            raw = t - cfg.eta * grad
            t = np.clip(raw, 0.0, 1.0)
            if first_clamp is None and np.any(raw != t):
                first_clamp = it
            current = objective(t)
            history.append(current)
            if abs(prev - current) < cfg.converge_tol:
                converged = True
                break
            prev = current
        out.values[fi] = t
        reports.append(FingerDescent(finger.name, iterations, history[-1], converged,
                                     history, first_clamp))
    return out, reports


@dataclass
class HandPoseResult:
    params: FingerParams
    local_rotations: list[list[np.ndarray]]  # per finger, per joint
    joint_distances: list[list[float]]       # signed distances at convergence
    reports: list[FingerDescent]


def pose_hand_on_controller(
    hand: HandModel,
    wrist_world: Transform,
    controller: CapsuleShape,
    config: DescentConfig | None = None,
    button: np.ndarray | None = None,
) -> HandPoseResult:
    """Grip solve: descend from the open hand onto a world-frame capsule."""
    params, reports = descend(hand, FingerParams.open_hand(hand), controller,
                              config, wrist_world, button)
    rotations = [finger_rotations(f, params.values[i]) for i, f in enumerate(hand.fingers)]
    distances = []
    for i, f in enumerate(hand.fingers):
        pts = finger_points(f, params.values[i], wrist_world)
        distances.append([capsule_sdf(controller, p) for p in pts])
    return HandPoseResult(params, rotations, distances, reports)


# ---------------------------------------------------------------------------
# Default hand model and grip capsule
# ---------------------------------------------------------------------------

def _mirror_x_quat(q) -> np.ndarray:
    # Conjugation by the x-reflection: axis x kept, y/z axes and angle flip.
    return np.array([q[0], q[1], -q[2], -q[3]])


def _mirror_x_transform(t: Transform) -> Transform:
    tr = t.translation
    return Transform(_mirror_x_quat(t.rotation), np.array([-tr[0], tr[1], tr[2]]))


def mirror_hand(hand: HandModel) -> HandModel:
    fingers = []
    for f in hand.fingers:
        joints = tuple(
            FingerJointSpec(
                _mirror_x_quat(j.open_rotation),
                _mirror_x_quat(j.closed_rotation),
                np.array([-j.offset[0], j.offset[1], j.offset[2]]),
            )
            for j in f.joints
        )
        fingers.append(Finger(f.name, _mirror_x_transform(f.base_local), joints))
    return HandModel("right" if hand.side == "left" else "left",
                     tuple(fingers), _mirror_x_transform(hand.palm_anchor))


def default_hand_model(side: str = "left") -> HandModel:
    """Five-finger hand for a T-pose body: left fingers along -X, palm down.

    Segment lengths and knuckle placements approximate an adult hand; the
    closed pose curls each finger joint ~100 degrees toward the palm.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    z_axis = np.array([0.0, 0.0, 1.0])
    y_axis = np.array([0.0, 1.0, 0.0])
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    curl = quat_from_axis_angle(z_axis, math.radians(110.0))

    def finger(name, base_t, base_q, lengths, closed=curl):
        joints = tuple(
            FingerJointSpec(ident.copy(), closed.copy(), np.array([-length, 0.0, 0.0]))
            for length in lengths
        )
        return Finger(name, Transform(base_q, np.asarray(base_t)), joints)

    thumb_base_q = quat_from_axis_angle(y_axis, math.radians(-40.0))
    fingers = (
        finger("thumb", (-0.030, -0.015, -0.025), thumb_base_q, (0.035, 0.030, 0.026)),
        finger("index", (-0.090, 0.0, -0.022), ident.copy(), (0.040, 0.028, 0.024)),
        finger("middle", (-0.095, 0.0, 0.000), ident.copy(), (0.043, 0.030, 0.025)),
        finger("ring", (-0.090, 0.0, 0.022), ident.copy(), (0.040, 0.028, 0.024)),
        finger("pinky", (-0.082, 0.0, 0.042), ident.copy(), (0.032, 0.024, 0.021)),
    )
    palm_anchor = Transform(ident.copy(), np.array([-0.072, -0.038, 0.0]))
    left = HandModel("left", fingers, palm_anchor)
    return left if side == "left" else mirror_hand(left)


def default_grip_capsule(hand: HandModel) -> CapsuleShape:
    """Controller capsule at the standard grip pose, in the wrist frame."""
    center = hand.palm_anchor.translation
    axis = np.array([0.0, 0.0, 0.055])
    return CapsuleShape(center - axis, center + axis, 0.026)


# ---------------------------------------------------------------------------
# JSON formats
# ---------------------------------------------------------------------------
# Hand model:
#   {"side": "left", "palm_anchor": {"rotation": [...], "translation": [...]},
#    "fingers": [{"name": str, "base": {...},
#                 "joints": [{"open": [wxyz], "closed": [wxyz],
#                             "offset": [xyz]}]}]}
# Controller: {"s": [xyz], "e": [xyz], "r": meters, "button": [xyz] optional}

def _transform_to_obj(t: Transform) -> dict:
    return {"rotation": [float(v) for v in quat_canonical(t.rotation)],
            "translation": [float(v) for v in t.translation]}


def _transform_from_obj(obj: dict) -> Transform:
    return Transform(quat_normalize(np.asarray(obj["rotation"], dtype=np.float64)),
                     np.asarray(obj["translation"], dtype=np.float64))


def hand_to_document(hand: HandModel) -> dict:
    return {
        "side": hand.side,
        "palm_anchor": _transform_to_obj(hand.palm_anchor),
        "fingers": [
            {
                "name": f.name,
                "base": _transform_to_obj(f.base_local),
                "joints": [
                    {
                        "open": [float(v) for v in quat_canonical(j.open_rotation)],
                        "closed": [float(v) for v in quat_canonical(j.closed_rotation)],
                        "offset": [float(v) for v in j.offset],
                    }
                    for j in f.joints
                ],
            }
            for f in hand.fingers
        ],
    }


def hand_from_document(document: dict) -> HandModel:
    try:
        fingers = tuple(
            Finger(
                f["name"],
                _transform_from_obj(f["base"]),
                tuple(
                    FingerJointSpec(
                        quat_normalize(np.asarray(j["open"], dtype=np.float64)),
                        quat_normalize(np.asarray(j["closed"], dtype=np.float64)),
                        np.asarray(j["offset"], dtype=np.float64),
                    )
                    for j in f["joints"]
                ),
            )
            for f in document["fingers"]
        )
        return HandModel(document["side"], fingers,
                         _transform_from_obj(document["palm_anchor"]))
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed hand model ({e})") from e


def load_hand_file(path) -> HandModel:
    with open(path, "r", encoding="utf-8") as f:
        return hand_from_document(json.load(f))


def save_hand_file(hand: HandModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(hand_to_document(hand), f, indent=2)
        f.write("\n")


def load_controller_file(path) -> tuple[CapsuleShape, np.ndarray | None]:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    try:
        shape = CapsuleShape(
            np.asarray(obj["s"], dtype=np.float64),
            np.asarray(obj["e"], dtype=np.float64),
            float(obj["r"]),
        )
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed controller descriptor ({e})") from e
    button = None
    if obj.get("button") is not None:
        button = np.asarray(obj["button"], dtype=np.float64)
    return shape, button


def save_controller_file(shape: CapsuleShape, path, button=None) -> None:
    obj = {
        "s": [float(v) for v in shape.start],
        "e": [float(v) for v in shape.end],
        "r": shape.radius,
    }
    if button is not None:
        obj["button"] = [float(v) for v in np.asarray(button)]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")
