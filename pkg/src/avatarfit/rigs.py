"""Reference humanoid rigs used by tests, scripts and the synthetic generator.

Two 21-joint rigs share the same eye height (1.68 m):

- `humanoid`: the baseline body, also used as the synthetic user.
- `humanoid_long_legs`: identical eye height but 10% longer legs (and a
  correspondingly shorter torso), the classic proportions mismatch that makes
  a naive fixed tracker-to-joint mapping bend the avatar's knees.

All joints have identity bind rotations; T-pose arms extend along +/-X and
the body faces -Z. Feet soles (toe joints) rest exactly on the floor.
"""

from __future__ import annotations

from .skeleton import SkeletonModel, load_skeleton

EYE_HEIGHT = 1.68


def _document(hip_height: float, spine_len: float, chest_len: float,
              thigh_len: float, shank_len: float) -> dict:
    def j(name, parent, role, t):
        return {"name": name, "parent": parent, "role": role,
                "translation": list(t), "rotation": [1.0, 0.0, 0.0, 0.0]}

    joints = [
        j("hips", None, "root", (0.0, hip_height, 0.0)),
        j("spine", "hips", "spine", (0.0, spine_len, 0.0)),
        j("chest", "spine", "other", (0.0, chest_len, 0.0)),
        j("neck", "chest", "neck", (0.0, 0.22, 0.0)),
        j("head", "neck", "head", (0.0, 0.10, 0.0)),
    ]
    for side, sx in (("l", -1.0), ("r", 1.0)):
        joints += [
            j(f"clavicle_{side}", "chest", "other", (sx * 0.03, 0.18, 0.0)),
            j(f"shoulder_{side}", f"clavicle_{side}", f"shoulder_{side}", (sx * 0.15, 0.0, 0.0)),
            j(f"elbow_{side}", f"shoulder_{side}", f"elbow_{side}", (sx * 0.28, 0.0, 0.0)),
            j(f"wrist_{side}", f"elbow_{side}", f"wrist_{side}", (sx * 0.26, 0.0, 0.0)),
            j(f"hip_{side}", "hips", f"hip_{side}", (sx * 0.09, -0.06, 0.0)),
            j(f"knee_{side}", f"hip_{side}", f"knee_{side}", (0.0, -thigh_len, 0.0)),
            j(f"ankle_{side}", f"knee_{side}", f"ankle_{side}", (0.0, -shank_len, 0.0)),
            j(f"toe_{side}", f"ankle_{side}", f"toe_{side}", (0.0, -0.05, -0.12)),
        ]
    return {"eye_height": EYE_HEIGHT, "joints": joints}


def humanoid_document() -> dict:
    """Baseline rig: hips at 0.95 m, legs 0.44 + 0.40 m, ankles at 0.05 m."""
    return _document(hip_height=0.95, spine_len=0.12, chest_len=0.15,
                     thigh_len=0.44, shank_len=0.40)


def humanoid_long_legs_document() -> dict:
    """Same eye height, legs 10% longer; torso shortened to compensate."""
    return _document(hip_height=1.034, spine_len=0.08, chest_len=0.106,
                     thigh_len=0.484, shank_len=0.44)


def humanoid() -> SkeletonModel:
    return load_skeleton(humanoid_document())


def humanoid_long_legs() -> SkeletonModel:
    return load_skeleton(humanoid_long_legs_document())
