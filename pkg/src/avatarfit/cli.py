"""Command-line front end: gen / calibrate / solve / compare over files.

Every command is a pure function of its input files and flags, so repeated
runs write byte-identical outputs. Exit codes: 0 success, 2 usage errors,
3 file parse/schema errors, 4 calibration failures (role ambiguity, posture,
walk-in misalignment).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .calibration import (
    MisalignmentError,
    calibrate_session,
    load_profile_file,
    save_profile_file,
    validate_profile,
)
from .fingers import (
    DescentConfig,
    finger_points,
    load_controller_file,
    load_hand_file,
    mirror_hand,
    pose_hand_on_controller,
    transform_capsule,
)
from .math3d import DegenerateGeometryError, quat_canonical
from .motion import SCRIPT_NAMES, builtin_script, read_script_file
from .retarget import OffsetMode, solve_session, write_pose_trace
from .session import (
    DeviceRole,
    NoiseModel,
    PostureError,
    RoleAmbiguityError,
    ScriptError,
    SessionFormatError,
    generate_synthetic_session,
    read_ground_truth,
    read_session,
    write_ground_truth,
    write_session,
)
from .skeleton import SkeletonError, load_skeleton_file, scale_uniform

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_CALIBRATION = 4


def _derived_path(base, tag: str) -> Path:
    p = Path(base)
    suffix = p.suffix or ".jsonl"
    return p.with_name(p.stem + tag + suffix)


def cmd_gen(args) -> int:
    skeleton = load_skeleton_file(args.skeleton)
    if args.script_file:
        script = read_script_file(args.script_file)
    else:
        script = builtin_script(args.script, skeleton, args.duration, args.fps, args.seed)
    noise = NoiseModel(args.noise, args.rot_noise, args.seed)
    session, truth = generate_synthetic_session(skeleton, script, noise=noise)
    write_session(session, args.out)
    gt_path = args.ground_truth or _derived_path(args.out, ".gt")
    write_ground_truth(truth, session, gt_path)
    print(f"wrote {len(session.frames)} frames to {args.out} (ground truth: {gt_path})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    skeleton = load_skeleton_file(args.skeleton)
    session = read_session(args.session)
    profile, _, warnings = calibrate_session(session, skeleton)
    diagnostics = validate_profile(profile)
    save_profile_file(profile, args.out)
    roles = {did: role.value for did, role in sorted(profile.role_map.items())}
    print(f"roles: {roles}")
    print(f"scale: {profile.scale:.6f}")
    for part, off in profile.parts.items():
        norm = sum(float(v) ** 2 for v in off.v0) ** 0.5
        print(f"offset {part}: |v0| = {norm:.4f} m")
    for w in warnings:
        print(f"warning: {w}")
    for d in diagnostics:
        print(f"diagnostic: {d}")
    print(f"wrote profile to {args.out}")
    return EXIT_OK


def _solve_hands(args, session, solved, profile, scaled):
    """Optional grip solve per frame; returns extra trace joints per frame."""
    hand = load_hand_file(args.hand_model)
    capsule_local, button_local = load_controller_file(args.controller)
    hands = {"left": hand if hand.side == "left" else mirror_hand(hand)}
    hands["right"] = mirror_hand(hands["left"])
    config = DescentConfig(eta=args.eta, penalty=args.penalty, max_iters=args.max_iters)
    controllers = {
        "left": (DeviceRole.CONTROLLER_LEFT, profile.wrist_palm_offset_left, "wrist_l"),
        "right": (DeviceRole.CONTROLLER_RIGHT, profile.wrist_palm_offset_right, "wrist_r"),
    }
    extras = []
    objectives = {"left": [], "right": []}
    for frame, sp in zip(session.frames, solved):
        if sp is None:
            extras.append([])
            continue
        entries = []
        for side, (dev_role, wrist_offset, wrist_role) in controllers.items():
            detached = (sp.diagnostics.controller_detached_left if side == "left"
                        else sp.diagnostics.controller_detached_right)
            wrist_world = sp.world[scaled.role_index(wrist_role)]
            if detached:
                # Virtual controller rides on the hand when out of reach.
                controller_world = wrist_world @ wrist_offset.inverse()
            else:
                did = profile.device_id(dev_role)
                controller_world = frame.pose_of(did)
            shape = transform_capsule(capsule_local, controller_world)
            button = None if button_local is None else controller_world.apply(button_local)
            result = pose_hand_on_controller(hands[side], wrist_world, shape, config, button)
            objectives[side].append(sum(r.objective for r in result.reports))
            for fi, finger in enumerate(hands[side].fingers):
                pts = finger_points(finger, result.params.values[fi], wrist_world)
                for ji, p in enumerate(pts, start=1):
                    entries.append({
                        "name": f"{wrist_role}/{finger.name}_{ji}",
                        "p": [float(v) for v in p],
                        "q": [float(v) for v in
                              quat_canonical(result.local_rotations[fi][ji - 1])],
                    })
        extras.append(entries)
    summary = {f"hand_mean_objective_{side[0]}":
               (sum(v) / len(v) if v else None) for side, v in objectives.items()}
    return extras, summary


def cmd_solve(args) -> int:
    skeleton = load_skeleton_file(args.skeleton)
    session = read_session(args.session)
    profile = load_profile_file(args.profile)
    scaled = scale_uniform(skeleton, profile.scale)
    truth = read_ground_truth(args.ground_truth) if args.ground_truth else None
    mode = OffsetMode(args.mode)
    solved, metrics = solve_session(session, profile, scaled, mode, truth)

    document = metrics.to_document()
    extras = None
    if args.hand_model:
        if not args.controller:
            print("error: --hand-model requires --controller", file=sys.stderr)
            return EXIT_USAGE
        extras, hand_summary = _solve_hands(args, session, solved, profile, scaled)
        document.update(hand_summary)

    write_pose_trace(args.out, session, solved, scaled, extras)
    metrics_path = args.metrics or _derived_path(args.out, ".metrics").with_suffix(".json")
    with open(metrics_path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    err = ("n/a" if metrics.mean_ankle_error is None
           else f"{metrics.mean_ankle_error:.6f} m")
    print(f"solved {metrics.solved_frames}/{metrics.frames} frames in {mode.value} mode; "
          f"mean ankle error {err}; metrics: {metrics_path}")
    return EXIT_OK


_TABLE_FIELDS = (
    ("mean_ankle_error", "ankle err mean"),
    ("max_ankle_error", "ankle err max"),
    ("mean_wrist_error", "wrist err mean"),
    ("mean_knee_flexion", "knee flex mean"),
    ("mean_knee_flexion_straight", "knee flex straight"),
    ("alpha_mean", "spine angle mean"),
    ("detached_frames_left", "detached L"),
    ("detached_frames_right", "detached R"),
)


def cmd_compare(args) -> int:
    skeleton = load_skeleton_file(args.skeleton)
    session = read_session(args.session)
    profile = load_profile_file(args.profile)
    scaled = scale_uniform(skeleton, profile.scale)
    truth = read_ground_truth(args.ground_truth) if args.ground_truth else None

    rows = {}
    for mode in (OffsetMode.EXACT, OffsetMode.FIXED):
        _, metrics = solve_session(session, profile, scaled, mode, truth)
        rows[mode.value] = metrics.to_document()

    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")

    def fmt(v):
        if v is None:
            return "n/a"
        if isinstance(v, float):
            return f"{v:.6f}"
        return str(v)

    print(f"{'metric':<22}{'exact':>16}{'fixed':>16}")
    for key, label in _TABLE_FIELDS:
        print(f"{label:<22}{fmt(rows['exact'][key]):>16}{fmt(rows['fixed'][key]):>16}")
    print(f"wrote comparison to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avatarfit",
        description="Six-device self-avatar calibration and retargeting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic session + ground truth")
    gen.add_argument("--skeleton", required=True, help="skeleton JSON (the synthetic user)")
    gen.add_argument("--script", choices=SCRIPT_NAMES, default="tpose")
    gen.add_argument("--script-file", help="JSONL joint-pose script (overrides --script)")
    gen.add_argument("--noise", type=float, default=0.0, help="position noise sigma (m)")
    gen.add_argument("--rot-noise", type=float, default=0.0, help="rotation noise sigma (rad)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--duration", type=float, default=4.0, help="seconds")
    gen.add_argument("--fps", type=float, default=30.0)
    gen.add_argument("--out", required=True, help="session JSONL path")
    gen.add_argument("--ground-truth", help="ground-truth JSONL path (default: derived)")
    gen.set_defaults(func=cmd_gen)

    cal = sub.add_parser("calibrate", help="identify roles, scale the avatar, capture offsets")
    cal.add_argument("--skeleton", required=True, help="avatar skeleton JSON")
    cal.add_argument("--session", required=True)
    cal.add_argument("--out", required=True, help="profile JSON path")
    cal.set_defaults(func=cmd_calibrate)

    slv = sub.add_parser("solve", help="solve a session into a pose trace + metrics")
    slv.add_argument("--skeleton", required=True)
    slv.add_argument("--session", required=True)
    slv.add_argument("--profile", required=True)
    slv.add_argument("--mode", choices=[m.value for m in OffsetMode], default="exact")
    slv.add_argument("--out", required=True, help="pose trace JSONL path")
    slv.add_argument("--metrics", help="metrics JSON path (default: derived)")
    slv.add_argument("--ground-truth", help="ground truth for error metrics")
    slv.add_argument("--hand-model", help="hand model JSON; poses fingers per frame")
    slv.add_argument("--controller", help="controller capsule JSON (with --hand-model)")
    slv.add_argument("--eta", type=float, default=DescentConfig().eta)
    slv.add_argument("--penalty", type=float, default=DescentConfig().penalty)
    slv.add_argument("--max-iters", type=int, default=DescentConfig().max_iters)
    slv.set_defaults(func=cmd_solve)

    cmp_ = sub.add_parser("compare", help="exact vs fixed offsets, side by side")
    cmp_.add_argument("--skeleton", required=True)
    cmp_.add_argument("--session", required=True)
    cmp_.add_argument("--profile", required=True)
    cmp_.add_argument("--out", required=True, help="comparison JSON path")
    cmp_.add_argument("--ground-truth")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RoleAmbiguityError, PostureError, MisalignmentError) as e:
        print(f"calibration error: {e}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (SessionFormatError, SkeletonError, ScriptError, DegenerateGeometryError,
            ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
