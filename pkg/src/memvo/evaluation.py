"""Trajectory formats, drift metrics, saliency, CSV export.

Formats:
  - KITTI pose text: one pose per line, 12 floats, the top 3x4 of the 4x4
    camera-to-world matrix in row-major order. Line i is frame i.
  - TUM pose text: "t x y z qx qy qz qw" per line, timestamps strictly
    increasing, '#' comments allowed.
  - sequence container: a directory with manifest.json plus one VOTB blob
    per frame and an optional ground-truth pose file.
Floats are written with 17 significant digits (lossless for float64);
metric CSVs use 9.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import (check_se3, make_se3, matrix_to_quat, pose_compose,
                       pose_inverse, quat_to_matrix, rotation_angle,
                       translation, umeyama_align, apply_similarity)
from .votb import read_votb, write_votb

SEQUENCE_MANIFEST = "manifest.json"
SEQUENCE_FORMAT = "memvo-sequence"
KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass
class Trajectory:
    """Timestamps (frame indices for KITTI) plus one 4x4 pose each."""

    stamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=np.float64)
        if self.stamps.ndim != 1 or len(self.stamps) != len(self.poses):
            raise ValueError("stamps and poses must align")

    def __len__(self):
        return len(self.poses)

    def positions(self):
        return np.array([p[:3, 3] for p in self.poses])


def format_kitti(poses):
    lines = []
    for pose in poses:
        pose = check_se3(pose)
        lines.append(" ".join("%.17g" % v for v in pose[:3].reshape(-1)))
    return "\n".join(lines) + "\n"


def parse_kitti(text):
    poses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 12:
            raise ValueError("line %d: expected 12 values, got %d" % (lineno, len(tokens)))
        try:
            vals = np.array([float(t) for t in tokens])
        except ValueError:
            raise ValueError("line %d: non-numeric value" % lineno) from None
        mat = vals.reshape(3, 4)
        try:
            poses.append(make_se3(mat[:, :3], mat[:, 3]))
        except ValueError as exc:
            raise ValueError("line %d: %s" % (lineno, exc)) from None
    if not poses:
        raise ValueError("no poses found")
    return Trajectory(np.arange(len(poses), dtype=np.float64), poses)


def format_tum(traj):
    lines = []
    for stamp, pose in zip(traj.stamps, traj.poses):
        pose = check_se3(pose)
        q = matrix_to_quat(pose[:3, :3])
        vals = [stamp, pose[0, 3], pose[1, 3], pose[2, 3], q[0], q[1], q[2], q[3]]
        lines.append(" ".join("%.17g" % v for v in vals))
    return "\n".join(lines) + "\n"


def parse_tum(text):
    stamps, poses = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 8:
            raise ValueError("line %d: expected 8 values, got %d" % (lineno, len(tokens)))
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise ValueError("line %d: non-numeric value" % lineno) from None
        if stamps and vals[0] <= stamps[-1]:
            raise ValueError("line %d: timestamps must be strictly increasing" % lineno)
        try:
            rot = quat_to_matrix(np.array(vals[4:8]))
        except ValueError as exc:
            raise ValueError("line %d: %s" % (lineno, exc)) from None
        stamps.append(vals[0])
        poses.append(make_se3(rot, vals[1:4]))
    if not poses:
        raise ValueError("no poses found")
    return Trajectory(np.array(stamps), poses)


def load_trajectory(path, fmt):
    with open(path) as fh:
        text = fh.read()
    try:
        return parse_kitti(text) if fmt == "kitti" else parse_tum(text)
    except ValueError as exc:
        raise ValueError("%s: %s" % (path, exc)) from None


def save_trajectory(path, traj, fmt):
    text = format_kitti(traj.poses) if fmt == "kitti" else format_tum(traj)
    with open(path, "w") as fh:
        fh.write(text)


def save_sequence(dirpath, frames, poses=None):
    """Write frames (T,C,H,W) and optional gt poses as a sequence container."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ValueError("frames must be (T,C,H,W)")
    os.makedirs(dirpath, exist_ok=True)
    names = []
    for t in range(frames.shape[0]):
        name = "frame_%04d.votb" % t
        write_votb(os.path.join(dirpath, name), frames[t])
        names.append(name)
    pose_file = None
    if poses is not None:
        if len(poses) != frames.shape[0]:
            raise ValueError("pose count %d != frame count %d" % (len(poses), frames.shape[0]))
        pose_file = "poses_gt.txt"
        with open(os.path.join(dirpath, pose_file), "w") as fh:
            fh.write(format_kitti(poses))
    manifest = {
        "format": SEQUENCE_FORMAT,
        "version": 1,
        "frame_count": int(frames.shape[0]),
        "channels": int(frames.shape[1]),
        "height": int(frames.shape[2]),
        "width": int(frames.shape[3]),
        "frames": names,
        "pose_file": pose_file,
        "pose_format": "kitti" if pose_file else None,
    }
    with open(os.path.join(dirpath, SEQUENCE_MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sequence(dirpath):
    """Read a sequence container; returns (frames, poses-or-None)."""
    mpath = os.path.join(dirpath, SEQUENCE_MANIFEST)
    if not os.path.isfile(mpath):
        raise ValueError("%s: no sequence manifest" % dirpath)
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != SEQUENCE_FORMAT:
        raise ValueError("%s: not a sequence container" % dirpath)
    shape = (manifest["channels"], manifest["height"], manifest["width"])
    frames = []
    for name in manifest["frames"]:
        arr = read_votb(os.path.join(dirpath, name))
        if arr.shape != shape:
            raise ValueError("%s: frame %s has shape %s, manifest says %s"
                             % (dirpath, name, arr.shape, shape))
        frames.append(arr)
    if len(frames) != manifest["frame_count"]:
        raise ValueError("%s: frame count mismatch" % dirpath)
    poses = None
    if manifest.get("pose_file"):
        traj = load_trajectory(os.path.join(dirpath, manifest["pose_file"]),
                               manifest.get("pose_format", "kitti"))
        if len(traj) != len(frames):
            raise ValueError("%s: pose count mismatch" % dirpath)
        poses = traj.poses
    return np.array(frames), poses


@dataclass
class DriftSegment:
    start: int
    length: float
    t_err: float  # ratio, error per meter
    r_err: float  # radians per meter
    speed: float  # meters per second


@dataclass
class KittiDriftResult:
    t_rel_percent: float
    r_rel_deg_per_100m: float
    per_length: list  # (length, t_rel_percent, r_rel_deg_per_100m, count)
    segments: list


def _aggregate(values, how):
    values = np.asarray(values)
    if how == "mean":
        return float(values.mean())
    if how == "rmse":
        return float(np.sqrt(np.mean(values * values)))
    raise ValueError("aggregate must be 'mean' or 'rmse'")


def kitti_drift(est, gt, lengths=KITTI_LENGTHS, step=1, aggregate="mean",
                frame_hz=10.0):
    """Average drift over all subsegments of the given path lengths.

    For every start frame (thinned by step) and every length L, the first
    frame at which the ground-truth path length since the start reaches L
    closes a subsegment; the pose discrepancy over it, divided by L, gives
    the translational (ratio) and rotational (rad/m) drift. Results are
    scaled to percent and deg/100m. Both trajectories must cover the same
    frames. Invariant to any rigid transform applied to both inputs.
    """
    est_poses = est.poses if isinstance(est, Trajectory) else [check_se3(p) for p in est]
    gt_poses = gt.poses if isinstance(gt, Trajectory) else [check_se3(p) for p in gt]
    if len(est_poses) != len(gt_poses):
        raise ValueError("est has %d poses, gt has %d" % (len(est_poses), len(gt_poses)))
    n = len(gt_poses)
    if n < 2:
        raise ValueError("need at least 2 poses")
    if step < 1:
        raise ValueError("step must be positive")
    gt_pos = np.array([p[:3, 3] for p in gt_poses])
    seg = np.linalg.norm(np.diff(gt_pos, axis=0), axis=1)
    dist = np.concatenate([[0.0], np.cumsum(seg)])
    segments = []
    for s in range(0, n, step):
        for length in lengths:
            e = int(np.searchsorted(dist, dist[s] + length, side="left"))
            if e >= n:
                break  # longer lengths cannot fit either
            gt_rel = pose_inverse(gt_poses[s]) @ gt_poses[e]
            est_rel = pose_inverse(est_poses[s]) @ est_poses[e]
            err = pose_inverse(gt_rel) @ est_rel
            t_err = float(np.linalg.norm(err[:3, 3])) / length
            r_err = rotation_angle(err[:3, :3]) / length
            speed = length / ((e - s) / frame_hz)
            segments.append(DriftSegment(s, length, t_err, r_err, speed))
    if not segments:
        raise ValueError("trajectory too short for any evaluation length")
    per_length = []
    for length in lengths:
        sel = [g for g in segments if g.length == length]
        if not sel:
            continue
        per_length.append((length,
                           100.0 * _aggregate([g.t_err for g in sel], aggregate),
                           _to_deg_per_100m(_aggregate([g.r_err for g in sel], aggregate)),
                           len(sel)))
    t_rel = 100.0 * _aggregate([g.t_err for g in segments], aggregate)
    r_rel = _to_deg_per_100m(_aggregate([g.r_err for g in segments], aggregate))
    return KittiDriftResult(t_rel, r_rel, per_length, segments)


def _to_deg_per_100m(rad_per_m):
    return float(np.degrees(rad_per_m) * 100.0)


@dataclass
class TumDriftResult:
    rmse_m_per_s: float
    pairs: int
    matches: int
    scale: float


def associate_stamps(a, b, tol=0.02):
    """Greedy one-to-one nearest-neighbor matching of two stamp arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cands = []
    for i, ta in enumerate(a):
        j0 = int(np.searchsorted(b, ta))
        for j in (j0 - 1, j0):
            if 0 <= j < len(b) and abs(b[j] - ta) <= tol:
                cands.append((abs(b[j] - ta), i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs

def tum_rmse_drift(est, gt, delta=1.0, tol=0.02, with_scale=True):
    """Translational drift rate in m/s, TUM style.

    est and gt are associated by timestamp (greedy nearest neighbor within
    tol seconds), est is similarity-aligned onto gt (Umeyama, with scale by
    default, which also recovers trajectory scale), and every associated
    pose is paired with the associated pose delta seconds later (same
    tolerance). The reported value is the RMSE over pairs of
    ||relative translation error|| / dt.
    """
    matches = associate_stamps(est.stamps, gt.stamps, tol)
    if len(matches) < 3:
        raise ValueError("only %d timestamp matches, need at least 3" % len(matches))
    est_m = [est.poses[i] for i, _ in matches]
    gt_m = [gt.poses[j] for _, j in matches]
    stamps = np.array([est.stamps[i] for i, _ in matches])
    est_pos = np.array([p[:3, 3] for p in est_m])
    gt_pos = np.array([p[:3, 3] for p in gt_m])
    scale, rot, trans = umeyama_align(est_pos, gt_pos, with_scale=with_scale)
    est_aligned = apply_similarity(scale, rot, trans, est_m)
    errs = []
    for a in range(len(stamps)):
        b = int(np.searchsorted(stamps, stamps[a] + delta))
        best = None
        for j in (b - 1, b):
            if a < j < len(stamps) and abs(stamps[j] - stamps[a] - delta) <= tol:
                if best is None or abs(stamps[j] - stamps[a] - delta) < abs(stamps[best] - stamps[a] - delta):
                    best = j
        if best is None:
            continue
        dt = stamps[best] - stamps[a]
        gt_rel = pose_inverse(gt_m[a]) @ gt_m[best]
        est_rel = pose_inverse(est_aligned[a]) @ est_aligned[best]
        err = pose_inverse(gt_rel) @ est_rel
        errs.append(float(np.linalg.norm(err[:3, 3])) / dt)
    if not errs:
        raise ValueError("no pose pairs %.3g s apart" % delta)
    rmse = float(np.sqrt(np.mean(np.square(errs))))
    return TumDriftResult(rmse, len(errs), len(matches), scale)


def saliency_map(model, frames, policy, target=None, which="refined",
                 detach_memory=False):
    """Per-frame input saliency for one predicted pose.

    The scalar under the gradient is the mean of the six pose components of
    the target step (frame index 1..T-1, default the last). which picks the
    refined absolute pose or the tracking relative pose. Each input frame
    yields an (H,W) map: channel-max of |d scalar / d pixel|. Frames the
    target cannot depend on give all-zero maps.
    """
    from .training import run_window

    leaves = [T.Tensor(np.asarray(f, dtype=np.float64), requires_grad=True)
              for f in frames]
    result = run_window(model, leaves, policy, detach_memory=detach_memory)
    n_steps = len(result.abs_tensors)
    if target is None:
        target = n_steps
    if not (1 <= target <= n_steps):
        raise ValueError("target must be a frame index in [1, %d]" % n_steps)
    if which == "refined":
        vec = result.abs_tensors[target - 1]
    elif which == "tracking":
        vec = result.track.rels[target - 1]
    else:
        raise ValueError("which must be 'refined' or 'tracking'")
    T.tmean(vec).backward()
    maps = []
    for leaf in leaves:
        if leaf.grad is None:
            maps.append(np.zeros(leaf.data.shape[1:]))
        else:
            maps.append(np.max(np.abs(leaf.grad), axis=0))
    return maps


def export_csv(path, header, rows):
    """Write a CSV with 9-significant-digit floats."""
    def fmt(v):
        if isinstance(v, str):
            return v
        if isinstance(v, (int, np.integer)):
            return "%d" % v
        return "%.9g" % v

    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def error_vs_length_rows(result):
    return (["length_m", "t_rel_percent", "r_rel_deg_per_100m", "segments"],
            [(int(l), t, r, c) for l, t, r, c in result.per_length])


def error_vs_speed_rows(result, bin_width=2.0):
    header = ["speed_mps", "t_rel_percent", "r_rel_deg_per_100m", "segments"]
    bins = {}
    for seg in result.segments:
        key = round(seg.speed / bin_width) * bin_width
        bins.setdefault(key, []).append(seg)
    rows = []
    for key in sorted(bins):
        sel = bins[key]
        rows.append((key,
                     100.0 * float(np.mean([g.t_err for g in sel])),
                     _to_deg_per_100m(float(np.mean([g.r_err for g in sel]))),
                     len(sel)))
    return header, rows
