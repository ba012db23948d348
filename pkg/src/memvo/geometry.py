"""Rigid-motion helpers: Euler angles, quaternions, SE(3) poses, alignment.

Conventions, used everywhere in this package:
  - rotations act on column vectors, R = Rz(phi_z) @ Ry(phi_y) @ Rx(phi_x)
  - Euler angles are stored (phi_x, phi_y, phi_z) and wrapped to (-pi, pi]
  - a pose is a camera-to-world 4x4; the relative pose of frame t in the
    frame t-1 coordinates is inv(P_{t-1}) @ P_t, so absolute poses grow by
    right multiplication
  - 6-vectors order translation first: (tx, ty, tz, phi_x, phi_y, phi_z)
  - quaternions are (qx, qy, qz, qw), unit norm, qw >= 0 on output
"""

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-6


def wrap_angle(phi):
    """Wrap angles (scalar or array) into (-pi, pi].

    Values already inside the interval pass through bit-exactly.
    """
    phi = np.asarray(phi, dtype=np.float64)
    wrapped = -(np.mod(-phi + np.pi, 2.0 * np.pi) - np.pi)
    out = np.where((phi > -np.pi) & (phi <= np.pi), phi, wrapped)
    return out if out.ndim else float(out)


def euler_to_matrix(phi):
    """(phi_x, phi_y, phi_z) -> 3x3 rotation, R = Rz @ Ry @ Rx."""
    px, py, pz = [float(v) for v in phi]
    cx, sx = np.cos(px), np.sin(px)
    cy, sy = np.cos(py), np.sin(py)
    cz, sz = np.cos(pz), np.sin(pz)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _check_rotation(r, tol=_ORTHO_TOL):
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3, got %s" % (r.shape,))
    err = np.max(np.abs(r.T @ r - np.eye(3)))
    if err > tol:
        raise ValueError("matrix is not orthonormal (max deviation %.3g)" % err)
    if np.linalg.det(r) < 0.0:
        raise ValueError("matrix has negative determinant (reflection)")
    return r


def matrix_to_euler(r):
    """Inverse of euler_to_matrix; rejects non-rotations.

    At the gimbal singularity (|phi_y| = pi/2) the x and z angles are not
    separable; the representative with phi_x = 0 is returned.
    """
    r = _check_rotation(r)
    sy = -r[2, 0]
    sy = min(1.0, max(-1.0, float(sy)))
    if abs(sy) < 1.0 - 1e-9:
        phi_x = np.arctan2(r[2, 1], r[2, 2])
        phi_y = np.arcsin(sy)
        phi_z = np.arctan2(r[1, 0], r[0, 0])
    else:
        phi_x = 0.0
        phi_y = np.pi / 2.0 if sy > 0 else -np.pi / 2.0
        phi_z = np.arctan2(-r[0, 1], r[1, 1])
    return wrap_angle(np.array([phi_x, phi_y, phi_z]))


def quat_to_matrix(q):
    """(qx, qy, qz, qw) -> rotation matrix; normalizes, rejects zero norm."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError("quaternion must have shape (4,)")
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    x, y, z, w = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(r):
    """Rotation matrix -> (qx, qy, qz, qw), unit, qw >= 0."""
    r = _check_rotation(r)
    # branch on the largest diagonal combination for stability
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


def orthonormalize(m):
    """Nearest rotation in Frobenius norm (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def make_se3(r, t):
    """Assemble a 4x4 pose from rotation and translation."""
    out = np.eye(4)
    out[:3, :3] = _check_rotation(r)
    out[:3, 3] = np.asarray(t, dtype=np.float64).reshape(3)
    return out


def check_se3(pose, tol=_ORTHO_TOL):
    """Validate a 4x4 pose; returns it as float64."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise ValueError("pose must be 4x4, got %s" % (pose.shape,))
    if np.max(np.abs(pose[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > tol:
        raise ValueError("pose last row must be (0,0,0,1)")
    _check_rotation(pose[:3, :3], tol)
    return pose


def translation(pose):
    return np.asarray(pose, dtype=np.float64)[:3, 3].copy()


def rotation(pose):
    return np.asarray(pose, dtype=np.float64)[:3, :3].copy()


def pose_compose(a, b):
    """a @ b with the rotation block snapped back onto SO(3).

    Long products drift off the manifold in float; re-orthonormalizing every
    composition keeps integrated trajectories valid for downstream checks.
    """
    a = check_se3(a)
    b = check_se3(b)
    out = a @ b
    out[:3, :3] = orthonormalize(out[:3, :3])
    out[3] = (0.0, 0.0, 0.0, 1.0)
    return out


def pose_inverse(pose):
    pose = check_se3(pose)
    r = pose[:3, :3]
    out = np.eye(4)
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ pose[:3, 3]
    return out


def rotation_angle(r):
    """Geodesic angle of a rotation matrix, in [0, pi].

    atan2 of the skew-part norm against the trace: exactly 0 for symmetric
    input and well conditioned at both ends, unlike the arccos form whose
    derivative blows up at 0 and pi.
    """
    r = np.asarray(r, dtype=np.float64)
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    c = (np.trace(r[:3, :3]) - 1.0) / 2.0
    return float(np.arctan2(s, c))


@dataclass
class Pose6DoF:
    """Translation plus Euler rotation, the network's pose parameterization."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(3).copy()
        self.phi = wrap_angle(np.asarray(self.phi, dtype=np.float64).reshape(3))

    def to_vector(self):
        return np.concatenate([self.p, self.phi])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def to_matrix(self):
        return make_se3(euler_to_matrix(self.phi), self.p)

    @classmethod
    def from_matrix(cls, pose):
        pose = check_se3(pose)
        return cls(pose[:3, 3], matrix_to_euler(pose[:3, :3]))


def integrate_relative(rels, origin=None):
    """Chain relative poses onto an origin.

    rels are Pose6DoF (or 4x4) of frame t expressed in frame t-1; the result
    has len(rels)+1 absolute poses, the first being the origin itself.
    """
    cur = np.eye(4) if origin is None else check_se3(origin).copy()
    out = [cur.copy()]
    for rel in rels:
        step = rel.to_matrix() if isinstance(rel, Pose6DoF) else check_se3(rel)
        cur = pose_compose(cur, step)
        out.append(cur)
    return out


def umeyama_align(src, dst, with_scale=True):
    """Least-squares similarity (s, R, t) with dst ~ s * R @ src + t.

    src and dst are (n, 3) with n >= 3; degenerate clouds (all points
    coincident) are rejected. with_scale=False forces s = 1.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("umeyama_align expects matching (n,3) arrays")
    n = src.shape[0]
    if n < 3:
        raise ValueError("umeyama_align needs at least 3 points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = float(np.mean(np.sum(xs * xs, axis=1)))
    if var_s < 1e-18:
        raise ValueError("source points are all identical")
    cov = (xd.T @ xs) / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    r = u @ s_fix @ vt
    scale = float(np.trace(np.diag(d) @ s_fix) / var_s) if with_scale else 1.0
    t = mu_d - scale * (r @ mu_s)
    return scale, r, t


def apply_similarity(scale, r, t, poses):
    """Apply (s, R, t) to a list of 4x4 poses: positions map by s*R*p + t,
    orientations by R @ R_pose. Scale deliberately leaves rotations alone."""
    out = []
    for pose in poses:
        pose = check_se3(pose)
        q = np.eye(4)
        q[:3, :3] = orthonormalize(r @ pose[:3, :3])
        q[:3, 3] = scale * (r @ pose[:3, 3]) + t
        out.append(q)
    return out
