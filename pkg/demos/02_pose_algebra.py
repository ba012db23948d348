"""SE(3) pose algebra: composition, round trips, trajectory alignment.

Walks a square loop from relative steps, round-trips rotations through
Euler angles and quaternions, and recovers an injected similarity with
the closed-form alignment.
"""

import numpy as np

from memvo.geometry import (euler_to_matrix, integrate_relative, make_se3,
                            matrix_to_euler, matrix_to_quat, pose_inverse,
                            quat_to_matrix, translation, umeyama_align)

# four forward-then-turn steps close a square
step = make_se3(euler_to_matrix([0.0, 0.0, np.pi / 2]), [1.0, 0.0, 0.0])
loop = integrate_relative([step] * 4)
print("square loop endpoint offset  %.2e (closes the loop)" %
      np.linalg.norm(loop[-1] - np.eye(4)))
print("corners: %s" % [np.round(translation(p), 6).tolist() for p in loop])

phi = np.array([0.3, -0.7, 1.9])
r = euler_to_matrix(phi)
print("euler round trip err         %.2e" %
      np.max(np.abs(matrix_to_euler(r) - phi)))
print("quaternion round trip err    %.2e" %
      np.max(np.abs(quat_to_matrix(matrix_to_quat(r)) - r)))
print("inverse composes to identity %.2e" %
      np.max(np.abs(pose_inverse(make_se3(r, [1, 2, 3])) @ make_se3(r, [1, 2, 3]) - np.eye(4))))

rng = np.random.default_rng(1)
pts = rng.normal(size=(20, 3))
s_true, r_true, t_true = 2.5, euler_to_matrix([0.2, 0.4, -0.6]), np.array([5.0, -3.0, 1.0])
moved = s_true * (pts @ r_true.T) + t_true
s, r_fit, t = umeyama_align(pts, moved)
print("umeyama recovers scale %.6f (true 2.5), R err %.2e, t err %.2e" %
      (s, np.max(np.abs(r_fit - r_true)), np.max(np.abs(t - t_true))))
