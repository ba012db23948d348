"""Drift metrics: per-length translation drift and timestamp-paired RMSE.

A straight line rendered 1 % too long reads back as exactly 1 %
translation drift; a vertical drift injected on an out-and-back circle
is recovered as meters-per-second RMSE after similarity alignment.
"""

import numpy as np

from memvo.evaluation import Trajectory, kitti_drift, tum_rmse_drift
from memvo.geometry import make_se3

gt = [make_se3(np.eye(3), [i * 1.0, 0, 0]) for i in range(900)]
est = [make_se3(np.eye(3), [i * 1.01, 0, 0]) for i in range(900)]
res = kitti_drift(est, gt)
print("straight line, 1%% scale error -> t_rel %.6f %%  r_rel %.6f deg/100m" %
      (res.t_rel_percent, res.r_rel_deg_per_100m))
print("per-length rows (length, t%%, r, segments):")
for row in res.per_length[:3]:
    print("  %s" % (np.round(row, 6).tolist(),))

stamps = np.arange(0.0, 60.05, 0.1)
rate = 0.05  # injected vertical drift, m/s
gt_poses, est_poses = [], []
for t in stamps:
    u = t if t <= 30.0 else 60.0 - t  # out and back: alignment cannot absorb the drift
    ang = 2.0 * np.pi * u / 30.0
    p = np.array([2000.0 * np.cos(ang), 2000.0 * np.sin(ang), 0.0])
    gt_poses.append(make_se3(np.eye(3), p))
    est_poses.append(make_se3(np.eye(3), p + [0.0, 0.0, rate * t]))
tum = tum_rmse_drift(Trajectory(stamps, est_poses), Trajectory(stamps, gt_poses))
print("circle with %.2f m/s vertical drift -> rmse %.6f m/s over %d pairs "
      "(scale %.6f)" % (rate, tum.rmse_m_per_s, tum.pairs, tum.scale))
