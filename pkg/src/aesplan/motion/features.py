"""Pattern features of a trajectory relative to its end configuration.

Per waypoint k and joint j the features are the squared error
``e_kj = (q_k[j] - q_end[j])**2`` and its squared rate of change
``((e_kj - e_(k-1)j) / dt)**2`` (zero at k = 0). The rate is squared because
the plain first difference telescopes to a constant once summed over a
trajectory with fixed endpoints.
"""

from __future__ import annotations

import numpy as np

from aesplan.kinematics import JointConfig


def waypoint_features(configs, q_end, dt):
    """(..., K, 2J) features for one or a batch of (..., K, J) config arrays."""
    q = np.asarray(configs, dtype=float)
    err = (q - np.asarray(q_end, dtype=float)) ** 2
    rate = np.zeros_like(err)
    rate[..., 1:, :] = (np.diff(err, axis=-2) / dt) ** 2
    return np.concatenate([err, rate], axis=-1)


def features(traj, q_end: JointConfig | None = None):
    """Per-waypoint features and their sum Psi(traj)."""
    end = traj.configs[-1] if q_end is None else q_end.as_array()
    per = waypoint_features(traj.configs, end, traj.dt)
    return per, per.sum(axis=0)


def pattern_cost(weights, traj, q_end=None):
    """C(traj) = w . Psi(traj)."""
    return float(np.asarray(getattr(weights, "w", weights)) @ features(traj, q_end)[1])
