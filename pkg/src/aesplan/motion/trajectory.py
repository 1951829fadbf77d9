"""Joint-space trajectories and pattern weights, with CSV/JSON IO."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from aesplan.errors import ShapeError
from aesplan.kinematics import JOINTS, ArmModel, JointConfig


@dataclass
class Trajectory:
    """``configs`` is (K, 4): swing, boom, stick, bucket per waypoint."""

    configs: np.ndarray
    dt: float
    endpoints_fixed: bool = True

    def __post_init__(self):
        self.configs = np.array(self.configs, dtype=float)
        if self.configs.ndim != 2 or self.configs.shape[1] != len(JOINTS):
            raise ShapeError(f"configs must be (K, {len(JOINTS)}), got {self.configs.shape}")
        if len(self.configs) < 3:
            raise ShapeError("a trajectory needs at least 3 waypoints")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self):
        return len(self.configs)

    @property
    def start(self):
        return JointConfig.from_array(self.configs[0])

    @property
    def end(self):
        return JointConfig.from_array(self.configs[-1])

    @property
    def duration(self):
        return self.dt * (len(self.configs) - 1)

    @classmethod
    def straight(cls, start: JointConfig, goal: JointConfig, n_waypoints, dt=0.1):
        s = np.linspace(0.0, 1.0, n_waypoints)[:, None]
        a, b = start.as_array(), goal.as_array()
        return cls(a + s * (b - a), dt)

    def retimed(self, model: ArmModel):
        """Same path with the smallest dt that respects the joint speed limits."""
        steps = np.abs(np.diff(self.configs, axis=0)) / model.speeds
        dt = float(steps.max()) if steps.size else 0.0
        return Trajectory(self.configs, max(dt, 1e-9), self.endpoints_fixed)

    def within_speed_limits(self, model: ArmModel, tol=1e-9):
        rates = np.abs(np.diff(self.configs, axis=0)) / self.dt
        return bool(np.all(rates <= model.speeds * (1 + tol)))

    def smoothness_cost(self):
        acc = self.configs[2:] - 2 * self.configs[1:-1] + self.configs[:-2]
        return 0.5 * float(np.sum(acc ** 2))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *JOINTS])
            for k, q in enumerate(self.configs):
                w.writerow([repr(k * self.dt), *(repr(float(v)) for v in q)])

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if [h.strip() for h in header] != ["t", *JOINTS]:
                raise ValueError(f"{path}: expected header t,{','.join(JOINTS)}")
            for row in r:
                if row:
                    rows.append([float(v) for v in row])
        a = np.array(rows)
        if len(a) < 3:
            raise ShapeError(f"{path}: need at least 3 rows")
        dt = float(np.mean(np.diff(a[:, 0])))
        return cls(a[:, 1:], dt)


@dataclass
class PatternWeights:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float).ravel()
        if not np.all(np.isfinite(self.w)):
            raise ValueError("pattern weights must be finite")

    @classmethod
    def zeros(cls, n_joints=len(JOINTS)):
        return cls(np.zeros(2 * n_joints))

    def to_json(self):
        return {"w": self.w.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["w"] if isinstance(d, dict) else d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def load_demo_dir(path):
    """All trajectory CSVs in a directory, sorted by file name."""
    files = sorted(Path(path).glob("*.csv"))
    return [Trajectory.from_csv(f) for f in files]
