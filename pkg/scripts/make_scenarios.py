"""Write the eight bundled scenario files (one per row of the task-flag matrix)."""

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "aesplan" / "data" / "scenarios"

ROWS = [
    # name, terrain manipulation, obstacle avoidance, water
    ("Material loading and dumping", False, False, False),
    ("Terrain manipulation", True, False, False),
    ("Obstacle avoidance", False, True, False),
    ("Loading with rain", False, False, True),
    ("Terrain manipulation and obstacle avoidance", True, True, False),
    ("Terrain manipulation with rain", True, False, True),
    ("Obstacle avoidance with rain", False, True, True),
    ("Full stack scenario", True, True, True),
]

PYLON = {"center": [3.8 * math.cos(math.pi / 4), 3.8 * math.sin(math.pi / 4), 1.25],
         "half_extents": [0.3, 0.3, 1.25], "yaw": math.pi / 4}
ROCK = {"center": [3.4, -0.9], "half_extents": [0.3, 0.25, 0.25]}
LATE_ROCK = {"center": [3.6, 0.9], "half_extents": [0.25, 0.25, 0.2], "appear_at": 240.0}
PUDDLE = [3.0, -1.2, 3.45, 1.2]


def scenario(i, name, tm, oa, water):
    doc = {
        "name": name,
        "flags": {"terrain_manipulation": tm, "obstacle_avoidance": oa, "water": water},
        "seed": 1000 + i,
        "cycles": 10,
        "max_hours": 36.0,
        "grid": {"width": 80, "height": 80, "cell_size": 0.25, "origin": [-6.0, -10.0]},
        "piles": [{"center": [3.8, 0.0], "peak": 1.2, "radius": 1.8, "shape": "dome"}],
        "zone": {"r_min": 2.8, "r_max": 4.6, "rect": [2.0, -2.0, 6.0, 2.0]},
        "window_center": [3.8, 0.0],
        "truck": {"pose": [0.0, 3.6, math.pi / 2], "bed_dims": [3.0, 2.0, 0.8], "bed_height": 0.8,
                  "capacity": 6.0, "swap_time": 30.0},
        "noise": {"miss_rate": 0.0, "fp_rate": 0.0, "sigma_pos": 0.02, "sigma_ext": 0.02, "scan_sigma": 0.01,
                  "texture_sigma": 0.1},
        "feed": {"center": [3.8, 0.0], "threshold": 2.0, "volume": 4.0},
        "weather": {"rain": water},
        "water_regions": [PUDDLE] if water else [],
        "rocks": ([ROCK] + ([LATE_ROCK] if i == 8 else [])) if tm else [],
        "obstacles": [PYLON] if oa else [],
        "intruders": [[150.0, 156.0]] if i == 8 else [],
    }
    return doc


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(ROWS, 1):
        path = OUT / f"scenario{i}.json"
        path.write_text(json.dumps(scenario(i, *row), indent=2) + "\n")
        print(path)
