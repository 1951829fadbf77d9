"""Shipped selector network and pattern weights, and how they are rebuilt.

Both are trained on synthetic demonstrations (the heuristic expert for the
selector, exact pattern-cost minimisers for the weights), so they can be
regenerated from seeds with ``aes build-defaults``.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from aesplan.kinematics import ArmModel, JointConfig
from aesplan.motion import PatternWeights, learn_weights, optimal_demo
from aesplan.errors import NoValidTarget
from aesplan.selection import (Demonstration, SelectionConfig, SelectionNet, TrainParams, expert_target,
                               masked_observation, random_worksite, synthesize_demos, train)
from aesplan.terrain import (CellLabel, HeightMap, add_pile, label_region, scoop, window_geometry, window_indices,
                             window_labels)
from aesplan.world import WorkingZone

SELECTOR_FILE = "selector_default.json"
WEIGHTS_FILE = "pattern_weights.json"

# generating weights for the synthetic motion demos: unit error weights,
# rate weights well below one so joints move early and settle smoothly
DEMO_W_STAR = (1.0, 1.0, 1.0, 1.0, 0.3, 0.2, 0.25, 0.15)


def site_demos(n_maps=40, rounds=15, seed=0, config=None, zone=None, window_center=(3.8, 0.0)):
    """Expert demos on worksites shaped like the bundled ones, as a dig progresses.

    Each map gets a random pile (and sometimes a puddle) in front of the
    machine; after every demo the expert's cut is carved out so later demos
    see partly excavated terrain. Cells outside the working zone are masked
    in the observation and are never eligible, matching what the planner feeds
    the network.
    """
    config = config or SelectionConfig()
    zone = zone or WorkingZone(2.8, 4.6, (2.0, -2.0, 6.0, 2.0))
    w, h = config.window_w, config.window_h
    demos = []
    for i in range(n_maps):
        rng = np.random.default_rng([seed, i])
        hmap = HeightMap.flat(80, 80, config.cell_size, (-6.0, -10.0))
        c = np.array(window_center) + rng.uniform([-0.2, -0.8], [0.6, 0.8])
        add_pile(hmap, c, rng.uniform(0.6, 1.5), rng.uniform(1.2, 2.5), rng.choice(["cone", "dome", "gaussian"]))
        if rng.random() < 0.5:
            x0, y0 = rng.uniform([2.6, -1.5], [3.6, 0.5])
            label_region(hmap, (x0, y0, x0 + rng.uniform(0.3, 0.8), y0 + rng.uniform(0.5, 2.0)), CellLabel.WATER)
        out_of_zone = ~zone.cell_mask(hmap)
        _, _, wc = window_geometry(hmap, window_center, w, h)
        iy, ix = window_indices(hmap, wc, w, h)
        for _ in range(rounds):
            elev = hmap.elevation[np.ix_(iy, ix)]
            labels = window_labels(hmap, wc, w, h)
            allowed = ~out_of_zone[np.ix_(iy, ix)] & (elev - hmap.datum > 0.02)
            try:
                target = expert_target(elev, labels, hmap.cell_size, config, allowed)
            except NoValidTarget:
                break
            demos.append(Demonstration(masked_observation(hmap, wc, config, out_of_zone), target))
            poa = wc + np.array(target.poa_xy)
            radial = poa / np.linalg.norm(poa)
            tips = [poa - s * radial for s in np.linspace(0.0, target.travel_length, 12)]
            cells = {hmap.cell_of(p + o * np.array([-radial[1], radial[0]])) for p in tips
                     for o in (-0.25, 0.0, 0.25)}
            hmap, _, _ = scoop(hmap, [(cell, 0.4) for cell in cells if cell is not None], 0.25, 1.05)
    return demos


def selector_demos(n_maps=40, per_map=8, seed=0, config=None):
    """Site-shaped demos plus generic random-worksite demos for variety."""
    config = config or SelectionConfig()
    demos = site_demos(n_maps, 20, seed, config)
    for i in range(n_maps // 4):
        hmap = random_worksite([seed, 100 + i], water=True, rocks=(i % 3 == 0))
        demos.extend(synthesize_demos(hmap, per_map, [seed, 100 + i, 1], config))
    return demos


def build_selector(seed=0, epochs=3000, n_maps=100, per_map=8):
    config = SelectionConfig()
    demos = selector_demos(n_maps, per_map, seed, config)
    net = SelectionNet.init(config, seed)
    net, curve = train(net, demos, TrainParams(epochs=epochs))
    return net, curve


def motion_demos(n=8, seed=0, model=None):
    """Pattern-optimal dig-like trajectories under ``DEMO_W_STAR``."""
    model = model or ArmModel()
    rng = np.random.default_rng(seed)
    mid = 0.5 * (model.lower + model.upper)
    mid[0] = 0.0
    out = []
    for _ in range(n):
        a = mid + rng.uniform(-0.5, 0.5, 4)
        b = mid + rng.uniform(-0.5, 0.5, 4)
        out.append(optimal_demo(JointConfig.from_array(a), JointConfig.from_array(b), np.array(DEMO_W_STAR)))
    return out


def build_weights(seed=0):
    return learn_weights(motion_demos(seed=seed), samples_per_demo=50, rng_seed=seed)


def _data_path(name):
    return resources.files("aesplan").joinpath("data", name)


def default_selector() -> SelectionNet:
    ref = _data_path(SELECTOR_FILE)
    if ref.is_file():
        return SelectionNet.from_json(json.loads(ref.read_text()))
    return build_selector()[0]


def default_weights() -> PatternWeights:
    ref = _data_path(WEIGHTS_FILE)
    if ref.is_file():
        return PatternWeights.from_json(json.loads(ref.read_text()))
    return build_weights()

