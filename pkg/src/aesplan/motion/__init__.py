"""Excavation motion generation: pattern features, weight learning and STOMP."""

from aesplan.motion.features import features, pattern_cost, waypoint_features
from aesplan.motion.irl import IrlParams, irl_objective, learn_weights, optimal_demo, solve_irl
from aesplan.motion.stomp import (SmoothNoise, StompParams, StompResult, collision_cost, dense_collision_check,
                                  stomp_optimize, stomp_plan)
from aesplan.motion.trajectory import PatternWeights, Trajectory, load_demo_dir

__all__ = [
    "IrlParams", "PatternWeights", "SmoothNoise", "StompParams", "StompResult", "Trajectory",
    "collision_cost", "dense_collision_check", "features", "irl_objective", "learn_weights",
    "load_demo_dir", "optimal_demo", "pattern_cost", "solve_irl", "stomp_optimize", "stomp_plan",
    "waypoint_features",
]
