"""Learning pattern weights from demonstrated trajectories.

For every demo i we draw K smooth perturbations and form the feature gaps
``D_ik = Psi_ik - Psi_i*``. The weights minimise

    J(w) = sum_i log sum_k exp(-w . D_ik) + reg / 2 * |s * w|^2

which is convex in w; we minimise it over w >= 0. The L2 term keeps the minimiser finite when the demos
beat every sample (the unregularised objective then decreases without
bound); ``s`` is a per-feature scale that also preconditions the descent.

The features of different joints never interact, so scaling one joint's
(error, rate) weight pair by any c > 0 keeps every demo exactly as optimal.
Demonstrations cannot pin that per-joint scale. ``learn_weights`` therefore
reports the minimiser with each joint's error weight normalised to 1 (the
rate/error ratio is what the demos determine); ``normalize=False`` returns
the raw minimiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from aesplan.errors import DegenerateSamples, EmptyInput
from aesplan.kinematics import JointConfig
from aesplan.motion.features import features, waypoint_features
from aesplan.motion.stomp import SmoothNoise
from aesplan.motion.trajectory import PatternWeights, Trajectory


@dataclass
class IrlParams:
    noise_std: float = 0.005
    reg: float = 1e-3
    max_iters: int = 5000
    grad_tol: float = 1e-10
    # pattern features are penalties; negative weights would reward them
    nonneg: bool = True


def sample_perturbations(demo: Trajectory, n_samples, rng, noise_std):
    """``n_samples`` copies of the demo with smooth zero-endpoint noise added."""
    noise = SmoothNoise(len(demo))
    eps = noise.sample(rng, n_samples, demo.configs.shape[1], noise_std)
    return demo.configs[None] + eps


def feature_gaps(demos, samples_per_demo, rng_seed, noise_std=0.005):
    """List of (K, F) arrays Psi_ik - Psi_i*, one per demo."""
    if not demos:
        raise EmptyInput("learn_weights needs at least one demonstration")
    if samples_per_demo < 1:
        raise ValueError("samples_per_demo must be >= 1")
    rng = np.random.default_rng(rng_seed)
    gaps = []
    for demo in demos:
        end = demo.configs[-1]
        psi_star = features(demo)[1]
        samples = sample_perturbations(demo, samples_per_demo, rng, noise_std)
        psi = waypoint_features(samples, end, demo.dt).sum(axis=1)
        gaps.append(psi - psi_star)
    return gaps


def feature_scale(gaps):
    d = np.concatenate(gaps)
    rms = np.sqrt(np.mean(d ** 2, axis=0))
    if not np.any(rms > 0):
        raise DegenerateSamples("every sampled trajectory has the demo's features")
    # features the samples never change get unit scale; they stay at zero weight
    return np.where(rms > 0, rms, 1.0)


def irl_objective(w, gaps, reg=0.0, scale=None):
    """Objective value and gradient with respect to w."""
    w = np.asarray(w, dtype=float)
    scale = np.ones_like(w) if scale is None else scale
    val = 0.5 * reg * float(np.sum((scale * w) ** 2))
    grad = reg * scale ** 2 * w
    d = gaps if isinstance(gaps, np.ndarray) else np.stack(gaps)
    z = -d @ w
    val += float(np.sum(logsumexp(z, axis=1)))
    grad = grad - np.einsum("ik,ikf->f", softmax(z, axis=1), d)
    return val, grad


def _descend(fun, v0, max_iters, grad_tol, nonneg=False):
    """Projected gradient descent, Barzilai-Borwein trial steps, Armijo backtracking."""
    proj = (lambda x: np.maximum(x, 0.0)) if nonneg else (lambda x: x)
    v = proj(np.array(v0, dtype=float))
    f, g = fun(v)
    prev = None
    step = 1.0
    for _ in range(max_iters):
        if np.linalg.norm(v - proj(v - g)) < grad_tol:
            break
        if prev is not None:
            s, y = v - prev[0], g - prev[1]
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy
        accepted = False
        for _ in range(60):
            v_new = proj(v - step * g)
            d = v_new - v
            f_new, g_new = fun(v_new)
            if np.isfinite(f_new) and f_new <= f - 1e-4 / step * float(d @ d):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        prev = (v, g)
        v, f, g = v_new, f_new, g_new
    return v, f


def solve_irl(gaps, reg=1e-3, w0=None, max_iters=5000, grad_tol=1e-10, nonneg=True):
    """Minimiser of the objective (over w >= 0 when ``nonneg``) and its value."""
    scale = feature_scale(gaps)
    scaled = np.stack(gaps) / scale
    n_feat = gaps[0].shape[1]
    v0 = np.zeros(n_feat) if w0 is None else np.asarray(w0, dtype=float) * scale

    def fun(v):
        return irl_objective(v, scaled, reg)

    v, f = _descend(fun, v0, max_iters, grad_tol, nonneg)
    return v / scale, f


def normalize_per_joint(w, eps=1e-12):
    """Rescale each joint's (error, rate) pair so the error weight is 1.

    Joints whose error weight is not positive are left untouched.
    """
    w = np.array(w, dtype=float)
    n = len(w) // 2
    for j in range(n):
        if w[j] > eps:
            w[n + j] /= w[j]
            w[j] = 1.0
    return w


def learn_weights(demos, samples_per_demo=50, rng_seed=0, params: IrlParams | None = None, w0=None,
                  normalize=True):
    params = params or IrlParams()
    gaps = feature_gaps(demos, samples_per_demo, rng_seed, params.noise_std)
    if max(float(np.max(np.abs(d))) for d in gaps) == 0.0:
        raise DegenerateSamples("every sampled trajectory has the demo's features")
    w, _ = solve_irl(gaps, params.reg, w0, params.max_iters, params.grad_tol, params.nonneg)
    return PatternWeights(normalize_per_joint(w) if normalize else w)


# --- synthetic demonstrations -----------------------------------------------

def _pattern_cost_and_grad(inner, start, goal, k, w, dt):
    n_j = len(start)
    q = np.vstack([start, inner.reshape(k - 2, n_j), goal])
    diff = q - goal
    e = diff ** 2
    de = np.diff(e, axis=0) / dt
    a, b = w[:n_j], w[n_j:]
    cost = float(np.sum(e @ a) + np.sum((de ** 2) @ b))
    # d cost / d e_k
    g_e = np.tile(a, (k, 1))
    g_e[1:] += 2 * b * de / dt
    g_e[:-1] -= 2 * b * de / dt
    g_q = g_e * 2 * diff
    return cost, g_q[1:-1].ravel()


def optimal_demo(start: JointConfig, goal: JointConfig, w_star, n_waypoints=30, dt=0.1):
    """Trajectory minimising the pattern cost under ``w_star`` with fixed endpoints.

    The cost separates over joints, so each joint is solved on its own; this
    keeps weakly weighted joints converged to the same tight tolerance.
    """
    a, b = start.as_array(), goal.as_array()
    w = np.asarray(getattr(w_star, "w", w_star), dtype=float)
    n_j = len(a)
    k = n_waypoints
    q = a + np.linspace(0, 1, k)[:, None] * (b - a)
    for j in range(n_j):
        wj = np.array([w[j], w[n_j + j]])
        res = minimize(_pattern_cost_and_grad, q[1:-1, j], args=(a[j:j + 1], b[j:j + 1], k, wj, dt),
                       jac=True, method="L-BFGS-B", options={"maxiter": 20000, "ftol": 0.0, "gtol": 1e-14})
        q[1:-1, j] = res.x
    q[0], q[-1] = a, b
    return Trajectory(q, dt)
