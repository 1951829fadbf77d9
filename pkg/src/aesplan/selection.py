"""Learned excavation target selection.

A core MLP encodes the elevation patch into ``y``; ``theta = y @ M``; three
head MLPs read ``theta @ M`` (or ``theta``, see ``head_input``) and produce
the longitudinal/lateral point of attack and the bucket travel length. A
saturating tanh transform keeps outputs inside the window and in
``[min_travel, max_travel]``.

Targets are expressed in the window frame: offsets in metres from the
window's geometric centre, x longitudinal, y lateral.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aesplan.errors import DivergenceError, EmptyInput, NoValidTarget, ShapeError
from aesplan.terrain import (CellLabel, HeightMap, observation_window, window_geometry, window_indices,
                             window_labels)

HEADS = ("f_lon", "f_lat", "f_l")
BLOCKED = (CellLabel.WATER, CellLabel.ROCK, CellLabel.IMPURITY)


@dataclass
class SelectionConfig:
    window_w: int = 16
    window_h: int = 16
    cell_size: float = 0.25
    min_travel: float = 0.25
    max_travel: float = 2.0
    core_hidden: tuple = (64, 64)
    m_dim: int = 16
    head_hidden: tuple = (32,)
    head_input: str = "thetaM"

    def __post_init__(self):
        self.core_hidden = tuple(self.core_hidden)
        self.head_hidden = tuple(self.head_hidden)
        if self.head_input not in ("theta", "thetaM"):
            raise ValueError("head_input must be 'theta' or 'thetaM'")
        if not 0 < self.min_travel < self.max_travel:
            raise ValueError("need 0 < min_travel < max_travel")

    @property
    def n_inputs(self):
        return self.window_w * self.window_h

    @property
    def half_extent(self):
        return 0.5 * self.window_w * self.cell_size, 0.5 * self.window_h * self.cell_size


@dataclass(frozen=True)
class ExcavationTarget:
    poa_xy: tuple
    travel_length: float

    def to_json(self):
        return {"poa_xy": [float(v) for v in self.poa_xy], "travel_length": float(self.travel_length)}

    @classmethod
    def from_json(cls, d):
        return cls(tuple(float(v) for v in d["poa_xy"]), float(d["travel_length"]))


@dataclass
class Demonstration:
    observation: np.ndarray
    target: ExcavationTarget

    def to_json(self):
        return {"observation": np.asarray(self.observation).tolist(), "target": self.target.to_json()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["observation"], dtype=float), ExcavationTarget.from_json(d["target"]))


@dataclass
class MLP:
    """tanh hidden layers, linear output. ``weights[k]`` is (out, in)."""

    weights: list
    biases: list

    @classmethod
    def init(cls, sizes, rng):
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_out, n_in)))
            bs.append(np.zeros(n_out))
        return cls(ws, bs)

    @property
    def n_in(self):
        return self.weights[0].shape[1]

    @property
    def n_out(self):
        return self.weights[-1].shape[0]

    def forward(self, x):
        acts = [x]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            acts.append(np.tanh(z) if k < len(self.weights) - 1 else z)
        return acts

    def backward(self, acts, grad_out):
        """Parameter grads and input grad given cached activations."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            gw[k] = g.T @ acts[k]
            gb[k] = g.sum(axis=0)
            g = g @ self.weights[k]
        return gw, gb, g

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class SelectionNet:
    config: SelectionConfig
    f_core: MLP
    M: np.ndarray
    f_lon: MLP
    f_lat: MLP
    f_l: MLP

    def __post_init__(self):
        c = self.config
        if self.f_core.n_in != c.n_inputs:
            raise ShapeError("f_core input does not match window size")
        if self.f_core.n_out != self.M.shape[0]:
            raise ShapeError("dim(y) must equal rows(M)")
        if c.head_input == "thetaM" and self.M.shape[0] != self.M.shape[1]:
            raise ShapeError("theta @ M needs a square M")
        for name in HEADS:
            head = getattr(self, name)
            if head.n_in != self.M.shape[1] or head.n_out != 1:
                raise ShapeError(f"{name} must map cols(M) inputs to one output")

    @classmethod
    def init(cls, config: SelectionConfig | None = None, seed=0):
        config = config or SelectionConfig()
        rng = np.random.default_rng(seed)
        d = config.m_dim
        core = MLP.init((config.n_inputs, *config.core_hidden, d), rng)
        m = np.eye(d) + rng.normal(0.0, 0.1 / math.sqrt(d), (d, d))
        heads = [MLP.init((d, *config.head_hidden, 1), rng) for _ in HEADS]
        return cls(config, core, m, *heads)

    def params(self):
        out = self.f_core.params() + [self.M]
        for name in HEADS:
            out += getattr(self, name).params()
        return out

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        i = 0
        for p in self.params():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ShapeError("flat parameter vector has the wrong length")

    def copy(self):
        return SelectionNet.from_json(self.to_json())

    # --- forward / backward ---
    def _transform(self, u):
        hx, hy = self.config.half_extent
        t = np.tanh(u)
        lo, hi = self.config.min_travel, self.config.max_travel
        scale = np.array([hx, hy, 0.5 * (hi - lo)])
        offset = np.array([0.0, 0.0, 0.5 * (hi + lo)])
        return offset + scale * t, scale * (1.0 - t ** 2)

    def _forward_batch(self, x):
        core_acts = self.f_core.forward(x)
        y = core_acts[-1]
        theta = y @ self.M
        g = theta @ self.M if self.config.head_input == "thetaM" else theta
        head_acts = [getattr(self, name).forward(g) for name in HEADS]
        u = np.column_stack([a[-1][:, 0] for a in head_acts])
        z, dz_du = self._transform(u)
        return z, (core_acts, y, theta, g, head_acts, dz_du)

    def predict(self, observations):
        """(N, 3) outputs (z_x, z_y, z_l) for a batch of flattened patches."""
        x = np.atleast_2d(np.asarray(observations, dtype=float))
        if x.shape[1] != self.config.n_inputs:
            raise ShapeError(f"expected {self.config.n_inputs} inputs, got {x.shape[1]}")
        return self._forward_batch(x)[0]

    def loss_and_grad(self, x, targets):
        """Mean squared error over all outputs and its gradient (flat vector)."""
        z, (core_acts, y, theta, g, head_acts, dz_du) = self._forward_batch(x)
        diff = z - targets
        loss = float(np.mean(diff ** 2))
        du = 2.0 * diff / diff.size * dz_du
        grads_heads = []
        dg = np.zeros_like(g)
        for k, name in enumerate(HEADS):
            gw, gb, gin = getattr(self, name).backward(head_acts[k], du[:, k:k + 1])
            grads_heads.append((gw, gb))
            dg += gin
        if self.config.head_input == "thetaM":
            dM = theta.T @ dg
            dtheta = dg @ self.M.T
        else:
            dM = np.zeros_like(self.M)
            dtheta = dg
        dM += y.T @ dtheta
        dy = dtheta @ self.M.T
        cw, cb, _ = self.f_core.backward(core_acts, dy)
        parts = []
        for w, b in zip(cw, cb):
            parts += [w, b]
        parts.append(dM)
        for gw, gb in grads_heads:
            for w, b in zip(gw, gb):
                parts += [w, b]
        return loss, np.concatenate([p.ravel() for p in parts])

    # --- serialization ---
    def to_json(self):
        def mlp(m):
            return [{"shape": list(w.shape), "W": w.ravel().tolist(), "b": b.tolist()}
                    for w, b in zip(m.weights, m.biases)]
        cfg = asdict(self.config)
        return {"config": cfg, "f_core": mlp(self.f_core), "M": {"shape": list(self.M.shape), "data": self.M.ravel().tolist()},
                **{name: mlp(getattr(self, name)) for name in HEADS}}

    @classmethod
    def from_json(cls, d):
        def mlp(layers):
            return MLP([np.array(l["W"], dtype=float).reshape(l["shape"]) for l in layers],
                       [np.array(l["b"], dtype=float) for l in layers])
        m = np.array(d["M"]["data"], dtype=float).reshape(d["M"]["shape"])
        return cls(SelectionConfig(**d["config"]), mlp(d["f_core"]), m, *(mlp(d[name]) for name in HEADS))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def forward(net: SelectionNet, x) -> ExcavationTarget:
    """Target for one elevation patch (any shape with the right size)."""
    x = np.asarray(x, dtype=float)
    if x.size != net.config.n_inputs:
        raise ShapeError(f"patch has {x.size} values, network expects {net.config.n_inputs}")
    z = net.predict(x.reshape(1, -1))[0]
    return ExcavationTarget((float(z[0]), float(z[1])), float(z[2]))


@dataclass
class TrainParams:
    epochs: int = 2000
    lr: float = 0.05
    armijo: float = 1e-4
    max_backtracks: int = 40
    grow: float = 1.5
    max_lr: float = 10.0


def _demo_arrays(demos, n_in):
    x = np.stack([np.asarray(d.observation, dtype=float).ravel() for d in demos])
    if x.shape[1] != n_in:
        raise ShapeError(f"demo observation has {x.shape[1]} values, network expects {n_in}")
    t = np.array([[*d.target.poa_xy, d.target.travel_length] for d in demos], dtype=float)
    return x, t


def train(net: SelectionNet, demos, hyper: TrainParams | None = None):
    """Full-batch gradient descent with Armijo backtracking.

    The trial step is the Barzilai-Borwein estimate from the previous step
    (``hyper.lr`` on the first epoch); ``lr = 0`` leaves the net untouched.

    Returns a trained copy and the per-epoch loss curve (initial loss first).
    A step is only taken when it lowers the loss, so the curve never rises.
    """
    hyper = hyper or TrainParams()
    if not demos:
        raise EmptyInput("train needs at least one demonstration")
    net = net.copy()
    x, t = _demo_arrays(demos, net.config.n_inputs)
    p = net.get_flat()
    loss, grad = net.loss_and_grad(x, t)
    if not math.isfinite(loss):
        raise DivergenceError(0)
    curve = [loss]
    lr = hyper.lr
    prev = None
    for epoch in range(1, hyper.epochs + 1):
        gg = float(grad @ grad)
        if hyper.lr <= 0 or gg == 0:
            curve.append(loss)
            continue
        step = lr
        if prev is not None:
            # Barzilai-Borwein trial step; backtracking keeps descent monotone
            s_, y_ = p - prev[0], grad - prev[1]
            sy = float(s_ @ y_)
            if sy > 0:
                step = min(float(s_ @ s_) / sy, hyper.max_lr)
        accepted = False
        for _ in range(hyper.max_backtracks):
            net.set_flat(p - step * grad)
            new_loss, new_grad = net.loss_and_grad(x, t)
            if math.isfinite(new_loss) and new_loss <= loss - hyper.armijo * step * gg:
                accepted = True
                break
            step *= 0.5
        if accepted:
            prev = (p, grad)
            p = p - step * grad
            loss, grad = new_loss, new_grad
            lr = min(step * hyper.grow, hyper.max_lr)
        else:
            net.set_flat(p)
            prev = None
            lr = max(step, 1e-12)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
        if not math.isfinite(loss):
            raise DivergenceError(epoch)
        curve.append(loss)
    net.set_flat(p)
    return net, curve


# --- synthetic demonstrations -----------------------------------------------

def blocked_mask(hmap: HeightMap):
    return np.isin(hmap.labels, [int(c) for c in BLOCKED])


def expert_target(elevation, labels, cell_size, config: SelectionConfig, allowed=None) -> ExcavationTarget:
    """Heuristic operator: attack the highest cell that is not water, rock or impurity.

    Ties go to the lowest row-major index. Travel length is half the width
    of the pile's upper half along the POA row, clipped to the travel range.
    ``allowed`` optionally restricts the eligible cells further.
    """
    elevation = np.asarray(elevation, dtype=float)
    ok = ~np.isin(labels, [int(c) for c in BLOCKED])
    if allowed is not None:
        ok &= np.asarray(allowed, dtype=bool)
    if not ok.any():
        raise NoValidTarget("no eligible cell in window")
    masked = np.where(ok, elevation, -np.inf)
    flat = int(np.argmax(masked))
    iy, ix = divmod(flat, elevation.shape[1])
    h, w = elevation.shape
    poa = ((ix + 0.5 - w / 2) * cell_size, (iy + 0.5 - h / 2) * cell_size)
    lo = elevation[ok].min()
    level = lo + 0.5 * (elevation[iy, ix] - lo)
    row = ok[iy] & (elevation[iy] >= level)
    a = b = ix
    while a > 0 and row[a - 1]:
        a -= 1
    while b < w - 1 and row[b + 1]:
        b += 1
    travel = float(np.clip(0.5 * (b - a + 1) * cell_size, config.min_travel, config.max_travel))
    return ExcavationTarget(poa, travel)


def masked_observation(hmap: HeightMap, center_xy, config: SelectionConfig, extra_mask=None):
    mask = blocked_mask(hmap)
    if extra_mask is not None:
        mask = mask | extra_mask
    return observation_window(hmap, center_xy, config.window_w, config.window_h, mask)


def synthesize_demos(hmap: HeightMap, n, rng_seed, config: SelectionConfig | None = None,
                     centers=None):
    """``n`` expert demonstrations on windows of ``hmap``.

    Window centres are drawn uniformly over the map (or taken from
    ``centers``); windows with no eligible cell are skipped. Raises
    ``NoValidTarget`` when ``n`` demos cannot be collected.
    """
    config = config or SelectionConfig(cell_size=hmap.cell_size)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    w, h = config.window_w, config.window_h
    lo = hmap.origin + np.array([w / 2, h / 2]) * hmap.cell_size
    hi = hmap.origin + np.array([hmap.width - w / 2, hmap.height - h / 2]) * hmap.cell_size
    demos = []
    attempts = 0
    while len(demos) < n:
        if centers is not None:
            if attempts >= len(centers):
                break
            c = np.asarray(centers[attempts], dtype=float)
        else:
            if attempts >= 20 * n:
                break
            c = rng.uniform(lo, np.maximum(hi, lo))
        attempts += 1
        ix0, iy0, center = window_geometry(hmap, c, w, h)
        labels = window_labels(hmap, center, w, h)
        iy, ix = window_indices(hmap, center, w, h)
        elev = hmap.elevation[np.ix_(iy, ix)]
        try:
            target = expert_target(elev, labels, hmap.cell_size, config)
        except NoValidTarget:
            continue
        demos.append(Demonstration(masked_observation(hmap, center, config), target))
    if len(demos) < n:
        raise NoValidTarget(f"only {len(demos)} of {n} windows had an eligible cell")
    return demos


def random_worksite(seed, width=48, height=48, cell_size=0.25, n_piles=3, water=True, rocks=False):
    """Random training terrain: a few piles, optionally a puddle and rocks."""
    from aesplan.geometry import Box3D
    from aesplan.terrain import add_pile, label_region, place_rock

    rng = np.random.default_rng(seed)
    hmap = HeightMap.flat(width, height, cell_size)
    ext = np.array([width, height]) * cell_size
    for _ in range(n_piles):
        add_pile(hmap, rng.uniform(0.15, 0.85, 2) * ext, rng.uniform(0.4, 1.8), rng.uniform(1.0, 3.5),
                 rng.choice(["cone", "dome", "gaussian"]))
    if water and rng.random() < 0.7:
        c = rng.uniform(0.1, 0.9, 2) * ext
        s = rng.uniform(0.5, 1.5, 2)
        label_region(hmap, (c[0] - s[0], c[1] - s[1], c[0] + s[0], c[1] + s[1]), CellLabel.WATER)
    if rocks:
        for _ in range(rng.integers(0, 3)):
            c = rng.uniform(0.2, 0.8, 2) * ext
            half = rng.uniform(0.2, 0.4, 3)
            try:
                hmap, _ = place_rock(hmap, Box3D.upright((c[0], c[1], half[2]), half))
            except ValueError:
                pass
    return hmap


def write_demos_jsonl(path, demos):
    with open(path, "w") as fh:
        for d in demos:
            fh.write(json.dumps(d.to_json()) + "\n")


def read_demos_jsonl(path):
    with open(path) as fh:
        return [Demonstration.from_json(json.loads(line)) for line in fh if line.strip()]
