"""Parameter-sharing deterministic policy network.

Every vehicle evaluates the same three-layer MLP on its own local
observation; a lane flag and a one-hot agent index break the symmetry
between the ramp vehicle and the target-lane vehicles.

    u = g * tanh(W3 lrelu(W2 lrelu(W1 o + b1) + b2) + b3)

Gradients are computed by hand (no autodiff framework) so that the whole
rollout can be differentiated in NumPy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from mpgmerge.config import NetworkConfig
from mpgmerge.dynamics import G

FORMAT = "mpgmerge.policy"
VERSION = 1
BASE_FEATURES = 9
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class StructureError(ValueError):
    """Array shapes inconsistent with the network layout."""


@dataclass
class Observation:
    """Raw (unnormalized) local observation of one vehicle.

    ``dist_to_conflict`` is signed, ``x_i - x_c``: negative before the
    conflict point.  Relative speeds are ``v_neighbor - v_i``.
    """

    dist_to_conflict: float
    speed: float
    leader_dist: float
    leader_rel_speed: float
    leader_flag: int
    follower_dist: float
    follower_rel_speed: float
    follower_flag: int
    lane_flag: int
    agent_onehot: np.ndarray

    def to_vector(self, net: NetworkConfig = NetworkConfig()) -> np.ndarray:
        ps, vs = net.position_scale, net.speed_scale
        head = [self.dist_to_conflict / ps, self.speed / vs,
                self.leader_dist / ps, self.leader_rel_speed / vs, float(self.leader_flag),
                self.follower_dist / ps, self.follower_rel_speed / vs, float(self.follower_flag),
                float(self.lane_flag)]
        return np.concatenate([np.array(head), np.asarray(self.agent_onehot, dtype=float)])


def build_observation(x, v, lanes, i: int, x_c: float, net: NetworkConfig = NetworkConfig(),
                      ramp_sees_target: bool = True) -> Observation:
    """Observation of vehicle ``i`` from the global longitudinal state.

    The leader/follower are the nearest vehicles ahead/behind in ``i``'s own
    lane; a ramp vehicle also sees the target lane, which it must merge into.
    Missing neighbors get flag 0, distance ``d_max`` and zero relative speed.
    """
    from mpgmerge import kernels

    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    lanes = np.asarray(lanes, dtype=np.int64)
    lead, foll = kernels.neighbors(x[None], lanes[None], ramp_sees_target)
    li, fi = int(lead[0, i]), int(foll[0, i])
    onehot = np.zeros(len(x))
    onehot[i] = 1.0
    return Observation(
        dist_to_conflict=float(x[i] - x_c), speed=float(v[i]),
        leader_dist=float(x[li] - x[i]) if li >= 0 else net.d_max,
        leader_rel_speed=float(v[li] - v[i]) if li >= 0 else 0.0,
        leader_flag=int(li >= 0),
        follower_dist=float(x[i] - x[fi]) if fi >= 0 else net.d_max,
        follower_rel_speed=float(v[fi] - v[i]) if fi >= 0 else 0.0,
        follower_flag=int(fi >= 0),
        lane_flag=int(lanes[i]), agent_onehot=onehot)


def observation_batch(x, v, lane, leader, follower, x_c: float, net: NetworkConfig) -> np.ndarray:
    """Normalized observations for every vehicle, shape ``(B, N, 9 + N)``."""
    B, N = x.shape
    rows = np.arange(B)[:, None]
    has_l, has_f = leader >= 0, follower >= 0
    li, fi = np.where(has_l, leader, 0), np.where(has_f, follower, 0)
    ps, vs = net.position_scale, net.speed_scale
    obs = np.empty((B, N, BASE_FEATURES + N))
    obs[..., 0] = (x - x_c) / ps
    obs[..., 1] = v / vs
    obs[..., 2] = np.where(has_l, x[rows, li] - x, net.d_max) / ps
    obs[..., 3] = np.where(has_l, v[rows, li] - v, 0.0) / vs
    obs[..., 4] = has_l
    obs[..., 5] = np.where(has_f, x - x[rows, fi], net.d_max) / ps
    obs[..., 6] = np.where(has_f, v[rows, fi] - v, 0.0) / vs
    obs[..., 7] = has_f
    obs[..., 8] = lane
    obs[..., 9:] = np.eye(N)[None]
    return obs


def observation_vjp(g_obs, leader, follower, net: NetworkConfig):
    """Pull an observation cotangent back to ``(dL/dx, dL/dv)``.

    Neighbor identities and flags are piecewise constant and contribute no
    gradient.
    """
    B, N = leader.shape
    ps, vs = net.position_scale, net.speed_scale
    has_l, has_f = leader >= 0, follower >= 0
    gx = g_obs[..., 0] / ps
    gv = g_obs[..., 1] / vs
    gl_x = np.where(has_l, g_obs[..., 2], 0.0) / ps
    gl_v = np.where(has_l, g_obs[..., 3], 0.0) / vs
    gf_x = np.where(has_f, g_obs[..., 5], 0.0) / ps
    gf_v = np.where(has_f, g_obs[..., 6], 0.0) / vs
    gx = gx - gl_x + gf_x
    gv = gv - gl_v - gf_v
    rows = np.broadcast_to(np.arange(B)[:, None], (B, N))
    np.add.at(gx, (rows[has_l], leader[has_l]), gl_x[has_l])
    np.add.at(gv, (rows[has_l], leader[has_l]), gl_v[has_l])
    np.add.at(gx, (rows[has_f], follower[has_f]), -gf_x[has_f])
    np.add.at(gv, (rows[has_f], follower[has_f]), gf_v[has_f])
    return gx, gv


@dataclass
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    negative_slope: float = 0.01
    action_bound: float = G

    def __post_init__(self):
        h1, d = np.shape(self.W1)
        h2 = np.shape(self.W2)[0]
        expected = {"W1": (h1, d), "b1": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (1, h2), "b3": (1,)}
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise StructureError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise StructureError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_agents(self) -> int:
        return self.input_dim - BASE_FEATURES

    @classmethod
    def init(cls, n_agents: int, net: NetworkConfig, rng: np.random.Generator) -> "PolicyParams":
        """He-style normal init; the output layer starts small so initial actions are gentle."""
        d = BASE_FEATURES + n_agents
        h1, h2 = net.hidden
        s = net.init_scale
        return cls(W1=rng.normal(0, s * np.sqrt(2.0 / d), (h1, d)), b1=np.zeros(h1),
                   W2=rng.normal(0, s * np.sqrt(2.0 / h1), (h2, h1)), b2=np.zeros(h2),
                   W3=rng.normal(0, 0.1 * s * np.sqrt(1.0 / h2), (1, h2)), b3=np.zeros(1),
                   negative_slope=net.negative_slope, action_bound=net.action_bound)

    @classmethod
    def zeros(cls, n_agents: int, net: NetworkConfig = NetworkConfig()) -> "PolicyParams":
        d = BASE_FEATURES + n_agents
        h1, h2 = net.hidden
        return cls(np.zeros((h1, d)), np.zeros(h1), np.zeros((h2, h1)), np.zeros(h2),
                   np.zeros((1, h2)), np.zeros(1), net.negative_slope, net.action_bound)

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])

    def with_flat(self, theta: np.ndarray) -> "PolicyParams":
        theta = np.asarray(theta, dtype=float)
        expected = sum(getattr(self, k).size for k in PARAM_NAMES)
        if theta.shape != (expected,):
            raise StructureError(f"flat vector has shape {theta.shape}, expected ({expected},)")
        parts, pos = {}, 0
        for k in PARAM_NAMES:
            shape = getattr(self, k).shape
            size = int(np.prod(shape))
            parts[k] = theta[pos:pos + size].reshape(shape)
            pos += size
        return PolicyParams(**parts, negative_slope=self.negative_slope, action_bound=self.action_bound)

    def copy(self) -> "PolicyParams":
        return self.with_flat(self.flat().copy())


def _lrelu(z, slope):
    return np.where(z > 0, z, slope * z)


def forward(params: PolicyParams, obs: np.ndarray, return_cache: bool = False):
    """Acceleration for one observation ``(D,)`` or a stack ``(..., D)``."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != params.input_dim:
        raise StructureError(f"observation has {obs.shape[-1]} features, network expects {params.input_dim}")
    z1 = obs @ params.W1.T + params.b1
    h1 = _lrelu(z1, params.negative_slope)
    z2 = h1 @ params.W2.T + params.b2
    h2 = _lrelu(z2, params.negative_slope)
    t = np.tanh(h2 @ params.W3.T + params.b3)[..., 0]
    u = params.action_bound * t
    if return_cache:
        return u, (obs, z1, h1, z2, h2, t)
    return u


def backward(params: PolicyParams, cache, upstream) -> tuple[dict, np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream * u)``.

    Returns a dict of parameter gradients (same keys as the parameters) and
    the gradient with respect to the observation stack.
    """
    obs, z1, h1, z2, h2, t = cache
    a = params.negative_slope
    gt = np.asarray(upstream, dtype=float) * params.action_bound * (1.0 - t * t)
    lead = obs.shape[:-1]
    o2 = obs.reshape(-1, obs.shape[-1])
    gz3 = gt.reshape(-1, 1)
    h2f, h1f = h2.reshape(-1, h2.shape[-1]), h1.reshape(-1, h1.shape[-1])
    gW3 = gz3.T @ h2f
    gb3 = gz3.sum(axis=0)
    gz2 = (gz3 @ params.W3) * np.where(z2.reshape(h2f.shape) > 0, 1.0, a)
    gW2 = gz2.T @ h1f
    gb2 = gz2.sum(axis=0)
    gz1 = (gz2 @ params.W2) * np.where(z1.reshape(h1f.shape) > 0, 1.0, a)
    gW1 = gz1.T @ o2
    gb1 = gz1.sum(axis=0)
    gobs = (gz1 @ params.W1).reshape(*lead, obs.shape[-1])
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2, "W3": gW3, "b3": gb3}, gobs


def flatten_grads(grads: dict) -> np.ndarray:
    return np.concatenate([np.ravel(grads[k]) for k in PARAM_NAMES])


def project_to_feasible(u, interval):
    """Clamp ``u`` into ``[lo, hi]``; also returns the straight-through mask.

    The mask is 1 where ``lo <= u <= hi`` (boundary counts as inside) and 0
    where the clamp is active, which is the derivative used in training.
    """
    lo, hi = interval
    u = np.asarray(u, dtype=float)
    inside = (u >= lo) & (u <= hi)
    out = np.minimum(np.maximum(u, lo), hi)
    if out.ndim == 0:
        return float(out), bool(inside)
    return out, inside.astype(float)


def save_params(params: PolicyParams, path, extra: Optional[dict] = None) -> None:
    """JSON file with a shape header; floats are written with full precision."""
    doc = {"format": FORMAT, "version": VERSION,
           "header": {"input_dim": params.input_dim, "hidden": [params.W1.shape[0], params.W2.shape[0]],
                      "n_agents": params.n_agents, "negative_slope": params.negative_slope,
                      "action_bound": params.action_bound,
                      "shapes": {k: list(getattr(params, k).shape) for k in PARAM_NAMES}},
           "params": {k: getattr(params, k).ravel().tolist() for k in PARAM_NAMES}}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_params(path) -> PolicyParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise StructureError(f"cannot parse parameter file {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise StructureError(f"{path} is not a {FORMAT} v{VERSION} file")
    head = doc["header"]
    arrays = {k: np.asarray(doc["params"][k], dtype=float).reshape(head["shapes"][k]) for k in PARAM_NAMES}
    return PolicyParams(**arrays, negative_slope=head["negative_slope"], action_bound=head["action_bound"])
