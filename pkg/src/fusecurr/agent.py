"""Gaussian-policy REINFORCE controller for loss weights and sample difficulty."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import micrograd as mg
from .degrade import DegradationParams
from .errors import ParseError, StateError, TrajectoryError

STATE_DIM = 10
ACTION_DIM = 7
HIDDEN = (32, 32)
LOG_STD_MIN, LOG_STD_MAX = -3.0, 1.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LAYERS = ("l0", "l1", "out")


@dataclass(frozen=True)
class State:
    m_s: tuple[float, ...]
    gap: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.m_s + self.gap, dtype=np.float64)


def check_state(s) -> np.ndarray:
    arr = s.as_array() if isinstance(s, State) else np.asarray(s, dtype=np.float64)
    if arr.shape != (STATE_DIM,):
        raise StateError(f"state must have {STATE_DIM} components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StateError(f"non-finite state {arr}")
    return arr


@dataclass(frozen=True)
class Action:
    alpha_t: float
    alpha_s: float
    d: tuple[float, ...]

    def degradation(self) -> DegradationParams:
        return DegradationParams.from_knobs(self.d)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # clipping keeps every knob strictly inside (0, 1) in float64
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def squash(raw) -> Action:
    """Softmax over the two weight logits, sigmoid over the five difficulty logits."""
    raw = np.asarray(raw, dtype=np.float64)
    w = np.exp(raw[:2] - raw[:2].max())
    w /= w.sum()
    return Action(float(w[0]), float(1.0 - w[0]), tuple(float(v) for v in _sigmoid(raw[2:])))


def gaussian_log_prob(raw, mean, log_std) -> float:
    z = (np.asarray(raw) - mean) * np.exp(-log_std)
    return float(np.sum(-0.5 * z * z - log_std - _LOG_SQRT_2PI))


def init_policy(seed: int) -> mg.Params:
    rng = np.random.default_rng(seed)
    params, n_in = {}, STATE_DIM
    for name, n_out in zip(_LAYERS, HIDDEN + (2 * ACTION_DIM,)):
        std = 0.01 if name == "out" else math.sqrt(2.0 / n_in)
        params[f"{name}.w"] = rng.normal(0.0, std, (n_out, n_in))
        params[f"{name}.b"] = np.zeros(n_out)
        n_in = n_out
    return params


def _forward(params: mg.Params, states: np.ndarray):
    x, cache = states, []
    for name in _LAYERS:
        z = mg.linear_forward(x, params[f"{name}.w"], params[f"{name}.b"])
        cache.append((x, z))
        x = z if name == "out" else mg.relu_forward(z)
    mean = x[..., :ACTION_DIM]
    log_std = np.clip(x[..., ACTION_DIM:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, cache


def policy_forward(params: mg.Params, s) -> tuple[np.ndarray, np.ndarray]:
    mean, log_std, _ = _forward(params, check_state(s))
    return mean, log_std


def sample_action(mean, log_std, noise_seed: int) -> tuple[np.ndarray, Action, float]:
    """Reparameterised draw ``raw = mean + exp(log_std) * eps`` from a seeded source."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    eps = np.random.default_rng(noise_seed).standard_normal(mean.shape)
    raw = mean + np.exp(log_std) * eps
    return raw, squash(raw), gaussian_log_prob(raw, mean, log_std)


def returns_window(rewards, p: int) -> np.ndarray:
    """``R[k] = sum(rewards[k : k + p + 1])``, truncated at the end of the sequence."""
    if p < 0:
        raise ValueError(f"window p must be >= 0, got {p}")
    r = np.asarray(rewards, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(r)])
    k = np.arange(len(r))
    return c[np.minimum(k + p + 1, len(r))] - c[k]


@dataclass
class Step:
    state: np.ndarray
    raw: np.ndarray
    log_prob: float
    reward: float = 0.0


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)

    def append(self, state, raw, log_prob: float, reward: float = 0.0) -> None:
        self.steps.append(Step(np.asarray(state, float), np.asarray(raw, float), float(log_prob), float(reward)))

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    def __len__(self) -> int:
        return len(self.steps)


def log_prob_and_grad(params: mg.Params, states: np.ndarray, raws: np.ndarray, weights: np.ndarray):
    """``sum_k weights[k] * log pi(raw_k | s_k)`` and its gradient wrt ``params``."""
    mean, log_std, cache = _forward(params, states)
    inv_var = np.exp(-2.0 * log_std)
    diff = raws - mean
    logp = np.sum(-0.5 * diff * diff * inv_var - log_std - _LOG_SQRT_2PI, axis=1)
    w = weights[:, None]
    g_mean = w * diff * inv_var
    pre_log_std = cache[-1][1][:, ACTION_DIM:]
    inside = (pre_log_std >= LOG_STD_MIN) & (pre_log_std <= LOG_STD_MAX)
    g_log_std = w * (diff * diff * inv_var - 1.0) * inside
    g = np.concatenate([g_mean, g_log_std], axis=1)

    grads: mg.Params = {}
    for name, (x, z) in zip(reversed(_LAYERS), reversed(cache)):
        if name != "out":
            g = mg.relu_backward(g, z)
        g, grads[f"{name}.w"], grads[f"{name}.b"] = mg.linear_backward(g, x, params[f"{name}.w"])
    return float(np.dot(weights, logp)), {k: grads[k] for k in params}, logp


class Agent:
    """Policy parameters plus the Adam state used for ascent on expected return."""

    prefix = "agent."

    def __init__(self, params: mg.Params, lr: float = 0.01, baseline: bool = True):
        self.params = params
        self.lr = lr
        self.baseline = baseline
        self.adam = mg.AdamState()

    @classmethod
    def init(cls, seed: int, lr: float = 0.01, baseline: bool = True) -> "Agent":
        return cls(init_policy(seed), lr, baseline)

    def act(self, s, noise_seed: int):
        """Returns ``(state_array, raw, action, log_prob)``."""
        arr = check_state(s)
        mean, log_std = policy_forward(self.params, arr)
        raw, action, logp = sample_action(mean, log_std, noise_seed)
        return arr, raw, action, logp

    def log_prob(self, state, raw) -> float:
        mean, log_std = policy_forward(self.params, state)
        return gaussian_log_prob(raw, mean, log_std)

    def advantages(self, trajectory: Trajectory, p: int) -> np.ndarray:
        returns = returns_window(trajectory.rewards, p)
        if self.baseline:
            returns = returns - returns.mean()
        return returns

    def update(self, trajectory: Trajectory, p: int) -> None:
        if len(trajectory) == 0:
            raise TrajectoryError("cannot update the agent from an empty trajectory")
        adv = self.advantages(trajectory, p)
        states = np.stack([s.state for s in trajectory.steps])
        raws = np.stack([s.raw for s in trajectory.steps])
        _, grads, _ = log_prob_and_grad(self.params, states, raws, adv / len(trajectory))
        # ascent on the score-function objective
        ascent = {k: -g for k, g in grads.items()}
        self.params, self.adam = mg.adam_step(self.params, ascent, self.adam, self.lr)

    def state_dict(self) -> mg.Params:
        return {self.prefix + k: v for k, v in self.params.items()}

    def load_state_dict(self, tensors: mg.Params) -> None:
        n = len(self.prefix)
        params = {k[n:]: v.copy() for k, v in tensors.items() if k.startswith(self.prefix)}
        if set(params) != set(self.params):
            raise ParseError(f"checkpoint lacks agent tensors {sorted(set(self.params) - set(params))}")
        self.params = params


def agent_update(agent: Agent, trajectory: Trajectory, p: int, lr: float | None = None) -> mg.Params:
    """One REINFORCE step; returns the updated parameters."""
    if lr is not None:
        agent.lr = lr
    agent.update(trajectory, p)
    return agent.params
