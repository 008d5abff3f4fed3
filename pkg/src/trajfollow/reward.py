"""Trajectory-following reward.

A low state *matches* the nearest high state of the abstract trajectory that
lies strictly within ``epsilon``. The tracker keeps the farthest matched
(1-based) index; progress past it pays ``(1 + beta * j') * r_dist(d)``,
stalls pay 0, and once the final state has been matched every step pays
``r_dist`` to the final state.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positive, check_trajectory
from .exceptions import ConfigurationError


@dataclass(frozen=True)
class RewardParams:
    beta: float = 5.0
    w: float = 30.0
    lambda_task: float = 0.1

    def __post_init__(self):
        check_positive(self.beta, "beta", strict=False)
        check_positive(self.w, "w")
        check_positive(self.lambda_task, "lambda_task", strict=False)


def r_dist(distance, w):
    return 1.0 - np.tanh(w * distance)


def match_index(low, traj, d, epsilon):
    """1-based index of the matched high state, or ``None``.

    Ties resolve to the smallest index (``np.argmin`` returns the first).
    """
    return _match(d.to_many(low, traj), epsilon)


def _match(dists, epsilon):
    i = int(np.argmin(dists))
    if dists[i] < epsilon:
        return i + 1
    return None


def min_pairwise_distance(traj):
    traj = np.asarray(traj, dtype=np.float64)
    if len(traj) < 2:
        return np.inf
    diff = traj[:, None, :] - traj[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dist[np.diag_indices(len(traj))] = np.inf
    return float(dist.min())


@dataclass(frozen=True)
class MatchTracker:
    """Per-episode matching state over the full (not sub-sampled) trajectory."""

    traj: np.ndarray = field(repr=False, compare=False)
    d: object = field(repr=False, compare=False)
    epsilon: float
    j_prev: int = 0

    @classmethod
    def start(cls, traj, d, epsilon, check_repeats=True):
        """Begin tracking ``traj``.

        Trajectories revisiting a state (two states closer than
        ``epsilon / 2``) are rejected; split them with
        :func:`trajfollow.plans.chunk_periodic` first.
        """
        traj = check_trajectory(traj, dim=d.state_map.high_dim)
        check_positive(epsilon, "epsilon")
        if check_repeats and min_pairwise_distance(traj) < epsilon / 2:
            raise ConfigurationError(
                "trajectory repeats a high-level state within epsilon/2; "
                "apply chunk_periodic and track each chunk separately")
        return cls(traj, d, float(epsilon), 0)

    @property
    def n(self):
        return len(self.traj)

    @property
    def done(self):
        return self.j_prev == self.n


def step_reward(tracker, low, params):
    """Return ``(reward, updated_tracker)`` for one low state."""
    n = tracker.n
    dists = tracker.d.to_many(low, tracker.traj)
    j_match = _match(dists, tracker.epsilon)
    j_t = max(tracker.j_prev, j_match or 0)
    if j_t == n:
        reward = r_dist(dists[n - 1], params.w)
    elif j_match is not None and j_match > tracker.j_prev:
        reward = (1.0 + params.beta * j_match) * r_dist(dists[j_match - 1], params.w)
    else:
        reward = 0.0
    return float(reward), replace(tracker, j_prev=j_t)


def combined_reward(traj_reward, task_reward, params):
    return traj_reward + params.lambda_task * task_reward


@dataclass
class RewardTrace:
    j: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray

    def records(self):
        for t in range(len(self.rewards)):
            yield {"step": t + 1, "j_t": int(self.j[t]), "traj_reward": float(self.rewards[t]),
                   "running_sum": float(self.returns[t])}


def reward_trace(episode, traj, d, epsilon, params):
    """Fold :func:`step_reward` over an episode of low states."""
    if len(episode) == 0:
        raise ConfigurationError("episode must contain at least one low state")
    tracker = MatchTracker.start(traj, d, epsilon)
    js, rewards = [], []
    for low in episode:
        r, tracker = step_reward(tracker, low, params)
        js.append(tracker.j_prev)
        rewards.append(r)
    rewards = np.array(rewards)
    return RewardTrace(np.array(js), rewards, np.cumsum(rewards))
