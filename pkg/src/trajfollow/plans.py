"""Abstract trajectories: heuristic planners and prompt preparation.

Trajectories are ``(n, D)`` float64 arrays of high states. Spacing and
repeat checks use the plain Euclidean norm in high-state space; the
weighted dissimilarity is reserved for matching.
"""
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive, check_trajectory
from .exceptions import ConfigurationError, PlanningError


@dataclass(frozen=True)
class PlanConfig:
    epsilon_spacing: float
    p: int = 2
    max_len: int = 32
    seed: int = 0

    def __post_init__(self):
        check_positive(self.epsilon_spacing, "epsilon_spacing")
        if self.p < 0:
            raise ConfigurationError(f"p must be >= 0, got {self.p}")
        if self.max_len < 2:
            raise ConfigurationError(f"max_len must be >= 2, got {self.max_len}")


def preprocess(traj, epsilon_spacing):
    """Drop near-duplicate waypoints, then subdivide every segment evenly.

    A waypoint closer than ``epsilon_spacing`` to the last kept one is
    dropped. The final waypoint is always kept; if it is too close to its
    kept predecessor, that predecessor is dropped instead (unless it is the
    first waypoint). Each segment of length ``l`` is then cut into
    ``ceil(l / epsilon_spacing)`` equal pieces, so every segment except
    possibly the last has spacing in ``(eps/2, eps]``.
    """
    traj = check_trajectory(traj)
    eps = check_positive(epsilon_spacing, "epsilon_spacing")
    kept = [traj[0]]
    for s in traj[1:-1]:
        if np.linalg.norm(s - kept[-1]) >= eps:
            kept.append(s)
    if len(traj) > 1:
        last = traj[-1]
        if len(kept) > 1 and np.linalg.norm(last - kept[-1]) < eps:
            kept.pop()
        if np.linalg.norm(last - kept[-1]) > 0:
            kept.append(last)

    out = [kept[0]]
    for a, b in zip(kept[:-1], kept[1:]):
        pieces = max(1, math.ceil(np.linalg.norm(b - a) / eps))
        for i in range(1, pieces):
            out.append(a + (b - a) * (i / pieces))
        out.append(b)
    return np.array(out)


def subsample_indices(n, p, max_len=None):
    """0-based indices kept in the prompt: ``0, p, 2p, ...`` below ``n - 1``, then ``n - 1``."""
    step = max(int(p), 1)
    idx = list(range(0, n - 1, step)) + [n - 1]
    if max_len is not None and len(idx) > max_len:
        raise ConfigurationError(
            f"prompt too long: n={n}, p={p} gives {len(idx)} states > max_len={max_len}")
    return np.array(idx, dtype=np.int64)


def subsample(traj, p, max_len=None):
    """Return ``(prompt_states, original_indices)``; values are never altered."""
    traj = check_trajectory(traj)
    idx = subsample_indices(len(traj), p, max_len)
    return traj[idx], idx


def chunk_periodic(traj, epsilon):
    """Greedily split ``traj`` so no chunk holds two states within ``epsilon / 2``."""
    traj = check_trajectory(traj)
    chunks, current = [], [traj[0]]
    for s in traj[1:]:
        if np.min(np.linalg.norm(np.array(current) - s, axis=1)) < epsilon / 2:
            chunks.append(np.array(current))
            current = [s]
        else:
            current.append(s)
    chunks.append(np.array(current))
    return chunks


class TrajectoryInterpolator(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`preprocess` for pipeline use."""

    def __init__(self, epsilon_spacing=0.1):
        self.epsilon_spacing = epsilon_spacing

    def fit(self, X=None, y=None):
        check_positive(self.epsilon_spacing, "epsilon_spacing")
        self.n_features_in_ = None if X is None else check_trajectory(X).shape[1]
        return self

    def transform(self, X):
        return preprocess(X, self.epsilon_spacing)


class PromptSubsampler(TransformerMixin, BaseEstimator):
    """Keep every ``p``-th state plus the last one; ``indices_`` holds the kept positions."""

    def __init__(self, p=2, max_len=32):
        self.p = p
        self.max_len = max_len

    def fit(self, X=None, y=None):
        PlanConfig(1.0, self.p, self.max_len)
        return self

    def transform(self, X):
        states, self.indices_ = subsample(X, self.p, self.max_len)
        return states


# ---------------------------------------------------------------- Box Pusher

def _axis_path(start, target, order, stop):
    """Waypoints moving ``start`` toward ``target`` one axis at a time.

    On each axis the point moves until the remaining difference is ``stop``
    (or not at all if already closer than ``max(stop, eps)``).
    """
    pts = [np.array(start, dtype=np.float64)]
    cur = pts[0].copy()
    for ax in order:
        diff = target[ax] - cur[ax]
        if abs(diff) > stop[1]:
            cur = cur.copy()
            cur[ax] = target[ax] - math.copysign(stop[0], diff)
            pts.append(cur)
    return pts


def _rects_overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _swept_rect(p, q, half):
    return (min(p[0], q[0]) - half, min(p[1], q[1]) - half,
            max(p[0], q[0]) + half, max(p[1], q[1]) + half)


def boxpusher_variant(high, goal, approach_order, carry_order, epsilon):
    """Raw (un-interpolated) waypoints for one heuristic variant.

    Approach: per axis, stop once within ``epsilon/2`` of the box (no move
    if already within ``epsilon``). Grasp is implicit: from then on the box
    keeps its offset to the agent. Carry: per axis, the box lands exactly on
    the goal coordinate.
    """
    high = np.asarray(high, dtype=np.float64)
    agent, box, goal = high[:2], high[2:], np.asarray(goal, dtype=np.float64)
    approach = _axis_path(agent, box, approach_order, (epsilon / 2, epsilon))
    grasp_agent = approach[-1]
    offset = grasp_agent - box
    carry = _axis_path(box, goal, carry_order, (0.0, 0.0))
    states = [np.concatenate([a, box]) for a in approach]
    states += [np.concatenate([b + offset, b]) for b in carry[1:]]
    return np.array(states)


def variant_is_clear(raw, obstacles, box_width):
    """True iff agent and box sweeps keep one box width of clearance from obstacles."""
    if obstacles is None or len(obstacles) == 0:
        return True
    half = box_width / 2 + box_width
    for p, q in zip(raw[:-1], raw[1:]):
        sweeps = [_swept_rect(p[:2], q[:2], half)]
        if np.any(p[2:] != q[2:]):
            sweeps.append(_swept_rect(p[2:], q[2:], half))
        for rect in sweeps:
            for ob in obstacles:
                if _rects_overlap(rect, ob):
                    return False
    return True


BOXPUSHER_ORDERS = [((0, 1), (0, 1)), ((0, 1), (1, 0)), ((1, 0), (0, 1)), ((1, 0), (1, 0))]


def plan_boxpusher(high, goal, obstacles, rng, epsilon, box_width=None):
    """Abstract Box Pusher trajectory: approach the box, grasp, carry to goal.

    One of the four axis-order variants is drawn uniformly among those that
    clear every obstacle; the result is preprocessed at ``epsilon`` spacing.

    Raises:
        PlanningError: if no variant is obstacle-free.
    """
    box_width = epsilon if box_width is None else box_width
    feasible = []
    for approach_order, carry_order in BOXPUSHER_ORDERS:
        raw = boxpusher_variant(high, goal, approach_order, carry_order, epsilon)
        if variant_is_clear(raw, obstacles, box_width):
            feasible.append(raw)
    if not feasible:
        raise PlanningError("no obstacle-free Box Pusher plan variant")
    raw = feasible[int(rng.integers(len(feasible)))]
    return preprocess(raw, epsilon)


def plan_couch(maze, epsilon):
    """The maze path itself, as 2D positions, preprocessed at ``epsilon`` spacing."""
    return preprocess(maze.path_points, epsilon)


# ---------------------------------------------------------------- replanning

FINAL_STATE = "final-state-matched"
TIMEOUT = "timeout"


@dataclass(frozen=True)
class ReplanTrigger:
    kind: str
    max_steps: int = 1

    def __post_init__(self):
        if self.kind not in (FINAL_STATE, TIMEOUT):
            raise ConfigurationError(f"unknown replan trigger {self.kind!r}")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")


def should_replan(tracker, step, trigger):
    """``step`` counts steps since the current plan was issued."""
    if trigger.kind == FINAL_STATE:
        return tracker.j_prev == tracker.n
    return step >= trigger.max_steps and tracker.j_prev < tracker.n
