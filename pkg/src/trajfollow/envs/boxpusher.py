"""Box Pusher: a square agent that can only push a square box to a goal.

World geometry: agent and box are axis-aligned squares of side
``box_width``; the arena is the square ``[-10w, 10w]^2``. Motion is
kinematic: each action is an xy delta clipped to ``0.5 * box_width`` per
axis and applied one axis at a time, so walls and obstacles can be slid
along. Overlap with the box after a move pushes the box forward by the
penetration depth.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ..exceptions import ConfigurationError

ARENA_WIDTHS = 20.0
CONTACT_TOL = 1e-9  # faces closer than this count as touching, not overlapping


@dataclass(frozen=True)
class BoxPusherConfig:
    box_width: float = 0.1
    obstacles: bool = False
    n_obstacles: tuple = (1, 3)
    obstacle_size: tuple = (1.0, 4.0)  # side length range, in box widths
    max_episode_len: int = 200

    @property
    def half_arena(self):
        return ARENA_WIDTHS * self.box_width / 2

    @property
    def delta_max(self):
        return 0.5 * self.box_width


@dataclass(frozen=True)
class BoxPusherState:
    agent: np.ndarray
    box: np.ndarray
    goal: np.ndarray
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    box_width: float = 0.1
    step_count: int = 0

    @property
    def half_arena(self):
        return ARENA_WIDTHS * self.box_width / 2


def _square(center, width):
    h = width / 2
    return np.array([center[0] - h, center[1] - h, center[0] + h, center[1] + h])


def _overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def reset(cfg, rng, max_attempts=1000):
    """Sample agent, box and goal (pairwise at least two box widths apart).

    The box and goal keep 1.5 box widths from the arena wall so the agent
    always fits behind the box. The obstacle variant adds 1-3 rectangles
    disjoint from every start footprint and the goal.
    """
    w, half = cfg.box_width, cfg.half_arena
    for _ in range(max_attempts):
        agent = rng.uniform(-half + w / 2, half - w / 2, size=2)
        box = rng.uniform(-half + 1.5 * w, half - 1.5 * w, size=2)
        goal = rng.uniform(-half + 1.5 * w, half - 1.5 * w, size=2)
        pts = (agent, box, goal)
        if min(np.linalg.norm(a - b) for i, a in enumerate(pts) for b in pts[i + 1:]) < 2 * w:
            continue
        obstacles = np.zeros((0, 4))
        if cfg.obstacles:
            obstacles = _sample_obstacles(cfg, rng, [_square(p, w) for p in pts])
            if obstacles is None:
                continue
        return BoxPusherState(agent, box, goal, obstacles, w, 0)
    raise ConfigurationError(f"Box Pusher reset failed after {max_attempts} attempts")


def _sample_obstacles(cfg, rng, keep_clear, tries=100):
    w, half = cfg.box_width, cfg.half_arena
    count = int(rng.integers(cfg.n_obstacles[0], cfg.n_obstacles[1] + 1))
    rects = []
    for _ in range(tries):
        if len(rects) == count:
            break
        size = rng.uniform(cfg.obstacle_size[0], cfg.obstacle_size[1], size=2) * w
        lo = rng.uniform(-half, half - size)
        rect = np.array([lo[0], lo[1], lo[0] + size[0], lo[1] + size[1]])
        if any(_overlap(rect, k) for k in keep_clear):
            continue
        rects.append(rect)
    if len(rects) < count:
        return None
    return np.array(rects)


def _free_travel(pos, width, axis, delta, blockers, half_arena):
    """Largest signed move along ``axis`` (same sign as ``delta``, at most
    ``|delta|``) keeping the square at ``pos`` out of ``blockers`` and inside
    the arena."""
    if delta == 0:
        return 0.0
    h = width / 2
    other = 1 - axis
    sign = 1.0 if delta > 0 else -1.0
    limit = abs(delta)
    limit = min(limit, max(0.0, half_arena - (pos[axis] * sign + h)))
    for r in blockers:
        lo_o, hi_o = r[other], r[other + 2]
        if not (pos[other] - h < hi_o and lo_o < pos[other] + h):
            continue
        if sign > 0:
            gap = r[axis] - (pos[axis] + h)
        else:
            gap = (pos[axis] - h) - r[axis + 2]
        if gap >= -1e-12:
            limit = min(limit, max(0.0, gap))
    return sign * limit


def step(state, action):
    """Advance one step; returns a new state (inputs are not modified)."""
    w = state.box_width
    a = np.clip(np.asarray(action, dtype=np.float64), -0.5 * w, 0.5 * w)
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise ConfigurationError(f"Box Pusher action must be 2 finite values, got {action!r}")
    agent, box = state.agent.copy(), state.box.copy()
    half = state.half_arena
    for axis in (0, 1):
        delta = a[axis]
        if delta == 0:
            continue
        sign = 1.0 if delta > 0 else -1.0
        before = agent[axis]
        agent[axis] += _free_travel(agent, w, axis, delta, state.obstacles, half)
        other = 1 - axis
        lateral = abs(agent[other] - box[other]) < w - CONTACT_TOL
        ahead = (box[axis] - before) * sign > 0
        gap = abs(agent[axis] - box[axis])
        if lateral and ahead and gap < w:
            pen = w - gap
            moved = _free_travel(box, w, axis, sign * pen, state.obstacles, half)
            box[axis] += moved
            if abs(moved) < pen:
                agent[axis] = box[axis] - sign * w
    return replace(state, agent=agent, box=box, step_count=state.step_count + 1)


def observe(state):
    return np.concatenate([state.agent, state.box, state.goal])


def task_reward(state):
    d_ab = np.linalg.norm(state.agent - state.box)
    d_bg = np.linalg.norm(state.box - state.goal)
    return -(0.1 * d_ab + 0.9 * d_bg)


def success(state):
    return bool(np.linalg.norm(state.box - state.goal) < state.box_width)
