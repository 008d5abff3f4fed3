"""Executable environments and the task adapters used by rollouts.

A *task* bundles one environment with its state map, dissimilarity,
planner and reward settings. Worlds are immutable: ``task.step`` returns a
new world.
"""
from dataclasses import dataclass, replace

import numpy as np

from .. import plans
from ..core import BOXPUSHER_DISSIMILARITY, COUCH_DISSIMILARITY
from ..exceptions import ConfigurationError
from ..reward import RewardParams
from . import boxpusher, couch


class BoxPusherTask:
    name = "boxpusher"
    low_dim, high_dim, action_dim = 6, 4, 2
    d = BOXPUSHER_DISSIMILARITY

    def __init__(self, cfg=None, plan_cfg=None, reward_params=None):
        self.cfg = cfg or boxpusher.BoxPusherConfig()
        w = self.cfg.box_width
        self.plan_cfg = plan_cfg or plans.PlanConfig(epsilon_spacing=w, p=2, max_len=32)
        self.reward_params = reward_params or RewardParams(lambda_task=0.1)
        self.epsilon = self.plan_cfg.epsilon_spacing
        self.max_episode_len = self.cfg.max_episode_len
        self.action_scale = np.full(2, self.cfg.delta_max)
        self.feature_scale = 1.0 / self.cfg.half_arena

    def set_plan_config(self, plan_cfg):
        self.plan_cfg = plan_cfg
        self.epsilon = plan_cfg.epsilon_spacing

    def reset(self, rng):
        return boxpusher.reset(self.cfg, rng)

    def step(self, world, action):
        return boxpusher.step(world, action)

    def observe(self, world):
        return boxpusher.observe(world)

    def task_reward(self, world):
        return boxpusher.task_reward(world)

    def success(self, world):
        return boxpusher.success(world)

    def high_state(self, world):
        return self.d.state_map(self.observe(world))

    def plan(self, world, rng):
        return plans.plan_boxpusher(self.high_state(world), world.goal, world.obstacles, rng,
                                    self.epsilon, self.cfg.box_width)


@dataclass(frozen=True)
class CouchWorld:
    state: couch.CouchState
    maze: couch.Maze


class CouchTask:
    name = "couch"
    low_dim, high_dim, action_dim = 13, 2, 3
    d = COUCH_DISSIMILARITY

    def __init__(self, cfg=None, plan_cfg=None, reward_params=None):
        self.cfg = cfg or couch.CouchConfig()
        self.plan_cfg = plan_cfg or plans.PlanConfig(epsilon_spacing=0.2, p=10, max_len=50)
        self.reward_params = reward_params or RewardParams(lambda_task=0.5)
        self.epsilon = self.plan_cfg.epsilon_spacing
        self.max_episode_len = self.cfg.max_episode_len
        self.action_scale = np.array([self.cfg.force_max, self.cfg.force_max, self.cfg.torque_max])
        self.feature_scale = 0.1

    def set_plan_config(self, plan_cfg):
        self.plan_cfg = plan_cfg
        self.epsilon = plan_cfg.epsilon_spacing

    def reset(self, rng):
        state, maze = couch.reset(self.cfg, rng)
        return CouchWorld(state, maze)

    def step(self, world, action):
        return replace(world, state=couch.step(world.state, world.maze, action, self.cfg))

    def observe(self, world):
        return couch.observe(world.state, world.maze)

    def task_reward(self, world):
        return couch.task_reward(world.state, world.maze, self.cfg)

    def success(self, world):
        return couch.success(world.state, world.maze, self.cfg)

    def high_state(self, world):
        return self.d.state_map(self.observe(world))

    def plan(self, world, rng):
        """The remaining maze path, starting from the couch's current position."""
        pts = world.maze.path_points
        here = world.state.pose[:2]
        i = int(np.argmin(np.linalg.norm(pts - here, axis=1)))
        return plans.preprocess(np.vstack([here, pts[i + 1:]]) if i + 1 < len(pts)
                                else np.vstack([here, pts[-1:]]), self.epsilon)


def couch_horizon(variant, n_corners):
    """Episode limit scaled from 150 steps for Short 3 by expected path length."""
    lo, hi = couch.LENGTHS[variant]
    s_lo, s_hi = couch.LENGTHS["short"]
    scale = (n_corners / 3) * ((lo + hi) + 3) / ((s_lo + s_hi) + 3)
    return int(round(150 * max(scale, 1.0)))


def make_task(tag, plan=None, **overrides):
    """Task from a tag: ``boxpusher``, ``boxpusher-obstacles``, ``couch-short-3``, ``couch-long-5`` ...

    ``plan`` optionally overrides :class:`~trajfollow.plans.PlanConfig` fields;
    other keyword arguments override the environment config.
    """
    try:
        if tag in ("boxpusher", "boxpusher-obstacles"):
            if tag.endswith("obstacles"):
                overrides.setdefault("obstacles", True)
            task = BoxPusherTask(boxpusher.BoxPusherConfig(**overrides))
        elif tag.startswith("couch"):
            parts = tag.split("-")
            variant = parts[1] if len(parts) > 1 else "short"
            n = int(parts[2]) if len(parts) > 2 else 3
            if variant not in couch.LENGTHS or len(parts) > 3 or n < 1:
                raise ConfigurationError(f"unknown environment tag {tag!r}")
            overrides.setdefault("max_episode_len", couch_horizon(variant, n))
            overrides.setdefault("variant", variant)
            overrides.setdefault("n_corners", n)
            task = CouchTask(couch.CouchConfig(**overrides))
        else:
            raise ConfigurationError(f"unknown environment tag {tag!r}")
    except TypeError as exc:
        raise ConfigurationError(f"bad environment option for {tag!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"unknown environment tag {tag!r}") from exc
    task.tag = tag
    task.options = dict(overrides)
    if plan:
        try:
            task.set_plan_config(replace(task.plan_cfg, **plan))
        except TypeError as exc:
            raise ConfigurationError(f"bad plan option: {exc}") from exc
    return task


# ---------------------------------------------------------------- snapshots

def _vec(v):
    return ",".join(repr(float(x)) for x in np.ravel(v))


def snapshot_text(world):
    if isinstance(world, boxpusher.BoxPusherState):
        obstacles = ";".join(_vec(r) for r in world.obstacles)
        return (f"env=boxpusher\nbox_width={world.box_width!r}\nstep_count={world.step_count}\n"
                f"agent={_vec(world.agent)}\nbox={_vec(world.box)}\ngoal={_vec(world.goal)}\n"
                f"obstacles={obstacles}\n")
    s = world.state
    return (f"env=couch\npose={_vec(s.pose)}\nvelocity={_vec(s.velocity)}\n"
            f"half_length={s.half_length!r}\nhalf_width={s.half_width!r}\n"
            f"step_count={s.step_count}\nmaze:\n{couch.maze_text(world.maze)}")


def parse_snapshot(text):
    """Inverse of :func:`snapshot_text`. Returns ``(env_tag, world)``."""
    head, _, maze_part = text.partition("maze:\n")
    try:
        fields = dict(ln.split("=", 1) for ln in head.strip().splitlines())
        env = fields["env"]
        vec = lambda k: np.array([float(x) for x in fields[k].split(",")])
        if env == "boxpusher":
            obs = fields.get("obstacles", "").strip()
            rects = np.array([[float(x) for x in r.split(",")] for r in obs.split(";")]) \
                if obs else np.zeros((0, 4))
            world = boxpusher.BoxPusherState(vec("agent"), vec("box"), vec("goal"), rects,
                                             float(fields["box_width"]), int(fields["step_count"]))
        elif env == "couch":
            state = couch.CouchState(vec("pose"), vec("velocity"), float(fields["half_length"]),
                                     float(fields["half_width"]), int(fields["step_count"]))
            world = CouchWorld(state, couch.parse_maze(maze_part))
        else:
            raise ConfigurationError(f"unknown snapshot env {env!r}")
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"malformed snapshot: {exc}") from exc
    return env, world


def write_snapshot(path, world):
    with open(path, "w") as fh:
        fh.write(snapshot_text(world))


def read_snapshot(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read snapshot {path}: {exc}") from exc
    return parse_snapshot(text)


def task_for_world(env, world):
    if env == "boxpusher":
        obstacles = len(world.obstacles) > 0
        return BoxPusherTask(boxpusher.BoxPusherConfig(box_width=world.box_width, obstacles=obstacles))
    m = world.maze
    return make_task(f"couch-{m.variant}-{m.n_corners}")
