"""Closed-loop episode bookkeeping shared by training and evaluation.

An :class:`EpisodeRunner` owns one world, its current abstract trajectory,
the prompt built from it, the match tracker and the stack of recent low
states. Policies act in a normalised action space; the runner rescales
actions by ``task.action_scale`` before stepping the world.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, PlanningError
from .plans import chunk_periodic, subsample
from .reward import MatchTracker, combined_reward, step_reward


@dataclass
class StepResult:
    reward: float
    traj_reward: float
    task_reward: float
    done: bool
    terminal: bool
    success: bool
    j: int


def select_subgoal(tracker, traj, lookahead):
    """High state ``lookahead`` indices past the farthest match, clamped to the last."""
    if lookahead < 1:
        raise ConfigurationError("lookahead must be >= 1")
    return traj[min(tracker.j_prev + lookahead, len(traj)) - 1]


def build_obs(task, prompt, prompt_idx, history, goal):
    """Scaled network inputs from a prompt and the low-state stack."""
    L, n, s = task.plan_cfg.max_len, len(prompt), task.feature_scale
    if n > L:
        raise ConfigurationError(f"prompt of {n} states exceeds max_len={L}")
    padded = np.zeros((L, task.high_dim))
    padded[L - n:] = np.asarray(prompt) * s
    mask = np.zeros(L, dtype=bool)
    mask[L - n:] = True
    tsteps = np.zeros(L, dtype=np.int64)
    tsteps[L - n:] = prompt_idx
    return {"prompt": padded, "prompt_mask": mask, "prompt_t": tsteps,
            "lows": np.asarray(history, dtype=np.float64) * s, "goal": np.asarray(goal) * s}


class EpisodeRunner:
    def __init__(self, task, rng, stack=2, goal_mode="final", lookahead=5,
                 terminate_on_success=True, max_reset_attempts=100, reward_mode="combined",
                 advance_chunks=False):
        if reward_mode not in ("combined", "task"):
            raise ConfigurationError(f"reward_mode must be 'combined' or 'task', got {reward_mode!r}")
        if goal_mode not in ("final", "subgoal"):
            raise ConfigurationError(f"goal_mode must be 'final' or 'subgoal', got {goal_mode!r}")
        self.reward_mode = reward_mode
        self.advance_chunks = advance_chunks
        self.task = task
        self.rng = rng
        self.stack = stack
        self.goal_mode = goal_mode
        self.lookahead = lookahead
        self.terminate_on_success = terminate_on_success
        self.max_reset_attempts = max_reset_attempts
        self.world = None

    # -- plan handling
    def _install(self, traj):
        chunks = chunk_periodic(traj, self.task.epsilon)
        self.pending = chunks[1:]
        self._set_traj(chunks[0])

    def _set_traj(self, traj):
        cfg = self.task.plan_cfg
        self.prompt, self.prompt_idx = subsample(traj, cfg.p, cfg.max_len)
        self.traj = traj
        self.tracker = MatchTracker.start(traj, self.task.d, self.task.epsilon)
        self.steps_since_plan = 0

    def reset(self, world=None, traj=None):
        """Start an episode. Layouts whose plan fails or overflows the prompt are redrawn."""
        for _ in range(self.max_reset_attempts):
            w = self.task.reset(self.rng) if world is None else world
            try:
                plan = self.task.plan(w, self.rng) if traj is None else traj
                self.world = w
                self._install(plan)
                break
            except (PlanningError, ConfigurationError):
                if world is not None:
                    raise
        else:
            raise ConfigurationError("could not draw a plannable episode")
        low = self.task.observe(self.world)
        self.history = deque([low] * self.stack, maxlen=self.stack)
        self.t = 0
        self.replans = 0
        self.succeeded = self.task.success(self.world)
        self.lows = [low]
        return self

    def replan(self):
        """Plan again from the current world (``f`` of the current low state)."""
        self._install(self.task.plan(self.world, self.rng))
        self.replans += 1

    def next_chunk(self):
        if not self.pending:
            return False
        nxt, self.pending = self.pending[0], self.pending[1:]
        self._set_traj(nxt)
        return True

    # -- stepping
    @property
    def low(self):
        return self.history[-1]

    def goal(self):
        if self.goal_mode == "subgoal":
            return select_subgoal(self.tracker, self.traj, self.lookahead)
        return self.traj[-1]

    def obs(self):
        """Network inputs (scaled); prompt is left-padded to ``max_len``."""
        return build_obs(self.task, self.prompt, self.prompt_idx, self.history, self.goal())

    def step(self, action):
        act = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0) * self.task.action_scale
        self.world = self.task.step(self.world, act)
        low = self.task.observe(self.world)
        self.history.append(low)
        self.lows.append(low)
        traj_r, self.tracker = step_reward(self.tracker, low, self.task.reward_params)
        j = self.tracker.j_prev
        if self.advance_chunks and self.tracker.done:
            self.next_chunk()
        task_r = self.task.task_reward(self.world)
        self.t += 1
        self.steps_since_plan += 1
        ok = self.task.success(self.world)
        self.succeeded |= ok
        terminal = bool(self.terminate_on_success and ok)
        done = terminal or self.t >= self.task.max_episode_len
        reward = task_r if self.reward_mode == "task" else combined_reward(traj_r, task_r,
                                                                          self.task.reward_params)
        return StepResult(reward, traj_r, task_r,
                          done, terminal, ok, j)
