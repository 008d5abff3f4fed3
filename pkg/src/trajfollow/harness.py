"""Evaluation, closed-loop replanning, attention maps and granularity sweeps.

Controllers map a list of :class:`~trajfollow.episodes.EpisodeRunner` to a
batch of normalised actions, so learned policies and scripted oracles share
one stepping loop.
"""
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .envs import make_task, parse_snapshot, snapshot_text
from .episodes import EpisodeRunner, build_obs
from .exceptions import ConfigurationError, PlanningError, UnsupportedOperationError
from .oracles import oracle_boxpusher, oracle_couch
from .plans import FINAL_STATE, TIMEOUT, ReplanTrigger, should_replan, subsample
from .policy import TranslationPolicy, collate
from .reward import MatchTracker, step_reward

DEFAULT_BUDGETS = {FINAL_STATE: None, TIMEOUT: 3}  # None = unlimited


# --------------------------------------------------------------- controllers

class PolicyController:
    def __init__(self, policy, mode="mean", generator=None):
        self.policy = policy.eval()
        self.mode = mode
        self.generator = generator

    @property
    def stack(self):
        return self.policy.cfg.k

    @property
    def goal_mode(self):
        return self.policy.goal_mode

    def __call__(self, runners):
        batch = collate([r.obs() for r in runners])
        action, _, _ = self.policy.act(batch, mode=self.mode, generator=self.generator)
        return action


class OracleController:
    """Scripted expert (uses full world knowledge)."""
    stack, goal_mode = 1, "final"

    def __call__(self, runners):
        out = []
        for r in runners:
            if r.task.name == "boxpusher":
                a = oracle_boxpusher(r.world, r.traj, r.tracker.j_prev)
            else:
                a = oracle_couch(r.world.state, r.world.maze, r.traj)
            out.append(a / r.task.action_scale)
        return np.array(out)


class RandomController:
    stack, goal_mode = 1, "final"

    def __init__(self, rng):
        self.rng = rng

    def __call__(self, runners):
        return self.rng.uniform(-1, 1, size=(len(runners), runners[0].task.action_dim))


def as_controller(obj):
    return PolicyController(obj) if isinstance(obj, TranslationPolicy) else obj


# ------------------------------------------------------------------- records

@dataclass
class EpisodeRecord:
    """Everything needed to replay, trace or inspect one episode."""
    env: str
    env_options: dict
    plan_cfg: dict
    stack: int
    goal_mode: str
    lookahead: int
    start: str                                    # snapshot text of the initial world
    lows: list = field(default_factory=list)      # T+1 raw low states
    actions: list = field(default_factory=list)   # normalised actions
    rewards: list = field(default_factory=list)
    traj_rewards: list = field(default_factory=list)
    task_rewards: list = field(default_factory=list)
    j: list = field(default_factory=list)         # farthest match after each step
    j_before: list = field(default_factory=list)
    plans: list = field(default_factory=list)     # {"t", "kind", "traj"}
    interventions: list = field(default_factory=list)
    success: bool = False
    replans_used: int = 0
    steps: int = 0
    ended_by: str = ""

    @property
    def j_final(self):
        return self.j[-1] if self.j else 0

    def task(self):
        return make_task(self.env, plan=self.plan_cfg, **self.env_options)

    def plan_at(self, t):
        """The plan in force when the action at step ``t`` was chosen."""
        current = self.plans[0]
        for p in self.plans:
            if p["t"] <= t:
                current = p
        return np.asarray(current["traj"])

    def observations(self, task=None):
        """Rebuild the network inputs seen at every step."""
        task = task or self.task()
        cfg = task.plan_cfg
        lows = np.array(self.lows, dtype=np.float64)
        for e in self.interventions:
            lows[e["t"]] = e["low"]
        out = []
        cache = {}
        for t in range(self.steps):
            traj = self.plan_at(t)
            key = len([p for p in self.plans if p["t"] <= t])
            if key not in cache:
                cache[key] = subsample(traj, cfg.p, cfg.max_len)
            prompt, idx = cache[key]
            hist = [lows[max(i, 0)] for i in range(t - self.stack + 1, t + 1)]
            if self.goal_mode == "subgoal":
                goal = traj[min(self.j_before[t] + self.lookahead, len(traj)) - 1]
            else:
                goal = traj[-1]
            out.append(build_obs(task, prompt, idx, hist, goal))
        return out


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_episode(path, record):
    """JSON lines: a header, one line per plan, one per step, one per intervention."""
    head = {"type": "episode", **{k: getattr(record, k) for k in (
        "env", "env_options", "plan_cfg", "stack", "goal_mode", "lookahead", "start", "success",
        "replans_used", "steps", "ended_by")}, "low0": record.lows[0]}
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(head)) + "\n")
        for p in record.plans:
            fh.write(json.dumps(_jsonable({"type": "plan", **p})) + "\n")
        for e in record.interventions:
            fh.write(json.dumps(_jsonable({"type": "intervention", **e})) + "\n")
        for t in range(record.steps):
            fh.write(json.dumps(_jsonable({
                "type": "step", "t": t, "action": record.actions[t], "low": record.lows[t + 1],
                "reward": record.rewards[t], "traj_reward": record.traj_rewards[t],
                "task_reward": record.task_rewards[t], "j_before": record.j_before[t], "j": record.j[t],
            })) + "\n")


def read_episode(path):
    try:
        with open(path) as fh:
            rows = [json.loads(ln) for ln in fh if ln.strip()]
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read episode file {path}: {exc}") from exc
    if not rows or rows[0].get("type") != "episode":
        raise ConfigurationError(f"{path} is not an episode file")
    head = rows[0]
    rec = EpisodeRecord(**{k: head[k] for k in (
        "env", "env_options", "plan_cfg", "stack", "goal_mode", "lookahead", "start", "success",
        "replans_used", "steps", "ended_by")})
    rec.lows.append(head["low0"])
    steps = sorted((r for r in rows if r["type"] == "step"), key=lambda r: r["t"])
    for r in steps:
        rec.actions.append(r["action"])
        rec.lows.append(r["low"])
        rec.rewards.append(r["reward"])
        rec.traj_rewards.append(r["traj_reward"])
        rec.task_rewards.append(r["task_reward"])
        rec.j_before.append(r["j_before"])
        rec.j.append(r["j"])
    rec.plans = [{k: v for k, v in r.items() if k != "type"} for r in rows if r["type"] == "plan"]
    rec.interventions = [{k: v for k, v in r.items() if k != "type"} for r in rows if r["type"] == "intervention"]
    if len(steps) != rec.steps or not rec.plans:
        raise ConfigurationError(f"{path}: episode file is incomplete")
    return rec


def record_trace(record, task=None):
    """Recompute (step, j_t, traj_reward, running_sum) from the stored lows and plans."""
    task = task or record.task()
    rows, total, tracker, plan_no = [], 0.0, None, -1
    for t in range(record.steps):
        n_plans = len([p for p in record.plans if p["t"] <= t])
        if n_plans != plan_no:
            plan_no = n_plans
            tracker = MatchTracker.start(record.plan_at(t), task.d, task.epsilon, check_repeats=False)
        r, tracker = step_reward(tracker, np.asarray(record.lows[t + 1]), task.reward_params)
        total += r
        rows.append({"step": t + 1, "j_t": tracker.j_prev, "traj_reward": r, "running_sum": total})
    return rows


# --------------------------------------------------------------- closed loop

def _budgets(max_replans, triggers):
    if max_replans is None:
        return dict(DEFAULT_BUDGETS), None
    if isinstance(max_replans, dict):
        return {**DEFAULT_BUDGETS, **max_replans}, None
    if max_replans < 0:
        raise ConfigurationError("max_replans must be >= 0")
    return {t.kind: None for t in triggers}, int(max_replans)


class _Episode:
    """One runner plus replanning state and its record."""

    def __init__(self, runner, triggers, max_replans, intervention):
        self.runner = runner
        self.triggers = list(triggers)
        self.budgets, self.total_cap = _budgets(max_replans, self.triggers)
        self.used = {t.kind: 0 for t in self.triggers}
        self.intervention = intervention
        task = runner.task
        self.rec = EpisodeRecord(
            env=getattr(task, "tag", task.name), env_options=getattr(task, "options", {}),
            plan_cfg=asdict(task.plan_cfg), stack=runner.stack, goal_mode=runner.goal_mode,
            lookahead=runner.lookahead, start=snapshot_text(runner.world))
        self.rec.lows.append(runner.low.tolist())
        self.rec.plans.append({"t": 0, "kind": "initial", "traj": runner.traj.tolist()})
        self.done = False

    def _can(self, kind):
        if self.total_cap is not None and self.rec.replans_used >= self.total_cap:
            return False
        cap = self.budgets.get(kind)
        return cap is None or self.used[kind] < cap

    def before_step(self):
        r, t = self.runner, self.runner.t
        if self.intervention is not None:
            new = self.intervention(t, r)
            if new is not None:
                r.world = new
                low = r.task.observe(new)
                r.history[-1] = low
                self.rec.interventions.append({"t": t, "low": low.tolist(), "snapshot": snapshot_text(new)})
        for trig in self.triggers:
            if not should_replan(r.tracker, r.steps_since_plan, trig):
                continue
            if trig.kind == FINAL_STATE and r.pending:
                r.next_chunk()
                self.rec.plans.append({"t": t, "kind": "chunk", "traj": r.traj.tolist()})
                break
            if r.succeeded or not self._can(trig.kind):
                continue
            try:
                r.replan()
            except PlanningError:
                self.done, self.rec.ended_by = True, "planner-failure"
                return
            self.used[trig.kind] += 1
            self.rec.replans_used += 1
            self.rec.plans.append({"t": t, "kind": trig.kind, "traj": r.traj.tolist()})
            break

    def after_step(self, action, j_before, res):
        rec = self.rec
        rec.actions.append(np.asarray(action, dtype=float).tolist())
        rec.lows.append(self.runner.low.tolist())
        rec.rewards.append(res.reward)
        rec.traj_rewards.append(res.traj_reward)
        rec.task_rewards.append(res.task_reward)
        rec.j_before.append(j_before)
        rec.j.append(res.j)
        rec.steps = self.runner.t
        rec.success = bool(self.runner.succeeded)
        if res.done:
            self.done = True
            rec.ended_by = "success" if res.terminal else "time-limit"


def run_episodes(controller, runners, triggers=(), max_replans=None, intervention=None):
    """Lock-step closed loop over already reset runners. Returns one record each."""
    eps = [_Episode(r, triggers, max_replans, intervention) for r in runners]
    for e in eps:
        if e.runner.succeeded:
            e.done, e.rec.success, e.rec.ended_by = True, True, "success"
    while True:
        live = [e for e in eps if not e.done]
        for e in live:
            e.before_step()
        live = [e for e in live if not e.done]
        if not live:
            break
        actions = controller([e.runner for e in live])
        for e, a in zip(live, actions):
            j_before = e.runner.tracker.j_prev
            res = e.runner.step(a)
            e.after_step(a, j_before, res)
    return [e.rec for e in eps]


def run_with_replanning(controller, runner, triggers=None, max_replans=None, intervention=None):
    """Closed loop for one episode.

    On a fired trigger the plan is regenerated from the current world (the
    tracker restarts at j=0). A final-state trigger on a chunked periodic
    plan advances to the next chunk instead. ``max_replans`` is either a
    total budget or a per-trigger dict (default: unlimited final-state,
    3 timeout). Planner failure ends the episode as a failure.
    """
    if triggers is None:
        triggers = (ReplanTrigger(FINAL_STATE), ReplanTrigger(TIMEOUT, runner.task.max_episode_len // 4))
    return run_episodes(as_controller(controller), [runner], triggers, max_replans, intervention)[0]


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    n_episodes: int
    success_rate: float
    stderr: float
    episodes: list

    @classmethod
    def from_records(cls, records):
        n = len(records)
        p = float(np.mean([r.success for r in records])) if n else 0.0
        eps = [{"steps": r.steps, "j_final": r.j_final, "success": r.success,
                "replans_used": r.replans_used} for r in records]
        return cls(n, p, math.sqrt(p * (1 - p) / n) if n else 0.0, eps)

    def to_dict(self):
        return asdict(self)


def evaluation_runners(task, n_episodes, seed, stack=1, goal_mode="final", lookahead=5):
    seeds = np.random.SeedSequence(seed).spawn(n_episodes)
    return [EpisodeRunner(task, np.random.default_rng(s), stack=stack, goal_mode=goal_mode,
                          lookahead=lookahead).reset() for s in seeds]


def evaluate(controller, task, n_episodes=128, seed=0, replan=False, triggers=None, max_replans=None,
             batch_size=64, return_records=False):
    """Deterministic episodes (mean actions for a policy) with fresh plans."""
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    ctl = as_controller(controller)
    lookahead = ctl.policy.cfg.sgc_lookahead if isinstance(ctl, PolicyController) else 5
    runners = evaluation_runners(task, n_episodes, seed, ctl.stack, ctl.goal_mode, lookahead)
    if replan and triggers is None:
        triggers = (ReplanTrigger(FINAL_STATE), ReplanTrigger(TIMEOUT, task.max_episode_len // 4))
    triggers = triggers if replan else ()
    records = []
    with torch.no_grad():
        for i in range(0, n_episodes, batch_size):
            records += run_episodes(ctl, runners[i:i + batch_size], triggers, max_replans)
    report = EvalReport.from_records(records)
    return (report, records) if return_records else report


# --------------------------------------------------------------- intervention

def teleport_box(at_step, rng, min_sep=2.0):
    """Intervention moving the Box Pusher box to a random free spot at ``at_step``."""
    def apply(t, runner):
        if t != at_step:
            return None
        w = runner.world
        bw, half = w.box_width, w.half_arena - 1.5 * w.box_width
        for _ in range(1000):
            box = rng.uniform(-half, half, size=2)
            if min(np.linalg.norm(box - w.agent), np.linalg.norm(box - w.goal)) >= min_sep * bw:
                return replace(w, box=box)
        return None
    return apply


# ------------------------------------------------------------------ attention

@dataclass
class AttentionMap:
    """Final-token attention over prompt positions, one row per step.

    ``values[t]`` covers the valid prompt states at step t (mean over heads
    and layers, min-max scaled; a flat row is all ones). For mazes,
    ``cells[t]`` maps each prompt state to its grid cell and ``grid``
    averages the per-cell maxima over steps.
    """
    values: list
    positions: list
    timesteps: list
    cells: list = None
    grid: np.ndarray = None
    walls: np.ndarray = None

    def matrix(self):
        width = max((len(v) for v in self.values), default=0)
        out = np.zeros((len(self.values), width))
        for i, v in enumerate(self.values):
            out[i, :len(v)] = v
        return out


def minmax(v):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return v
    lo, hi = v.min(), v.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


def final_token_attention(attn, mask):
    """Mean over layers and heads of the last query row, restricted to valid prompt keys."""
    stacked = torch.stack([a[:, :, -1, :] for a in attn]).mean(dim=(0, 2))  # (B, T)
    L = mask.shape[1]
    rows = []
    for b in range(stacked.shape[0]):
        rows.append(stacked[b, :L][mask[b]].double().numpy())
    return rows


def cell_map(weights, cells, shape):
    grid = np.zeros(shape)
    seen = np.zeros(shape, dtype=bool)
    for wgt, (x, y) in zip(weights, cells):
        if 0 <= y < shape[0] and 0 <= x < shape[1]:
            grid[y, x] = max(grid[y, x], wgt) if seen[y, x] else wgt
            seen[y, x] = True
    return grid


def attention_heatmap(policy, record, task=None, batch_size=256):
    if policy.cfg.backbone != "causal-attention":
        raise UnsupportedOperationError(f"backbone {policy.cfg.backbone!r} has no attention weights")
    task = task or record.task()
    obs = record.observations(task)
    values, positions, timesteps = [], [], []
    policy.eval()
    with torch.no_grad():
        for i in range(0, len(obs), batch_size):
            batch = collate(obs[i:i + batch_size])
            rows = final_token_attention(policy.attention(batch), batch["prompt_mask"])
            for o, row in zip(obs[i:i + batch_size], rows):
                m = o["prompt_mask"]
                values.append(minmax(row))
                positions.append(o["prompt"][m] / task.feature_scale)
                timesteps.append(o["prompt_t"][m])
    amap = AttentionMap(values, positions, timesteps)
    if task.name == "couch":
        _, world = parse_snapshot(record.start)
        shape = world.maze.grid.shape
        amap.cells = [np.floor(p).astype(int) for p in positions]
        per_step = [cell_map(v, c, shape) for v, c in zip(values, amap.cells)]
        amap.grid = np.mean(per_step, axis=0) if per_step else np.zeros(shape)
        amap.walls = world.maze.grid.astype(bool)
    return amap


def _heat(v):
    """Black -> red -> yellow -> white."""
    v = float(np.clip(v, 0, 1))
    return (int(255 * min(1, 3 * v)), int(255 * min(1, max(0, 3 * v - 1))), int(255 * max(0, 3 * v - 2)))


def write_ppm(path, grid, walls=None, scale=8):
    """Binary PPM of a [0,1] grid; row 0 is drawn at the bottom (y up)."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    img = np.zeros((h * scale, w * scale, 3), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            color = (90, 90, 110) if walls is not None and walls[y, x] else _heat(grid[y, x])
            img[(h - 1 - y) * scale:(h - y) * scale, x * scale:(x + 1) * scale] = color
    with open(path, "wb") as fh:
        fh.write(f"P6 {w * scale} {h * scale} 255\n".encode())
        fh.write(img.tobytes())


def write_attention(path, amap, image_path=None):
    """Numeric grid as CSV plus a PPM image. Returns the image path."""
    grid = amap.grid if amap.grid is not None else amap.matrix()
    np.savetxt(path, grid, delimiter=",", fmt="%.6f")
    image_path = image_path or (str(path).rsplit(".", 1)[0] + ".ppm")
    if amap.grid is not None:
        write_ppm(image_path, amap.grid, amap.walls)
    else:
        # rows = steps (top to bottom), columns = prompt positions
        write_ppm(image_path, grid[::-1] if grid.size else np.zeros((1, 1)), scale=6)
    return image_path


# --------------------------------------------------------------- granularity

def granularity_sweep(train_fn, p_values, env="boxpusher", n_episodes=128, seed=0, plan=None):
    """Train (``train_fn(p) -> policy``) and evaluate one configuration per ``p``.

    Only the prompt sparsity changes; the reward always uses the full
    trajectory. Returns one row per p.
    """
    p_values = list(p_values)
    if not p_values:
        raise ConfigurationError("p_values must be nonempty")
    rows = []
    for p in p_values:
        policy = train_fn(p)
        task = make_task(env, plan={**(plan or {}), "p": p})
        report = evaluate(policy, task, n_episodes=n_episodes, seed=seed)
        rows.append({"p": p, "success_rate": report.success_rate, "stderr": report.stderr})
    return rows


__all__ = [
    "AttentionMap", "EpisodeRecord", "EvalReport", "OracleController", "PolicyController",
    "RandomController", "attention_heatmap", "evaluate", "granularity_sweep",
    "read_episode", "record_trace", "run_episodes", "run_with_replanning", "teleport_box",
    "write_attention", "write_episode",
]
