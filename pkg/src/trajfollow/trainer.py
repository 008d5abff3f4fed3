"""On-policy PPO: rollouts over lock-stepped environments, GAE, clipped updates.

Environments are stepped in lock-step inside one process and share one
batched policy call per step. ``deterministic=True`` pins torch to a single
thread and deterministic kernels so a seed reproduces the RunLog exactly.
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import yaml

from .envs import make_task
from .episodes import EpisodeRunner
from .exceptions import ConfigurationError
from .policy import OBS_KEYS, PolicyConfig, TranslationPolicy, save_checkpoint, to_tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPOConfig:
    policy_lr: float = 3e-4
    value_lr: float = 3e-4
    rollout_batch: int = 20000
    minibatch: int = 1024
    epochs: int = 2000
    grad_updates_per_epoch: int = 60
    max_episode_len: int = None  # None: the environment's own horizon
    n_parallel_envs: int = 20
    clip_ratio: float = 0.2
    target_kl: float = 0.15
    gae_lambda: float = 0.95
    discount: float = 0.99
    grad_accumulation: bool = False
    seed: int = 0

    def __post_init__(self):
        for f in ("policy_lr", "value_lr", "rollout_batch", "minibatch", "grad_updates_per_epoch",
                  "max_episode_len", "n_parallel_envs", "clip_ratio", "target_kl"):
            if f == "max_episode_len" and self.max_episode_len is None:
                continue
            if not getattr(self, f) > 0:
                raise ConfigurationError(f"{f} must be positive, got {getattr(self, f)!r}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.minibatch > self.rollout_batch:
            raise ConfigurationError("minibatch must not exceed rollout_batch")
        if not (0 <= self.gae_lambda <= 1 and 0 <= self.discount <= 1):
            raise ConfigurationError("gae_lambda and discount must lie in [0, 1]")

    @property
    def steps_per_env(self):
        return math.ceil(self.rollout_batch / self.n_parallel_envs)

    @property
    def optimizer_steps(self):
        return 3 if self.grad_accumulation else self.grad_updates_per_epoch


# ----------------------------------------------------------------------- GAE

def compute_gae(rewards, values, dones, gamma, lam, next_values=None):
    """Generalised advantage estimates and returns, time along axis 0.

    ``dones[t]`` ends the episode after step t. ``next_values[t]`` is the
    value used to bootstrap step t (zero for a terminal step, the value of
    the next observation for a truncated or still-running one); when it is
    omitted the next row of ``values`` is used and the end bootstraps 0.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise ConfigurationError("rewards, values and dones must have the same shape")
    if next_values is None:
        next_values = np.zeros_like(values)
        next_values[:-1] = values[1:] * ~dones[:-1]
    else:
        next_values = np.asarray(next_values, dtype=np.float64)
    deltas = rewards + gamma * next_values - values
    adv = np.zeros_like(values)
    running = np.zeros_like(values[0]) if values.ndim > 1 else 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = deltas[t] + gamma * lam * ~dones[t] * running
        adv[t] = running
    return adv, adv + values


def normalize(adv, eps=1e-8):
    """Zero mean, unit (population) variance; numpy arrays or torch tensors."""
    std = adv.std(unbiased=False) if isinstance(adv, torch.Tensor) else adv.std()
    return (adv - adv.mean()) / (std + eps)


# -------------------------------------------------------------------- buffer

@dataclass
class RolloutBuffer:
    """Transitions laid out (time, env). Raw states and trackers are kept so every
    stored reward can be recomputed."""
    obs: dict
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    traj_rewards: np.ndarray
    task_rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    dones: np.ndarray
    terminals: np.ndarray
    j: np.ndarray
    j_before: np.ndarray
    lows: np.ndarray
    traj_ids: np.ndarray
    trajs: list
    episodes: list = field(default_factory=list)
    advantages: np.ndarray = None
    returns: np.ndarray = None

    def __len__(self):
        return self.rewards.size

    def finish(self, gamma, lam):
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, gamma, lam,
                                                    self.next_values)
        return self

    def flat(self):
        n = len(self)
        out = {k: v.reshape(n, *v.shape[2:]) for k, v in self.obs.items()}
        out.update(actions=self.actions.reshape(n, -1), log_probs=self.log_probs.reshape(n),
                   advantages=self.advantages.reshape(n), returns=self.returns.reshape(n),
                   values=self.values.reshape(n))
        return out


def obs_batch(obs_list, keys=OBS_KEYS):
    return {k: to_tensor(k, np.stack([o[k] for o in obs_list])) for k in keys}


def collect_rollouts(runners, policy, cfg, generator, stats=None):
    """Step every runner ``cfg.steps_per_env`` times with sampled actions.

    Finished episodes are reset in place. A step that ends by truncation (or
    by the end of collection) bootstraps from the value of the next
    observation; a terminal (success) step bootstraps zero.
    """
    T, N = cfg.steps_per_env, len(runners)
    policy.eval()
    obs = [r.obs() for r in runners]
    store = {k: [] for k in OBS_KEYS}
    cols = {k: np.zeros((T, N)) for k in ("log_probs", "rewards", "traj_rewards", "task_rewards",
                                           "values", "next_values")}
    dones = np.zeros((T, N), dtype=bool)
    terminals = np.zeros((T, N), dtype=bool)
    js = np.zeros((T, N), dtype=np.int64)
    j_before = np.zeros((T, N), dtype=np.int64)
    traj_ids = np.zeros((T, N), dtype=np.int64)
    lows = np.zeros((T, N, runners[0].task.low_dim))
    actions = np.zeros((T, N, runners[0].task.action_dim))
    trajs, traj_key = [], {}
    episodes = []
    ep_return = stats if stats is not None else [0.0] * N

    def traj_id(r):
        key = id(r.traj)
        if key not in traj_key:
            traj_key[key] = len(trajs)
            trajs.append(r.traj)
        return traj_key[key]

    for t in range(T):
        batch = obs_batch(obs)
        for k in OBS_KEYS:
            store[k].append(np.stack([o[k] for o in obs]))
        act, val, logp = policy.act(batch, mode="sample", generator=generator)
        cols["values"][t], cols["log_probs"][t] = val, logp
        actions[t] = act
        bootstrap = []
        for i, r in enumerate(runners):
            traj_ids[t, i] = traj_id(r)
            j_before[t, i] = r.tracker.j_prev
            res = r.step(act[i])
            lows[t, i] = r.low
            cols["rewards"][t, i] = res.reward
            cols["traj_rewards"][t, i] = res.traj_reward
            cols["task_rewards"][t, i] = res.task_reward
            js[t, i] = res.j
            dones[t, i], terminals[t, i] = res.done, res.terminal
            ep_return[i] += res.reward
            if not res.terminal and (res.done or t == T - 1):
                bootstrap.append((i, r.obs()))
            if res.done:
                episodes.append({"return": ep_return[i], "success": bool(r.succeeded), "steps": r.t,
                                 "j_final": r.tracker.j_prev, "n": r.tracker.n})
                ep_return[i] = 0.0
                r.reset()
            obs[i] = r.obs()
        # next-state values: the following step's value unless the episode ended
        if bootstrap:
            idx = [i for i, _ in bootstrap]
            with torch.no_grad():
                bv = policy.value(obs_batch([o for _, o in bootstrap]))
            cols["next_values"][t, idx] = bv.numpy()
        if t > 0:
            cont = ~dones[t - 1]
            cols["next_values"][t - 1, cont] = cols["values"][t, cont]
    # the last row's running episodes were bootstrapped above
    return RolloutBuffer(obs={k: np.stack(v) for k, v in store.items()}, actions=actions,
                         dones=dones, terminals=terminals, j=js, j_before=j_before, lows=lows,
                         traj_ids=traj_ids, trajs=trajs, episodes=episodes, **cols)


# -------------------------------------------------------------------- update

@dataclass
class UpdateStats:
    kl: float = 0.0
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    clip_frac: float = 0.0
    actor_updates: int = 0
    critic_updates: int = 0
    stopped_early: bool = False
    kl_history: list = field(default_factory=list)


def _minibatches(n, size, count, rng):
    """``count`` index sets of ``size``, cycling through fresh permutations."""
    perm, pos = rng.permutation(n), 0
    for _ in range(count):
        if pos + size > n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos:pos + size]
        pos += size


def ppo_update(policy, data, cfg, actor_opt, critic_opt, rng):
    """Clipped-surrogate actor steps and squared-error critic steps on ``data``.

    Before each actor step the KL estimate ``mean(old_logp - new_logp)`` on
    that step's minibatch is checked; once it exceeds ``target_kl`` no
    further actor step is applied this epoch (critic steps continue).
    With gradient accumulation the minibatches are grouped into three
    optimizer steps.
    """
    policy.train()
    n = len(data["log_probs"])
    size = min(cfg.minibatch, n)
    tensors = {k: to_tensor(k, v) if k in OBS_KEYS else torch.as_tensor(v, dtype=torch.float32)
               for k, v in data.items()}
    groups = [[] for _ in range(cfg.optimizer_steps)]
    for i, idx in enumerate(_minibatches(n, size, cfg.grad_updates_per_epoch, rng)):
        groups[i * cfg.optimizer_steps // cfg.grad_updates_per_epoch].append(idx)
    stats = UpdateStats()
    a_losses, c_losses, clips = [], [], []
    for group in groups:
        if not group:
            continue
        actor_live = not stats.stopped_early
        actor_opt.zero_grad()
        critic_opt.zero_grad()
        kls = []
        for idx in group:
            ix = torch.as_tensor(idx)
            mb = {k: tensors[k][ix] for k in OBS_KEYS}
            adv = normalize(tensors["advantages"][ix])
            if actor_live:
                logp = policy.log_prob(mb, tensors["actions"][ix])
                old = tensors["log_probs"][ix]
                kls.append(float((old - logp).mean().detach()))
                ratio = torch.exp(logp - old)
                clipped = torch.clamp(ratio, 1 - cfg.clip_ratio, 1 + cfg.clip_ratio)
                a_loss = -torch.min(ratio * adv, clipped * adv).mean()
                (a_loss / len(group)).backward()
                a_losses.append(float(a_loss.detach()))
                clips.append(float(((ratio - 1).abs() > cfg.clip_ratio).float().mean()))
            c_loss = (policy.value(mb) - tensors["returns"][ix]).pow(2).mean()
            (c_loss / len(group)).backward()
            c_losses.append(float(c_loss.detach()))
        if not all(math.isfinite(x) for x in a_losses[-len(group):] + c_losses[-len(group):]):
            raise FloatingPointError("non-finite PPO loss; aborting the epoch")
        if actor_live:
            kl = float(np.mean(kls))
            stats.kl_history.append(kl)
            stats.kl = kl
            if kl > cfg.target_kl:
                stats.stopped_early = True
            else:
                actor_opt.step()
                stats.actor_updates += 1
        critic_opt.step()
        stats.critic_updates += 1
    stats.actor_loss = float(np.mean(a_losses)) if a_losses else 0.0
    stats.critic_loss = float(np.mean(c_losses)) if c_losses else 0.0
    stats.clip_frac = float(np.mean(clips)) if clips else 0.0
    policy.eval()
    return stats


# --------------------------------------------------------------- run config

@dataclass
class RunConfig:
    env: str = "boxpusher"
    ppo: PPOConfig = field(default_factory=PPOConfig)
    policy: dict = field(default_factory=dict)       # PolicyConfig overrides
    plan: dict = field(default_factory=dict)         # PlanConfig overrides
    env_options: dict = field(default_factory=dict)  # environment config overrides
    reward: str = "combined"                         # "combined" or "task"
    terminate_on_success: bool = True
    checkpoint_every: int = 50
    out_dir: str = "runs/default"
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.ppo, dict):
            self.ppo = PPOConfig(**self.ppo)
        if self.reward not in ("combined", "task"):
            raise ConfigurationError(f"reward must be 'combined' or 'task', got {self.reward!r}")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")

    def task(self):
        opts = dict(self.env_options)
        if self.ppo.max_episode_len is not None:
            opts.setdefault("max_episode_len", self.ppo.max_episode_len)
        return make_task(self.env, plan=self.plan, **opts)

    def policy_config(self, task=None):
        task = task or self.task()
        try:
            return PolicyConfig.for_task(task, **self.policy)
        except TypeError as exc:
            raise ConfigurationError(f"bad policy option: {exc}") from exc

    def resolved(self):
        """Every field spelled out: PPO, policy, plan and environment."""
        task = self.task()
        out = asdict(self)
        out["ppo"] = asdict(self.ppo)
        out["policy"] = self.policy_config(task).to_dict()
        out["policy"]["layer_dims"] = list(out["policy"]["layer_dims"])
        out["policy"]["head_dims"] = list(out["policy"]["head_dims"])
        out["plan"] = asdict(task.plan_cfg)
        out["env_options"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(task.cfg).items()}
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.resolved(), sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigurationError("run config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown run config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "ppo" in d:
                d["ppo"] = PPOConfig(**(d["ppo"] or {}))
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"bad run config: {exc}") from exc

    @classmethod
    def from_yaml(cls, path):
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_dict(data or {})


def set_deterministic(seed, on=True):
    torch.manual_seed(seed)
    if on:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def make_runners(task, run_cfg, pcfg, seed):
    seeds = np.random.SeedSequence(seed).spawn(run_cfg.ppo.n_parallel_envs)
    runners = []
    for s in seeds:
        r = EpisodeRunner(task, np.random.default_rng(s), stack=pcfg.k,
                          goal_mode="subgoal" if pcfg.backbone == "feedforward-sgc" else "final",
                          lookahead=pcfg.sgc_lookahead,
                          terminate_on_success=run_cfg.terminate_on_success,
                          reward_mode=run_cfg.reward, advance_chunks=True)
        runners.append(r.reset())
    return runners


class RunLog:
    """Line-delimited JSON records, one per epoch."""

    FIELDS = ("epoch", "env_steps", "success_rate", "mean_return", "kl", "actor_loss", "critic_loss")

    def __init__(self, path=None):
        self.path = path
        self.records = []
        if path:
            open(path, "w").close()

    def append(self, record):
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")

    @staticmethod
    def read(path):
        with open(path) as fh:
            return [json.loads(ln) for ln in fh if ln.strip()]


def train(run_cfg, callback=None):
    """Collect -> update for ``ppo.epochs`` epochs. Returns ``(policy, RunLog)``.

    Writes ``config.yaml``, ``log.jsonl`` and ``ckpt_XXXX.npz``/``final.npz``
    under ``out_dir`` (when it is not None).
    """
    cfg = run_cfg.ppo
    set_deterministic(cfg.seed, run_cfg.deterministic)
    task = run_cfg.task()
    pcfg = run_cfg.policy_config(task)
    out = run_cfg.out_dir
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.yaml"), "w") as fh:
            fh.write(run_cfg.to_yaml())
    policy = TranslationPolicy(pcfg)
    policy.eval()
    actor_opt = torch.optim.Adam(policy.actor_parameters(), lr=cfg.policy_lr)
    critic_opt = torch.optim.Adam(policy.critic.parameters(), lr=cfg.value_lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    runners = make_runners(task, run_cfg, pcfg, cfg.seed)
    runlog = RunLog(os.path.join(out, "log.jsonl") if out else None)
    returns = [0.0] * len(runners)
    env_steps = 0
    for epoch in range(1, cfg.epochs + 1):
        buf = collect_rollouts(runners, policy, cfg, gen, stats=returns).finish(cfg.discount, cfg.gae_lambda)
        env_steps += len(buf)
        stats = ppo_update(policy, buf.flat(), cfg, actor_opt, critic_opt, rng)
        eps = buf.episodes
        record = {
            "epoch": epoch, "env_steps": env_steps,
            "success_rate": float(np.mean([e["success"] for e in eps])) if eps else 0.0,
            "mean_return": float(np.mean([e["return"] for e in eps])) if eps else 0.0,
            "kl": stats.kl, "actor_loss": stats.actor_loss, "critic_loss": stats.critic_loss,
            "episodes": len(eps), "actor_updates": stats.actor_updates, "clip_frac": stats.clip_frac,
        }
        runlog.append(record)
        log.info("epoch %d steps %d success %.3f return %.2f kl %.4f", epoch, env_steps,
                 record["success_rate"], record["mean_return"], stats.kl)
        if callback is not None:
            callback(record, policy)
        if out and epoch % run_cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out, f"ckpt_{epoch:04d}.npz"), policy, cfg.seed,
                            {"env": run_cfg.env, "epoch": epoch, "plan": run_cfg.plan,
                             "env_options": run_cfg.env_options})
    if out:
        save_checkpoint(os.path.join(out, "final.npz"), policy, cfg.seed,
                        {"env": run_cfg.env, "epoch": cfg.epochs, "plan": run_cfg.plan,
                         "env_options": run_cfg.env_options})
    return policy, runlog
