"""Command line entry point.

Exit codes: 0 success, 1 task failure, 2 configuration error.
"""
import json
import logging
import sys

import click
import numpy as np

from .core import read_trajectory, write_trajectory
from .envs import make_task, read_snapshot, task_for_world
from .episodes import EpisodeRunner
from .exceptions import ConfigurationError, PlanningError

EXIT_OK, EXIT_TASK_FAILURE, EXIT_CONFIG = 0, 1, 2


class _Group(click.Group):
    """Maps configuration errors (ours and click's usage errors) to exit code 2."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigurationError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Trajectory-following policies: train, evaluate, plan and inspect."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", default=None, help="Override the config's output directory.")
def train(config_path, out_dir):
    """Run PPO from a YAML run config."""
    from .trainer import RunConfig, train as run_train

    cfg = RunConfig.from_yaml(config_path)
    if out_dir:
        cfg.out_dir = out_dir
    _, runlog = run_train(cfg)
    last = runlog.records[-1] if runlog.records else {}
    click.echo(json.dumps({"out_dir": cfg.out_dir, "epochs": len(runlog.records), **last}))


def _load_policy(path):
    from .policy import load_checkpoint

    return load_checkpoint(path)


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--env", "env_tag", required=True)
@click.option("--episodes", default=128, show_default=True, type=int)
@click.option("--replan", is_flag=True, help="Enable final-state and timeout replanning.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--min-success", default=None, type=float,
              help="Exit 1 when the success rate falls below this value.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Write the report as JSON.")
def eval_cmd(ckpt, env_tag, episodes, replan, seed, min_success, out):
    """Deterministic (mean-action) evaluation of a checkpoint."""
    from .harness import evaluate

    policy, meta = _load_policy(ckpt)
    extra = meta.get("extra", {})
    task = make_task(env_tag, plan=extra.get("plan") or None)
    if task.low_dim != policy.cfg.low_dim or task.action_dim != policy.cfg.action_dim:
        raise ConfigurationError(f"checkpoint was not trained for environment {env_tag!r}")
    report = evaluate(policy, task, n_episodes=episodes, seed=seed, replan=replan)
    summary = {"env": env_tag, "n_episodes": report.n_episodes, "success_rate": report.success_rate,
               "stderr": report.stderr}
    if out:
        with open(out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    click.echo(json.dumps(summary))
    if min_success is not None and report.success_rate < min_success:
        sys.exit(EXIT_TASK_FAILURE)


@main.command()
@click.option("--snapshot", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--variant-seed", default=0, show_default=True, type=int,
              help="Seed for choosing among feasible plan variants.")
def plan(snapshot, out, variant_seed):
    """Generate an abstract trajectory for a saved world."""
    env, world = read_snapshot(snapshot)
    task = task_for_world(env, world)
    try:
        traj = task.plan(world, np.random.default_rng(variant_seed))
    except PlanningError as exc:
        click.echo(f"planning failed: {exc}", err=True)
        sys.exit(EXIT_TASK_FAILURE)
    write_trajectory(out, traj, env)
    click.echo(json.dumps({"env": env, "states": len(traj)}))


@main.command()
@click.option("--traj", "traj_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--snapshot", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Follow the trajectory with a trained policy instead of the scripted oracle.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Write the episode file.")
def replay(traj_path, snapshot, ckpt, out):
    """Execute a trajectory from a saved world; exit 1 if the task is not solved."""
    from .harness import OracleController, PolicyController, run_with_replanning, write_episode

    traj, traj_env = read_trajectory(traj_path)
    env, world = read_snapshot(snapshot)
    if traj_env != env:
        raise ConfigurationError(f"trajectory is for {traj_env!r} but the snapshot is {env!r}")
    task = task_for_world(env, world)
    if traj.shape[1] != task.high_dim:
        raise ConfigurationError(f"trajectory dimension {traj.shape[1]} != {task.high_dim}")
    if ckpt:
        policy, _ = _load_policy(ckpt)
        ctl = PolicyController(policy)
        runner = EpisodeRunner(task, np.random.default_rng(0), stack=policy.cfg.k,
                               goal_mode=policy.goal_mode, lookahead=policy.cfg.sgc_lookahead)
    else:
        ctl = OracleController()
        runner = EpisodeRunner(task, np.random.default_rng(0), stack=1)
    runner.reset(world=world, traj=traj)
    rec = run_with_replanning(ctl, runner, triggers=(), max_replans=0)
    if out:
        write_episode(out, rec)
    click.echo(json.dumps({"success": rec.success, "steps": rec.steps, "j_final": rec.j_final,
                           "n": len(traj)}))
    if not rec.success:
        sys.exit(EXIT_TASK_FAILURE)


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--episode", "episode_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Numeric grid (CSV); the image is written next to it as .ppm.")
def attn(ckpt, episode_path, out):
    """Attention heatmap of a causal-attention checkpoint along a recorded episode."""
    from .exceptions import UnsupportedOperationError
    from .harness import attention_heatmap, read_episode, write_attention

    policy, _ = _load_policy(ckpt)
    rec = read_episode(episode_path)
    try:
        amap = attention_heatmap(policy, rec)
    except UnsupportedOperationError as exc:
        raise ConfigurationError(str(exc)) from exc
    image = write_attention(out, amap)
    click.echo(json.dumps({"grid": out, "image": image, "steps": len(amap.values)}))


@main.command()
@click.option("--episode", "episode_path", required=True, type=click.Path(exists=True, dir_okay=False))
def trace(episode_path):
    """Reward trace (step, j_t, traj_reward, running_sum) as JSON lines."""
    from .harness import read_episode, record_trace

    for row in record_trace(read_episode(episode_path)):
        click.echo(json.dumps(row))


@main.command()
@click.option("--env", "env_tag", required=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--episode-out", default=None, type=click.Path(dir_okay=False),
              help="Also run the oracle from this world and record the episode.")
def snapshot(env_tag, seed, out, episode_out):
    """Draw a fresh world and save it as a snapshot file."""
    from .envs import write_snapshot
    from .harness import OracleController, run_with_replanning, write_episode

    task = make_task(env_tag)
    runner = EpisodeRunner(task, np.random.default_rng(seed), stack=1).reset()
    write_snapshot(out, runner.world)
    result = {"snapshot": out}
    if episode_out:
        rec = run_with_replanning(OracleController(), runner, triggers=(), max_replans=0)
        write_episode(episode_out, rec)
        result.update(episode=episode_out, success=rec.success)
    click.echo(json.dumps(result))


if __name__ == "__main__":
    main()
