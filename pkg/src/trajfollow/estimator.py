"""scikit-learn flavoured wrapper around training and evaluation."""
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .harness import evaluate
from .policy import collate
from .trainer import PPOConfig, RunConfig, train


class TrajectoryTranslator(BaseEstimator):
    """Learns a trajectory-following policy for one environment.

    ``fit`` runs PPO (the data comes from the environment, so ``X`` is
    ignored), ``predict`` maps observation dicts to mean actions and
    ``score`` is the deterministic evaluation success rate.
    """

    def __init__(self, env="boxpusher", epochs=10, rollout_batch=2000, minibatch=500,
                 grad_updates_per_epoch=8, n_parallel_envs=10, policy=None, plan=None,
                 seed=0, out_dir=None):
        self.env = env
        self.epochs = epochs
        self.rollout_batch = rollout_batch
        self.minibatch = minibatch
        self.grad_updates_per_epoch = grad_updates_per_epoch
        self.n_parallel_envs = n_parallel_envs
        self.policy = policy
        self.plan = plan
        self.seed = seed
        self.out_dir = out_dir

    def run_config(self):
        ppo_names = {f.name for f in fields(PPOConfig)}
        ppo = {k: v for k, v in self.get_params().items() if k in ppo_names}
        return RunConfig(env=self.env, ppo=PPOConfig(**ppo), policy=dict(self.policy or {}),
                         plan=dict(self.plan or {}), out_dir=self.out_dir)

    def fit(self, X=None, y=None):
        cfg = self.run_config()
        self.policy_, runlog = train(cfg)
        self.task_ = cfg.task()
        self.log_ = runlog.records
        return self

    def predict(self, X):
        """Mean actions (normalised space) for a list of runner observations."""
        check_is_fitted(self, "policy_")
        action, _, _ = self.policy_.act(collate(list(X)), mode="mean")
        return np.asarray(action)

    def score(self, X=None, y=None, n_episodes=32, seed=1):
        check_is_fitted(self, "policy_")
        return evaluate(self.policy_, self.task_, n_episodes=n_episodes, seed=seed).success_rate
