"""Shared domain pieces: the low-to-high state map, the weighted
dissimilarity, and the plain-text trajectory file format.

Low states, high states and actions are plain float64 numpy vectors; an
abstract trajectory is an ``(n, D)`` float64 array of high states.
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_trajectory, check_vector
from .exceptions import ConfigurationError

AGENT_WEIGHT = 0.1
OBJECT_WEIGHT = 0.9


@dataclass(frozen=True)
class StateMap:
    """Projection ``f`` from low-level to high-level coordinates.

    ``indices`` selects, in order, the low-state entries forming the high state.
    """

    env: str
    low_dim: int
    indices: tuple

    @property
    def high_dim(self):
        return len(self.indices)

    @classmethod
    def identity(cls, dim, env="identity"):
        return cls(env, dim, tuple(range(dim)))

    def __call__(self, low):
        return apply_state_map(low, self)


@dataclass(frozen=True)
class Dissimilarity:
    """Weighted Euclidean distance between ``f(low)`` and a high state.

    ``weights`` has one entry per high coordinate; each coordinate
    difference is multiplied by its weight before taking the norm.
    """

    state_map: StateMap
    weights: np.ndarray = field(compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.state_map.high_dim,):
            raise ConfigurationError(
                f"expected {self.state_map.high_dim} weights, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigurationError("dissimilarity weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def unit(cls, state_map):
        return cls(state_map, np.ones(state_map.high_dim))

    def __call__(self, low, high):
        return dissimilarity(low, high, self)

    def to_many(self, low, highs):
        """Distances from ``low`` to every row of ``highs`` (vectorised).

        Skips input validation; used on the rollout hot path.
        """
        proj = np.asarray(low, dtype=np.float64)[list(self.state_map.indices)]
        diff = (highs - proj) * self.weights
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def apply_state_map(low, state_map):
    low = check_vector(low, state_map.low_dim, name=f"{state_map.env} low state")
    return low[list(state_map.indices)]


def dissimilarity(low, high, d):
    high = check_vector(high, d.state_map.high_dim, name="high state")
    diff = (apply_state_map(low, d.state_map) - high) * d.weights
    return float(np.sqrt(diff @ diff))


# Box Pusher low state: agent xy, box xy, goal xy. High state: agent xy, box xy.
BOXPUSHER_MAP = StateMap("boxpusher", 6, (0, 1, 2, 3))
# Couch low state: 3x3 patch (9), forward direction (2), position (2).
COUCH_MAP = StateMap("couch", 13, (11, 12))

BOXPUSHER_DISSIMILARITY = Dissimilarity(
    BOXPUSHER_MAP, np.array([AGENT_WEIGHT, AGENT_WEIGHT, OBJECT_WEIGHT, OBJECT_WEIGHT]))
# no manipulated object, so no group to down-weight against
COUCH_DISSIMILARITY = Dissimilarity.unit(COUCH_MAP)

STATE_MAPS = {"boxpusher": BOXPUSHER_MAP, "couch": COUCH_MAP}
DISSIMILARITIES = {"boxpusher": BOXPUSHER_DISSIMILARITY, "couch": COUCH_DISSIMILARITY}


def write_trajectory(path, traj, env):
    traj = check_trajectory(traj)
    with open(path, "w") as fh:
        fh.write(f"dim={traj.shape[1]} env={env}\n")
        for row in traj:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_trajectory(path):
    """Read a trajectory file. Returns ``(traj, env)``."""
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ConfigurationError(f"cannot read trajectory {path}: {exc}") from exc
    if not lines:
        raise ConfigurationError(f"{path}: empty trajectory file")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        dim, env = int(header["dim"]), header["env"]
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"{path}: bad header {lines[0]!r}") from exc
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if not rows:
        raise ConfigurationError(f"{path}: no states")
    return check_trajectory(np.array(rows, dtype=np.float64), dim=dim), env
