"""Couch Moving: steer a rigid couch through a procedurally generated maze.

Maze layout (unit grid cells, ``grid[y, x] == 1`` is wall). Starting from a
3x3 chamber, each of the ``n_corners`` legs is::

    chamber -> 2-wide stretch -> corner -> 1-wide corridor -> next chamber

and the corridor after the last corner ends at the goal. The couch
(1.9 x 0.7) travels along 1-wide corridors long-side first, can cross the
2-wide stretches sideways but cannot rotate there, and can only turn
around inside chambers. To leave a corner into the 1-wide exit corridor
its long axis must already be parallel to that corridor.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..exceptions import ConfigurationError

DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))
LENGTHS = {"short": (1, 3), "long": (2, 4)}  # inclusive corridor length ranges, in cells


def _rot(d, turn):
    return (-turn * d[1], turn * d[0])


def _add(a, b, k=1):
    return (a[0] + k * b[0], a[1] + k * b[1])


@dataclass
class Maze:
    grid: np.ndarray                # (rows, cols) int8, indexed [y, x]
    path: np.ndarray                # (m, 2) int cells (x, y), start -> goal
    path_points: np.ndarray         # (m, 2) plan positions for each path cell
    path_segment: np.ndarray        # (m,) index of the upcoming corner
    chamber_centers: np.ndarray     # (n, 2) positions
    chamber_cells: frozenset
    corners: np.ndarray             # (n, 2) int cells
    exit_dirs: np.ndarray           # (n, 2) direction of the corridor after each corner
    forward: np.ndarray = field(repr=False)   # (rows, cols, 2)
    upcoming: np.ndarray = field(repr=False)  # (rows, cols) upcoming corner index
    orient: np.ndarray = field(repr=False)    # (rows, cols) corner whose exit sets the long axis
    start_dir: tuple = (1, 0)
    variant: str = "short"
    n_corners: int = 3
    seed: object = None
    corridor_lengths: tuple = ()

    @property
    def start(self):
        return self.path_points[0]

    @property
    def goal(self):
        return self.path_points[-1]

    def is_wall(self, x, y):
        rows, cols = self.grid.shape
        if x < 0 or y < 0 or x >= cols or y >= rows:
            return True
        return bool(self.grid[y, x])


def _layout(variant, n_corners, rng):
    lo, hi = LENGTHS[variant]
    owner = {}
    path = []  # (cell, point offset, upcoming corner, corner fixing the required long axis)
    chambers, corners, exits, lengths = [], [], [], []
    element = 0

    def claim(cell, el):
        if cell in owner and owner[cell] != el:
            return False
        owner[cell] = el
        return True

    d = DIRS[int(rng.integers(4))]
    start_dir = d
    c = (0, 0)
    ok = True
    for k in range(n_corners):
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                ok &= claim((c[0] + i, c[1] + j), element)
        element += 1
        chambers.append(c)
        turn = 1 if rng.random() < 0.5 else -1
        dp = _rot(d, turn)
        if k > 0:
            path.append((_add(c, d, -1), (0.0, 0.0), k, k - 1))
        path.append((c, (0.0, 0.0), k, k))
        path.append((_add(c, d), (0.5 * dp[0], 0.5 * dp[1]), k, k))
        stretch = int(rng.integers(lo, hi + 1))
        for i in range(1, stretch + 1):
            cell = _add(c, d, 1 + i)
            ok &= claim(cell, element)
            ok &= claim(_add(cell, dp), element)
            path.append((cell, (0.5 * dp[0], 0.5 * dp[1]), k, k))
        element += 1
        corner = _add(c, d, 1 + stretch)
        corners.append(corner)
        exits.append(dp)
        path.append((_add(corner, dp), (0.0, 0.0), k + 1, k))
        corridor = int(rng.integers(lo, hi + 1))
        lengths += [stretch, corridor]
        for i in range(1, corridor + 1):
            cell = _add(corner, dp, 1 + i)
            ok &= claim(cell, element)
            path.append((cell, (0.0, 0.0), k + 1, k))
        if k == n_corners - 1:
            ok &= claim(_add(corner, dp, 2 + corridor), element)  # room past the goal cell
        element += 1
        c = _add(corner, dp, 1 + corridor + 2)
        d = dp
    if not ok:
        return None
    for cell, el in owner.items():
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                other = owner.get((cell[0] + i, cell[1] + j))
                if other is not None and abs(other - el) > 1:
                    return None
    return owner, path, chambers, corners, exits, start_dir, lengths


def generate_maze(variant, n_corners, rng, max_attempts=100, seed=None):
    """Random maze with exactly ``n_corners`` corners.

    Self-intersecting layouts are redrawn from ``rng``; gives up after
    ``max_attempts`` layouts.
    """
    if variant not in LENGTHS:
        raise ConfigurationError(f"unknown maze variant {variant!r}")
    if n_corners < 1:
        raise ConfigurationError("n_corners must be >= 1")
    for _ in range(max_attempts):
        layout = _layout(variant, n_corners, rng)
        if layout is not None:
            break
    else:
        raise ConfigurationError(f"maze generation failed after {max_attempts} attempts")
    owner, path, chambers, corners, exits, start_dir, lengths = layout

    xs = [c[0] for c in owner]
    ys = [c[1] for c in owner]
    ox, oy = 1 - min(xs), 1 - min(ys)
    grid = np.ones((max(ys) + oy + 2, max(xs) + ox + 2), dtype=np.int8)
    for x, y in owner:
        grid[y + oy, x + ox] = 0

    cells = np.array([(p[0][0] + ox, p[0][1] + oy) for p in path], dtype=np.int64)
    points = cells + 0.5 + np.array([p[1] for p in path])
    segment = np.array([p[2] for p in path], dtype=np.int64)
    axis_from = np.array([p[3] for p in path], dtype=np.int64)
    fwd = np.diff(cells, axis=0).astype(np.float64)
    fwd = np.vstack([fwd, fwd[-1:]])

    rows, cols = grid.shape
    forward = np.zeros((rows, cols, 2))
    upcoming = np.full((rows, cols), n_corners, dtype=np.int64)
    orient = np.zeros((rows, cols), dtype=np.int64)
    free = np.argwhere(grid == 0)  # (y, x)
    centers = cells + 0.5
    for y, x in free:
        i = int(np.argmin(np.linalg.norm(centers - (x + 0.5, y + 0.5), axis=1)))
        forward[y, x] = fwd[i]
        upcoming[y, x] = segment[i]
        orient[y, x] = axis_from[i]

    chamber_cells = frozenset((c[0] + ox + i, c[1] + oy + j)
                              for c in chambers for i in (-1, 0, 1) for j in (-1, 0, 1))
    return Maze(
        grid=grid, path=cells, path_points=points, path_segment=segment,
        chamber_centers=np.array([(c[0] + ox + 0.5, c[1] + oy + 0.5) for c in chambers]),
        chamber_cells=chamber_cells,
        corners=np.array([(c[0] + ox, c[1] + oy) for c in corners], dtype=np.int64),
        exit_dirs=np.array(exits, dtype=np.float64),
        forward=forward, upcoming=upcoming, orient=orient, start_dir=start_dir,
        variant=variant, n_corners=n_corners, seed=seed, corridor_lengths=tuple(lengths),
    )


def make_maze(variant, n_corners, seed):
    return generate_maze(variant, n_corners, np.random.default_rng(seed), seed=seed)


# ---------------------------------------------------------------- dynamics

@dataclass(frozen=True)
class CouchConfig:
    variant: str = "short"
    n_corners: int = 3
    half_length: float = 0.95
    half_width: float = 0.35
    dt: float = 0.1
    mass: float = 1.0
    inertia: float = 1.0
    damping: float = 0.25         # fraction of velocity removed per step
    angular_damping: float = 0.25
    force_max: float = 10.0
    torque_max: float = 5.0
    eps_chamber: float = 1.0
    eps_goal: float = 1.0
    max_episode_len: int = 150


@dataclass(frozen=True)
class CouchState:
    pose: np.ndarray       # x, y, theta
    velocity: np.ndarray   # vx, vy, omega
    half_length: float = 0.95
    half_width: float = 0.35
    step_count: int = 0


def wrap_angle(theta):
    """Map to (-pi, pi]."""
    t = math.remainder(theta, 2 * math.pi)
    return math.pi if t == -math.pi else t


def reset(cfg, rng):
    """Fresh maze and a couch at rest in the start chamber, aligned with the first corridor."""
    # an integer seed keeps the maze reproducible from its file header
    maze = make_maze(cfg.variant, cfg.n_corners, int(rng.integers(2**31)))
    return initial_state(maze, cfg), maze


def initial_state(maze, cfg=CouchConfig()):
    theta = math.atan2(maze.start_dir[1], maze.start_dir[0])
    pose = np.array([maze.start[0], maze.start[1], wrap_angle(theta)])
    return CouchState(pose, np.zeros(3), cfg.half_length, cfg.half_width, 0)


def collides(maze, pose, half_length, half_width, tol=1e-9):
    """True if the couch rectangle overlaps any wall cell with positive depth."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    ex = half_length * abs(c) + half_width * abs(s)
    ey = half_length * abs(s) + half_width * abs(c)
    x0, x1 = math.floor(x - ex), math.floor(x + ex)
    y0, y1 = math.floor(y - ey), math.floor(y + ey)
    walls = [(i, j) for j in range(y0, y1 + 1) for i in range(x0, x1 + 1) if maze.is_wall(i, j)]
    if not walls:
        return False
    cells = np.array(walls, dtype=np.float64) + 0.5  # cell centers
    # world axes: bounding-box overlap
    pen_x = ex + 0.5 - np.abs(cells[:, 0] - x)
    pen_y = ey + 0.5 - np.abs(cells[:, 1] - y)
    # couch axes
    rel = cells - (x, y)
    cell_u = 0.5 * (abs(c) + abs(s))
    pen_u = half_length + cell_u - np.abs(rel @ (c, s))
    pen_v = half_width + cell_u - np.abs(rel @ (-s, c))
    hit = (pen_x > tol) & (pen_y > tol) & (pen_u > tol) & (pen_v > tol)
    return bool(hit.any())


def step(state, maze, action, cfg=CouchConfig()):
    """Semi-implicit Euler with damping; blocked axes slide and lose velocity.

    Translation along x, then y, then rotation are applied in turn. A blocked
    component advances as far as it can (bisection on the free fraction)
    and its velocity is zeroed.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ConfigurationError(f"Couch action must be 3 finite values, got {action!r}")
    force = np.clip(a[:2], -cfg.force_max, cfg.force_max)
    torque = float(np.clip(a[2], -cfg.torque_max, cfg.torque_max))
    vel = state.velocity.copy()
    vel[:2] = (1 - cfg.damping) * vel[:2] + cfg.dt * force / cfg.mass
    vel[2] = (1 - cfg.angular_damping) * vel[2] + cfg.dt * torque / cfg.inertia
    pose = state.pose.copy()
    hl, hw = state.half_length, state.half_width
    for k in range(3):
        move = cfg.dt * vel[k]
        if move == 0:
            continue
        trial = pose.copy()
        trial[k] += move
        if not collides(maze, trial, hl, hw):
            pose = trial
            continue
        lo, hi = 0.0, 1.0
        for _ in range(14):
            mid = (lo + hi) / 2
            trial[k] = pose[k] + mid * move
            if collides(maze, trial, hl, hw):
                hi = mid
            else:
                lo = mid
        pose[k] += lo * move
        vel[k] = 0.0
    pose[2] = wrap_angle(pose[2])
    return replace(state, pose=pose, velocity=vel, step_count=state.step_count + 1)


def _cell(state):
    return int(math.floor(state.pose[0])), int(math.floor(state.pose[1]))


def local_patch(maze, x, y):
    """3x3 occupancy around cell (x, y): top row first, west to east."""
    return np.array([maze.is_wall(x + dx, y + dy) for dy in (1, 0, -1) for dx in (-1, 0, 1)],
                    dtype=np.float64)


def observe(state, maze):
    """13 values: 3x3 wall patch, forward direction, couch xy."""
    x, y = _cell(state)
    rows, cols = maze.grid.shape
    xc, yc = min(max(x, 0), cols - 1), min(max(y, 0), rows - 1)
    return np.concatenate([local_patch(maze, x, y), maze.forward[yc, xc], state.pose[:2]])


def in_chamber(state, maze, eps_chamber=1.0):
    d = np.linalg.norm(maze.chamber_centers - state.pose[:2], axis=1)
    return bool(d.min() < eps_chamber)


def orientation_correct(state, maze):
    """Long axis, snapped to the nearest 90 degrees, parallel to the exit corridor of the governing corner.

    In a 2-wide stretch that is the corner ahead; in a corridor it is the corner just passed.
    """
    x, y = _cell(state)
    k = int(maze.orient[min(max(y, 0), maze.grid.shape[0] - 1),
                        min(max(x, 0), maze.grid.shape[1] - 1)])
    th = state.pose[2]
    horizontal = abs(math.cos(th)) >= abs(math.sin(th))
    exit_horizontal = abs(maze.exit_dirs[k][0]) > 0
    return horizontal == exit_horizontal


def task_reward(state, maze, cfg=CouchConfig()):
    if in_chamber(state, maze, cfg.eps_chamber):
        return 0.0
    return 0.0 if orientation_correct(state, maze) else -1.0


def success(state, maze, cfg=CouchConfig()):
    return bool(np.linalg.norm(state.pose[:2] - maze.goal) < cfg.eps_goal)


# ---------------------------------------------------------------- maze files

def maze_ascii(maze):
    rows, cols = maze.grid.shape
    chars = np.where(maze.grid == 1, "#", ".").astype("<U1")
    for x, y in maze.chamber_cells:
        chars[y, x] = "C"
    for x, y in maze.corners:
        chars[y, x] = "K"
    sx, sy = maze.path[0]
    gx, gy = maze.path[-1]
    chars[sy, sx] = "S"
    chars[gy, gx] = "G"
    return "\n".join("".join(chars[y]) for y in range(rows - 1, -1, -1))


def maze_text(maze):
    if maze.seed is None:
        raise ConfigurationError("only mazes built from an integer seed can be written")
    return f"variant={maze.variant} n_corners={maze.n_corners} seed={maze.seed}\n{maze_ascii(maze)}\n"


def parse_maze(text):
    """Rebuild a maze from its file text; the grid must match the regenerated layout."""
    lines = [ln.rstrip() for ln in text.strip().splitlines()]
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        maze = make_maze(header["variant"], int(header["n_corners"]), int(header["seed"]))
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigurationError(f"bad maze header: {lines[:1]!r}") from exc
    if maze_ascii(maze) != "\n".join(lines[1:]):
        raise ConfigurationError("maze grid does not match its (variant, n_corners, seed) header")
    return maze


def write_maze(path, maze):
    with open(path, "w") as fh:
        fh.write(maze_text(maze))


def read_maze(path):
    with open(path) as fh:
        return parse_maze(fh.read())
