import math
from collections import deque
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from trajfollow.envs import couch as cm
from trajfollow.envs import make_task, parse_snapshot, snapshot_text
from trajfollow.exceptions import ConfigurationError

CFG = cm.CouchConfig()
OPEN = SimpleNamespace(is_wall=lambda x, y: False)


def at(x, y, theta=0.0, v=(0.0, 0.0, 0.0)):
    return cm.CouchState(np.array([x, y, theta]), np.array(v, dtype=float), CFG.half_length, CFG.half_width)


def reachable(maze, start, goal):
    seen, todo = {start}, deque([start])
    while todo:
        x, y = todo.popleft()
        for dx, dy in cm.DIRS:
            c = (x + dx, y + dy)
            if c not in seen and not maze.is_wall(*c):
                seen.add(c)
                todo.append(c)
    return goal in seen


def rect_hits_wall(maze, pose, hl, hw, n=12, shrink=1e-6):
    """Sample the couch rectangle on a grid; any sample strictly inside a wall cell is a hit."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    for u in np.linspace(-hl + shrink, hl - shrink, n):
        for v in np.linspace(-hw + shrink, hw - shrink, max(3, n // 2)):
            px, py = x + u * c - v * s, y + u * s + v * c
            if maze.is_wall(math.floor(px), math.floor(py)):
                fx, fy = px - math.floor(px), py - math.floor(py)
                if min(fx, 1 - fx, fy, 1 - fy) > 1e-6:
                    return True
    return False


@pytest.mark.parametrize("variant,n", [("short", 3), ("long", 5), ("short", 1)])
def test_maze_structure(variant, n):
    for seed in range(30):
        m = cm.make_maze(variant, n, seed)
        assert len(m.corners) == n and len(m.chamber_centers) == n
        sx, sy = m.path[0]
        gx, gy = m.path[-1]
        assert not m.is_wall(sx, sy) and not m.is_wall(gx, gy)
        assert reachable(m, (int(sx), int(sy)), (int(gx), int(gy)))
        steps = np.abs(np.diff(m.path, axis=0)).sum(1)
        assert np.all(steps == 1)


def test_long_corridors_are_about_one_and_a_half_times_short():
    short = np.mean([np.mean(cm.make_maze("short", 3, s).corridor_lengths) for s in range(100)])
    long_ = np.mean([np.mean(cm.make_maze("long", 5, s).corridor_lengths) for s in range(100)])
    assert abs(long_ / short - 1.5) <= 0.2 * 1.5


def test_maze_validation():
    with pytest.raises(ConfigurationError):
        cm.make_maze("medium", 3, 0)
    with pytest.raises(ConfigurationError):
        cm.make_maze("short", 0, 0)


def test_maze_file_round_trip(tmp_path):
    m = cm.make_maze("long", 5, 11)
    path = tmp_path / "m.txt"
    cm.write_maze(path, m)
    text = path.read_text()
    assert text.splitlines()[0] == "variant=long n_corners=5 seed=11"
    assert set("".join(text.splitlines()[1:])) <= set("#.SGCK")
    back = cm.read_maze(path)
    assert np.array_equal(back.grid, m.grid)
    tampered = text.replace("S", ".")
    with pytest.raises(ConfigurationError):
        cm.parse_maze(tampered)


def test_zero_action_from_rest_is_still():
    m = cm.make_maze("short", 3, 0)
    s = cm.initial_state(m)
    nxt = cm.step(s, m, [0, 0, 0])
    assert np.array_equal(nxt.pose, s.pose) and np.array_equal(nxt.velocity, s.velocity)


def test_constant_force_matches_damped_closed_form():
    c, dt, f = CFG.damping, CFG.dt, 7.0
    v_inf = dt * f / c
    s = at(0.0, 0.0)
    xs = []
    for t in range(1, 60):
        s = cm.step(s, OPEN, [f, 0, 0])
        xs.append(s.pose[0])
        expected = dt * v_inf * (t - (1 - c) * (1 - (1 - c) ** t) / c)
        assert s.pose[0] == pytest.approx(expected, rel=1e-9, abs=1e-12)
        assert s.velocity[0] == pytest.approx(v_inf * (1 - (1 - c) ** t), rel=1e-9)
    assert np.all(np.diff(xs) > 0)
    assert s.velocity[0] == pytest.approx(v_inf, rel=1e-6)


def test_force_is_clipped():
    a = cm.step(at(0, 0), OPEN, [100.0, 0, 50.0])
    b = cm.step(at(0, 0), OPEN, [CFG.force_max, 0, CFG.torque_max])
    assert np.array_equal(a.pose, b.pose)


def test_pure_torque_in_chamber_rotates_in_place():
    m = cm.make_maze("short", 3, 1)
    s = cm.initial_state(m)
    for _ in range(10):
        s = cm.step(s, m, [0, 0, 3.0])
    assert s.pose[:2].tolist() == cm.initial_state(m).pose[:2].tolist()
    assert abs(cm.wrap_angle(s.pose[2] - cm.initial_state(m).pose[2])) > 0.3


def test_wrap_angle_range():
    for t in np.linspace(-10, 10, 101):
        w = cm.wrap_angle(t)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(t), abs_tol=1e-12)
    assert cm.wrap_angle(-math.pi) == math.pi


def test_observation_examples():
    m = cm.make_maze("short", 3, 0)
    s = cm.initial_state(m)
    obs = cm.observe(s, m)
    assert obs.shape == (13,)
    assert obs[:9].tolist() == [0.0] * 9
    assert obs[11:].tolist() == s.pose[:2].tolist()
    # a straight 1-wide corridor: walls above and below
    grid = np.ones((3, 7), dtype=np.int8)
    grid[1, :] = 0
    corridor = SimpleNamespace(is_wall=lambda x, y: not (0 <= x < 7 and y == 1), grid=grid,
                               forward=np.tile([1.0, 0.0], (3, 7, 1)))
    obs = cm.observe(at(3.5, 1.5), corridor)
    patch = obs[:9].reshape(3, 3)
    assert patch[0].tolist() == [1, 1, 1] and patch[2].tolist() == [1, 1, 1]
    assert patch[1].tolist() == [0, 0, 0]
    assert obs[9:11].tolist() == [1.0, 0.0]


def test_forward_direction_along_path():
    m = cm.make_maze("short", 3, 2)
    for i in range(len(m.path) - 1):
        x, y = m.path[i]
        assert m.forward[y, x].tolist() == (m.path[i + 1] - m.path[i]).tolist()


def test_observation_locality(rng):
    m = cm.make_maze("short", 3, 4)
    s = cm.initial_state(m)
    base = cm.observe(s, m)
    cx, cy = int(s.pose[0]), int(s.pose[1])
    for _ in range(20):
        grid = m.grid.copy()
        for _ in range(10):
            y, x = int(rng.integers(grid.shape[0])), int(rng.integers(grid.shape[1]))
            if abs(x - cx) > 1 or abs(y - cy) > 1:
                grid[y, x] = 1 - grid[y, x]
        assert np.array_equal(cm.observe(s, replace(m, grid=grid)), base)


def test_task_reward_and_orientation():
    m = cm.make_maze("short", 3, 0)
    s = cm.initial_state(m)
    assert cm.task_reward(s, m) == 0.0  # in a chamber
    k = 0
    exit_dir = m.exit_dirs[k]
    i = int(np.nonzero((m.path == m.corners[k]).all(1))[0][0]) - 1
    p = m.path[i] + 0.5  # stretch cell just before the corner, away from any chamber
    assert not cm.in_chamber(at(*p), m)
    good = math.atan2(exit_dir[1], exit_dir[0])
    assert cm.task_reward(at(p[0], p[1], good), m) == 0.0
    assert cm.task_reward(at(p[0], p[1], good + math.pi / 2), m) == -1.0


def test_success_is_strict():
    m = cm.make_maze("short", 3, 0)
    g = m.goal
    assert cm.success(at(g[0], g[1]), m)
    assert not cm.success(at(g[0] + 2, g[1]), m)
    assert not cm.success(at(g[0] + CFG.eps_goal, g[1]), m)


def test_no_tunneling_under_random_actions(rng):
    for seed in range(5):
        m = cm.make_maze("short", 3, seed)
        s = cm.initial_state(m)
        for _ in range(300):
            a = rng.uniform(-1, 1, size=3) * [CFG.force_max * 1.5, CFG.force_max * 1.5, CFG.torque_max * 1.5]
            s = cm.step(s, m, a)
            assert not rect_hits_wall(m, s.pose, s.half_length, s.half_width)
            assert not cm.collides(m, s.pose, s.half_length, s.half_width)


def test_rotation_feasible_in_every_chamber():
    for seed in range(100):
        m = cm.make_maze("long", 5, seed)
        for cx, cy in m.chamber_centers:
            for th in np.linspace(0, math.pi / 2, 46):
                assert not cm.collides(m, (cx, cy, th), CFG.half_length, CFG.half_width)
        s = at(*m.chamber_centers[-1])
        for _ in range(40):
            s = cm.step(s, m, [0, 0, CFG.torque_max])
        assert s.pose[:2].tolist() == m.chamber_centers[-1].tolist()


def drive(m, s, target, steps=300):
    """PD translation toward ``target`` with zero torque (orientation never changes)."""
    for _ in range(steps):
        f = 30 * (target - s.pose[:2]) - 4 * s.velocity[:2]
        s = cm.step(s, m, [f[0], f[1], 0.0])
    return s


def test_corner_gating():
    for seed in range(100):
        m = cm.make_maze("short", 3, seed)
        k = 0
        corner = m.corners[k] + 0.5
        exit_dir = m.exit_dirs[k]
        before = m.path_points[int(np.nonzero(m.path_segment == k)[0][-1])]
        target = corner + 3 * exit_dir
        wrong = math.atan2(exit_dir[1], exit_dir[0]) + math.pi / 2
        right = math.atan2(exit_dir[1], exit_dir[0])
        s = drive(m, at(before[0], before[1], wrong), target)
        assert (s.pose[:2] - corner) @ exit_dir < 1.0, seed
        s = drive(m, at(before[0], before[1], right), target)
        assert (s.pose[:2] - corner) @ exit_dir > 2.0, seed


def test_bad_action_rejected():
    m = cm.make_maze("short", 3, 0)
    with pytest.raises(ConfigurationError):
        cm.step(cm.initial_state(m), m, [1, 2])
    with pytest.raises(ConfigurationError):
        cm.step(cm.initial_state(m), m, [1, np.inf, 0])


def test_couch_task_and_snapshot(rng):
    task = make_task("couch-long-5")
    assert task.max_episode_len > 150 and task.cfg.n_corners == 5
    assert make_task("couch-short-3").max_episode_len == 150
    world = task.reset(rng)
    env, back = parse_snapshot(snapshot_text(world))
    assert env == "couch" and np.array_equal(back.maze.grid, world.maze.grid)
    assert np.array_equal(task.observe(back), task.observe(world))
