import numpy as np
import pytest
from dataclasses import replace

from trajfollow.envs import boxpusher as bp
from trajfollow.envs import make_task, parse_snapshot, snapshot_text
from trajfollow.exceptions import ConfigurationError

W = 0.1


def state(agent, box, goal=(0.5, 0.5), obstacles=None):
    obs = np.zeros((0, 4)) if obstacles is None else np.asarray(obstacles, dtype=float)
    return bp.BoxPusherState(np.array(agent, float), np.array(box, float), np.array(goal, float), obs, W)


def overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def test_reset_train_has_no_obstacles(rng):
    for _ in range(50):
        s = bp.reset(bp.BoxPusherConfig(), rng)
        assert len(s.obstacles) == 0
        pts = (s.agent, s.box, s.goal)
        assert min(np.linalg.norm(a - b) for i, a in enumerate(pts) for b in pts[i + 1:]) >= 2 * W


def test_reset_is_deterministic():
    a = bp.reset(bp.BoxPusherConfig(), np.random.default_rng(7))
    b = bp.reset(bp.BoxPusherConfig(), np.random.default_rng(7))
    assert np.array_equal(bp.observe(a), bp.observe(b))


def test_obstacles_avoid_box_and_goal():
    cfg = bp.BoxPusherConfig(obstacles=True)
    for seed in range(1000):
        s = bp.reset(cfg, np.random.default_rng(seed))
        assert 1 <= len(s.obstacles) <= 3
        for r in s.obstacles:
            assert not overlap(r, bp._square(s.box, W))
            assert not overlap(r, bp._square(s.goal, W))


def test_reset_failure_is_configuration_error():
    # obstacles as large as the arena can never clear the start footprints
    cfg = bp.BoxPusherConfig(obstacles=True, obstacle_size=(19.9, 20.0))
    with pytest.raises(ConfigurationError):
        bp.reset(cfg, np.random.default_rng(0), max_attempts=20)


def test_free_move():
    s = bp.step(state([0, 0], [0.5, 0]), [0.05, 0])
    np.testing.assert_allclose(s.agent, [0.05, 0])
    np.testing.assert_array_equal(s.box, [0.5, 0])
    assert s.step_count == 1


def test_action_clipped_to_half_box_width():
    s = bp.step(state([0, 0], [0.5, 0.5]), [1.0, -1.0])
    np.testing.assert_allclose(s.agent, [0.05, -0.05])


def test_flush_push_moves_box_by_action():
    s = bp.step(state([0.4, 0], [0.5, 0]), [0.05, 0])
    np.testing.assert_allclose(s.box, [0.55, 0], atol=1e-15)
    np.testing.assert_allclose(s.agent, [0.45, 0], atol=1e-15)


def test_push_never_pulls():
    s = bp.step(state([0.4, 0], [0.5, 0]), [-0.05, 0])
    np.testing.assert_array_equal(s.box, [0.5, 0])


def test_grazing_contact_does_not_push():
    s = bp.step(state([0.4, 0.1], [0.5, 0]), [0.05, 0])
    np.testing.assert_array_equal(s.box, [0.5, 0])


def test_obstacle_blocks_agent():
    ob = [[0.05, -0.5, 0.3, 0.5]]
    s = bp.step(state([0.0, 0], [-0.5, 0], obstacles=ob), [0.05, 0])
    assert s.agent[0] == pytest.approx(0.0)
    s = bp.step(s, [0.05, 0.05])
    assert s.agent[0] == pytest.approx(0.0) and s.agent[1] == pytest.approx(0.05)


def test_obstacle_blocks_pushed_box():
    ob = [[0.55, -0.5, 0.8, 0.5]]
    s = bp.step(state([0.4, 0], [0.5, 0], obstacles=ob), [0.05, 0])
    np.testing.assert_allclose(s.box, [0.5, 0])
    np.testing.assert_allclose(s.agent, [0.4, 0])


def test_arena_wall_clamps():
    s = bp.step(state([0.93, 0], [0, 0.5]), [0.05, 0])
    assert s.agent[0] == pytest.approx(0.95)


def test_observation_layout():
    s = state([1, 2], [3, 4], [5, 6])
    assert bp.observe(s).tolist() == [1, 2, 3, 4, 5, 6]
    moved = replace(s, goal=np.array([7.0, 8.0]))
    assert bp.observe(moved)[:4].tolist() == [1, 2, 3, 4]
    hidden = replace(s, obstacles=np.array([[0, 0, 1, 1.0]]))
    assert np.array_equal(bp.observe(hidden), bp.observe(s))


def test_task_reward_examples():
    assert bp.task_reward(state([1, 1], [1, 1], [1, 1])) == 0
    assert bp.task_reward(state([0, 0], [1, 0], [1, 2])) == pytest.approx(-1.9, abs=1e-12)
    a = bp.task_reward(state([0, 0], [1, 0], [1, 2]))
    b = bp.task_reward(state([0, 1], [1, 1], [1, 2]))
    assert b - a == pytest.approx(0.9, abs=1e-12)


def test_success_is_strict():
    assert bp.success(state([0, 0], [0.5, 0.5], [0.5, 0.5]))
    assert not bp.success(state([0, 0], [0.0, 0.0], [0.1, 0.0]))
    assert bp.success(state([0, 0], [0.5, 0.5], [0.5, 0.5 - 0.099]))


def test_bad_action_rejected():
    with pytest.raises(ConfigurationError):
        bp.step(state([0, 0], [0.5, 0]), [np.nan, 0])
    with pytest.raises(ConfigurationError):
        bp.step(state([0, 0], [0.5, 0]), [0.1, 0, 0])


def test_random_walk_invariants(rng):
    cfg = bp.BoxPusherConfig(obstacles=True)
    for _ in range(20):
        s = bp.reset(cfg, rng)
        # start next to the box so pushes actually happen
        s = replace(s, agent=s.box - [W, 0])
        if any(overlap(r, bp._square(s.agent, W)) for r in s.obstacles):
            continue
        for _ in range(150):
            prev = s
            s = bp.step(s, rng.uniform(-0.08, 0.08, size=2) + [0.02, 0])
            da, db = s.agent - prev.agent, s.box - prev.box
            assert np.max(np.abs(da)) <= 0.5 * W + 1e-12
            assert da @ db >= -1e-15
            for r in s.obstacles:
                assert not overlap(r, bp._square(s.agent, W - 1e-9))
                assert not overlap(r, bp._square(s.box, W - 1e-9))
            assert not overlap(bp._square(s.agent, W - 1e-9), bp._square(s.box, W - 1e-9))
            assert bp.step(prev, [0.01, 0.02]).agent.tolist() == bp.step(prev, [0.01, 0.02]).agent.tolist()


def test_snapshot_round_trip(rng):
    s = bp.reset(bp.BoxPusherConfig(obstacles=True), rng)
    env, back = parse_snapshot(snapshot_text(s))
    assert env == "boxpusher"
    assert np.array_equal(back.obstacles, s.obstacles) and np.array_equal(bp.observe(back), bp.observe(s))


def test_make_task_tags():
    assert make_task("boxpusher").cfg.obstacles is False
    assert make_task("boxpusher-obstacles").cfg.obstacles is True
    assert make_task("boxpusher", plan={"p": 4}).plan_cfg.p == 4
    for bad in ("boxpushr", "couch-medium-3", "couch-short-x", "couch-short-0"):
        with pytest.raises(ConfigurationError):
            make_task(bad)
    with pytest.raises(ConfigurationError):
        make_task("boxpusher", wheels=4)
