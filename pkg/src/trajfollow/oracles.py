"""Scripted expert controllers used to validate environments, plans and rewards.

Both return raw environment actions (not the normalised policy space).
"""
import math

import numpy as np


def _dominant(vec):
    ax = int(np.argmax(np.abs(vec)))
    u = np.zeros(2)
    u[ax] = math.copysign(1.0, vec[ax])
    return u


def oracle_boxpusher(state, traj, j_prev=0):
    """Push the box along the plan, one axis-aligned leg at a time.

    The controller trusts the plan: it works from the real box position
    only while that box is within one box width of where the plan says it
    should be (at the last matched index); otherwise it acts on the
    planned box position. The agent walks around the box to the face
    opposite the next push direction, then pushes.
    """
    w = state.box_width
    tol = 1e-3 * w
    margin = 0.25 * w
    boxes = traj[:, 2:4]
    c = max(j_prev - 1, 0)
    b_plan = boxes[c]
    box = state.box if np.linalg.norm(state.box - b_plan) < w else b_plan

    moving = np.nonzero(np.linalg.norm(boxes[c + 1:] - b_plan, axis=1) > 1e-9)[0]
    if len(moving) == 0:
        return np.zeros(2)
    i = c + 1 + int(moving[0])
    u = _dominant(boxes[i] - boxes[i - 1])
    end = i
    while end + 1 < len(boxes) and np.linalg.norm(boxes[end + 1] - boxes[end]) > 1e-9 \
            and np.all(_dominant(boxes[end + 1] - boxes[end]) == u):
        end += 1
    target_box = boxes[min(i + 1, end)]
    v = np.array([-u[1], u[0]])

    agent = state.agent
    rel = agent - box
    along, lat = rel @ u, rel @ v
    half = state.half_arena - w / 2
    if along <= -w + tol:
        if abs(lat) > tol:
            # line up first with a small gap so the box is not grazed sideways
            goal = box - u * (w + margin) if abs(lat) > tol * 10 else box - u * w
        else:
            goal = agent + u * ((target_box - box) @ u)
            goal = goal if (target_box - box) @ u > 0 else agent
    elif abs(lat) < w + margin - tol:
        side = math.copysign(1.0, lat) if lat != 0 else 1.0
        out = box + v * side * (w + margin)
        if np.any(np.abs(out) > half):
            side = -side
        goal = agent + v * (side * (w + margin) - lat)
    else:
        goal = agent - u * (along + w + margin)
    return np.clip(goal - agent, -0.5 * w, 0.5 * w)


def _angle_to(target, theta):
    return math.remainder(target - theta, 2 * math.pi)


def oracle_couch(state, maze, traj, kp=30.0, kd=4.0, k_theta=20.0, k_omega=4.0, lookahead=1.0):
    """Follow the plan with a PD controller; turn in chambers using full maze knowledge.

    Inside the chamber preceding a corner the couch stops at the chamber
    center and rotates until its long axis is parallel to that corner's
    exit corridor. Elsewhere it holds its current (snapped) heading.
    """
    pos, theta = state.pose[:2], state.pose[2]
    x, y = int(math.floor(pos[0])), int(math.floor(pos[1]))
    rows, cols = maze.grid.shape
    k = int(maze.upcoming[min(max(y, 0), rows - 1), min(max(x, 0), cols - 1)])

    snapped = round(theta / (math.pi / 2)) * (math.pi / 2)
    target_theta = snapped
    hold = None
    if k < maze.n_corners:
        ex = maze.exit_dirs[k]
        want = math.atan2(ex[1], ex[0])
        want = want if abs(_angle_to(want, theta)) <= math.pi / 2 else want + math.pi
        center = maze.chamber_centers[k]
        aligned = abs(_angle_to(want, theta)) < 0.03
        ahead = _chamber_ahead(maze, traj, pos, center)
        if not aligned and ahead:
            hold = center
            if np.linalg.norm(pos - center) < 0.15:
                target_theta = want
        elif aligned:
            target_theta = want

    if hold is not None:
        target = hold
    else:
        d = np.linalg.norm(traj - pos, axis=1)
        i = int(np.argmin(d))
        j = i
        while j + 1 < len(traj) and np.linalg.norm(traj[j] - traj[i]) < lookahead:
            j += 1
        target = traj[j]
    force = kp * (target - pos) - kd * state.velocity[:2]
    torque = k_theta * _angle_to(target_theta, theta) - k_omega * state.velocity[2]
    return np.array([force[0], force[1], torque])


def _chamber_ahead(maze, traj, pos, center):
    """True while the chamber center has not yet been passed along the plan."""
    d = np.linalg.norm(traj - pos, axis=1)
    i = int(np.argmin(d))
    c = int(np.argmin(np.linalg.norm(traj - center, axis=1)))
    return c >= i - 1
