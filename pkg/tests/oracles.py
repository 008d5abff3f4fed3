"""Independent brute-force reference implementations used by the tests.

These are written from the definitions, without calling the package, so a
shared bug cannot make both sides agree.
"""
import math


def weighted_distance(a, b, weights):
    return math.sqrt(sum((w * (x - y)) ** 2 for x, y, w in zip(a, b, weights)))


def brute_reward_fold(lows, traj, project, weights, eps, beta, w):
    """Per-step (j_t, reward) from scratch at every step, with plain Python loops."""
    n = len(traj)
    out = []
    for t in range(len(lows)):
        # recompute the running maximum from the start every time
        j_prev = 0
        for s in range(t):
            j_prev = max(j_prev, _match(project(lows[s]), traj, weights, eps) or 0)
        dists = [weighted_distance(project(lows[t]), h, weights) for h in traj]
        jm = _match(project(lows[t]), traj, weights, eps)
        j_t = max(j_prev, jm or 0)
        if j_t == n:
            r = 1.0 - math.tanh(w * dists[n - 1])
        elif jm is not None and jm > j_prev:
            r = (1.0 + beta * jm) * (1.0 - math.tanh(w * dists[jm - 1]))
        else:
            r = 0.0
        out.append((j_t, r))
    return out


def _match(x, traj, weights, eps):
    best, best_i = None, None
    for i, h in enumerate(traj, start=1):
        dist = weighted_distance(x, h, weights)
        if dist < eps and (best is None or dist < best):
            best, best_i = dist, i
    return best_i


def brute_gae(rewards, values, dones, gamma, lam, last_value=0.0):
    """Advantages as explicit lambda-weighted sums of n-step TD errors within each episode."""
    T = len(rewards)
    deltas = []
    for t in range(T):
        if dones[t]:
            nxt = 0.0
        elif t + 1 < T:
            nxt = values[t + 1]
        else:
            nxt = last_value
        deltas.append(rewards[t] + gamma * nxt - values[t])
    adv = []
    for t in range(T):
        total, k = 0.0, t
        while k < T:
            total += (gamma * lam) ** (k - t) * deltas[k]
            if dones[k]:
                break
            k += 1
        adv.append(total)
    return adv


def discounted_sum_minus_value(rewards, values, gamma):
    """lambda=1 advantages for a single terminating episode."""
    out = []
    for t in range(len(rewards)):
        out.append(sum(gamma ** (k - t) * rewards[k] for k in range(t, len(rewards))) - values[t])
    return out


def linear_interp(a, b, pieces):
    return [[a[i] + (b[i] - a[i]) * k / pieces for i in range(len(a))] for k in range(pieces + 1)]
