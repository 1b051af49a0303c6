"""Compiled rollout loop; mirrors ``sim.run_rollout`` operation for operation.

Vehicle state lives in arrays indexed by vehicle id. ``order`` lists the
live ids sorted by (lane, pos), the same order as ``SimWorld.vehicles``.
"""

import math

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

AVAILABLE = numba is not None


def _resort(order, n, lane, pos):
    # insertion sort; the order is almost sorted after a lane change
    for i in range(1, n):
        k = order[i]
        j = i - 1
        while j >= 0 and (lane[order[j]] > lane[k] or (lane[order[j]] == lane[k] and pos[order[j]] > pos[k])):
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = k


def _gaps(order, n, lane, pos, speed, length, vid, to_lane):
    # first entry with (lane, pos) >= (to_lane, pos[vid]) is the lead, the entry before it the lag
    lead_gap = math.inf
    lag_gap = math.inf
    lag_speed = 0.0
    x = pos[vid]
    i = 0
    while i < n and (lane[order[i]] < to_lane or (lane[order[i]] == to_lane and pos[order[i]] < x)):
        i += 1
    if i < n and lane[order[i]] == to_lane:
        k = order[i]
        lead_gap = pos[k] - length[k] - x
    if i > 0 and lane[order[i - 1]] == to_lane:
        k = order[i - 1]
        lag_gap = x - length[vid] - pos[k]
        lag_speed = speed[k]
    return lead_gap, lag_gap, lag_speed


def _try_merge(order, n, lane, pos, speed, length, vid, lane_count, blocked, min_gap, tau):
    cand = np.empty(2, dtype=np.int64)
    leads = np.empty(2)
    lags = np.empty(2)
    lag_speeds = np.empty(2)
    m = 0
    for ln in (lane[vid] - 1, lane[vid] + 1):
        if 0 <= ln < lane_count and ln != blocked:
            cand[m] = ln
            leads[m], lags[m], lag_speeds[m] = _gaps(order, n, lane, pos, speed, length, vid, ln)
            m += 1
    # larger lead gap first, ties to the lower lane (candidates are generated in lane order)
    if m == 2 and leads[1] > leads[0]:
        cand[0], cand[1] = cand[1], cand[0]
        leads[0], leads[1] = leads[1], leads[0]
        lags[0], lags[1] = lags[1], lags[0]
        lag_speeds[0], lag_speeds[1] = lag_speeds[1], lag_speeds[0]
    for j in range(m):
        if leads[j] >= min_gap + speed[vid] * tau and lags[j] >= min_gap + lag_speeds[j] * tau:
            lane[vid] = cand[j]
            _resort(order, n, lane, pos)
            return True
    return False


def rollout_kernel(lane, pos, speed, length, alive, target, eta, merge_point, max_ticks,
                   lane_count, road_length, roadblock_pos, blocked,
                   v_max, a, b, sigma, tau, min_gap, dt, clock, stuck_ticks, eps):
    n_slots = lane.shape[0]
    order = np.empty(n_slots, dtype=np.int64)
    n = 0
    for k in range(n_slots):
        if alive[k]:
            order[n] = k
            n += 1
    _resort(order, n, lane, pos)
    queue = np.empty(n_slots, dtype=np.int64)
    dawdle = sigma * a * dt
    merged = False
    merge_pos = 0.0
    merge_speed = 0.0
    stopped = 0
    ticks = 0
    while ticks < max_ticks:
        # car following, each lane front to back
        cur = -1
        has_leader = False
        l_pos = l_new = l_len = l_speed = 0.0
        for idx in range(n - 1, -1, -1):
            k = order[idx]
            if lane[k] != cur:
                cur = lane[k]
                has_leader = cur == blocked
                l_pos = roadblock_pos
                l_new = roadblock_pos
                l_len = 0.0
                l_speed = 0.0
            v = speed[k]
            v_des = v + a * dt
            if v_des > v_max:
                v_des = v_max
            if has_leader:
                g = l_pos - l_len - pos[k] - min_gap
                v_safe = l_speed + (g - l_speed * tau) / ((v + l_speed) / (2 * b) + tau)
                if v_safe < v_des:
                    v_des = v_safe
            v_new = v_des - dawdle * eta[ticks, k]
            if v_new < 0.0:
                v_new = 0.0
            old_pos = pos[k]
            new_pos = old_pos + v_new * dt
            if has_leader:
                limit = l_new - l_len - min_gap
                if new_pos > limit:
                    new_pos = max(old_pos, limit)
                    v_new = (new_pos - old_pos) / dt
            has_leader = True
            l_pos = old_pos
            l_new = new_pos
            l_len = length[k]
            l_speed = v
            pos[k] = new_pos
            speed[k] = v_new
        # exits
        m = 0
        for idx in range(n):
            k = order[idx]
            if k != target and pos[k] > road_length:
                alive[k] = False
            else:
                order[m] = k
                m += 1
        n = m
        clock += dt
        # background merges, front of the closed lane first
        q = 0
        for idx in range(n):
            k = order[idx]
            if lane[k] == blocked and k != target:
                queue[q] = k
                q += 1
        for j in range(q - 1, -1, -1):
            _try_merge(order, n, lane, pos, speed, length, queue[j], lane_count, blocked, min_gap, tau)
        ticks += 1
        if pos[target] >= merge_point and _try_merge(order, n, lane, pos, speed, length, target,
                                                     lane_count, blocked, min_gap, tau):
            merged = True
            merge_pos = pos[target]
            merge_speed = speed[target]
            break
        if speed[target] <= eps:
            stopped += 1
        else:
            stopped = 0
        if stopped >= stuck_ticks:
            break
    return ticks, merged, merge_pos, merge_speed, clock


if AVAILABLE:
    _resort = numba.njit(cache=True)(_resort)
    _gaps = numba.njit(cache=True)(_gaps)
    _try_merge = numba.njit(cache=True)(_try_merge)
    rollout_kernel = numba.njit(cache=True)(rollout_kernel)
