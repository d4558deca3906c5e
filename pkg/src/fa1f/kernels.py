"""Numba kernels: cluster counting on windows and the event-driven FA1f loop.

The RNG inside kernels is SplitMix64 seeded per trajectory from
(base seed, replica index), so batches are reproducible and independent of
execution order. Occupancy convention matches the rest of the package
(1 = occupied, 0 = empty).
"""
from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _next_unit(state):
    return float(_next_u64(state) >> U64(11)) * _INV53


@njit(cache=True)
def _mix_seed(seed, index):
    """Decorrelated per-replica state: two SplitMix64 finalizer rounds of
    (seed, index), so replica streams land far apart."""
    s = np.empty(1, dtype=np.uint64)
    s[0] = seed + _GOLDEN * U64(index + 1)
    z = _next_u64(s)
    s[0] = z
    return _next_u64(s)


# ---------------------------------------------------------------------------
# cluster counting
# ---------------------------------------------------------------------------


@njit(cache=True)
def _label_window(occ_win, indptr, indices, labels, stack):
    """BFS-label empty-site clusters on the window graph; returns the count."""
    w = occ_win.shape[0]
    for i in range(w):
        labels[i] = -1
    count = 0
    for i in range(w):
        if occ_win[i] != 0 or labels[i] >= 0:
            continue
        labels[i] = count
        stack[0] = i
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if occ_win[v] == 0 and labels[v] < 0:
                    labels[v] = count
                    stack[top] = v
                    top += 1
        count += 1
    return count


@njit(cache=True)
def cluster_count_batch(occ_win_batch, indptr, indices):
    m, w = occ_win_batch.shape
    out = np.empty(m, dtype=np.int64)
    labels = np.empty(w, dtype=np.int32)
    stack = np.empty(w, dtype=np.int32)
    for r in range(m):
        out[r] = _label_window(occ_win_batch[r], indptr, indices, labels, stack)
    return out


@njit(cache=True)
def _split_components(x, occ_win, indptr, indices, labels, comp_mark, stack, gen):
    """Number of connected components of (cluster of x) minus x, among the
    empty window neighbours of the empty site x."""
    ncomp = 0
    for k in range(indptr[x], indptr[x + 1]):
        start = indices[k]
        if occ_win[start] != 0 or comp_mark[start] == gen:
            continue
        ncomp += 1
        comp_mark[start] = gen
        stack[0] = start
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for j in range(indptr[u], indptr[u + 1]):
                v = indices[j]
                if v == x or occ_win[v] != 0 or comp_mark[v] == gen:
                    continue
                comp_mark[v] = gen
                stack[top] = v
                top += 1
    return ncomp


@njit(cache=True)
def cluster_stats_batch(
    occ_batch, win_sites, win_indptr, win_indices, full_indptr, full_indices
):
    """Per configuration: the window cluster count f and the Dirichlet
    summand sum_x c_x(eta) (f(eta^x) - f(eta))^2 over window sites.

    Off-window sites never change the window cluster count, so their terms
    vanish and are skipped. Constraints use the full-volume adjacency.
    """
    m = occ_batch.shape[0]
    w = win_sites.shape[0]
    values = np.empty(m, dtype=np.float64)
    summands = np.empty(m, dtype=np.float64)
    occ_win = np.empty(w, dtype=np.uint8)
    labels = np.empty(w, dtype=np.int32)
    stack = np.empty(w, dtype=np.int32)
    comp_mark = np.full(w, -1, dtype=np.int64)
    nbr_labels = np.empty(64, dtype=np.int32)
    for r in range(m):
        occ = occ_batch[r]
        for i in range(w):
            occ_win[i] = occ[win_sites[i]]
        f = _label_window(occ_win, win_indptr, win_indices, labels, stack)
        values[r] = f
        s = 0.0
        for i in range(w):
            x_full = win_sites[i]
            cx = False
            for k in range(full_indptr[x_full], full_indptr[x_full + 1]):
                if occ[full_indices[k]] == 0:
                    cx = True
                    break
            if not cx:
                continue
            if occ_win[i] == 1:
                # emptying x merges the distinct neighbouring clusters
                nk = 0
                for k in range(win_indptr[i], win_indptr[i + 1]):
                    v = win_indices[k]
                    if occ_win[v] == 0:
                        lab = labels[v]
                        dup = False
                        for t in range(nk):
                            if nbr_labels[t] == lab:
                                dup = True
                                break
                        if not dup:
                            nbr_labels[nk] = lab
                            nk += 1
                delta = 1 - nk
            else:
                # filling x can split its cluster
                gen = r * np.int64(w) + i
                ncomp = _split_components(
                    i, occ_win, win_indptr, win_indices, labels, comp_mark, stack, gen
                )
                delta = ncomp - 1
            s += float(delta * delta)
        summands[r] = s
    return values, summands


# ---------------------------------------------------------------------------
# event-driven FA1f
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _site_active(occ, indptr, indices, x):
    for k in range(indptr[x], indptr[x + 1]):
        if occ[indices[k]] == 0:
            return True
    return False


@njit(cache=True)
def build_active_set(occ, indptr, indices, active, pos):
    """Fill `active`/`pos` from scratch; returns the active count."""
    n = occ.shape[0]
    cnt = 0
    for x in range(n):
        if _site_active(occ, indptr, indices, x):
            active[cnt] = x
            pos[x] = cnt
            cnt += 1
        else:
            pos[x] = -1
    return cnt


@njit(cache=True, inline="always")
def _update_neighbours(x, occ, indptr, indices, active, pos, n_active):
    """Re-derive the active status of the neighbours of x after occ[x]
    changed (x's own constraint is unaffected by its own occupancy)."""
    for k in range(indptr[x], indptr[x + 1]):
        y = indices[k]
        now = _site_active(occ, indptr, indices, y)
        if now and pos[y] < 0:
            active[n_active] = y
            pos[y] = n_active
            n_active += 1
        elif not now and pos[y] >= 0:
            idx = pos[y]
            last = active[n_active - 1]
            active[idx] = last
            pos[last] = idx
            pos[y] = -1
            n_active -= 1
    return n_active


@njit(cache=True, inline="always")
def _sample_occupancy(occ, q, state):
    for i in range(occ.shape[0]):
        occ[i] = 0 if _next_unit(state) < q else 1


@njit(cache=True)
def _sample_conditioned(occ, q, state):
    """Product measure conditioned on >= 1 vacancy: rejection, then the
    forced-vacancy proposal accepted with probability 1/#vacancies."""
    n = occ.shape[0]
    for _ in range(200):
        _sample_occupancy(occ, q, state)
        for i in range(n):
            if occ[i] == 0:
                return
    while True:
        _sample_occupancy(occ, q, state)
        u = int(_next_unit(state) * n)
        if u >= n:
            u = n - 1
        occ[u] = 0
        k = 0
        for i in range(n):
            if occ[i] == 0:
                k += 1
        if k == 1 or _next_unit(state) < 1.0 / k:
            return


CODE_EMPTIED = 0
CODE_TMAX = 1
CODE_FROZEN = 2


@njit(cache=True, nogil=True)
def run_tau0(occ, indptr, indices, origin, q, t_max, state, active, pos):
    """Run until the origin empties; occ holds the initial state and is
    evolved in place. Returns (time, code)."""
    if occ[origin] == 0:
        return 0.0, CODE_EMPTIED
    n_active = build_active_set(occ, indptr, indices, active, pos)
    t = 0.0
    while True:
        if n_active == 0:
            return t_max, CODE_FROZEN
        u = _next_unit(state)
        t += -np.log1p(-u) / n_active
        if t > t_max:
            return t_max, CODE_TMAX
        idx = int(_next_unit(state) * n_active)
        if idx >= n_active:
            idx = n_active - 1
        x = active[idx]
        new = np.uint8(0) if _next_unit(state) < q else np.uint8(1)
        if new == occ[x]:
            continue
        occ[x] = new
        if x == origin and new == 0:
            return t, CODE_EMPTIED
        n_active = _update_neighbours(x, occ, indptr, indices, active, pos, n_active)


@njit(cache=True, nogil=True)
def tau0_batch(indptr, indices, origin, q, t_max, base_seed, n_traj, conditioned):
    """Independent trajectories; initial states drawn from the product
    measure (conditioned on >= 1 vacancy when requested)."""
    n = indptr.shape[0] - 1
    times = np.empty(n_traj, dtype=np.float64)
    codes = np.empty(n_traj, dtype=np.int8)
    occ = np.empty(n, dtype=np.uint8)
    active = np.empty(n, dtype=np.int32)
    pos = np.empty(n, dtype=np.int32)
    state = np.empty(1, dtype=np.uint64)
    for r in range(n_traj):
        state[0] = _mix_seed(base_seed, r)
        if conditioned:
            _sample_conditioned(occ, q, state)
        else:
            _sample_occupancy(occ, q, state)
        t, code = run_tau0(occ, indptr, indices, origin, q, t_max, state, active, pos)
        times[r] = t
        codes[r] = code
    return times, codes


@njit(cache=True, nogil=True)
def advance_events(occ, indptr, indices, q, n_events, state, active, pos, n_active):
    """Advance exactly n_events events (null resamples included); returns
    (elapsed time, new active count)."""
    t = 0.0
    for _ in range(n_events):
        if n_active == 0:
            break
        u = _next_unit(state)
        t += -np.log1p(-u) / n_active
        idx = int(_next_unit(state) * n_active)
        if idx >= n_active:
            idx = n_active - 1
        x = active[idx]
        new = np.uint8(0) if _next_unit(state) < q else np.uint8(1)
        if new == occ[x]:
            continue
        occ[x] = new
        n_active = _update_neighbours(x, occ, indptr, indices, active, pos, n_active)
    return t, n_active


@njit(cache=True, nogil=True)
def final_state_batch(indptr, indices, q, t_end, base_seed, n_traj, conditioned):
    """Bit-packed occupancy after evolving to time t_end, one per trajectory
    (volume must have at most 63 sites)."""
    n = indptr.shape[0] - 1
    out = np.empty(n_traj, dtype=np.int64)
    occ = np.empty(n, dtype=np.uint8)
    active = np.empty(n, dtype=np.int32)
    pos = np.empty(n, dtype=np.int32)
    state = np.empty(1, dtype=np.uint64)
    for r in range(n_traj):
        state[0] = _mix_seed(base_seed, r)
        if conditioned:
            _sample_conditioned(occ, q, state)
        else:
            _sample_occupancy(occ, q, state)
        n_active = build_active_set(occ, indptr, indices, active, pos)
        t = 0.0
        while n_active > 0:
            u = _next_unit(state)
            dt = -np.log1p(-u) / n_active
            if t + dt > t_end:
                break
            t += dt
            idx = int(_next_unit(state) * n_active)
            if idx >= n_active:
                idx = n_active - 1
            x = active[idx]
            new = np.uint8(0) if _next_unit(state) < q else np.uint8(1)
            if new == occ[x]:
                continue
            occ[x] = new
            n_active = _update_neighbours(x, occ, indptr, indices, active, pos, n_active)
        packed = np.int64(0)
        for i in range(n):
            if occ[i] == 1:
                packed |= np.int64(1) << np.int64(i)
        out[r] = packed
    return out
