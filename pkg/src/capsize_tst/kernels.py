"""numba kernels shared by the ensemble and rare-event samplers.

All kernels take the drift as a compiled dispatcher and the diffusion as
a constant matrix, draw noise from the counter-based generator, and are
pure functions of their arguments; batching or splitting work does not
change any sampled number.

Regions are passed as (kinds, params) arrays produced by
``RegionSpec.kernel_arrays``: kind 0 is an ellipse with params
(center, radii), kind 1 a half-plane with params (normal, offset).
"""
import numba as nb
import numpy as np

from .noise import counter_normal


@nb.njit(inline="always", cache=True)
def in_region(kinds, params, x):
    n = x.shape[0]
    for s in range(kinds.shape[0]):
        if kinds[s] == 0:
            acc = 0.0
            for i in range(n):
                d = (x[i] - params[s, i]) / params[s, n + i]
                acc += d * d
            if acc <= 1.0:
                return True
        else:
            acc = 0.0
            for i in range(n):
                acc += params[s, i] * x[i]
            if acc >= params[s, n]:
                return True
    return False


@nb.njit(inline="always", cache=False)
def _em_step(drift, sigma, x, t, dt, sqdt, seed, k, stochastic):
    n = x.shape[0]
    b = drift(x, t)
    if stochastic:
        m = sigma.shape[1]
        for c in range(m):
            eta = counter_normal(seed, k, c) * sqdt
            for i in range(n):
                if sigma[i, c] != 0.0:
                    x[i] += sigma[i, c] * eta
    for i in range(n):
        x[i] += b[i] * dt


@nb.njit(cache=False)
def ensemble_crossing(drift, sigma, x0s, seeds, dt, n_steps, normal, offset,
                      stochastic):
    """First crossing times of a hyperplane for a batch of paths.

    status: 1 crossed, 0 horizon reached, -1 diverged.  Crossing times
    are located on the step segment by linear interpolation of the level
    function, which is exact for a hyperplane.
    """
    ns = x0s.shape[0]
    n = x0s.shape[1]
    times = np.empty(ns)
    status = np.empty(ns, dtype=np.int8)
    sqdt = np.sqrt(dt)
    for s in range(ns):
        x = x0s[s].copy()
        seed = seeds[s]
        g_prev = -offset
        for i in range(n):
            g_prev += normal[i] * x[i]
        if g_prev > 0.0:
            times[s] = 0.0
            status[s] = 1
            continue
        times[s] = np.inf
        status[s] = 0
        for k in range(n_steps):
            _em_step(drift, sigma, x, k * dt, dt, sqdt, seed, k, stochastic)
            ok = True
            g_new = -offset
            for i in range(n):
                if not np.isfinite(x[i]):
                    ok = False
                g_new += normal[i] * x[i]
            if not ok:
                times[s] = (k + 1) * dt
                status[s] = -1
                break
            if g_prev <= 0.0 and g_new > 0.0:
                frac = g_prev / (g_prev - g_new)
                times[s] = (k + frac) * dt
                status[s] = 1
                break
            g_prev = g_new
    return times, status


@nb.njit(cache=False)
def ensemble_region_entry(drift, sigma, x0s, seeds, dt, n_steps, kinds, params,
                          stochastic):
    """First entry times into a region for a batch of paths."""
    ns = x0s.shape[0]
    times = np.empty(ns)
    status = np.empty(ns, dtype=np.int8)
    sqdt = np.sqrt(dt)
    for s in range(ns):
        x = x0s[s].copy()
        seed = seeds[s]
        if in_region(kinds, params, x):
            times[s] = 0.0
            status[s] = 1
            continue
        times[s] = np.inf
        status[s] = 0
        for k in range(n_steps):
            _em_step(drift, sigma, x, k * dt, dt, sqdt, seed, k, stochastic)
            ok = True
            for i in range(x.shape[0]):
                if not np.isfinite(x[i]):
                    ok = False
            if not ok:
                times[s] = (k + 1) * dt
                status[s] = -1
                break
            if in_region(kinds, params, x):
                times[s] = (k + 1) * dt
                status[s] = 1
                break
    return times, status


@nb.njit(cache=False)
def first_hit_ab(drift, sigma, x0, seeds, dt, max_steps, kinds_a, params_a,
                 kinds_b, params_b):
    """Which of A (0) or B (1) each path hits first; 2 timeout, -1 diverged."""
    ns = seeds.shape[0]
    outcome = np.empty(ns, dtype=np.int8)
    sqdt = np.sqrt(dt)
    for s in range(ns):
        x = x0.copy()
        seed = seeds[s]
        outcome[s] = 2
        for k in range(max_steps):
            _em_step(drift, sigma, x, k * dt, dt, sqdt, seed, k, True)
            ok = True
            for i in range(x.shape[0]):
                if not np.isfinite(x[i]):
                    ok = False
            if not ok:
                outcome[s] = -1
                break
            if in_region(kinds_a, params_a, x):
                outcome[s] = 0
                break
            if in_region(kinds_b, params_b, x):
                outcome[s] = 1
                break
    return outcome


@nb.njit(cache=False)
def ensemble_terminal(drift, sigma, x0s, seeds, dt, n_steps, stochastic):
    """Terminal states of a batch of fixed-length paths."""
    ns = x0s.shape[0]
    out = np.empty_like(x0s)
    sqdt = np.sqrt(dt)
    for s in range(ns):
        x = x0s[s].copy()
        seed = seeds[s]
        for k in range(n_steps):
            _em_step(drift, sigma, x, k * dt, dt, sqdt, seed, k, stochastic)
        out[s] = x
    return out


@nb.njit(cache=False)
def count_transitions(drift, sigma, kinds_a, params_a, kinds_b, params_b,
                      reset_state, dt, n_steps, seed, max_segments,
                      stochastic):
    """One long trajectory with re-injection; A->B transition bookkeeping.

    Maintains the last-visited label; each A->B label change yields one
    transition and the step interval of its reactive segment (last exit
    from A up to B entry).  On entering B the state jumps to reset_state
    at zero time cost.  Returns (n_transitions, seg_start, seg_end,
    n_diverged); intervals beyond max_segments are counted but their
    intervals are dropped (callers reservoir-sample within the cap).
    """
    x = reset_state.copy()
    sqdt = np.sqrt(dt)
    n_trans = 0
    n_div = 0
    n_kept = 0
    seg_start = np.empty(max_segments, np.int64)
    seg_end = np.empty(max_segments, np.int64)
    in_a_prev = in_region(kinds_a, params_a, x)
    exit_step = 0
    for k in range(n_steps):
        _em_step(drift, sigma, x, k * dt, dt, sqdt, seed, k, stochastic)
        ok = True
        for i in range(x.shape[0]):
            if not np.isfinite(x[i]):
                ok = False
        if not ok:
            n_div += 1
            for i in range(x.shape[0]):
                x[i] = reset_state[i]
            in_a_prev = True
            continue
        in_a = in_region(kinds_a, params_a, x)
        in_b = in_region(kinds_b, params_b, x)
        if in_a_prev and not in_a:
            exit_step = k
        if in_b:
            n_trans += 1
            if n_kept < max_segments:
                seg_start[n_kept] = exit_step
                seg_end[n_kept] = k
                n_kept += 1
            for i in range(x.shape[0]):
                x[i] = reset_state[i]
            in_a = True
        in_a_prev = in_a
    return n_trans, seg_start[:n_kept], seg_end[:n_kept], n_div


@nb.njit(cache=False)
def replay_segments(drift, sigma, kinds_b, params_b, reset_state, dt, seed,
                    seg_start, seg_end, selected):
    """Re-simulate the count_transitions trajectory, recording states
    inside the selected segments.  Identical noise stream, so the replay
    is exact.  Returns the flat state log and per-segment lengths."""
    total = 0
    for idx in range(selected.shape[0]):
        s = selected[idx]
        total += seg_end[s] - seg_start[s] + 1
    n = reset_state.shape[0]
    out = np.empty((total, n))
    lengths = np.empty(selected.shape[0], np.int64)
    for idx in range(selected.shape[0]):
        s = selected[idx]
        lengths[idx] = seg_end[s] - seg_start[s] + 1
    if selected.shape[0] == 0:
        return out, lengths
    last_step = seg_end[selected[-1]]
    x = reset_state.copy()
    sqdt = np.sqrt(dt)
    ptr = 0
    si = 0
    nsel = selected.shape[0]
    for k in range(last_step + 1):
        _em_step(drift, sigma, x, k * dt, dt, sqdt, seed, k, True)
        ok = True
        for i in range(n):
            if not np.isfinite(x[i]):
                ok = False
        if not ok:
            for i in range(n):
                x[i] = reset_state[i]
            continue
        while si < nsel and k > seg_end[selected[si]]:
            si += 1
        if si < nsel and seg_start[selected[si]] <= k <= seg_end[selected[si]]:
            out[ptr] = x
            ptr += 1
        if in_region(kinds_b, params_b, x):
            for i in range(n):
                x[i] = reset_state[i]
    return out[:ptr], lengths
