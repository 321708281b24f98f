"""Freidlin-Wentzell action on discrete paths and its minimization.

The action is posed at unit noise amplitude on the forced channels only,
with the unforced (kinematic) channels constrained to their deterministic
equations.  For the roll model this reduces the path variables to the
angle sequence alone: the velocity is the centered difference of the
angle, and the residual is the forcing required on the acceleration
channel.  Minimization is damped Gauss-Newton on the resulting nonlinear
least-squares problem; the normal matrix is pentadiagonal, so each step
is a banded solve.

The terminal velocity is left free: the most likely capsize path crosses
the unsafe threshold at speed, and pinning the terminal velocity would
charge the action for braking past the saddle.  With a free terminal
velocity the minimal action from the upright state to a capsized angle
equals the quasipotential barrier (2 * delta * energy gap for the
underdamped roll model), the downhill leg being action-free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solveh_banded

from .core_model import ConfigurationError, SystemSpec


@dataclass(frozen=True)
class DiscretePath:
    """Uniformly spaced path with fixed endpoints."""

    duration: float
    states: np.ndarray
    endpoints_fixed: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        object.__setattr__(self, "states", states)
        if self.duration <= 0 and states.shape[0] > 1:
            raise ConfigurationError("duration must be positive")

    @property
    def n_points(self):
        return self.states.shape[0]

    @property
    def dt(self):
        return self.duration / (self.n_points - 1)

    @property
    def times(self):
        return np.linspace(0.0, self.duration, self.n_points)


@dataclass(frozen=True)
class ActionResult:
    value: float
    path: DiscretePath
    converged: bool
    gradient_norm: float
    infeasibility: float = 0.0
    t_profile: dict = field(default_factory=dict)


def _toy_coeffs(system):
    """Extract (omega0_sq, alpha, delta, unit sigma) from a roll system."""
    params = system.meta.get("params")
    if params is None or system.meta.get("model") != "toy_roll":
        raise ConfigurationError(
            "action minimization is implemented for the 2-D roll model")
    return params.omega0_sq, params.alpha, params.delta


def action(path: DiscretePath, system: SystemSpec) -> tuple:
    """Freidlin-Wentzell action of a path, at unit noise amplitude.

    S = 1/2 sum_i dt * ||(phi_dot_i - b(phi_i))|_F||^2 with the weighting
    (sigma0 sigma0^T|_F)^-1 on the forced channels F; derivatives are
    centered (one-sided at the ends).  The kinematic constraint on the
    unforced channels (angle rate equals the velocity coordinate) is not
    folded into S; its violation is returned separately as the
    infeasibility max |theta_dot_i - v_i|.

    Returns (value, infeasibility).
    """
    if not system.forced_channels:
        raise ConfigurationError("system declares no forced channels")
    sig0 = system.unit_diffusion_constant()
    if sig0 is None:
        raise ConfigurationError("action requires a constant diffusion matrix")
    forced = list(system.forced_channels)
    m_f = sig0[forced, :] @ sig0[forced, :].T
    if np.linalg.matrix_rank(m_f) < len(forced):
        raise ConfigurationError("singular noise covariance on forced channels")
    m_inv = np.linalg.inv(m_f)

    x = path.states
    n, dim = x.shape
    if n < 3:
        raise ConfigurationError("need at least 3 path points")
    dt = path.dt
    xdot = np.empty_like(x)
    xdot[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    xdot[0] = (x[1] - x[0]) / dt
    xdot[-1] = (x[-1] - x[-2]) / dt

    drift_vals = np.empty_like(x)
    for i in range(n):
        drift_vals[i] = system.drift(x[i], i * dt)

    resid = (xdot - drift_vals)[:, forced]
    w = np.full(n, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    value = 0.5 * float(np.einsum("i,ij,jk,ik->", w, resid, m_inv, resid))

    unforced = [c for c in range(dim) if c not in forced]
    infeas = 0.0
    for c in unforced:
        infeas = max(infeas, float(np.abs(xdot[:, c] - drift_vals[:, c]).max()))
    return value, infeas


# ---------------------------------------------------------------------------
# reduced formulation for the roll model: variables are the interior angles

def _reduced_action(theta, v_start, dt, om2, al, dlt):
    """Action and gradient over interior angles, terminal velocity free.

    Residuals r_i = theta_dd_i + delta*theta_d_i + V'(theta_i) for
    i = 0 .. n-2; the initial velocity enters through a ghost point,
    the terminal node carries no residual.
    """
    n = theta.shape[0]
    ghost = theta[1] - 2.0 * dt * v_start
    the = np.concatenate(([ghost], theta))
    acc = (the[2:] - 2.0 * the[1:-1] + the[:-2]) / dt**2
    vel = (the[2:] - the[:-2]) / (2.0 * dt)
    vprime = om2 * theta[:-1] - al * theta[:-1] ** 3
    r = acc + dlt * vel + vprime
    w = np.full(n - 1, dt)
    w[0] *= 0.5
    s_val = 0.5 * float(np.sum(w * r * r))

    wr = w * r
    c0 = -2.0 / dt**2
    cp = 1.0 / dt**2 + dlt / (2.0 * dt)
    cm = 1.0 / dt**2 - dlt / (2.0 * dt)
    vpp = om2 - 3.0 * al * theta[:-1] ** 2
    g = np.zeros(n)
    g[:-1] += wr * (c0 + vpp)
    g[1:] += wr * cp
    g[:-2] += wr[1:] * cm
    g[1] += wr[0] * (2.0 / dt**2 - cp)  # ghost contribution to r_0
    return s_val, g[1:-1], (r, w, vpp, c0, cp, cm)


def _normal_bands(n, m, w, vpp, dt, c0, cp, cm):
    """Bands of J^T W J; residual i touches interior columns i-2, i-1, i."""
    diag_r = c0 + vpp
    jp = np.full(n - 1, cp)
    jp[0] = 2.0 / dt**2
    jm = np.full(n - 1, cm)
    h00 = np.zeros(m)
    h01 = np.zeros(m)
    h02 = np.zeros(m)
    # squared terms
    idx = np.arange(2, n - 1)            # jm valid: col i-2 in [0, m-1]
    np.add.at(h00, idx - 2, w[idx] * jm[idx] ** 2)
    idx = np.arange(1, n - 1)            # diagonal entry: col i-1
    np.add.at(h00, idx - 1, w[idx] * diag_r[idx] ** 2)
    idx = np.arange(0, n - 2)            # jp: col i
    np.add.at(h00, idx, w[idx] * jp[idx] ** 2)
    # distance-1 products (jm*diag and diag*jp)
    idx = np.arange(2, n - 1)
    np.add.at(h01, idx - 2, w[idx] * jm[idx] * diag_r[idx])
    idx = np.arange(1, n - 2)
    np.add.at(h01, idx - 1, w[idx] * diag_r[idx] * jp[idx])
    # distance-2 products (jm*jp)
    idx = np.arange(2, n - 2)
    np.add.at(h02, idx - 2, w[idx] * jm[idx] * jp[idx])
    return h00, h01, h02


def _gauss_newton(theta0, v_start, dt, om2, al, dlt, gtol_rel, max_iter):
    theta = theta0.copy()
    n = theta.shape[0]
    m = n - 2
    s_val, g, parts = _reduced_action(theta, v_start, dt, om2, al, dlt)
    lam = 1e-6
    n_iter = 0
    stall = 0
    while n_iter < max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol_rel * max(1.0, s_val) or stall >= 50:
            break
        n_iter += 1
        r, w, vpp, c0, cp, cm = parts
        h00, h01, h02 = _normal_bands(n, m, w, vpp, dt, c0, cp, cm)
        accepted = False
        for _ in range(60):
            ab = np.zeros((3, m))
            ab[2, :] = h00 + lam * (1.0 + h00)
            ab[1, 1:] = h01[:-1]
            ab[0, 2:] = h02[:-2]
            try:
                step = solveh_banded(ab, -g, lower=False)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            theta_new = theta.copy()
            theta_new[1:-1] = theta[1:-1] + step
            s_new, g_new, parts_new = _reduced_action(theta_new, v_start, dt,
                                                      om2, al, dlt)
            if s_new <= s_val - 1e-4 * abs(float(np.dot(g, step))):
                stall = stall + 1 if s_new > s_val - 1e-14 * max(1.0, s_val) \
                    else 0
                theta, s_val, g, parts = theta_new, s_new, g_new, parts_new
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
    gnorm = float(np.linalg.norm(g))
    converged = gnorm < gtol_rel * max(1.0, s_val)
    return theta, s_val, gnorm, converged, n_iter


def _path_from_theta(theta, v_start, duration):
    n = theta.shape[0]
    dt = duration / (n - 1)
    v = np.empty(n)
    v[1:-1] = (theta[2:] - theta[:-2]) / (2.0 * dt)
    v[0] = v_start
    v[-1] = (theta[-1] - theta[-2]) / dt
    return DiscretePath(duration=duration,
                        states=np.stack([theta, v], axis=1))


DEFAULT_T_GRID = (5.0, 10.0, 20.0, 40.0, 70.0, 100.0)
MAX_STEP = 0.125  # resolves the roll period; coarser steps underestimate S


def minimize_action(system: SystemSpec, x_start, x_end, n_points: int = 200,
                    duration="adaptive", gtol_rel: float = 1e-6,
                    max_iter: int = 10_000,
                    t_grid: Sequence = DEFAULT_T_GRID) -> ActionResult:
    """Most likely transition path between two states of the roll model.

    With duration="adaptive", a fixed-duration minimization runs on a log
    grid of durations in [5, 100] followed by a golden-section refinement
    around the best, and the overall minimum is returned; each duration
    uses enough points to keep the time step below 0.125.  With a numeric
    duration, exactly `n_points` are used.

    Initialization is the straight line between the endpoints; if the
    search stalls there, a detour through the saddle at the capsize
    threshold is tried as well.
    """
    if n_points < 50:
        raise ConfigurationError("n_points must be >= 50")
    om2, al, dlt = _toy_coeffs(system)
    x_start = np.asarray(x_start, dtype=float)
    x_end = np.asarray(x_end, dtype=float)
    if np.allclose(x_start, x_end):
        states = np.tile(x_start, (n_points, 1))
        path = DiscretePath(duration=float(t_grid[0]), states=states)
        return ActionResult(value=0.0, path=path, converged=True,
                            gradient_norm=0.0)

    def solve_for(duration_t):
        n_eff = max(n_points, int(math.ceil(duration_t / MAX_STEP)) + 1)
        dt = duration_t / (n_eff - 1)
        inits = [np.linspace(x_start[0], x_end[0], n_eff)]
        # fallback: detour through the saddle on the capsize side
        saddle_theta = math.copysign(math.sqrt(om2 / al), x_end[0] - x_start[0])
        half = n_eff // 2
        detour = np.concatenate([
            np.linspace(x_start[0], saddle_theta, half),
            np.linspace(saddle_theta, x_end[0], n_eff - half)])
        inits.append(detour)
        best = None
        for k, init in enumerate(inits):
            theta, s_val, gnorm, conv, n_it = _gauss_newton(
                init, x_start[1], dt, om2, al, dlt, gtol_rel, max_iter)
            if best is None or s_val < best[1]:
                best = (theta, s_val, gnorm, conv)
            if conv and k == 0:
                break
        return best + (n_eff,)

    if duration == "adaptive":
        profile = {}
        sols = {}
        for t_val in t_grid:
            sols[t_val] = solve_for(float(t_val))
            profile[float(t_val)] = sols[t_val][1]
        t_sorted = sorted(profile)
        t_best = min(profile, key=profile.get)
        # golden-section refinement on the bracketing interval
        i = t_sorted.index(t_best)
        lo = t_sorted[max(i - 1, 0)]
        hi = t_sorted[min(i + 1, len(t_sorted) - 1)]
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        a_t, b_t = lo, hi
        c_t = b_t - gr * (b_t - a_t)
        d_t = a_t + gr * (b_t - a_t)
        for _ in range(8):
            for t_val in (c_t, d_t):
                if t_val not in sols:
                    sols[t_val] = solve_for(t_val)
                    profile[t_val] = sols[t_val][1]
            if profile[c_t] < profile[d_t]:
                b_t, d_t = d_t, c_t
                c_t = b_t - gr * (b_t - a_t)
            else:
                a_t, c_t = c_t, d_t
                d_t = a_t + gr * (b_t - a_t)
        t_best = min(profile, key=profile.get)
        theta, s_val, gnorm, conv, n_eff = sols[t_best]
        path = _path_from_theta(theta, x_start[1], t_best)
        return ActionResult(value=s_val, path=path, converged=conv,
                            gradient_norm=gnorm,
                            t_profile=dict(sorted(profile.items())))
    else:
        duration_t = float(duration)
        dt = duration_t / (n_points - 1)
        theta, s_val, gnorm, conv, _ = _gauss_newton(
            np.linspace(x_start[0], x_end[0], n_points), x_start[1], dt,
            om2, al, dlt, gtol_rel, max_iter)
        path = _path_from_theta(theta, x_start[1], duration_t)
        return ActionResult(value=s_val, path=path, converged=conv,
                            gradient_norm=gnorm)


def action_gradient_check(system: SystemSpec, theta, v_start, duration,
                          h: float = 1e-6):
    """Max relative error of the analytic reduced gradient vs central FD."""
    om2, al, dlt = _toy_coeffs(system)
    theta = np.asarray(theta, dtype=float)
    dt = duration / (theta.shape[0] - 1)
    _, g, _ = _reduced_action(theta, v_start, dt, om2, al, dlt)
    g_fd = np.empty_like(g)
    for k in range(g.shape[0]):
        tp = theta.copy(); tp[k + 1] += h
        tm = theta.copy(); tm[k + 1] -= h
        sp, _, _ = _reduced_action(tp, v_start, dt, om2, al, dlt)
        sm, _, _ = _reduced_action(tm, v_start, dt, om2, al, dlt)
        g_fd[k] = (sp - sm) / (2.0 * h)
    scale = max(float(np.abs(g_fd).max()), 1e-300)
    return float(np.abs(g - g_fd).max() / scale)


def rate_asymptotic(min_action: float, epsilon: float) -> float:
    """log k to exponential order: -S* / eps^2 (no prefactor)."""
    if min_action < 0:
        raise ConfigurationError("min_action must be nonnegative")
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    return -min_action / epsilon**2
