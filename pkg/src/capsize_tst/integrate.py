"""Fixed-step deterministic and stochastic time integration.

Deterministic propagation uses the classical fourth-order Runge-Kutta
scheme; stochastic propagation uses Euler-Maruyama with counter-based
noise (see :mod:`capsize_tst.noise`), so a path is a pure function of
(system, x0, dt, seed).  Step size is fixed: no adaptivity, which keeps
stochastic paths auditable and replayable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba as nb
import numpy as np

from .core_model import SystemSpec
from .noise import counter_normal, mix64

INFINITY = math.inf


class IntegrationDivergedError(RuntimeError):
    """State left the finite range during integration."""

    def __init__(self, time, state):
        self.time = time
        self.state = state
        super().__init__(f"integration diverged at t = {time:.6g}")


@dataclass(frozen=True)
class Path:
    """Time-stamped state sequence."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        if x.shape[0] != t.shape[0]:
            raise ValueError("times and states must have equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @property
    def dim(self):
        return self.states.shape[1]

    def final_state(self):
        return self.states[-1]


@dataclass(frozen=True)
class CrossingResult:
    """Outcome of a first-crossing search; time is INFINITY when no crossing."""

    crossed: bool
    time: float
    state_at_crossing: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.crossed and self.time != INFINITY:
            raise ValueError("no crossing implies time = INFINITY")


def _is_dispatcher(fn):
    return isinstance(fn, nb.core.dispatcher.Dispatcher)


@nb.njit(cache=False)
def _rk4_kernel(drift, x0, t0, h, n_steps, out):
    x = x0.copy()
    out[0] = x
    for k in range(n_steps):
        t = t0 + k * h
        k1 = drift(x, t)
        k2 = drift(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = drift(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = drift(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
        ok = True
        for i in range(x.shape[0]):
            if not np.isfinite(x[i]):
                ok = False
        if not ok:
            return k + 1
    return -1


def _rk4_python(drift, x0, t0, h, n_steps, out):
    x = np.array(x0, dtype=float)
    out[0] = x
    for k in range(n_steps):
        t = t0 + k * h
        k1 = np.asarray(drift(x, t))
        k2 = np.asarray(drift(x + 0.5 * h * k1, t + 0.5 * h))
        k3 = np.asarray(drift(x + 0.5 * h * k2, t + 0.5 * h))
        k4 = np.asarray(drift(x + h * k3, t + h))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
        if not np.all(np.isfinite(x)):
            return k + 1
    return -1


def _plan_steps(t0, t1, dt):
    span = t1 - t0
    n_steps = max(1, int(math.ceil(span / dt - 1e-12)))
    return n_steps, span / n_steps


def integrate_ode(system: SystemSpec, x0, t0: float, t1: float, dt: float) -> Path:
    """Deterministic RK4 integration of the drift (noise ignored).

    The step is shrunk uniformly so the final time lands exactly on t1.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    x0 = np.asarray(x0, dtype=float)
    if t1 == t0:
        return Path(np.array([t0]), x0[None, :], meta={"dt": dt})
    n_steps, h = _plan_steps(t0, t1, dt)
    out = np.empty((n_steps + 1, system.dim))
    if _is_dispatcher(system.drift):
        bad = _rk4_kernel(system.drift, x0, t0, h, n_steps, out)
    else:
        bad = _rk4_python(system.drift, x0, t0, h, n_steps, out)
    times = t0 + h * np.arange(n_steps + 1)
    if bad >= 0:
        raise IntegrationDivergedError(times[bad], out[bad - 1] if bad else x0)
    return Path(times, out, meta={"dt": h})


@nb.njit(cache=False)
def _em_kernel(drift, sigma, x0, t0, dt, n_steps, seed, out):
    n = x0.shape[0]
    m = sigma.shape[1]
    x = x0.copy()
    out[0] = x
    sqdt = np.sqrt(dt)
    eta = np.empty(m)
    for k in range(n_steps):
        b = drift(x, t0 + k * dt)
        for c in range(m):
            eta[c] = counter_normal(seed, k, c) * sqdt
        for i in range(n):
            acc = x[i] + b[i] * dt
            for c in range(m):
                acc += sigma[i, c] * eta[c]
            x[i] = acc
        out[k + 1] = x
        ok = True
        for i in range(n):
            if not np.isfinite(x[i]):
                ok = False
        if not ok:
            return k + 1
    return -1


def _em_python(drift, diffusion, sigma_const, x0, t0, dt, n_steps, seed, out):
    x = np.array(x0, dtype=float)
    out[0] = x
    sqdt = math.sqrt(dt)
    seed = np.uint64(seed)
    for k in range(n_steps):
        b = np.asarray(drift(x, t0 + k * dt))
        sig = sigma_const if sigma_const is not None else np.asarray(diffusion(x))
        m = sig.shape[1]
        eta = np.array([counter_normal(seed, np.uint64(k), np.uint64(c)) for c in range(m)])
        x = x + b * dt + sig @ (sqdt * eta)
        out[k + 1] = x
        if not np.all(np.isfinite(x)):
            return k + 1
    return -1


def integrate_sde(system: SystemSpec, x0, t0: float, t1: float, dt: float,
                  seed: int) -> Path:
    """Euler-Maruyama integration with counter-based noise.

    The normal increment for step k, channel c is a pure function of
    (seed, k, c); repeated calls with identical arguments give bitwise
    identical paths.  With noise_amplitude 0 this reduces to explicit
    Euler.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    x0 = np.asarray(x0, dtype=float)
    if t1 == t0:
        return Path(np.array([t0]), x0[None, :], meta={"dt": dt, "seed": seed})
    n_steps = max(1, int(round((t1 - t0) / dt)))
    out = np.empty((n_steps + 1, system.dim))
    sig = system.diffusion_constant
    if system.noise_amplitude == 0.0 and sig is None:
        sig = np.zeros((system.dim, system.noise_dim))
    if _is_dispatcher(system.drift) and sig is not None:
        bad = _em_kernel(system.drift, sig, x0, t0, dt, n_steps, np.uint64(seed), out)
    else:
        bad = _em_python(system.drift, system.diffusion, sig, x0, t0, dt,
                         n_steps, seed, out)
    times = t0 + dt * np.arange(n_steps + 1)
    if bad >= 0:
        raise IntegrationDivergedError(times[bad], out[bad - 1] if bad else x0)
    return Path(times, out, meta={"dt": dt, "seed": seed})


# ---------------------------------------------------------------------------
# first crossing of a dividing surface

@dataclass(frozen=True)
class DividingSurface:
    """Implicit codimension-1 surface; g > 0 is the capsized side.

    `level(x, t) -> float` defines the surface as its zero set.  When the
    surface is a hyperplane, `normal` and `offset` are set so simulation
    kernels can evaluate it without a callback: g(x) = normal . x - offset.
    """

    level: Callable
    normal: Optional[np.ndarray] = None
    offset: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def is_linear(self):
        return self.normal is not None

    def __call__(self, x, t=0.0):
        return float(self.level(np.asarray(x, dtype=float), t))


def hyperplane_surface(normal, offset, meta=None) -> DividingSurface:
    normal = np.asarray(normal, dtype=float)
    offset = float(offset)

    def level(x, t):
        return float(np.dot(normal, x) - offset)

    return DividingSurface(level=level, normal=normal, offset=offset,
                           meta=meta or {})


@nb.njit(cache=False)
def _crossing_kernel(drift, sigma, x0, dt, n_steps, seed, stochastic,
                     normal, offset):
    """Step until normal.x - offset changes sign to positive; returns
    (status, step index, previous state, new state).  status: 1 crossed,
    0 no crossing, -1 diverged."""
    n = x0.shape[0]
    m = sigma.shape[1]
    x = x0.copy()
    xp = x0.copy()
    sqdt = np.sqrt(dt)
    eta = np.empty(m)
    g_prev = -offset
    for i in range(n):
        g_prev += normal[i] * x[i]
    if g_prev > 0.0:
        return 1, -1, x, x
    for k in range(n_steps):
        for i in range(n):
            xp[i] = x[i]
        b = drift(x, k * dt)
        if stochastic:
            for c in range(m):
                eta[c] = counter_normal(seed, k, c) * sqdt
            for i in range(n):
                acc = x[i] + b[i] * dt
                for c in range(m):
                    acc += sigma[i, c] * eta[c]
                x[i] = acc
        else:
            # classical RK4 for the deterministic search
            k1 = b
            k2 = drift(x + 0.5 * dt * k1, k * dt + 0.5 * dt)
            k3 = drift(x + 0.5 * dt * k2, k * dt + 0.5 * dt)
            k4 = drift(x + dt * k3, k * dt + dt)
            for i in range(n):
                x[i] = x[i] + (dt / 6.0) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        ok = True
        g_new = -offset
        for i in range(n):
            if not np.isfinite(x[i]):
                ok = False
            g_new += normal[i] * x[i]
        if not ok:
            return -1, k, xp, x
        if g_prev <= 0.0 and g_new > 0.0:
            return 1, k, xp, x
        g_prev = g_new
    return 0, n_steps, x, x


def _bisect_crossing(surface, x_prev, x_new, t_prev, dt):
    """Locate the sign change on the linear segment to 1e-8 * dt."""
    lo, hi = 0.0, 1.0
    g_lo = surface(x_prev, t_prev)
    if g_lo > 0:
        return t_prev, x_prev
    while (hi - lo) > 1e-8:
        mid = 0.5 * (lo + hi)
        xm = x_prev + mid * (x_new - x_prev)
        if surface(xm, t_prev + mid * dt) > 0:
            hi = mid
        else:
            lo = mid
    s = 0.5 * (lo + hi)
    return t_prev + s * dt, x_prev + s * (x_new - x_prev)


def first_crossing(system: SystemSpec, x0, surface: DividingSurface,
                   horizon: float, dt: float, seed: Optional[int] = None
                   ) -> CrossingResult:
    """Time of the first crossing of the surface in the capsize direction.

    Integrates stochastically iff a seed is given and the system carries
    noise; otherwise deterministically (RK4).  A crossing is a sign change
    of g from <= 0 to > 0 along a step; its time is refined by bisection
    on the step segment.  Returns time INFINITY if the horizon is reached
    first.  A start already past the surface crosses at time 0.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=float)
    if surface(x0, 0.0) > 0:
        return CrossingResult(True, 0.0, x0.copy())
    stochastic = seed is not None and system.noise_amplitude > 0
    n_steps = int(math.ceil(horizon / dt - 1e-12))
    sig = system.diffusion_constant
    if sig is None and not stochastic:
        sig = np.zeros((system.dim, 1))
    if _is_dispatcher(system.drift) and surface.is_linear and sig is not None:
        status, k, xp, xn = _crossing_kernel(
            system.drift, sig, x0, dt, n_steps,
            np.uint64(seed if seed is not None else 0), stochastic,
            surface.normal, surface.offset)
    else:
        status, k, xp, xn = _crossing_python(system, x0, surface, dt, n_steps,
                                             seed, stochastic)
    if status == -1:
        raise IntegrationDivergedError((k + 1) * dt, xp)
    if status == 0:
        return CrossingResult(False, INFINITY)
    if k < 0:
        return CrossingResult(True, 0.0, x0.copy())
    t_cross, x_cross = _bisect_crossing(surface, xp, xn, k * dt, dt)
    return CrossingResult(True, t_cross, x_cross)


def _crossing_python(system, x0, surface, dt, n_steps, seed, stochastic):
    x = np.array(x0, dtype=float)
    g_prev = surface(x, 0.0)
    sqdt = math.sqrt(dt)
    sd = np.uint64(seed if seed is not None else 0)
    for k in range(n_steps):
        xp = x.copy()
        t = k * dt
        if stochastic:
            b = np.asarray(system.drift(x, t))
            sig = (system.diffusion_constant if system.diffusion_constant
                   is not None else np.asarray(system.diffusion(x)))
            eta = np.array([counter_normal(sd, np.uint64(k), np.uint64(c))
                            for c in range(sig.shape[1])])
            x = x + b * dt + sig @ (sqdt * eta)
        else:
            k1 = np.asarray(system.drift(x, t))
            k2 = np.asarray(system.drift(x + 0.5 * dt * k1, t + 0.5 * dt))
            k3 = np.asarray(system.drift(x + 0.5 * dt * k2, t + 0.5 * dt))
            k4 = np.asarray(system.drift(x + dt * k3, t + dt))
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return -1, k, xp, x
        g_new = surface(x, t + dt)
        if g_prev <= 0.0 and g_new > 0.0:
            return 1, k, xp, x
        g_prev = g_new
    return 0, n_steps, x, x
