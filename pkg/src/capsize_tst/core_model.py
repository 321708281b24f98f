"""System definitions: generic SDE spec, toy roll model, linear noise filter.

The central abstraction is :class:`SystemSpec`: a drift/diffusion pair of
dimension ``n`` with ``m`` noise channels.  Drift and diffusion are plain
callables; the constructors in this module compile them with numba so the
simulation kernels can inline them.  Instances are immutable and safe to
share across threads.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np
import scipy.linalg


class ConfigurationError(ValueError):
    """Raised when a model/filter configuration violates its invariants."""


@dataclass(frozen=True)
class SystemSpec:
    """Stochastic dynamical system dx = drift(x, t) dt + diffusion(x) dW.

    Parameters
    ----------
    dim : int
        State dimension n.
    drift : callable
        ``drift(x, t) -> ndarray (n,)``.  Must be total and finite on the
        domain box.
    diffusion : callable
        ``diffusion(x) -> ndarray (n, m)``.  The noise amplitude is folded
        into the matrix; `noise_amplitude` is kept separately for solvers
        that need the small parameter itself.
    noise_amplitude : float
        The amplitude eps >= 0 scaling the noise channels.
    autonomous : bool
        True if drift(x, t) does not depend on t.
    noise_dim : int
        Number of noise channels m (columns of the diffusion matrix).
    diffusion_constant : ndarray or None
        If the diffusion matrix is state independent, the constant (n, m)
        matrix; lets kernels skip per-step evaluation.
    forced_channels : tuple of int
        State indices that receive noise (rows of sigma with a nonzero
        entry); the action functional is posed on these channels only.
    domain : tuple of (lo, hi) pairs or None
        Box on which drift/diffusion are guaranteed evaluable.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    noise_amplitude: float
    autonomous: bool = True
    noise_dim: int = 1
    diffusion_constant: Optional[np.ndarray] = None
    forced_channels: tuple = ()
    domain: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def unit_diffusion_constant(self):
        """Constant diffusion matrix at unit noise amplitude, if available."""
        if self.diffusion_constant is None:
            return None
        if self.noise_amplitude == 0.0:
            return self.diffusion_constant
        return self.diffusion_constant / self.noise_amplitude


@dataclass(frozen=True)
class RollModelParams:
    """Parameters of the softening roll model.

    The restoring moment derives from V(theta) = omega0_sq*theta^2/2
    - alpha*theta^4/4, so the upright state sits in a well flanked by
    saddle points at +/- sqrt(omega0_sq/alpha) (the capsize thresholds).
    """

    omega0_sq: float = 1.0
    alpha: float = 1.0
    delta: float = 0.5
    epsilon: float = 0.0

    def __post_init__(self):
        if self.omega0_sq <= 0:
            raise ConfigurationError("omega0_sq must be positive")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")

    @property
    def saddle_angle(self):
        return float(np.sqrt(self.omega0_sq / self.alpha))

    def potential(self, theta):
        return 0.5 * self.omega0_sq * theta**2 - 0.25 * self.alpha * theta**4

    def energy(self, theta, v):
        return 0.5 * np.asarray(v) ** 2 + self.potential(np.asarray(theta))

    @property
    def barrier_energy(self):
        """Energy of the saddle above the upright equilibrium."""
        return self.potential(self.saddle_angle)


@dataclass(frozen=True)
class FilterSpec:
    """Linear filter dz = A z dt + eps * sqrt(C) dW driving the ship.

    A must be asymptotically stable; C symmetric positive semi-definite.
    `coupling(ship_state, z, t) -> ndarray (n,)` is the forcing the filter
    state contributes to the ship drift.
    """

    a_matrix: np.ndarray
    c_matrix: np.ndarray
    epsilon: float
    coupling: Callable

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        c = np.atleast_2d(np.asarray(self.c_matrix, dtype=float))
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "c_matrix", c)
        if a.shape[0] != a.shape[1] or c.shape != a.shape:
            raise ConfigurationError("A and C must be square with equal shape")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ConfigurationError("C must be symmetric")
        if np.linalg.eigvalsh(c).min() < -1e-12:
            raise ConfigurationError("C must be positive semi-definite")
        if np.linalg.eigvals(a).real.max() >= 0:
            raise ConfigurationError("A must be asymptotically stable")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")

    @property
    def k(self):
        return self.a_matrix.shape[0]


@functools.lru_cache(maxsize=None)
def _toy_drift(omega0_sq, alpha, delta):
    @nb.njit(cache=False)
    def drift(x, t):
        out = np.empty(2)
        out[0] = x[1]
        out[1] = -delta * x[1] - omega0_sq * x[0] + alpha * x[0] ** 3
        return out

    return drift


@functools.lru_cache(maxsize=None)
def _constant_diffusion(shape, data):
    mat = np.array(data, dtype=float).reshape(shape)

    @nb.njit(cache=False)
    def diffusion(x):
        return mat

    return diffusion


def toy_roll_system(params: RollModelParams) -> SystemSpec:
    """Two-dimensional roll model: state (theta, theta_dot).

    d theta     = theta_dot dt
    d theta_dot = (-delta*theta_dot - omega0_sq*theta + alpha*theta^3) dt
                  + epsilon dW

    Noise acts only on the angular-acceleration channel, so the diffusion
    matrix is the constant column (0, epsilon)^T and the system is
    hypoelliptic: downstream grid solvers must upwind the transport terms.
    """
    drift = _toy_drift(params.omega0_sq, params.alpha, params.delta)
    sigma = np.array([[0.0], [params.epsilon]])
    diffusion = _constant_diffusion((2, 1), tuple(sigma.ravel()))
    return SystemSpec(
        dim=2,
        drift=drift,
        diffusion=diffusion,
        noise_amplitude=params.epsilon,
        autonomous=True,
        noise_dim=1,
        diffusion_constant=sigma,
        forced_channels=(1,),
        domain=((-5.0, 5.0), (-6.0, 6.0)),
        meta={"model": "toy_roll", "params": params},
    )


def velocity_forcing_coupling(ship_dim: int, channel: int = 1, gain: float = 1.0):
    """Additive forcing of one ship channel by the first filter coordinate.

    This is the default coupling choice: the filter output acts as an
    external moment on the roll acceleration.
    """

    @nb.njit(cache=False)
    def coupling(x, z, t):
        out = np.zeros(ship_dim)
        out[channel] = gain * z[0]
        return out

    return coupling


def couple_filter(ship: SystemSpec, filt: FilterSpec) -> SystemSpec:
    """Augment a ship system with a linear noise filter.

    The combined state is (x, z) with drift (ship.drift + coupling, A z)
    and noise acting only on the z block through eps * sqrt(C), where
    sqrt(C) is the symmetric principal square root.
    """
    n = ship.dim
    k = filt.k
    try:
        probe = filt.coupling(np.zeros(n), np.zeros(k), 0.0)
    except Exception as exc:
        raise ConfigurationError(f"coupling not evaluable at the origin: {exc}")
    if np.shape(probe) != (n,):
        raise ConfigurationError(
            f"coupling must return shape ({n},), got {np.shape(probe)}"
        )

    a_mat = filt.a_matrix.copy()
    ship_drift = ship.drift
    coupling = filt.coupling

    @nb.njit(cache=False)
    def drift(x, t):
        xs = x[:n]
        z = x[n:]
        out = np.empty(n + k)
        base = ship_drift(xs, t)
        extra = coupling(xs, z, t)
        for i in range(n):
            out[i] = base[i] + extra[i]
        for i in range(k):
            acc = 0.0
            for j in range(k):
                acc += a_mat[i, j] * z[j]
            out[n + i] = acc
        return out

    # principal square root of C; any factor L with L L^T = C gives the same law
    w, vecs = np.linalg.eigh(filt.c_matrix)
    w = np.clip(w, 0.0, None)
    sqrt_c = vecs @ np.diag(np.sqrt(w)) @ vecs.T
    sigma = np.zeros((n + k, k))
    sigma[n:, :] = filt.epsilon * sqrt_c
    diffusion = _constant_diffusion((n + k, k), tuple(sigma.ravel()))

    if ship.noise_amplitude != 0.0:
        raise ConfigurationError(
            "couple_filter expects a noiseless ship; forcing enters through z"
        )

    return SystemSpec(
        dim=n + k,
        drift=drift,
        diffusion=diffusion,
        noise_amplitude=filt.epsilon,
        autonomous=ship.autonomous,
        noise_dim=k,
        diffusion_constant=sigma,
        forced_channels=tuple(range(n, n + k)),
        domain=None,
        meta={"model": "filtered", "ship": ship.meta.get("model")},
    )


class FilterUnstableError(ValueError):
    """The filter drift matrix is not asymptotically stable."""


def ou_stationary_covariance(filt: FilterSpec) -> np.ndarray:
    """Stationary covariance of the filter state.

    Solves the continuous Lyapunov equation A S + S A^T + eps^2 C = 0.
    """
    a = filt.a_matrix
    if np.linalg.eigvals(a).real.max() >= 0:
        raise FilterUnstableError("no stationary covariance: A is not stable")
    q = filt.epsilon**2 * filt.c_matrix
    sigma = scipy.linalg.solve_continuous_lyapunov(a, -q)
    sigma = 0.5 * (sigma + sigma.T)
    resid = np.abs(a @ sigma + sigma @ a.T + q).max()
    if resid >= 1e-10:
        raise FilterUnstableError(f"Lyapunov residual too large: {resid:.3e}")
    return sigma
