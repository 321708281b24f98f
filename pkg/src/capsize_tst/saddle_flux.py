"""Deterministic strand: saddles, stable manifolds, capsize-time ensembles.

Capsize is operationalized as the first crossing of a dividing surface.
The default surface is the hyperplane through a saddle orthogonal to its
unstable direction; tilting it changes crossing times only marginally, so
the surface is kept simple.  Distributions over initial conditions (and,
with noise, over forcing realizations) map to distributions of the time
to capsize, summarized as survivability curves and capsize-rate curves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_model import ConfigurationError, SystemSpec
from .integrate import (DividingSurface, Path, first_crossing,
                        hyperplane_surface, integrate_ode, INFINITY,
                        _is_dispatcher)
from .kernels import ensemble_crossing
from .noise import derive_seed


class SaddleNotConvergedError(RuntimeError):
    def __init__(self, last_iterate, residual):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(f"Newton did not converge; residual {residual:.3e}")


class WrongIndexError(RuntimeError):
    """Converged to an equilibrium that is not a rank-one saddle."""

    def __init__(self, point, eigenvalues, n_unstable):
        self.point = point
        self.eigenvalues = eigenvalues
        self.n_unstable = n_unstable
        super().__init__(
            f"equilibrium at {point} has {n_unstable} unstable directions")


@dataclass(frozen=True)
class SaddleInfo:
    point: np.ndarray
    eigenvalues: np.ndarray
    unstable_direction: np.ndarray
    stable_direction: np.ndarray
    jacobian: np.ndarray


def _fd_jacobian(system, x):
    n = x.shape[0]
    jac = np.empty((n, n))
    for j in range(n):
        h = 1e-6 * (1.0 + abs(x[j]))
        xp = x.copy(); xp[j] += h
        xm = x.copy(); xm[j] -= h
        jac[:, j] = (np.asarray(system.drift(xp, 0.0))
                     - np.asarray(system.drift(xm, 0.0))) / (2 * h)
    return jac


def find_saddle(system: SystemSpec, guess) -> SaddleInfo:
    """Damped Newton search for a rank-one saddle of the drift.

    Central finite differences supply the Jacobian, so models stay plain
    closures over parameters.  Converged equilibria with zero or more
    than one unstable direction are rejected with their classification.
    """
    if not system.autonomous:
        raise ConfigurationError("saddle search requires an autonomous system")
    x = np.asarray(guess, dtype=float).copy()
    res = np.linalg.norm(np.asarray(system.drift(x, 0.0)))
    for _ in range(100):
        if res < 1e-10:
            break
        jac = _fd_jacobian(system, x)
        try:
            step = np.linalg.solve(jac, -np.asarray(system.drift(x, 0.0)))
        except np.linalg.LinAlgError:
            raise SaddleNotConvergedError(x, res)
        lam = 1.0
        for _ in range(30):
            x_new = x + lam * step
            res_new = np.linalg.norm(np.asarray(system.drift(x_new, 0.0)))
            if res_new < res:
                break
            lam *= 0.5
        else:
            raise SaddleNotConvergedError(x, res)
        x, res = x_new, res_new
    if res >= 1e-10:
        raise SaddleNotConvergedError(x, res)

    jac = _fd_jacobian(system, x)
    eigvals, eigvecs = np.linalg.eig(jac)
    unstable = np.where(eigvals.real > 0)[0]
    if len(unstable) != 1:
        raise WrongIndexError(x, eigvals, len(unstable))
    u = np.real(eigvecs[:, unstable[0]])
    u = u / np.linalg.norm(u)
    stable_idx = int(np.argmin(eigvals.real))
    s = np.real(eigvecs[:, stable_idx])
    s = s / np.linalg.norm(s)
    return SaddleInfo(point=x, eigenvalues=eigvals, unstable_direction=u,
                      stable_direction=s, jacobian=jac)


def default_dividing_surface(saddle: SaddleInfo) -> DividingSurface:
    """Hyperplane through the saddle, normal to the unstable direction.

    The normal is oriented so that the capsized side (g > 0) lies away
    from the origin: g(x) = <u, x - saddle point>.
    """
    u = saddle.unstable_direction.copy()
    if float(np.dot(u, saddle.point)) < 0:
        u = -u
    offset = float(np.dot(u, saddle.point))
    return hyperplane_surface(u, offset, meta={"saddle": saddle.point.copy()})


def stable_manifold_2d(system: SystemSpec, saddle: SaddleInfo,
                       arclength: float, h: float = 1e-4,
                       dt: float = 1e-3, box=None) -> Path:
    """Trace both branches of the saddle's stable manifold W+ (n = 2).

    Each branch is grown by integrating the drift backwards in time from
    saddle +/- h * stable_direction until the requested arclength; the
    polyline through the saddle is returned with signed arclength as the
    path parameter.  Backward flow contracts onto W+, so the seed offset
    error shrinks along the branch.  Branches leaving the domain box are
    truncated and flagged in meta.
    """
    if system.dim != 2:
        raise ConfigurationError("manifold tracing implemented for n = 2 only")
    if not system.autonomous:
        raise ConfigurationError("manifold tracing requires an autonomous system")
    if not (0 < h <= 1e-2):
        raise ConfigurationError("seed offset h must lie in (0, 1e-2]")
    if arclength < 0:
        raise ConfigurationError("arclength must be nonnegative")
    if arclength == 0:
        return Path(np.array([0.0]), saddle.point[None, :].copy(),
                    meta={"truncated": (False, False)})
    if box is None:
        box = system.domain or ((-np.inf, np.inf), (-np.inf, np.inf))

    drift = system.drift

    def backward(seed_point):
        pts = [seed_point.copy()]
        lengths = [0.0]
        x = seed_point.copy()
        s_acc = 0.0
        truncated = False
        max_steps = int(50 * arclength / (dt * 1e-2)) + 100000
        for _ in range(max_steps):
            k1 = -np.asarray(drift(x, 0.0))
            k2 = -np.asarray(drift(x + 0.5 * dt * k1, 0.0))
            k3 = -np.asarray(drift(x + 0.5 * dt * k2, 0.0))
            k4 = -np.asarray(drift(x + dt * k3, 0.0))
            x_new = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            step_len = float(np.linalg.norm(x_new - x))
            if not np.all(np.isfinite(x_new)):
                truncated = True
                break
            if not (box[0][0] <= x_new[0] <= box[0][1]
                    and box[1][0] <= x_new[1] <= box[1][1]):
                truncated = True
                break
            s_acc += step_len
            x = x_new
            pts.append(x.copy())
            lengths.append(s_acc)
            if s_acc >= arclength:
                break
        else:
            truncated = True
        return np.asarray(pts), np.asarray(lengths), truncated

    s_dir = saddle.stable_direction
    pts_p, len_p, trunc_p = backward(saddle.point + h * s_dir)
    pts_m, len_m, trunc_m = backward(saddle.point - h * s_dir)

    states = np.vstack([pts_m[::-1], saddle.point[None, :], pts_p])
    svals = np.concatenate([-(len_m[::-1] + h), [0.0], len_p + h])
    # strictly increasing parameter required; drop duplicate arclengths
    keep = np.concatenate([[True], np.diff(svals) > 0])
    return Path(svals[keep], states[keep],
                meta={"truncated": (trunc_m, trunc_p), "seed_offset": h})


# ---------------------------------------------------------------------------
# time-to-capsize ensembles

@dataclass(frozen=True)
class InitialSampler:
    """Distribution over initial states: point mass, Gaussian or box."""

    kind: str
    params: dict

    @staticmethod
    def point(state):
        return InitialSampler("point", {"state": np.asarray(state, dtype=float)})

    @staticmethod
    def gaussian(mean, cov):
        return InitialSampler("gaussian", {"mean": np.asarray(mean, dtype=float),
                                           "cov": np.atleast_2d(np.asarray(cov, dtype=float))})

    @staticmethod
    def uniform_box(lo, hi):
        return InitialSampler("uniform", {"lo": np.asarray(lo, dtype=float),
                                          "hi": np.asarray(hi, dtype=float)})

    def draw(self, seed, n):
        rng = np.random.default_rng(seed)
        if self.kind == "point":
            return np.tile(self.params["state"], (n, 1))
        if self.kind == "gaussian":
            return rng.multivariate_normal(self.params["mean"],
                                           self.params["cov"], size=n)
        if self.kind == "uniform":
            lo, hi = self.params["lo"], self.params["hi"]
            return rng.uniform(lo, hi, size=(n, lo.shape[0]))
        raise ConfigurationError(f"unknown sampler kind {self.kind!r}")


@dataclass(frozen=True)
class CapsizeStats:
    """Survivability curve, capsize-time histogram and point estimates."""

    horizon: float
    s_times: np.ndarray
    s_values: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    p_capsize: float
    p_stderr: float
    rate_curve: np.ndarray
    n_samples: int
    n_capsized: int
    n_failed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.s_values[0] != 1.0:
            raise ValueError("S(0) must be 1")
        if np.any(np.diff(self.s_values) > 1e-12):
            raise ValueError("survivability must be non-increasing")
        if abs(self.p_capsize - (1.0 - self.s_values[-1])) > 1e-12:
            raise ValueError("p_capsize must equal 1 - S(horizon)")


def build_capsize_stats(times, horizon, n_failed=0, n_s=200, n_bins=50,
                        meta=None) -> CapsizeStats:
    """Aggregate first-crossing times (INFINITY for censored samples)."""
    times = np.asarray(times, dtype=float)
    # a final partial step can overshoot the horizon; treat that as censored
    times = np.where(times > horizon, INFINITY, times)
    n = times.size
    finite = times[np.isfinite(times)]
    if horizon <= 0:
        return CapsizeStats(
            horizon=0.0, s_times=np.array([0.0]), s_values=np.array([1.0]),
            hist_edges=np.zeros(n_bins + 1), hist_counts=np.zeros(n_bins, dtype=int),
            p_capsize=0.0, p_stderr=0.0, rate_curve=np.array([0.0]),
            n_samples=n, n_capsized=0, n_failed=n_failed, meta=meta or {})
    s_times = np.linspace(0.0, horizon, n_s)
    # S(t) = fraction with T > t for t > 0; S(0) is 1 by convention
    s_values = np.array([np.mean(times > t) if t > 0 else 1.0 for t in s_times])
    p = float(np.mean(times <= horizon))
    stderr = math.sqrt(max(p * (1 - p), 0.0) / n) if n else 0.0
    # force the identity p = 1 - S(horizon) exactly
    s_values[-1] = 1.0 - p
    s_values = np.minimum.accumulate(s_values)
    edges = np.linspace(0.0, horizon, n_bins + 1)
    counts, _ = np.histogram(finite, bins=edges)
    dt_s = s_times[1] - s_times[0]
    rate = np.empty_like(s_values)
    rate[1:-1] = -(s_values[2:] - s_values[:-2]) / (2 * dt_s)
    rate[0] = -(s_values[1] - s_values[0]) / dt_s
    rate[-1] = -(s_values[-1] - s_values[-2]) / dt_s
    return CapsizeStats(
        horizon=horizon, s_times=s_times, s_values=s_values, hist_edges=edges,
        hist_counts=counts, p_capsize=p, p_stderr=stderr, rate_curve=rate,
        n_samples=n, n_capsized=int(np.isfinite(times).sum()),
        n_failed=n_failed, meta=meta or {})


def capsize_time_ensemble(system: SystemSpec, sampler: InitialSampler,
                          surface: DividingSurface, horizon: float, dt: float,
                          n_samples: int, seed: int) -> CapsizeStats:
    """Map an initial-state distribution to a time-to-capsize distribution.

    Each sample gets an independent forcing realization through a seed
    derived from (seed, sample index); results are independent of how the
    ensemble is batched.  Samples that diverge numerically are excluded
    from the statistics and counted in n_failed.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    x0s = sampler.draw(seed, n_samples)
    if horizon <= 0:
        return build_capsize_stats(np.full(n_samples, INFINITY), 0.0)
    seeds = np.array([derive_seed(seed, 1 + i) for i in range(n_samples)],
                     dtype=np.uint64)
    stochastic = system.noise_amplitude > 0
    n_steps = int(math.ceil(horizon / dt - 1e-12))
    sig = system.diffusion_constant
    if sig is None and not stochastic:
        sig = np.zeros((system.dim, 1))
    if _is_dispatcher(system.drift) and surface.is_linear and sig is not None:
        times, status = ensemble_crossing(
            system.drift, sig, np.ascontiguousarray(x0s, dtype=float), seeds,
            dt, n_steps, surface.normal, float(surface.offset), stochastic)
    else:
        times = np.empty(n_samples)
        status = np.empty(n_samples, dtype=np.int8)
        for i in range(n_samples):
            try:
                r = first_crossing(system, x0s[i], surface, horizon, dt,
                                   int(seeds[i]) if stochastic else None)
                times[i] = r.time
                status[i] = 1 if r.crossed else 0
            except Exception:
                times[i] = INFINITY
                status[i] = -1
    failed = status == -1
    times = np.where(failed, INFINITY, times)
    return build_capsize_stats(times[~failed], horizon,
                               n_failed=int(failed.sum()),
                               meta={"seed": seed, "dt": dt})
