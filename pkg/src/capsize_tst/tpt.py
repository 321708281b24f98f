"""Grid-based transition path theory for two-dimensional systems.

All solvers share one discretization: a continuous-time Markov chain on
the grid nodes whose generator upwinds the advection along the flow and
takes central differences for the diffusion on noisy channels.  The
stationary density solve uses the transpose of that generator (a
conservative finite-volume operator), so density, committors and rates
are mutually consistent: the reported transition rate is the exact A->B
rate of the discrete chain.

The degenerate (hypoelliptic) diffusion of the roll model - noise on the
velocity channel only - is handled by the upwinding, which keeps the
operator an M-matrix and the committors inside [0, 1] by the discrete
maximum principle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core_model import ConfigurationError, SystemSpec


class SolverError(RuntimeError):
    """A grid solve failed its residual or conditioning contract."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor grid on [theta_lo, theta_hi] x [v_lo, v_hi].

    Nodes include both endpoints; n_theta, n_v >= 3.
    """

    theta_bounds: tuple
    v_bounds: tuple
    n_theta: int
    n_v: int

    def __post_init__(self):
        if self.n_theta < 3 or self.n_v < 3:
            raise ConfigurationError("grid needs at least 3 nodes per axis")
        if self.theta_bounds[1] <= self.theta_bounds[0] or \
           self.v_bounds[1] <= self.v_bounds[0]:
            raise ConfigurationError("grid bounds must be increasing")

    @property
    def spacing(self):
        return ((self.theta_bounds[1] - self.theta_bounds[0]) / (self.n_theta - 1),
                (self.v_bounds[1] - self.v_bounds[0]) / (self.n_v - 1))

    @property
    def theta_nodes(self):
        return np.linspace(*self.theta_bounds, self.n_theta)

    @property
    def v_nodes(self):
        return np.linspace(*self.v_bounds, self.n_v)

    @property
    def shape(self):
        return (self.n_theta, self.n_v)

    @property
    def size(self):
        return self.n_theta * self.n_v

    def mesh(self):
        return np.meshgrid(self.theta_nodes, self.v_nodes, indexing="ij")

    def trapezoid_weights(self):
        w = np.ones(self.shape)
        w[0, :] *= 0.5
        w[-1, :] *= 0.5
        w[:, 0] *= 0.5
        w[:, -1] *= 0.5
        return w

    def integrate(self, values):
        dth, dv = self.spacing
        return float(np.sum(values * self.trapezoid_weights()) * dth * dv)

    def interpolate(self, values, theta, v):
        """Bilinear interpolation of node values at (theta, v)."""
        th = self.theta_nodes
        vs = self.v_nodes
        dth, dv = self.spacing
        i = int(np.clip(np.searchsorted(th, theta) - 1, 0, self.n_theta - 2))
        j = int(np.clip(np.searchsorted(vs, v) - 1, 0, self.n_v - 2))
        fx = (theta - th[i]) / dth
        fy = (v - vs[j]) / dv
        return float((1 - fx) * (1 - fy) * values[i, j]
                     + fx * (1 - fy) * values[i + 1, j]
                     + (1 - fx) * fy * values[i, j + 1]
                     + fx * fy * values[i + 1, j + 1])


FIELD_KINDS = ("density", "committor_forward", "committor_backward",
               "reactive_density")


@dataclass(frozen=True)
class ScalarField:
    """Values of a scalar quantity on grid nodes."""

    grid: Grid2D
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ConfigurationError("values shape does not match grid")
        object.__setattr__(self, "values", vals)

    def integral(self):
        return self.grid.integrate(self.values)

    def at(self, theta, v):
        return self.grid.interpolate(self.values, theta, v)


# ---------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float))
        if np.any(self.radii <= 0):
            raise ConfigurationError("ellipse radii must be positive")

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(((x - self.center) / self.radii) ** 2)) <= 1.0

    def mask(self, grid):
        TH, VV = grid.mesh()
        return (((TH - self.center[0]) / self.radii[0]) ** 2
                + ((VV - self.center[1]) / self.radii[1]) ** 2) <= 1.0


@dataclass(frozen=True)
class HalfPlane:
    """Points with normal . x >= offset."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))

    def contains(self, x):
        return float(np.dot(self.normal, np.asarray(x, dtype=float))) >= self.offset

    def mask(self, grid):
        TH, VV = grid.mesh()
        return (self.normal[0] * TH + self.normal[1] * VV) >= self.offset


@dataclass(frozen=True)
class RegionSpec:
    """Labelled region: the union of primitive shapes."""

    label: str
    shapes: tuple

    def contains(self, x):
        return any(s.contains(x) for s in self.shapes)

    def mask(self, grid):
        m = np.zeros(grid.shape, dtype=bool)
        for s in self.shapes:
            m |= s.mask(grid)
        return m

    def kernel_arrays(self, dim=2):
        """Encode shapes as (kinds, params) arrays for numba kernels.

        kind 0: ellipse, params = center (dim) + radii (dim)
        kind 1: half-plane, params = normal (dim) + offset
        """
        kinds = np.empty(len(self.shapes), dtype=np.int64)
        params = np.zeros((len(self.shapes), 2 * dim), dtype=float)
        for s_i, s in enumerate(self.shapes):
            if isinstance(s, Ellipse):
                kinds[s_i] = 0
                params[s_i, :dim] = s.center
                params[s_i, dim:2 * dim] = s.radii
            elif isinstance(s, HalfPlane):
                kinds[s_i] = 1
                params[s_i, :dim] = s.normal
                params[s_i, dim] = s.offset
            else:
                raise ConfigurationError(f"cannot encode shape {type(s)}")
        return kinds, params


def disk_region(label, center, radius):
    return RegionSpec(label, (Ellipse(center, (radius, radius)),))


def halfplane_region(label, normal, offset):
    return RegionSpec(label, (HalfPlane(normal, offset),))


def band_exterior_region(label, threshold, axis=0):
    """|x_axis| >= threshold as the union of two half-planes."""
    n1 = np.zeros(2)
    n1[axis] = 1.0
    return RegionSpec(label, (HalfPlane(n1, threshold), HalfPlane(-n1, threshold)))


def check_disjoint(region_a, region_b, grid):
    if np.any(region_a.mask(grid) & region_b.mask(grid)):
        raise ConfigurationError("regions A and B overlap on the grid")


# ---------------------------------------------------------------------------
# discrete generator

def _drift_on_grid(system, grid):
    th = grid.theta_nodes
    vs = grid.v_nodes
    b1 = np.empty(grid.shape)
    b2 = np.empty(grid.shape)
    x = np.empty(2)
    for i in range(grid.n_theta):
        for j in range(grid.n_v):
            x[0] = th[i]
            x[1] = vs[j]
            b = system.drift(x, 0.0)
            b1[i, j] = b[0]
            b2[i, j] = b[1]
    if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
        raise SolverError("drift not finite on the grid")
    return b1, b2


def _diffusion_diagonal(system):
    """Diagonal of a = sigma sigma^T / 2; rejects non-diagonal tensors."""
    if system.dim != 2:
        raise ConfigurationError("grid solvers require a 2-D system")
    sig = system.diffusion_constant
    if sig is None:
        sig = np.asarray(system.diffusion(np.zeros(system.dim)))
    a = 0.5 * sig @ sig.T
    if abs(a[0, 1]) > 1e-13 * (1 + abs(a[0, 0]) + abs(a[1, 1])):
        raise ConfigurationError("grid solvers support diagonal diffusion only")
    return float(a[0, 0]), float(a[1, 1])


def _generator(system, grid, drift_fields=None):
    """Upwind/central CTMC generator on grid nodes (CSR, row sums zero)."""
    dth, dv = grid.spacing
    if drift_fields is None:
        b1, b2 = _drift_on_grid(system, grid)
    else:
        b1, b2 = drift_fields
    a_th, a_v = _diffusion_diagonal(system)
    n_th, n_v = grid.shape
    K = np.arange(grid.size).reshape(grid.shape)

    rows, cols, vals = [], [], []

    # theta advection
    up = (b1 > 0)
    up[-1, :] = False
    rows.append(K[up]); cols.append(K[up] + n_v); vals.append(b1[up] / dth)
    dn = (b1 < 0)
    dn[0, :] = False
    rows.append(K[dn]); cols.append(K[dn] - n_v); vals.append(-b1[dn] / dth)
    # v advection
    up = (b2 > 0)
    up[:, -1] = False
    rows.append(K[up]); cols.append(K[up] + 1); vals.append(b2[up] / dv)
    dn = (b2 < 0)
    dn[:, 0] = False
    rows.append(K[dn]); cols.append(K[dn] - 1); vals.append(-b2[dn] / dv)
    # diffusion
    if a_v > 0:
        m = np.ones(grid.shape, dtype=bool)
        m[:, -1] = False
        rows.append(K[m]); cols.append(K[m] + 1)
        vals.append(np.full(m.sum(), a_v / dv**2))
        m = np.ones(grid.shape, dtype=bool)
        m[:, 0] = False
        rows.append(K[m]); cols.append(K[m] - 1)
        vals.append(np.full(m.sum(), a_v / dv**2))
    if a_th > 0:
        m = np.ones(grid.shape, dtype=bool)
        m[-1, :] = False
        rows.append(K[m]); cols.append(K[m] + n_v)
        vals.append(np.full(m.sum(), a_th / dth**2))
        m = np.ones(grid.shape, dtype=bool)
        m[0, :] = False
        rows.append(K[m]); cols.append(K[m] - n_v)
        vals.append(np.full(m.sum(), a_th / dth**2))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    diag = -np.bincount(rows, weights=vals, minlength=grid.size)
    rows = np.concatenate([rows, np.arange(grid.size)])
    cols = np.concatenate([cols, np.arange(grid.size)])
    vals = np.concatenate([vals, diag])
    return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)),
                                       shape=(grid.size, grid.size)))


def _check_residual(a_mat, x, b, what):
    r = np.abs(a_mat @ x - b).max()
    scale = abs(a_mat).max() * max(np.abs(x).max(), 1.0) + np.abs(b).max()
    if r > 1e-10 * scale:
        raise SolverError(f"{what}: relative residual {r / scale:.3e} exceeds 1e-10")


# ---------------------------------------------------------------------------
# stationary density

def solve_stationary_density(system: SystemSpec, grid: Grid2D,
                             reset_region: Optional[RegionSpec] = None,
                             reset_state=None) -> ScalarField:
    """Stationary density of the discrete chain, unit trapezoid mass.

    The conservative (mass-form) operator is the transpose of the
    upwind/central generator; its null vector under no-flux boundaries is
    the discrete stationary density.

    With `reset_region` given, probability flowing into that region is
    re-injected at `reset_state` instead, and the null vector is computed
    on the complement.  This is the stationary law of the ergodicized
    process that mirrors the re-injection convention of the direct Monte
    Carlo rate estimator, and is the density the rate and reactive-density
    pipelines consume.  Without it, the softening roll model concentrates
    its exact stationary mass at the capsized walls of the box.
    """
    if system.noise_amplitude <= 0:
        raise ConfigurationError("stationary density needs noise (eps > 0)")
    G = _generator(system, grid)
    Q = G.T.tocoo()
    n = grid.size
    if reset_region is not None:
        if reset_state is None:
            raise ConfigurationError("reset_region requires reset_state")
        in_reset = reset_region.mask(grid).reshape(-1)
        # re-injection is spread over the four cells around reset_state with
        # bilinear weights, preserving any point symmetry of the setup
        th = grid.theta_nodes
        vs = grid.v_nodes
        dth, dv = grid.spacing
        i0 = int(np.clip(np.searchsorted(th, reset_state[0]) - 1, 0,
                         grid.n_theta - 2))
        j0 = int(np.clip(np.searchsorted(vs, reset_state[1]) - 1, 0,
                         grid.n_v - 2))
        fx = (reset_state[0] - th[i0]) / dth
        fy = (reset_state[1] - vs[j0]) / dv
        cells = np.array([i0 * grid.n_v + j0, (i0 + 1) * grid.n_v + j0,
                          i0 * grid.n_v + j0 + 1, (i0 + 1) * grid.n_v + j0 + 1])
        weights = np.array([(1 - fx) * (1 - fy), fx * (1 - fy),
                            (1 - fx) * fy, fx * fy])
        if np.any(in_reset[cells]):
            raise ConfigurationError("reset state lies inside the reset region")
        off_diag = Q.row != Q.col
        into_reset = in_reset[Q.row] & off_diag
        keep = ~into_reset
        add_rows = [Q.row[keep]]
        add_cols = [Q.col[keep]]
        add_data = [Q.data[keep]]
        for cell, wgt in zip(cells, weights):
            if wgt == 0.0:
                continue
            add_rows.append(np.full(into_reset.sum(), cell))
            add_cols.append(Q.col[into_reset])
            add_data.append(wgt * Q.data[into_reset])
        Q = sp.coo_matrix((np.concatenate(add_data),
                           (np.concatenate(add_rows), np.concatenate(add_cols))),
                          shape=(n, n))
        live = np.where(~in_reset)[0]
    else:
        live = np.arange(n)
    Q = Q.tocsr()[np.ix_(live, live)]

    # null vector with a normalization row appended in place of the last
    # (redundant) balance equation
    A = Q.tolil()
    A[-1, :] = 1.0
    b = np.zeros(len(live))
    b[-1] = 1.0
    try:
        mass = spla.spsolve(sp.csr_matrix(A), b)
    except Exception as exc:
        raise SolverError(f"stationary solve failed: {exc}")
    if not np.all(np.isfinite(mass)):
        raise SolverError("stationary solve produced non-finite masses")
    resid = np.abs(Q @ mass).max() / max(np.abs(Q.data).max() * np.abs(mass).max(), 1e-300)
    if resid > 1e-8:
        raise SolverError(f"stationary null-vector residual {resid:.3e}")
    mass = np.clip(mass, 0.0, None)

    values = np.zeros(n)
    values[live] = mass
    dth, dv = grid.spacing
    rho = values.reshape(grid.shape) / (dth * dv)
    z = grid.integrate(rho)
    if z <= 0:
        raise SolverError("stationary density has no mass")
    rho = rho / z
    meta = {"residual": float(resid),
            "reset": reset_region.label if reset_region is not None else None}
    return ScalarField(grid=grid, values=rho, kind="density", meta=meta)


def boltzmann_density(grid: Grid2D, energy: Callable, beta: float) -> ScalarField:
    """Gibbs field exp(-beta * energy(theta, v)) normalized on the grid.

    For the underdamped roll model with damping delta and noise eps the
    stationary law on an unbounded domain is of this form with
    beta = 2 * delta / eps^2; used as the analytic reference wherever a
    closed-form stationary density exists.
    """
    TH, VV = grid.mesh()
    vals = np.exp(-beta * energy(TH, VV))
    z = grid.integrate(vals)
    return ScalarField(grid=grid, values=vals / z, kind="density",
                       meta={"analytic": True, "beta": beta})


# ---------------------------------------------------------------------------
# committors

def _bound_preserving_sweep(G, q_full, free_idx):
    """One Jacobi relaxation sweep that provably lands inside [0, 1].

    The update q_i = sum_j r_ij q_j / sum_j r_ij is a convex combination
    of the generator's jump targets.  Evaluated in extended precision with
    numerator and denominator accumulated termwise in the same order, the
    numerator never exceeds the denominator, so the quotient cannot round
    above 1 (and is a sum of nonnegative terms, so never below 0).  The
    sweep is non-expansive in the sup norm, so the direct solve's accuracy
    is preserved.
    """
    indptr, indices, data = G.indptr, G.indices, G.data
    q_in = np.minimum(np.maximum(q_full, 0.0), 1.0).astype(np.longdouble)
    data_ld = data.astype(np.longdouble)
    out = q_full.copy()
    for i in free_idx:
        num = np.longdouble(0.0)
        den = np.longdouble(0.0)
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                continue
            r = data_ld[p]
            num += r * q_in[j]
            den += r
        if den > 0:
            out[i] = float(num / den)
    return out


def _solve_dirichlet(G, grid, ones_region_mask, zeros_region_mask, what):
    free = ~(ones_region_mask | zeros_region_mask)
    fi = np.where(free)[0]
    oi = np.where(ones_region_mask)[0]
    q = np.zeros(grid.size)
    q[oi] = 1.0
    if fi.size:
        a_ff = G[np.ix_(fi, fi)]
        b = -np.asarray(G[np.ix_(fi, oi)].sum(axis=1)).ravel()
        try:
            sol = spla.spsolve(a_ff.tocsr(), b)
        except Exception as exc:
            raise SolverError(f"{what} solve failed: {exc}")
        if not np.all(np.isfinite(sol)):
            raise SolverError(f"{what} solve produced non-finite values")
        _check_residual(a_ff, sol, b, what)
        q[fi] = sol
        q2 = _bound_preserving_sweep(G.tocsr(), q, fi)
        if q2[fi].min() < 0.0 or q2[fi].max() > 1.0:
            raise SolverError(f"{what}: [0,1] bounds not achieved")
        q = q2
    return q.reshape(grid.shape)


def solve_committor_forward(system: SystemSpec, grid: Grid2D,
                            region_a: RegionSpec, region_b: RegionSpec
                            ) -> ScalarField:
    """Probability of reaching B (capsize) before A, per grid node.

    Dirichlet data: 0 on A-nodes, 1 on B-nodes; zero normal derivative on
    the outer boundary.  Values are guaranteed inside [0, 1] by the
    discrete maximum principle; they are never clamped.
    """
    if system.noise_amplitude <= 0:
        raise ConfigurationError("committor needs noise (eps > 0)")
    a_mask = region_a.mask(grid).reshape(-1)
    b_mask = region_b.mask(grid).reshape(-1)
    if not a_mask.any() or not b_mask.any():
        raise ConfigurationError("region A or B contains no grid node")
    if np.any(a_mask & b_mask):
        raise ConfigurationError("regions A and B overlap on the grid")
    G = _generator(system, grid)
    q = _solve_dirichlet(G, grid, b_mask, a_mask, "forward committor")
    return ScalarField(grid=grid, values=q, kind="committor_forward",
                       meta={"region_a": region_a, "region_b": region_b})


def _reversed_drift_fields(system, grid, rho_values, mask_floor=1e-12):
    """Drift of the time-reversed process from a discrete density.

    b_rev = -b + (1 / rho) div(sigma sigma^T rho), evaluated with central
    differences; nodes with rho below the floor get no correction and are
    counted as masked.
    """
    b1, b2 = _drift_on_grid(system, grid)
    a_th, a_v = _diffusion_diagonal(system)
    dth, dv = grid.spacing
    rho = np.asarray(rho_values, dtype=float)
    corr1 = np.zeros(grid.shape)
    corr2 = np.zeros(grid.shape)
    d_rho = np.zeros(grid.shape)
    if a_v > 0:
        d_rho[:, 1:-1] = (rho[:, 2:] - rho[:, :-2]) / (2 * dv)
        d_rho[:, 0] = (rho[:, 1] - rho[:, 0]) / dv
        d_rho[:, -1] = (rho[:, -1] - rho[:, -2]) / dv
        with np.errstate(divide="ignore", invalid="ignore"):
            corr2 = np.where(rho > mask_floor, 2.0 * a_v * d_rho / rho, 0.0)
    if a_th > 0:
        d_rho2 = np.zeros(grid.shape)
        d_rho2[1:-1, :] = (rho[2:, :] - rho[:-2, :]) / (2 * dth)
        d_rho2[0, :] = (rho[1, :] - rho[0, :]) / dth
        d_rho2[-1, :] = (rho[-1, :] - rho[-2, :]) / dth
        with np.errstate(divide="ignore", invalid="ignore"):
            corr1 = np.where(rho > mask_floor, 2.0 * a_th * d_rho2 / rho, 0.0)
    n_masked = int(np.sum(rho <= mask_floor))
    return (-b1 + corr1, -b2 + corr2), n_masked


def solve_committor_backward(system: SystemSpec, grid: Grid2D,
                             region_a: RegionSpec, region_b: RegionSpec,
                             rho: ScalarField) -> ScalarField:
    """Probability that the process at a node last visited A rather than B.

    Solves the forward-committor equation for the time-reversed process,
    whose drift is derived from the stationary density `rho`; boundary
    data are swapped (1 on A, 0 on B).  Nodes where rho falls below 1e-12
    are flagged in meta and get no reversal correction there.
    """
    if rho.grid != grid:
        raise ConfigurationError("rho must live on the same grid")
    a_mask = region_a.mask(grid).reshape(-1)
    b_mask = region_b.mask(grid).reshape(-1)
    if not a_mask.any() or not b_mask.any():
        raise ConfigurationError("region A or B contains no grid node")
    fields, n_masked = _reversed_drift_fields(system, grid, rho.values)
    G = _generator(system, grid, drift_fields=fields)
    q = _solve_dirichlet(G, grid, a_mask, b_mask, "backward committor")
    return ScalarField(grid=grid, values=q, kind="committor_backward",
                       meta={"region_a": region_a, "region_b": region_b,
                             "masked_nodes": n_masked})


# ---------------------------------------------------------------------------
# reactive density and rate

def reactive_density(rho: ScalarField, q_plus: ScalarField,
                     q_minus: ScalarField, normalize: bool = False
                     ) -> ScalarField:
    """Density of reactive trajectories: pointwise q_plus * rho * q_minus."""
    if rho.grid != q_plus.grid or rho.grid != q_minus.grid:
        raise ConfigurationError("fields must share one grid")
    vals = q_plus.values * rho.values * q_minus.values
    integral = rho.grid.integrate(vals)
    meta = {"integral": integral, "normalized": bool(normalize)}
    if normalize:
        if integral <= 0:
            raise SolverError("reactive density has no mass to normalize")
        vals = vals / integral
    return ScalarField(grid=rho.grid, values=vals, kind="reactive_density",
                       meta=meta)


@dataclass(frozen=True)
class RateEstimate:
    """Transition rate with inspection fields.

    rate : exact A->B transition rate of the discrete chain (reactive
        probability current out of A).
    rate_quadrature : quadrature of rho * grad(q+) . a grad(q+), the
        continuum formula; reported for comparison.
    flux : probability flux field rho * a grad(q+), shape (n_theta, n_v, 2).
    """

    rate: float
    rate_quadrature: float
    flux: np.ndarray


def transition_rate_tpt(system: SystemSpec, grid: Grid2D, rho: ScalarField,
                        q_plus: ScalarField) -> RateEstimate:
    """Capsize rate k_AB from the stationary density and forward committor.

    The headline rate is the reactive probability current out of A of the
    discrete chain, sum_{x in A, y not in A} m(x) G(x, y) q+(y), which is
    the chain's exact A->B transition frequency at stationarity.  The
    continuum quadrature of rho |grad q+|^2_a is also evaluated; on
    hypoelliptic problems at moderate resolution it underestimates the
    rate because upwinding smears the committor layer.
    """
    if rho.grid != grid or q_plus.grid != grid:
        raise ConfigurationError("fields must live on the given grid")
    region_a = q_plus.meta.get("region_a")
    if region_a is None:
        raise ConfigurationError("q_plus must carry its region metadata")
    a_th, a_v = _diffusion_diagonal(system)
    dth, dv = grid.spacing

    q = q_plus.values
    dq_th = np.zeros(grid.shape)
    dq_v = np.zeros(grid.shape)
    dq_th[1:-1, :] = (q[2:, :] - q[:-2, :]) / (2 * dth)
    dq_v[:, 1:-1] = (q[:, 2:] - q[:, :-2]) / (2 * dv)
    flux = np.stack([rho.values * a_th * dq_th, rho.values * a_v * dq_v], axis=-1)
    quad = grid.integrate(rho.values * (a_th * dq_th**2 + a_v * dq_v**2))

    G = _generator(system, grid).tocoo()
    w = grid.trapezoid_weights().reshape(-1)
    masses = rho.values.reshape(-1) * w * dth * dv
    a_mask = region_a.mask(grid).reshape(-1)
    qflat = q.reshape(-1)
    sel = a_mask[G.row] & (~a_mask[G.col]) & (G.row != G.col)
    rate = float(np.sum(masses[G.row[sel]] * G.data[sel] * qflat[G.col[sel]]))
    return RateEstimate(rate=rate, rate_quadrature=float(quad), flux=flux)
