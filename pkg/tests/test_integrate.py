import numba as nb
import numpy as np
import pytest

import capsize_tst as ct
from capsize_tst.integrate import INFINITY


def harmonic_system():
    """Undamped linear oscillator as a custom SystemSpec."""
    @nb.njit(cache=False)
    def drift(x, t):
        out = np.empty(2)
        out[0] = x[1]
        out[1] = -x[0]
        return out

    sig = np.array([[0.0], [0.0]])

    @nb.njit(cache=False)
    def diffusion(x):
        return sig

    return ct.SystemSpec(dim=2, drift=drift, diffusion=diffusion,
                         noise_amplitude=0.0, diffusion_constant=sig,
                         forced_channels=(1,))


def test_rk4_harmonic_quarter_period():
    sys_ = harmonic_system()
    path = ct.integrate_ode(sys_, [1.0, 0.0], 0.0, np.pi / 2, 1e-3)
    assert np.allclose(path.final_state(), [0.0, -1.0], atol=1e-6)


def test_empty_interval_single_state(system_det):
    path = ct.integrate_ode(system_det, [0.3, 0.1], 2.0, 2.0, 1e-2)
    assert path.times.shape == (1,)
    assert np.array_equal(path.states[0], [0.3, 0.1])


def test_damped_relaxation_to_upright(system_det):
    p1 = ct.integrate_ode(system_det, [0.2, 0.0], 0.0, 50.0, 1e-3)
    assert np.linalg.norm(p1.final_state()) < 1e-4
    p2 = ct.integrate_ode(system_det, [0.2, 0.0], 0.0, 50.0, 5e-4)
    assert np.allclose(p1.final_state(), p2.final_state(), atol=1e-8)


def test_rk4_empirical_order():
    sys_ = harmonic_system()
    t1 = 2.0
    exact = np.array([np.cos(t1), -np.sin(t1)])
    errs = []
    for dt in (0.02, 0.01, 0.005):
        path = ct.integrate_ode(sys_, [1.0, 0.0], 0.0, t1, dt)
        errs.append(np.linalg.norm(path.final_state() - exact))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert min(orders) >= 3.5


def test_divergence_reported():
    sys_ = ct.toy_roll_system(ct.RollModelParams(1.0, 1.0, 0.0, 0.0))
    with pytest.raises(ct.IntegrationDivergedError) as exc:
        ct.integrate_ode(sys_, [2.5, 1.0], 0.0, 20.0, 1e-3)
    assert exc.value.time > 0


def test_energy_dissipation_inside_well(system_det, params04):
    # E(0.6, 0.3) ~ 0.193, below the 0.25 barrier: trajectory stays in the well
    path = ct.integrate_ode(system_det, [0.6, 0.3], 0.0, 30.0, 1e-3)
    e = params04.energy(path.states[:, 0], path.states[:, 1])
    inside = np.abs(path.states[:, 0]) < 1.0
    de = np.diff(e)[inside[:-1]]
    assert de.max() < 1e-10


# ---------------------------------------------------------------------------
# stochastic integration

def test_sde_zero_noise_is_explicit_euler(system_det):
    dt = 1e-3
    path = ct.integrate_sde(system_det, [0.3, 0.0], 0.0, 1.0, dt, seed=5)
    x = np.array([0.3, 0.0])
    for k in range(1000):
        b = system_det.drift(x, k * dt)
        x = np.array([x[0] + b[0] * dt, x[1] + b[1] * dt])
    assert np.array_equal(path.final_state(), x)


def test_sde_seeded_determinism(system04):
    a = ct.integrate_sde(system04, [0.1, 0.0], 0.0, 2.0, 1e-3, seed=99)
    b = ct.integrate_sde(system04, [0.1, 0.0], 0.0, 2.0, 1e-3, seed=99)
    assert np.array_equal(a.states, b.states)
    c = ct.integrate_sde(system04, [0.1, 0.0], 0.0, 2.0, 1e-3, seed=100)
    assert not np.array_equal(a.states, c.states)


def test_ou_terminal_variance_matches_lyapunov():
    # scalar OU dz = -z dt + 0.1*sqrt(2) dW: stationary variance 0.01
    coupling = ct.velocity_forcing_coupling(1, channel=0, gain=0.0)
    filt = ct.FilterSpec(np.array([[-1.0]]), np.array([[2.0]]), 0.1, coupling)
    target = ct.ou_stationary_covariance(filt)[0, 0]

    @nb.njit(cache=False)
    def drift(x, t):
        return -x

    sig = np.array([[0.1 * np.sqrt(2.0)]])

    @nb.njit(cache=False)
    def diffusion(x):
        return sig

    sys_ = ct.SystemSpec(dim=1, drift=drift, diffusion=diffusion,
                         noise_amplitude=0.1, diffusion_constant=sig,
                         forced_channels=(0,))
    from capsize_tst.kernels import ensemble_terminal
    n = 10_000
    seeds = np.array([ct.derive_seed(7, i) for i in range(n)], dtype=np.uint64)
    x0s = np.zeros((n, 1))
    finals = ensemble_terminal(sys_.drift, sig, x0s, seeds, 1e-3, 50_000, True)
    var = finals.var()
    se = target * np.sqrt(2.0 / (n - 1))
    assert abs(var - target) < 3 * se


# ---------------------------------------------------------------------------
# first crossing

def theta_surface(level):
    return ct.hyperplane_surface([1.0, 0.0], level)


def test_equilibrium_never_crosses(system_det):
    r = ct.first_crossing(system_det, [0.0, 0.0], theta_surface(1.0),
                          horizon=20.0, dt=1e-3)
    assert not r.crossed
    assert r.time == INFINITY


def test_start_past_surface(system_det):
    r = ct.first_crossing(system_det, [1.2, 0.1], theta_surface(1.0),
                          horizon=5.0, dt=1e-3)
    assert r.crossed
    assert r.time == 0.0


def test_energetic_crossing_consistent_under_dt(system_det):
    # E(0.99, 2.0) ~ 2.245 exceeds the 0.25 barrier: crossing guaranteed
    r1 = ct.first_crossing(system_det, [0.99, 2.0], theta_surface(1.0),
                           horizon=10.0, dt=1e-3)
    r2 = ct.first_crossing(system_det, [0.99, 2.0], theta_surface(1.0),
                           horizon=10.0, dt=5e-4)
    assert r1.crossed and r2.crossed
    assert abs(r1.time - r2.time) < 1e-3
    assert r1.state_at_crossing[0] == pytest.approx(1.0, abs=1e-6)


def test_crossing_horizon_monotone(system04):
    # same seed: shrinking the horizon never creates a crossing, extending
    # never removes one before the original horizon
    surface = theta_surface(1.0)
    full = ct.first_crossing(system04, [0.5, 0.0], surface, horizon=200.0,
                             dt=1e-3, seed=321)
    assert full.crossed
    short = ct.first_crossing(system04, [0.5, 0.0], surface,
                              horizon=full.time / 2, dt=1e-3, seed=321)
    assert not short.crossed
    longer = ct.first_crossing(system04, [0.5, 0.0], surface, horizon=400.0,
                               dt=1e-3, seed=321)
    assert longer.crossed
    assert longer.time == pytest.approx(full.time, abs=1e-9)


def test_crossing_python_fallback_matches_kernel(system04):
    surface = theta_surface(1.0)
    fast = ct.first_crossing(system04, [0.5, 0.0], surface, horizon=50.0,
                             dt=1e-3, seed=11)

    # plain-python drift forces the generic path
    def drift(x, t):
        return np.array([x[1], -0.5 * x[1] - x[0] + x[0] ** 3])

    slow_sys = ct.SystemSpec(dim=2, drift=drift, diffusion=system04.diffusion,
                             noise_amplitude=0.4,
                             diffusion_constant=system04.diffusion_constant,
                             forced_channels=(1,))
    slow = ct.first_crossing(slow_sys, [0.5, 0.0], surface, horizon=50.0,
                             dt=1e-3, seed=11)
    assert slow.crossed == fast.crossed
    assert slow.time == pytest.approx(fast.time, abs=1e-9)
