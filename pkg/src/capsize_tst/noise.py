"""Counter-based Gaussian noise.

Every stochastic integrator in this package draws its increments from a
stateless counter-based generator: the normal deviate for (seed, step,
channel) is a pure function of those three integers.  Trajectories are
therefore bitwise reproducible regardless of chunking, worker count or
call order, and a trajectory can be replayed exactly (used by the
two-pass reactive-segment recorder in :mod:`capsize_tst.mc_rare`).

The construction is the splitmix64 finalizer applied to the mixed key,
with Box-Muller to map two 53-bit uniforms to one normal deviate.
"""
import numba as nb
import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SQRT2_64 = np.uint64(0x6A09E667F3BCC909)
_INV53 = 1.1102230246251565e-16  # 2**-53
_TWO_PI = 6.283185307179586


@nb.njit(inline="always", cache=True)
def mix64(z):
    """splitmix64 finalizer; bijective on uint64."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always", cache=True)
def counter_normal(seed, step, channel):
    """Standard normal deviate keyed by (seed, step, channel)."""
    h = mix64(seed ^ mix64(np.uint64(step)))
    h = mix64(h ^ np.uint64(channel))
    u1 = ((h >> np.uint64(11)) + np.uint64(1)) * _INV53  # in (0, 1]
    h2 = mix64(h ^ _SQRT2_64)
    u2 = (h2 >> np.uint64(11)) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def derive_seed(seed, index):
    """Child seed for stream `index`, decorrelated from the parent."""
    return int(mix64(np.uint64(seed) ^ mix64(np.uint64(index))))


# non-jitted mirror, used by pure-python integration fallbacks
def counter_normal_py(seed, step, channel):
    return float(counter_normal(np.uint64(seed), np.uint64(step), np.uint64(channel)))
