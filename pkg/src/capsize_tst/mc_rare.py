"""Direct Monte Carlo ground truth for transition statistics.

One long trajectory with re-injection: whenever the process enters the
unsafe set B it is teleported back to the A-center at zero time cost,
which makes the A->B transition recurrent and the rate estimable as
transitions per unit time.  Reactive segments (last exit from A to first
entry into B) are recovered exactly by a second, replayed pass over the
same counter-based noise stream, so no states need to be stored during
the counting pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core_model import ConfigurationError, SystemSpec
from .integrate import Path, INFINITY, _is_dispatcher
from .kernels import (count_transitions, ensemble_region_entry, first_hit_ab,
                      replay_segments)
from .noise import derive_seed
from .saddle_flux import CapsizeStats, InitialSampler, build_capsize_stats
from .tpt import Ellipse, Grid2D, RegionSpec, ScalarField


@dataclass(frozen=True)
class TransitionRecord:
    """Book-keeping of observed A->B transitions.

    segments holds at most `max_segments` reactive paths (reservoir
    subsample when more transitions occurred); n_transitions and
    total_time are always exact.
    """

    segments: List[Path]
    total_time: float
    n_transitions: int
    rate: float
    rate_stderr: float
    n_diverged: int = 0
    rate_upper95: Optional[float] = None
    meta: dict = field(default_factory=dict)


def _region_center(region: RegionSpec):
    for s in region.shapes:
        if isinstance(s, Ellipse):
            return s.center.copy()
    raise ConfigurationError(
        "re-injection point undefined: region A needs an ellipse shape")


def _require_kernel_system(system):
    if not _is_dispatcher(system.drift) or system.diffusion_constant is None:
        raise ConfigurationError(
            "direct sampling requires a compiled drift and constant diffusion")


def sample_transitions(system: SystemSpec, region_a: RegionSpec,
                       region_b: RegionSpec, total_time: float, dt: float,
                       seed: int, max_segments: int = 10_000,
                       n_streams: int = 1) -> TransitionRecord:
    """Long-run transition counting with reactive-segment extraction.

    Simulates `n_streams` independent streams (derived seeds) totalling
    `total_time`; each A->B label change counts one transition whose
    segment runs from the final A-exit to the B-entry.  Segment states are
    recorded at every integrator step.  Numerical divergences reset the
    state and are counted in n_diverged.
    """
    if total_time <= 0 or dt <= 0:
        raise ConfigurationError("total_time and dt must be positive")
    _require_kernel_system(system)
    kinds_a, params_a = region_a.kernel_arrays(system.dim)
    kinds_b, params_b = region_b.kernel_arrays(system.dim)
    reset_state = np.zeros(system.dim)
    reset_state[:2] = _region_center(region_a)[:2]
    sig = system.diffusion_constant

    per_stream = total_time / n_streams
    n_steps = int(round(per_stream / dt))
    n_trans = 0
    n_div = 0
    stream_data = []
    for w in range(n_streams):
        sd = np.uint64(derive_seed(seed, w))
        nt, seg_s, seg_e, nd = count_transitions(
            system.drift, sig, kinds_a, params_a, kinds_b, params_b,
            reset_state, dt, n_steps, sd, max_segments,
            system.noise_amplitude > 0)
        n_trans += nt
        n_div += nd
        stream_data.append((sd, seg_s, seg_e))

    # reservoir subsample across streams, then replay each stream once
    all_refs = [(w, k) for w, (_, seg_s, _) in enumerate(stream_data)
                for k in range(len(seg_s))]
    if len(all_refs) > max_segments:
        rng = np.random.default_rng(derive_seed(seed, 7_777_777))
        chosen = rng.choice(len(all_refs), size=max_segments, replace=False)
        all_refs = [all_refs[i] for i in sorted(chosen)]
    segments = []
    for w, (sd, seg_s, seg_e) in enumerate(stream_data):
        sel = np.array(sorted(k for ww, k in all_refs if ww == w), dtype=np.int64)
        if sel.size == 0:
            continue
        states, lengths = replay_segments(
            system.drift, sig, kinds_b, params_b, reset_state, dt, sd,
            seg_s, seg_e, sel)
        ptr = 0
        for idx, k in enumerate(sel):
            ln = int(lengths[idx])
            seg_states = states[ptr:ptr + ln]
            ptr += ln
            t0 = (seg_s[k] + 1) * dt
            times = t0 + dt * np.arange(ln)
            segments.append(Path(times, seg_states.copy(),
                                 meta={"stream": w, "seed": int(sd)}))

    sim_time = n_streams * n_steps * dt
    rate = n_trans / sim_time
    stderr = math.sqrt(n_trans) / sim_time
    upper = 3.0 / sim_time if n_trans == 0 else None
    return TransitionRecord(
        segments=segments, total_time=sim_time, n_transitions=n_trans,
        rate=rate, rate_stderr=stderr, n_diverged=n_div, rate_upper95=upper,
        meta={"seed": seed, "dt": dt, "n_streams": n_streams,
              "region_a": region_a, "region_b": region_b})


def merge_records(records) -> TransitionRecord:
    """Pool independent TransitionRecords (associative, order free)."""
    segments = []
    total_time = 0.0
    n_trans = 0
    n_div = 0
    for r in records:
        segments.extend(r.segments)
        total_time += r.total_time
        n_trans += r.n_transitions
        n_div += r.n_diverged
    rate = n_trans / total_time if total_time > 0 else 0.0
    stderr = math.sqrt(n_trans) / total_time if total_time > 0 else 0.0
    return TransitionRecord(segments=segments, total_time=total_time,
                            n_transitions=n_trans, rate=rate,
                            rate_stderr=stderr, n_diverged=n_div,
                            rate_upper95=(3.0 / total_time if n_trans == 0
                                          and total_time > 0 else None))


def reactive_histogram(record: TransitionRecord, grid: Grid2D) -> ScalarField:
    """Time-weighted histogram of reactive-segment states, unit mass.

    Every recorded state carries one integrator step of weight; the node
    value is the count in the node-centered cell divided by the cell
    area, normalized so the trapezoid integral over the grid is one.
    """
    if not record.segments:
        raise ConfigurationError("record contains no reactive segments")
    states = np.vstack([p.states[:, :2] for p in record.segments])
    dth, dv = grid.spacing
    th = grid.theta_nodes
    vs = grid.v_nodes
    edges_th = np.concatenate(([th[0] - dth / 2], th + dth / 2))
    edges_v = np.concatenate(([vs[0] - dv / 2], vs + dv / 2))
    counts, _, _ = np.histogram2d(states[:, 0], states[:, 1],
                                  bins=[edges_th, edges_v])
    field_vals = counts / (dth * dv)
    z = grid.integrate(field_vals)
    if z <= 0:
        raise ConfigurationError("no segment states fall inside the grid")
    return ScalarField(grid=grid, values=field_vals / z, kind="reactive_density",
                       meta={"estimator": "mc_histogram",
                             "n_segments": len(record.segments),
                             "n_states": int(states.shape[0])})


def survivability_mc(system: SystemSpec, sampler: InitialSampler,
                     region_b: RegionSpec, horizon: float, dt: float,
                     n_samples: int, seed: int) -> CapsizeStats:
    """Survivability from independent trajectories; T = first entry into B.

    Aggregation matches capsize_time_ensemble exactly, with region
    membership in place of surface crossing.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    x0s = sampler.draw(seed, n_samples)
    if horizon <= 0:
        return build_capsize_stats(np.full(n_samples, INFINITY), 0.0)
    _require_kernel_system(system)
    kinds_b, params_b = region_b.kernel_arrays(system.dim)
    seeds = np.array([derive_seed(seed, 1 + i) for i in range(n_samples)],
                     dtype=np.uint64)
    stochastic = system.noise_amplitude > 0
    n_steps = int(math.ceil(horizon / dt - 1e-12))
    times, status = ensemble_region_entry(
        system.drift, system.diffusion_constant,
        np.ascontiguousarray(x0s, dtype=float), seeds, dt, n_steps,
        kinds_b, params_b, stochastic)
    failed = status == -1
    times = np.where(failed, INFINITY, times)
    return build_capsize_stats(times[~failed], horizon,
                               n_failed=int(failed.sum()),
                               meta={"seed": seed, "dt": dt})


def committor_mc(system: SystemSpec, x0, region_a: RegionSpec,
                 region_b: RegionSpec, n_samples: int, dt: float, seed: int,
                 max_time: float = 1000.0):
    """Monte Carlo first-hit estimate of the forward committor at a point.

    Returns (estimate, standard error, n_unresolved); unresolved samples
    (timeout or divergence) are excluded from the estimate.
    """
    if system.noise_amplitude <= 0:
        raise ConfigurationError("committor sampling needs noise (eps > 0)")
    _require_kernel_system(system)
    kinds_a, params_a = region_a.kernel_arrays(system.dim)
    kinds_b, params_b = region_b.kernel_arrays(system.dim)
    seeds = np.array([derive_seed(seed, 1 + i) for i in range(n_samples)],
                     dtype=np.uint64)
    outcome = first_hit_ab(system.drift, system.diffusion_constant,
                           np.asarray(x0, dtype=float), seeds, dt,
                           int(max_time / dt), kinds_a, params_a,
                           kinds_b, params_b)
    resolved = (outcome == 0) | (outcome == 1)
    n_res = int(resolved.sum())
    if n_res == 0:
        raise ConfigurationError("no sample resolved within max_time")
    q = float(np.mean(outcome[resolved] == 1))
    se = math.sqrt(max(q * (1 - q), 0.0) / n_res)
    return q, se, int(n_samples - n_res)
