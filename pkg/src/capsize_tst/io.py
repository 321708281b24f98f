"""Artifact serialization: CSV for paths/fields, JSON for summaries.

Floats are written with repr (shortest round-trip decimal), so identical
runs produce byte-identical numeric payloads.
"""
from __future__ import annotations

import json
import os

import numpy as np


def fmt(x):
    return repr(float(x))


def write_csv(filename, header, columns):
    columns = [np.asarray(c) for c in columns]
    with open(filename, "w") as f:
        f.write(",".join(header) + "\n")
        for row in zip(*columns):
            f.write(",".join(fmt(x) for x in row) + "\n")


def write_path_csv(filename, times, states, header=None):
    states = np.atleast_2d(states)
    if header is None:
        header = ["t"] + [f"x{i}" for i in range(states.shape[1])]
    write_csv(filename, header, [times] + [states[:, i]
                                           for i in range(states.shape[1])])


def write_field_csv(base, field):
    """Field CSV (theta,v,value in row-major node order) + JSON sidecar."""
    th, vv = field.grid.mesh()
    csv_file = base + ".csv"
    write_csv(csv_file, ["theta", "v", "value"],
              [th.ravel(), vv.ravel(), field.values.ravel()])
    sidecar = base + ".json"
    info = {
        "kind": field.kind,
        "theta_bounds": list(field.grid.theta_bounds),
        "v_bounds": list(field.grid.v_bounds),
        "shape": [field.grid.n_theta, field.grid.n_v],
    }
    for key in ("normalized", "integral", "estimator", "masked_nodes", "reset"):
        if key in field.meta:
            info[key] = field.meta[key]
    write_json(sidecar, info)
    return [csv_file, sidecar]


def write_json(filename, obj):
    with open(filename, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def capsize_stats_dict(stats):
    return {
        "horizon": stats.horizon,
        "s_curve": [[float(t), float(s)] for t, s in
                    zip(stats.s_times, stats.s_values)],
        "histogram": [[float(lo), float(hi), int(c)] for lo, hi, c in
                      zip(stats.hist_edges[:-1], stats.hist_edges[1:],
                          stats.hist_counts)],
        "p_capsize": stats.p_capsize,
        "stderr": stats.p_stderr,
        "rate_curve": [float(r) for r in stats.rate_curve],
        "n_samples": stats.n_samples,
        "n_capsized": stats.n_capsized,
        "n_failed": stats.n_failed,
    }


def transition_record_dict(record):
    out = {
        "n_transitions": record.n_transitions,
        "total_time": record.total_time,
        "rate": record.rate,
        "stderr": record.rate_stderr,
        "n_diverged": record.n_diverged,
        "n_stored_segments": len(record.segments),
    }
    if record.rate_upper95 is not None:
        out["rate_upper95"] = record.rate_upper95
    return out


def action_result_dict(result):
    return {
        "value": result.value,
        "duration": result.path.duration,
        "n_points": result.path.n_points,
        "converged": bool(result.converged),
        "gradient_norm": result.gradient_norm,
        "t_profile": {fmt(k): v for k, v in result.t_profile.items()},
    }


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
