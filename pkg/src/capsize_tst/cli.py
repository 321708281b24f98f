"""Experiment orchestration: strict JSON configs, seeded pipelines, manifests.

`capsize-tst run config.json [--workers N] [--out DIR]` executes one
pipeline and writes its artifacts plus manifest.json into the output
directory.  Identical config and seed produce byte-identical numeric
payloads.  Exit codes: 0 success, 1 config error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import __version__
from . import io as aio
from .core_model import (ConfigurationError, FilterSpec, RollModelParams,
                         SystemSpec, couple_filter, toy_roll_system,
                         velocity_forcing_coupling)
from .integrate import integrate_sde
from .ldt_minimizer import minimize_action
from .mc_rare import reactive_histogram, sample_transitions, survivability_mc
from .noise import derive_seed
from .saddle_flux import (InitialSampler, capsize_time_ensemble,
                          default_dividing_surface, find_saddle)
from .tpt import (Ellipse, Grid2D, HalfPlane, RegionSpec, reactive_density,
                  solve_committor_backward, solve_committor_forward,
                  solve_stationary_density, transition_rate_tpt)


class ConfigError(ValueError):
    pass


PIPELINES = ("simulate", "capsize-time", "committor", "mc-rate", "minact",
             "figure2")


@dataclass(frozen=True)
class ShapeConfig:
    kind: str
    center: Optional[List[float]] = None
    radii: Optional[List[float]] = None
    normal: Optional[List[float]] = None
    offset: Optional[float] = None

    def build(self):
        if self.kind == "ellipse":
            if self.center is None or self.radii is None:
                raise ConfigError("ellipse shape needs center and radii")
            return Ellipse(self.center, self.radii)
        if self.kind == "halfplane":
            if self.normal is None or self.offset is None:
                raise ConfigError("halfplane shape needs normal and offset")
            return HalfPlane(self.normal, self.offset)
        raise ConfigError(f"unknown shape kind {self.kind!r}")


@dataclass(frozen=True)
class RegionConfig:
    label: str
    shapes: List[ShapeConfig]

    def build(self):
        return RegionSpec(self.label, tuple(s.build() for s in self.shapes))


@dataclass(frozen=True)
class GridConfig:
    theta_bounds: List[float]
    v_bounds: List[float]
    n_theta: int = 200
    n_v: int = 200

    def build(self):
        return Grid2D(tuple(self.theta_bounds), tuple(self.v_bounds),
                      self.n_theta, self.n_v)


@dataclass(frozen=True)
class ModelConfig:
    omega0_sq: float = 1.0
    alpha: float = 1.0
    delta: float = 0.5
    epsilon: float = 0.0

    def build(self):
        return RollModelParams(self.omega0_sq, self.alpha, self.delta,
                               self.epsilon)


@dataclass(frozen=True)
class FilterConfig:
    a: List[List[float]]
    c: List[List[float]]
    epsilon: float
    coupling_gain: float = 1.0

    def build(self, ship_dim):
        coupling = velocity_forcing_coupling(ship_dim, channel=1,
                                             gain=self.coupling_gain)
        return FilterSpec(np.asarray(self.a), np.asarray(self.c),
                          self.epsilon, coupling)


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "point"
    state: Optional[List[float]] = None
    mean: Optional[List[float]] = None
    cov: Optional[List[List[float]]] = None
    lo: Optional[List[float]] = None
    hi: Optional[List[float]] = None

    def build(self):
        if self.kind == "point":
            if self.state is None:
                raise ConfigError("point sampler needs state")
            return InitialSampler.point(self.state)
        if self.kind == "gaussian":
            if self.mean is None or self.cov is None:
                raise ConfigError("gaussian sampler needs mean and cov")
            return InitialSampler.gaussian(self.mean, self.cov)
        if self.kind == "uniform":
            if self.lo is None or self.hi is None:
                raise ConfigError("uniform sampler needs lo and hi")
            return InitialSampler.uniform_box(self.lo, self.hi)
        raise ConfigError(f"unknown sampler kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str
    seed: int
    output_dir: str
    model: ModelConfig = ModelConfig()
    filter: Optional[FilterConfig] = None
    grid: Optional[GridConfig] = None
    region_a: Optional[RegionConfig] = None
    region_b: Optional[RegionConfig] = None
    dt: float = 1e-3
    horizon: float = 50.0
    n_samples: int = 1000
    n_points: int = 200
    total_time: float = 1e4
    epsilons: Optional[List[float]] = None
    x0: List[float] = field(default_factory=lambda: [0.0, 0.0])
    x_end: List[float] = field(default_factory=lambda: [1.5, 0.0])
    initial: InitialConfig = InitialConfig(kind="point", state=[0.0, 0.0])
    save_segments: bool = False

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")

    def to_dict(self):
        return _to_jsonable(dataclasses.asdict(self))


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _from_dict(cls, data, where):
    """Strict dataclass construction: unknown keys are rejected by name."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key {sorted(unknown)[0]!r}")
    kwargs = {}
    nested = {"model": ModelConfig, "filter": FilterConfig, "grid": GridConfig,
              "region_a": RegionConfig, "region_b": RegionConfig,
              "initial": InitialConfig}
    for name, value in data.items():
        if value is None:
            kwargs[name] = None
        elif name in nested:
            kwargs[name] = _from_dict(nested[name], value, f"{where}.{name}")
        elif name == "shapes":
            if not isinstance(value, list):
                raise ConfigError(f"{where}.shapes: expected a list")
            kwargs[name] = [_from_dict(ShapeConfig, s, f"{where}.shapes[{i}]")
                            for i, s in enumerate(value)]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}")


def parse_config(data) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, data, "config")
    required = {
        "simulate": ("dt", "horizon", "x0"),
        "capsize-time": ("dt", "horizon", "n_samples", "initial"),
        "committor": ("grid", "region_a", "region_b"),
        "mc-rate": ("region_a", "region_b", "total_time", "dt"),
        "minact": ("x0", "x_end", "n_points"),
        "figure2": ("grid", "region_a", "region_b", "dt", "total_time",
                    "n_points"),
    }[cfg.pipeline]
    for name in required:
        if getattr(cfg, name) is None:
            raise ConfigError(f"pipeline {cfg.pipeline!r} requires {name!r}")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}")
    return parse_config(data)


def _build_system(cfg) -> SystemSpec:
    params = cfg.model.build()
    ship = toy_roll_system(params)
    if cfg.filter is not None:
        if params.epsilon != 0.0:
            raise ConfigError("with a filter, model.epsilon must be 0")
        return couple_filter(ship, cfg.filter.build(ship.dim))
    return ship


def _region_center_state(region_cfg):
    for s in region_cfg.shapes:
        if s.kind == "ellipse":
            return list(s.center)
    raise ConfigError("region A needs an ellipse shape for its center")


# ---------------------------------------------------------------------------
# pipelines: each returns a list of artifact dicts {name, files}

def _pipe_simulate(cfg, out):
    system = _build_system(cfg)
    path = integrate_sde(system, np.asarray(cfg.x0, dtype=float), 0.0,
                         cfg.horizon, cfg.dt, cfg.seed)
    f = f"{out}/path.csv"
    aio.write_path_csv(f, path.times, path.states)
    return [{"name": "path", "files": [f]}]


def _pipe_capsize_time(cfg, out):
    system = _build_system(cfg)
    params = cfg.model.build()
    saddle = find_saddle(system, (params.saddle_angle, 0.0))
    surface = default_dividing_surface(saddle)
    stats = capsize_time_ensemble(system, cfg.initial.build(), surface,
                                  cfg.horizon, cfg.dt, cfg.n_samples, cfg.seed)
    f = f"{out}/capsize_stats.json"
    aio.write_json(f, aio.capsize_stats_dict(stats))
    return [{"name": "capsize_stats", "files": [f]}]


def _pipe_committor(cfg, out):
    system = _build_system(cfg)
    grid = cfg.grid.build()
    q = solve_committor_forward(system, grid, cfg.region_a.build(),
                                cfg.region_b.build())
    files = aio.write_field_csv(f"{out}/q_plus", q)
    return [{"name": "committor_forward", "files": files}]


def _pipe_mc_rate(cfg, out):
    system = _build_system(cfg)
    record = sample_transitions(system, cfg.region_a.build(),
                                cfg.region_b.build(), cfg.total_time, cfg.dt,
                                cfg.seed)
    f = f"{out}/transitions.json"
    aio.write_json(f, aio.transition_record_dict(record))
    artifacts = [{"name": "transition_record", "files": [f]}]
    if cfg.save_segments:
        seg_files = []
        for i, seg in enumerate(record.segments):
            sf = f"{out}/segment_{i:05d}.csv"
            aio.write_path_csv(sf, seg.times, seg.states)
            seg_files.append(sf)
        artifacts.append({"name": "segments", "files": seg_files})
    return artifacts


def _pipe_minact(cfg, out):
    system = _build_system(cfg)
    result = minimize_action(system, cfg.x0, cfg.x_end, n_points=cfg.n_points)
    pf = f"{out}/instanton.csv"
    aio.write_path_csv(pf, result.path.times, result.path.states,
                       header=["t", "theta", "v"])
    jf = f"{out}/action.json"
    aio.write_json(jf, aio.action_result_dict(result))
    return [{"name": "minimizer_path", "files": [pf]},
            {"name": "action_summary", "files": [jf]}]


def _pipe_figure2(cfg, out):
    """Everything the roll-plane risk picture needs, as data files:
    stationary density, both committors, reactive density, Monte Carlo
    reactive histogram and the action minimizer."""
    system = _build_system(cfg)
    grid = cfg.grid.build()
    region_a = cfg.region_a.build()
    region_b = cfg.region_b.build()
    a_center = _region_center_state(cfg.region_a)

    rho = solve_stationary_density(system, grid, reset_region=region_b,
                                   reset_state=a_center)
    q_plus = solve_committor_forward(system, grid, region_a, region_b)
    q_minus = solve_committor_backward(system, grid, region_a, region_b, rho)
    rho_r = reactive_density(rho, q_plus, q_minus, normalize=True)
    rate = transition_rate_tpt(system, grid, rho, q_plus)

    record = sample_transitions(system, region_a, region_b, cfg.total_time,
                                cfg.dt, derive_seed(cfg.seed, 1))
    hist = reactive_histogram(record, grid)

    result = minimize_action(system, a_center, cfg.x_end,
                             n_points=cfg.n_points)

    artifacts = []
    for name, fieldv in (("stationary_density", rho),
                         ("committor_forward", q_plus),
                         ("committor_backward", q_minus),
                         ("reactive_density", rho_r),
                         ("mc_reactive_histogram", hist)):
        files = aio.write_field_csv(f"{out}/{name}", fieldv)
        artifacts.append({"name": name, "files": files})
    pf = f"{out}/instanton.csv"
    aio.write_path_csv(pf, result.path.times, result.path.states,
                       header=["t", "theta", "v"])
    artifacts.append({"name": "minimizer_path", "files": [pf]})
    jf = f"{out}/action.json"
    summary = aio.action_result_dict(result)
    summary["rate_tpt"] = rate.rate
    summary["rate_tpt_quadrature"] = rate.rate_quadrature
    summary["rate_mc"] = record.rate
    summary["rate_mc_stderr"] = record.rate_stderr
    aio.write_json(jf, summary)
    artifacts.append({"name": "action_summary", "files": [jf]})
    return artifacts


_PIPELINE_FNS = {
    "simulate": _pipe_simulate,
    "capsize-time": _pipe_capsize_time,
    "committor": _pipe_committor,
    "mc-rate": _pipe_mc_rate,
    "minact": _pipe_minact,
    "figure2": _pipe_figure2,
}


def run_experiment(cfg: ExperimentConfig, workers: int = 1,
                   out_dir: Optional[str] = None) -> dict:
    """Execute the configured pipeline; write artifacts and manifest.json.

    Internal execution is sequential; `workers` caps concurrency and is
    recorded in the manifest but cannot change any numeric output.
    """
    out = aio.ensure_dir(out_dir or cfg.output_dir)
    t0 = time.monotonic()
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "seed": cfg.seed,
        "workers": workers,
    }
    try:
        artifacts = _PIPELINE_FNS[cfg.pipeline](cfg, out)
        manifest["artifacts"] = artifacts
        manifest["status"] = "ok"
    except Exception as exc:
        manifest["artifacts"] = []
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["wall_time_s"] = time.monotonic() - t0
        aio.write_json(f"{out}/manifest.json", manifest)
        raise
    manifest["wall_time_s"] = time.monotonic() - t0
    aio.write_json(f"{out}/manifest.json", manifest)
    return manifest


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="capsize-tst",
        description="capsize risk pipelines for stochastic roll models")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("config", help="path to the experiment JSON")
    run_p.add_argument("--workers", type=int, default=1,
                       help="concurrency cap (results are unaffected)")
    run_p.add_argument("--out", default=None,
                       help="override the configured output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, ConfigurationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run_experiment(cfg, workers=max(1, args.workers),
                                  out_dir=args.out)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return 2
    n_files = sum(len(a["files"]) for a in manifest["artifacts"])
    print(f"{cfg.pipeline}: {len(manifest['artifacts'])} artifacts, "
          f"{n_files} files in {cfg.output_dir if args.out is None else args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
