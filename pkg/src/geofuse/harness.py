"""Scenario harness: configuration, end-to-end runs, comparisons, reports.

A scenario is fully described by a ScenarioConfig plus a seed; running it
twice produces byte-identical exported reports. Per-stage wall-clock
timings are collected for inspection but left out of canonical exports so
the determinism contract holds.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .frames import CameraIntrinsics, Extrinsics, MapGeometry, nadir_extrinsics
from .mapdb import MapFeatureDB, build_map_db
from .metrics import match_rate, rmse, umeyama_align
from .posegraph import GraphOptions, build_graph_from_run, optimize
from .registration import (
    RegistrationParams,
    RegistrationResult,
    baseline_image_register,
    build_query_set,
    is_true_match,
    register_keyframe,
)
from .simulation import (
    NoiseConfig,
    TrajectorySpec,
    generate_trajectory,
    generate_world,
    simulate_vio,
)

__all__ = [
    "METHODS",
    "WorldConfig",
    "CameraConfig",
    "TrajectoryConfig",
    "ThresholdConfig",
    "GraphConfig",
    "ScenarioConfig",
    "KeyframeRecord",
    "RunReport",
    "ComparisonResult",
    "preset",
    "preset_names",
    "run_scenario",
    "build_map_for_config",
    "compare_methods",
    "export_report",
    "load_report",
    "load_report_csv",
    "export_comparison",
    "dump_scenario",
]

METHODS = ("proposed", "baseline-m1", "vio-only")

_CSV_COLUMNS = (
    "index",
    "time",
    "truth_e",
    "truth_n",
    "truth_u",
    "truth_heading",
    "vio_w_x",
    "vio_w_y",
    "vio_w_z",
    "vio_aligned_e",
    "vio_aligned_n",
    "vio_aligned_u",
    "attempted",
    "success",
    "stage",
    "translation_e",
    "translation_n",
    "inlier_count",
    "registered_e",
    "registered_n",
    "registered_u",
    "reproj_rmse",
    "true_match",
    "fused_e",
    "fused_n",
    "fused_u",
)


@dataclass(frozen=True)
class WorldConfig:
    landmark_count: int = 2500
    map_width_px: int = 1700
    map_height_px: int = 1333
    resolution: float = 0.3
    descriptor_dim: int = 64
    landmarks_on_grid: bool = False  # snap landmarks to the stride grid (lossless DB quantization)

    def geometry(self) -> MapGeometry:
        return MapGeometry(self.resolution, self.map_width_px, self.map_height_px)


@dataclass(frozen=True)
class CameraConfig:
    width: int = 640
    height: int = 480
    fov_x_deg: float = 41.0
    fov_y_deg: float = 32.0
    lever_arm: tuple = (0.0, 0.0, 0.0)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(
            self.width, self.height, math.radians(self.fov_x_deg), math.radians(self.fov_y_deg)
        )

    def extrinsics(self) -> Extrinsics:
        return nadir_extrinsics(self.lever_arm)


@dataclass(frozen=True)
class TrajectoryConfig:
    waypoints: tuple = ((80.0, -80.0), (430.0, -80.0), (430.0, -320.0), (80.0, -320.0), (80.0, -80.0))
    speed: float = 6.0
    altitude: float = 110.0
    keyframe_interval: float = 1.0
    roll_pitch_amplitude_deg: float = 5.63

    def to_spec(self) -> TrajectorySpec:
        return TrajectorySpec(
            waypoints=tuple(map(tuple, self.waypoints)),
            speed=self.speed,
            altitude=self.altitude,
            keyframe_interval=self.keyframe_interval,
            roll_pitch_amplitude=math.radians(self.roll_pitch_amplitude_deg),
        )


@dataclass(frozen=True)
class ThresholdConfig:
    """Registration thresholds; defaults follow the reference pipeline."""

    stride_px: int = 10
    reproj_threshold: float = 8.0
    min_points: int = 20
    inlier_radius: float = 9.0
    min_inliers: int = 15
    ratio: float = 1.0

    def __post_init__(self):
        for name in ("stride_px", "reproj_threshold", "min_points", "inlier_radius", "min_inliers", "ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def params(self) -> RegistrationParams:
        return RegistrationParams(
            reproj_threshold=self.reproj_threshold,
            min_points=self.min_points,
            inlier_radius=self.inlier_radius,
            min_inliers=self.min_inliers,
            ratio=self.ratio,
        )


@dataclass(frozen=True)
class GraphConfig:
    huber_delta: float = 1.0
    max_iterations: int = 50
    tolerance: float = 1e-10
    info_scale: float = 1.0  # global multiplier on every edge information matrix

    def __post_init__(self):
        for name in ("huber_delta", "max_iterations", "tolerance", "info_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def options(self) -> GraphOptions:
        return GraphOptions(
            huber_delta=self.huber_delta,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    method: str = "proposed"
    world: WorldConfig = field(default_factory=WorldConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trajectory"]["waypoints"] = [list(w) for w in self.trajectory.waypoints]
        d["camera"]["lever_arm"] = list(self.camera.lever_arm)
        return d

    @staticmethod
    def from_dict(data: dict) -> "ScenarioConfig":
        """Build a config from a (possibly partial) nested dict.

        A "preset" key selects a named starting point; remaining keys
        override it. Unknown keys raise ValueError.
        """
        data = dict(data)
        base = preset(data.pop("preset")) if "preset" in data else ScenarioConfig()
        merged = _merge_dicts(base.to_dict(), data)
        return _scenario_from_full_dict(merged)


def _merge_dicts(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_dicts(out[k], v)
        else:
            out[k] = v
    return out


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {section} config keys: {sorted(unknown)}")
    return cls(**data)


def _scenario_from_full_dict(d: dict) -> ScenarioConfig:
    known = {"seed", "method", "world", "camera", "trajectory", "noise", "thresholds", "graph"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    traj = dict(d.get("trajectory", {}))
    if "waypoints" in traj:
        traj["waypoints"] = tuple(tuple(float(x) for x in w) for w in traj["waypoints"])
    cam = dict(d.get("camera", {}))
    if "lever_arm" in cam:
        cam["lever_arm"] = tuple(float(x) for x in cam["lever_arm"])
    return ScenarioConfig(
        seed=int(d.get("seed", 0)),
        method=str(d.get("method", "proposed")),
        world=_build_section(WorldConfig, dict(d.get("world", {})), "world"),
        camera=_build_section(CameraConfig, cam, "camera"),
        trajectory=_build_section(TrajectoryConfig, traj, "trajectory"),
        noise=_build_section(NoiseConfig, dict(d.get("noise", {})), "noise"),
        thresholds=_build_section(ThresholdConfig, dict(d.get("thresholds", {})), "thresholds"),
        graph=_build_section(GraphConfig, dict(d.get("graph", {})), "graph"),
    )


def preset_names() -> tuple:
    return ("rural-like", "zone-like", "zero-noise")


def preset(name: str) -> ScenarioConfig:
    """Named scenario presets.

    rural-like: 110 m altitude, 5.63 deg tilt amplitude, narrow camera,
        0.51 x 0.4 km map, nominal noise.
    zone-like: 285 m altitude, 7.80 deg tilt amplitude, wide camera,
        0.75 x 0.75 km map, nominal noise.
    zero-noise: rural-like geometry with every noise source disabled and
        landmarks snapped to the database grid (exact end-to-end recovery).
    """
    if name == "rural-like":
        return ScenarioConfig(
            noise=NoiseConfig(distractor_count=5000),
        )
    if name == "zone-like":
        return ScenarioConfig(
            world=WorldConfig(landmark_count=700, map_width_px=2500, map_height_px=2500),
            camera=CameraConfig(width=640, height=512, fov_x_deg=67.0, fov_y_deg=56.0),
            trajectory=TrajectoryConfig(
                waypoints=((200.0, -200.0), (550.0, -200.0), (550.0, -550.0), (200.0, -550.0), (200.0, -200.0)),
                speed=8.0,
                altitude=285.0,
                roll_pitch_amplitude_deg=7.80,
            ),
            noise=NoiseConfig(distractor_count=2000),
        )
    if name == "zero-noise":
        return ScenarioConfig(
            world=WorldConfig(landmark_count=5000, landmarks_on_grid=True),
            trajectory=TrajectoryConfig(
                waypoints=((100.0, -100.0), (400.0, -100.0), (400.0, -300.0), (100.0, -300.0)),
                speed=8.0,
                roll_pitch_amplitude_deg=0.0,
            ),
            noise=NoiseConfig.zero(),
        )
    raise ValueError(f"unknown preset {name!r}; choose from {preset_names()}")


@dataclass
class KeyframeRecord:
    index: int
    time: float
    truth: list
    truth_heading: float
    vio_w: list
    vio_aligned: list | None
    attempted: bool
    success: bool
    stage: str | None
    translation: list | None
    inlier_count: int
    registered: list | None
    reproj_rmse: float | None
    true_match: bool
    fused: list | None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    """Everything one scenario run produced, ready for export."""

    schema_version: int
    method: str
    seed: int
    config: dict
    total_keyframes: int
    attempted_count: int
    success_count: int
    true_match_count: int
    match_rate: float | None
    match_rate_all: float | None
    vio_rmse: float | None
    registration_rmse: float | None
    fused_rmse: float | None
    first_success_index: int | None
    graph_report: dict | None
    alignment: dict | None
    records: list
    timings: dict

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {
            "schema_version": self.schema_version,
            "method": self.method,
            "seed": self.seed,
            "config": self.config,
            "total_keyframes": self.total_keyframes,
            "attempted_count": self.attempted_count,
            "success_count": self.success_count,
            "true_match_count": self.true_match_count,
            "match_rate": self.match_rate,
            "match_rate_all": self.match_rate_all,
            "vio_rmse": self.vio_rmse,
            "registration_rmse": self.registration_rmse,
            "fused_rmse": self.fused_rmse,
            "first_success_index": self.first_success_index,
            "graph_report": self.graph_report,
            "alignment": self.alignment,
            "records": [r.to_dict() for r in self.records],
        }
        if include_timings:
            d["timings"] = self.timings
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunReport":
        records = [KeyframeRecord(**r) for r in d["records"]]
        return RunReport(
            schema_version=d["schema_version"],
            method=d["method"],
            seed=d["seed"],
            config=d["config"],
            total_keyframes=d["total_keyframes"],
            attempted_count=d["attempted_count"],
            success_count=d["success_count"],
            true_match_count=d["true_match_count"],
            match_rate=d["match_rate"],
            match_rate_all=d["match_rate_all"],
            vio_rmse=d["vio_rmse"],
            registration_rmse=d["registration_rmse"],
            fused_rmse=d["fused_rmse"],
            first_success_index=d["first_success_index"],
            graph_report=d["graph_report"],
            alignment=d["alignment"],
            records=records,
            timings=d.get("timings", {}),
        )


def _spawn_streams(seed: int):
    """Independent deterministic child seeds: world, trajectory, vio, map_db."""
    return np.random.SeedSequence(seed).spawn(4)


def build_map_for_config(cfg: ScenarioConfig, seed: int | None = None) -> MapFeatureDB:
    """Build the exact map database run_scenario would use for (cfg, seed)."""
    seed = cfg.seed if seed is None else seed
    ss_world, _, _, ss_map = _spawn_streams(seed)
    world = _make_world(cfg, ss_world)
    return build_map_db(world, cfg.thresholds.stride_px, cfg.noise, np.random.default_rng(ss_map))


def _make_world(cfg: ScenarioConfig, ss):
    grid = cfg.thresholds.stride_px if cfg.world.landmarks_on_grid else None
    return generate_world(
        ss,
        cfg.world.landmark_count,
        cfg.world.geometry(),
        cfg.world.descriptor_dim,
        grid_stride_px=grid,
    )


def run_scenario(cfg: ScenarioConfig, seed: int | None = None) -> RunReport:
    """Simulate, register, fuse, and score one scenario.

    `seed` overrides cfg.seed when given. Identical (cfg, seed) pairs give
    identical reports (timings aside). The match rate uses attempted
    (non-skipped) keyframes as its denominator and is None (undefined, not
    zero) when nothing was attempted; match_rate_all uses all keyframes.
    """
    seed = cfg.seed if seed is None else int(seed)
    timings: dict[str, float] = {}
    t_start = time.perf_counter()

    ss_world, ss_traj, ss_vio, ss_map = _spawn_streams(seed)
    intr = cfg.camera.intrinsics()
    ext = cfg.camera.extrinsics()
    geom = cfg.world.geometry()

    t0 = time.perf_counter()
    world = _make_world(cfg, ss_world)
    timings["world"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    truth = generate_trajectory(ss_traj, cfg.trajectory.to_spec())
    timings["trajectory"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    vio = simulate_vio(truth, world, intr, ext, cfg.noise, ss_vio)
    timings["vio"] = time.perf_counter() - t0

    db = None
    if cfg.method != "vio-only":
        t0 = time.perf_counter()
        db = build_map_db(world, cfg.thresholds.stride_px, cfg.noise, np.random.default_rng(ss_map))
        timings["map_db"] = time.perf_counter() - t0

    params = cfg.thresholds.params()
    truth_pos = truth.positions
    first_heading = vio[0].compass_heading

    outcomes: dict[int, Any] = {}
    successes: dict[int, RegistrationResult] = {}
    t0 = time.perf_counter()
    if cfg.method != "vio-only":
        gate = cfg.thresholds.reproj_threshold if cfg.method == "proposed" else math.inf
        for v in vio:
            q = build_query_set(v, gate, cfg.thresholds.min_points, intr, ext)
            if q is None:
                continue
            if cfg.method == "proposed":
                out = register_keyframe(q, db, params, first_heading, intr, ext)
            else:
                out = baseline_image_register(q, db, params, intr, geom, ext)
            outcomes[v.index] = out
            if isinstance(out, RegistrationResult):
                successes[v.index] = out
    timings["registration"] = time.perf_counter() - t0

    fused_positions: dict[int, np.ndarray] = {}
    graph_report = None
    first_success = min(successes) if successes else None
    t0 = time.perf_counter()
    if cfg.method != "vio-only" and successes:
        graph = build_graph_from_run(
            vio,
            successes,
            ext,
            cfg.noise.drift_rate,
            cfg.noise.yaw_drift_rate,
            cfg.thresholds.stride_px * geom.resolution,
            cfg.graph.options(),
            info_scale=cfg.graph.info_scale,
        )
        rep = optimize(graph, cfg.graph.options())
        graph_report = {
            "iterations": rep.iterations,
            "initial_cost": rep.initial_cost,
            "final_cost": rep.final_cost,
            "converged": rep.converged,
        }
        fused_positions = {n.index: n.pose.position for n in graph.nodes}
    timings["graph"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    vio_pos = np.array([v.pose.position for v in vio])
    alignment = None
    aligned_vio = None
    vio_rmse_val = None
    try:
        align = umeyama_align(vio_pos, truth_pos)
        aligned_vio = align.apply(vio_pos)
        vio_rmse_val = align.rmse
        alignment = {
            "scale": align.scale,
            "rotation": align.rotation.tolist(),
            "translation": align.translation.tolist(),
        }
    except ValueError:
        pass  # degenerate geometry: leave the aligned view undefined

    records = []
    reg_errors = []
    fused_errors = []
    true_match_count = 0
    for v in vio:
        k = v.index
        out = outcomes.get(k)
        res = successes.get(k)
        truth_k = truth_pos[k]
        tm = False
        if res is not None:
            tm = is_true_match(res, truth_k)
            if tm:
                true_match_count += 1
                reg_errors.append(res.body_position - truth_k)
        fused = None
        if first_success is not None and k >= first_success and k in fused_positions:
            fused = fused_positions[k]
            fused_errors.append(fused - truth_k)
        records.append(
            KeyframeRecord(
                index=k,
                time=v.time,
                truth=[float(x) for x in truth_k],
                truth_heading=float(truth.headings[k]),
                vio_w=[float(x) for x in v.pose.position],
                vio_aligned=None if aligned_vio is None else [float(x) for x in aligned_vio[k]],
                attempted=out is not None,
                success=res is not None,
                stage=None if out is None or res is not None else out.stage,
                translation=None if res is None else [float(res.translation[0]), float(res.translation[1])],
                inlier_count=0 if res is None else int(res.inlier_count),
                registered=None if res is None else [float(x) for x in res.body_position],
                reproj_rmse=None if res is None or res.reproj_rmse is None else float(res.reproj_rmse),
                true_match=bool(tm),
                fused=None if fused is None else [float(x) for x in fused],
            )
        )

    attempted = len(outcomes)
    report = RunReport(
        schema_version=1,
        method=cfg.method,
        seed=seed,
        config={**cfg.to_dict(), "seed": seed},
        total_keyframes=len(vio),
        attempted_count=attempted,
        success_count=len(successes),
        true_match_count=true_match_count,
        match_rate=match_rate(true_match_count, attempted) if attempted else None,
        match_rate_all=match_rate(true_match_count, len(vio)) if len(vio) else None,
        vio_rmse=vio_rmse_val,
        registration_rmse=rmse(np.array(reg_errors)) if reg_errors else None,
        fused_rmse=rmse(np.array(fused_errors)) if fused_errors else None,
        first_success_index=first_success,
        graph_report=graph_report,
        alignment=alignment,
        records=records,
        timings=timings,
    )
    timings["metrics"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    return report


def _fmt_csv(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_report(report: RunReport, path, fmt: str = "json", include_timings: bool = False) -> None:
    """Write a run report to disk.

    JSON holds the full nested report; CSV holds one row per keyframe in
    the documented column order (floats via repr, so they reload
    bit-equal; booleans as 1/0; absent values empty). Timings are omitted
    unless include_timings is set, keeping exports byte-deterministic.
    """
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(include_timings), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if fmt == "csv":
        lines = [",".join(_CSV_COLUMNS)]
        for r in report.records:
            row = {
                "index": r.index,
                "time": r.time,
                "truth_e": r.truth[0],
                "truth_n": r.truth[1],
                "truth_u": r.truth[2],
                "truth_heading": r.truth_heading,
                "vio_w_x": r.vio_w[0],
                "vio_w_y": r.vio_w[1],
                "vio_w_z": r.vio_w[2],
                "vio_aligned_e": None if r.vio_aligned is None else r.vio_aligned[0],
                "vio_aligned_n": None if r.vio_aligned is None else r.vio_aligned[1],
                "vio_aligned_u": None if r.vio_aligned is None else r.vio_aligned[2],
                "attempted": r.attempted,
                "success": r.success,
                "stage": r.stage,
                "translation_e": None if r.translation is None else r.translation[0],
                "translation_n": None if r.translation is None else r.translation[1],
                "inlier_count": r.inlier_count,
                "registered_e": None if r.registered is None else r.registered[0],
                "registered_n": None if r.registered is None else r.registered[1],
                "registered_u": None if r.registered is None else r.registered[2],
                "reproj_rmse": r.reproj_rmse,
                "true_match": r.true_match,
                "fused_e": None if r.fused is None else r.fused[0],
                "fused_n": None if r.fused is None else r.fused[1],
                "fused_u": None if r.fused is None else r.fused[2],
            }
            lines.append(",".join(_fmt_csv(row[c]) for c in _CSV_COLUMNS))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return
    raise ValueError(f"unknown format {fmt!r}, expected 'json' or 'csv'")


def load_report(path) -> RunReport:
    """Reload a JSON report exported by export_report."""
    with open(path) as fh:
        return RunReport.from_dict(json.load(fh))


def load_report_csv(path) -> list[dict]:
    """Reload a CSV report: typed values, None for empty fields."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if tuple(header) != _CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    int_cols = {"index", "inlier_count"}
    bool_cols = {"attempted", "success", "true_match"}
    str_cols = {"stage"}
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row: dict[str, Any] = {}
        for name, raw in zip(header, parts):
            if raw == "":
                row[name] = None
            elif name in int_cols:
                row[name] = int(raw)
            elif name in bool_cols:
                row[name] = raw == "1"
            elif name in str_cols:
                row[name] = raw
            else:
                row[name] = float(raw)
        rows.append(row)
    return rows


@dataclass
class ComparisonResult:
    """Aggregate statistics per method over a common seed list."""

    config: dict
    seeds: list
    rows: list  # per-method dicts of mean/std metrics

    def to_dict(self) -> dict:
        return {"config": self.config, "seeds": self.seeds, "rows": self.rows}


def _mean_std(values: list) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.std())


def compare_methods(cfg: ScenarioConfig, methods, seeds) -> ComparisonResult:
    """Run every (method, seed) pair and tabulate mean/std of the metrics."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("no seeds given")
    rows = []
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        mcfg = ScenarioConfig.from_dict(_merge_dicts(cfg.to_dict(), {"method": method}))
        reports = [run_scenario(mcfg, seed=s) for s in seeds]
        mr_mean, mr_std = _mean_std([r.match_rate for r in reports])
        reg_mean, reg_std = _mean_std([r.registration_rmse for r in reports])
        fus_mean, fus_std = _mean_std([r.fused_rmse for r in reports])
        vio_mean, vio_std = _mean_std([r.vio_rmse for r in reports])
        rows.append(
            {
                "method": method,
                "runs": len(reports),
                "match_rate_mean": mr_mean,
                "match_rate_std": mr_std,
                "registration_rmse_mean": reg_mean,
                "registration_rmse_std": reg_std,
                "fused_rmse_mean": fus_mean,
                "fused_rmse_std": fus_std,
                "vio_rmse_mean": vio_mean,
                "vio_rmse_std": vio_std,
            }
        )
    return ComparisonResult(cfg.to_dict(), seeds, rows)


_COMPARISON_COLUMNS = (
    "method",
    "runs",
    "match_rate_mean",
    "match_rate_std",
    "registration_rmse_mean",
    "registration_rmse_std",
    "fused_rmse_mean",
    "fused_rmse_std",
    "vio_rmse_mean",
    "vio_rmse_std",
)


def export_comparison(result: ComparisonResult, stem) -> list[str]:
    """Write <stem>.json and <stem>.csv; returns the written paths."""
    stem = str(stem)
    paths = [stem + ".json", stem + ".csv"]
    with open(paths[0], "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = [",".join(_COMPARISON_COLUMNS)]
    for row in result.rows:
        lines.append(",".join(_fmt_csv(row[c]) for c in _COMPARISON_COLUMNS))
    with open(paths[1], "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return paths


def _finite_or_none(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def dump_scenario(cfg: ScenarioConfig, seed: int | None = None) -> dict:
    """Debug dump: the generated world and raw front-end outputs.

    Per-feature descriptors are omitted from the keyframe section (they are
    recoverable from landmark ids and the world table); non-finite
    reprojection errors serialize as null.
    """
    seed = cfg.seed if seed is None else int(seed)
    ss_world, ss_traj, ss_vio, _ = _spawn_streams(seed)
    intr = cfg.camera.intrinsics()
    ext = cfg.camera.extrinsics()
    world = _make_world(cfg, ss_world)
    truth = generate_trajectory(ss_traj, cfg.trajectory.to_spec())
    vio = simulate_vio(truth, world, intr, ext, cfg.noise, ss_vio)
    return {
        "config": {**cfg.to_dict(), "seed": seed},
        "world": {
            "landmark_count": world.landmark_count,
            "descriptor_dim": world.descriptor_dim,
            "positions": world.positions.tolist(),
            "descriptors": world.descriptors.tolist(),
        },
        "trajectory": {
            "positions": truth.positions.tolist(),
            "headings": truth.headings.tolist(),
            "times": truth.times.tolist(),
            "distances": truth.distances.tolist(),
        },
        "keyframes": [
            {
                "index": v.index,
                "time": v.time,
                "position_w": v.pose.position.tolist(),
                "quaternion_w": v.pose.orientation.as_array().tolist(),
                "altitude": v.altitude,
                "compass_heading": v.compass_heading,
                "landmark_ids": v.ids.tolist(),
                "pixels": v.pixels.tolist(),
                "inv_depths": v.inv_depths.tolist(),
                "reproj_errors": [_finite_or_none(e) for e in v.reproj_errors],
            }
            for v in vio
        ],
    }
