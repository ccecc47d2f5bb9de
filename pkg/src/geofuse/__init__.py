"""Georeferenced-map aided visual-inertial localization toolkit.

Simulates a downward-looking aerial platform with drifting odometry,
registers its locally reconstructed feature points against a flat
georeferenced feature map by descriptor matching and translation voting,
and fuses the resulting absolute fixes with the odometry in a robust pose
graph. Ships a scenario harness, metrics, figure rendering, and a CLI.
"""

from .frames import (
    CameraIntrinsics,
    Extrinsics,
    MapGeometry,
    Pose,
    Quat,
    back_project,
    body_position_from_camera,
    camera_pose_from_body,
    geodetic_to_map_pixel,
    map_pixel_to_geodetic,
    nadir_extrinsics,
    project,
    rotate_world_to_geo,
    warp_image_point,
)
from .harness import (
    METHODS,
    CameraConfig,
    ComparisonResult,
    GraphConfig,
    KeyframeRecord,
    RunReport,
    ScenarioConfig,
    ThresholdConfig,
    TrajectoryConfig,
    WorldConfig,
    build_map_for_config,
    compare_methods,
    dump_scenario,
    export_comparison,
    export_report,
    load_report,
    load_report_csv,
    preset,
    preset_names,
    run_scenario,
)
from .mapdb import (
    MapDbFormatError,
    MapFeatureDB,
    MatchSet,
    build_map_db,
    load_db,
    match_descriptors,
    save_db,
)
from .metrics import AlignmentResult, match_rate, rmse, umeyama_align
from .posegraph import (
    AbsoluteEdge,
    GraphNode,
    GraphOptions,
    OptimizeError,
    OptimizeReport,
    PoseGraph,
    RelativeEdge,
    build_graph_from_run,
    load_graph,
    optimize,
    relative_edge_from_vio,
    save_graph,
)
from .registration import (
    PnpResult,
    QueryPointSet,
    RegistrationFailure,
    RegistrationParams,
    RegistrationResult,
    VoteResult,
    baseline_image_register,
    build_query_set,
    heading_align,
    is_true_match,
    pnp_solve,
    register_keyframe,
    translation_vote,
)
from .simulation import (
    NoiseConfig,
    TrajectorySpec,
    TrueTrajectory,
    VioOutput,
    WorldModel,
    generate_trajectory,
    generate_world,
    reconstruct_point,
    simulate_vio,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # frames
    "Quat",
    "Pose",
    "CameraIntrinsics",
    "Extrinsics",
    "MapGeometry",
    "nadir_extrinsics",
    "project",
    "back_project",
    "warp_image_point",
    "map_pixel_to_geodetic",
    "geodetic_to_map_pixel",
    "rotate_world_to_geo",
    "body_position_from_camera",
    "camera_pose_from_body",
    # simulation
    "WorldModel",
    "TrajectorySpec",
    "TrueTrajectory",
    "NoiseConfig",
    "VioOutput",
    "generate_world",
    "generate_trajectory",
    "simulate_vio",
    "reconstruct_point",
    # map database
    "MapFeatureDB",
    "MatchSet",
    "MapDbFormatError",
    "build_map_db",
    "match_descriptors",
    "save_db",
    "load_db",
    # registration
    "RegistrationParams",
    "QueryPointSet",
    "VoteResult",
    "PnpResult",
    "RegistrationResult",
    "RegistrationFailure",
    "build_query_set",
    "heading_align",
    "translation_vote",
    "pnp_solve",
    "register_keyframe",
    "baseline_image_register",
    "is_true_match",
    # pose graph
    "GraphNode",
    "RelativeEdge",
    "AbsoluteEdge",
    "PoseGraph",
    "GraphOptions",
    "OptimizeReport",
    "OptimizeError",
    "optimize",
    "relative_edge_from_vio",
    "build_graph_from_run",
    "save_graph",
    "load_graph",
    # metrics
    "AlignmentResult",
    "umeyama_align",
    "rmse",
    "match_rate",
    # harness
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
