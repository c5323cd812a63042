"""Plan-graph + semantic-grid conditioned CVAE trajectory generation."""
from .dataset import Dataset, Sample, generate_synthetic, import_published
from .estimator import TrajectoryGenerator
from .geo import GeoPoint, LocalPoint, Pose2D, interpolate_trajectory, to_ego_frame, wgs84_to_local
from .metrics import MetricsReport, ade, dac, evaluate, fde, mde
from .model import ModelConfig, TrainConfig, PlanSceneCVAE
from .osm import RoadGraph, build_road_graph, load_osm_graph, parse_osm
from .planner import PlanGraph, Route, Variant, build_plan_graph, match_waypoint, shortest_route
from .scene import Cls, GridSpec, ScenarioSpec, SceneCrop, SemanticGrid, crop_ego, synthesize_map

__version__ = "0.1.0"

__all__ = [
    "Cls", "Dataset", "GeoPoint", "GridSpec", "LocalPoint", "MetricsReport", "ModelConfig",
    "PlanGraph", "Pose2D", "RoadGraph", "Route", "Sample", "ScenarioSpec", "SceneCrop",
    "SemanticGrid", "TrainConfig", "TrajectoryGenerator", "PlanSceneCVAE", "Variant", "ade",
    "build_plan_graph", "build_road_graph", "crop_ego", "dac", "evaluate", "fde",
    "generate_synthetic", "import_published", "interpolate_trajectory", "load_osm_graph",
    "match_waypoint", "mde", "parse_osm", "shortest_route", "synthesize_map", "to_ego_frame",
    "wgs84_to_local",
]
