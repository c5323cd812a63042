"""Desk-scale synthetic experiment sets shared by the CLI and the acceptance suite."""
import math

from .dataset import Dataset, generate_synthetic, sample_from_pose
from .scene import (GridSpec, four_way_scenario, hairpin_scenario, straight_scenario,
                    three_way_scenario, world_from_spec)

# 80x80 crops at 1 px/m keep a training epoch over 64 samples well under a second
DESK_GRID = GridSpec(resolution=1.0, horizon=40.0)
DESK_ESTIMATOR = {"grid_resolution": DESK_GRID.resolution, "grid_horizon": DESK_GRID.horizon}

SOUTH, NORTH, EAST, WEST = (0.0, -100.0), (0.0, 100.0), (100.0, 0.0), (-100.0, 0.0)
LEFT_ROUTE = [SOUTH, WEST]
RIGHT_ROUTE = [SOUTH, EAST]
STRAIGHT_ROUTE = [SOUTH, NORTH]
# northbound on the right-hand lane, 15 m before the intersection center
MULTIMODAL_EGO = (1.75, -15.0, math.pi / 2)


def overfit_scenarios():
    """Straight road, left/right/straight through a 4-way stop, and a u-turn hairpin."""
    return [
        (four_way_scenario(routes=[LEFT_ROUTE, RIGHT_ROUTE, STRAIGHT_ROUTE],
                           ego_arc_range=(72.0, 95.0)), 32),
        (hairpin_scenario(ego_arc_range=(50.0, 78.0)), 16),
        (straight_scenario(), 16),
    ]


def overfit_dataset(seed=7, grid_spec=DESK_GRID, variant="STPF"):
    """The 64-sample maneuver mix used for memorization runs."""
    samples, skipped = [], 0
    for spec, n in overfit_scenarios():
        part = generate_synthetic([spec], n, seed=seed, variant=variant, grid_spec=grid_spec)
        samples += part.samples
        skipped += part.provenance["skipped"]
    return Dataset(samples, "train", {"synthetic_seed": seed, "skipped": skipped,
                                      "scenarios": [s.name for s, _ in overfit_scenarios()]})


def intersection_dataset(n=256, seed=0, grid_spec=DESK_GRID, variant="STPF", split="train"):
    """Approaches to a 4-way stop and a 3-way signal, all turning options."""
    four = four_way_scenario(ego_arc_range=(60.0, 95.0))
    three = three_way_scenario(ego_arc_range=(60.0, 95.0))
    return Dataset(
        generate_synthetic([four], n - n // 2, seed=seed, variant=variant,
                           grid_spec=grid_spec).samples
        + generate_synthetic([three], n // 2, seed=seed + 1, variant=variant,
                             grid_spec=grid_spec).samples,
        split, {"synthetic_seed": seed, "scenarios": [four.name, three.name]})


def turn_pair(grid_spec=DESK_GRID, ego=MULTIMODAL_EGO, variant="STPF"):
    """Left-plan and right-plan samples from the same pose in the 4-way world."""
    world = world_from_spec(four_way_scenario())
    return (sample_from_pose(world, LEFT_ROUTE, ego, variant, grid_spec=grid_spec),
            sample_from_pose(world, RIGHT_ROUTE, ego, variant, grid_spec=grid_spec))
