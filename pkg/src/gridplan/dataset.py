"""Samples, the ``TNDS`` container, published-layout import and the synthetic generator."""
import io
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CodecError, DomainError, InsufficientLengthError, PublishedImportError
from .geo import (GeoPoint, Pose2D, arc_lengths, from_ego_frame, interpolate_trajectory, local_to_wgs84,
                  offset_polyline, project_onto_polyline, sample_polyline, to_ego_frame,
                  wrap_angle)
from .planner import PlanGraph, Variant, plan_for_position, route_positions, shortest_route
from .scene import Cls, GridSpec, SceneCrop, crop_ego, synthesize_map

NON_DRIVABLE = (Cls.SIDEWALK, Cls.VEGETATION)


@dataclass(eq=False)
class Sample:
    plan: np.ndarray                 # (P+F, 3)
    scene: np.ndarray                # (L, L, 3) float32
    gt: np.ndarray                   # (H, 2) ego frame
    ego_map_pose: Pose2D = Pose2D(0.0, 0.0, 0.0)
    ego_global: GeoPoint = GeoPoint(0.0, 0.0)
    timestamp: float = 0.0
    variant: str = "STPF"
    resolution: float = 2.0
    imu: np.ndarray = None
    map_id: str = ""
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.plan = np.asarray(self.plan, dtype=np.float64)
        self.scene = np.asarray(self.scene, dtype=np.float32)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.imu is not None:
            self.imu = np.asarray(self.imu, dtype=np.float64)
        self.ego_map_pose = Pose2D(*map(float, self.ego_map_pose))
        self.ego_global = GeoPoint(*map(float, self.ego_global))

    @property
    def plan_graph(self):
        return PlanGraph(self.plan, Variant(self.variant))

    @property
    def scene_crop(self):
        L = self.scene.shape[0]
        return SceneCrop(self.scene, GridSpec(self.resolution, L / (2 * self.resolution)))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return encode_sample(self) == encode_sample(other)


@dataclass
class Dataset:
    samples: list
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {(s.plan.shape, s.scene.shape, s.gt.shape) for s in self.samples}
        if len(shapes) > 1:
            raise DomainError(f"samples disagree on (plan, scene, gt) shapes: {sorted(shapes)}")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def arrays(self):
        """Stacked (plans, scenes, gts)."""
        if not self.samples:
            raise DomainError("empty dataset")
        return (np.stack([s.plan for s in self.samples]),
                np.stack([s.scene for s in self.samples]),
                np.stack([s.gt for s in self.samples]))

    def with_variant(self, variant):
        """Copy whose plans are re-masked to a coarser variant (PF drops codes 3/4)."""
        from .planner import CROSSING, FUTURE, PAST, STOP_OR_SIGNAL
        out = []
        for s in self.samples:
            plan = s.plan.copy()
            special = np.isin(plan[:, 2], (STOP_OR_SIGNAL, CROSSING))
            if Variant(variant) is Variant.PF and special.any():
                # the row position tells past from future
                P = len(plan) // 2
                rows = np.nonzero(special)[0]
                plan[rows, 2] = np.where(rows < P, PAST, FUTURE)
            elif Variant(variant) is Variant.STPF and (plan[:, 2] == CROSSING).any():
                P = len(plan) // 2
                rows = np.nonzero(plan[:, 2] == CROSSING)[0]
                plan[rows, 2] = np.where(rows < P, PAST, FUTURE)
            out.append(Sample(plan, s.scene, s.gt, s.ego_map_pose, s.ego_global, s.timestamp,
                              Variant(variant).value, s.resolution, s.imu, s.map_id, dict(s.aux)))
        return Dataset(out, self.split, dict(self.provenance))


# ---------------------------------------------------------------------------
# codec

MAGIC = b"TNDS"
VERSION = 1


def encode_sample(s):
    arrays = [("plan", s.plan, "<f8"), ("scene", s.scene, "<f4"), ("gt", s.gt, "<f8")]
    if s.imu is not None:
        arrays.append(("imu", s.imu, "<f8"))
    meta = {
        "ego_map_pose": list(s.ego_map_pose), "ego_global": list(s.ego_global),
        "timestamp": s.timestamp, "variant": s.variant, "resolution": s.resolution,
        "map_id": s.map_id,
        "arrays": [[name, dt, list(a.shape)] for name, a, dt in arrays],
        "aux": [[k, len(v)] for k, v in sorted(s.aux.items())],
    }
    mb = json.dumps(meta, sort_keys=True).encode()
    parts = [struct.pack("<I", len(mb)), mb]
    parts += [np.ascontiguousarray(a, dtype=dt).tobytes() for _, a, dt in arrays]
    parts += [bytes(v) for _, v in sorted(s.aux.items())]
    return b"".join(parts)


def decode_sample(data):
    (n,) = struct.unpack_from("<I", data, 0)
    meta = json.loads(data[4:4 + n].decode())
    off = 4 + n
    arrays = {}
    for name, dt, shape in meta["arrays"]:
        size = int(np.prod(shape)) * np.dtype(dt).itemsize
        arrays[name] = np.frombuffer(data[off:off + size], dtype=dt).reshape(shape).copy()
        off += size
    aux = {}
    for k, ln in meta["aux"]:
        aux[k] = data[off:off + ln]
        off += ln
    if off != len(data):
        raise CodecError("sample record has trailing bytes")
    return Sample(arrays["plan"], arrays["scene"], arrays["gt"], meta["ego_map_pose"],
                  meta["ego_global"], meta["timestamp"], meta["variant"], meta["resolution"],
                  arrays.get("imu"), meta["map_id"], aux)


def dumps(dataset):
    header = json.dumps({"split": dataset.split, "provenance": dataset.provenance},
                        sort_keys=True).encode()
    buf = bytearray(MAGIC + struct.pack("<H", VERSION))
    buf += struct.pack("<I", len(header)) + header
    buf += struct.pack("<I", len(dataset))
    for s in dataset:
        rec = zlib.compress(encode_sample(s), 6)
        buf += struct.pack("<I", len(rec)) + rec
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def loads(data):
    if len(data) < 14 or data[:4] != MAGIC:
        raise CodecError("not a TNDS dataset")
    body, trailer = data[:-4], data[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body) & 0xFFFFFFFF:
        raise CodecError("dataset checksum mismatch (truncated or corrupt file)")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != VERSION:
        raise CodecError(f"unsupported dataset version {version}")
    try:
        return _loads_body(body)
    except (struct.error, zlib.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CodecError(f"malformed dataset body: {exc}") from None


def _loads_body(body):
    (n,) = struct.unpack_from("<I", body, 6)
    header = json.loads(body[10:10 + n].decode())
    off = 10 + n
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    samples = []
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", body, off)
        off += 4
        samples.append(decode_sample(zlib.decompress(body[off:off + ln])))
        off += ln
    return Dataset(samples, header["split"], header["provenance"])


def save(dataset, path):
    Path(path).write_bytes(dumps(dataset))


def load(path):
    return loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# published layout

_REQUIRED = {
    "plan": ("global_plan", "plan"),
    "scene": ("semantic_map", "scene"),
    "gt": ("trajectory", "gt"),
}
_OPTIONAL = {
    "imu": ("imu",),
    "timestamp": ("timestamp",),
    "ego_map_pose": ("map_pose", "ego_map_pose"),
    "ego_global": ("gps", "ego_global"),
}


def import_published(root, split="train", resolution=2.0):
    """Load ``root/<split>/*.npz`` records (see README for the field table)."""
    folder = Path(root) / split
    files = sorted(folder.glob("*.npz")) if folder.is_dir() else []
    if not files:
        raise PublishedImportError(f"no samples found under {folder}")
    samples = []
    for f in files:
        with np.load(f, allow_pickle=False) as z:
            keys = set(z.files)
            got, used = {}, set()
            for field_, names in _REQUIRED.items():
                name = next((n for n in names if n in keys), None)
                if name is None:
                    raise PublishedImportError(f"sample {f.name} lacks mandatory field {names[0]!r}")
                got[field_] = z[name]
                used.add(name)
            for field_, names in _OPTIONAL.items():
                name = next((n for n in names if n in keys), None)
                if name is not None:
                    got[field_] = z[name]
                    used.add(name)
            aux = {}
            for k in sorted(keys - used):
                buf = io.BytesIO()
                np.save(buf, z[k], allow_pickle=False)
                aux[k] = buf.getvalue()
        scene = got["scene"]
        if scene.dtype == np.uint8:
            scene = scene.astype(np.float32) / 255.0
        samples.append(Sample(
            got["plan"], scene, got["gt"],
            tuple(got.get("ego_map_pose", (0.0, 0.0, 0.0))),
            tuple(got.get("ego_global", (0.0, 0.0))),
            float(got.get("timestamp", 0.0)), "STPF", resolution,
            got.get("imu"), f.stem, aux))
    return Dataset(samples, split, {"external": str(Path(root))})


# ---------------------------------------------------------------------------
# synthetic generation

def _leaves(graph):
    return sorted(i for i, edges in graph.adjacency.items() if len(edges) == 1)


def _nearest_node(graph, p):
    return min(sorted(graph.adjacency), key=lambda i: math.hypot(graph.position(i)[0] - p[0],
                                                                graph.position(i)[1] - p[1]))


def _lane_heading(poly, s):
    cum = arc_lengths(poly)
    k = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(poly) - 2))
    d = poly[k + 1] - poly[k]
    return math.atan2(d[1], d[0])


def _gt_from(lane, s0, ego, spacing, count):
    cum = arc_lengths(lane)
    start = sample_polyline(lane, [s0])
    raw = np.concatenate([start, lane[cum > s0 + 1e-9]])
    return interpolate_trajectory(to_ego_frame(ego, raw), spacing, count)


def generate_synthetic(scenarios, samples_per_scenario, seed=0, variant="STPF", past=20,
                       future=20, horizon=10, spacing=3.0, grid_spec=GridSpec(),
                       pos_sigma=0.5, heading_sigma_deg=2.0, split="train"):
    """Draw samples from synthetic worlds.

    Per sample: choose a route (the scenario's listed endpoint pairs, or any
    ordered pair of dead ends), place the vehicle on the right-hand lane at a
    random arc position, and record the plan built from a noisy GPS fix, the
    heading-up crop and the ground-truth lane trajectory.  The vehicle's map
    pose is exact; the noise goes into the GPS fix (``pos_sigma``) and the
    IMU yaw (``heading_sigma_deg``), which is carried but never consumed.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise DomainError("need at least one scenario")
    children = np.random.SeedSequence(seed).spawn(len(scenarios))
    samples, skipped = [], 0
    for si, (spec, ss) in enumerate(zip(scenarios, children)):
        rng = np.random.default_rng(ss)
        grid, graph = synthesize_map(spec, seed)
        origin = GeoPoint(*spec.origin)
        if spec.routes:
            pairs = [(_nearest_node(graph, a), _nearest_node(graph, b)) for a, b in spec.routes]
        else:
            ends = _leaves(graph) or sorted(graph.adjacency)
            pairs = [(a, b) for a in ends for b in ends if a != b]
        half_lane = max(r.width for r in spec.roads) / 4
        for k in range(samples_per_scenario):
            src, dst = pairs[int(rng.integers(len(pairs)))]
            route = shortest_route(graph, src, dst)
            lane = offset_polyline(route_positions(route, graph), -half_lane)
            total = arc_lengths(lane)[-1]
            need = spacing * horizon
            lo, hi = spec.ego_arc_range or (0.0, total - need - 1.0)
            hi = min(hi, total - need - 1e-6)
            s_ego = float(rng.uniform(lo, hi)) if hi > lo else lo
            gps_noise = rng.normal(0.0, pos_sigma, size=2)
            yaw_noise = math.radians(float(rng.normal(0.0, heading_sigma_deg)))
            if total - s_ego < need:
                skipped += 1
                continue
            p = sample_polyline(lane, [s_ego])[0]
            ego = Pose2D(float(p[0]), float(p[1]), wrap_angle(_lane_heading(lane, s_ego)))
            try:
                gt = _gt_from(lane, s_ego, ego, spacing, horizon)
            except InsufficientLengthError:
                skipped += 1
                continue
            gt_map = from_ego_frame(ego, gt)
            if np.isin(grid.classes_at(gt_map), NON_DRIVABLE).any():
                raise DomainError(f"scenario {spec.name!r}: ground truth leaves the drivable area")
            gps = p + gps_noise
            plan, _, _ = plan_for_position(route, graph, gps, variant, past, future)
            crop = crop_ego(grid, ego, grid_spec)
            samples.append(Sample(
                plan.rows, crop.tensor, gt, ego, local_to_wgs84(origin, gps),
                1.6e9 + 1000.0 * si + 0.1 * k, Variant(variant).value, grid_spec.resolution,
                np.array([wrap_angle(ego.heading + yaw_noise)]), spec.name))
    return Dataset(samples, split, {"synthetic_seed": seed, "skipped": skipped,
                                    "scenarios": [s.name for s in scenarios]})


def sample_from_pose(world, route_endpoints, ego, variant="STPF", past=20, future=20,
                     grid_spec=GridSpec(), horizon=10, spacing=3.0):
    """Deterministic sample for an explicit route and exact pose (no noise)."""
    grid, graph = world.grid, world.graph
    src = _nearest_node(graph, route_endpoints[0])
    dst = _nearest_node(graph, route_endpoints[1])
    route = shortest_route(graph, src, dst)
    half_lane = max(r.width for r in world.spec.roads) / 4
    lane = offset_polyline(route_positions(route, graph), -half_lane)
    s0 = project_onto_polyline(lane, (ego[0], ego[1]))
    gt = _gt_from(lane, s0, ego, spacing, horizon)
    plan, _, _ = plan_for_position(route, graph, (ego[0], ego[1]), variant, past, future)
    crop = crop_ego(grid, ego, grid_spec)
    origin = GeoPoint(*world.spec.origin)
    return Sample(plan.rows, crop.tensor, gt, ego, local_to_wgs84(origin, (ego[0], ego[1])),
                  0.0, Variant(variant).value, grid_spec.resolution, None, world.spec.name)
