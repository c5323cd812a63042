"""Displacement errors and drivable-area compliance."""
import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .geo import from_ego_frame
from .scene import Cls

NON_COMPLIANT = (Cls.SIDEWALK, Cls.VEGETATION)
COLUMNS = ("ade_full", "ade_half", "fde", "mde", "dac_full", "dac_half")
HEADERS = ("ADE_FULL", "ADE_HALF", "FDE", "MDE", "DAC_FULL", "DAC_HALF")


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DomainError(f"trajectory shapes differ: {pred.shape} vs {gt.shape}")
    return np.hypot(pred[..., 0] - gt[..., 0], pred[..., 1] - gt[..., 1])


def ade(pred, gt, k=None):
    """Mean displacement over the first ``k`` waypoints (all by default)."""
    d = _pair(pred, gt)
    n = d.shape[-1]
    k = n if k is None else k
    if not 1 <= k <= n:
        raise DomainError(f"k={k} outside [1, {n}]")
    return float(d[..., :k].mean())


def half(n):
    return n // 2


def fde(pred, gt):
    return float(_pair(pred, gt)[..., -1])


def mde(pred, gt):
    """Largest waypoint displacement of one trajectory."""
    return float(_pair(pred, gt).max())


def dac(pred, grid, k=None):
    """True when none of the first ``k`` waypoints lands on sidewalk or vegetation.

    ``grid`` is anything exposing ``classes_at(points)`` in the frame of
    ``pred`` (a SemanticGrid for map-frame points, a SceneCrop for ego-frame
    points).  Unknown and off-grid cells do not count against compliance.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    k = len(pred) if k is None else k
    return not bool(np.isin(grid.classes_at(pred[:k]), NON_COMPLIANT).any())


@dataclass
class MetricsReport:
    ade_full: float
    ade_half: float
    fde: float
    mde: float
    dac_full: float
    dac_half: float
    n: int

    def to_csv(self, label="model"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("method",) + HEADERS + ("n",))
        w.writerow((label,) + tuple(f"{getattr(self, c):.6f}" for c in COLUMNS) + (self.n,))
        return buf.getvalue()

    def to_table(self, label="model"):
        width = max(len(label), len("Method"))
        head = "Method".ljust(width) + "".join(h.rjust(10) for h in HEADERS)
        row = label.ljust(width) + "".join(f"{getattr(self, c):10.6f}" for c in COLUMNS)
        return f"{head}\n{row}\n"

    def as_dict(self):
        return asdict(self)


def sample_metrics(pred, gt, grid, grid_pred=None):
    """(ade_full, ade_half, fde, mde, dac_full, dac_half) for one sample.

    ``grid_pred`` is ``pred`` expressed in the grid's frame when that differs
    from the frame of ``gt``.
    """
    H = len(gt)
    gp = pred if grid_pred is None else grid_pred
    return (ade(pred, gt), ade(pred, gt, half(H)), fde(pred, gt), mde(pred, gt),
            float(dac(gp, grid)), float(dac(gp, grid, half(H))))


def report(rows):
    """Average per-sample metric tuples into a MetricsReport."""
    if len(rows) == 0:
        raise DomainError("cannot evaluate an empty dataset")
    means = np.mean(np.asarray(rows, dtype=float), axis=0)
    return MetricsReport(*map(float, means), n=len(rows))


def evaluate(model, dataset, grids=None):
    """Run inference on every sample and summarize.

    ``model`` is a fitted estimator (``predict``).  DAC is checked against
    ``grids[sample.map_id]`` in the map frame when given, otherwise against
    the sample's own ego-centric crop.
    """
    if len(dataset) == 0:
        raise DomainError("cannot evaluate an empty dataset")
    preds = model.predict(dataset)
    rows = []
    for s, p in zip(dataset, preds):
        if grids is None:
            rows.append(sample_metrics(p, s.gt, s.scene_crop))
            continue
        if s.map_id not in grids:
            raise DomainError(f"no grid for map {s.map_id!r}")
        rows.append(sample_metrics(p, s.gt, grids[s.map_id], from_ego_frame(s.ego_map_pose, p)))
    return report(rows)
