"""Input validation shared by the estimator and the CLI."""
import numpy as np

from .errors import DomainError


def _is_sample(obj):
    return hasattr(obj, "plan") and hasattr(obj, "scene") and hasattr(obj, "gt")


def check_plan_scene(X, plan_rows=None, side=None):
    """Normalize model inputs to ``(plans, scenes)`` arrays.

    ``X`` may be a Dataset or any sequence of Samples, a single Sample, a
    ``(plans, scenes)`` pair of arrays, or a mapping with ``plan``/``scene``.
    """
    if _is_sample(X):
        X = [X]
    if isinstance(X, dict):
        plans, scenes = X["plan"], X["scene"]
    elif isinstance(X, tuple) and len(X) == 2 and not _is_sample(X[0]):
        plans, scenes = X
    else:
        items = list(X)
        if not items or not all(_is_sample(s) for s in items):
            raise DomainError("expected samples or a (plans, scenes) pair")
        plans = np.stack([s.plan for s in items])
        scenes = np.stack([s.scene for s in items])
    plans = np.asarray(plans, dtype=np.float64)
    scenes = np.asarray(scenes, dtype=np.float32)
    if plans.ndim == 2:
        plans, scenes = plans[None], scenes[None]
    if plans.ndim != 3 or plans.shape[-1] != 3:
        raise DomainError(f"plans must be (n, P+F, 3), got {plans.shape}")
    if scenes.ndim != 4 or scenes.shape[-1] != 3 or scenes.shape[1] != scenes.shape[2]:
        raise DomainError(f"scenes must be (n, L, L, 3), got {scenes.shape}")
    if len(plans) != len(scenes):
        raise DomainError("plans and scenes differ in count")
    if plan_rows is not None and plans.shape[1] != plan_rows:
        raise DomainError(f"plans have {plans.shape[1]} rows, model expects {plan_rows}")
    if side is not None and scenes.shape[1] != side:
        raise DomainError(f"scenes are {scenes.shape[1]} px wide, model expects {side}")
    if not np.all(np.isfinite(plans)) or not np.all(np.isfinite(scenes)):
        raise DomainError("inputs contain non-finite values")
    if scenes.size and (scenes.min() < 0 or scenes.max() > 1):
        raise DomainError("scene channels must lie in [0, 1]")
    return plans, scenes


def check_trajectories(y, n=None, horizon=None):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3 or y.shape[-1] != 2:
        raise DomainError(f"trajectories must be (n, H, 2), got {y.shape}")
    if n is not None and len(y) != n:
        raise DomainError(f"{len(y)} trajectories for {n} inputs")
    if horizon is not None and y.shape[1] != horizon:
        raise DomainError(f"trajectories have {y.shape[1]} waypoints, expected {horizon}")
    if not np.all(np.isfinite(y)):
        raise DomainError("trajectories contain non-finite values")
    return y


def targets_from(X):
    """Ground truth carried by sample inputs, or None for bare arrays."""
    if _is_sample(X):
        return np.asarray(X.gt)[None]
    if isinstance(X, (tuple, dict)):
        return None
    items = list(X)
    if items and all(_is_sample(s) for s in items):
        return np.stack([s.gt for s in items])
    return None
