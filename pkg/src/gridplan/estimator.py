"""scikit-learn style wrapper around the CVAE trajectory generator."""
import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import model as M
from .validation import check_plan_scene, check_trajectories, targets_from

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrajectoryGenerator(BaseEstimator, RegressorMixin):
    """Generates H ego-frame waypoints from a plan matrix and a scene crop.

    ``fit`` accepts samples (their ground truth is used when ``y`` is None)
    or a ``(plans, scenes)`` pair with explicit ``y``.  ``predict`` decodes
    the argmax-prior mode.
    """

    def __init__(self, horizon=10, n_modes=12, past=20, future=20, grid_resolution=2.0,
                 grid_horizon=100.0, plan_dim=128, plan_hidden=128, scene_dim=256, traj_dim=64,
                 gru_hidden=128, conv_channels=(8, 16, 32, 64, 64), mse_weight=1.0, lr=1e-3,
                 epochs=100, batch_size=16, seed=0, dtype="float32", threads=1):
        self.horizon = horizon
        self.n_modes = n_modes
        self.past = past
        self.future = future
        self.grid_resolution = grid_resolution
        self.grid_horizon = grid_horizon
        self.plan_dim = plan_dim
        self.plan_hidden = plan_hidden
        self.scene_dim = scene_dim
        self.traj_dim = traj_dim
        self.gru_hidden = gru_hidden
        self.conv_channels = conv_channels
        self.mse_weight = mse_weight
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.dtype = dtype
        self.threads = threads

    def model_config(self):
        return M.ModelConfig(
            horizon=self.horizon, n_modes=self.n_modes, past=self.past, future=self.future,
            grid_resolution=self.grid_resolution, grid_horizon=self.grid_horizon,
            plan_dim=self.plan_dim, plan_hidden=self.plan_hidden, scene_dim=self.scene_dim,
            traj_dim=self.traj_dim, gru_hidden=self.gru_hidden,
            conv_channels=tuple(self.conv_channels), mse_weight=self.mse_weight)

    def train_config(self):
        return M.TrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                             seed=self.seed, threads=self.threads, dtype=self.dtype)

    def _validate(self, X):
        cfg = self.model_config()
        return check_plan_scene(X, cfg.plan_rows, cfg.side)

    def fit(self, X, y=None, callback=None):
        plans, scenes = self._validate(X)
        if y is None:
            y = targets_from(X)
            if y is None:
                raise ValueError("y is required when X carries no ground truth")
        y = check_trajectories(y, len(plans), self.horizon)
        self.model_ = M.build_model(self.model_config(), self.seed, _DTYPES[self.dtype])
        self.loss_curve_ = M.train(self.model_, plans, scenes, y, self.train_config(), callback)
        self.n_samples_fit_ = len(plans)
        return self

    def _tensors(self, X):
        check_is_fitted(self, "model_")
        plans, scenes = self._validate(X)
        dtype = next(self.model_.parameters()).dtype
        return torch.as_tensor(plans, dtype=dtype), torch.as_tensor(scenes, dtype=dtype)

    def _run(self, X):
        plans, scenes = self._tensors(X)
        prev = torch.get_num_threads()
        torch.set_num_threads(self.threads)
        try:
            mu, modes = M.infer(self.model_, plans, scenes)
        finally:
            torch.set_num_threads(prev)
        return mu.double().numpy(), modes

    def predict(self, X):
        """(n, H, 2) trajectories decoded from the most likely mode."""
        return self._run(X)[0]

    def predict_mode(self, X):
        return self._run(X)[1]

    def predict_proba(self, X):
        """Prior mode probabilities, shape (n, K)."""
        plans, scenes = self._tensors(X)
        with torch.no_grad():
            return self.model_.prior(plans, scenes).double().numpy()

    def score(self, X, y=None, sample_weight=None):
        """Negative mean ADE over all waypoints (higher is better)."""
        pred = self.predict(X)
        if y is None:
            y = targets_from(X)
        y = check_trajectories(y, len(pred), self.horizon)
        d = np.hypot(*(pred - y).transpose(2, 0, 1)).mean(-1)
        return -float(np.average(d, weights=sample_weight))

    def loss(self, X, y=None):
        """Batch-mean (total, recon, kl, mse) of the training objective."""
        plans, scenes = self._tensors(X)
        if y is None:
            y = targets_from(X)
        y = torch.as_tensor(check_trajectories(y, len(plans), self.horizon), dtype=plans.dtype)
        with torch.no_grad():
            return tuple(float(t) for t in M.loss(self.model_, plans, scenes, y))

    def n_parameters(self):
        check_is_fitted(self, "model_")
        return self.model_.n_parameters()

    def save(self, path=None):
        check_is_fitted(self, "model_")
        params = self.get_params()
        params["conv_channels"] = list(params["conv_channels"])
        return M.save_model(self.model_, path, {"estimator": params})

    @classmethod
    def load(cls, source):
        model, cfg = M.load_model(source)
        params = dict(cfg.get("estimator", {}))
        if "conv_channels" in params:
            params["conv_channels"] = tuple(params["conv_channels"])
        est = cls(**params)
        est.model_ = model
        est.loss_curve_ = []
        return est
