"""The CVAE trajectory generator: encoders, prior/recognition heads, GRU decoder,
training objective, training loop and argmax-mode inference."""
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import autodiff as ad
from .errors import DomainError, TrainingError

RHO_BOUND = 0.99


@dataclass
class ModelConfig:
    horizon: int = 10                 # H waypoints
    n_modes: int = 12                 # |Z|
    past: int = 20                    # P plan rows
    future: int = 20                  # F plan rows
    grid_resolution: float = 2.0      # D, pixels per meter
    grid_horizon: float = 100.0       # L_max, meters
    plan_dim: int = 128
    plan_hidden: int = 128
    scene_dim: int = 256
    traj_dim: int = 64                # BiLSTM output, two directions
    gru_hidden: int = 128
    conv_channels: tuple = (8, 16, 32, 64, 64)
    mse_weight: float = 1.0           # lambda
    # fixed input/output scalings; none of them change what is representable
    plan_scale: float = 0.05          # meters -> plan encoder units
    step_scale: float = 3.0           # decoder step head unit, meters
    feedback_scale: float = 1.0 / 30  # meters -> GRU / BiLSTM input units

    @property
    def side(self):
        return int(round(2 * self.grid_resolution * self.grid_horizon))

    @property
    def plan_rows(self):
        return self.past + self.future

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "conv_channels" in d:
            d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


def _conv_out(n, blocks):
    for _ in range(blocks):
        n = (n + 2 - 3) // 2 + 1
    return n


class PlanSceneCVAE(nn.Module):
    """All learnable parameters.  Inputs are batched tensors:

    * plans ``(B, P+F, 3)`` rows ``(p_x, p_y, f)`` in meters / feature codes;
    * scenes ``(B, L, L, 3)`` palette-encoded crops;
    * trajectories ``(B, H, 2)`` ego-frame meters.
    """

    def __init__(self, config=None):
        super().__init__()
        cfg = self.config = config or ModelConfig()
        K = cfg.n_modes

        self.w_q = nn.Parameter(torch.randn(3, 3) * 0.3)
        self.w_k = nn.Parameter(torch.randn(3, 3) * 0.3)
        self.w_v = nn.Parameter(torch.randn(3, 3) * 0.3)
        self.plan_fc1 = nn.Linear(cfg.plan_rows * 3, cfg.plan_hidden)
        self.plan_fc2 = nn.Linear(cfg.plan_hidden, cfg.plan_dim)

        chans = (3,) + tuple(cfg.conv_channels)
        self.convs = nn.ModuleList(nn.Conv2d(a, b, 3, stride=2, padding=1)
                                   for a, b in zip(chans[:-1], chans[1:]))
        n = _conv_out(cfg.side, len(cfg.conv_channels))
        self.scene_fc = nn.Linear(chans[-1] * n * n, cfg.scene_dim)

        joint = cfg.plan_dim + cfg.scene_dim
        self.prior_head = nn.Linear(joint, K)

        hid = cfg.traj_dim // 2
        bound = 1.0 / math.sqrt(hid)
        self.lstm_fwd_w = nn.Parameter(torch.empty(4 * hid, 2 + hid).uniform_(-bound, bound))
        self.lstm_fwd_b = nn.Parameter(torch.empty(4 * hid).uniform_(-bound, bound))
        self.lstm_bwd_w = nn.Parameter(torch.empty(4 * hid, 2 + hid).uniform_(-bound, bound))
        self.lstm_bwd_b = nn.Parameter(torch.empty(4 * hid).uniform_(-bound, bound))
        self.recog_head = nn.Linear(joint + cfg.traj_dim, K)

        g = cfg.gru_hidden
        self.dec_init = nn.Linear(joint + K, g)
        bound = 1.0 / math.sqrt(g)
        for name in ("z", "r", "h"):
            setattr(self, f"gru_w_{name}", nn.Parameter(torch.empty(g, 2 + g).uniform_(-bound, bound)))
            setattr(self, f"gru_b_{name}", nn.Parameter(torch.empty(g).uniform_(-bound, bound)))
        self.out_head = nn.Linear(g, 5)

    # ---------------------------------------------------------------- encoders
    def encode_plan(self, plans):
        cfg = self.config
        if plans.shape[-2:] != (cfg.plan_rows, 3):
            raise DomainError(f"plan must be ({cfg.plan_rows}, 3), got {tuple(plans.shape[-2:])}")
        scale = plans.new_tensor([cfg.plan_scale, cfg.plan_scale, 1.0])
        a = ad.attention(plans * scale, self.w_q, self.w_k, self.w_v)
        h = ad.relu(self.plan_fc1(a.flatten(-2)))
        return self.plan_fc2(h)

    def encode_scene(self, scenes):
        L = self.config.side
        if scenes.shape[-3:] != (L, L, 3):
            raise DomainError(f"scene must be ({L}, {L}, 3), got {tuple(scenes.shape[-3:])}")
        x = scenes.permute(0, 3, 1, 2)
        for conv in self.convs:
            x = ad.relu(conv(x))
        return self.scene_fc(x.flatten(1))

    def encode_trajectory(self, y):
        return ad.bilstm_encode(y * self.config.feedback_scale, self.lstm_fwd_w, self.lstm_fwd_b,
                                self.lstm_bwd_w, self.lstm_bwd_b)

    # ---------------------------------------------------------------- heads
    def prior_logits(self, h_g, h_s):
        return torch.log_softmax(self.prior_head(torch.cat([h_g, h_s], -1)), -1)

    def recognition_logits(self, h_g, h_s, y):
        h_y = self.encode_trajectory(y)
        return torch.log_softmax(self.recog_head(torch.cat([h_g, h_s, h_y], -1)), -1)

    def decode(self, z, h_g, h_s):
        """Unroll the GRU for modes ``z`` (B,) -> (mu, log_sigma, rho) with
        shapes (B, H, 2), (B, H, 2), (B, H)."""
        cfg = self.config
        onehot = torch.nn.functional.one_hot(z, cfg.n_modes).to(h_g.dtype)
        h = torch.tanh(self.dec_init(torch.cat([h_g, h_s, onehot], -1)))
        pos = h.new_zeros(h.shape[0], 2)
        mus, sigmas, rhos = [], [], []
        for _ in range(cfg.horizon):
            h = ad.gru_step(h, pos * cfg.feedback_scale, self.gru_w_z, self.gru_b_z,
                            self.gru_w_r, self.gru_b_r, self.gru_w_h, self.gru_b_h)
            out = self.out_head(h)
            pos = pos + cfg.step_scale * out[:, :2]
            mus.append(pos)
            sigmas.append(out[:, 2:4])
            rhos.append(RHO_BOUND * torch.tanh(out[:, 4]))
        return torch.stack(mus, 1), torch.stack(sigmas, 1), torch.stack(rhos, 1)

    def decode_all(self, h_g, h_s):
        """Decode every mode at once -> shapes (B, K, H, 2), (B, K, H, 2), (B, K, H)."""
        B, K = h_g.shape[0], self.config.n_modes
        z = torch.arange(K).repeat(B)
        mu, ls, rho = self.decode(z, h_g.repeat_interleave(K, 0), h_s.repeat_interleave(K, 0))
        H = self.config.horizon
        return mu.view(B, K, H, 2), ls.view(B, K, H, 2), rho.view(B, K, H)

    def embed(self, plans, scenes):
        return self.encode_plan(plans), self.encode_scene(scenes)

    def prior(self, plans, scenes):
        return torch.exp(self.prior_logits(*self.embed(plans, scenes)))

    def n_parameters(self):
        return sum(p.numel() for p in self.parameters())


def mode_nll(model, h_g, h_s, y):
    """Per-mode trajectory NLL (B, K) with i.i.d. waypoints, plus the decoded means."""
    mu, ls, rho = model.decode_all(h_g, h_s)
    nll = ad.bvn_nll_params(y[:, None], mu, ls, rho).sum(-1)
    return nll, mu


def loss_terms(model, plans, scenes, y, mse_weight=None):
    """Per-sample (total, recon, kl, mse) of the training objective.

    recon is the exact expectation of the NLL under q over all modes; the MSE
    target is the q-weighted mean trajectory.
    """
    if mse_weight is None:
        mse_weight = model.config.mse_weight
    h_g, h_s = model.embed(plans, scenes)
    log_p = model.prior_logits(h_g, h_s)
    log_q = model.recognition_logits(h_g, h_s, y)
    q = torch.exp(log_q)
    nll, mu = mode_nll(model, h_g, h_s, y)
    recon = (q * nll).sum(-1)
    kl = ad.categorical_kl_logits(log_q, log_p)
    y_hat = (q[:, :, None, None] * mu).sum(1)
    mse = ((y - y_hat) ** 2).sum(-1).mean(-1)
    total = recon + kl + mse_weight * mse
    return total, recon, kl, mse


def loss(model, plans, scenes, y, mse_weight=None):
    """Batch-mean (total, recon, kl, mse)."""
    return tuple(t.mean() for t in loss_terms(model, plans, scenes, y, mse_weight))


def marginal_nll(model, plans, scenes, y):
    """-log sum_z p(z|m) p(y|m,z) per sample (used by consistency checks)."""
    h_g, h_s = model.embed(plans, scenes)
    log_p = model.prior_logits(h_g, h_s)
    nll, _ = mode_nll(model, h_g, h_s, y)
    return -torch.logsumexp(log_p - nll, dim=-1)


@torch.no_grad()
def infer(model, plans, scenes):
    """Means of the argmax-prior mode; returns (trajectories (B, H, 2), modes (B,))."""
    h_g, h_s = model.embed(plans, scenes)
    probs = torch.exp(model.prior_logits(h_g, h_s)).cpu().numpy()
    modes = probs.argmax(-1)   # first maximum wins ties
    mu, _, _ = model.decode(torch.as_tensor(modes), h_g, h_s)
    return mu, modes


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threads: int = 1
    dtype: str = "float32"


def build_model(config, seed, dtype=torch.float32):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = PlanSceneCVAE(config)
    return model.to(dtype)


def train(model, plans, scenes, gts, config=None, callback=None):
    """Minibatch Adam on the training objective.

    Returns the per-epoch log: dicts with epoch, total, recon, kl, mse
    (means over the epoch's batches).  ``callback(epoch, model, row)`` runs
    after every epoch, e.g. to write checkpoints.
    """
    cfg = config or TrainConfig()
    n = len(plans)
    if n == 0:
        raise DomainError("cannot train on an empty dataset")
    dtype = next(model.parameters()).dtype
    plans = torch.as_tensor(np.asarray(plans), dtype=dtype)
    scenes = torch.as_tensor(np.asarray(scenes), dtype=dtype)
    gts = torch.as_tensor(np.asarray(gts), dtype=dtype)
    params = list(model.parameters())
    state = ad.AdamState(params)
    rng = np.random.default_rng(cfg.seed)
    log = []
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(cfg.threads)
    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(n)
            sums = np.zeros(4)
            batches = 0
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = torch.as_tensor(perm[start:start + cfg.batch_size])
                terms = loss(model, plans[idx], scenes[idx], gts[idx])
                if not torch.isfinite(terms[0]):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {b} "
                        f"(samples {idx.tolist()})")
                grads = ad.grad(terms[0], params)
                ad.adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
                sums += [t.item() for t in terms]
                batches += 1
            row = dict(zip(("total", "recon", "kl", "mse"), sums / batches))
            row = {"epoch": epoch, **row}
            log.append(row)
            if callback is not None:
                callback(epoch, model, row)
    finally:
        torch.set_num_threads(prev_threads)
    return log


def save_model(model, path=None, extra=None):
    cfg = {"model": model.config.to_dict(), **(extra or {})}
    data = ad.encode_checkpoint(dict(model.state_dict()), cfg)
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data


def load_model(source):
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    tensors, cfg = ad.decode_checkpoint(data)
    model = PlanSceneCVAE(ModelConfig.from_dict(cfg["model"]))
    dtype = next(iter(tensors.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(tensors)
    return model, cfg
