"""Finite-difference gradient checks shared by the unit and acceptance suites."""
import math

import numpy as np
import torch

from gridplan import autodiff as ad
from gridplan import model as M

F64 = torch.float64


def _rand(gen, *shape, scale=1.0):
    return (torch.randn(*shape, generator=gen, dtype=F64) * scale).requires_grad_(True)


def op_cases(seed):
    """(name, fn, inputs) triples with random shapes; ``fn(*inputs)`` is a scalar."""
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    n, d_in, d_out = (int(v) for v in rng.integers(1, 5, size=3))
    stride = int(rng.integers(1, 3))
    w = torch.randn(d_out, generator=gen, dtype=F64)   # fixed readout keeps losses generic

    def readout(t):
        return (t * torch.randn(t.shape, generator=torch.Generator().manual_seed(seed + 1),
                                dtype=F64)).sum()

    cases = [
        ("dense", lambda x, W, b: (ad.dense(x, W, b) * w).sum(),
         [_rand(gen, n, d_in), _rand(gen, d_out, d_in), _rand(gen, d_out)]),
        ("conv2d", lambda x, k, b: readout(ad.conv2d(x, k, b, stride=stride, padding=1)),
         [_rand(gen, 1, 2, 6, 6), _rand(gen, 3, 2, 3, 3), _rand(gen, 3)]),
        ("max_pool2d", lambda x: readout(ad.max_pool2d(x)), [_rand(gen, 1, 2, 4, 4)]),
        ("relu", lambda x: readout(ad.relu(x)), [_rand(gen, n, d_in)]),
        ("sigmoid", lambda x: readout(ad.sigmoid(x)), [_rand(gen, n, d_in)]),
        ("tanh", lambda x: readout(ad.tanh(x)), [_rand(gen, n, d_in)]),
        ("softmax", lambda x: readout(ad.softmax(x)), [_rand(gen, n, d_in + 1)]),
        ("attention", lambda m, q, k, v: readout(ad.attention(m, q, k, v)),
         [_rand(gen, n + 2, 3), _rand(gen, 3, 3), _rand(gen, 3, 3), _rand(gen, 3, 3)]),
        ("gru_step", lambda h, x, wz, bz, wr, br, wh, bh: readout(ad.gru_step(h, x, wz, bz, wr, br, wh, bh)),
         [_rand(gen, n, 3), _rand(gen, n, 2)]
         + [_rand(gen, 3, 5) if i % 2 == 0 else _rand(gen, 3) for i in range(6)]),
        ("lstm_step", lambda h, c, x, W, b: readout(torch.cat(ad.lstm_step(h, c, x, W, b), -1)),
         [_rand(gen, n, 3), _rand(gen, n, 3), _rand(gen, n, 2), _rand(gen, 12, 5), _rand(gen, 12)]),
        ("bilstm_encode", lambda s, fw, fb, bw, bb: readout(ad.bilstm_encode(s, fw, fb, bw, bb)),
         [_rand(gen, 4, 2), _rand(gen, 8, 4), _rand(gen, 8), _rand(gen, 8, 4), _rand(gen, 8)]),
        ("categorical_kl", lambda a, b: ad.categorical_kl(torch.softmax(a, -1), torch.softmax(b, -1)).sum(),
         [_rand(gen, n, 4), _rand(gen, n, 4)]),
        ("categorical_kl_logits",
         lambda a, b: ad.categorical_kl_logits(torch.log_softmax(a, -1), torch.log_softmax(b, -1)).sum(),
         [_rand(gen, n, 4), _rand(gen, n, 4)]),
        ("bvn_nll", lambda y, mu, a: ad.bvn_nll(y, mu, a @ a.transpose(-1, -2) + 0.5 * torch.eye(2, dtype=F64)).sum(),
         [_rand(gen, n, 2), _rand(gen, n, 2), _rand(gen, n, 2, 2, scale=0.5)]),
        ("bvn_nll_params", lambda y, mu, ls, r: ad.bvn_nll_params(y, mu, ls, 0.99 * torch.tanh(r)).sum(),
         [_rand(gen, n, 2), _rand(gen, n, 2), _rand(gen, n, 2, scale=0.3), _rand(gen, n)]),
    ]
    return cases


def check_op(fn, inputs, eps=1e-5):
    """Relative error between autograd and the finite-difference oracle."""
    analytic = ad.grad(lambda: fn(*inputs), inputs)
    numeric = ad.numerical_grad(lambda: fn(*inputs), inputs, eps)
    a = torch.cat([g.reshape(-1) for g in analytic])
    b = torch.cat([g.reshape(-1) for g in numeric])
    return ad.relative_error(a, b)


TINY = M.ModelConfig(horizon=3, n_modes=2, past=4, future=4, grid_resolution=1.0, grid_horizon=8.0,
                     plan_dim=6, plan_hidden=6, scene_dim=6, traj_dim=4, gru_hidden=5,
                     conv_channels=(2, 2, 2, 2, 2))


def tiny_batch(seed, batch=2, config=TINY):
    gen = torch.Generator().manual_seed(10_000 + seed)
    P = config.plan_rows
    plans = torch.randn(batch, P, 3, generator=gen, dtype=F64) * 5
    plans[..., 2] = torch.randint(0, 5, (batch, P), generator=gen).to(F64)
    scenes = torch.rand(batch, config.side, config.side, 3, generator=gen, dtype=F64)
    y = torch.cumsum(torch.randn(batch, config.horizon, 2, generator=gen, dtype=F64) + 3.0, 1)
    return plans, scenes, y


def tiny_model(seed, config=TINY):
    model = M.build_model(config, seed, F64)
    gen = torch.Generator().manual_seed(20_000 + seed)
    with torch.no_grad():
        for p in model.parameters():   # move off the zero-bias init so every path is exercised
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=F64))
    return model


def check_model_directional(seed, eps=1e-5):
    """Per parameter tensor: autograd directional derivative vs central difference.

    Returns the worst relative error.  Directions are random unit vectors;
    the comparison is |a - b| / max(|a|, |b|, 1e-6) since a random direction
    can make the derivative itself tiny.
    """
    model = tiny_model(seed)
    plans, scenes, y = tiny_batch(seed)
    params = list(model.parameters())

    def f():
        return M.loss(model, plans, scenes, y)[0]

    grads = ad.grad(f, params)
    gen = torch.Generator().manual_seed(30_000 + seed)
    worst = 0.0
    for i, (p, g) in enumerate(zip(params, grads)):
        d = torch.randn(p.shape, generator=gen, dtype=F64)
        d /= d.norm()
        dirs = [torch.zeros_like(q) for q in params]
        dirs[i] = d
        a = float((g * d).sum())
        b = ad.directional_fd(f, params, dirs, eps)
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-6))
    return worst


def check_model_full(seed, eps=1e-5):
    """Per-coordinate check of every parameter (slow; use on a few seeds)."""
    model = tiny_model(seed)
    plans, scenes, y = tiny_batch(seed)
    params = list(model.parameters())

    def f():
        return M.loss(model, plans, scenes, y)[0]

    analytic = ad.grad(f, params)
    numeric = ad.numerical_grad(f, params, eps)
    return max(ad.relative_error(a, b) for a, b in zip(analytic, numeric))


def dac_oracle(pred, grid, k):
    """Per-waypoint scalar lookup of the nearest cell."""
    c, s = math.cos(grid.origin.heading), math.sin(grid.origin.heading)
    h, w = grid.classes.shape
    for x, y in list(pred)[:k]:
        dx, dy = x - grid.origin.x, y - grid.origin.y
        gx, gy = c * dx + s * dy, -s * dx + c * dy
        j = math.floor(gx * grid.resolution + 0.5)
        i = math.floor(gy * grid.resolution + 0.5)
        if 0 <= i < h and 0 <= j < w and int(grid.classes[i, j]) in (4, 5):
            return False
    return True


def random_dac_case(rng):
    """Random grid (arbitrary origin pose) and a trajectory that wanders over it."""
    from gridplan.geo import Pose2D
    from gridplan.scene import SemanticGrid
    h, w = (int(v) for v in rng.integers(3, 30, size=2))
    res = float(rng.choice([0.5, 1.0, 2.0]))
    origin = Pose2D(*rng.uniform(-5, 5, size=2), float(rng.uniform(-math.pi, math.pi)))
    # mostly drivable so both outcomes occur
    classes = rng.choice(6, size=(h, w), p=[0.1, 0.5, 0.1, 0.1, 0.1, 0.1]).astype(np.uint8)
    grid = SemanticGrid(classes, res, origin)
    pred = rng.uniform(-20, 20, size=(10, 2))
    return grid, pred, int(rng.integers(1, 11))
