"""Differentiable building blocks for the trajectory model.

Reverse-mode differentiation is delegated to ``torch.autograd``; this module
fixes the exact forward definitions (gate conventions, attention form,
distributions), an Adam update, a central finite-difference oracle that never
touches autograd, and the ``TNV2`` checkpoint codec.
"""
import json
import math
import struct
import zlib

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CodecError, DomainError, InfiniteKLError, UsageError

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# layers

def dense(x, weight, bias=None):
    """``x @ weight.T + bias`` (weight is out x in)."""
    return F.linear(x, weight, bias)


def conv2d(x, weight, bias=None, stride=1, padding=1):
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def max_pool2d(x, size=2):
    return F.max_pool2d(x, size)


def relu(x):
    return torch.relu(x)


def sigmoid(x):
    return torch.sigmoid(x)


def tanh(x):
    return torch.tanh(x)


def softmax(x, dim=-1):
    return torch.softmax(x, dim=dim)


def attention(m, w_q, w_k, w_v):
    """Single-head residual self-attention ``m + softmax(Q K^T / sqrt(C)) V``.

    ``m`` is (..., N, C); projections are right-multiplied (``Q = m @ w_q``).
    Every row attends to every row, padding included.
    """
    q, k, v = m @ w_q, m @ w_k, m @ w_v
    scores = q @ k.transpose(-1, -2) / math.sqrt(m.shape[-1])
    return m + torch.softmax(scores, dim=-1) @ v


def gru_step(h, x, w_z, b_z, w_r, b_r, w_h, b_h):
    """One GRU update.

    Convention (weights act on the concatenation ``[x; h]``)::

        z  = sigmoid(W_z [x; h] + b_z)
        r  = sigmoid(W_r [x; h] + b_r)
        h~ = tanh(W_h [x; r * h] + b_h)
        h' = (1 - z) * h + z * h~
    """
    xh = torch.cat([x, h], dim=-1)
    z = torch.sigmoid(F.linear(xh, w_z, b_z))
    r = torch.sigmoid(F.linear(xh, w_r, b_r))
    cand = torch.tanh(F.linear(torch.cat([x, r * h], dim=-1), w_h, b_h))
    return (1 - z) * h + z * cand


def lstm_step(h, c, x, weight, bias):
    """Standard LSTM cell; ``weight`` stacks the input/forget/cell/output gates
    (in that order) acting on ``[x; h]``."""
    gates = F.linear(torch.cat([x, h], dim=-1), weight, bias)
    i, f, g, o = gates.chunk(4, dim=-1)
    c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h = torch.sigmoid(o) * torch.tanh(c)
    return h, c


def bilstm_encode(seq, fwd_weight, fwd_bias, bwd_weight, bwd_bias):
    """Final forward and final backward hidden states of a BiLSTM, concatenated.

    ``seq`` is (..., T, D_in); the result is (..., 2 * hidden).
    """
    hidden = fwd_weight.shape[0] // 4
    batch = seq.shape[:-2]
    T = seq.shape[-2]

    def run(weight, bias, order):
        h = seq.new_zeros(*batch, hidden)
        c = seq.new_zeros(*batch, hidden)
        for t in order:
            h, c = lstm_step(h, c, seq[..., t, :], weight, bias)
        return h

    hf = run(fwd_weight, fwd_bias, range(T))
    hb = run(bwd_weight, bwd_bias, range(T - 1, -1, -1))
    return torch.cat([hf, hb], dim=-1)


# --------------------------------------------------------------------------
# distributions

def categorical_kl(q, p):
    """KL(q || p) over the last axis, with 0 * log 0 taken as 0."""
    q = torch.as_tensor(q)
    p = torch.as_tensor(p, dtype=q.dtype)
    if q.shape != p.shape:
        raise DomainError("categorical distributions differ in size")
    if torch.any((q > 0) & (p <= 0)):
        raise InfiniteKLError("q puts mass where p has none")
    safe_q = torch.where(q > 0, q, torch.ones_like(q))
    safe_p = torch.where(q > 0, p, torch.ones_like(p))
    return torch.sum(torch.where(q > 0, q * (torch.log(safe_q) - torch.log(safe_p)),
                                 torch.zeros_like(q)), dim=-1)


def categorical_kl_logits(log_q, log_p):
    """KL from log-probabilities (the numerically safe path used in training)."""
    return torch.sum(torch.exp(log_q) * (log_q - log_p), dim=-1)


def bvn_nll(y, mean, cov):
    """Negative log density of a bivariate Gaussian with full covariance ``cov``."""
    y, mean, cov = map(torch.as_tensor, (y, mean, cov))
    a, b, c = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
    if torch.any(torch.abs(cov[..., 0, 1] - cov[..., 1, 0]) > 1e-12):
        raise DomainError("covariance is not symmetric")
    det = a * c - b * b
    if torch.any(det <= 0) or torch.any(a <= 0):
        raise DomainError("covariance is not positive definite")
    d = y - mean
    dx, dy = d[..., 0], d[..., 1]
    quad = (c * dx * dx - 2 * b * dx * dy + a * dy * dy) / det
    return 0.5 * quad + 0.5 * torch.log(det) + LOG_2PI


def bvn_nll_params(y, mean, log_sigma, rho):
    """Same density parameterized by log standard deviations and correlation."""
    d = (y - mean) * torch.exp(-log_sigma)
    dx, dy = d[..., 0], d[..., 1]
    one_m = 1 - rho * rho
    quad = (dx * dx - 2 * rho * dx * dy + dy * dy) / one_m
    return 0.5 * quad + log_sigma.sum(-1) + 0.5 * torch.log(one_m) + LOG_2PI


def covariance(log_sigma, rho):
    """2 x 2 covariance matrices from (log sigma_x, log sigma_y) and rho."""
    s = torch.exp(log_sigma)
    sx, sy = s[..., 0], s[..., 1]
    off = rho * sx * sy
    return torch.stack([torch.stack([sx * sx, off], -1), torch.stack([off, sy * sy], -1)], -2)


# --------------------------------------------------------------------------
# gradients and optimization

def grad(loss, params):
    """Reverse-mode gradients of a scalar ``loss`` for every tensor in ``params``.

    ``loss`` may be a tensor or a zero-argument callable producing one.
    Parameters the loss does not depend on get zero gradients.
    """
    params = list(params)
    if callable(loss):
        loss = loss()
    if not isinstance(loss, torch.Tensor):
        raise UsageError("backward requested before a forward pass produced a loss")
    if loss.numel() != 1:
        raise UsageError("loss must be a scalar")
    if not loss.requires_grad:
        return [torch.zeros_like(p) for p in params]
    gs = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, gs)]


class AdamState:
    def __init__(self, params):
        self.step = 0
        self.m = [torch.zeros_like(p) for p in params]
        self.v = [torch.zeros_like(p) for p in params]


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params, state


def numerical_grad(fn, params, eps=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of ``params``."""
    out = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                hi = float(fn())
                flat[i] = old - eps
                lo = float(fn())
                flat[i] = old
                gflat[i] = (hi - lo) / (2 * eps)
            out.append(g)
    return out


def directional_fd(fn, params, directions, eps=1e-5):
    """Central difference of ``fn`` along ``directions`` (one per parameter)."""
    with torch.no_grad():
        for p, d in zip(params, directions):
            p.add_(eps * d)
        hi = float(fn())
        for p, d in zip(params, directions):
            p.sub_(2 * eps * d)
        lo = float(fn())
        for p, d in zip(params, directions):
            p.add_(eps * d)
    return (hi - lo) / (2 * eps)


def relative_error(a, b):
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    scale = max(a.norm().item(), b.norm().item())
    if scale < 1e-12:
        return 0.0
    return (a - b).norm().item() / scale


# --------------------------------------------------------------------------
# checkpoints

_DTYPES = {torch.float32: (0, "<f4"), torch.float64: (1, "<f8")}
_CODES = {0: (torch.float32, "<f4"), 1: (torch.float64, "<f8")}
CHECKPOINT_VERSION = 1


def encode_checkpoint(tensors, config=None):
    """``TNV2`` container: header, config JSON, named tensors, CRC32 trailer."""
    buf = bytearray(b"TNV2")
    buf += struct.pack("<H", CHECKPOINT_VERSION)
    cfg = json.dumps(config or {}, sort_keys=True).encode()
    buf += struct.pack("<I", len(cfg)) + cfg
    buf += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise DomainError(f"unsupported dtype {t.dtype}")
        code, np_dtype = _DTYPES[t.dtype]
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<BB", code, t.dim())
        buf += struct.pack(f"<{t.dim()}I", *t.shape)
        buf += t.numpy().astype(np_dtype, copy=False).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def decode_checkpoint(data):
    """Inverse of :func:`encode_checkpoint`; returns ``(tensors, config)``."""
    if len(data) < 10 or data[:4] != b"TNV2":
        raise CodecError("not a TNV2 checkpoint")
    body, trailer = data[:-4], data[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body) & 0xFFFFFFFF:
        raise CodecError("checkpoint checksum mismatch")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != CHECKPOINT_VERSION:
        raise CodecError(f"unsupported checkpoint version {version}")
    try:
        return _decode_body(body)
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CodecError(f"malformed checkpoint body: {exc}") from None


def _decode_body(body):
    off = 6
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    config = json.loads(body[off:off + n].decode())
    off += n
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + ln].decode()
        off += ln
        code, ndim = struct.unpack_from("<BB", body, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        if code not in _CODES:
            raise ValueError(f"unknown dtype code {code} for {name!r}")
        np_dtype = _CODES[code][1]
        size = int(np.prod(shape)) * np.dtype(np_dtype).itemsize
        arr = np.frombuffer(body[off:off + size], dtype=np_dtype).reshape(shape)
        off += size
        tensors[name] = torch.from_numpy(arr.copy())
    if off != len(body):
        raise ValueError(f"{len(body) - off} trailing bytes")
    return tensors, config
