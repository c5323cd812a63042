import math

import numpy as np
import pytest
import torch

from gridplan import autodiff as ad
from gridplan.errors import CodecError, DomainError, InfiniteKLError, UsageError
from helpers import F64, check_op, op_cases

LN2PI = math.log(2 * math.pi)


def t(x):
    return torch.tensor(x, dtype=F64)


def test_attention_zero_value_is_identity():
    m = torch.randn(7, 3, dtype=F64)
    out = ad.attention(m, torch.randn(3, 3, dtype=F64), torch.randn(3, 3, dtype=F64),
                       torch.zeros(3, 3, dtype=F64))
    assert torch.equal(out, m)


def test_attention_single_row():
    eye = torch.eye(3, dtype=F64)
    out = ad.attention(t([[1.0, 0.0, 0.0]]), eye, eye, eye)
    assert out.tolist() == [[2.0, 0.0, 0.0]]


def test_attention_permutation_equivariant():
    gen = torch.Generator().manual_seed(0)
    m = torch.randn(6, 3, generator=gen, dtype=F64)
    ws = [torch.randn(3, 3, generator=gen, dtype=F64) for _ in range(3)]
    perm = torch.randperm(6, generator=gen)
    torch.testing.assert_close(ad.attention(m[perm], *ws), ad.attention(m, *ws)[perm])


def _gru_zero(n_h=3, n_x=2):
    z = torch.zeros(n_h, n_x + n_h, dtype=F64)
    b = torch.zeros(n_h, dtype=F64)
    return [z, b, z.clone(), b.clone(), z.clone(), b.clone()]


def test_gru_examples():
    v = t([1.0, -2.0, 0.5])
    x = t([0.3, 0.7])
    ps = _gru_zero()
    torch.testing.assert_close(ad.gru_step(v, x, *ps), 0.5 * v)
    assert not ad.gru_step(torch.zeros(3, dtype=F64), x, *ps).any()
    # saturated update gate: h' is the candidate tanh(W_h [x; r h] + b_h)
    ps[1] = torch.full((3,), 50.0, dtype=F64)
    ps[5] = t([0.2, -0.4, 0.9])
    torch.testing.assert_close(ad.gru_step(v, x, *ps), torch.tanh(ps[5]), atol=1e-12, rtol=0)


def test_bilstm_zero_params():
    w = torch.zeros(8, 4, dtype=F64)
    b = torch.zeros(8, dtype=F64)
    assert not ad.bilstm_encode(torch.randn(5, 2, dtype=F64), w, b, w, b).any()


def test_bilstm_reverse_swaps_halves_with_tied_weights():
    gen = torch.Generator().manual_seed(3)
    w = torch.randn(8, 4, generator=gen, dtype=F64)
    b = torch.randn(8, generator=gen, dtype=F64)
    seq = torch.randn(5, 2, generator=gen, dtype=F64)
    a = ad.bilstm_encode(seq, w, b, w, b)
    r = ad.bilstm_encode(seq.flip(0), w, b, w, b)
    torch.testing.assert_close(r, torch.cat([a[2:], a[:2]]))


def test_categorical_kl_examples():
    q = t([0.2, 0.3, 0.5])
    assert float(ad.categorical_kl(q, q)) == 0.0
    assert float(ad.categorical_kl(t([1.0, 0.0]), t([0.5, 0.5]))) == pytest.approx(0.693147, abs=1e-6)
    with pytest.raises(InfiniteKLError):
        ad.categorical_kl(t([0.5, 0.5]), t([1.0, 0.0]))


def test_bvn_examples():
    eye = torch.eye(2, dtype=F64)
    zero = torch.zeros(2, dtype=F64)
    assert float(ad.bvn_nll(zero, zero, eye)) == pytest.approx(1.837877, abs=1e-6)
    assert float(ad.bvn_nll(t([1.0, 0.0]), zero, eye)) == pytest.approx(2.337877, abs=1e-6)
    diff = ad.bvn_nll(zero, zero, 4 * eye) - ad.bvn_nll(zero, zero, eye)
    assert float(diff) == pytest.approx(1.386294, abs=1e-6)
    with pytest.raises(DomainError):
        ad.bvn_nll(zero, zero, t([[1.0, 2.0], [2.0, 1.0]]))


def test_bvn_parameterizations_agree():
    gen = torch.Generator().manual_seed(4)
    y, mu = torch.randn(5, 2, generator=gen, dtype=F64), torch.randn(5, 2, generator=gen, dtype=F64)
    ls = 0.3 * torch.randn(5, 2, generator=gen, dtype=F64)
    rho = 0.99 * torch.tanh(torch.randn(5, generator=gen, dtype=F64))
    torch.testing.assert_close(ad.bvn_nll_params(y, mu, ls, rho),
                               ad.bvn_nll(y, mu, ad.covariance(ls, rho)))


def test_grad_examples():
    p = torch.tensor(3.0, dtype=F64, requires_grad=True)
    assert float(ad.grad(lambda: (p ** 2).sum(), [p])[0]) == 6.0
    q = torch.ones(3, dtype=F64, requires_grad=True)
    assert not ad.grad(torch.tensor(2.0), [q])[0].any()
    with pytest.raises(UsageError):
        ad.grad(None, [q])


def test_backward_does_not_touch_forward_values():
    gen = torch.Generator().manual_seed(5)
    m = torch.randn(4, 3, generator=gen, dtype=F64, requires_grad=True)
    ws = [torch.randn(3, 3, generator=gen, dtype=F64, requires_grad=True) for _ in range(3)]
    out = ad.attention(m, *ws)
    before = out.detach().clone()
    ad.grad(out.sum(), [m, *ws])
    assert torch.equal(out.detach(), before)


def test_adam_first_step():
    p = torch.tensor([0.0], dtype=F64)
    ad.adam_step([p], [torch.tensor([2.0], dtype=F64)], ad.AdamState([p]))
    assert float(p) == pytest.approx(-1e-3 * 2 / (2 + 1e-8), rel=1e-12)


def test_adam_zero_grad_and_elementwise():
    p = torch.tensor([1.0, 2.0], dtype=F64)
    ad.adam_step([p], [torch.zeros(2, dtype=F64)], ad.AdamState([p]))
    assert p.tolist() == [1.0, 2.0]
    a, b = torch.tensor([0.5], dtype=F64), torch.tensor([0.5], dtype=F64)
    st = ad.AdamState([a, b])
    for g in (1.0, -0.3, 2.0):
        gg = torch.tensor([g], dtype=F64)
        ad.adam_step([a, b], [gg, gg.clone()], st)
    assert torch.equal(a, b)


def test_conv_identity_kernel():
    x = torch.randn(1, 2, 5, 5, dtype=F64)
    k = torch.zeros(2, 2, 3, 3, dtype=F64)
    k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
    assert torch.equal(ad.conv2d(x, k, torch.zeros(2, dtype=F64)), x)


def test_softmax_rows():
    x = torch.randn(20, 7, dtype=F64) * 10
    s = ad.softmax(x)
    assert (s > 0).all()
    np.testing.assert_allclose(s.sum(-1).numpy(), 1.0, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_ops_match_finite_differences(seed):
    for name, fn, inputs in op_cases(seed):
        assert check_op(fn, inputs) < 1e-4, name


def test_checkpoint_round_trip():
    tensors = {"a": torch.randn(2, 3, dtype=torch.float32), "b.c": torch.randn(4, dtype=F64),
               "s": torch.tensor(1.5, dtype=F64)}
    data = ad.encode_checkpoint(tensors, {"k": 1})
    assert data[:4] == b"TNV2"
    back, cfg = ad.decode_checkpoint(data)
    assert cfg == {"k": 1}
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and torch.equal(back[k], v)
    with pytest.raises(CodecError):
        ad.decode_checkpoint(data[:-1])
    corrupt = bytearray(data)
    corrupt[20] ^= 0xFF
    with pytest.raises(CodecError):
        ad.decode_checkpoint(bytes(corrupt))


def test_checkpoint_unknown_dtype_code():
    import struct
    import zlib
    data = ad.encode_checkpoint({"a": torch.zeros(2, dtype=F64)}, {})
    body = bytearray(data[:-4])
    n = struct.unpack_from("<I", body, 6)[0]
    body[6 + 4 + n + 4 + 2 + 1] = 250     # dtype code of the first tensor
    blob = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with pytest.raises(CodecError, match="dtype"):
        ad.decode_checkpoint(blob)
