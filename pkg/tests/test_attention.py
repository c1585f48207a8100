import math

import numpy as np
import pytest
import torch

from litefocus.attention import (DENSE, AttentionKind, AttentionMode, ProjectionWeights, attend_heads,
                                 dense_attention, max_relative_deviation, multi_head_attention, project_qkv,
                                 stable_row_softmax)
from litefocus.errors import ValidationError
from litefocus.tensor_io import random_tensor


def test_softmax_symmetric_row():
    out = stable_row_softmax(torch.tensor([[0.0, 0.0]]))
    assert torch.allclose(out, torch.tensor([[0.5, 0.5]]))


def test_softmax_large_logits():
    out = stable_row_softmax(torch.tensor([[1000.0, 1000.0]]))
    assert bool(torch.isfinite(out).all())
    assert torch.allclose(out, torch.tensor([[0.5, 0.5]]))


def test_softmax_shift_invariant():
    a = stable_row_softmax(torch.tensor([[0.5, 1.75]]))
    b = stable_row_softmax(torch.tensor([[4.5, 5.75]]))
    assert torch.allclose(a, b, atol=1e-7)


def test_softmax_rejects_nan():
    with pytest.raises(ValidationError):
        stable_row_softmax(torch.tensor([[0.0, float("nan")]]))


def test_dense_single_key_returns_v():
    q, k, v = random_tensor([1, 4], 1), random_tensor([1, 4], 2), random_tensor([1, 3], 3)
    assert torch.allclose(dense_attention(q, k, v), v)


def test_dense_zero_queries_average_values():
    k, v = random_tensor([6, 4], 2), random_tensor([6, 3], 3)
    out = dense_attention(torch.zeros(6, 4), k, v)
    assert torch.allclose(out, v.mean(dim=0, keepdim=True).expand(6, 3), atol=1e-6)


def test_dense_hand_evaluation():
    q = torch.tensor([[1.0, 0.0]])
    k = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
    v = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    p = 1 / (1 + math.exp(-math.sqrt(2)))
    out = dense_attention(q, k, v)
    assert abs(p - 0.8044) < 1e-4
    assert torch.allclose(out, torch.tensor([[p, 1 - p]]), atol=1e-6)


def test_dense_chunking_does_not_change_output():
    q, k, v = (random_tensor([37, 8], s) for s in range(3))
    assert torch.equal(dense_attention(q, k, v, chunk=5), dense_attention(q, k, v, chunk=1024))


def test_dense_shape_mismatch():
    with pytest.raises(ValidationError):
        dense_attention(torch.ones(2, 3), torch.ones(2, 4), torch.ones(2, 4))
    with pytest.raises(ValidationError):
        dense_attention(torch.ones(2, 3), torch.ones(2, 3), torch.ones(3, 3))


def test_project_identity_and_zero():
    eye = torch.eye(3)
    w = ProjectionWeights(eye, eye, eye)
    x = torch.tensor([[1.0, 0.0, 0.0]])
    q, k, v = project_qkv(x, w)
    assert torch.equal(q, x)
    zeros = project_qkv(torch.zeros(4, 3), w)
    assert all(bool((t == 0).all()) for t in zeros)


def test_project_matches_naive_matmul():
    x = random_tensor([5, 4], 10)
    w = ProjectionWeights(random_tensor([4, 6], 11), random_tensor([4, 6], 12), random_tensor([4, 6], 13))
    outs = project_qkv(x, w)
    for out, m in zip(outs, (w.w_q, w.w_k, w.w_v)):
        naive = np.zeros((5, 6))
        for i in range(5):
            for j in range(6):
                for l in range(4):
                    naive[i, j] += float(x[i, l]) * float(m[l, j])
        rel = np.abs(out.numpy() - naive).max() / np.abs(naive).max()
        assert rel < 1e-6


def test_project_shape_mismatch():
    w = ProjectionWeights(torch.eye(3), torch.eye(3), torch.eye(3))
    with pytest.raises(ValidationError):
        project_qkv(torch.ones(2, 4), w)


def test_heads_must_divide_width():
    with pytest.raises(ValidationError):
        ProjectionWeights(torch.ones(4, 6), torch.ones(4, 6), torch.ones(4, 6), heads=4)


def test_single_head_equals_dense():
    x = random_tensor([12, 8], 5)
    w = ProjectionWeights(*(random_tensor([8, 8], s) for s in (6, 7, 8)))
    q, k, v = project_qkv(x, w)
    assert torch.equal(multi_head_attention(x, w), dense_attention(q, k, v))


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_multi_head_matches_per_head_oracle(heads):
    x = random_tensor([10, 8], 20 + heads)
    w = ProjectionWeights(*(random_tensor([8, 8], s) for s in (30, 31, 32)), heads=heads)
    out = multi_head_attention(x, w)
    q, k, v = (t.double() for t in project_qkv(x, w))
    d = 8 // heads
    cols = []
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        weights = torch.softmax(q[:, sl] @ k[:, sl].T / math.sqrt(d), dim=-1)
        cols.append(weights @ v[:, sl])
    expected = torch.cat(cols, dim=1)
    assert max_relative_deviation(out, expected) < 1e-6


def test_block_diagonal_heads_are_independent():
    x = random_tensor([9, 4], 40)
    blocks = [random_tensor([2, 2], s) for s in range(41, 47)]
    w = ProjectionWeights(torch.block_diag(blocks[0], blocks[1]), torch.block_diag(blocks[2], blocks[3]),
                          torch.block_diag(blocks[4], blocks[5]), heads=2)
    out = multi_head_attention(x, w)
    left = multi_head_attention(x[:, :2].contiguous(), ProjectionWeights(blocks[0], blocks[2], blocks[4]))
    right = multi_head_attention(x[:, 2:].contiguous(), ProjectionWeights(blocks[1], blocks[3], blocks[5]))
    assert max_relative_deviation(out, torch.cat([left, right], dim=1)) < 1e-6


def test_attend_heads_uses_kernel():
    calls = []

    def kernel(q, k, v):
        calls.append(q.shape)
        return v

    v = random_tensor([5, 6], 1)
    out = attend_heads(v, v, v, 3, kernel)
    assert calls == [(5, 2)] * 3
    assert torch.equal(out, v)


@pytest.mark.parametrize("text, kind, r, ratio", [
    ("dense", AttentionKind.DENSE, None, None),
    ("samefreq", AttentionKind.SAME_FREQ, None, None),
    ("litefocus:r=0.1", AttentionKind.LITEFOCUS, 0.1, None),
    ("componly:r=0.5", AttentionKind.COMP_ONLY, 0.5, None),
    ("tome:ratio=0.25", AttentionKind.TOKEN_MERGE, None, 0.25),
])
def test_mode_parse(text, kind, r, ratio):
    mode = AttentionMode.parse(text, seed=9)
    assert mode.kind is kind
    assert mode.r == r
    assert mode.merge_ratio == ratio
    assert mode.seed == 9
    assert str(mode) == text


@pytest.mark.parametrize("text", ["sparse", "litefocus", "litefocus:r=1.5", "tome:ratio=0.5",
                                  "dense:r=0.1", "componly:r", "componly:r=abc"])
def test_mode_parse_rejects(text):
    with pytest.raises(ValidationError):
        AttentionMode.parse(text)


def test_mode_with_seed():
    mode = AttentionMode.parse("litefocus:r=0.1").with_seed(123)
    assert mode.seed == 123
    assert mode.r == 0.1
    assert not DENSE.uses_compensation
    assert AttentionMode(AttentionKind.SAME_FREQ).is_focus


def test_max_relative_deviation():
    ref = torch.tensor([[2.0, -4.0]])
    assert max_relative_deviation(ref, ref) == 0
    assert max_relative_deviation(torch.tensor([[2.0, -3.0]]), ref) == pytest.approx(0.25)


def test_dense_attention_permutation_equivariance():
    q, k, v = random_tensor([20, 6], 70), random_tensor([20, 6], 71), random_tensor([20, 5], 72)
    out = dense_attention(q, k, v)
    perm = torch.from_numpy(np.random.default_rng(3).permutation(20))
    assert max_relative_deviation(dense_attention(q[perm], k, v), out[perm]) < 1e-6
    assert max_relative_deviation(dense_attention(q, k[perm], v[perm]), out) < 1e-6
