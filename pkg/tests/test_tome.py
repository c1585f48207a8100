import numpy as np
import pytest
import torch

from litefocus.attention import dense_attention, max_relative_deviation
from litefocus.errors import ValidationError
from litefocus.tensor_io import random_tensor
from litefocus.tome import MergePlan, apply_merge, bipartite_soft_matching, tome_attention, unmerge


def test_zero_ratio_is_identity_plan():
    plan = bipartite_soft_matching(random_tensor([10, 4], 0), 0.0)
    assert plan.merged_count == 0
    assert plan.keep.tolist() == list(range(10))
    assert plan.assignment.tolist() == list(range(10))


def test_duplicate_rows_merge_first():
    k = torch.tensor([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    plan = bipartite_soft_matching(k, 0.25)
    assert plan.merged_count == 1
    assert plan.assignment.tolist() == [1, 1, 2, 3]
    assert plan.keep.tolist() == [1, 2, 3]


def test_merge_count_is_floor_of_ratio():
    plan = bipartite_soft_matching(random_tensor([64, 8], 1), 0.25)
    assert plan.merged_count == 16
    assert len(plan.keep) == 48
    # sources come from the even set, destinations from the odd set
    merged = np.setdiff1d(np.arange(64), plan.keep)
    assert np.all(merged % 2 == 0)
    assert np.all(plan.assignment[merged] % 2 == 1)


@pytest.mark.parametrize("ratio", [0.5, 0.7, -0.1])
def test_bad_ratio(ratio):
    with pytest.raises(ValidationError):
        bipartite_soft_matching(random_tensor([8, 2], 0), ratio)


def test_plan_validation():
    with pytest.raises(ValidationError):
        MergePlan(keep=np.array([1]), assignment=np.array([0, 1]), merged_count=1)
    with pytest.raises(ValidationError):
        MergePlan(keep=np.array([0, 1]), assignment=np.array([0, 1]), merged_count=1)


def test_apply_merge_identity():
    t = random_tensor([6, 3], 2)
    assert torch.equal(apply_merge(t, MergePlan.identity(6)), t)


def test_apply_merge_mean():
    plan = MergePlan(keep=np.array([1]), assignment=np.array([1, 1]), merged_count=1)
    assert apply_merge(torch.tensor([[2.0], [4.0]]), plan).tolist() == [[3.0]]


def test_apply_merge_matches_group_mean():
    k = random_tensor([40, 6], 3)
    t = random_tensor([40, 5], 4)
    plan = bipartite_soft_matching(k, 0.4)
    merged = apply_merge(t, plan)
    for row, j in enumerate(plan.keep):
        expected = t[torch.from_numpy(plan.assignment == j)].double().mean(dim=0)
        assert torch.allclose(merged[row].double(), expected, atol=1e-6)


def test_apply_merge_shape_mismatch():
    with pytest.raises(ValidationError):
        apply_merge(random_tensor([5, 2], 0), MergePlan.identity(6))


def test_unmerge():
    t = random_tensor([4, 2], 5)
    assert torch.equal(unmerge(t, MergePlan.identity(4)), t)
    plan = MergePlan(keep=np.array([1, 2]), assignment=np.array([1, 1, 2]), merged_count=1)
    back = unmerge(torch.tensor([[7.0], [9.0]]), plan)
    assert back.tolist() == [[7.0], [7.0], [9.0]]


def test_merge_then_unmerge_constant_rows():
    t = torch.full((10, 3), 2.5)
    plan = bipartite_soft_matching(random_tensor([10, 3], 6), 0.3)
    assert torch.equal(unmerge(apply_merge(t, plan), plan), t)


def test_zero_ratio_is_bitwise_dense():
    q, k, v = (random_tensor([33, 8], s) for s in (7, 8, 9))
    assert torch.equal(tome_attention(q, k, v, 0.0), dense_attention(q, k, v))


def test_identical_tokens_are_lossless():
    row = random_tensor([1, 8], 10)
    q = k = v = row.expand(20, 8).contiguous()
    for ratio in (0.1, 0.25, 0.45):
        assert max_relative_deviation(tome_attention(q, k, v, ratio), dense_attention(q, k, v)) < 1e-5


def best_match_merges(k, count):
    """Merges chosen by scoring every (even, odd) pair and keeping the ``count`` strongest even tokens."""
    x = k.double().numpy()
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    best = []
    for a in range(0, len(x), 2):
        scores = [float(x[a] @ x[b]) for b in range(1, len(x), 2)]
        j = max(range(len(scores)), key=scores.__getitem__)
        best.append((scores[j], a, 2 * j + 1))
    strongest = sorted(best, key=lambda e: -e[0])[:count]
    return {a: b for _, a, b in strongest}


@pytest.mark.parametrize("n, ratio", [(6, 0.2), (9, 0.3), (16, 0.25), (33, 0.45)])
def test_matching_agrees_with_exhaustive_search(n, ratio):
    for seed in range(5):
        k = random_tensor([n, 8], 100 * n + seed)
        plan = bipartite_soft_matching(k, ratio)
        merges = best_match_merges(k, plan.merged_count)
        assert plan.merged_count == int(ratio * n)
        expected = np.arange(n)
        for a, b in merges.items():
            expected[a] = b
        assert plan.assignment.tolist() == expected.tolist()
