"""Token-merging baseline: merge similar tokens, attend over the survivors, copy results back.

Merging follows bipartite soft matching. Tokens alternate into sets A (even
indices) and B (odd indices). Each A token is matched to its most cosine-similar
B token, and the ``floor(ratio * N)`` strongest matches are merged into their
B partner. Merged rows are unweighted means, and unmerging duplicates each
survivor back to every position assigned to it.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .attention import ACC_DTYPE, check_qkv, dense_attention
from .errors import ValidationError
from .focus import floor_fraction
from .tensor_io import check_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MergePlan:
    keep: np.ndarray = field(repr=False)
    assignment: np.ndarray = field(repr=False)
    merged_count: int

    def __post_init__(self):
        if len(self.keep) != len(self.assignment) - self.merged_count:
            raise ValidationError("|keep| must equal N - merged_count")
        if not np.array_equal(self.assignment[self.keep], self.keep):
            raise ValidationError("every surviving token must map to itself")
        if not np.isin(self.assignment, self.keep).all():
            raise ValidationError("assignment targets must all survive")

    @property
    def n_tokens(self):
        return len(self.assignment)

    @property
    def position(self):
        """Row of the merged tensor holding each original token."""
        return np.searchsorted(self.keep, self.assignment)

    @classmethod
    def identity(cls, n_tokens):
        idx = np.arange(n_tokens, dtype=np.int64)
        return cls(keep=idx, assignment=idx.copy(), merged_count=0)


def bipartite_soft_matching(k, merge_ratio):
    check_tensor(k, "k", rank=2)
    n = k.shape[0]
    if n < 2:
        raise ValidationError(f"token merging needs at least 2 tokens, got {n}")
    if not 0 <= merge_ratio < 0.5:
        raise ValidationError(f"merge_ratio must lie in [0, 0.5), got {merge_ratio!r}")
    r = floor_fraction(merge_ratio, n)
    if r == 0:
        return MergePlan.identity(n)

    metric = k.to(ACC_DTYPE)
    metric = metric / metric.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    a, b = metric[::2], metric[1::2]
    scores = a @ b.T
    # first maximum wins, so ties go to the lower B index
    node_max, node_idx = scores.max(dim=-1)
    edge_idx = torch.sort(node_max, descending=True, stable=True).indices
    src = edge_idx[:r].numpy() * 2
    dst = node_idx[edge_idx[:r]].numpy() * 2 + 1

    assignment = np.arange(n, dtype=np.int64)
    assignment[src] = dst
    keep = np.setdiff1d(np.arange(n, dtype=np.int64), src)
    logger.debug("merging %d of %d tokens", r, n)
    return MergePlan(keep=keep, assignment=assignment, merged_count=r)


def _check_plan(t, plan):
    check_tensor(t, "t", rank=2)
    if t.shape[0] != plan.n_tokens:
        raise ValidationError(f"plan is for {plan.n_tokens} tokens, tensor has {t.shape[0]}")


def apply_merge(t, plan):
    _check_plan(t, plan)
    position = torch.from_numpy(plan.position)
    sums = torch.zeros(len(plan.keep), t.shape[1], dtype=ACC_DTYPE)
    sums.index_add_(0, position, t.to(ACC_DTYPE))
    counts = torch.bincount(position, minlength=len(plan.keep)).to(ACC_DTYPE)
    return (sums / counts[:, None]).to(torch.float32)


def unmerge(t, plan):
    check_tensor(t, "t", rank=2)
    if t.shape[0] != len(plan.keep):
        raise ValidationError(f"plan keeps {len(plan.keep)} tokens, tensor has {t.shape[0]}")
    return t[torch.from_numpy(plan.position)]


def tome_attention(q, k, v, merge_ratio, chunk=None):
    check_qkv(q, k, v)
    if q.shape[0] != k.shape[0]:
        raise ValidationError("token merging needs as many queries as keys")
    plan = bipartite_soft_matching(k, merge_ratio)
    if plan.merged_count == 0:
        return dense_attention(q, k, v, chunk)
    q_m, k_m, v_m = (apply_merge(t, plan) for t in (q, k, v))
    return unmerge(dense_attention(q_m, k_m, v_m, chunk), plan)
