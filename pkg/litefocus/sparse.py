"""Attention restricted to per-query focus sets.

Two evaluations of ``y_i = softmax(q_i K[F_i]^T / sqrt(d_k)) V[F_i]``:

* ``litefocus_attention_reference`` loops over queries and builds every ``F_i``.
  It is slow and serves as the oracle.
* ``litefocus_attention_grouped`` uses the fact that all queries of one frequency
  class share ``S_b`` and every query shares ``C``. It runs one dense block per
  class against the keys ``[S_b ; C \\ S_b]``.
"""
import functools
import logging

import numpy as np
import torch
from einops import rearrange

from .attention import ACC_DTYPE, AttentionKind, _row_softmax, attend, check_qkv, dense_attention
from .errors import DegenerateFocusError, ValidationError
from .focus import build_focus_set, compensation_count, cross_frequency_sample, floor_fraction
from .tensor_io import check_tensor
from .tome import tome_attention

logger = logging.getLogger(__name__)


def gather_rows(t, idx):
    check_tensor(t, "t", rank=2)
    idx = torch.as_tensor(np.asarray(idx, dtype=np.int64))
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= t.shape[0]):
        raise ValidationError(f"row index outside [0, {t.shape[0]})")
    return torch.index_select(t, 0, idx)


def focus_components(grid, mode):
    """``(include_same_freq, compensation set)`` for a focus mode."""
    if not mode.is_focus:
        raise ValidationError(f"{mode} is not a focus-set mode")
    include_same_freq = mode.kind is not AttentionKind.COMP_ONLY
    r = mode.r if mode.uses_compensation else 0.0
    comp = cross_frequency_sample(grid.n_tokens, r, mode.seed)
    if not include_same_freq and len(comp) == 0:
        raise DegenerateFocusError(
            f"{mode} on {grid.n_tokens} tokens samples floor(r*N)=0 keys; every focus set would be empty")
    return include_same_freq, comp


def _check_grid(q, grid):
    if q.shape[0] != grid.n_tokens:
        raise ValidationError(f"{q.shape[0]} queries for a {grid.n_t}x{grid.n_f} grid")


def litefocus_attention_reference(q, k, v, grid, mode):
    check_qkv(q, k, v)
    _check_grid(q, grid)
    _check_grid(k, grid)
    include_same_freq, comp = focus_components(grid, mode)
    q64, k64, v64 = q.to(ACC_DTYPE), k.to(ACC_DTYPE), v.to(ACC_DTYPE)
    scale = q.shape[1] ** -0.5
    out = torch.empty(q.shape[0], v.shape[1], dtype=ACC_DTYPE)
    for i in range(grid.n_tokens):
        focus = torch.from_numpy(build_focus_set(grid, i, comp, include_same_freq).indices.copy())
        k_f, v_f = k64[focus], v64[focus]
        weights = _row_softmax((q64[i:i + 1] * scale) @ k_f.T)
        out[i] = (weights @ v_f)[0]
    return out.to(torch.float32)


def class_keys(grid, comp, b):
    """Keys of frequency class ``b``: ``S_b`` followed by the compensation keys outside it."""
    same = np.arange(b, grid.n_tokens, grid.n_f, dtype=np.int64)
    extra = comp.indices[comp.indices % grid.n_f != b]
    return np.concatenate([same, extra])


def litefocus_attention_grouped(q, k, v, grid, mode, chunk=None):
    check_qkv(q, k, v)
    _check_grid(q, grid)
    _check_grid(k, grid)
    include_same_freq, comp = focus_components(grid, mode)
    q64, k64, v64 = q.to(ACC_DTYPE), k.to(ACC_DTYPE), v.to(ACC_DTYPE)
    if not include_same_freq:
        keys = torch.from_numpy(comp.indices.copy())
        return attend(q64, k64[keys], v64[keys], chunk).to(torch.float32)

    q_cls = rearrange(q64, "(t f) d -> f t d", f=grid.n_f)
    out_cls = torch.empty(grid.n_f, grid.n_t, v.shape[1], dtype=ACC_DTYPE)
    for b in range(grid.n_f):
        keys = torch.from_numpy(class_keys(grid, comp, b))
        out_cls[b] = attend(q_cls[b], k64[keys], v64[keys], chunk)
    return rearrange(out_cls, "f t d -> (t f) d").to(torch.float32)


def attended_pair_count(grid, mode):
    """Number of (query, key) score evaluations one attention call of ``mode`` performs."""
    n = grid.n_tokens
    kind = mode.kind
    if kind is AttentionKind.DENSE:
        return n * n
    if kind is AttentionKind.SAME_FREQ:
        return n * grid.n_t
    if kind is AttentionKind.COMP_ONLY:
        return n * compensation_count(n, mode.r)
    if kind is AttentionKind.TOKEN_MERGE:
        kept = n - floor_fraction(mode.merge_ratio, n)
        return kept * kept
    comp = cross_frequency_sample(n, mode.r, mode.seed)
    in_class = np.bincount(comp.indices % grid.n_f, minlength=grid.n_f)
    return int(sum(grid.n_t * (grid.n_t + len(comp) - int(c)) for c in in_class))


def build_kernel(mode, grid, reference=False, chunk=None):
    """A 2-D ``(q, k, v) -> out`` kernel for ``mode`` on ``grid``, ready for ``attend_heads``."""
    kind = mode.kind
    if kind is AttentionKind.DENSE:
        return functools.partial(dense_attention, chunk=chunk)
    if kind is AttentionKind.TOKEN_MERGE:
        return functools.partial(tome_attention, merge_ratio=mode.merge_ratio, chunk=chunk)
    if reference:
        return functools.partial(litefocus_attention_reference, grid=grid, mode=mode)
    return functools.partial(litefocus_attention_grouped, grid=grid, mode=mode, chunk=chunk)
