"""Dense scaled dot-product attention and the attention-mode vocabulary.

Every kernel takes 2-D ``(tokens, d_k)`` float32 tensors, accumulates scores
and softmax in float64 and returns float32.
"""
import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import torch
from einops import rearrange

from .errors import ValidationError
from .tensor_io import check_tensor

logger = logging.getLogger(__name__)

ACC_DTYPE = torch.float64
DEFAULT_QUERY_CHUNK = 1024


class AttentionKind(str, enum.Enum):
    DENSE = "dense"
    LITEFOCUS = "litefocus"
    SAME_FREQ = "samefreq"
    COMP_ONLY = "componly"
    TOKEN_MERGE = "tome"


@dataclass(frozen=True)
class AttentionMode:
    """One point on the experiment axis: which attention runs, with its parameters.

    Args:
        kind: the attention variant.
        r: compensation fraction in [0, 1]; LiteFocus and CompOnly only.
        merge_ratio: fraction of tokens removed by merging, in [0, 0.5); TokenMerge only.
        seed: seed of the compensation set (overridden per call inside the pipeline).
    """
    kind: AttentionKind
    r: Optional[float] = None
    merge_ratio: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttentionKind(self.kind))
        if self.kind in (AttentionKind.LITEFOCUS, AttentionKind.COMP_ONLY):
            if self.r is None or not math.isfinite(self.r) or not 0 <= self.r <= 1:
                raise ValidationError(f"{self.kind.value} needs r in [0, 1], got {self.r!r}")
        if self.kind is AttentionKind.TOKEN_MERGE:
            if self.merge_ratio is None or not math.isfinite(self.merge_ratio) \
                    or not 0 <= self.merge_ratio < 0.5:
                raise ValidationError(f"tome needs ratio in [0, 0.5), got {self.merge_ratio!r}")

    @property
    def uses_compensation(self):
        return self.kind in (AttentionKind.LITEFOCUS, AttentionKind.COMP_ONLY)

    @property
    def is_focus(self):
        return self.kind in (AttentionKind.LITEFOCUS, AttentionKind.SAME_FREQ, AttentionKind.COMP_ONLY)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    @classmethod
    def parse(cls, text, seed=0):
        """Parse ``dense``, ``samefreq``, ``litefocus:r=<f>``, ``componly:r=<f>`` or ``tome:ratio=<f>``."""
        name, _, params = text.strip().partition(":")
        try:
            kind = AttentionKind(name.lower())
        except ValueError:
            raise ValidationError(f"unknown attention mode {text!r}") from None
        kwargs = {}
        for item in filter(None, params.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValidationError(f"malformed mode parameter {item!r} in {text!r}")
            try:
                value = float(value)
            except ValueError:
                raise ValidationError(f"mode parameter {key}={value!r} is not a number") from None
            if key == "r" and kind in (AttentionKind.LITEFOCUS, AttentionKind.COMP_ONLY):
                kwargs["r"] = value
            elif key == "ratio" and kind is AttentionKind.TOKEN_MERGE:
                kwargs["merge_ratio"] = value
            else:
                raise ValidationError(f"mode {kind.value} takes no parameter {key!r}")
        return cls(kind, seed=seed, **kwargs)

    def __str__(self):
        if self.uses_compensation:
            return f"{self.kind.value}:r={self.r:g}"
        if self.kind is AttentionKind.TOKEN_MERGE:
            return f"tome:ratio={self.merge_ratio:g}"
        return self.kind.value


DENSE = AttentionMode(AttentionKind.DENSE)


@dataclass(frozen=True)
class ProjectionWeights:
    """Query/key/value projections, each ``channels x d_model``."""
    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    heads: int = 1

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v"):
            check_tensor(getattr(self, name), name, rank=2)
        if not self.w_q.shape == self.w_k.shape == self.w_v.shape:
            raise ValidationError("w_q, w_k and w_v must share one shape")
        if int(self.heads) != self.heads or self.heads < 1:
            raise ValidationError(f"heads must be a positive integer, got {self.heads!r}")
        if self.d_model % self.heads:
            raise ValidationError(f"d_model={self.d_model} is not divisible by heads={self.heads}")

    @property
    def channels(self):
        return self.w_q.shape[0]

    @property
    def d_model(self):
        return self.w_q.shape[1]

    @property
    def d_k(self):
        return self.d_model // self.heads


def max_relative_deviation(out, ref):
    """``max|out - ref| / max|ref|``, the comparison metric used across the benchmarks."""
    out, ref = out.to(ACC_DTYPE), ref.to(ACC_DTYPE)
    if out.shape != ref.shape:
        raise ValidationError(f"cannot compare shapes {tuple(out.shape)} and {tuple(ref.shape)}")
    scale = ref.abs().max().clamp_min(torch.finfo(torch.float32).tiny)
    return float((out - ref).abs().max() / scale)


def project_qkv(x, w):
    check_tensor(x, "x", rank=2)
    if x.shape[1] != w.channels:
        raise ValidationError(f"x has {x.shape[1]} columns, projections expect {w.channels}")
    x64 = x.to(ACC_DTYPE)
    return tuple((x64 @ m.to(ACC_DTYPE)).to(torch.float32) for m in (w.w_q, w.w_k, w.w_v))


def _row_softmax(scores):
    scores = scores - scores.amax(dim=-1, keepdim=True)
    weights = scores.exp()
    return weights / weights.sum(dim=-1, keepdim=True)


def stable_row_softmax(m):
    if not isinstance(m, torch.Tensor) or m.dim() != 2:
        raise ValidationError("softmax input must be a 2-D tensor")
    if not bool(torch.isfinite(m).all()):
        raise ValidationError("softmax input contains NaN or Inf")
    return _row_softmax(m.to(ACC_DTYPE)).to(torch.float32)


def check_qkv(q, k, v):
    check_tensor(q, "q", rank=2)
    check_tensor(k, "k", rank=2)
    check_tensor(v, "v", rank=2)
    if q.shape[1] != k.shape[1]:
        raise ValidationError(f"q and k widths differ: {q.shape[1]} vs {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValidationError(f"k and v lengths differ: {k.shape[0]} vs {v.shape[0]}")


def attend(q64, k64, v64, chunk=None):
    """Softmax attention of float64 queries against one shared key/value set, chunked over queries."""
    scale = q64.shape[-1] ** -0.5
    chunk = chunk or DEFAULT_QUERY_CHUNK
    kt = k64.transpose(-2, -1)
    outs = [_row_softmax((q64[s:s + chunk] * scale) @ kt) @ v64 for s in range(0, q64.shape[0], chunk)]
    return torch.cat(outs, dim=0)


def dense_attention(q, k, v, chunk=None):
    """``softmax(q k^T / sqrt(d_k)) v`` for 2-D float32 inputs."""
    check_qkv(q, k, v)
    out = attend(q.to(ACC_DTYPE), k.to(ACC_DTYPE), v.to(ACC_DTYPE), chunk)
    return out.to(torch.float32)


def split_heads(t, heads):
    return rearrange(t, "n (h d) -> h n d", h=heads)


def merge_heads(t):
    return rearrange(t, "h n d -> n (h d)")


def attend_heads(q, k, v, heads, kernel):
    """Apply a 2-D kernel to each of ``heads`` contiguous column slices and concatenate."""
    qs, ks, vs = (split_heads(t, heads) for t in (q, k, v))
    outs = [kernel(qs[h].contiguous(), ks[h].contiguous(), vs[h].contiguous()) for h in range(heads)]
    return merge_heads(torch.stack(outs))


def multi_head_attention(x, w, kernel=dense_attention):
    q, k, v = project_qkv(x, w)
    return attend_heads(q, k, v, w.heads, kernel)
