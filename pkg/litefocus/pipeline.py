"""A toy stand-in for the attention-bearing blocks of a diffusion U-Net.

A stack of pre-norm residual transformer blocks is applied for ``steps``
iterations. Each block carries its own attention mode. Every stage is timed
with a monotonic clock and its operations are counted exactly, so the runtime
composition can be compared across sequence lengths.
"""
import contextlib
import copy
import logging
import math
import pathlib
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn

from .attention import DENSE, ProjectionWeights, attend_heads
from .errors import ValidationError
from .focus import Spectrogrid
from .sparse import attended_pair_count, build_kernel
from .tensor_io import check_tensor, random_tensor, read_tensor, write_tensor

logger = logging.getLogger(__name__)

STAGES = ("attention", "projections", "mlp", "other")
MLP_RATIO = 4
NORM_EPS = 1e-6


def _untimed(name, count=0):
    return contextlib.nullcontext()


class Mlp(nn.Module):
    """ Two bias-free linear layers around an activation."""

    def __init__(self, in_features, hidden_features=None, act_layer=nn.GELU):
        super().__init__()
        self.hidden_features = hidden_features or in_features
        self.fc1 = nn.Linear(in_features, self.hidden_features, bias=False)
        self.act = act_layer()
        self.fc2 = nn.Linear(self.hidden_features, in_features, bias=False)

    def forward(self, x):
        x = self.fc1(x)
        x = self.act(x)
        x = self.fc2(x)
        return x


class TransformerBlock(nn.Module):
    """ Pre-norm residual block whose attention kernel is chosen per call.

    Args:
        dim (int): Number of channels.
        num_heads (int): Number of attention heads, must divide ``dim``.
        mode (AttentionMode): Attention mode used by the pipeline for this block.
        tag (str): Block name, also the prefix of dumped q/k files.
        mlp_ratio (int): Ratio of mlp hidden dim to embedding dim.
        act_layer (nn.Module, optional): Activation layer. Default: nn.GELU
        norm_layer (nn.Module, optional): Normalization layer. Default: nn.LayerNorm
    """

    def __init__(self, dim, num_heads=1, mode=DENSE, tag="", mlp_ratio=MLP_RATIO,
                 act_layer=nn.GELU, norm_layer=nn.LayerNorm):
        super().__init__()
        if int(dim) != dim or dim < 1:
            raise ValidationError(f"channels must be positive, got {dim!r}")
        if int(num_heads) != num_heads or num_heads < 1 or dim % num_heads:
            raise ValidationError(f"heads={num_heads!r} must divide channels={dim}")
        self.dim = int(dim)
        self.num_heads = int(num_heads)
        self.mode = mode
        self.tag = tag
        self.norm1 = norm_layer(dim, eps=NORM_EPS)
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.norm2 = norm_layer(dim, eps=NORM_EPS)
        self.mlp = Mlp(in_features=dim, hidden_features=int(mlp_ratio * dim), act_layer=act_layer)
        self.requires_grad_(False)

    @classmethod
    def from_weights(cls, projections, mlp_w1, mlp_w2, mode=DENSE, tag=""):
        """Build a block from ``x @ w`` style matrices (rows are input channels)."""
        c = projections.channels
        if projections.d_model != c:
            raise ValidationError("block projections must map channels to channels")
        check_tensor(mlp_w1, "mlp_w1", rank=2)
        check_tensor(mlp_w2, "mlp_w2", rank=2)
        hidden = mlp_w1.shape[1]
        if hidden % c or tuple(mlp_w2.shape) != (hidden, c) or mlp_w1.shape[0] != c:
            raise ValidationError(f"mlp weights must be {c}xH and Hx{c}, got "
                                  f"{tuple(mlp_w1.shape)} and {tuple(mlp_w2.shape)}")
        block = cls(c, projections.heads, mode=mode, tag=tag, mlp_ratio=hidden // c)
        with torch.no_grad():
            block.qkv.weight.copy_(torch.cat([projections.w_q, projections.w_k, projections.w_v], dim=1).t())
            block.mlp.fc1.weight.copy_(mlp_w1.t())
            block.mlp.fc2.weight.copy_(mlp_w2.t())
        return block

    @property
    def channels(self):
        return self.dim

    @property
    def projections(self):
        w_q, w_k, w_v = self.qkv.weight.t().split(self.dim, dim=1)
        return ProjectionWeights(w_q.contiguous(), w_k.contiguous(), w_v.contiguous(), heads=self.num_heads)

    @property
    def mlp_w1(self):
        return self.mlp.fc1.weight.t().contiguous()

    @property
    def mlp_w2(self):
        return self.mlp.fc2.weight.t().contiguous()

    def with_mode(self, mode):
        block = copy.deepcopy(self)
        block.mode = mode
        return block

    def head_qk(self, x):
        """Query and key of head 0 for the state ``x`` entering this block."""
        d_k = self.dim // self.num_heads
        q, k, _ = self.qkv(self.norm1(x)).split(self.dim, dim=-1)
        return q[:, :d_k].contiguous(), k[:, :d_k].contiguous()

    def forward(self, x, kernel, report=None, attention_count=0):
        n, c = x.shape
        stage = report.stage if report is not None else _untimed
        with stage("other", 2 * n * c):
            h = self.norm1(x)
        with stage("projections", 3 * n * c * c):
            q, k, v = (t.contiguous() for t in self.qkv(h).split(c, dim=-1))
        with stage("attention", attention_count):
            h = attend_heads(q, k, v, self.num_heads, kernel)
        with stage("other", 2 * n * c):
            x = x + h
            h = self.norm2(x)
        with stage("mlp", 2 * n * c * self.mlp.hidden_features):
            h = self.mlp(h)
        with stage("other", n * c):
            x = x + h
        return x


@dataclass
class PipelineConfig:
    grid: Spectrogrid
    channels: int
    blocks: List[TransformerBlock]
    steps: int = 8
    seed: int = 0
    reference: bool = False
    chunk: Optional[int] = None
    initial_state: Optional[pathlib.Path] = None
    final_state_path: Optional[pathlib.Path] = None
    dump_qk_dir: Optional[pathlib.Path] = None

    def validate(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps!r}")
        if not self.blocks:
            raise ValidationError("a pipeline needs at least one block")
        for p in self.blocks:
            if p.channels != self.channels:
                raise ValidationError(f"block {p.tag!r} has {p.channels} channels, pipeline {self.channels}")


@dataclass
class TimingReport:
    stage_seconds: Dict[str, float] = field(default_factory=lambda: dict.fromkeys(STAGES, 0.0))
    stage_counts: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(STAGES, 0))
    total_seconds: float = 0.0

    @property
    def attention_share(self):
        staged = sum(self.stage_seconds.values())
        return min(max(self.stage_seconds["attention"] / staged, 0.0), 1.0) if staged > 0 else 0.0

    @property
    def attention_count_share(self):
        total = sum(self.stage_counts.values())
        return self.stage_counts["attention"] / total if total else 0.0

    @contextlib.contextmanager
    def stage(self, name, count=0):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] += time.perf_counter() - start
            self.stage_counts[name] += count


def derive_call_seed(seed, layer, step):
    """Seed of the compensation set drawn by block ``layer`` at step ``step``."""
    state = np.random.SeedSequence([int(seed), int(layer), int(step)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def init_block_params(channels, heads, seed, mode=DENSE, tag=""):
    """Seeded normal weights scaled by ``1/sqrt(fan_in)``."""
    if int(channels) != channels or channels < 1:
        raise ValidationError(f"channels must be positive, got {channels!r}")
    if int(heads) != heads or heads < 1 or channels % heads:
        raise ValidationError(f"heads={heads!r} must divide channels={channels}")
    seeds = np.random.SeedSequence(int(seed)).generate_state(5, dtype=np.uint64)

    def weight(rows, cols, s):
        return random_tensor([rows, cols], int(s)) / math.sqrt(rows)

    hidden = MLP_RATIO * channels
    projections = ProjectionWeights(
        weight(channels, channels, seeds[0]),
        weight(channels, channels, seeds[1]),
        weight(channels, channels, seeds[2]),
        heads=heads,
    )
    return TransformerBlock.from_weights(projections, weight(channels, hidden, seeds[3]),
                                         weight(hidden, channels, seeds[4]),
                                         mode=mode, tag=tag)


def default_block_modes(tags, sparse_tags, mode):
    """Apply ``mode`` to blocks tagged in ``sparse_tags`` and dense attention elsewhere."""
    return [mode if tag in sparse_tags else DENSE for tag in tags]


def build_blocks(channels, heads, seed, tags, modes):
    seeds = np.random.SeedSequence(int(seed)).spawn(len(tags))
    return [init_block_params(channels, heads, int(s.generate_state(1, dtype=np.uint64)[0]), mode, tag)
            for s, tag, mode in zip(seeds, tags, modes)]


@torch.no_grad()
def run_block(x, p, grid, call_seed=None, report=None, reference=False, chunk=None, dump_prefix=None):
    """``x + attn(norm(x))`` followed by ``x + mlp(norm(x))``, with a GELU-gated MLP."""
    check_tensor(x, "x", rank=2)
    if x.shape != (grid.n_tokens, p.channels):
        raise ValidationError(f"state {tuple(x.shape)} does not fit {grid.n_tokens} tokens x {p.channels} channels")
    mode = p.mode if call_seed is None else p.mode.with_seed(call_seed)
    kernel = build_kernel(mode, grid, reference=reference, chunk=chunk)
    if dump_prefix is not None:
        q, k = p.head_qk(x)
        write_tensor(q, f"{dump_prefix}_q.lftn")
        write_tensor(k, f"{dump_prefix}_k.lftn")
    out = p(x, kernel, report=report if report is not None else TimingReport(),
            attention_count=p.num_heads * attended_pair_count(grid, mode))
    if not bool(torch.isfinite(out).all()):
        raise ValidationError(f"block {p.tag!r} produced non-finite values")
    return out


def run_pipeline(cfg):
    cfg.validate()
    grid = cfg.grid
    if cfg.initial_state is not None:
        x = read_tensor(cfg.initial_state)
        if tuple(x.shape) != (grid.n_tokens, cfg.channels):
            raise ValidationError(f"initial state {tuple(x.shape)} does not fit {grid.n_tokens}x{cfg.channels}")
    else:
        x = random_tensor([grid.n_tokens, cfg.channels], cfg.seed)
    if cfg.dump_qk_dir is not None:
        pathlib.Path(cfg.dump_qk_dir).mkdir(parents=True, exist_ok=True)

    report = TimingReport()
    start = time.perf_counter()
    for step in range(cfg.steps):
        last = step == cfg.steps - 1
        for layer, p in enumerate(cfg.blocks):
            dump = None
            if last and cfg.dump_qk_dir is not None:
                dump = pathlib.Path(cfg.dump_qk_dir) / (p.tag or f"block{layer}")
            x = run_block(x, p, grid, call_seed=derive_call_seed(cfg.seed, layer, step), report=report,
                          reference=cfg.reference, chunk=cfg.chunk, dump_prefix=dump)
        logger.debug("step %d/%d done", step + 1, cfg.steps)
    report.total_seconds = time.perf_counter() - start

    if cfg.final_state_path is not None:
        write_tensor(x, cfg.final_state_path)
    logger.info("pipeline %dx%d, %d blocks x %d steps: %.3fs, attention share %.3f",
                grid.n_t, grid.n_f, len(cfg.blocks), cfg.steps, report.total_seconds, report.attention_share)
    return x, report


def timing_breakdown(report):
    """``(stage, seconds, share)`` rows in fixed stage order; shares sum to 1."""
    stages = [s for s in STAGES if s in report.stage_seconds] + \
             sorted(s for s in report.stage_seconds if s not in STAGES)
    total = sum(report.stage_seconds[s] for s in stages)
    if total <= 0:
        return [(s, report.stage_seconds[s], 1.0 / len(stages)) for s in stages]
    return [(s, report.stage_seconds[s], report.stage_seconds[s] / total) for s in stages]
