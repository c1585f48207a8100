"""Same-frequency attention statistics and heatmap export.

The frequency lift of a row-stochastic map is the mean attention mass a query
puts on its own frequency class, divided by the uniform value ``1 / n_f``.
Lift 1 means no preference. Lift ``n_f`` means attention never leaves the band.
"""
import logging
import pathlib

import numpy as np
import pandas as pd
import torch
from einops import rearrange, reduce

from .attention import ACC_DTYPE, _row_softmax, check_qkv
from .errors import ValidationError
from .tensor_io import check_tensor, make_generator, random_tensor

logger = logging.getLogger(__name__)

HEATMAP_FORMATS = ("pgm", "csv")


def attention_map(q, k):
    check_qkv(q, k, k)
    scale = q.shape[1] ** -0.5
    return _row_softmax((q.to(ACC_DTYPE) * scale) @ k.to(ACC_DTYPE).T).to(torch.float32)


def _check_map(attn, grid):
    check_tensor(attn, "attention map", rank=2)
    n = grid.n_tokens
    if tuple(attn.shape) != (n, n):
        raise ValidationError(f"attention map {tuple(attn.shape)} does not fit a {grid.n_t}x{grid.n_f} grid")
    if bool((attn < 0).any()):
        raise ValidationError("attention map has negative entries")
    deviation = float((attn.to(ACC_DTYPE).sum(dim=-1) - 1).abs().max())
    if deviation > 1e-4:
        raise ValidationError(f"attention rows are not stochastic (max |sum - 1| = {deviation:.3g})")


def same_frequency_mass(attn, grid):
    """Per-query attention mass on keys ``j = i (mod n_f)``, and its mean over queries."""
    _check_map(attn, grid)
    per_class = reduce(attn.to(ACC_DTYPE), "n (t f) -> n f", "sum", f=grid.n_f)
    own = torch.arange(grid.n_tokens) % grid.n_f
    fractions = per_class[torch.arange(grid.n_tokens), own].numpy()
    return fractions, float(fractions.mean())


def frequency_lift(attn, grid):
    return same_frequency_mass(attn, grid)[1] * grid.n_f


def bootstrap_lift_interval(fractions, n_f, n_boot=1000, seed=0, level=0.95):
    """Mean lift with a percentile bootstrap interval, resampling queries."""
    fractions = np.asarray(fractions, dtype=np.float64)
    rng = make_generator(seed)
    draws = rng.integers(0, len(fractions), size=(n_boot, len(fractions)))
    lifts = fractions[draws].mean(axis=1) * n_f
    tail = (1 - level) / 2 * 100
    lo, hi = np.percentile(lifts, [tail, 100 - tail])
    return float(fractions.mean() * n_f), float(lo), float(hi)


def same_frequency_mask(grid):
    cls = torch.arange(grid.n_tokens) % grid.n_f
    return cls[:, None] == cls[None, :]


def synthesize_biased_attention(grid, bias, seed, noise_scale=1.0):
    """Row softmax of random normal logits plus ``bias`` on same-frequency entries.

    With ``noise_scale=0`` the logits are constant and each row's same-frequency
    mass is exactly ``n_t e^bias / (n_t e^bias + N - n_t)``.
    """
    if not bias >= 0:
        raise ValidationError(f"bias must be non-negative, got {bias!r}")
    n = grid.n_tokens
    logits = random_tensor([n, n], seed).to(ACC_DTYPE) * noise_scale
    logits = logits + bias * same_frequency_mask(grid).to(ACC_DTYPE)
    return _row_softmax(logits).to(torch.float32)


def constant_logit_lift(grid, bias):
    """Exact lift of a map with logit ``bias`` on same-frequency keys and 0 elsewhere."""
    same = grid.n_t * np.exp(bias)
    return same / (same + grid.n_tokens - grid.n_t) * grid.n_f


def reshape_by_frequency(attn, grid):
    """``(N, n_f, n_t)`` view: row ``b`` of query ``i``'s block holds its attention on band ``b``."""
    _check_map(attn, grid)
    return rearrange(attn, "n (t f) -> n f t", f=grid.n_f)


def _pgm_bytes(image):
    image = image.astype(np.float64)
    lo, hi = image.min(), image.max()
    scaled = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    pixels = np.rint(scaled * 255).astype(np.uint8)
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def export_heatmap(attn, path, fmt="pgm", grid=None, reshaped=False):
    """Write an attention map as binary PGM (min-max scaled) or RFC 4180 CSV.

    With ``reshaped`` each query becomes ``n_f`` consecutive rows of ``n_t``
    values, one row per frequency band.
    """
    if fmt not in HEATMAP_FORMATS:
        raise ValidationError(f"unknown heatmap format {fmt!r}, expected one of {HEATMAP_FORMATS}")
    if reshaped:
        if grid is None:
            raise ValidationError("a reshaped heatmap needs the grid")
        image = rearrange(reshape_by_frequency(attn, grid), "n f t -> (n f) t")
    else:
        image = check_tensor(attn, "attention map", rank=2)
    image = image.detach().cpu().numpy()
    path = pathlib.Path(path)
    if fmt == "pgm":
        path.write_bytes(_pgm_bytes(image))
    else:
        pd.DataFrame(image).to_csv(path, header=False, index=False, float_format="%.9g",
                                   lineterminator="\r\n")
    logger.info("wrote %s heatmap %s to %s", fmt, image.shape, path)
