"""Token-grid geometry and the per-query focus sets.

Tokens of an ``n_t x n_f`` latent are flattened time-major, ``i = a * n_f + b``
for time ``a`` and frequency ``b``, so tokens of one frequency band are spaced
``n_f`` apart. A query's focus set is its same-frequency class united with a
compensation set shared by every query of one attention call.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ValidationError
from .tensor_io import make_generator

logger = logging.getLogger(__name__)

TIME_MAJOR = "time-major"


@dataclass(frozen=True)
class Spectrogrid:
    n_t: int
    n_f: int
    layout: str = TIME_MAJOR

    def __post_init__(self):
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise ValidationError(f"n_t must be a positive integer, got {self.n_t!r}")
        if int(self.n_f) != self.n_f or self.n_f < 1:
            raise ValidationError(f"n_f must be a positive integer, got {self.n_f!r}")
        if self.layout != TIME_MAJOR:
            raise ValidationError(f"only the {TIME_MAJOR} layout is supported, got {self.layout!r}")

    @property
    def n_tokens(self):
        return self.n_t * self.n_f

    def check_token(self, i):
        if int(i) != i or not 0 <= i < self.n_tokens:
            raise ValidationError(f"token index {i!r} outside [0, {self.n_tokens})")
        return int(i)


@dataclass(frozen=True)
class CompensationSet:
    indices: np.ndarray = field(repr=False)
    n_tokens: int
    r: float
    seed: int

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class FocusSet:
    indices: np.ndarray = field(repr=False)
    owner: int

    def __len__(self):
        return len(self.indices)


def token_index(grid, a, b):
    if int(a) != a or not 0 <= a < grid.n_t:
        raise ValidationError(f"time coord {a!r} outside [0, {grid.n_t})")
    if int(b) != b or not 0 <= b < grid.n_f:
        raise ValidationError(f"frequency coord {b!r} outside [0, {grid.n_f})")
    return int(a) * grid.n_f + int(b)


def token_coords(grid, i):
    return divmod(grid.check_token(i), grid.n_f)


def same_frequency_set(grid, i):
    """All tokens ``j`` with ``j mod n_f == i mod n_f``, ascending; always ``n_t`` long."""
    i = grid.check_token(i)
    return np.arange(i % grid.n_f, grid.n_tokens, grid.n_f, dtype=np.int64)


def _as_fraction(r):
    if isinstance(r, Fraction):
        frac = r
    else:
        r = float(r)
        if not math.isfinite(r):
            raise ValidationError(f"fraction must be finite, got {r!r}")
        # repr() keeps the decimal the caller wrote, so 0.29 * 100 floors to 29, not 28
        frac = Fraction(repr(r))
    if not 0 <= frac <= 1:
        raise ValidationError(f"fraction must lie in [0, 1], got {r!r}")
    return frac


def floor_fraction(r, n):
    """Exact ``floor(r * n)`` on the rational value of ``r``."""
    return math.floor(_as_fraction(r) * n)


def compensation_count(n_tokens, r):
    return floor_fraction(r, n_tokens)


@functools.lru_cache(maxsize=256)
def cross_frequency_sample(n_tokens, r, seed):
    """Uniform sample of ``floor(r * n_tokens)`` distinct indices by partial Fisher-Yates."""
    if int(n_tokens) != n_tokens or n_tokens < 1:
        raise ValidationError(f"n_tokens must be positive, got {n_tokens!r}")
    count = compensation_count(n_tokens, r)
    rng = make_generator(seed)
    deck = np.arange(n_tokens, dtype=np.int64)
    swaps = rng.integers(np.arange(count), n_tokens) if count else ()
    for j, s in enumerate(swaps):
        deck[j], deck[s] = deck[s], deck[j]
    indices = np.sort(deck[:count])
    indices.setflags(write=False)
    logger.debug("compensation set: n=%d r=%s seed=%d size=%d", n_tokens, r, seed, count)
    return CompensationSet(indices=indices, n_tokens=int(n_tokens), r=float(r), seed=int(seed))


def build_focus_set(grid, i, comp, include_same_freq=True):
    i = grid.check_token(i)
    if comp.n_tokens != grid.n_tokens or (len(comp) and comp.indices[-1] >= grid.n_tokens):
        raise ValidationError(
            f"compensation set drawn for {comp.n_tokens} tokens, grid has {grid.n_tokens}")
    if include_same_freq:
        indices = np.union1d(same_frequency_set(grid, i), comp.indices)
    else:
        indices = comp.indices.copy()
    indices.setflags(write=False)
    return FocusSet(indices=indices, owner=i)


def expected_focus_size(grid, r):
    """E|S_i u C| under uniform sampling: n_t + c - c * n_t / N with c = floor(r * N)."""
    c = compensation_count(grid.n_tokens, r)
    return grid.n_t + c - c * grid.n_t / grid.n_tokens
