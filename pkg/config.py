# --------------------------------------------------------
# LiteFocus benchmark configuration
# --------------------------------------------------------'

import os
import yaml
from yacs.config import CfgNode as CN

_C = CN()

# Base config files
_C.BASE = ['']

# -----------------------------------------------------------------------------
# Token grid settings
# -----------------------------------------------------------------------------
_C.GRID = CN()
# Latent time steps per 10 seconds of audio, could be overwritten by --nt-per-10s
_C.GRID.NT_PER_10S = 256
# Latent frequency bands, could be overwritten by --nf
_C.GRID.NF = 16

# -----------------------------------------------------------------------------
# Attention settings
# -----------------------------------------------------------------------------
_C.ATTENTION = CN()
# Number of heads; d_model = HEADS * D_K
_C.ATTENTION.HEADS = 1
# Width of one head
_C.ATTENTION.D_K = 64
# Cross-frequency compensation fraction
_C.ATTENTION.R = 0.1
# Token-merging baseline: fraction of all tokens merged away (half of set A)
_C.ATTENTION.MERGE_RATIO = 0.25
# Queries per softmax block, bounds memory of dense attention on long grids
_C.ATTENTION.QUERY_CHUNK = 1024

# -----------------------------------------------------------------------------
# Toy pipeline settings
# -----------------------------------------------------------------------------
_C.PIPELINE = CN()
# Block tags, in execution order
_C.PIPELINE.BLOCKS = ['down-1', 'down-2', 'up-1', 'up-2']
# Blocks that run the sparse mode; the rest stay dense
_C.PIPELINE.SPARSE_BLOCKS = ['down-2', 'up-2']
# Iterations over the block stack
_C.PIPELINE.STEPS = 8

# -----------------------------------------------------------------------------
# Benchmark settings
# -----------------------------------------------------------------------------
_C.BENCH = CN()
# Audio lengths in seconds
_C.BENCH.LENGTHS = [10, 20, 40, 80]
# Timed repeats per case, the median is reported
_C.BENCH.REPEATS = 5
# Kernel threads, 0 keeps the torch default
_C.BENCH.THREADS = 0
# Maximum relative deviation accepted by `compare`
_C.BENCH.TOL = 1e-5
# Maximum relative deviation accepted by `compare` after the whole pipeline
_C.BENCH.PIPELINE_TOL = 1e-4

# -----------------------------------------------------------------------------
# Pattern analysis settings
# -----------------------------------------------------------------------------
_C.PATTERN = CN()
# Bootstrap resamples for the lift interval
_C.PATTERN.BOOTSTRAP = 1000

# -----------------------------------------------------------------------------
# Misc
# -----------------------------------------------------------------------------
# Fixed random seed
_C.SEED = 0
# CSV or tensor written by a command, set by --out
_C.OUTPUT = ''


def _update_config_from_file(config, cfg_file):
    config.defrost()
    with open(cfg_file, 'r') as f:
        yaml_cfg = yaml.load(f, Loader=yaml.FullLoader)

    for cfg in yaml_cfg.setdefault('BASE', ['']):
        if cfg:
            _update_config_from_file(
                config, os.path.join(os.path.dirname(cfg_file), cfg)
            )
    config.merge_from_file(cfg_file)
    config.freeze()


def update_config(config, args):
    if getattr(args, 'cfg', None):
        _update_config_from_file(config, args.cfg)

    config.defrost()

    # merge from specific arguments
    if getattr(args, 'seed', None) is not None:
        config.SEED = args.seed
    if getattr(args, 'nf', None) is not None:
        config.GRID.NF = args.nf
    if getattr(args, 'nt_per_10s', None) is not None:
        config.GRID.NT_PER_10S = args.nt_per_10s
    if getattr(args, 'heads', None) is not None:
        config.ATTENTION.HEADS = args.heads
    if getattr(args, 'dk', None) is not None:
        config.ATTENTION.D_K = args.dk
    if getattr(args, 'threads', None) is not None:
        config.BENCH.THREADS = args.threads
    if getattr(args, 'repeats', None) is not None:
        config.BENCH.REPEATS = args.repeats
    if getattr(args, 'steps', None) is not None:
        config.PIPELINE.STEPS = args.steps
    if getattr(args, 'tol', None) is not None:
        config.BENCH.TOL = args.tol
    if getattr(args, 'bootstrap', None) is not None:
        config.PATTERN.BOOTSTRAP = args.bootstrap
    if getattr(args, 'out', None):
        config.OUTPUT = str(args.out)

    config.freeze()


def get_config(args):
    """Get a yacs CfgNode object with default values."""
    # Return a clone so that the defaults will not be altered
    # This is for the "local variable" use pattern
    config = _C.clone()
    update_config(config, args)

    return config
