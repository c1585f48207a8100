"""LiteFocus benchmark command line.

    python bench.py sweep --lengths 10,20,40,80 --modes dense,litefocus:r=0.1,tome:ratio=0.25
    python bench.py compare --mode-a dense --mode-b litefocus:r=1
    python bench.py rsweep --rs 0.2,0.4,0.6,0.8,1
    python bench.py pipeline --lengths 10,80 --mode litefocus:r=0.1
    python bench.py pattern --synthetic 1.0 --heatmap out/biased
    python bench.py gen --dims 4096,64 --dist standard_normal --out x.lftn

Exit codes: 0 success, 1 tolerance failure, 2 usage error.
"""
import argparse
import logging
import pathlib
import sys
import time

import numpy as np
import pandas as pd

from config import get_config
from litefocus.attention import DENSE, AttentionKind, AttentionMode, attend_heads, max_relative_deviation
from litefocus.errors import LiteFocusError
from litefocus.focus import Spectrogrid
from litefocus.pattern import (attention_map, bootstrap_lift_interval, constant_logit_lift, export_heatmap,
                               same_frequency_mass, synthesize_biased_attention)
from litefocus.pipeline import (PipelineConfig, build_blocks, default_block_modes, run_pipeline,
                                timing_breakdown)
from litefocus.sparse import attended_pair_count, build_kernel
from litefocus.tensor_io import DISTRIBUTIONS, random_tensor, read_tensor, write_tensor
from utils import AverageMeter, host_descriptor, length_to_nt, save_config, set_threads

logger = logging.getLogger("bench")

SWEEP_COLUMNS = ["length_sec", "mode", "n_t", "n_f", "n_tokens", "score_evals", "wall_ms_median",
                 "repeats", "speedup_vs_dense", "threads", "host"]
RSWEEP_COLUMNS = ["length_sec", "mode", "r", "n_tokens", "score_evals", "density", "max_rel_dev"]
PIPELINE_COLUMNS = ["length_sec", "mode", "stage", "seconds", "share", "count"]
QUALITY_FOOTER = ("note: FAD, KL and CLAP columns are omitted; they need the full pretrained "
                  "audio pipeline, vocoder and evaluation set")


class UsageError(Exception):
    pass


def _number_list(cast):
    def parse(text):
        try:
            return [cast(item) for item in text.split(",") if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None
    return parse


def _seconds(value):
    value = float(value)
    return int(value) if value.is_integer() else value


def seeded_qkv(n_tokens, width, seed):
    seeds = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)
    return tuple(random_tensor([n_tokens, width], int(s)) for s in seeds)


def grid_for(seconds, config):
    try:
        n_t = length_to_nt(seconds, config.GRID.NT_PER_10S)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return Spectrogrid(n_t, config.GRID.NF)


def parse_modes(texts, seed):
    try:
        return [AttentionMode.parse(t, seed=seed) for t in texts]
    except LiteFocusError as e:
        raise UsageError(str(e)) from None


def d_model(config):
    return config.ATTENTION.HEADS * config.ATTENTION.D_K


def check_config(config):
    """Reject sizes and counts no command can run with."""
    positive = {
        "--nf": config.GRID.NF,
        "--nt-per-10s": config.GRID.NT_PER_10S,
        "--heads": config.ATTENTION.HEADS,
        "--dk": config.ATTENTION.D_K,
        "--repeats": config.BENCH.REPEATS,
        "--steps": config.PIPELINE.STEPS,
        "--bootstrap": config.PATTERN.BOOTSTRAP,
    }
    for flag, value in positive.items():
        if value < 1:
            raise UsageError(f"{flag} must be >= 1, got {value}")
    if config.BENCH.THREADS < 0:
        raise UsageError(f"--threads must be >= 0, got {config.BENCH.THREADS}")


def time_call(kernel_inputs, heads, kernel, repeats):
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    meter = AverageMeter("wall_ms", ":.3f")
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = attend_heads(*kernel_inputs, heads, kernel)
        meter.update((time.perf_counter() - start) * 1e3)
    return meter, out


def _write_csv(df, config):
    if not config.OUTPUT:
        return
    out = pathlib.Path(config.OUTPUT)
    out.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(out, index=False, lineterminator="\r\n")
    save_config(config, out.with_suffix(".yaml"))
    logger.info("wrote %s", out)


def cmd_sweep(args, config):
    default_modes = ["dense", f"litefocus:r={config.ATTENTION.R}", f"tome:ratio={config.ATTENTION.MERGE_RATIO}"]
    modes = parse_modes(args.modes or default_modes, config.SEED)
    lengths = args.lengths or list(config.BENCH.LENGTHS)
    threads = set_threads(config.BENCH.THREADS)
    heads, chunk, repeats = config.ATTENTION.HEADS, config.ATTENTION.QUERY_CHUNK, config.BENCH.REPEATS
    host = host_descriptor()
    rows = []
    for seconds in lengths:
        grid = grid_for(seconds, config)
        inputs = seeded_qkv(grid.n_tokens, d_model(config), config.SEED)
        medians = {}
        timed = modes if any(m.kind is AttentionKind.DENSE for m in modes) else [DENSE] + modes
        for mode in timed:
            meter, _ = time_call(inputs, heads, build_kernel(mode, grid, chunk=chunk), repeats)
            medians[str(mode)] = meter.median
            logger.debug("%ss %s: %s", seconds, mode, meter)
        for mode in modes:
            rows.append(dict(
                length_sec=seconds, mode=str(mode), n_t=grid.n_t, n_f=grid.n_f, n_tokens=grid.n_tokens,
                score_evals=heads * attended_pair_count(grid, mode),
                wall_ms_median=round(medians[str(mode)], 4), repeats=repeats,
                speedup_vs_dense=round(medians["dense"] / medians[str(mode)], 4) if medians[str(mode)] else 1.0,
                threads=threads, host=host,
            ))
    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    print(df.to_string(index=False))
    print(QUALITY_FOOTER)
    _write_csv(df, config)
    return 0


def _pipeline_config(grid, config, modes, seed, dump_qk_dir=None):
    tags = list(config.PIPELINE.BLOCKS)
    blocks = build_blocks(d_model(config), config.ATTENTION.HEADS, seed, tags, modes)
    return PipelineConfig(grid=grid, channels=d_model(config), blocks=blocks, steps=config.PIPELINE.STEPS,
                          seed=seed, chunk=config.ATTENTION.QUERY_CHUNK, dump_qk_dir=dump_qk_dir)


def cmd_compare(args, config):
    mode_a, mode_b = parse_modes([args.mode_a, args.mode_b], config.SEED)
    set_threads(config.BENCH.THREADS)
    grid = grid_for(args.length, config)
    heads, chunk = config.ATTENTION.HEADS, config.ATTENTION.QUERY_CHUNK
    inputs = seeded_qkv(grid.n_tokens, d_model(config), config.SEED)

    out_a = attend_heads(*inputs, heads, build_kernel(mode_a, grid, chunk=chunk))
    out_b = attend_heads(*inputs, heads, build_kernel(mode_b, grid, reference=args.reference, chunk=chunk))
    deviation = max_relative_deviation(out_b, out_a)
    cost_ratio = attended_pair_count(grid, mode_b) / attended_pair_count(grid, mode_a)
    print(f"grid={grid.n_t}x{grid.n_f} mode_a={mode_a} mode_b={mode_b}{' (reference)' if args.reference else ''}")
    print(f"call_deviation={deviation:.3e} tol={config.BENCH.TOL:.1e}")
    print(f"cost_ratio={cost_ratio:.6f}")
    failed = deviation > config.BENCH.TOL

    if not args.no_pipeline:
        n_blocks = len(config.PIPELINE.BLOCKS)
        cfg_a = _pipeline_config(grid, config, [mode_a] * n_blocks, config.SEED)
        cfg_b = _pipeline_config(grid, config, [mode_b] * n_blocks, config.SEED)
        cfg_b.reference = args.reference
        final_a, _ = run_pipeline(cfg_a)
        final_b, _ = run_pipeline(cfg_b)
        pipe_deviation = max_relative_deviation(final_b, final_a)
        print(f"pipeline_deviation={pipe_deviation:.3e} tol={config.BENCH.PIPELINE_TOL:.1e} "
              f"blocks={n_blocks} steps={config.PIPELINE.STEPS}")
        failed = failed or pipe_deviation > config.BENCH.PIPELINE_TOL

    print("FAIL" if failed else "OK")
    return 1 if failed else 0


def cmd_rsweep(args, config):
    lengths = args.lengths or list(config.BENCH.LENGTHS)
    kind = "litefocus" if args.with_samefreq else "componly"
    modes = parse_modes([f"{kind}:r={r}" for r in args.rs], config.SEED)
    set_threads(config.BENCH.THREADS)
    heads, chunk = config.ATTENTION.HEADS, config.ATTENTION.QUERY_CHUNK
    rows = []
    for seconds in lengths:
        grid = grid_for(seconds, config)
        inputs = seeded_qkv(grid.n_tokens, d_model(config), config.SEED)
        dense_out = attend_heads(*inputs, heads, build_kernel(DENSE, grid, chunk=chunk))
        for mode in modes:
            try:
                out = attend_heads(*inputs, heads, build_kernel(mode, grid, chunk=chunk))
            except LiteFocusError as e:
                raise UsageError(str(e)) from None
            count = attended_pair_count(grid, mode)
            rows.append(dict(
                length_sec=seconds, mode=str(mode), r=mode.r, n_tokens=grid.n_tokens, score_evals=heads * count,
                density=round(count / grid.n_tokens ** 2, 6),
                max_rel_dev=float(f"{max_relative_deviation(out, dense_out):.6e}"),
            ))
    df = pd.DataFrame(rows, columns=RSWEEP_COLUMNS)
    print(df.to_string(index=False))
    print(QUALITY_FOOTER)
    _write_csv(df, config)
    return 0


def cmd_pipeline(args, config):
    mode = parse_modes([args.mode or f"litefocus:r={config.ATTENTION.R}"], config.SEED)[0]
    lengths = args.lengths or list(config.BENCH.LENGTHS)
    set_threads(config.BENCH.THREADS)
    modes = default_block_modes(config.PIPELINE.BLOCKS, config.PIPELINE.SPARSE_BLOCKS, mode)
    rows = []
    for seconds in lengths:
        grid = grid_for(seconds, config)
        dump = pathlib.Path(args.dump_qk) / f"{seconds:g}s" if args.dump_qk else None
        _, report = run_pipeline(_pipeline_config(grid, config, modes, config.SEED, dump_qk_dir=dump))
        print(f"{seconds:g}s grid={grid.n_t}x{grid.n_f} attention share: time={report.attention_share:.3f} "
              f"count={report.attention_count_share:.3f}")
        for stage, seconds_spent, share in timing_breakdown(report):
            rows.append(dict(length_sec=seconds, mode=str(mode), stage=stage, seconds=round(seconds_spent, 6),
                             share=round(share, 6), count=report.stage_counts[stage]))
    df = pd.DataFrame(rows, columns=PIPELINE_COLUMNS)
    print(df.to_string(index=False))
    _write_csv(df, config)
    return 0


def cmd_pattern(args, config):
    n_f = config.GRID.NF
    if args.synthetic is not None:
        if args.q or args.k:
            raise UsageError("--synthetic cannot be combined with --q/--k")
        grid = Spectrogrid(args.nt, n_f)
        attn = synthesize_biased_attention(grid, args.synthetic, config.SEED, noise_scale=args.noise_scale)
        source = f"synthetic bias={args.synthetic:g}"
    else:
        if not (args.q and args.k):
            raise UsageError("pattern needs --q and --k, or --synthetic")
        q, k = read_tensor(args.q), read_tensor(args.k)
        if q.dim() != 2 or q.shape[0] % n_f:
            raise UsageError(f"{q.shape[0]} tokens do not split into {n_f} frequency bands")
        grid = Spectrogrid(q.shape[0] // n_f, n_f)
        attn = attention_map(q, k)
        source = f"{args.q} x {args.k}"

    fractions, _ = same_frequency_mass(attn, grid)
    lift, lo, hi = bootstrap_lift_interval(fractions, n_f, n_boot=config.PATTERN.BOOTSTRAP, seed=config.SEED)
    print(f"source: {source}")
    print(f"grid={grid.n_t}x{grid.n_f} lift={lift:.6f} ci95=[{lo:.6f}, {hi:.6f}]")
    if args.synthetic is not None and args.noise_scale == 0:
        print(f"closed_form_lift={constant_logit_lift(grid, args.synthetic):.6f}")
    if args.heatmap:
        prefix = pathlib.Path(args.heatmap)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        export_heatmap(attn, prefix.with_suffix(".pgm"), "pgm")
        export_heatmap(attn, prefix.with_suffix(".csv"), "csv")
        export_heatmap(attn, prefix.parent / f"{prefix.name}_reshaped.pgm", "pgm", grid=grid, reshaped=True)
    if config.OUTPUT:
        token = np.arange(grid.n_tokens)
        df = pd.DataFrame(dict(query=token, time=token // n_f, freq=token % n_f, same_freq_mass=fractions))
        _write_csv(df, config)
    return 0


def cmd_gen(args, config):
    if not config.OUTPUT:
        raise UsageError("gen needs --out")
    t = random_tensor(args.dims, config.SEED, args.dist)
    write_tensor(t, config.OUTPUT)
    print(f"wrote {config.OUTPUT} dims={list(t.shape)} seed={config.SEED} dist={args.dist}")
    return 0


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--cfg', type=str, metavar="FILE", help='path to config file')
    shared.add_argument('--seed', type=int, help='u64 seed of every random draw')
    shared.add_argument('--nf', type=int, help='latent frequency bands')
    shared.add_argument('--nt-per-10s', type=int, help='latent time steps per 10 seconds of audio')
    shared.add_argument('--heads', type=int, help='attention heads')
    shared.add_argument('--dk', type=int, help='width of one head')
    shared.add_argument('--threads', type=int, help='kernel threads, 0 keeps the torch default')
    shared.add_argument('--out', type=str, help='output file')
    shared.add_argument('--verbose', '-v', action='store_true', help='debug logging')

    parser = argparse.ArgumentParser(prog="bench", description="LiteFocus sparse-attention benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", parents=[shared], help="time attention modes across audio lengths")
    p.add_argument('--lengths', type=_number_list(_seconds), help='audio lengths in seconds, e.g. 10,20,40,80')
    p.add_argument('--modes', type=_number_list(str),
                   help='comma-separated modes: dense, litefocus:r=F, samefreq, componly:r=F, tome:ratio=F')
    p.add_argument('--repeats', type=int, help='timed repeats per case')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[shared], help="output deviation and cost ratio of two modes")
    p.add_argument('--length', type=_seconds, default=10, help='audio length in seconds')
    p.add_argument('--mode-a', default="dense")
    p.add_argument('--mode-b', default="litefocus:r=1")
    p.add_argument('--reference', action='store_true', help='run mode b through the per-query reference path')
    p.add_argument('--tol', type=float, help='maximum relative deviation of one attention call')
    p.add_argument('--steps', type=int, help='pipeline steps')
    p.add_argument('--no-pipeline', action='store_true', help='compare single attention calls only')
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rsweep", parents=[shared], help="cost and deviation across compensation fractions")
    p.add_argument('--rs', type=_number_list(float), default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument('--lengths', type=_number_list(_seconds))
    p.add_argument('--with-samefreq', action='store_true', help='sweep litefocus instead of componly')
    p.set_defaults(func=cmd_rsweep)

    p = sub.add_parser("pipeline", parents=[shared], help="per-stage runtime composition of the toy pipeline")
    p.add_argument('--lengths', type=_number_list(_seconds))
    p.add_argument('--mode', help='mode of the sparse blocks, default litefocus with the configured r')
    p.add_argument('--steps', type=int)
    p.add_argument('--dump-qk', type=str, metavar="DIR",
                   help='write head-0 q/k of every block at the last step to DIR/<length>s/<tag>_{q,k}.lftn')
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("pattern", parents=[shared], help="same-frequency lift of an attention map")
    p.add_argument('--q', type=str, help='LFTN query tensor, N x d_k')
    p.add_argument('--k', type=str, help='LFTN key tensor, N x d_k')
    p.add_argument('--synthetic', type=float, metavar="BETA", help='synthesize a map with same-frequency bias')
    p.add_argument('--nt', type=int, default=32, help='time steps of the synthetic grid')
    p.add_argument('--noise-scale', type=float, default=1.0, help='std of synthetic logits, 0 for constant')
    p.add_argument('--bootstrap', type=int, help='bootstrap resamples')
    p.add_argument('--heatmap', type=str, metavar="PREFIX", help='write PREFIX.pgm, PREFIX.csv, PREFIX_reshaped.pgm')
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("gen", parents=[shared], help="write a seeded random LFTN tensor")
    p.add_argument('--dims', type=_number_list(int), required=True)
    p.add_argument('--dist', choices=DISTRIBUTIONS, default="standard_normal")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code or 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = get_config(args)
        check_config(config)
        return args.func(args, config)
    except (UsageError, LiteFocusError, ValueError, OSError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
