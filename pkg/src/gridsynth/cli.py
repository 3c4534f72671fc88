"""Command-line surface.

Subcommands: pool-build, synth, losscheck, eval, bench. Exit codes:
0 success, 1 usage, 2 data error, 3 internal/verification failure.
Progress goes to stderr; data and reports go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
import time
from typing import Dict, List, Optional

from . import dataio
from .detmetrics import EvalConfig, EvalDataset, evaluate
from .errors import DataError, GridSynthError, VerificationError
from .pool import build_pool, load_pool, save_pool
from .synth import SynthConfig, sample_digest, synthesize_sample
from .vlalign import gradient_sweep, minimizer_sweep

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

GRADIENT_TOLERANCE = 1e-5
MINIMIZER_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2 by default; we use 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(summary: dict, as_json: bool, lines: Optional[List[str]] = None) -> None:
    if as_json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    elif lines:
        for line in lines:
            print(line)


# ---------------------------------------------------------------------------
# pool-build
# ---------------------------------------------------------------------------

def cmd_pool_build(args) -> int:
    if not os.path.isfile(args.annotations):
        raise DataError(f"annotation file not found: {args.annotations}")
    if not os.path.isdir(args.images_dir):
        raise DataError(f"images directory not found: {args.images_dir}")
    records, categories = dataio.load_annotations(args.annotations)
    _progress(f"loaded {len(records)} image records")
    dataset = [dataio.load_sample(r, args.images_dir, categories) for r in records]
    pool = build_pool(dataset, context_ratio=args.context_ratio, min_side=args.min_side)
    save_pool(pool, args.out)
    per_category = {c: len(ix) for c, ix in pool.by_category.items()}
    summary = {
        "patches": len(pool),
        "per_category": {str(c): n for c, n in per_category.items()},
        "out": args.out,
    }
    lines = [f"pool: {len(pool)} patches -> {args.out}"] + [
        f"  category {c} ({pool.label_for(c)}): {n}" for c, n in per_category.items()
    ]
    _emit(summary, args.json, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _load_synth_config(path: Optional[str], seed: Optional[int]) -> SynthConfig:
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}")
        cfg = dataio.synth_config_from_dict(doc, context=path)
    else:
        cfg = SynthConfig()
    if seed is not None:  # flags win over the config file
        cfg = SynthConfig(grid=cfg.grid, flip_probability=cfg.flip_probability, rng_seed=seed)
    return cfg


def cmd_synth(args) -> int:
    pool = load_pool(args.pool)
    cfg = _load_synth_config(args.config, args.seed)
    os.makedirs(args.out_images, exist_ok=True)
    records = []
    histogram: Dict[int, int] = {}
    for i in range(args.count):
        sample = synthesize_sample(pool, cfg, i)
        name = f"sample_{i:06d}.png"
        dataio.write_image(sample.image, os.path.join(args.out_images, name))
        records.append(
            dataio.SampleRecord(
                image_id=i + 1, file_name=name,
                width=sample.width, height=sample.height,
                instances=sample.instances,
            )
        )
        n = len(sample.instances)
        histogram[n] = histogram.get(n, 0) + 1
        if (i + 1) % 100 == 0:
            _progress(f"synthesized {i + 1}/{args.count}")
    categories = {
        c: dataio.CategoryInfo(id=c, name=pool.label_for(c))
        for c in sorted(pool.by_category)
    }
    dataio.save_annotations(records, args.out_annotations, categories=categories)
    summary = {
        "count": args.count,
        "seed": cfg.rng_seed,
        "instance_histogram": {str(k): v for k, v in sorted(histogram.items())},
        "out_images": args.out_images,
        "out_annotations": args.out_annotations,
    }
    lines = [f"synthesized {args.count} samples -> {args.out_images}"] + [
        f"  {k} instances: {v} samples" for k, v in sorted(histogram.items())
    ]
    _emit(summary, args.json, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# losscheck
# ---------------------------------------------------------------------------

def cmd_losscheck(args) -> int:
    gammas = (args.gamma,) if args.gamma is not None else (1.0, 2.0)
    corrupt = 1e-3 if args.corrupt_derivative else 0.0
    grad_err = gradient_sweep(
        gamma_values=gammas, lambda_neg=args.lambda_neg, corrupt=corrupt
    )
    min_err = minimizer_sweep(gamma_values=gammas, grid_points=args.grid_density)
    ok = grad_err < GRADIENT_TOLERANCE and min_err < MINIMIZER_TOLERANCE
    summary = {
        "max_gradient_relative_error": grad_err,
        "max_minimizer_error": min_err,
        "gradient_tolerance": GRADIENT_TOLERANCE,
        "minimizer_tolerance": MINIMIZER_TOLERANCE,
        "ok": ok,
    }
    lines = [
        f"max gradient relative error: {grad_err:.3e} (tolerance {GRADIENT_TOLERANCE:.0e})",
        f"max |argmin - q^gamma|:      {min_err:.3e} (tolerance {MINIMIZER_TOLERANCE:.0e})",
    ]
    _emit(summary, args.json, lines)
    if not ok:
        raise VerificationError(
            f"loss self-check failed: gradient {grad_err:.3e}, minimizer {min_err:.3e}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    records, categories = dataio.load_annotations(args.gt)
    detections = dataio.load_detections(args.dets)
    ground_truth = {r.image_id: r.instances for r in records}
    ds = EvalDataset(
        ground_truth=ground_truth, categories=categories, detections=tuple(detections)
    )
    cap = args.per_image_cap
    if cap is None:
        cap = 1000 if args.mode == "fixed" else 300
    cfg = EvalConfig(mode=args.mode, per_image_cap=cap)
    report = evaluate(ds, cfg)
    if args.report:
        dataio.atomic_write_bytes(args.report, (report.to_json() + "\n").encode())
        _progress(f"report written to {args.report}")
    if args.json:
        print(report.to_json())
    else:
        print(report.format_table(categories))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

_BENCH_STATE: dict = {}


def _bench_init(pool, cfg):
    _BENCH_STATE["pool"] = pool
    _BENCH_STATE["cfg"] = cfg


def _bench_one(index: int) -> str:
    return sample_digest(synthesize_sample(_BENCH_STATE["pool"], _BENCH_STATE["cfg"], index))


def bench_digests(pool, cfg, count: int, workers: int) -> List[str]:
    """Per-sample digests for indices 0..count-1, in index order."""
    if workers <= 1:
        _bench_init(pool, cfg)
        return [_bench_one(i) for i in range(count)]
    ctx = multiprocessing.get_context("fork" if sys.platform != "win32" else "spawn")
    with ctx.Pool(workers, initializer=_bench_init, initargs=(pool, cfg)) as p:
        return list(p.map(_bench_one, range(count), chunksize=max(1, count // (4 * workers))))


def cmd_bench(args) -> int:
    pool = load_pool(args.pool)
    cfg = _load_synth_config(args.config, args.seed)
    count, workers = args.count, args.workers

    t0 = time.perf_counter()
    seq = bench_digests(pool, cfg, count, workers=1)
    seq_elapsed = time.perf_counter() - t0

    par = seq
    par_elapsed = seq_elapsed
    if workers > 1:
        t0 = time.perf_counter()
        par = bench_digests(pool, cfg, count, workers=workers)
        par_elapsed = time.perf_counter() - t0

    match = seq == par
    digest = _digest_of(seq)
    summary = {
        "count": count,
        "workers": workers,
        "sequential_samples_per_sec": count / seq_elapsed if seq_elapsed > 0 else None,
        "parallel_samples_per_sec": count / par_elapsed if par_elapsed > 0 else None,
        "corpus_digest": digest,
        "digests_match": match,
    }
    lines = [
        f"sequential: {count} samples in {seq_elapsed:.2f}s "
        f"({count / seq_elapsed:.1f}/s)" if seq_elapsed > 0 else "sequential: 0 samples",
    ]
    if workers > 1:
        lines.append(
            f"workers={workers}: {count} samples in {par_elapsed:.2f}s "
            f"({count / par_elapsed:.1f}/s)" if par_elapsed > 0 else "parallel: 0 samples"
        )
    lines.append(f"corpus digest: {digest}")
    lines.append(f"digests match: {match}")
    _emit(summary, args.json, lines)
    if not match:
        raise VerificationError(f"digest mismatch between 1 and {workers} workers")
    return EXIT_OK


def _digest_of(digests: List[str]) -> str:
    import hashlib

    h = hashlib.sha256()
    for d in digests:
        h.update(bytes.fromhex(d))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="gridsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool-build", parents=[], help="extract an object pool from a dataset")
    p.add_argument("--annotations", required=True, help="annotation JSON file")
    p.add_argument("--images-dir", required=True, help="directory with the images")
    p.add_argument("--context-ratio", type=float, default=0.2,
                   help="background expansion ratio around each tight box")
    p.add_argument("--min-side", type=int, default=2,
                   help="drop instances with a side smaller than this")
    p.add_argument("--out", required=True, help="output pool directory")
    p.add_argument("--json", action="store_true", help="print a JSON summary")
    p.set_defaults(func=cmd_pool_build)

    p = sub.add_parser("synth", help="generate synthetic grid samples")
    p.add_argument("--pool", required=True, help="pool directory")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", default=None, help="synth config JSON")
    p.add_argument("--out-images", required=True)
    p.add_argument("--out-annotations", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("losscheck", help="verify loss gradients and minimizers")
    p.add_argument("--gamma", type=float, default=None,
                   help="single focusing exponent (default: sweep 1 and 2)")
    p.add_argument("--lambda-neg", type=float, default=0.5)
    p.add_argument("--grid-density", type=int, default=100001,
                   help="grid points for the minimizer search")
    p.add_argument("--corrupt-derivative", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth annotation JSON")
    p.add_argument("--dets", required=True, help="detection results JSON")
    p.add_argument("--mode", choices=("standard", "fixed"), default="standard")
    p.add_argument("--per-image-cap", type=int, default=None,
                   help="default 300 (standard) or 1000 (fixed)")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure generator throughput and verify replay")
    p.add_argument("--pool", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits for usage errors and --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except VerificationError as e:
        print(f"gridsynth: verification failed: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, FileNotFoundError) as e:
        print(f"gridsynth: {e}", file=sys.stderr)
        return EXIT_DATA
    except GridSynthError as e:
        print(f"gridsynth: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # internal fault
        print(f"gridsynth: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
