"""Command-line front end (``cspot {gen,spot,eval}``).

Exit codes
----------
0 success, 1 unclassified input error, 2 usage error, 3 invalid SynthSpec or
config, 4 layout overflow, 5 bad query, 6 missing corpus, 7 map format
error, 8 page mismatch, 9 malformed results, 10 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import KeywordSpotter
from .exceptions import (
    CspotError,
    InvalidSpecError,
    PageMismatchError,
    ResultsFormatError,
)
from .maps import Box, Detection, Stage
from .metrics import OVERLAPS, evaluate, load_ground_truth
from .proposal import SpotConfig
from .synth import SynthSpec, generate, write_corpus
from .validation import check_query, corpus_files

EXIT_USAGE = 2
EXIT_IO = 10
WORKERS_ENV = "CSPOT_WORKERS"
TSV_COLUMNS = ("query", "page_id", "x0", "y0", "x1", "y1", "score", "stage")
TSV_HEADER = "\t".join(TSV_COLUMNS)
SWEEP_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))

# CLI flag -> SpotConfig field
_CONFIG_FLAGS = {
    "p_thres": "p_thres",
    "r_thres": "r_thres",
    "levels": "levels",
    "ctc": "ctc",
    "top_k": "top_k",
    "nms_iou": "nms_iou",
}


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(f"{what} {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidSpecError(f"{what} {path} must hold a JSON object")
    return data


def _write_json(data, path):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(results_path):
    """Sidecar manifest written next to a results file."""
    return Path(results_path).with_suffix(".manifest.json")


def resolve_config(args):
    """Defaults, then ``--config`` JSON, then explicit flags."""
    data = _read_json(args.config, "config") if args.config else {}
    cfg = SpotConfig.from_dict(data)
    overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items()
                 if getattr(args, flag) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def resolve_workers(flag):
    if flag is not None:
        value, source = flag, "--workers"
    else:
        raw = os.environ.get(WORKERS_ENV)
        if raw is None or raw.strip() == "":
            return 1
        try:
            value, source = int(raw), WORKERS_ENV
        except ValueError as exc:
            raise InvalidSpecError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    if value < 1:
        raise InvalidSpecError(f"{source} must be >= 1, got {value}")
    return value


def read_queries(path):
    """Non-empty lines of a queries file, first occurrence kept."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return list(dict.fromkeys(line.strip() for line in lines if line.strip()))


# ---------------------------------------------------------------- gen

def cmd_gen(args):
    data = _read_json(args.spec, "spec")
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SynthSpec.from_dict(data)
    pages = generate(spec)
    outdir = write_corpus(pages, args.outdir)
    _write_json({
        "tool_version": __version__,
        "spec": spec.to_dict(),
        "pages": [f"{p.maps.page_id}.cpmap" for p in pages],
        "ground_truth": "gt.json",
    }, outdir / "manifest.json")
    n_words = sum(len(p.gts) for p in pages)
    print(f"wrote {len(pages)} pages, {n_words} words to {outdir}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- spot

def _timed(fn):
    def run(item):
        t0 = time.perf_counter()
        out = fn(item)
        return out, time.perf_counter() - t0
    return run


def format_row(query, det):
    b = det.box
    return (query, det.page_id, str(b.col_start), str(b.row_start), str(b.col_end),
            str(b.row_end), f"{det.score:.6f}", det.stage.value)


def write_results(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TSV_COLUMNS)
        writer.writerows(rows)


def cmd_spot(args):
    files = corpus_files(args.corpus)
    cfg = resolve_config(args)
    workers = resolve_workers(args.workers)
    raw_queries = read_queries(args.queries)

    spotter = KeywordSpotter.from_config(cfg, n_jobs=workers)
    t0 = time.perf_counter()
    spotter.fit(files)
    index_s = time.perf_counter() - t0
    # validate every query before spending time on any
    queries = {}
    for raw in raw_queries:
        q = check_query(raw, spotter.alphabet_, cfg.fold_case)
        queries.setdefault(q.normalized, q)
    queries = list(queries.values())

    downscale = {idx.page.page_id: idx.page.downscale for idx in spotter.indexes_}
    dets_by_query, pair_ms = {}, []
    for q in queries:
        timed = spotter.map_pages(_timed(lambda idx, q=q: idx.spot(q, cfg)), spotter.indexes_)
        pair_ms.extend(1e3 * dt for _, dt in timed)
        dets = [d.to_pixels(downscale[d.page_id]) for page_dets, _ in timed for d in page_dets]
        dets_by_query[q.normalized] = dets

    rows = []
    for text in sorted(dets_by_query):
        ranked = sorted(dets_by_query[text],
                        key=lambda d: (-d.score, d.page_id, d.box.as_tuple()))
        rows.extend(format_row(text, d) for d in ranked)
    write_results(rows, args.output)
    _write_json({
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "corpus": str(Path(args.corpus)),
        "pages": [f.name for f in files],
        "queries": [q.normalized for q in queries],
        "results": str(Path(args.output)),
    }, manifest_path(args.output))

    summary = (f"indexed {len(files)} pages in {1e3 * index_s:.1f} ms; "
               f"{len(queries)} queries, {len(rows)} detections")
    if pair_ms:
        ms = np.asarray(pair_ms)
        summary += (f"; per (image, query): mean {ms.mean():.3f} ms, "
                    f"median {np.median(ms):.3f} ms, max {ms.max():.3f} ms")
    print(summary, file=sys.stderr)
    return 0


# ---------------------------------------------------------------- eval

def read_results(path):
    """Parse a results TSV into ``{query: [Detection, ...]}`` (pixel space)."""
    dets = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header) != TSV_COLUMNS:
            raise ResultsFormatError(f"{path}: expected header {TSV_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TSV_COLUMNS):
                raise ResultsFormatError(f"{path}:{lineno}: expected {len(TSV_COLUMNS)} "
                                         f"fields, got {len(row)}")
            query, page_id, x0, y0, x1, y1, score, stage = row
            try:
                det = Detection(Box.from_xyxy(int(x0), int(y0), int(x1), int(y1)),
                                float(score), page_id, Stage(stage))
            except ValueError as exc:
                raise ResultsFormatError(f"{path}:{lineno}: {exc}") from exc
            dets.setdefault(query, []).append(det)
    return dets


def _eval_queries(args, dets):
    if args.queries:
        return read_queries(args.queries)
    sidecar = manifest_path(args.results)
    if sidecar.is_file():
        queries = _read_json(sidecar, "results manifest").get("queries")
        if isinstance(queries, list):
            return [str(q) for q in queries]
    return sorted(dets)


def cmd_eval(args):
    dets = read_results(args.results)
    gts = load_ground_truth(args.gt)
    gt_pages = {g.page_id for g in gts}
    unknown = sorted({d.page_id for ds in dets.values() for d in ds} - gt_pages)
    if unknown:
        raise PageMismatchError(f"results reference pages absent from {args.gt}: {unknown}")
    queries = _eval_queries(args, dets)
    report = evaluate(dets, gts, queries, args.metric, args.threshold)
    payload = report.to_dict()
    print(report.format_table())
    if args.sweep:
        curve = {f"{t:.1f}": evaluate(dets, gts, queries, args.metric, t).map_value
                 for t in SWEEP_THRESHOLDS}
        payload["sweep"] = curve
        print("\nthreshold  MAP")
        for t, m in curve.items():
            print(f"{t:>9}  {m:.4f}")
    if args.output:
        _write_json(payload, args.output)
    return 0


# ---------------------------------------------------------------- parser

def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} not in [0, 1]")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cspot", description="Segmentation-free keyword spotting on character maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic corpus")
    gen.add_argument("spec", help="SynthSpec JSON file ({} for defaults)")
    gen.add_argument("outdir", help="output corpus directory")
    gen.add_argument("--seed", type=int, help="override the generator seed")
    gen.set_defaults(func=cmd_gen)

    sp = sub.add_parser("spot", help="spot every query in a corpus")
    sp.add_argument("corpus", help="directory of .cpmap files")
    sp.add_argument("queries", help="text file, one query per line")
    sp.add_argument("-o", "--output", default="results.tsv", help="results TSV path")
    sp.add_argument("--config", help="SpotConfig JSON; flags override it")
    sp.add_argument("--p-thres", dest="p_thres", type=float)
    sp.add_argument("--r-thres", dest="r_thres", type=float)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--ctc", choices=["off", "one_way", "two_way"])
    sp.add_argument("--top-k", dest="top_k", type=int)
    sp.add_argument("--nms-iou", dest="nms_iou", type=float)
    sp.add_argument("--workers", type=int,
                    help=f"page worker threads (default ${WORKERS_ENV} or 1)")
    sp.set_defaults(func=cmd_spot)

    ev = sub.add_parser("eval", help="score results against ground truth")
    ev.add_argument("results", help="results TSV from 'cspot spot'")
    ev.add_argument("gt", help="ground-truth JSON")
    ev.add_argument("--metric", choices=sorted(OVERLAPS), default="iow")
    ev.add_argument("--threshold", type=_probability, default=0.5)
    ev.add_argument("--queries", help="queries file (default: results manifest)")
    ev.add_argument("--sweep", action="store_true",
                    help="also report MAP at thresholds 0.1 to 0.9")
    ev.add_argument("-o", "--output", help="report JSON path")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CspotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CspotError.exit_code


if __name__ == "__main__":
    sys.exit(main())
