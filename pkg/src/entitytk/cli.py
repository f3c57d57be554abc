"""Command-line front end.

Subcommands: convert, merge, presample, resolve, eval, losscheck, bench.
Exit codes: 0 success, 1 validation/constraint failure, 2 I/O or format
failure (argparse usage errors also exit 2). Every emitted report embeds
the toolkit version and the full effective configuration plus its hash, so
numbers stay attributable to a protocol.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .annotations import convert_panoptic, load_dataset, merge_datasets, presample, save_dataset
from .bench import run_benchmark
from .checks import run_loss_checks
from .errors import FormatError, IngestionError, ToolkitError, ValidationError
from .evaluation import EvalConfig, ScoredBox, ap_box, ap_entity, ap_overlap_tolerant, pq
from .masks import bbox_of, rle_decode
from .predictions import (
    load_raw_predictions,
    load_resolved,
    raw_to_scored,
    resolve_raw,
    save_resolved,
)
from .resolver import ResolvedPrediction


def _config_payload(config: dict) -> dict:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "version": __version__,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest()[:16],
    }


def _write_report(out, payload: dict) -> None:
    text = json.dumps(payload, separators=(",", ":")) + "\n"
    if out:
        Path(out).write_text(text)


def _fmt(v) -> str:
    return "  n/a" if v is None else f"{v:.4f}"


def _print_ap_table(report) -> None:
    print(f"{'':>10} {'AP':>7} {'AP50':>7} {'AP75':>7} {'AP_S':>7} {'AP_M':>7} {'AP_L':>7}")
    print(
        f"{'value':>10} {_fmt(report.ap):>7} {_fmt(report.ap50):>7} "
        f"{_fmt(report.ap75):>7} {_fmt(report.ap_s):>7} {_fmt(report.ap_m):>7} "
        f"{_fmt(report.ap_l):>7}"
    )


def cmd_convert(args) -> int:
    dataset = convert_panoptic(args.panoptic_json, args.png_dir, args.source_tag)
    save_dataset(dataset, args.out)
    n_entities = sum(len(img.entities) for img in dataset.images)
    print(f"converted {len(dataset.images)} images, {n_entities} entities -> {args.out}")
    return 0


def cmd_merge(args) -> int:
    datasets = [load_dataset(p) for p in args.inputs]
    merged = merge_datasets(datasets)
    save_dataset(merged, args.out)
    print(f"merged {len(datasets)} datasets into {len(merged.images)} images -> {args.out}")
    return 0


def cmd_presample(args) -> int:
    dataset = load_dataset(args.input)
    sampled = presample(dataset, args.n, args.seed)
    save_dataset(sampled, args.out)
    print(f"presampled {args.n} of {len(dataset.images)} images (seed {args.seed}) -> {args.out}")
    return 0


def cmd_resolve(args) -> int:
    raws = load_raw_predictions(args.pred)
    resolved = []
    for raw in raws:
        pred = resolve_raw(raw, args.nms_threshold)
        resolved.append((raw.image_id, raw.height, raw.width, pred))
    save_resolved(resolved, args.out)
    kept = sum(len(p.scores) - 1 for _, _, _, p in resolved)
    print(f"resolved {len(resolved)} images, {kept} surviving entities -> {args.out}")
    return 0


def _eval_config(args) -> EvalConfig:
    kwargs = {}
    if args.iou_thresholds:
        kwargs["iou_thresholds"] = tuple(
            float(t) for t in args.iou_thresholds.split(",") if t.strip()
        )
    if args.max_dets is not None:
        kwargs["max_dets_per_image"] = args.max_dets
    kwargs["mode"] = args.mode
    return EvalConfig(**kwargs)


def _load_entity_predictions(path):
    """Raw JSON -> scored-entity lists; resolved dir -> ResolvedPredictions."""
    path = Path(path)
    if path.is_dir():
        return {
            image_id: pred for image_id, (_, _, pred) in load_resolved(path).items()
        }
    return {p.image_id: raw_to_scored(p) for p in load_raw_predictions(path)}


def _box_predictions(path):
    preds = {}
    for raw in load_raw_predictions(path):
        dets = []
        for e in raw.entities:
            if e.bbox is not None:
                box = e.bbox
            elif e.rle is not None:
                box = bbox_of(rle_decode(e.rle))
            else:
                raise FormatError(
                    f"image {raw.image_id}: entity {e.entity_id} has neither "
                    "a bbox nor a mask"
                )
            dets.append(ScoredBox(bbox=box, score=e.final_score(), category=e.category))
        preds[raw.image_id] = dets
    return preds


def _pq_predictions(path, gts):
    path = Path(path)
    if path.is_dir():
        return {
            image_id: pred for image_id, (_, _, pred) in load_resolved(path).items()
        }
    # Raw JSON: masks must already be disjoint; categories ride along.
    from .evaluation import _disjoint_or_raise

    by_id = gts.by_image_id()
    out = {}
    for raw in load_raw_predictions(path):
        record = by_id.get(raw.image_id)
        if record is None:
            raise ValidationError(f"predictions reference unknown image {raw.image_id}")
        entities = raw_to_scored(raw)
        pred = _disjoint_or_raise(entities, record)
        categories = {
            e.entity_id: e.category for e in entities if e.category is not None
        }
        out[raw.image_id] = ResolvedPrediction(
            ids=pred.ids, scores=pred.scores, categories=categories or None
        )
    return out


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    gts = load_dataset(args.gt)
    threads = args.threads or os.cpu_count() or 1
    if args.metric == "entity":
        report = ap_entity(_load_entity_predictions(args.pred), gts, cfg, threads)
    elif args.metric == "tolerant":
        preds = _load_entity_predictions(args.pred)
        scored = {
            k: v if isinstance(v, list) else _resolved_as_scored(v)
            for k, v in preds.items()
        }
        report = ap_overlap_tolerant(scored, gts, cfg, threads)
    elif args.metric == "box":
        report = ap_box(_box_predictions(args.pred), gts, cfg, threads)
    else:
        report = pq(_pq_predictions(args.pred, gts), gts)

    config = {
        "metric": args.metric,
        "pred": str(args.pred),
        "gt": str(args.gt),
        "threads": threads,
        **cfg.to_dict(),
    }
    payload = _config_payload(config)
    payload["report"] = report.to_dict()
    _write_report(args.out, payload)
    if args.metric == "pq":
        print(f"{'PQ':>10} {'SQ':>7} {'RQ':>7} {'TP':>5} {'FP':>5} {'FN':>5}")
        print(
            f"{report.pq:>10.4f} {report.sq:>7.4f} {report.rq:>7.4f} "
            f"{report.tp:>5d} {report.fp:>5d} {report.fn:>5d}"
        )
    else:
        _print_ap_table(report)
    if args.out:
        print(f"report -> {args.out}")
    return 0


def _resolved_as_scored(pred: ResolvedPrediction):
    from .masks import entity_map_decompose
    from .resolver import ScoredEntity

    return [
        ScoredEntity(entity_id=i, mask=m, score=pred.scores[i])
        for i, m in entity_map_decompose(pred.ids)
    ]


def cmd_losscheck(args) -> int:
    rows = run_loss_checks(
        seed=args.seed, count=args.count, fixtures_dir=args.dump_fixtures
    )
    width = max(len(r.name) for r in rows)
    failed = 0
    for row in rows:
        status = "PASS" if row.passed else "FAIL"
        print(f"{row.name:<{width}}  {row.measured:12.3e}  <= {row.bound:8.0e}  {status}")
        failed += 0 if row.passed else 1
    config = {"subcommand": "losscheck", "seed": args.seed, "count": args.count}
    payload = _config_payload(config)
    payload["checks"] = [r.to_dict() for r in rows]
    _write_report(args.out, payload)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 0 if failed == 0 else 1


def cmd_bench(args) -> int:
    threads = args.threads or os.cpu_count() or 1
    cfg = EvalConfig()
    result = run_benchmark(
        images=args.images,
        height=args.height,
        width=args.width,
        entities=args.entities,
        seed=args.seed,
        threads=threads,
        cfg=cfg,
    )
    config = {
        "subcommand": "bench",
        "images": args.images,
        "height": args.height,
        "width": args.width,
        "entities": args.entities,
        "seed": args.seed,
        "threads": threads,
        **cfg.to_dict(),
    }
    payload = _config_payload(config)
    payload["bench"] = result.to_dict()
    _write_report(args.out, payload)
    print(
        f"{result.images} images in {result.wall_seconds:.2f}s "
        f"({result.images_per_second:.1f} img/s, {threads} threads)"
    )
    _print_ap_table(result.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entitytk",
        description="Category-agnostic segmentation evaluation and dataset toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("convert", help="panoptic JSON + ID PNGs -> entity dataset JSON")
    p.add_argument("--panoptic-json", required=True)
    p.add_argument("--png-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source-tag", default=None)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("merge", help="concatenate entity datasets with unique image ids")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("presample", help="deterministic seeded sample of a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_presample)

    p = sub.add_parser("resolve", help="scored masks -> non-overlapping entity map")
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--nms-threshold",
        type=float,
        default=None,
        help="force box NMS at this IoU; otherwise NMS runs only for "
        "detector-stage inputs carrying entityness/centerness",
    )
    p.set_defaults(fn=cmd_resolve)

    p = sub.add_parser("eval", help="evaluate predictions against an entity dataset")
    p.add_argument("--pred", required=True, help="raw prediction JSON or resolved directory")
    p.add_argument("--gt", required=True, help="entity dataset JSON")
    p.add_argument("--metric", choices=["entity", "tolerant", "pq", "box"], default="entity")
    p.add_argument("--iou-thresholds", default=None, help="comma-separated, e.g. 0.5,0.75")
    p.add_argument("--max-dets", type=int, default=None)
    p.add_argument("--mode", choices=["agnostic", "oriented"], default="agnostic")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("losscheck", help="gradient/decomposition checks for the loss references")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--out", default=None)
    p.add_argument(
        "--dump-fixtures", default=None,
        help="directory to write the generated fixtures as JSON tensors",
    )
    p.set_defaults(fn=cmd_losscheck)

    p = sub.add_parser("bench", help="seeded synthetic strict-AP benchmark")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--entities", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "bench" and args.images < 1:
        parser.error("--images must be at least 1")
    if args.subcommand == "presample" and args.n < 1:
        parser.error("--n must be at least 1")
    try:
        return args.fn(args)
    except (FormatError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
