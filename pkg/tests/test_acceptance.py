"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as the
criteria complete. Random content is seeded, so every run checks the same
instances.
"""

import json
import time

import numpy as np

from entitytk.annotations import load_dataset
from entitytk.bench import run_benchmark
from entitytk.cli import main as cli_main
from entitytk.errors import ConstraintError
from entitytk.evaluation import EvalConfig, ScoredBox, ap_box, ap_entity, ap_overlap_tolerant, pq
from entitytk.losses import (
    DEFAULT_PATH_WEIGHTS,
    PATH_CODES,
    PathSpec,
    add_relative_coords,
    dice_loss,
    dice_loss_grad,
    grad_check,
    kernel_bank_loss,
    mask_head_forward,
    overlap_suppression_grad,
    overlap_suppression_loss,
    sigmoid,
    softmax_channels,
)
from entitytk.masks import Bbox, entity_map_decompose, rle_decode, rle_encode
from entitytk.predictions import RawEntity, RawPrediction, save_raw_predictions
from entitytk.resolver import (
    ResolvedPrediction,
    ScoredEntity,
    resolve_overlaps,
    validate_prediction,
)
from entitytk.annotations import EntityDataset, image_record_from_masks, save_dataset

from conftest import (
    gt_dataset_from_maps,
    random_id_map,
    random_mask,
    random_score,
    random_scored_entities,
    resolved_from_map,
    rng_for,
)
from oracles import (
    RefImage,
    naive_rle_counts,
    ref_ap_report,
    ref_box_iou,
    ref_resolve,
)
from panoptic_fixtures import write_panoptic_fixture
from test_evaluation import oracle_images_for_entity


def _report(name: str, ok: bool, detail: str = ""):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


def _reports_close(actual, expected: dict, tol: float) -> bool:
    keys = ("ap", "ap50", "ap75", "ap_s", "ap_m", "ap_l")
    for key in keys:
        a = getattr(actual, key)
        e = expected[key]
        if (a is None) != (e is None):
            return False
        if a is not None and abs(a - e) > tol:
            return False
    for got, want in zip(actual.per_threshold, expected["per_threshold"]):
        if (got["ap"] is None) != (want is None):
            return False
        if want is not None and abs(got["ap"] - want) > tol:
            return False
    return True


class TestAcceptance:
    def test_metric_oracle_equivalence(self):
        """200 seeded random instances; all three AP metrics vs the oracle."""
        rng = rng_for(2024)
        cfg = EvalConfig()
        start = time.perf_counter()
        for instance in range(200):
            n_img = int(rng.integers(1, 11))
            maps = [random_id_map(rng, 16, 16, 8) for _ in range(n_img)]
            gts = gt_dataset_from_maps(maps)

            entity_preds = {}
            tolerant_preds = {}
            box_preds = {}
            for img in gts.images:
                if rng.random() < 0.1:
                    continue
                ents = random_scored_entities(rng, 16, 16, 8)
                tolerant_preds[img.image_id] = ents
                if ents:
                    entity_preds[img.image_id] = resolve_overlaps(ents, 16, 16)
                box_preds[img.image_id] = [
                    ScoredBox(
                        bbox=Bbox(
                            int(rng.integers(0, 12)), int(rng.integers(0, 12)),
                            int(rng.integers(1, 10)), int(rng.integers(1, 10)),
                        ),
                        score=random_score(rng),
                    )
                    for _ in range(int(rng.integers(0, 9)))
                ]

            got = ap_entity(entity_preds, gts, cfg)
            want = ref_ap_report(
                oracle_images_for_entity(gts, entity_preds), cfg.iou_thresholds
            )
            assert _reports_close(got, want, 1e-9), f"entity mismatch at {instance}"

            got = ap_overlap_tolerant(tolerant_preds, gts, cfg)
            want = ref_ap_report(
                oracle_images_for_entity(gts, tolerant_preds), cfg.iou_thresholds
            )
            assert _reports_close(got, want, 1e-9), f"tolerant mismatch at {instance}"

            got = ap_box(box_preds, gts, cfg)
            images = []
            for record in gts.images:
                gt_boxes = [e.bbox for e in record.entities]
                dets = box_preds.get(record.image_id, [])
                images.append(
                    RefImage(
                        det_scores=[d.score for d in dets],
                        det_areas=[d.bbox.area for d in dets],
                        gt_areas=[g.area for g in gt_boxes],
                        iou=[
                            [ref_box_iou(d.bbox.to_list(), g.to_list()) for g in gt_boxes]
                            for d in dets
                        ],
                    )
                )
            want = ref_ap_report(images, cfg.iou_thresholds)
            assert _reports_close(got, want, 1e-9), f"box mismatch at {instance}"

        elapsed = time.perf_counter() - start
        _report(
            "metric oracle equivalence (200 instances, <=1e-9)",
            elapsed <= 60.0,
            f"{elapsed:.1f}s",
        )

    def test_exact_constructed_values(self):
        gt_full = np.ones((10, 10), dtype=bool)
        gts = EntityDataset(
            images=(image_record_from_masks(1, 10, 10, [gt_full], "fx"),)
        )
        ids = np.zeros((10, 10), dtype=np.int64)
        ids.ravel()[:60] = 1
        report = ap_entity(
            {1: ResolvedPrediction(ids=ids, scores={0: 0.0, 1: 0.9})}, gts
        )
        ok = report.ap == 0.3

        gts_cat = EntityDataset(
            images=(
                image_record_from_masks(1, 10, 10, [gt_full], "fx", categories=[1]),
            )
        )
        ids_pq = np.zeros((10, 10), dtype=np.int64)
        ids_pq.ravel()[:80] = 1
        pq_report = pq(
            {1: ResolvedPrediction(ids=ids_pq, scores={0: 0.0, 1: 0.9}, categories={1: 1})},
            gts_cat,
        )
        ok = ok and pq_report.pq == 0.8 and pq_report.sq == 0.8 and pq_report.rq == 1.0

        rng = rng_for(77)
        maps = [random_id_map(rng, 12, 12, 5) for _ in range(4)]
        maps = [m for m in maps if m.max() > 0]
        gts_perfect = gt_dataset_from_maps(maps)
        perfect_preds = {
            img.image_id: ResolvedPrediction(
                ids=img.entity_map(),
                scores={0: 0.0, **{e.entity_id: 1.0 for e in img.entities}},
            )
            for img in gts_perfect.images
        }
        perfect = ap_entity(perfect_preds, gts_perfect)
        ok = ok and perfect.ap == 1.0 and perfect.ap50 == 1.0 and perfect.ap75 == 1.0

        cat_records = []
        for img in gts_perfect.images:
            cat_records.append(
                image_record_from_masks(
                    img.image_id, img.height, img.width,
                    [e.dense_mask() for e in img.entities], "fx",
                    categories=[1 + e.entity_id % 3 for e in img.entities],
                )
            )
        gts_pq_perfect = EntityDataset(images=tuple(cat_records))
        pq_perfect = pq(
            {
                img.image_id: ResolvedPrediction(
                    ids=img.entity_map(),
                    scores={0: 0.0, **{e.entity_id: 1.0 for e in img.entities}},
                    categories={e.entity_id: e.source_category for e in img.entities},
                )
                for img in gts_pq_perfect.images
            },
            gts_pq_perfect,
        )
        ok = ok and pq_perfect.pq == 1.0
        _report("exact constructed values (0.30 / PQ 0.8 / perfect 1.0)", ok)

    def test_constraint_semantics_end_to_end(self, tmp_path):
        g = np.zeros((8, 8), dtype=bool)
        g[1:7, 1:7] = True
        gts = EntityDataset(images=(image_record_from_masks(1, 8, 8, [g], "fx"),))
        dup = [ScoredEntity(1, g, 0.9), ScoredEntity(2, g, 0.8)]

        rejected = False
        try:
            ap_entity({1: dup}, gts)
        except ConstraintError:
            rejected = True

        tolerant = ap_overlap_tolerant({1: dup}, gts)
        accepted = tolerant.ap is not None

        gt_path = tmp_path / "gt.json"
        save_dataset(gts, gt_path)
        pred_path = tmp_path / "dup.json"
        save_raw_predictions(
            [
                RawPrediction(
                    image_id=1, height=8, width=8,
                    entities=(
                        RawEntity(entity_id=1, rle=rle_encode(g), score=0.9),
                        RawEntity(entity_id=2, rle=rle_encode(g), score=0.8),
                    ),
                )
            ],
            pred_path,
        )
        reject_code = cli_main(
            ["eval", "--pred", str(pred_path), "--gt", str(gt_path), "--metric", "entity"]
        )
        resolved_dir = tmp_path / "resolved"
        resolve_code = cli_main(
            ["resolve", "--pred", str(pred_path), "--out", str(resolved_dir)]
        )
        report_path = tmp_path / "after.json"
        eval_code = cli_main(
            [
                "eval", "--pred", str(resolved_dir), "--gt", str(gt_path),
                "--metric", "entity", "--out", str(report_path),
            ]
        )
        after = json.loads(report_path.read_text())["report"]["ap"]
        ok = (
            rejected
            and accepted
            and reject_code == 1
            and resolve_code == 0
            and eval_code == 0
            and after == 1.0
        )
        _report("constraint semantics (reject / tolerate / resolve to 1.0)", ok)

    def test_entity_equals_tolerant_on_nonoverlapping(self):
        rng = rng_for(3030)
        ok = True
        for _ in range(100):
            n_img = int(rng.integers(1, 4))
            maps = [random_id_map(rng, 12, 12, 6) for _ in range(n_img)]
            gts = gt_dataset_from_maps(maps)
            entity_preds = {}
            tolerant_preds = {}
            for img in gts.images:
                pm = random_id_map(rng, 12, 12, 6)
                resolved = resolved_from_map(rng, pm)
                entity_preds[img.image_id] = resolved
                tolerant_preds[img.image_id] = [
                    ScoredEntity(i, m, resolved.scores[i])
                    for i, m in entity_map_decompose(pm)
                ]
            a = ap_entity(entity_preds, gts).to_dict()
            b = ap_overlap_tolerant(tolerant_preds, gts).to_dict()
            ok = ok and a == b
        _report("ap_entity == ap_overlap_tolerant on non-overlapping inputs", ok)

    def test_codec(self):
        rng = rng_for(4040)
        ok = True
        for _ in range(1000):
            h = int(rng.integers(1, 17))
            w = int(rng.integers(1, 17))
            m = random_mask(rng, h, w, float(rng.uniform(0.05, 0.95)))
            rle = rle_encode(m)
            ok = ok and (rle_decode(rle) == m).all()
            ok = ok and list(rle.counts) == naive_rle_counts(m.tolist())
            first = json.dumps(rle.to_dict(), separators=(",", ":"))
            second = json.dumps(rle_encode(m.copy()).to_dict(), separators=(",", ":"))
            ok = ok and first == second
        _report("codec roundtrip + naive oracle + byte-stable JSON (1000 masks)", ok)

    def test_resolver_against_bruteforce(self):
        rng = rng_for(5050)
        ok = True
        for _ in range(500):
            h = int(rng.integers(2, 13))
            w = int(rng.integers(2, 13))
            ents = random_scored_entities(rng, h, w, 6, with_probs=True)
            res = resolve_overlaps(ents, h, w)
            validate_prediction(res)
            expected = ref_resolve(
                [
                    (
                        e.entity_id,
                        e.dense_mask().tolist(),
                        e.score,
                        None if e.pixel_probs is None else e.pixel_probs.tolist(),
                    )
                    for e in ents
                ],
                h, w,
            )
            ok = ok and res.ids.tolist() == expected
            again = resolve_overlaps(
                [
                    ScoredEntity(i, m, res.scores[i])
                    for i, m in entity_map_decompose(res.ids)
                ],
                h, w,
            )
            ok = ok and (again.ids == res.ids).all() and again.scores == res.scores
        _report("resolver valid + idempotent + argmax oracle (500 sets)", ok)

    def test_loss_references(self):
        rng = rng_for(6060)
        worst_dice = 0.0
        worst_overlap = 0.0
        for _ in range(50):
            h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
            probs = rng.uniform(0.05, 0.95, size=(h, w))
            target = rng.integers(0, 2, size=(h, w)).astype(bool)
            worst_dice = max(
                worst_dice,
                grad_check(
                    lambda p, t=target: dice_loss(p, t),
                    lambda p, t=target: dice_loss_grad(p, t),
                    probs, 1e-6,
                ),
            )
            n = int(rng.integers(1, 4))
            while True:
                tmap = rng.integers(0, n + 1, size=(h, w)).astype(np.int64)
                if len(set(np.unique(tmap)) - {0}) == n:
                    break
            logits = rng.normal(size=(n, h, w))
            worst_overlap = max(
                worst_overlap,
                grad_check(
                    lambda z, t=tmap: overlap_suppression_loss(z, t),
                    lambda z, t=tmap: overlap_suppression_grad(z, t),
                    logits, 1e-6,
                ),
            )
        grads_ok = worst_dice <= 1e-4 and worst_overlap <= 1e-4

        decompose_ok = True
        softmax_ok = True
        for _ in range(20):
            feats = add_relative_coords(rng.normal(size=(3, 4, 3)))
            dims = [(4, feats.shape[2]), (3, 4), (1, 3)]
            from entitytk.losses import LayerWeights

            dyn = [LayerWeights(rng.normal(size=d), rng.normal(size=d[0])) for d in dims]
            sta = [LayerWeights(rng.normal(size=d), rng.normal(size=d[0])) for d in dims]
            y = rng.integers(0, 2, size=(3, 4)).astype(bool)
            weights = tuple(rng.uniform(0.05, 2.0, size=7))
            total, _ = kernel_bank_loss(feats, dyn, sta, y, weights)
            recomposed = 0.0
            for code, wgt in zip(PATH_CODES, weights):
                logits = mask_head_forward(feats, dyn, sta, PathSpec.from_code(code))
                recomposed += wgt * dice_loss(sigmoid(logits), y)
            decompose_ok = decompose_ok and abs(total - recomposed) <= 1e-12

            z = rng.normal(size=(4, 5, 5)) * 8
            softmax_ok = (
                softmax_ok
                and float(np.abs(softmax_channels(z).sum(axis=0) - 1.0).max()) <= 1e-12
            )

        defaults_ok = DEFAULT_PATH_WEIGHTS == (1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25)
        _report(
            "loss references (grads<=1e-4, decomposition<=1e-12, softmax, defaults)",
            grads_ok and decompose_ok and softmax_ok and defaults_ok,
            f"dice {worst_dice:.2e}, overlap {worst_overlap:.2e}",
        )

    def test_determinism_and_scale(self):
        start = time.perf_counter()
        one = run_benchmark(
            images=5000, height=480, width=640, entities=12, seed=99, threads=1
        )
        t_one = time.perf_counter() - start
        start = time.perf_counter()
        eight = run_benchmark(
            images=5000, height=480, width=640, entities=12, seed=99, threads=8
        )
        t_eight = time.perf_counter() - start
        identical = one.report.to_dict() == eight.report.to_dict()
        in_budget = t_one <= 120.0 and t_eight <= 120.0
        _report(
            "determinism & scale (5000 images, 1 vs 8 threads, <=120s)",
            identical and in_budget,
            f"{t_one:.0f}s / {t_eight:.0f}s, ap={one.report.ap:.4f}",
        )

    def test_conversion_pipeline(self, tmp_path):
        json_path, png_dir = write_panoptic_fixture(tmp_path, 10, seed=13, name="ten")
        out = tmp_path / "ten.entity.json"
        code = cli_main(
            ["convert", "--panoptic-json", str(json_path), "--png-dir", str(png_dir),
             "--out", str(out)]
        )
        dataset = load_dataset(out)
        source = json.loads(json_path.read_text())
        seg_counts = {
            a["image_id"]: len(a["segments_info"]) for a in source["annotations"]
        }
        counts_ok = code == 0 and all(
            len(img.entities) == seg_counts[img.image_id] for img in dataset.images
        )
        partition_ok = all(
            sum(e.area for e in img.entities) + int(img.void_mask().sum())
            == img.height * img.width
            for img in dataset.images
        )

        mini_paths = []
        for i in range(3):
            jp, pd = write_panoptic_fixture(tmp_path, 3, seed=20 + i, name=f"mini{i}")
            op = tmp_path / f"mini{i}.entity.json"
            assert cli_main(
                ["convert", "--panoptic-json", str(jp), "--png-dir", str(pd), "--out", str(op)]
            ) == 0
            mini_paths.append(str(op))
        byte_runs = []
        for run_idx in range(2):
            merged = tmp_path / f"merged{run_idx}.json"
            sampled = tmp_path / f"sampled{run_idx}.json"
            assert cli_main(["merge", "--in", *mini_paths, "--out", str(merged)]) == 0
            assert cli_main(
                ["presample", "--in", str(merged), "--n", "14", "--seed", "21",
                 "--out", str(sampled)]
            ) == 0
            byte_runs.append(sampled.read_bytes())
        reproducible = byte_runs[0] == byte_runs[1]
        _report(
            "conversion (counts, partition, merge+presample byte-reproducible)",
            counts_ok and partition_ok and reproducible,
        )
