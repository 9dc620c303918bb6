import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scrubsim import configs, perception, world
from scrubsim.perception import (
    DetectionMiss, ErrorModel, Instruction, Mask, NoSuchTarget, RESOLUTION,
    UnknownInstrument, UnparseableCommand, calibrated_error_model, detect,
    detection_pr, ground_truth_masks, mask_metrics, parse_command, render,
    rle_decode, rle_encode, segment)


@pytest.fixture(scope="module")
def scene():
    return world.spawn_scene(configs.scenario_for_task("on_table"), 0)


@pytest.fixture(scope="module")
def camera():
    return configs.CameraConfig()


def target_query(scene):
    label = scene.instruments[0].spec.label
    return Instruction("give", label, f"give me {label}")


def test_render_shape_and_determinism(scene, camera):
    a = render(scene, camera)
    b = render(scene, camera)
    assert a.pixels.shape == (RESOLUTION, RESOLUTION, 3)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_render_shows_each_instrument(scene, camera):
    # every instrument's silhouette must put its tint into the image
    img = render(scene, camera)
    table = img.pixels[0, 0]
    for inst in scene.instruments:
        gt, _ = ground_truth_masks(scene, camera,
                                   Instruction("give", inst.spec.label, ""))
        assert gt.bitmap.sum() > 0
        px = img.pixels[gt.bitmap]
        assert np.any(np.any(px != table, axis=-1))


def test_detect_zero_error_matches_silhouette_bbox(scene, camera):
    q = target_query(scene)
    box, hand_box = detect(scene, camera, q, ErrorModel())
    gt, gt_hand = ground_truth_masks(scene, camera, q)
    ys, xs = np.where(gt.bitmap)
    # detector boxes carry a fixed 2 px pad around the silhouette extents
    assert (box.x_min, box.y_min, box.x_max, box.y_max) == (
        xs.min() - 2, ys.min() - 2, xs.max() + 3, ys.max() + 3)
    assert box.class_id == scene.instruments[0].spec.visual_class


def test_detect_unknown_target_raises(scene, camera):
    with pytest.raises(NoSuchTarget):
        detect(scene, camera, Instruction("give", "banana", ""), ErrorModel())


def test_detect_certain_miss(scene, camera):
    errors = ErrorModel(detector_miss_rate=1.0)
    with pytest.raises(DetectionMiss):
        detect(scene, camera, target_query(scene), errors,
               np.random.default_rng(0))


def test_segment_zero_error_is_exact(scene, camera):
    q = target_query(scene)
    boxes = detect(scene, camera, q, ErrorModel())
    tmask, hmask = segment(scene, camera, q, boxes, ErrorModel())
    gt_t, gt_h = ground_truth_masks(scene, camera, q)
    np.testing.assert_array_equal(tmask.bitmap, gt_t.bitmap)
    np.testing.assert_array_equal(hmask.bitmap, gt_h.bitmap)


def _random_mask(rng):
    bm = np.zeros((RESOLUTION, RESOLUTION), dtype=bool)
    y, x = rng.integers(0, 200, 2)
    h, w = rng.integers(4, 24, 2)
    bm[y:y + h, x:x + w] = True
    return bm


def test_dice_iou_identity(rng):
    for _ in range(200):
        a = Mask(_random_mask(rng), "target_instrument")
        b = Mask(_random_mask(rng), "target_instrument")
        dice, iou, mae = mask_metrics(a, b)
        assert abs(dice - 2 * iou / (1 + iou)) <= 1e-12


def test_mask_metrics_frozen_oracle():
    # 2x2 overlap inside 3x3 vs 2x2: |A|=9, |B|=4, |A∩B|=4 scaled case
    a = np.zeros((RESOLUTION, RESOLUTION), dtype=bool)
    b = np.zeros((RESOLUTION, RESOLUTION), dtype=bool)
    a[:3, :3] = True
    b[1:3, 1:3] = True
    dice, iou, mae = mask_metrics(Mask(a, "target_instrument"),
                                  Mask(b, "target_instrument"))
    assert abs(iou - 4 / 9) <= 1e-15
    assert abs(dice - 8 / 13) <= 1e-15
    assert abs(mae - 5 / (RESOLUTION * RESOLUTION)) <= 1e-15


def test_mask_metrics_both_empty():
    z = np.zeros((RESOLUTION, RESOLUTION), dtype=bool)
    dice, iou, mae = mask_metrics(Mask(z, "hand"), Mask(z, "hand"))
    assert (dice, iou, mae) == (1.0, 1.0, 0.0)


def test_parse_command_templates():
    labels = ["7mm clamp", "forceps"]
    for text, verb, label in [
        ("give me the 7mm clamp", "give", "7mm clamp"),
        ("give me 7mm clamp", "give", "7mm clamp"),
        ("Lift the forceps", "lift", "forceps"),
        ("lift forceps", "lift", "forceps"),
    ]:
        out = parse_command(text, labels)
        assert (out.verb, out.instrument_label) == (verb, label)


def test_parse_command_errors():
    with pytest.raises(UnparseableCommand):
        parse_command("hand over the forceps please", ["forceps"])
    with pytest.raises(UnknownInstrument):
        parse_command("give me the scalpel", ["forceps"])


def test_parse_command_seeded_substitution():
    errors = ErrorModel(command_error_rate=1.0)
    out = parse_command("give me the forceps", ["forceps", "7mm clamp"],
                        errors, np.random.default_rng(0))
    assert out.instrument_label == "7mm clamp"


def test_calibrated_error_model_values():
    em = calibrated_error_model()
    assert em.detector_miss_rate == pytest.approx(0.006)
    assert em.detector_false_rate == pytest.approx(0.008)
    assert em.command_error_rate == pytest.approx(0.005)


def test_command_accuracy_monte_carlo():
    errors = calibrated_error_model()
    rng = np.random.default_rng(99)
    labels = [s for s in configs.SIX_INSTRUMENTS]
    ok = 0
    n = 4000
    for i in range(n):
        want = labels[i % len(labels)]
        out = parse_command(f"give me the {want}", labels, errors, rng)
        ok += out.instrument_label == want
    assert abs(ok / n - 0.995) < 0.005


@settings(deadline=None, max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_rle_round_trip(seed):
    rng = np.random.default_rng(seed)
    bm = rng.random((RESOLUTION, RESOLUTION)) < rng.random()
    runs = rle_encode(bm)
    assert sum(runs) == RESOLUTION * RESOLUTION
    np.testing.assert_array_equal(rle_decode(runs), bm)


def test_rle_starts_with_zero_run():
    bm = np.ones((RESOLUTION, RESOLUTION), dtype=bool)
    runs = rle_encode(bm)
    assert runs[0] == 0  # leading zero-run is explicit


def test_detection_pr_conventions():
    from scrubsim.perception import BoundingBox
    gt = [BoundingBox(1, 1.0, 10, 10, 30, 30),
          BoundingBox(2, 1.0, 100, 100, 130, 130)]
    # one good match, one wrong-class box, one unmatched prediction
    preds = [BoundingBox(1, 0.9, 11, 11, 31, 31),
             BoundingBox(3, 0.8, 101, 101, 131, 131),
             BoundingBox(1, 0.7, 200, 200, 210, 210)]
    precision, recall = detection_pr(preds, gt)
    assert precision == pytest.approx(1 / 3)
    assert recall == pytest.approx(1 / 2)


def test_render_performance(scene, camera):
    import time
    render(scene, camera)  # warm caches
    t0 = time.time()
    for _ in range(30):
        render(scene, camera)
    per_frame = (time.time() - t0) / 30
    assert per_frame < 0.05
