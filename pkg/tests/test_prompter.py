from fractions import Fraction

import numpy as np
import pytest

from scalpkit import prompter, raster
from scalpkit.prompter import Box, PrompterConfig

from conftest import random_blob_mask


# --- skeletonize -----------------------------------------------------------

def test_skeleton_empty_mask():
    rec = prompter.skeletonize(np.zeros((5, 5), bool))
    assert rec.iterations == 0 and not rec.skeleton.any() and rec.layers == ()


def test_skeleton_single_pixel():
    m = np.zeros((7, 7), bool)
    m[2, 4] = True
    rec = prompter.skeletonize(m)
    assert rec.iterations == 1
    assert (rec.skeleton == m).all()


def test_skeleton_thin_line_is_itself():
    m = np.zeros((5, 9), bool)
    m[2, 1:8] = True
    rec = prompter.skeletonize(m)
    assert rec.iterations == 1
    assert (rec.skeleton == m).all()


def test_skeleton_solid_square_corners_plus_center():
    m = np.zeros((9, 9), bool)
    m[3:6, 3:6] = True
    rec = prompter.skeletonize(m)
    expected = np.zeros((9, 9), bool)
    expected[3, 3] = expected[3, 5] = expected[5, 3] = expected[5, 5] = expected[4, 4] = True
    assert rec.iterations == 2
    assert (rec.skeleton == expected).all()


def test_skeleton_layers_partition_and_bounds():
    rng = np.random.default_rng(17)
    for _ in range(10):
        m = random_blob_mask(rng, 40, 40)
        rec = prompter.skeletonize(m)
        union = np.zeros_like(m)
        for a in rec.layers:
            assert not (union & a).any()  # pairwise disjoint
            union |= a
        assert (union == rec.skeleton).all()
        assert not (rec.skeleton & ~m).any()  # skeleton within mask
        assert rec.iterations <= -(-min(m.shape) // 2) + 1


def test_skeleton_rejects_non_shrinking_element():
    origin_only = raster.disc(0)
    with pytest.raises(ValueError):
        prompter.skeletonize(np.ones((4, 4), bool), origin_only)


def test_skeleton_reconstruction_identity():
    rng = np.random.default_rng(23)
    for _ in range(20):
        m = random_blob_mask(rng, 48, 48)
        rec = prompter.skeletonize(m)
        assert (rec.reconstruct() == m).all()


# --- boxes -----------------------------------------------------------------

def test_boxes_empty_skeleton():
    rec = prompter.skeletonize(np.zeros((20, 20), bool))
    assert prompter.boxes_from_skeleton(rec, 10) == []


def test_box_centered_on_interior_pixel():
    m = np.zeros((40, 40), bool)
    m[20, 20] = True
    rec = prompter.skeletonize(m)
    (box,) = prompter.boxes_from_skeleton(rec, 10)
    assert (box.x_min, box.y_min, box.x_max, box.y_max) == (15, 15, 25, 25)
    assert box.score == 1


def test_box_clamped_at_corner_keeps_side_length():
    m = np.zeros((40, 40), bool)
    m[0, 0] = True
    rec = prompter.skeletonize(m)
    (box,) = prompter.boxes_from_skeleton(rec, 10)
    assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0, 0, 10, 10)


def test_box_requires_min_side():
    rec = prompter.skeletonize(np.ones((3, 3), bool))
    with pytest.raises(ValueError):
        prompter.boxes_from_skeleton(rec, 1)


# --- nms ---------------------------------------------------------------------

def test_nms_single_box():
    b = Box(0, 0, 10, 10, 3.0)
    assert prompter.nms([b], 0.3) == [b]


def test_nms_identical_boxes_keep_one():
    b = Box(2, 2, 12, 12, 1.0)
    assert prompter.nms([b, b], 0.9) == [b]


def test_nms_hand_iou_third():
    a = Box(0, 0, 10, 10, 5.0)
    b = Box(0, 5, 10, 15, 3.0)
    assert prompter.iou(a, b) == pytest.approx(1 / 3)
    assert prompter.nms([a, b], 0.3) == [a]  # 1/3 > 0.3 suppresses the weaker box
    assert prompter.nms([a, b], 0.5) == [a, b]


def _random_boxes(rng, k=40):
    boxes = []
    for _ in range(k):
        x, y = rng.integers(0, 50, 2)
        boxes.append(Box(int(x), int(y), int(x) + 10, int(y) + 10, float(rng.random())))
    return boxes


def test_nms_contract_random():
    rng = np.random.default_rng(31)
    for _ in range(10):
        boxes = _random_boxes(rng)
        kept = prompter.nms(boxes, 0.25)
        assert all(b in boxes for b in kept)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert prompter.iou(a, b) <= 0.25


def test_nms_order_independent():
    rng = np.random.default_rng(37)
    boxes = _random_boxes(rng)
    kept = prompter.nms(boxes, 0.3)
    for _ in range(5):
        shuffled = list(boxes)
        rng.shuffle(shuffled)
        assert prompter.nms(shuffled, 0.3) == kept


# --- mean point --------------------------------------------------------------

def test_mean_point_singleton():
    m = np.zeros((10, 10), bool)
    m[4, 7] = True
    assert prompter.mean_point(m, Box(0, 0, 10, 10)) == (4.0, 7.0)


def test_mean_point_two_pixels():
    m = np.zeros((10, 10), bool)
    m[2, 3] = m[4, 5] = True
    assert prompter.mean_point(m, Box(0, 0, 10, 10)) == (3.0, 4.0)


def test_mean_point_symmetric_plus():
    m = np.zeros((11, 11), bool)
    for dy, dx in raster.CROSS.offsets:
        m[5 + dy, 5 + dx] = True
    assert prompter.mean_point(m, Box(0, 0, 11, 11)) == (5.0, 5.0)


def test_mean_point_empty_box_raises():
    with pytest.raises(prompter.EmptyBox):
        prompter.mean_point(np.zeros((10, 10), bool), Box(0, 0, 5, 5))


def test_mean_point_matches_bruteforce():
    rng = np.random.default_rng(41)
    for _ in range(50):
        m = rng.random((30, 30)) < 0.3
        x0, y0 = rng.integers(0, 22, 2)
        box = Box(int(x0), int(y0), int(x0) + 8, int(y0) + 8)
        total, sx, sy = 0, 0, 0
        for i in range(box.x_min, box.x_max):
            for j in range(box.y_min, box.y_max):
                if m[i, j]:
                    total += 1
                    sx += i
                    sy += j
        if total == 0:
            with pytest.raises(prompter.EmptyBox):
                prompter.mean_point(m, box)
            continue
        got = prompter.mean_point(m, box)
        assert abs(got[0] - Fraction(sx, total)) <= 1e-12
        assert abs(got[1] - Fraction(sy, total)) <= 1e-12


# --- build_prompts -------------------------------------------------------------

def test_build_prompts_empty_mask():
    ps = prompter.build_prompts(np.zeros((20, 20), bool), PrompterConfig(num_negatives=5), seed=1)
    assert ps.positives == ()
    assert len(ps.negatives) == 5


def test_build_prompts_line_spacing():
    m = np.zeros((20, 40), bool)
    m[10, :] = True
    ps = prompter.build_prompts(m, PrompterConfig(n=10, iou_threshold=0.0, num_negatives=0), seed=0)
    rows = sorted(r for r, _ in ps.positives)
    cols = sorted(c for _, c in ps.positives)
    assert len(ps.positives) == 4  # ceil(40 / 10) non-overlapping boxes
    assert all(r == 10.0 for r in rows)
    assert cols == [4.5, 14.5, 24.5, 34.5]


def test_build_prompts_positives_inside_hair_boxes():
    rng = np.random.default_rng(43)
    for _ in range(5):
        m = random_blob_mask(rng, 48, 48)
        if not m.any():
            continue
        ps = prompter.build_prompts(m, PrompterConfig(), seed=7)
        for r, c in ps.positives:
            window = m[max(int(r) - 5, 0) : int(r) + 6, max(int(c) - 5, 0) : int(c) + 6]
            assert window.any()


def test_build_prompts_negatives_on_background_and_deterministic():
    rng = np.random.default_rng(47)
    m = random_blob_mask(rng, 32, 32)
    a = prompter.build_prompts(m, PrompterConfig(num_negatives=8), seed=5)
    b = prompter.build_prompts(m, PrompterConfig(num_negatives=8), seed=5)
    assert a == b
    for r, c in a.negatives:
        assert not m[r, c]
    assert len(set(a.negatives)) == 8  # sampled without replacement


def test_build_prompts_insufficient_background():
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    with pytest.raises(prompter.InsufficientBackground):
        prompter.build_prompts(m, PrompterConfig(num_negatives=2), seed=0)


def test_build_prompts_max_positives_cap():
    m = np.zeros((20, 60), bool)
    m[10, :] = True
    ps = prompter.build_prompts(m, PrompterConfig(iou_threshold=0.0, max_positives=2, num_negatives=0), seed=0)
    assert len(ps.positives) == 2


def test_prompts_json_roundtrip():
    ps = prompter.PromptSet(((1.5, 2.25),), ((3, 4), (5, 6)))
    text = prompter.prompts_to_json(ps, 10)
    assert '"row"' in text and '"col"' in text and '"n": 10' in text
    assert prompter.prompts_from_json(text) == ps
