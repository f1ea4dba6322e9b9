"""Tactile image pipeline: difference images, contour tracing, calibration.

Most expected values are worked by hand; the contour and area cases use
small enough masks that the border sequence can be enumerated directly.
"""

import numpy as np
import pytest

from vialbench.core import TactileConfig, load_config
from vialbench.tactile import (CalibrationError, TactileDecision,
                               apply_calibration, binarize, calibrate_mapping,
                               difference_image, extract_contacts,
                               find_contact, load_calibration, normalize,
                               polygon_area, save_calibration, track_deviation)


def frame(values):
    return np.asarray(values, dtype=float)


# --- difference image -----------------------------------------------------


def test_identical_frames_zero_delta():
    f = frame(np.random.default_rng(1).integers(0, 255, (8, 8)))
    delta = difference_image(f, [f.copy(), f.copy()])
    assert np.all(delta == 0)


def test_two_reference_mean():
    refs = [np.full((4, 4), 10.0), np.full((4, 4), 20.0)]
    delta = difference_image(np.full((4, 4), 30.0), refs)
    # (|30-10| + |30-20|) / 2
    assert np.all(delta == 15.0)


def test_single_reference_exact():
    ref = frame([[0, 50], [100, 200]])
    cur = frame([[10, 40], [150, 200]])
    assert np.array_equal(difference_image(cur, [ref]), np.abs(ref - cur))


def test_delta_nonnegative():
    gen = np.random.default_rng(5)
    refs = [gen.integers(0, 255, (16, 16)).astype(float) for _ in range(3)]
    delta = difference_image(gen.integers(0, 255, (16, 16)).astype(float), refs)
    assert delta.min() >= 0


def test_empty_reference_set_rejected():
    with pytest.raises(ValueError):
        difference_image(np.zeros((4, 4)), [])


# --- normalize + threshold ------------------------------------------------


def test_binarize_example():
    delta = frame([0.0, 5.0, 10.0])
    b = binarize(normalize(delta), 0.5)
    assert b.tolist() == [0, 1, 1]


def test_constant_delta_binarizes_to_zero():
    b = binarize(normalize(np.full((3, 3), 7.0)), 0.35)
    assert not b.any()


def test_threshold_zero_accepts_everything():
    delta = frame([0.0, 1.0, 3.0])
    assert binarize(normalize(delta), 0.0).tolist() == [1, 1, 1]


def test_normalized_range():
    gen = np.random.default_rng(2)
    norm = normalize(gen.random((32, 32)) * 90)
    assert norm.min() == 0.0
    assert norm.max() == 1.0
    b = binarize(norm, 0.35)
    assert set(np.unique(b)) <= {0, 1}


# --- contour tracing and areas --------------------------------------------


def test_blank_image_no_contacts():
    assert extract_contacts(np.zeros((10, 10), dtype=int), 0.0) == []


def test_filled_block_border():
    img = np.zeros((7, 7), dtype=int)
    img[2:5, 2:5] = 1
    regions = extract_contacts(img, 0.0)
    assert len(regions) == 1
    border = set(regions[0].border)
    expected = {(2, 2), (2, 3), (2, 4), (3, 4), (4, 4), (4, 3), (4, 2), (3, 2)}
    assert border == expected
    assert len(regions[0].border) == 8
    # border ring of a 3x3 block encloses a 2x2 square of pixel centers
    assert regions[0].area == 4.0
    assert regions[0].centroid == (3.0, 3.0)


def test_two_disjoint_blocks():
    img = np.zeros((12, 12), dtype=int)
    img[1:4, 1:4] = 1
    img[7:10, 6:9] = 1
    assert len(extract_contacts(img, 0.0)) == 2


def test_diagonal_pixels_are_one_component():
    img = np.zeros((5, 5), dtype=int)
    img[1, 1] = 1
    img[2, 2] = 1
    assert len(extract_contacts(img, 0.0)) == 1  # 8-connectivity


def test_shoelace_unit_square():
    assert polygon_area([(0, 0), (0, 1), (1, 1), (1, 0)]) == 1.0


def test_shoelace_triangle():
    # base 4, height 3 -> area 6; border vertices are (row, col)
    assert polygon_area([(0, 0), (0, 4), (3, 0)]) == 6.0


def test_degenerate_polygons():
    assert polygon_area([(2, 3)]) == 0.0
    assert polygon_area([(2, 3), (5, 9)]) == 0.0


def test_shoelace_cyclic_and_translation_invariant():
    poly = [(0, 0), (0, 4), (2, 5), (3, 0)]
    base = polygon_area(poly)
    for k in range(1, len(poly)):
        rolled = poly[k:] + poly[:k]
        assert polygon_area(rolled) == base
    shifted = [(r + 11, c + 7) for r, c in poly]
    assert polygon_area(shifted) == base


def test_centroid_is_vertex_mean():
    img = np.zeros((9, 9), dtype=int)
    img[2:7, 3:6] = 1
    region = extract_contacts(img, 0.0)[0]
    pts = np.asarray(region.border, dtype=float)
    assert region.centroid[0] == pytest.approx(pts[:, 1].mean())
    assert region.centroid[1] == pytest.approx(pts[:, 0].mean())
    # the vertex mean of a triangle is not its area centroid
    tri = np.array([(0.0, 0.0), (0.0, 4.0), (3.0, 0.0)])
    assert tuple(tri.mean(axis=0)) == (1.0, 4.0 / 3.0)


def test_min_area_filters_speckles():
    gen = np.random.default_rng(9)
    img = (gen.random((20, 20)) > 0.93).astype(int)  # isolated specks
    assert extract_contacts(img, 25.0) == []


def test_centroid_inside_bounding_box():
    gen = np.random.default_rng(4)
    for _ in range(20):
        img = np.zeros((24, 24), dtype=int)
        r0, c0 = gen.integers(2, 10, 2)
        h, w = gen.integers(3, 10, 2)
        img[r0:r0 + h, c0:c0 + w] = 1
        for region in extract_contacts(img, 0.0):
            pts = np.asarray(region.border)
            cx, cy = region.centroid
            assert pts[:, 1].min() <= cx <= pts[:, 1].max()
            assert pts[:, 0].min() <= cy <= pts[:, 0].max()


def test_regions_sorted_largest_first():
    img = np.zeros((20, 20), dtype=int)
    img[1:4, 1:4] = 1
    img[8:16, 8:16] = 1
    regions = extract_contacts(img, 0.0)
    assert regions[0].area > regions[1].area


def test_pipeline_deterministic():
    gen = np.random.default_rng(8)
    img = (gen.random((30, 30)) > 0.6).astype(int)
    a = extract_contacts(img, 4.0)
    b = extract_contacts(img, 4.0)
    assert a == b


# --- OLS calibration ------------------------------------------------------


def _normalized_grid():
    nx, ny = np.meshgrid(np.linspace(0.1, 0.9, 4), np.linspace(0.1, 0.9, 4))
    return np.stack([nx.ravel(), ny.ravel()], axis=1)


def test_identity_map_recovered():
    pts = _normalized_grid()
    cal = calibrate_mapping(pts * np.array([159.0, 159.0]), pts, 160, 160)
    assert np.allclose(cal.gain, np.eye(2), atol=1e-9)
    assert np.allclose(cal.bias, 0, atol=1e-9)
    assert cal.residual_rms <= 1e-9


def test_known_affine_recovered():
    A = np.array([[0.02, 0.0], [0.0, 0.018]])
    b = np.array([0.001, -0.002])
    pts = _normalized_grid()
    offsets = pts @ A.T + b
    cal = calibrate_mapping(pts * 159.0, offsets, 160, 160)
    assert np.allclose(cal.gain, A, atol=1e-6)
    assert np.allclose(cal.bias, b, atol=1e-6)
    assert cal.residual_rms <= 1e-6


def test_noise_shows_up_as_residual():
    sigma = 2.0e-4
    gen = np.random.default_rng(3)
    pts = gen.random((100, 2))
    offsets = pts @ np.array([[0.02, 0.0], [0.0, 0.018]]).T
    offsets = offsets + gen.normal(0.0, sigma, offsets.shape)
    cal = calibrate_mapping(pts * 159.0, offsets, 160, 160)
    assert 0.5 * sigma <= cal.residual_rms <= 2.0 * sigma


def test_collinear_samples_rejected():
    px = np.array([[10.0, 10.0], [50.0, 50.0], [90.0, 90.0]])
    offs = np.zeros((3, 2))
    with pytest.raises(CalibrationError):
        calibrate_mapping(px, offs, 160, 160)


def test_too_few_samples_rejected():
    with pytest.raises(CalibrationError):
        calibrate_mapping(np.array([[1.0, 2.0], [3.0, 4.0]]),
                          np.zeros((2, 2)), 160, 160)


def test_apply_calibration_normalizes_first():
    pts = _normalized_grid()
    cal = calibrate_mapping(pts * 159.0, pts * 0.01, 160, 160)
    out = apply_calibration(cal, (159.0, 0.0), 160, 160)
    assert out == pytest.approx([0.01, 0.0], abs=1e-9)


def test_calibration_file_round_trip(tmp_path):
    pts = _normalized_grid()
    cal = calibrate_mapping(pts * 159.0, pts * 0.01 + 0.001, 160, 160)
    path = tmp_path / "f.cal"
    save_calibration(path, {"left": cal, "right": cal})
    back = load_calibration(path)
    assert set(back) == {"left", "right"}
    assert np.array_equal(back["left"].gain, cal.gain)
    assert np.array_equal(back["left"].bias, cal.bias)
    assert back["left"].residual_rms == cal.residual_rms


def test_calibration_file_bad_magic(tmp_path):
    path = tmp_path / "junk.cal"
    path.write_text("NOTACAL\n")
    with pytest.raises(ValueError):
        load_calibration(path)


# --- full-frame pipeline and slip tracking --------------------------------

CFG = TactileConfig()


def _blob_frame(cx, cy, radius=16, size=(160, 160), level=235.0, base=90.0):
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.full(size, base)
    img[np.hypot(xx - cx, yy - cy) <= radius] = level
    return img


def test_find_contact_locates_blob():
    refs = [np.full((160, 160), 90.0) for _ in range(3)]
    region = find_contact(_blob_frame(60.0, 100.0), refs, CFG)
    assert region is not None
    assert region.centroid[0] == pytest.approx(60.0, abs=1.0)
    assert region.centroid[1] == pytest.approx(100.0, abs=1.0)


def test_find_contact_rejects_noise_only_frames():
    gen = np.random.default_rng(11)
    refs = [np.full((160, 160), 90.0) + gen.normal(0, 2, (160, 160))
            for _ in range(4)]
    cur = np.full((160, 160), 90.0) + gen.normal(0, 2, (160, 160))
    # raw differences stay far below the contact floor, so the normalize
    # step must not get the chance to amplify them into a phantom blob
    assert find_contact(cur, refs, CFG) is None


def test_track_neutral_continue():
    refs = {f: [np.full((160, 160), 90.0)] for f in ("left", "right")}
    frames = {f: _blob_frame(80.0, 80.0) for f in ("left", "right")}
    neutral = {f: find_contact(frames[f], refs[f], CFG).centroid
               for f in frames}
    reading = track_deviation(frames, refs, neutral, CFG)
    assert reading.decision is TactileDecision.CONTINUE
    assert reading.displacement_px == pytest.approx(0.0, abs=1e-9)


def test_track_shift_past_threshold_stops():
    refs = {f: [np.full((160, 160), 90.0)] for f in ("left", "right")}
    start = {f: _blob_frame(80.0, 80.0) for f in ("left", "right")}
    neutral = {f: find_contact(start[f], refs[f], CFG).centroid for f in start}
    shift = CFG.stop_px + 1.0
    moved = {f: _blob_frame(80.0 + shift, 80.0) for f in start}
    reading = track_deviation(moved, refs, neutral, CFG)
    assert reading.decision is TactileDecision.STOP
    assert reading.displacement_px > CFG.stop_px


def test_track_lost_contact():
    refs = {f: [np.full((160, 160), 90.0)] for f in ("left", "right")}
    gone = {f: np.full((160, 160), 90.0) for f in ("left", "right")}
    reading = track_deviation(gone, refs, {"left": (0, 0), "right": (0, 0)},
                              CFG)
    assert reading.decision is TactileDecision.LOST_CONTACT
    assert reading.displacement_px is None


def test_track_reports_metric_displacement():
    pts = _normalized_grid()
    cal = calibrate_mapping(pts * 159.0, pts * CFG.span, 160, 160)
    cals = {"left": cal, "right": cal}
    refs = {f: [np.full((160, 160), 90.0)] for f in ("left", "right")}
    start = {f: _blob_frame(80.0, 80.0) for f in ("left", "right")}
    neutral = {f: find_contact(start[f], refs[f], CFG).centroid for f in start}
    px_shift = 10.0
    moved = {f: _blob_frame(80.0 + px_shift, 80.0) for f in start}
    reading = track_deviation(moved, refs, neutral, CFG, cals)
    assert reading.displacement_m is not None
    expected = px_shift / 159.0 * CFG.span
    assert reading.displacement_m == pytest.approx(expected, rel=0.15)
    # without a calibration the metric channel stays empty
    assert track_deviation(moved, refs, neutral, CFG).displacement_m is None


def test_track_sub_threshold_shift_continues():
    refs = {f: [np.full((160, 160), 90.0)] for f in ("left", "right")}
    start = {f: _blob_frame(80.0, 80.0) for f in ("left", "right")}
    neutral = {f: find_contact(start[f], refs[f], CFG).centroid for f in start}
    moved = {f: _blob_frame(80.0 + CFG.stop_px - 2.0, 80.0) for f in start}
    assert track_deviation(moved, refs, neutral,
                           CFG).decision is TactileDecision.CONTINUE


def test_default_noise_never_false_stops():
    """Sensor noise alone must not trip the slip monitor."""
    cfg = load_config()
    assert cfg.noise.sigma_pixel <= 3.0
    gen = np.random.default_rng(17)
    base = np.full((160, 160), 90.0)
    refs = {f: [base + gen.normal(0, cfg.noise.sigma_pixel, base.shape)
                for _ in range(cfg.tactile.n_reference)]
            for f in ("left", "right")}
    start = {f: _blob_frame(80.0, 80.0) + gen.normal(
        0, cfg.noise.sigma_pixel, base.shape) for f in ("left", "right")}
    neutral = {f: find_contact(start[f], refs[f], cfg.tactile).centroid
               for f in start}
    for _ in range(25):
        frames = {f: _blob_frame(80.0, 80.0) + gen.normal(
            0, cfg.noise.sigma_pixel, base.shape) for f in ("left", "right")}
        reading = track_deviation(frames, refs, neutral, cfg.tactile)
        assert reading.decision is TactileDecision.CONTINUE
