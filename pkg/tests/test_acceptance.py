"""Acceptance gate: nine numbered release criteria, one verdict line each.

Run with ``pytest tests/test_acceptance.py -v`` to get one PASSED/FAILED
line per criterion (add ``-s`` for the measured numbers behind each one).
The campaign criteria (7/8) share one 200-trial-per-modality experiment.
"""

import time

import numpy as np
import pytest

from vialbench.bench import run_experiment
from vialbench.cli import main as cli_main
from vialbench.control import MODALITIES
from vialbench.core import CameraIntrinsics, CnnConfig, Pose3, RngStream
from vialbench.force import (ForceBuffer, ForceDecision, buffer_capacity,
                             init_baseline, update_and_check)
from vialbench.geometry import pixel_to_world, world_to_pixel
from vialbench.perception import (cht_params_for, detect_circles,
                                  generate_labeled_dataset, save_weights)
from vialbench.perception.cnn import (forward, init_weights, loss_and_grads,
                                      numeric_gradient)
from vialbench.perception.hough import ChtParams
from vialbench.search import make_search, next_trial_positions
from vialbench.simworld import render_topdown, reset_trial, slot_centers
from vialbench.tactile import (binarize, calibrate_mapping, difference_image,
                               normalize, polygon_area)


@pytest.fixture(scope="module")
def campaign(config, trained):
    weights = trained[0]
    t0 = time.perf_counter()
    result = run_experiment(config, 200, 3, weights=weights)
    return result, time.perf_counter() - t0


def test_criterion_1_projection_round_trip():
    intr = CameraIntrinsics(600.0, 600.0, 320.0, 240.0)
    cam = Pose3(0.0, 0.0, 0.8)
    t0 = time.perf_counter()

    # the three worked examples, exact
    assert pixel_to_world(320.0, 240.0, intr, cam, 0.05) == (0.0, 0.0, 0.05)
    x, _, _ = pixel_to_world(380.0, 240.0, intr, cam, 0.05)
    assert x == pytest.approx(0.075, abs=1e-15)
    _, y, _ = pixel_to_world(320.0, 360.0, intr, cam, 0.05)
    assert y == pytest.approx(0.15, abs=1e-15)

    gen = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        plane = gen.uniform(0.0, 0.2)
        pose = Pose3(gen.uniform(-0.5, 0.5), gen.uniform(-0.5, 0.5),
                     plane + gen.uniform(0.1, 1.0))
        u, v = gen.uniform(0.0, 640.0), gen.uniform(0.0, 480.0)
        x0, y0, _ = pixel_to_world(u, v, intr, pose, plane)
        u1, v1 = world_to_pixel(x0, y0, plane, intr, pose)
        x1, y1, _ = pixel_to_world(u1, v1, intr, pose, plane)
        worst = max(worst, float(np.hypot(x1 - x0, y1 - y0)))
    elapsed = time.perf_counter() - t0

    assert worst <= 1e-9
    assert elapsed < 1.0
    print(f"\ncriterion 1: worst round trip {worst:.2e} m, "
          f"{elapsed * 1e3:.0f} ms for 1000 poses")


def test_criterion_2_circle_detection(config):
    t0 = time.perf_counter()

    # 50 seeded synthetic single-circle images
    params = ChtParams(r_min=6, r_max=14)
    gen = np.random.default_rng(4242)
    yy, xx = np.mgrid[0:128, 0:128]
    worst_center = worst_radius = 0.0
    for _ in range(50):
        cu, cv = gen.uniform(30.0, 98.0, 2)
        r = gen.uniform(7.0, 13.0)
        d = np.hypot(xx - cu, yy - cv)
        img = 20.0 + np.clip(r - d + 0.5, 0.0, 1.0) * 180.0
        img += gen.normal(0.0, 2.0, img.shape)
        top = detect_circles(img, params)[0]
        worst_center = max(worst_center, float(np.hypot(top.u - cu, top.v - cv)))
        worst_radius = max(worst_radius, abs(top.r - r))
    assert worst_center <= 2.0
    assert worst_radius <= 2.0

    # 50 rendered racks: every true slot matched within 3 px
    rack_params = cht_params_for(config, config.camera.z)
    intr = config.camera.intrinsics()
    worst_slot = 0.0
    for seed in range(50):
        scene = reset_trial(config, RngStream(1000 + seed))
        image = render_topdown(scene, config.camera.pose())
        cands = detect_circles(image, rack_params)
        assert cands
        centers = slot_centers(scene)
        su, sv = world_to_pixel(centers[:, 0], centers[:, 1],
                                config.rack.height, intr,
                                scene.last_render_cam)
        cu = np.array([c.u for c in cands])
        cv = np.array([c.v for c in cands])
        gap = np.hypot(su[:, None] - cu[None, :],
                       sv[:, None] - cv[None, :]).min(axis=1).max()
        worst_slot = max(worst_slot, float(gap))
    elapsed = time.perf_counter() - t0

    assert worst_slot <= 3.0
    assert elapsed < 30.0
    print(f"\ncriterion 2: synthetic worst center {worst_center:.2f} px / "
          f"radius {worst_radius:.2f} px; rack worst slot gap "
          f"{worst_slot:.2f} px; {elapsed:.1f} s")


def test_criterion_3_classifier(config, trained):
    weights, history, n_examples, train_wall = trained

    # gradient check against central differences
    cnn_cfg = CnnConfig()
    gen = np.random.default_rng(7)
    w = init_weights(gen, cnn_cfg).astype(np.float64)
    x = gen.random((2, 1, cnn_cfg.crop_size, cnn_cfg.crop_size))
    targets = np.array([[1.0, 0.0], [0.0, 1.0]])
    mask = np.array([[1.0, 1.0], [1.0, 0.0]])
    _, grads = loss_and_grads(w, x, targets, mask)
    picker = np.random.default_rng(8)
    worst_rel = 0.0
    for name, arr in w.tensors():
        analytic = grads[name]
        for _ in range(40):
            idx = tuple(int(picker.integers(s)) for s in arr.shape)
            num = numeric_gradient(w, x, targets, mask, name, idx, eps=1e-6)
            ana = float(analytic[idx])
            worst_rel = max(worst_rel,
                            abs(ana - num) / max(abs(num), abs(ana), 1e-8))
    assert worst_rel <= 1e-3

    # held-out three-way accuracy on a fresh 10k-crop dataset
    crops, labels = generate_labeled_dataset(config, RngStream(987),
                                             n_scenes=215)
    assert len(labels) >= 10_000
    crops, labels = crops[:10_000], labels[:10_000]
    preds = np.empty(len(labels), dtype=np.int64)
    for i in range(0, len(crops), 256):
        probs, _ = forward(crops[i:i + 256], weights)
        chunk = np.where(probs[:, 0] < config.cnn.theta_rack, 0,
                         np.where(probs[:, 1] > config.cnn.theta_occ, 1, 2))
        preds[i:i + len(chunk)] = chunk
    accuracy = float((preds == labels).mean())

    assert accuracy >= 0.90
    assert train_wall <= 300.0
    print(f"\ncriterion 3: gradient worst rel err {worst_rel:.2e}; held-out "
          f"accuracy {accuracy:.4f} on 10000 crops; trained on {n_examples} "
          f"crops in {train_wall:.0f} s (final loss {history[-1]:.4f})")


def test_criterion_4_tactile_math():
    # mean absolute difference against the reference stack
    refs = [np.full((2, 2), 10.0), np.full((2, 2), 20.0)]
    np.testing.assert_array_equal(difference_image(np.full((2, 2), 30.0), refs),
                                  np.full((2, 2), 15.0))

    # normalize then threshold at 0.5
    delta = np.array([[0.0, 5.0, 10.0]])
    np.testing.assert_array_equal(binarize(normalize(delta), 0.5),
                                  np.array([[0, 1, 1]]))

    # shoelace areas on the listed polygons
    square = [(0, 0), (1, 0), (1, 1), (0, 1)]
    triangle = [(0, 0), (0, 4), (3, 0)]
    assert polygon_area(square) == 1.0
    assert polygon_area(triangle) == 6.0

    # border centroid is the vertex mean
    vx = float(np.mean([p[0] for p in triangle]))
    vy = float(np.mean([p[1] for p in triangle]))
    assert (vx, vy) == (1.0, 4.0 / 3.0)

    # least squares recovers a known affine map from noiseless samples
    true_gain = np.array([[0.02, 0.0], [0.0, 0.018]])
    true_bias = np.array([0.001, -0.002])
    W = H = 160
    px = np.array([(u, v) for u in (20.0, 80.0, 140.0)
                   for v in (30.0, 90.0, 150.0)])
    n = px / np.array([W - 1.0, H - 1.0])
    offsets = n @ true_gain.T + true_bias
    cal = calibrate_mapping(px, offsets, W, H)
    np.testing.assert_allclose(cal.gain, true_gain, atol=1e-6)
    np.testing.assert_allclose(cal.bias, true_bias, atol=1e-6)
    assert cal.residual_rms < 1e-9
    print("\ncriterion 4: difference/threshold/shoelace/centroid/least-squares "
          "examples all exact")


def test_criterion_5_force_monitor(config):
    fc = config.force
    capacity = buffer_capacity(fc)
    quiet = np.array([0.0, 0.0, -10.0])
    baseline = init_baseline([quiet] * capacity, fc)

    def fill_and_check(sample):
        buf = ForceBuffer(capacity)
        decision = ForceDecision.CONTINUE
        for _ in range(capacity):
            decision, _ = update_and_check(buf, sample, baseline, fc)
        return decision

    # strict boundary: 20% of the baseline magnitude is still Continue
    assert fill_and_check(np.array([0.0, 0.0, -12.0])) is ForceDecision.CONTINUE
    assert fill_and_check(np.array([0.0, 0.0, -12.001])) is ForceDecision.STOP
    assert fill_and_check(np.array([0.0, 0.0, -8.5])) is ForceDecision.CONTINUE
    assert fill_and_check(np.array([0.0, 0.0, -12.5])) is ForceDecision.STOP

    # a noiseless contact-free descent never stops
    buf = ForceBuffer(capacity)
    stops = 0
    for _ in range(1_000_000):
        decision, _ = update_and_check(buf, quiet, baseline, fc)
        stops += decision is ForceDecision.STOP
    assert stops == 0

    # a 2x-threshold load step is caught within one buffer length
    buf = ForceBuffer(capacity)
    for _ in range(capacity):
        update_and_check(buf, quiet, baseline, fc)
    step = np.array([0.0, 0.0, -14.0])  # twice the 2 N deviation band
    for ticks in range(1, capacity + 1):
        decision, _ = update_and_check(buf, step, baseline, fc)
        if decision is ForceDecision.STOP:
            break
    assert decision is ForceDecision.STOP
    assert ticks <= capacity
    print(f"\ncriterion 5: boundary strict, 1e6 quiet ticks with 0 stops, "
          f"2x step caught after {ticks}/{capacity} ticks")


def test_criterion_6_search_matches_oracle(config):
    spacing = config.search.spacing
    t0 = time.perf_counter()
    grid = [0.001, 0.004, 0.0075, 0.013, 0.02]
    for r_w in grid:
        for r_h in grid:
            emitted: list[tuple[float, float]] = []
            by_ring: dict[int, set] = {}
            state = make_search((0.0, 0.0), r_w, r_h, spacing)
            while True:
                batch = next_trial_positions(state)
                if not batch:
                    break
                ring = state.expansion - 1
                cells = [(round(float(x), 12), round(float(y), 12))
                         for x, y in map(tuple, batch)]
                by_ring.setdefault(ring, set()).update(cells)
                emitted.extend(cells)

            # independent oracle: every in-envelope lattice cell, by ring
            oracle: dict[int, set] = {}
            half_w, half_h = r_w / 2 + 1e-9, r_h / 2 + 1e-9
            max_ring = max(by_ring, default=0) + 2
            for ex in range(-max_ring, max_ring + 1):
                for ey in range(-max_ring, max_ring + 1):
                    ring = max(abs(ex), abs(ey))
                    if ring == 0:
                        continue
                    if abs(spacing * ex) > half_w or abs(spacing * ey) > half_h:
                        continue
                    if ring <= 4:
                        oracle.setdefault(ring, set()).add(
                            (round(spacing * ex, 12), round(spacing * ey, 12)))

            flat = set().union(*by_ring.values()) if by_ring else set()
            flat_oracle = set().union(*oracle.values()) if oracle else set()
            assert flat == flat_oracle, (r_w, r_h)
            for ring, cells in by_ring.items():
                assert cells <= oracle.get(ring, set()), (r_w, r_h, ring)
            assert len(emitted) == len(set(emitted)), (r_w, r_h)
            for x, y in emitted:
                assert abs(x) <= half_w and abs(y) <= half_h
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\ncriterion 6: 25 bound configurations match the lattice oracle "
          f"in {elapsed:.2f} s")


def test_criterion_7_campaign_gates(campaign, trained):
    result, campaign_wall = campaign
    train_wall = trained[3]
    succ = {m: 100.0 * result.summaries[m].metrics.success_rate
            for m in MODALITIES}
    first = {m: 100.0 * result.summaries[m].metrics.first_time_rate
             for m in MODALITIES}

    assert succ["force"] > succ["tactile"] > succ["visual"]
    assert succ["force"] >= 80.0
    assert 35.0 <= succ["visual"] <= 65.0
    visual_attempts = result.summaries["visual"].attempts
    assert visual_attempts.mean == 1.0
    assert visual_attempts.std == 0.0
    assert first["force"] < first["visual"]
    total_wall = train_wall + campaign_wall
    assert total_wall < 600.0
    print(f"\ncriterion 7: success force {succ['force']:.1f} > tactile "
          f"{succ['tactile']:.1f} > visual {succ['visual']:.1f}; first-time "
          f"force {first['force']:.1f} < visual {first['visual']:.1f}; "
          f"visual attempts {visual_attempts.mean:.2f}+-"
          f"{visual_attempts.std:.2f}; wall {total_wall:.0f} s")


def test_criterion_8_cumulative_curves(campaign):
    result, _ = campaign
    cum = {m: result.summaries[m].metrics.cumulative for m in MODALITIES}
    for m in MODALITIES:
        levels = [cum[m][k] for k in sorted(cum[m])]
        assert all(b >= a for a, b in zip(levels, levels[1:])), m

    visual_level = cum["visual"][max(cum["visual"])]
    assert visual_level == cum["visual"][1]  # one attempt, flat ever after
    assert cum["force"][1] <= visual_level
    assert cum["tactile"][1] <= visual_level
    assert cum["force"][2] > visual_level
    assert cum["tactile"][2] > visual_level
    print(f"\ncriterion 8: visual flat at {visual_level:.3f}; by attempt 2 "
          f"force {cum['force'][2]:.3f} and tactile {cum['tactile'][2]:.3f} "
          "are above it")


def test_criterion_9_byte_identical_reports(tmp_path, trained):
    weights_path = tmp_path / "slot.weights"
    save_weights(weights_path, trained[0])
    base = ["run", "--trials", "10", "--weights", str(weights_path)]
    assert cli_main(base + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(base + ["--out", str(tmp_path / "b")]) == 0
    for name in ("summary.csv", "histogram.csv", "cumulative.csv"):
        first = (tmp_path / "a" / name).read_bytes()
        second = (tmp_path / "b" / name).read_bytes()
        assert first == second, name
    print("\ncriterion 9: repeated run produced byte-identical "
          "summary/histogram/cumulative CSVs")
