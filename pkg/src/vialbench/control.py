"""Trial controllers: one full pick-and-insert attempt sequence per modality.

All three controllers share the same skeleton — overhead image, slot pick,
travel, descend, release — and differ in how the descent is closed:

* ``visual``: a second close-up image refines the slot estimate, then the
  descent is open-loop. One attempt, no recovery.
* ``force``: the descent is stopped when the wrist load deviates from a
  stationary baseline; surface impacts trigger a bounded lattice search.
* ``tactile``: each attempt first measures the in-gripper offset on the
  fingertip sensors and compensates for it; the descent is stopped when the
  contact patch travels, and the same lattice search recovers misses.

Travel legs that cannot touch anything are charged for their duration and
jumped; descents are integrated at the force sensor rate so contact, slip,
and stop latency play out sample by sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Pose3, RngStream, WorkspaceConfig
from .force import (ForceBuffer, ForceDecision, buffer_capacity, init_baseline,
                    safety_stop, update_and_check, vial_placed)
from .geometry import pixel_to_world
from .perception import (CnnWeights, NoValidSlotError,
                         accepted_rack_candidates, cht_params_for,
                         detect_circles, refined_camera_z, score_candidates,
                         select_target)
from .search import compute_search_bounds, make_search, next_trial_positions
from .simworld import (FINGERS, MoveCommand, SceneState, SimError,
                       advance_clock, impose_grasp, jump_setpoint,
                       reference_frames, release_and_evaluate, render_topdown,
                       reset_trial, sample_tactile, tick)
from .tactile import (TactileCalibration, TactileDecision, calibrate_mapping,
                      find_contact, track_deviation)

MODALITIES = ("visual", "force", "tactile")


@dataclass(frozen=True)
class AttemptOutcome:
    """Where one descent aimed (world xy) and how it ended."""

    position: tuple[float, float]
    result: str  # inserted | rack_top | safety_stop | released_failed
    #             | lost_contact | no_target


@dataclass(frozen=True)
class TrialRecord:
    modality: str
    trial_index: int
    attempts: int
    success: bool
    runtime_s: float
    outcomes: tuple[AttemptOutcome, ...]
    final_offset: tuple[float, float] | None
    placement: str | None


class _TrialAbort(Exception):
    """Internal: unwinds a trial that cannot continue (no vial, no target)."""

    def __init__(self, outcome: AttemptOutcome, placement: str | None = None):
        super().__init__(outcome.result)
        self.outcome = outcome
        self.placement = placement


def _charged_move(scene: SceneState, target, speed: float) -> None:
    target = np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(target - scene.setpoint))
    jump_setpoint(scene, target)
    advance_clock(scene, dist / speed)


def _project(config: WorkspaceConfig, pose: Pose3, u: float, v: float) -> np.ndarray:
    x, y, _ = pixel_to_world(u, v, config.camera.intrinsics(), pose,
                             config.rack.height)
    return np.array([x, y])


def _image_and_select(scene: SceneState, pose: Pose3, weights: CnnWeights,
                      mode: str, gen: np.random.Generator,
                      ref_uv: tuple[float, float] | None = None):
    """Take a picture, run the full perception stack, pick a vacant slot.

    Returns (scored candidates, selected candidate, pose used). Raises
    NoValidSlotError when nothing classifies as a vacant slot.
    """
    cfg = scene.config
    advance_clock(scene, cfg.timing.image_s)
    image = render_topdown(scene, pose)
    candidates = detect_circles(image, cht_params_for(cfg, pose.z))
    scored = score_candidates(image, candidates, weights, cfg.cnn.crop_size)
    chosen = select_target(scored, mode, cfg.cnn.theta_rack, cfg.cnn.theta_occ,
                           cfg.cnn.tie_eps, gen, ref_uv)
    return scored, chosen, pose


def _descend_to_floor(scene: SceneState, xy, floor_z: float, check) -> str:
    """Shared descent loop; ``check`` is called after every tick and may
    return a terminal string ("stopped" / "lost") or None to continue."""
    cfg = scene.config
    dt = 1.0 / cfg.force.rate
    cmd = MoveCommand(target=np.array([xy[0], xy[1], floor_z]),
                      speed=cfg.motion.descent_speed, accel=cfg.motion.accel)
    budget = (scene.setpoint[2] - floor_z) / cfg.motion.descent_speed + 10.0
    for _ in range(int(budget * cfg.force.rate) + 1):
        sample = tick(scene, cmd, dt)
        verdict = check(sample)
        if verdict is not None:
            return verdict
        if scene.setpoint[2] - floor_z <= 1e-9:
            return "completed"
    raise SimError("descent failed to terminate within its time budget")


def _release_here(scene: SceneState, position) -> tuple[AttemptOutcome, str, bool]:
    cfg = scene.config
    advance_clock(scene, cfg.timing.release_s)
    placement = release_and_evaluate(scene)
    result = "inserted" if placement.success else "released_failed"
    pos = (float(position[0]), float(position[1]))
    return AttemptOutcome(pos, result), placement.kind, placement.success


def _grab_offset(scene: SceneState) -> tuple[float, float] | None:
    if scene.held_offset is None:
        return None
    return (float(scene.held_offset[0]), float(scene.held_offset[1]))


def run_visual_trial(config: WorkspaceConfig, stream: RngStream,
                     weights: CnnWeights, trial_index: int = 0,
                     rig=None) -> TrialRecord:
    """Vision-only: overhead pick, close-up refinement, open-loop insert."""
    scene = reset_trial(config, stream.child(0), rig)
    sel_gen = stream.child(1).generator()
    cam = config.camera

    def fail(result: str, position=(np.nan, np.nan), placement=None):
        return TrialRecord(
            modality="visual", trial_index=trial_index, attempts=1,
            success=False, runtime_s=float(scene.sim_clock),
            outcomes=(AttemptOutcome((float(position[0]), float(position[1])),
                                     result),),
            final_offset=_grab_offset(scene), placement=placement)

    try:
        _, first, pose1 = _image_and_select(scene, cam.pose(), weights,
                                            "best_vacant", sel_gen)
    except NoValidSlotError:
        return fail("no_target")
    advance_clock(scene, config.timing.grasp_s)
    coarse = _project(config, pose1, first.candidate.u, first.candidate.v)

    # Drop the camera over the estimate and look again from half the height:
    # angular calibration error shrinks with the viewing distance.
    close_z = refined_camera_z(config)
    advance_clock(scene, (cam.z - close_z) / config.motion.speed)
    pose2 = Pose3(x=float(coarse[0]), y=float(coarse[1]), z=close_z, yaw=0.0)
    try:
        _, refined, _ = _image_and_select(scene, pose2, weights,
                                          "nearest_center", sel_gen,
                                          ref_uv=(cam.cx, cam.cy))
    except NoValidSlotError:
        return fail("no_target")
    target = _project(config, pose2, refined.candidate.u, refined.candidate.v)

    _charged_move(scene, [target[0], target[1], config.hover_z()],
                  config.motion.speed)
    depth_z = config.rack.height - config.motion.visual_floor + config.vial.grip_height
    _descend_to_floor(scene, target, depth_z, lambda sample: None)
    if scene.held_offset is None:
        return fail("lost_contact", target, placement="dropped_on_table")
    final_offset = _grab_offset(scene)
    outcome, placement, success = _release_here(scene, target)
    return TrialRecord(
        modality="visual", trial_index=trial_index, attempts=1,
        success=success, runtime_s=float(scene.sim_clock),
        outcomes=(outcome,), final_offset=final_offset, placement=placement)


def _guarded_trial(modality: str, config: WorkspaceConfig, stream: RngStream,
                   weights: CnnWeights, trial_index: int, rig,
                   prepare, attempt_descent, trace=None) -> TrialRecord:
    """Shared force/tactile skeleton: image once, then search until placed.

    ``prepare(scene, sel_gen)`` runs modality setup after the overview image
    and returns a context object; ``attempt_descent(scene, ctx, position)``
    runs one guarded descent aimed at ``position`` and returns one of
    "completed", "stopped", or "lost".
    """
    scene = reset_trial(config, stream.child(0), rig)
    sel_gen = stream.child(1).generator()
    outcomes: list[AttemptOutcome] = []
    attempts = 0
    success = False
    placement: str | None = None

    def record() -> TrialRecord:
        return TrialRecord(
            modality=modality, trial_index=trial_index,
            attempts=max(attempts, 1), success=success,
            runtime_s=float(scene.sim_clock), outcomes=tuple(outcomes),
            final_offset=_grab_offset(scene), placement=placement)

    try:
        scored, first, pose1 = _image_and_select(scene, config.camera.pose(),
                                                 weights, "best_vacant", sel_gen)
    except NoValidSlotError:
        outcomes.append(AttemptOutcome((np.nan, np.nan), "no_target"))
        return record()
    advance_clock(scene, config.timing.grasp_s)
    target = _project(config, pose1, first.candidate.u, first.candidate.v)
    accepted = accepted_rack_candidates(scored, config.cnn.theta_rack)
    neighbors = np.array([_project(config, pose1, s.candidate.u, s.candidate.v)
                          for s in accepted]).reshape(-1, 2)
    width, height = compute_search_bounds(neighbors, target, config.rack.pitch)

    try:
        ctx = prepare(scene, sel_gen)
    except _TrialAbort as abort:
        outcomes.append(abort.outcome)
        placement = abort.placement
        return record()

    _charged_move(scene, [target[0], target[1], config.hover_z()],
                  config.motion.speed)
    state = make_search(target, width, height, config.search.spacing)
    queue: list[np.ndarray] = [target.copy()]
    hover = config.hover_z()

    while True:
        if not queue:
            queue = next_trial_positions(state)
            if not queue:
                # Search envelope exhausted: give the vial up where we are.
                if config.control.exhausted_release and scene.held_offset is not None:
                    final = scene.setpoint[:2]
                    outcome, placement, success = _release_here(scene, final)
                    outcomes.append(outcome)
                else:
                    placement = "still_held"
                return record()
        position = queue.pop(0)
        attempts += 1
        _charged_move(scene, [position[0], position[1], hover],
                      config.motion.speed)
        try:
            verdict = attempt_descent(scene, ctx, position)
        except _TrialAbort as abort:
            outcomes.append(abort.outcome)
            placement = abort.placement
            return record()
        pos = (float(position[0]), float(position[1]))
        if verdict == "completed":
            if scene.held_offset is None:
                outcomes.append(AttemptOutcome(pos, "lost_contact"))
                placement = "dropped_on_table"
                return record()
            outcome, placement, success = _release_here(scene, position)
            outcomes.append(outcome)
            return record()
        if verdict == "lost":
            outcomes.append(AttemptOutcome(pos, "lost_contact"))
            placement = "dropped_on_table"
            return record()
        # stopped: classify by how deep the gripper got before the stop
        grip_z = scene.grip_z
        if safety_stop(grip_z, config):
            outcomes.append(AttemptOutcome(pos, "safety_stop"))
            placement = "still_held"
            return record()
        # Surface impact (or a spurious stop in free air): back off and
        # try the next lattice cell.
        outcomes.append(AttemptOutcome(pos, "rack_top"))
        _charged_move(scene, [scene.setpoint[0], scene.setpoint[1], hover],
                      config.motion.speed)


def run_force_trial(config: WorkspaceConfig, stream: RngStream,
                    weights: CnnWeights, trial_index: int = 0, rig=None,
                    trace: list | None = None) -> TrialRecord:
    """Force-guarded insertion with lattice-search recovery."""

    def prepare(scene, sel_gen):
        # Stationary baseline with the vial already in hand.
        dt = 1.0 / config.force.rate
        hold = MoveCommand(target=scene.setpoint.copy(),
                           speed=config.motion.speed, accel=config.motion.accel)
        samples = [tick(scene, hold, dt).vector
                   for _ in range(buffer_capacity(config.force))]
        return init_baseline(samples, config.force)

    def attempt_descent(scene, baseline, position):
        buffer = ForceBuffer(buffer_capacity(config.force))

        def check(sample):
            decision, dev = update_and_check(buffer, sample.vector, baseline,
                                             config.force)
            if trace is not None:
                trace.append((scene.sim_clock, sample.vector, dev,
                              decision.value))
            if decision is ForceDecision.STOP:
                return "stopped"
            if scene.held_offset is None:
                return "lost"
            return None

        return _descend_to_floor(scene, position, config.descent_floor_z(), check)

    return _guarded_trial("force", config, stream, weights, trial_index, rig,
                          prepare, attempt_descent, trace)


def run_tactile_trial(config: WorkspaceConfig, stream: RngStream,
                      weights: CnnWeights, rig,
                      calibration: dict[str, TactileCalibration],
                      trial_index: int = 0) -> TrialRecord:
    """Tactile-guided insertion: offset compensation plus slip-stop descents."""
    if rig is None or not rig.has_tactile:
        raise ValueError("tactile trials need a tactile-equipped rig")
    tac = config.tactile

    def prepare(scene, sel_gen):
        advance_clock(scene, config.timing.reference_s)
        refs = {f: reference_frames(scene, f) for f in FINGERS}
        return refs

    def measure(scene, refs):
        """Settle, read both fingers, return (offset estimate, centroids)."""
        advance_clock(scene, config.timing.tactile_settle_s)
        estimates = []
        centroids: dict[str, tuple[float, float]] = {}
        for finger in FINGERS:
            frame = sample_tactile(scene, finger)
            region = find_contact(frame, refs[finger], tac)
            if region is None:
                continue
            centroids[finger] = region.centroid
            cal = calibration[finger]
            n = np.array([region.centroid[0] / (tac.width - 1.0),
                          region.centroid[1] / (tac.height - 1.0)])
            estimates.append(cal.gain @ n + cal.bias)
        if not estimates:
            return None, centroids
        return np.mean(estimates, axis=0), centroids

    def attempt_descent(scene, refs, position):
        offset_est, centroids = measure(scene, refs)
        if offset_est is None:
            raise _TrialAbort(
                AttemptOutcome((float(position[0]), float(position[1])),
                               "lost_contact"),
                placement="dropped_on_table")
        corrected = np.asarray(position, dtype=float) - offset_est
        # Apply the compensation while still at hover height so the descent
        # itself is vertical; folding it into the descent would leave most of
        # the lateral move unexecuted at the moment the vial meets the rack.
        _charged_move(scene, [corrected[0], corrected[1], config.hover_z()],
                      config.motion.speed)
        period = 1.0 / tac.rate
        next_sample = scene.sim_clock + period

        def check(sample):
            nonlocal next_sample
            if scene.held_offset is None:
                return "lost"
            if scene.sim_clock + 1e-12 < next_sample:
                return None
            next_sample += period
            frames = {f: sample_tactile(scene, f) for f in FINGERS}
            reading = track_deviation(frames, refs, centroids, tac,
                                      calibration)
            if reading.decision is TactileDecision.LOST_CONTACT:
                return "lost"
            if reading.decision is TactileDecision.STOP:
                return "stopped"
            return None

        return _descend_to_floor(scene, corrected, config.descent_floor_z(),
                                 check)

    return _guarded_trial("tactile", config, stream, weights, trial_index, rig,
                          prepare, attempt_descent)


def calibrate_rig(config: WorkspaceConfig, rig,
                  stream: RngStream) -> dict[str, TactileCalibration]:
    """Fit each finger's centroid-to-offset map on a grid of known grasps."""
    if rig is None or not rig.has_tactile:
        raise ValueError("calibration needs a tactile-equipped rig")
    scene = reset_trial(config, stream.child(0), rig)
    refs = {f: reference_frames(scene, f) for f in FINGERS}
    reach = 3.0e-3
    cents: dict[str, list] = {f: [] for f in FINGERS}
    offs: dict[str, list] = {f: [] for f in FINGERS}
    for ox in (-reach, 0.0, reach):
        for oy in (-reach, 0.0, reach):
            impose_grasp(scene, [ox, oy])
            for finger in FINGERS:
                frame = sample_tactile(scene, finger)
                region = find_contact(frame, refs[finger], config.tactile)
                if region is None:
                    continue
                cents[finger].append(region.centroid)
                offs[finger].append((ox, oy))
    return {f: calibrate_mapping(np.asarray(cents[f]), np.asarray(offs[f]),
                                 config.tactile.width, config.tactile.height)
            for f in FINGERS}
