"""Ground-truth scene state, kinematics, contact, and synthetic sensor rendering.

The simulator owns everything the controllers are not allowed to see directly:
true rack pose, slot occupancy, the in-gripper vial offset, the visual
calibration bias, and the fingertip material parameters. Controllers interact
only through rendered images, force samples, tactile frames, and motion
commands, mirroring how the physical workcell is driven.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import KEY_RIG, Pose3, RngStream, WorkspaceConfig
from .geometry import plane_grid, world_to_pixel


class SimError(RuntimeError):
    """Raised when an operation is invalid for the current scene state."""


class Contact(enum.Enum):
    NONE = "none"
    RACK_TOP = "rack_top"
    TABLE = "table"
    INSERTED = "inserted"


@dataclass(frozen=True)
class ForceSample:
    """One wrist force/torque reading (forces only), in newtons."""

    fx: float
    fy: float
    fz: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fz])


@dataclass(frozen=True)
class PlacementResult:
    """Outcome of releasing (or abandoning) the held vial."""

    kind: str  # inserted | resting_on_rack | dropped_on_table | still_held
    row: int | None = None
    col: int | None = None

    @property
    def success(self) -> bool:
        return self.kind == "inserted"


@dataclass(frozen=True)
class FingertipRig:
    """Gripper fingertip material model plus the true tactile mount maps.

    ``map_gain``/``map_offset`` take a physical in-gripper offset (meters) to
    normalized tactile image coordinates per finger; they are perturbed copies
    of the nominal mount so the calibration procedure has something real to
    estimate. ``tilt_gain`` scales how far the vial bottom kicks out per unit
    of grip-level offset: a stiff rubber pad holds the vial vertical (1.0), a
    compliant gel pad lets it lean.
    """

    material: str  # "rubber" | "tactile"
    mu: float
    sigma_grasp: float
    tilt_gain: float
    has_tactile: bool
    map_gain: dict[str, np.ndarray] = field(default_factory=dict)
    map_offset: dict[str, np.ndarray] = field(default_factory=dict)


FINGERS = ("left", "right")


def make_rig(config: WorkspaceConfig, material: str) -> FingertipRig:
    """Build the fingertip rig for one material, seeded from the master seed."""
    if material == "rubber":
        return FingertipRig(
            material="rubber",
            mu=config.contact.mu_rubber,
            sigma_grasp=config.noise.sigma_grasp,
            tilt_gain=1.0,
            has_tactile=False,
        )
    if material != "tactile":
        raise ValueError(f"unknown fingertip material {material!r}")
    gen = RngStream(config.seed).child(KEY_RIG).generator()
    span = config.tactile.span
    gains: dict[str, np.ndarray] = {}
    offsets: dict[str, np.ndarray] = {}
    for finger, mirror in (("left", 1.0), ("right", -1.0)):
        gx = mirror * (1.0 + gen.normal(0.0, 0.04)) / span
        gy = (1.0 + gen.normal(0.0, 0.04)) / span
        cross = gen.normal(0.0, 0.02, size=2) / span
        gains[finger] = np.array([[gx, cross[0]], [cross[1], gy]])
        offsets[finger] = 0.5 + gen.normal(0.0, 0.015, size=2)
    return FingertipRig(
        material="tactile",
        mu=config.contact.mu_tactile,
        sigma_grasp=config.tactile.sigma_grasp,
        tilt_gain=config.tactile.tilt_gain,
        has_tactile=True,
        map_gain=gains,
        map_offset=offsets,
    )


@dataclass
class SceneState:
    """Mutable per-trial world state. Single-owner: mutate only via the
    functions in this module (tick / release_and_evaluate / reset_trial)."""

    config: WorkspaceConfig
    rig: FingertipRig
    rack_xy: np.ndarray
    rack_yaw: float
    occupancy: np.ndarray  # (rows, cols) bool
    setpoint: np.ndarray  # commanded grip position the arm is tracking
    held_offset: np.ndarray | None  # in-gripper vial offset (2,), None if empty
    bias_angle: np.ndarray  # per-trial angular camera miscalibration (2,)
    bias_xy: np.ndarray  # per-trial translational camera miscalibration (2,)
    distractors: list[tuple[float, float, float, float]]  # x, y, radius, shade
    rng: np.random.Generator
    speed: float = 0.0
    pin_z: float | None = None
    contact: Contact = Contact.NONE
    contact_slot: tuple[int, int] | None = None
    sim_clock: float = 0.0
    last_render_cam: Pose3 | None = None
    _slots: np.ndarray | None = None

    @property
    def grip(self) -> np.ndarray:
        """Actual grip position: the setpoint, z-limited by any contact pin."""
        pos = self.setpoint.copy()
        if self.pin_z is not None:
            pos[2] = max(pos[2], self.pin_z)
        return pos

    @property
    def grip_z(self) -> float:
        return float(self.grip[2])

    def vial_bottom_xy(self) -> np.ndarray:
        """Horizontal position of the held vial's bottom-center."""
        if self.held_offset is None:
            raise SimError("no vial held")
        return self.setpoint[:2] + self.rig.tilt_gain * self.held_offset


@dataclass(frozen=True)
class MoveCommand:
    """Position setpoint target with a speed limit and acceleration ramp."""

    target: np.ndarray
    speed: float
    accel: float


def slot_centers(scene: SceneState) -> np.ndarray:
    """World (x, y) of every slot center, row-major, shape (rows*cols, 2)."""
    if scene._slots is None:
        rack = scene.config.rack
        cols = np.arange(rack.cols) - (rack.cols - 1) / 2.0
        rows = np.arange(rack.rows) - (rack.rows - 1) / 2.0
        lx, ly = np.meshgrid(cols * rack.pitch, rows * rack.pitch)
        local = np.stack([lx.ravel(), ly.ravel()], axis=1)
        c, s = np.cos(scene.rack_yaw), np.sin(scene.rack_yaw)
        rot = np.array([[c, -s], [s, c]])
        scene._slots = scene.rack_xy[None, :] + local @ rot.T
    return scene._slots


def _to_rack_frame(scene: SceneState, xy: np.ndarray) -> np.ndarray:
    c, s = np.cos(scene.rack_yaw), np.sin(scene.rack_yaw)
    d = np.asarray(xy, dtype=float) - scene.rack_xy
    return np.stack([c * d[..., 0] + s * d[..., 1],
                     -s * d[..., 0] + c * d[..., 1]], axis=-1)


def in_rack_footprint(scene: SceneState, xy) -> bool:
    rack = scene.config.rack
    local = _to_rack_frame(scene, np.asarray(xy, dtype=float))
    return bool(abs(local[0]) <= rack.footprint_w / 2
                and abs(local[1]) <= rack.footprint_h / 2)


def reset_trial(config: WorkspaceConfig, rng: RngStream,
                rig: FingertipRig | None = None) -> SceneState:
    """Fresh trial: random rack pose and occupancy, vial grasped at the source.

    The grasp happens "from above" at a known source position, so the gripper
    starts at source hover height already holding a vial whose in-gripper
    offset is drawn from the rig's grasp noise.
    """
    if rig is None:
        rig = make_rig(config, "rubber")
    ws, rack, cam = config.workspace, config.rack, config.camera
    half_diag = float(np.hypot(rack.footprint_w, rack.footprint_h)) / 2.0
    fov_x = cam.width * (cam.z - rack.height) / cam.fx
    fov_y = cam.height * (cam.z - rack.height) / cam.fy
    if (ws.x_max - ws.x_min) + 2 * half_diag > fov_x or \
            (ws.y_max - ws.y_min) + 2 * half_diag > fov_y:
        raise SimError("workspace too small for rack: poses can leave the camera view")

    gen = rng.generator()
    rack_xy = np.array([gen.uniform(ws.x_min, ws.x_max),
                        gen.uniform(ws.y_min, ws.y_max)])
    yaw = float(gen.uniform(-ws.yaw_max, ws.yaw_max))
    occupancy = gen.random((rack.rows, rack.cols)) < 0.4
    if occupancy.all():
        occupancy[gen.integers(rack.rows), gen.integers(rack.cols)] = False
    if not occupancy.any():
        occupancy[gen.integers(rack.rows), gen.integers(rack.cols)] = True

    bias_angle = np.array([config.noise.bias_angle_x, config.noise.bias_angle_y])
    bias_angle = bias_angle + gen.normal(0.0, config.noise.sigma_bias_angle, 2)
    bias_xy = gen.normal(0.0, config.noise.sigma_bias_xy, 2)
    held = gen.normal(0.0, rig.sigma_grasp, 2) if rig.sigma_grasp > 0 else np.zeros(2)

    scene = SceneState(
        config=config,
        rig=rig,
        rack_xy=rack_xy,
        rack_yaw=yaw,
        occupancy=occupancy,
        setpoint=np.array([ws.source_x, ws.source_y, config.hover_z() + 0.03]),
        held_offset=held,
        bias_angle=bias_angle,
        bias_xy=bias_xy,
        distractors=[],
        rng=gen,
    )
    _seed_distractors(scene, gen)
    return scene


def _seed_distractors(scene: SceneState, gen: np.random.Generator) -> None:
    """Scatter ring-shaped clutter on the table, clear of the rack."""
    cfg = scene.config
    cam, rack = cfg.camera, cfg.rack
    depth = cam.z - rack.height
    slot_r_px = rack.slot_radius * cam.fx / depth
    margin = float(np.hypot(rack.footprint_w, rack.footprint_h)) / 2 + 0.015
    ws = cfg.workspace
    for _ in range(cfg.render.distractors):
        for _attempt in range(40):
            pos = np.array([gen.uniform(ws.x_min - 0.03, ws.x_max + 0.03),
                            gen.uniform(ws.y_min - 0.03, ws.y_max + 0.03)])
            if np.linalg.norm(pos - scene.rack_xy) < margin:
                continue
            if any(np.hypot(pos[0] - d[0], pos[1] - d[1]) < 0.03
                   for d in scene.distractors):
                continue
            r_px = gen.uniform(0.85, 1.30) * slot_r_px
            radius = r_px * cam.z / cam.fx  # table plane depth
            shade = gen.uniform(55.0, 85.0)
            scene.distractors.append((float(pos[0]), float(pos[1]), float(radius), shade))
            break


# ---------------------------------------------------------------------------
# contact model


def _support(scene: SceneState, bottom_xy: np.ndarray):
    """Support height under the vial bottom and its contact classification.

    Returns (support_z, contact_kind, slot_rc, rim_slot_center). The rim
    center is set when the bottom overlaps a vacant slot's opening without
    fitting it, which is the configuration that generates lateral rim
    reaction and therefore in-gripper slip.
    """
    cfg = scene.config
    rack, vial = cfg.rack, cfg.vial
    local = _to_rack_frame(scene, bottom_xy)
    if abs(local[0]) > rack.footprint_w / 2 or abs(local[1]) > rack.footprint_h / 2:
        return 0.0, Contact.TABLE, None, None

    centers = slot_centers(scene)
    d = np.linalg.norm(centers - bottom_xy[None, :], axis=1)
    occ = scene.occupancy.ravel()

    occupied_hit = np.where(occ & (d < 2 * vial.radius))[0]
    if occupied_hit.size:
        idx = int(occupied_hit[np.argmin(d[occupied_hit])])
        return vial.height, Contact.RACK_TOP, divmod(idx, rack.cols), None

    nearest = int(np.argmin(d))
    if not occ[nearest] and d[nearest] <= cfg.clearance:
        return 0.0, Contact.INSERTED, divmod(nearest, rack.cols), None

    rim_center = None
    if not occ[nearest] and cfg.clearance < d[nearest] < rack.slot_radius + vial.radius:
        rim_center = centers[nearest]
    return rack.height, Contact.RACK_TOP, None, rim_center


def _resolve_contact(scene: SceneState, dt: float) -> float:
    """Update pin/contact state for the current setpoint; returns contact force.

    With ``dt`` zero this is a pure state refresh (no slip accumulates).
    """
    cfg = scene.config
    if scene.held_offset is not None:
        bottom = scene.vial_bottom_xy()
        support, kind, slot_rc, rim_center = _support(scene, bottom)
        pin = support + cfg.vial.grip_height
        scene.pin_z = pin
        grip_z = max(scene.setpoint[2], pin)
        if kind is Contact.INSERTED and grip_z < cfg.rack.height + cfg.vial.grip_height:
            scene.contact = Contact.INSERTED
            scene.contact_slot = slot_rc
        elif scene.setpoint[2] < pin:
            scene.contact = kind
            scene.contact_slot = slot_rc
        else:
            scene.contact = Contact.NONE
            scene.contact_slot = None
        penetration = max(0.0, pin - scene.setpoint[2])
        force_contact = cfg.contact.stiffness * penetration

        # Rim reaction drags the vial within the gripper, away from the slot.
        if rim_center is not None and penetration > 0 and dt > 0:
            away = bottom - rim_center
            norm = float(np.linalg.norm(away))
            if norm > 1e-9:
                drift = (cfg.contact.slip_rate / scene.rig.mu) * force_contact * dt
                scene.held_offset = scene.held_offset + (away / norm) * drift
                if np.max(np.abs(scene.held_offset)) > cfg.contact.max_offset:
                    # Slid past the fingertip edge: the vial is gone.
                    scene.held_offset = None
                    scene.pin_z = None
                    scene.contact = Contact.NONE
                    scene.contact_slot = None
                    force_contact = 0.0
    else:
        scene.pin_z = 0.0
        penetration = max(0.0, -scene.setpoint[2])
        force_contact = cfg.contact.stiffness * penetration
        scene.contact = Contact.TABLE if penetration > 0 else Contact.NONE
        scene.contact_slot = None
    return force_contact


def tick(scene: SceneState, command: MoveCommand, dt: float) -> ForceSample:
    """Advance one control period: motion, contact, slip, and a force reading."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = scene.config

    # Setpoint tracking with an acceleration-limited speed ramp.
    delta = np.asarray(command.target, dtype=float) - scene.setpoint
    dist = float(np.linalg.norm(delta))
    if dist > 1e-12:
        scene.speed = min(command.speed, scene.speed + command.accel * dt)
        step = min(scene.speed * dt, dist)
        scene.setpoint = scene.setpoint + delta * (step / dist)
        if step >= dist:
            scene.speed = 0.0
    else:
        scene.speed = 0.0

    force_contact = _resolve_contact(scene, dt)

    scene.sim_clock += dt
    pos = scene.grip
    bias = _static_bias(pos, scene.held_offset is not None)
    noise = scene.rng.normal(0.0, cfg.noise.sigma_force, 3)
    return ForceSample(
        fx=float(bias[0] + noise[0]),
        fy=float(bias[1] + noise[1]),
        fz=float(bias[2] + force_contact + noise[2]),
    )


def jump_setpoint(scene: SceneState, target) -> None:
    """Instantly reposition the setpoint (unmonitored transit shortcut).

    Valid only for legs that stay clear of contact; callers are expected to
    account for travel time separately via :func:`advance_clock`.
    """
    scene.setpoint = np.asarray(target, dtype=float).copy()
    scene.speed = 0.0
    _resolve_contact(scene, 0.0)


def advance_clock(scene: SceneState, seconds: float) -> None:
    """Charge wall time for actions the simulator does not integrate."""
    if seconds < 0:
        raise ValueError("cannot charge negative time")
    scene.sim_clock += seconds


def impose_grasp(scene: SceneState, offset) -> None:
    """Force a known in-gripper offset (calibration rigs use this)."""
    scene.held_offset = np.asarray(offset, dtype=float).copy()
    _resolve_contact(scene, 0.0)


def _static_bias(pos: np.ndarray, holding: bool) -> np.ndarray:
    """Smooth pose-dependent wrist bias plus payload; never exactly zero."""
    x, y, z = float(pos[0]), float(pos[1]), float(pos[2])
    payload = -0.25 if holding else 0.0
    return np.array([
        0.40 * np.sin(3.0 * x + 1.0) + 0.15 * y,
        0.40 * np.cos(2.0 * y + 0.5) + 0.10 * x,
        -4.0 + 0.30 * x + 0.20 * y + 0.05 * z + payload,
    ])


def release_and_evaluate(scene: SceneState) -> PlacementResult:
    """Open the gripper and judge where the vial ends up.

    Inserted requires the vial to actually be in a slot (below the rack top
    within clearance); otherwise the drop lands on whatever is underneath.
    """
    if scene.held_offset is None:
        raise SimError("release with no vial held")
    if scene.contact is Contact.INSERTED and scene.contact_slot is not None:
        r, c = scene.contact_slot
        scene.occupancy[r, c] = True
        result = PlacementResult("inserted", r, c)
    else:
        bottom = scene.vial_bottom_xy()
        if in_rack_footprint(scene, bottom):
            result = PlacementResult("resting_on_rack")
        else:
            result = PlacementResult("dropped_on_table")
    scene.held_offset = None
    scene.pin_z = None
    scene.contact = Contact.NONE
    scene.contact_slot = None
    return result


# ---------------------------------------------------------------------------
# camera rendering

_TABLE_BASE = 170.0
_RACK_BODY = 92.0
_RIM_DARK = 45.0
_VACANT_BRIGHT = 228.0
_GAP_DARK = 55.0
_CAP_GRAY = 140.0
_CAP_DOT = 110.0
_RIM_HALF = 0.0008  # rim line half-thickness, meters


def render_topdown(scene: SceneState, cam_pose: Pose3, width: int | None = None,
                   height: int | None = None) -> np.ndarray:
    """Render the overhead camera view from the *requested* pose.

    The image is actually formed from the requested pose shifted by the trial's
    calibration bias (angular error scales with height) plus fresh per-shot
    jitter; controllers inverting pixels through the requested pose therefore
    inherit exactly that bias. Returns a (height, width) uint8 image.
    """
    cfg = scene.config
    cam = cfg.camera
    if cam_pose.z <= cfg.rack.height:
        raise SimError("camera must be above the rack plane")
    W = cam.width if width is None else width
    H = cam.height if height is None else height
    intr = cam.intrinsics()

    depth = cam_pose.z - cfg.rack.height
    shift = (scene.bias_xy + scene.bias_angle * depth
             + scene.rng.normal(0.0, cfg.noise.sigma_detect, 2))
    eff = Pose3(cam_pose.x + shift[0], cam_pose.y + shift[1], cam_pose.z, 0.0)
    scene.last_render_cam = eff

    img = np.empty((H, W), dtype=float)

    # Table plane: gradient, two straight seams, ring-shaped clutter.
    tx, ty = plane_grid(intr, eff, 0.0, W, H, cam.tilt)
    ws = cfg.workspace
    cx0 = (ws.x_min + ws.x_max) / 2.0
    cy0 = (ws.y_min + ws.y_max) / 2.0
    img[:] = _TABLE_BASE + 50.0 * (tx - cx0) + 35.0 * (ty - cy0)
    img[np.abs(ty - (cy0 - 0.11)) < 0.0012] = 130.0
    img[np.abs(tx - (cx0 + 0.13)) < 0.0012] = 135.0
    for dx, dy, dr, shade in scene.distractors:
        dd = np.hypot(tx - dx, ty - dy)
        img[np.abs(dd - dr) < _RIM_HALF] = shade

    # Rack plane: body mask plus per-slot detail.
    rx, ry = plane_grid(intr, eff, cfg.rack.height, W, H, cam.tilt)
    c, s = np.cos(scene.rack_yaw), np.sin(scene.rack_yaw)
    dxr = rx - scene.rack_xy[0]
    dyr = ry - scene.rack_xy[1]
    lx = c * dxr + s * dyr
    ly = -s * dxr + c * dyr
    rack_mask = (np.abs(lx) <= cfg.rack.footprint_w / 2) & \
                (np.abs(ly) <= cfg.rack.footprint_h / 2)
    img[rack_mask] = _RACK_BODY

    centers = slot_centers(scene)
    occ = scene.occupancy.ravel()
    slot_r = cfg.rack.slot_radius
    box_m = slot_r + 0.003
    for idx in range(centers.shape[0]):
        sx, sy = centers[idx]
        try:
            u, v = world_to_pixel(sx, sy, cfg.rack.height, intr, eff, cam.tilt)
        except ValueError:
            continue
        half = int(np.ceil(box_m * intr.fx / depth)) + 2
        u0, u1 = int(u) - half, int(u) + half + 1
        v0, v1 = int(v) - half, int(v) + half + 1
        u0, u1 = max(u0, 0), min(u1, W)
        v0, v1 = max(v0, 0), min(v1, H)
        if u0 >= u1 or v0 >= v1:
            continue
        d = np.hypot(rx[v0:v1, u0:u1] - sx, ry[v0:v1, u0:u1] - sy)
        patch = img[v0:v1, u0:u1]
        interior = d <= slot_r - _RIM_HALF
        if occ[idx]:
            patch[interior] = _GAP_DARK
            patch[d <= cfg.vial.radius] = _CAP_GRAY
            patch[d <= 0.002] = _CAP_DOT
        else:
            patch[interior] = _VACANT_BRIGHT
        patch[np.abs(d - slot_r) <= _RIM_HALF] = _RIM_DARK

    img += scene.rng.normal(0.0, cfg.noise.sigma_pixel, (H, W))
    return np.clip(img, 0.0, 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# tactile rendering

_GEL_BASE = 26.0
_GEL_RING = 14.0
_BLOB_BRIGHT = 205.0


def _gel_pattern(width: int, height: int) -> np.ndarray:
    """Fixed resting texture of the gel surface (a soft vignette)."""
    u = (np.arange(width) - (width - 1) / 2.0) / width
    v = (np.arange(height) - (height - 1) / 2.0) / height
    r2 = u[None, :] ** 2 + v[:, None] ** 2
    return _GEL_BASE + _GEL_RING * np.exp(-r2 / 0.18)


def _blob_pixel(rig: FingertipRig, finger: str, offset: np.ndarray,
                width: int, height: int) -> np.ndarray:
    n = rig.map_gain[finger] @ offset + rig.map_offset[finger]
    return n * np.array([width - 1.0, height - 1.0])


def sample_tactile(scene: SceneState, finger: str, with_blob: bool | None = None
                   ) -> np.ndarray:
    """One tactile frame for ``finger`` ("left" or "right").

    A held vial appears as a bright filled disk positioned by the finger's
    true (perturbed) mount map applied to the in-gripper offset; an empty
    gripper yields only the resting gel pattern plus noise. ``with_blob=False``
    forces a no-contact frame, which is how the pre-campaign reference set is
    captured with the gripper open.
    """
    cfg = scene.config
    if not scene.rig.has_tactile:
        raise SimError("fingertips have no tactile sensors in this rig")
    if finger not in FINGERS:
        raise ValueError(f"finger must be one of {FINGERS}, got {finger!r}")
    W, H = cfg.tactile.width, cfg.tactile.height
    img = _gel_pattern(W, H).copy()
    if with_blob is None:
        with_blob = scene.held_offset is not None
    if with_blob:
        if scene.held_offset is None:
            raise SimError("cannot render a contact blob with no vial held")
        center = _blob_pixel(scene.rig, finger, scene.held_offset, W, H)
        px_per_m = (W - 1.0) / cfg.tactile.span
        r_px = cfg.tactile.blob_diameter / 2.0 * px_per_m
        uu = np.arange(W)[None, :] - center[0]
        vv = np.arange(H)[:, None] - center[1]
        d = np.hypot(uu, vv)
        cover = np.clip((r_px - d + 1.0) / 2.0, 0.0, 1.0)
        img = img + (_BLOB_BRIGHT - img) * cover
    img += scene.rng.normal(0.0, cfg.noise.sigma_pixel, (H, W))
    return np.clip(img, 0.0, 255.0).astype(np.uint8)


def reference_frames(scene: SceneState, finger: str, count: int | None = None
                     ) -> list[np.ndarray]:
    """Reference set for the difference pipeline: open-gripper frames."""
    n = scene.config.tactile.n_reference if count is None else count
    return [sample_tactile(scene, finger, with_blob=False) for _ in range(n)]
