"""Fingertip gel image processing and in-gripper offset tracking.

Contact is read out of raw gel frames in four steps: absolute difference
against a no-contact reference set, min-max normalization, fixed-threshold
binarization, and border tracing of the 8-connected components. The largest
traced region's centroid is mapped to a physical in-gripper offset through a
per-finger affine calibration fit by least squares on frames with known
offsets.

During a descent the tracker compares each finger's current centroid with
the one captured right after the grasp; the fused centroid travel in pixels
is the slip signal that stops the motion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import TactileConfig

FINGERS = ("left", "right")

# Moore neighborhood, clockwise from west, as (row, col) steps.
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1),
          (0, 1), (1, 1), (1, 0), (1, -1))

_CAL_MAGIC = "VIALTAC1"


class CalibrationError(RuntimeError):
    """Calibration input is unusable (too few or degenerate samples)."""


class TactileDecision(enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"
    LOST_CONTACT = "lost_contact"


@dataclass(frozen=True)
class ContactRegion:
    """One traced contact patch: centroid in (x, y) pixels, border polygon."""

    centroid: tuple[float, float]
    area: float
    border: tuple[tuple[int, int], ...]  # (row, col) vertices, trace order


@dataclass(frozen=True)
class TactileCalibration:
    """Affine map from normalized centroid to in-gripper offset, per finger."""

    gain: np.ndarray      # (2, 2): offset_i = gain[i] @ (nx, ny) + bias[i]
    bias: np.ndarray      # (2,)
    residual_rms: float


@dataclass(frozen=True)
class TrackReading:
    decision: TactileDecision
    displacement_px: float | None
    per_finger: dict[str, float | None]
    displacement_m: float | None = None


def difference_image(frame: np.ndarray, references: list[np.ndarray]) -> np.ndarray:
    """Mean absolute difference of ``frame`` against the reference set."""
    if not references:
        raise ValueError("need at least one reference frame")
    f = np.asarray(frame, dtype=float)
    acc = np.zeros_like(f)
    for ref in references:
        acc += np.abs(f - np.asarray(ref, dtype=float))
    return acc / len(references)


def normalize(delta: np.ndarray) -> np.ndarray:
    lo = float(delta.min())
    hi = float(delta.max())
    if hi == lo:
        return np.zeros_like(delta, dtype=float)
    return (delta - lo) / (hi - lo)


def binarize(norm: np.ndarray, threshold: float) -> np.ndarray:
    return norm >= threshold


def _moore_trace(mask: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Clockwise outer-border trace from ``start`` (the first filled pixel in
    row-major order, so its west neighbor is guaranteed empty)."""
    h, w = mask.shape

    def filled(p):
        return 0 <= p[0] < h and 0 <= p[1] < w and mask[p[0], p[1]]

    border = [start]
    cur = start
    backtrack = (start[0], start[1] - 1)
    limit = 4 * int(mask.sum()) + 8
    for _ in range(limit):
        rel = (backtrack[0] - cur[0], backtrack[1] - cur[1])
        i0 = _MOORE.index(rel)
        nxt = None
        for k in range(1, 9):
            j = (i0 + k) % 8
            cand = (cur[0] + _MOORE[j][0], cur[1] + _MOORE[j][1])
            if filled(cand):
                nxt = cand
                backtrack = (cur[0] + _MOORE[(i0 + k - 1) % 8][0],
                             cur[1] + _MOORE[(i0 + k - 1) % 8][1])
                break
        if nxt is None:
            return border  # isolated pixel
        if nxt == start:
            return border
        border.append(nxt)
        cur = nxt
    raise RuntimeError("border trace failed to close")


def polygon_area(border: list[tuple[int, int]]) -> float:
    """Shoelace area of a traced border (vertices at pixel centers)."""
    if len(border) < 3:
        return 0.0
    pts = np.asarray(border, dtype=float)
    y = pts[:, 0]
    x = pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def extract_contacts(binary: np.ndarray, min_area: float) -> list[ContactRegion]:
    """Trace every 8-connected region and keep the ones of usable size.

    Returns regions sorted largest first.
    """
    labeled, count = ndimage.label(binary, structure=np.ones((3, 3), dtype=int))
    regions = []
    w = binary.shape[1]
    for lbl in range(1, count + 1):
        mask = labeled == lbl
        flat = int(np.argmax(mask))
        border = _moore_trace(mask, (flat // w, flat % w))
        area = polygon_area(border)
        if area < min_area:
            continue
        pts = np.asarray(border, dtype=float)
        regions.append(ContactRegion(
            centroid=(float(pts[:, 1].mean()), float(pts[:, 0].mean())),
            area=area,
            border=tuple(border),
        ))
    regions.sort(key=lambda reg: (-reg.area, reg.centroid))
    return regions


def find_contact(frame: np.ndarray, references: list[np.ndarray],
                 config: TactileConfig) -> ContactRegion | None:
    """Full pipeline for one frame; the dominant contact patch or None.

    The normalization step stretches pure sensor noise across the full range,
    so frames whose raw difference never exceeds ``contact_floor`` are
    rejected before thresholding instead of being amplified into phantom
    contacts.
    """
    delta = difference_image(frame, references)
    if float(delta.max()) < config.contact_floor:
        return None
    regions = extract_contacts(binarize(normalize(delta), config.threshold),
                               config.min_area)
    return regions[0] if regions else None


def calibrate_mapping(centroids_px: np.ndarray, offsets: np.ndarray,
                      width: int, height: int) -> TactileCalibration:
    """Least-squares fit of offset = gain @ normalized_centroid + bias.

    ``centroids_px`` is (n, 2) in (x, y) pixels, ``offsets`` (n, 2) in meters.
    Needs at least three non-collinear samples to pin down the affine map.
    """
    c = np.asarray(centroids_px, dtype=float)
    o = np.asarray(offsets, dtype=float)
    if c.ndim != 2 or c.shape[1] != 2 or c.shape != o.shape:
        raise ValueError("centroids and offsets must both be (n, 2)")
    n = c.shape[0]
    if n < 3:
        raise CalibrationError(f"need at least 3 calibration samples, got {n}")
    design = np.column_stack([c[:, 0] / (width - 1.0),
                              c[:, 1] / (height - 1.0),
                              np.ones(n)])
    if np.linalg.matrix_rank(design) < 3:
        raise CalibrationError("calibration centroids are collinear")
    coef, _, _, _ = np.linalg.lstsq(design, o, rcond=None)
    residual = design @ coef - o
    return TactileCalibration(
        gain=np.ascontiguousarray(coef[:2].T),
        bias=coef[2].copy(),
        residual_rms=float(np.sqrt(np.mean(residual ** 2))),
    )


def apply_calibration(cal: TactileCalibration, centroid_px: tuple[float, float],
                      width: int, height: int) -> np.ndarray:
    n = np.array([centroid_px[0] / (width - 1.0),
                  centroid_px[1] / (height - 1.0)])
    return cal.gain @ n + cal.bias


def estimate_offset(frame: np.ndarray, references: list[np.ndarray],
                    cal: TactileCalibration, config: TactileConfig
                    ) -> np.ndarray | None:
    """In-gripper offset from one frame, or None when nothing is touching."""
    region = find_contact(frame, references, config)
    if region is None:
        return None
    return apply_calibration(cal, region.centroid, config.width, config.height)


def save_calibration(path, cals: dict[str, TactileCalibration]) -> None:
    lines = [_CAL_MAGIC]
    for finger in FINGERS:
        cal = cals[finger]
        g = [float(v) for v in cal.gain.ravel()]
        b = [float(v) for v in cal.bias]
        lines.append(f"finger {finger}")
        lines.append(f"gain {g[0]!r} {g[1]!r} {g[2]!r} {g[3]!r}")
        lines.append(f"bias {b[0]!r} {b[1]!r}")
        lines.append(f"rms {float(cal.residual_rms)!r}")
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_calibration(path) -> dict[str, TactileCalibration]:
    with open(path, encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != _CAL_MAGIC:
        raise ValueError(f"{path}: not a calibration file")
    cals: dict[str, TactileCalibration] = {}
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if len(head) != 2 or head[0] != "finger" or head[1] not in FINGERS:
            raise ValueError(f"{path}: bad finger header {lines[i]!r}")
        gain = [float(v) for v in lines[i + 1].split()[1:]]
        bias = [float(v) for v in lines[i + 2].split()[1:]]
        rms = float(lines[i + 3].split()[1])
        cals[head[1]] = TactileCalibration(
            gain=np.array(gain).reshape(2, 2),
            bias=np.array(bias),
            residual_rms=rms,
        )
        i += 4
    missing = set(FINGERS) - set(cals)
    if missing:
        raise ValueError(f"{path}: missing calibration for {sorted(missing)}")
    return cals


def track_deviation(frames: dict[str, np.ndarray],
                    references: dict[str, list[np.ndarray]],
                    grasp_centroids: dict[str, tuple[float, float]],
                    config: TactileConfig,
                    calibration: dict[str, TactileCalibration] | None = None
                    ) -> TrackReading:
    """Slip check for one sampling instant during a monitored descent.

    Each finger's dominant contact centroid is compared with the centroid
    captured right after the grasp; per-finger pixel travel is fused by the
    configured rule. No usable contact on any finger means the vial is gone.
    The stop fires only when the fused travel strictly exceeds ``stop_px``.
    With a calibration the same fused travel is also reported in meters, for
    callers that want to correct the target rather than just bail out.
    """
    per_finger: dict[str, float | None] = {}
    metric: list[float] = []
    for finger, frame in frames.items():
        region = find_contact(frame, references[finger], config)
        if region is None:
            per_finger[finger] = None
            continue
        gx, gy = grasp_centroids[finger]
        per_finger[finger] = float(np.hypot(region.centroid[0] - gx,
                                            region.centroid[1] - gy))
        if calibration is not None:
            cal = calibration[finger]
            now = apply_calibration(cal, region.centroid,
                                    config.width, config.height)
            then = apply_calibration(cal, (gx, gy),
                                     config.width, config.height)
            metric.append(float(np.linalg.norm(now - then)))
    usable = [d for d in per_finger.values() if d is not None]
    if not usable:
        return TrackReading(TactileDecision.LOST_CONTACT, None, per_finger)
    if config.fuse == "max":
        fused = max(usable)
        fused_m = max(metric) if metric else None
    else:
        fused = sum(usable) / len(usable)
        fused_m = sum(metric) / len(metric) if metric else None
    decision = (TactileDecision.STOP if fused > config.stop_px
                else TactileDecision.CONTINUE)
    return TrackReading(decision, fused, per_finger, fused_m)
