"""Pinhole projection between image pixels and horizontal workspace planes."""

from __future__ import annotations

import numpy as np

from .core import CameraIntrinsics, Pose3


def pixel_to_world(u, v, intrinsics: CameraIntrinsics, cam: Pose3, plane_z: float):
    """Back-project a pixel onto the horizontal plane at ``plane_z``.

    Assumes a nadir (straight-down) camera model:

        x = cam.x + (u - cx) * (cam.z - plane_z) / fx
        y = cam.y + (v - cy) * (cam.z - plane_z) / fy

    Returns (x, y, plane_z); accepts scalars or arrays for u, v.
    """
    depth = cam.z - plane_z
    if depth <= 0:
        raise ValueError(f"camera height {cam.z} must be above plane z={plane_z}")
    x = cam.x + (np.asarray(u, dtype=float) - intrinsics.cx) * depth / intrinsics.fx
    y = cam.y + (np.asarray(v, dtype=float) - intrinsics.cy) * depth / intrinsics.fy
    if np.isscalar(u) or np.asarray(u).ndim == 0:
        return float(x), float(y), float(plane_z)
    return x, y, np.full_like(x, float(plane_z))


def world_to_pixel(x, y, z, intrinsics: CameraIntrinsics, cam: Pose3, tilt: float = 0.0):
    """Project world points into the image; exact inverse of pixel_to_world at tilt 0.

    ``tilt`` pitches the optical axis about the camera x axis (radians); the
    simulator renders with it, while pixel_to_world deliberately keeps the
    plain nadir model, so a nonzero tilt introduces a small oblique error.
    """
    dx = np.asarray(x, dtype=float) - cam.x
    dy = np.asarray(y, dtype=float) - cam.y
    dz = np.asarray(z, dtype=float) - cam.z
    if tilt == 0.0:
        depth = -dz
    else:
        c, s = np.cos(tilt), np.sin(tilt)
        dy, depth = c * dy + s * dz, s * dy - c * dz
    if np.any(depth <= 0):
        raise ValueError("point at or behind the camera plane")
    u = intrinsics.cx + intrinsics.fx * dx / depth
    v = intrinsics.cy + intrinsics.fy * dy / depth
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(u), float(v)
    return u, v


def plane_grid(intrinsics: CameraIntrinsics, cam: Pose3, plane_z: float,
               width: int, height: int, tilt: float = 0.0):
    """World (x, y) for every pixel center, on the plane at ``plane_z``.

    Returns two (height, width) float arrays. Inverts the same camera model
    world_to_pixel uses, including the optional tilt.
    """
    u = np.arange(width, dtype=float)[None, :]
    v = np.arange(height, dtype=float)[:, None]
    a = (u - intrinsics.cx) / intrinsics.fx
    b = (v - intrinsics.cy) / intrinsics.fy
    dz = plane_z - cam.z
    if dz >= 0:
        raise ValueError("camera must be above the plane")
    if tilt == 0.0:
        depth = -dz
        x = cam.x + a * depth
        y = np.broadcast_to(cam.y + b * depth, (height, width))
    else:
        c, s = np.cos(tilt), np.sin(tilt)
        # Solve c*dy + s*dz = b * (s*dy - c*dz) for dy at fixed dz.
        dy = -dz * (b * c + s) / (c - b * s)
        depth = s * dy - c * dz
        x = cam.x + a * depth
        y = np.broadcast_to(cam.y + dy, (height, width))
    x = np.broadcast_to(x, (height, width))
    return np.ascontiguousarray(x), np.ascontiguousarray(y)
