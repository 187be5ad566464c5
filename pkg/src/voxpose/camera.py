"""Pinhole intrinsics and world-space ray generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadSpec, OutOfBoundsPixel
from .lie import Pose


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    focal: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise BadSpec("image width and height must be >= 1")
        if not self.focal > 0:
            raise BadSpec("focal length must be positive")

    @property
    def n_pixels(self):
        return self.width * self.height

    def to_dict(self):
        return {"width": self.width, "height": self.height, "focal": self.focal}

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(int(obj["width"]), int(obj["height"]), float(obj["focal"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadSpec(f"malformed intrinsics object: {exc}") from exc


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    @property
    def hits(self):
        return self.t_near < self.t_far


def pixel_grid(intr: Intrinsics):
    """Pixel centres (u + 0.5, v + 0.5) in row-major order, shape (W*H, 2)."""
    v, u = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    return np.stack([u.ravel() + 0.5, v.ravel() + 0.5], axis=-1)


def pixel_index(intr: Intrinsics, uv):
    """Flat row-major index of the pixel containing each continuous coordinate."""
    uv = np.asarray(uv, dtype=np.float64)
    return np.floor(uv[:, 1]).astype(np.int64) * intr.width + np.floor(uv[:, 0]).astype(np.int64)


def check_pixels(intr: Intrinsics, uv):
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    bad = ~((uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height))
    if bad.any():
        first = uv[np.argmax(bad)]
        raise OutOfBoundsPixel(
            f"pixel ({first[0]}, {first[1]}) outside {intr.width}x{intr.height} image")
    return uv


def camera_directions(intr: Intrinsics, uv):
    """Unnormalised camera-frame directions ((u-W/2)/f, -(v-H/2)/f, -1)."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.empty((uv.shape[0], 3))
    d[:, 0] = (uv[:, 0] - 0.5 * intr.width) / intr.focal
    d[:, 1] = -(uv[:, 1] - 0.5 * intr.height) / intr.focal
    d[:, 2] = -1.0
    return d


def ray_directions(pose: Pose, intr: Intrinsics, uv):
    """Unit world-space directions for each pixel coordinate."""
    d = camera_directions(intr, check_pixels(intr, uv)) @ pose.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def box_intersect(origins, dirs, lo, hi):
    """Slab test against an axis-aligned box; returns (t_near, t_far).

    Rays starting inside the box get t_near = 0; misses have t_near >= t_far.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / dirs
        t0 = (np.asarray(lo) - origins) * inv
        t1 = (np.asarray(hi) - origins) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    # zero direction component: the slab is either everywhere or nowhere
    par = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t_near = np.maximum(tmin.max(axis=-1), 0.0)
    t_far = tmax.min(axis=-1)
    return t_near, t_far


def ray_for_pixel(pose: Pose, intr: Intrinsics, u, v, extent=1.0) -> Ray:
    d = ray_directions(pose, intr, [[u, v]])[0]
    o = pose.translation.copy()
    tn, tf = box_intersect(o[None], d[None], -extent, extent)
    return Ray(o, d, float(tn[0]), float(tf[0]))


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose at `position` whose -z axis points at `target`."""
    position = np.asarray(position, dtype=np.float64)
    z = position - np.asarray(target, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), position)
