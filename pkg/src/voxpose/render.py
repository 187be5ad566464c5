"""Emission-absorption volume rendering over a VoxelGrid."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .camera import Intrinsics, Ray, box_intersect, pixel_grid, pixel_index, ray_directions
from .errors import BadSpec, LengthMismatch
from .grid import VoxelGrid
from .lie import Pose


@dataclass(frozen=True)
class RenderConfig:
    """Ray-marching options.

    step_size is in world units; None means half a voxel edge of the grid
    being rendered.
    """

    step_size: float | None = None
    background: tuple = (1.0, 1.0, 1.0)
    sigma_threshold: float = 0.0
    stop_transmittance: float = 1e-4

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise BadSpec("step_size must be positive")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3 or not all(0.0 <= c <= 1.0 for c in bg):
            raise BadSpec("background must be an RGB triple in [0, 1]")
        object.__setattr__(self, "background", bg)

    def step_for(self, grid: VoxelGrid):
        return self.step_size if self.step_size is not None else 0.5 * grid.voxel_size

    def to_dict(self):
        return {"step_size": self.step_size, "background": list(self.background),
                "sigma_threshold": self.sigma_threshold,
                "stop_transmittance": self.stop_transmittance}

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass
class PixelBatch:
    """Continuous pixel coordinates with (optionally) their target colours."""

    uv: np.ndarray
    rgb: np.ndarray | None = None

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        if self.rgb is not None:
            self.rgb = np.asarray(self.rgb, dtype=np.float64).reshape(-1, 3)
            if len(self.rgb) != len(self.uv):
                raise LengthMismatch("uv and rgb lengths differ")

    def __len__(self):
        return len(self.uv)

    @classmethod
    def from_image(cls, image, indices=None):
        """Batch of pixel centres of an (H, W, 3) image, all or the given flat indices."""
        image = np.asarray(image, dtype=np.float64)
        h, w = image.shape[:2]
        uv = pixel_grid(Intrinsics(w, h, 1.0))
        flat = image.reshape(-1, 3)
        if indices is not None:
            indices = np.asarray(indices, dtype=np.int64)
            uv, flat = uv[indices], flat[indices]
        return cls(uv, flat)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["u", "v", "r", "g", "b"])
            rgb = self.rgb if self.rgb is not None else np.full((len(self), 3), np.nan)
            for (u, v), (r, g, b) in zip(self.uv, rgb):
                out.writerow([repr(float(x)) for x in (u, v, r, g, b)])

    @classmethod
    def load_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :2], data[:, 2:5])


@dataclass
class RenderedPixels:
    uv: np.ndarray
    colors: np.ndarray
    transmittance: np.ndarray = field(default=None, repr=False)
    weight_sum: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.uv)


def render_rays(grid: VoxelGrid, origins, dirs, cfg: RenderConfig = RenderConfig(),
                t_near=None, t_far=None, kernel=None):
    """Render unit-direction rays.

    Returns (rgb (M,3), final transmittance (M,), weight sums (M,), samples
    visited per ray (M,)).

    t_near/t_far default to the grid box intersection.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    m = len(origins)
    e = grid.extent
    if t_near is None or t_far is None:
        tn, tf = box_intersect(origins, dirs, -e, e)
    else:
        tn = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (m,)).copy()
        tf = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (m,)).copy()

    miss = ~(tn < tf)
    tn = np.ascontiguousarray(np.where(miss, 0.0, tn))
    tf = np.ascontiguousarray(np.where(miss, 0.0, tf))

    kernel = kernel or _backend.march
    return kernel(grid.density, grid.sh_active, e,
                  grid.block_mask, grid.block_size, origins, dirs, tn, tf,
                  grid.block_box[0], grid.block_box[1],
                  float(cfg.step_for(grid)), np.asarray(cfg.background, dtype=np.float64),
                  float(cfg.sigma_threshold), float(cfg.stop_transmittance))


def render_ray(grid: VoxelGrid, ray: Ray, cfg: RenderConfig = RenderConfig(), return_weights=False):
    rgb, trans, wsum, _ = render_rays(grid, ray.origin, ray.direction, cfg,
                                   t_near=ray.t_near, t_far=ray.t_far)
    if return_weights:
        return rgb[0], float(wsum[0]), float(trans[0])
    return rgb[0]


def render_pixels(grid: VoxelGrid, pose: Pose, intr: Intrinsics, pixels,
                  cfg: RenderConfig = RenderConfig(), kernel=None) -> RenderedPixels:
    uv = pixels.uv if isinstance(pixels, PixelBatch) else np.asarray(pixels, dtype=np.float64)
    uv = uv.reshape(-1, 2)
    dirs = ray_directions(pose, intr, uv)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    rgb, trans, wsum, _ = render_rays(grid, origins, dirs, cfg, kernel=kernel)
    return RenderedPixels(uv, rgb, trans, wsum)


def render_image(grid: VoxelGrid, pose: Pose, intr: Intrinsics,
                 cfg: RenderConfig = RenderConfig(), kernel=None):
    """Full (H, W, 3) float image."""
    out = render_pixels(grid, pose, intr, pixel_grid(intr), cfg, kernel=kernel)
    return out.colors.reshape(intr.height, intr.width, 3)


def photometric_error(rendered, gt):
    """Sum of squared RGB differences and the per-pixel residual (rendered - gt)."""
    pred = rendered.colors if isinstance(rendered, RenderedPixels) else np.asarray(rendered)
    target = gt.rgb if isinstance(gt, PixelBatch) else np.asarray(gt)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if pred.shape != target.shape:
        raise LengthMismatch(f"{len(pred)} rendered pixels vs {len(target)} ground-truth pixels")
    residual = pred - target
    return float(np.sum(residual * residual)), residual


def gather(image, intr: Intrinsics, uv):
    """Colours of an (H, W, 3) image at the pixels containing uv."""
    return np.asarray(image).reshape(-1, 3)[pixel_index(intr, uv)]


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image):
    from PIL import Image

    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_png(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
