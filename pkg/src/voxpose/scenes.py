"""Procedural voxel scenes standing in for trained radiance-field grids."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .camera import Intrinsics, look_at
from .errors import BadSpec, UnsupportedKind
from .grid import N_SH, SH_C0, VoxelGrid
from .render import RenderConfig, render_image

KINDS = ("sphere", "box", "checker_sphere", "two_objects", "uniform_blob")


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "checker_sphere"
    resolution: int = 64
    extent: float = 1.0
    radius: float = 0.8
    color_a: tuple = (0.9, 0.35, 0.15)
    color_b: tuple = (0.15, 0.35, 0.85)
    density_scale: float = 40.0
    checker_frequency: int = 6

    def __post_init__(self):
        if self.resolution < 2:
            raise BadSpec("resolution must be >= 2")
        if not self.density_scale > 0:
            raise BadSpec("density_scale must be positive")
        if not self.extent > 0 or not self.radius > 0:
            raise BadSpec("extent and radius must be positive")
        for name in ("color_a", "color_b"):
            c = tuple(float(x) for x in getattr(self, name))
            if len(c) != 3:
                raise BadSpec(f"{name} must be an RGB triple")
            object.__setattr__(self, name, c)

    def to_dict(self):
        d = asdict(self)
        d["color_a"], d["color_b"] = list(self.color_a), list(self.color_b)
        return d

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise BadSpec("scene spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise BadSpec(f"unknown scene spec fields: {sorted(extra)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise BadSpec(str(exc)) from exc


def _soft_inside(signed_dist, width):
    """1 inside, 0 outside, linear ramp of the given width across the surface."""
    return np.clip(0.5 - signed_dist / width, 0.0, 1.0)


def _checker(x, y, z, spec):
    cell = 2.0 * spec.extent / spec.checker_frequency
    idx = (np.floor((x + spec.extent) / cell) + np.floor((y + spec.extent) / cell)
           + np.floor((z + spec.extent) / cell))
    return (idx.astype(np.int64) % 2).astype(np.float64)


def _smooth_pattern(x, y, z, spec):
    k = np.pi * spec.checker_frequency / (2.0 * spec.extent)
    return 0.5 + 0.5 * np.sin(k * x) * np.cos(k * y) * np.sin(k * z + 0.5)


def _sphere_sdf(x, y, z, center, radius):
    return np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2) - radius


def _box_sdf(x, y, z, center, half):
    q = np.maximum(np.abs(x - center[0]), np.maximum(np.abs(y - center[1]), np.abs(z - center[2])))
    return q - half


def _slab(spec: SceneSpec, x, y, z, h):
    """Density and colour-mix parameter for one z-slab of lattice points."""
    kind = spec.kind
    if kind == "sphere":
        occ = _soft_inside(_sphere_sdf(x, y, z, (0, 0, 0), spec.radius), h)
        mix = _smooth_pattern(x, y, z, spec)
    elif kind == "checker_sphere":
        occ = _soft_inside(_sphere_sdf(x, y, z, (0, 0, 0), spec.radius), h)
        mix = _checker(x, y, z, spec)
    elif kind == "box":
        occ = _soft_inside(_box_sdf(x, y, z, (0, 0, 0), 0.75 * spec.radius), h)
        mix = _checker(x, y, z, spec)
    elif kind == "two_objects":
        r = 0.5 * spec.radius
        occ_s = _soft_inside(_sphere_sdf(x, y, z, (-0.45 * spec.extent, 0, 0), r), h)
        occ_b = _soft_inside(_box_sdf(x, y, z, (0.45 * spec.extent, 0, 0), 0.8 * r), h)
        occ = np.maximum(occ_s, occ_b)
        chk = _checker(x, y, z, spec)
        mix = np.where(x < 0, chk, 1.0 - chk)
    elif kind == "uniform_blob":
        occ = _soft_inside(_sphere_sdf(x, y, z, (0, 0, 0), spec.radius), h)
        mix = np.zeros_like(x)
    else:
        raise UnsupportedKind(f"unknown scene kind {kind!r} (expected one of {KINDS})")
    return spec.density_scale * occ, mix


def build_scene(spec: SceneSpec) -> VoxelGrid:
    """Deterministic grid for a scene spec; colours are stored as degree-0 SH."""
    if spec.kind not in KINDS:
        raise UnsupportedKind(f"unknown scene kind {spec.kind!r} (expected one of {KINDS})")
    n = spec.resolution
    ax = -spec.extent + 2.0 * spec.extent * np.arange(n) / (n - 1)
    h = 2.0 * spec.extent / (n - 1)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    ca = np.asarray(spec.color_a) / SH_C0
    cb = np.asarray(spec.color_b) / SH_C0
    density = np.empty((n, n, n), dtype=np.float32)
    sh = np.zeros((n, n, n, 3, N_SH), dtype=np.float32)
    for k in range(n):
        zz = np.full_like(xx, ax[k])
        dens, mix = _slab(spec, xx, yy, zz, h)
        density[k] = dens
        sh[k, :, :, :, 0] = (1.0 - mix)[..., None] * ca + mix[..., None] * cb
    return VoxelGrid(density, sh, spec.extent)


def view_poses(n_views, radius, seed=0, max_elevation_deg=80.0):
    """Look-at poses on a sphere around the origin, elevation clamped to avoid the poles."""
    if n_views < 1:
        raise BadSpec("n_views must be >= 1")
    rng = np.random.default_rng(seed)
    poses = []
    lim = np.deg2rad(max_elevation_deg)
    for _ in range(n_views):
        az = rng.uniform(0.0, 2.0 * np.pi)
        el = np.clip(np.arcsin(rng.uniform(-1.0, 1.0)), -lim, lim)
        pos = radius * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        poses.append(look_at(pos))
    return poses


def reference_views(grid: VoxelGrid, n_views, radius, intr: Intrinsics,
                    cfg: RenderConfig = RenderConfig(), seed=0):
    """[(pose, image)] for `n_views` seeded look-at cameras at distance `radius`."""
    return [(p, render_image(grid, p, intr, cfg)) for p in view_poses(n_views, radius, seed)]
