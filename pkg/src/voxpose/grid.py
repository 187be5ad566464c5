"""Dense voxel lattice with per-corner density and degree-2 SH colour."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BadMagic, BadSpec, CorruptLength, OutOfGrid, UnsupportedVersion

N_SH = 9
MAGIC = b"VOXG"
VERSION = 1
_HEADER = struct.Struct("<4sIId")

# real spherical harmonics up to degree 2
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)


def sh_basis(dirs):
    """Basis values Y_0..Y_8 for unit directions, shape (..., 9)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([
        np.full_like(x, SH_C0),
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * z * z - x * x - y * y),
        SH_C2[3] * x * z,
        SH_C2[4] * (x * x - y * y),
    ], axis=-1)


def sh_eval(sh, d):
    """RGB for SH coefficients of shape (..., 3, 9) seen along unit direction d."""
    d = np.asarray(d, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view direction must be unit length")
    rgb = np.asarray(sh, dtype=np.float64) @ sh_basis(d)
    return np.clip(rgb, 0.0, 1.0)


@dataclass(frozen=True)
class SamplePoint:
    sigma: float
    sh: np.ndarray  # (3, 9)


class VoxelGrid:
    """Values live on lattice corners; corner i sits at -extent + 2*extent*i/(N-1).

    `density` has shape (N, N, N) and `sh` shape (N, N, N, 3, 9), both indexed
    [z, y, x] so that x varies fastest in memory. Treat instances as immutable.
    """

    def __init__(self, density, sh, extent=1.0):
        density = np.ascontiguousarray(density, dtype=np.float32)
        sh = np.ascontiguousarray(sh, dtype=np.float32)
        n = density.shape[0]
        if density.ndim != 3 or density.shape != (n, n, n) or n < 2:
            raise BadSpec(f"density must be a cube of side >= 2, got {density.shape}")
        if sh.shape != (n, n, n, 3, N_SH):
            raise BadSpec(f"sh must have shape {(n, n, n, 3, N_SH)}, got {sh.shape}")
        if not extent > 0:
            raise BadSpec("extent must be positive")
        if not (np.all(np.isfinite(density)) and np.all(density >= 0)):
            raise BadSpec("densities must be finite and non-negative")
        if not np.all(np.isfinite(sh)):
            raise BadSpec("SH coefficients must be finite")
        density.setflags(write=False)
        sh.setflags(write=False)
        self.density = density
        self.sh = sh
        self.extent = float(extent)

    @property
    def resolution(self):
        return self.density.shape[0]

    @property
    def voxel_size(self):
        return 2.0 * self.extent / (self.resolution - 1)

    def __repr__(self):
        return f"VoxelGrid(N={self.resolution}, extent={self.extent})"

    @classmethod
    def empty(cls, resolution, extent=1.0):
        n = resolution
        return cls(np.zeros((n, n, n)), np.zeros((n, n, n, 3, N_SH)), extent)

    def lattice_coords(self):
        """World coordinate of each lattice index along one axis."""
        n = self.resolution
        return -self.extent + 2.0 * self.extent * np.arange(n) / (n - 1)

    @cached_property
    def sh_flat(self):
        return self.sh.reshape(self.density.shape + (3 * N_SH,))

    @cached_property
    def active_coefficients(self):
        """1 when every coefficient above degree 0 is zero, else 9."""
        return 1 if not np.any(self.sh[..., 1:]) else N_SH

    @cached_property
    def sh_active(self):
        """Compact (N, N, N, 3*k) copy of the first k = active_coefficients per channel.

        Dropped coefficients are all zero, so rendering from this is exact and
        far more cache friendly for degree-0 scenes.
        """
        k = self.active_coefficients
        if k == N_SH:
            return self.sh_flat
        n = self.resolution
        return np.ascontiguousarray(self.sh[..., :k]).reshape(n, n, n, 3 * k)

    block_size = 4

    @cached_property
    def block_mask(self):
        """uint8 flags per macro block of block_size^3 cells: 1 if any corner density > 0."""
        n = self.resolution
        b = self.block_size
        nb = -(-(n - 1) // b)
        occ = self.density > 0
        # a cell is occupied if any of its 8 corners is
        cell = np.zeros((n - 1,) * 3, dtype=bool)
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    cell |= occ[dz:n - 1 + dz, dy:n - 1 + dy, dx:n - 1 + dx]
        padded = np.zeros((nb * b,) * 3, dtype=bool)
        padded[:n - 1, :n - 1, :n - 1] = cell
        mask = padded.reshape(nb, b, nb, b, nb, b).any(axis=(1, 3, 5))
        return np.ascontiguousarray(mask, dtype=np.uint8)

    @cached_property
    def block_box(self):
        """World-space (lo, hi) bounding the occupied macro blocks; inverted when empty."""
        occ = np.argwhere(self.block_mask)
        if occ.size == 0:
            return np.ones(3), -np.ones(3)
        h = self.voxel_size * self.block_size
        lo = -self.extent + occ.min(axis=0)[::-1] * h
        hi = np.minimum(-self.extent + (occ.max(axis=0)[::-1] + 1) * h, self.extent)
        return np.ascontiguousarray(lo, dtype=np.float64), np.ascontiguousarray(hi, dtype=np.float64)

    def occupancy_fraction(self):
        return float(np.count_nonzero(self.density) / self.density.size)

    def to_index(self, points):
        """Continuous lattice coordinates (x, y, z order) of world points."""
        return (np.asarray(points, dtype=np.float64) + self.extent) / self.voxel_size

    def sample(self, points, strict=True):
        """Trilinear density and SH at world points of shape (M, 3).

        Returns (sigma (M,), sh (M, 3, 9)). With strict=False, points outside the
        lattice get zero density and zero SH instead of raising OutOfGrid.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        g = self.to_index(p)
        n = self.resolution
        inside = np.all((g >= 0) & (g <= n - 1), axis=-1)
        if strict and not inside.all():
            raise OutOfGrid(f"point {p[np.argmin(inside)]} outside grid extent {self.extent}")
        g = np.clip(g, 0, n - 1)
        # snap round-off so lattice points return their stored values exactly
        near = np.rint(g)
        g = np.where(np.abs(g - near) < 1e-9, near, g)
        i0 = np.minimum(np.floor(g).astype(np.int64), n - 2)
        f = g - i0
        sigma = np.zeros(len(p))
        sh = np.zeros((len(p), 3 * N_SH))
        dens = self.density
        shf = self.sh_flat
        for dz in (0, 1):
            wz = f[:, 2] if dz else 1.0 - f[:, 2]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dx in (0, 1):
                    wx = f[:, 0] if dx else 1.0 - f[:, 0]
                    w = wz * wy * wx
                    iz, iy, ix = i0[:, 2] + dz, i0[:, 1] + dy, i0[:, 0] + dx
                    sigma += w * dens[iz, iy, ix]
                    sh += w[:, None] * shf[iz, iy, ix]
        sigma[~inside] = 0.0
        sh[~inside] = 0.0
        return sigma, sh.reshape(-1, 3, N_SH)

    def equals(self, other: "VoxelGrid"):
        return (self.extent == other.extent
                and np.array_equal(self.density, other.density)
                and np.array_equal(self.sh, other.sh))


def trilinear_sample(grid: VoxelGrid, p) -> SamplePoint:
    sigma, sh = grid.sample(np.asarray(p, dtype=np.float64).reshape(1, 3))
    return SamplePoint(float(sigma[0]), sh[0])


def resample_grid(grid: VoxelGrid, new_resolution: int) -> VoxelGrid:
    """Grid at a new resolution whose corners are trilinear samples of `grid`."""
    if new_resolution < 2:
        raise BadSpec("resolution must be >= 2")
    n = new_resolution
    ax = -grid.extent + 2.0 * grid.extent * np.arange(n) / (n - 1)
    dens = np.empty((n, n, n), dtype=np.float32)
    sh = np.empty((n, n, n, 3, N_SH), dtype=np.float32)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    for k in range(n):  # one z-slab at a time bounds memory
        pts = np.stack([xx.ravel(), yy.ravel(), np.full(n * n, ax[k])], axis=-1)
        s, c = grid.sample(pts, strict=False)
        dens[k] = s.reshape(n, n)
        sh[k] = c.reshape(n, n, 3, N_SH)
    return VoxelGrid(np.maximum(dens, 0.0), sh, grid.extent)


def save_grid(grid: VoxelGrid, path):
    n = grid.resolution
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, grid.extent))
        fh.write(grid.density.astype("<f4", copy=False).tobytes())
        fh.write(grid.sh.astype("<f4", copy=False).tobytes())


def load_grid(path) -> VoxelGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        if not data.startswith(MAGIC[:len(data)]):
            raise BadMagic("not a voxel grid file")
        raise CorruptLength(f"file too short for header ({len(data)} bytes)")
    magic, version, n, extent = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"grid file version {version} (expected {VERSION})")
    n_corners = n ** 3
    expected = _HEADER.size + 4 * n_corners * (1 + 3 * N_SH)
    if len(data) != expected or n < 2:
        raise CorruptLength(f"expected {expected} bytes for N={n}, got {len(data)}")
    off = _HEADER.size
    dens = np.frombuffer(data, dtype="<f4", count=n_corners, offset=off)
    sh = np.frombuffer(data, dtype="<f4", count=n_corners * 3 * N_SH, offset=off + 4 * n_corners)
    return VoxelGrid(dens.reshape(n, n, n), sh.reshape(n, n, n, 3, N_SH), extent)
