"""Render-based 6-DoF pose estimation with central-difference image gradients.

Each epoch renders the current estimate on a pixel subset, builds the
steepest-descent image for either the rotation or the translation block from
six extra renders (three DoF, plus and minus one probe step), and takes a
gradient step on that block only.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .camera import Intrinsics, pixel_grid, pixel_index
from .errors import BadSpec, NonFiniteUpdate, ShapeMismatch
from .grid import VoxelGrid
from .lie import Pose, exp_so3, orthonormalize, relative_angle
from .render import RenderConfig, photometric_error, render_pixels

ROTATION = "rotation"
TRANSLATION = "translation"
BLOCKS = (ROTATION, TRANSLATION)

# per-pixel equivalent of a photometric cutoff of 2000 on an 800x800 image
DEFAULT_EPSILON = 2000.0 / 640000.0


@dataclass(frozen=True)
class PerturbSpec:
    max_translation: float = 0.1
    max_rotation: float = math.radians(5.0)
    seed: int = 0

    def __post_init__(self):
        if self.max_translation < 0 or self.max_rotation < 0:
            raise BadSpec("perturbation magnitudes must be non-negative")


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of the pose search.

    epsilon is a per-pixel photometric cutoff: the loop stops once the summed
    squared RGB error over the sampled pixels is at most epsilon * n_pixels.
    trans_step=None means one voxel edge of the grid being searched.
    """

    lr_translation: float = 4.0
    lr_rotation: float = 5.0
    decay_factor: float = 0.25
    decay_interval_epochs: int = 100
    max_epochs: int = 1000
    epsilon: float = DEFAULT_EPSILON
    subsample_fraction: float = 1.0
    trans_step: float | None = None
    rot_step: float = 0.001
    alternation: tuple = (1, 1)
    resample_each_epoch: bool = True
    shrink_probe_steps: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (self.lr_translation > 0 and self.lr_rotation > 0):
            raise BadSpec("learning rates must be positive")
        if not 0.0 <= self.decay_factor < 1.0:
            raise BadSpec("decay_factor must lie in [0, 1)")
        if self.decay_interval_epochs < 1 or self.max_epochs < 1:
            raise BadSpec("decay_interval_epochs and max_epochs must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise BadSpec("subsample_fraction must lie in (0, 1]")
        if self.epsilon < 0:
            raise BadSpec("epsilon must be non-negative")
        if self.trans_step is not None and not self.trans_step > 0:
            raise BadSpec("trans_step must be positive")
        if not self.rot_step > 0:
            raise BadSpec("rot_step must be positive")
        alt = self.alternation
        if isinstance(alt, str):
            if alt != "rot_then_trans_1_1":
                raise BadSpec(f"unknown alternation {alt!r}")
            alt = (1, 1)
        alt = tuple(int(k) for k in alt)
        if len(alt) != 2 or min(alt) < 0 or sum(alt) < 1:
            raise BadSpec("alternation must be (k_rot, k_trans) with a positive total")
        object.__setattr__(self, "alternation", alt)

    def lr_scale(self, epoch):
        """Multiplier on both learning rates for a 0-based epoch index."""
        return (1.0 - self.decay_factor) ** (epoch // self.decay_interval_epochs)

    def block_for(self, epoch):
        k_rot, k_trans = self.alternation
        return ROTATION if epoch % (k_rot + k_trans) < k_rot else TRANSLATION

    def to_dict(self):
        d = asdict(self)
        d["alternation"] = list(self.alternation)
        return d

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise BadSpec(f"unknown optimizer fields: {sorted(extra)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise BadSpec(str(exc)) from exc


@dataclass
class EpochRecord:
    epoch: int
    pose: Pose
    photo_err: float
    re_deg: float
    te_units: float
    step_kind: str
    ms: float


@dataclass
class OptimizerTrace:
    records: list = field(default_factory=list)
    final_pose: Pose | None = None
    converged: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["epoch", "step_kind", "photo_err", "re_deg", "te_units", "ms"])
            for r in self.records:
                out.writerow([r.epoch, r.step_kind, repr(r.photo_err), repr(r.re_deg),
                              repr(r.te_units), f"{r.ms:.3f}"])

    def same_as(self, other: "OptimizerTrace"):
        """Equality of everything except wall-clock timings."""
        if len(self) != len(other) or self.converged != other.converged:
            return False
        for a, b in zip(self.records, other.records):
            if (a.epoch, a.step_kind) != (b.epoch, b.step_kind):
                return False
            if not (a.pose.equals(b.pose) and a.photo_err == b.photo_err
                    and a.re_deg == b.re_deg and a.te_units == b.te_units):
                return False
        return self.final_pose.equals(other.final_pose)


def perturb_pose(gt: Pose, spec: PerturbSpec) -> Pose:
    """Offset every DoF by a uniform magnitude up to the given limit with random sign.

    Translation offsets are along world axes; the rotation offset is applied
    in the camera frame.
    """
    rng = np.random.default_rng(spec.seed)
    t_off = rng.uniform(0.0, 1.0, 3) * spec.max_translation * rng.choice([-1.0, 1.0], 3)
    r_off = rng.uniform(0.0, 1.0, 3) * spec.max_rotation * rng.choice([-1.0, 1.0], 3)
    return Pose(gt.rotation @ exp_so3(r_off), gt.translation + t_off)


def step_pose(pose: Pose, block: str, axis: int, amount: float) -> Pose:
    """Move one DoF: world-axis translation or left-composed rotation about a world axis."""
    if block == TRANSLATION:
        t = pose.translation.copy()
        t[axis] += amount
        return Pose(pose.rotation, t)
    if block == ROTATION:
        w = np.zeros(3)
        w[axis] = amount
        return Pose(exp_so3(w) @ pose.rotation, pose.translation)
    raise ValueError(f"unknown block {block!r}")


def probe_step(grid: VoxelGrid, cfg: OptimizerConfig, block: str, epoch=0):
    if block == TRANSLATION:
        h = cfg.trans_step if cfg.trans_step is not None else grid.voxel_size
    else:
        h = cfg.rot_step
    if cfg.shrink_probe_steps:
        h *= cfg.lr_scale(epoch)
    return h


def central_diff_block(grid: VoxelGrid, pose: Pose, intr: Intrinsics, pixels, block: str,
                       step: float, render_cfg: RenderConfig = RenderConfig()):
    """Steepest-descent image for one 3-DoF block, shape (n_pixels * 3, 3).

    Column i is (render(pose + step e_i) - render(pose - step e_i)) / 2 with
    rows ordered pixel-major, channel-minor.
    """
    if block not in BLOCKS:
        raise ValueError(f"unknown block {block!r}")
    uv = getattr(pixels, "uv", pixels)
    cols = []
    for axis in range(3):
        plus = render_pixels(grid, step_pose(pose, block, axis, step), intr, uv, render_cfg).colors
        minus = render_pixels(grid, step_pose(pose, block, axis, -step), intr, uv, render_cfg).colors
        cols.append(((plus - minus) / 2.0).ravel())
    return np.stack(cols, axis=1)


def sgd_step(pose: Pose, J, dI, lr: float, block: str) -> Pose:
    """Descent step on one block: g = J^T dI / n_pixels, then move by -lr * g."""
    J = np.asarray(J, dtype=np.float64)
    dI = np.asarray(dI, dtype=np.float64).ravel()
    if J.ndim != 2 or J.shape[1] != 3 or J.shape[0] != dI.size or dI.size % 3:
        raise ShapeMismatch(f"J {J.shape} incompatible with residual of length {dI.size}")
    g = (J.T @ dI) / (dI.size // 3)
    if not np.all(np.isfinite(g)):
        raise NonFiniteUpdate(f"non-finite {block} gradient {g}")
    if not np.any(g):
        return pose
    if block == TRANSLATION:
        return Pose(pose.rotation, pose.translation - lr * g)
    if block == ROTATION:
        return Pose(orthonormalize(exp_so3(-lr * g) @ pose.rotation), pose.translation)
    raise ValueError(f"unknown block {block!r}")


def pose_gradient(grid: VoxelGrid, pose: Pose, intr: Intrinsics, gt_image, uv=None,
                  cfg: OptimizerConfig = OptimizerConfig(),
                  render_cfg: RenderConfig = RenderConfig()):
    """Both block gradients g = J^T dI / n_pixels at `pose`, as (g_rot, g_trans).

    uv defaults to every pixel centre; gt colours are looked up per pixel.
    """
    if uv is None:
        uv = pixel_grid(intr)
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_image, dtype=np.float64).reshape(-1, 3)[pixel_index(intr, uv)]
    _, residual = photometric_error(render_pixels(grid, pose, intr, uv, render_cfg).colors, gt)
    out = []
    for block in BLOCKS:
        J = central_diff_block(grid, pose, intr, uv, block, probe_step(grid, cfg, block), render_cfg)
        out.append(J.T @ residual.ravel() / len(uv))
    return tuple(out)


class PixelSampler:
    """Per-epoch pixel subsets drawn without replacement, in row-major order."""

    def __init__(self, intr: Intrinsics, fraction: float, seed=0, resample=True):
        self.uv_all = pixel_grid(intr)
        self.n_total = intr.n_pixels
        self.n = min(self.n_total, math.ceil(fraction * self.n_total - 1e-9))
        self.rng = np.random.default_rng(seed)
        self.resample = resample
        self._fixed = None

    def draw(self):
        if self.n == self.n_total:
            return np.arange(self.n_total)
        if self._fixed is not None and not self.resample:
            return self._fixed
        idx = np.sort(self.rng.choice(self.n_total, self.n, replace=False))
        self._fixed = idx
        return idx


def estimate_pose(grid: VoxelGrid, gt_image, intr: Intrinsics, init: Pose,
                  cfg: OptimizerConfig = OptimizerConfig(), gt_pose: Pose | None = None,
                  render_cfg: RenderConfig = RenderConfig(), on_epoch=None):
    """Recover the pose that rendered `gt_image` starting from `init`.

    gt_pose only feeds the RE/TE columns of the trace. `on_epoch(record,
    rendered_colors, pixel_indices)` is called after every epoch if given.
    Returns (final_pose, trace).
    """
    gt_flat = np.asarray(gt_image, dtype=np.float64).reshape(-1, 3)
    if gt_flat.shape[0] != intr.n_pixels:
        raise ShapeMismatch(f"image has {gt_flat.shape[0]} pixels, intrinsics say {intr.n_pixels}")
    sampler = PixelSampler(intr, cfg.subsample_fraction, cfg.seed, cfg.resample_each_epoch)
    trace = OptimizerTrace()
    pose = init

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        idx = sampler.draw()
        uv = sampler.uv_all[idx]
        rendered = render_pixels(grid, pose, intr, uv, render_cfg)
        err, residual = photometric_error(rendered.colors, gt_flat[idx])
        if gt_pose is not None:
            re = math.degrees(relative_angle(pose.rotation, gt_pose.rotation))
            te = float(np.linalg.norm(pose.translation - gt_pose.translation))
        else:
            re = te = float("nan")

        if err <= cfg.epsilon * len(idx):
            rec = EpochRecord(epoch, pose, err, re, te, "converged",
                              (time.perf_counter() - t0) * 1e3)
            trace.records.append(rec)
            trace.converged = True
            if on_epoch:
                on_epoch(rec, rendered.colors, idx)
            break

        block = cfg.block_for(epoch)
        scale = cfg.lr_scale(epoch)
        lr = (cfg.lr_rotation if block == ROTATION else cfg.lr_translation) * scale
        J = central_diff_block(grid, pose, intr, uv, block, probe_step(grid, cfg, block, epoch),
                               render_cfg)
        try:
            new_pose = sgd_step(pose, J, residual, lr, block)
            if not new_pose.is_valid(1e-6):
                raise NonFiniteUpdate(f"invalid pose after {block} update")
        except NonFiniteUpdate as exc:
            new_pose = None
            reason = str(exc)

        rec = EpochRecord(epoch, pose, err, re, te, block, (time.perf_counter() - t0) * 1e3)
        trace.records.append(rec)
        if on_epoch:
            on_epoch(rec, rendered.colors, idx)
        if new_pose is None:
            trace.final_pose = pose
            raise NonFiniteUpdate(f"epoch {epoch}: {reason}", trace)
        pose = new_pose

    trace.final_pose = pose
    return pose, trace
