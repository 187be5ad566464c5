"""Pose-error metrics and the perturb-and-recover experiment runner."""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .camera import Intrinsics
from .errors import BadSpec
from .grid import VoxelGrid, resample_grid
from .lie import Pose, log_so3
from .optimizer import OptimizerConfig, PerturbSpec, estimate_pose, perturb_pose
from .render import RenderConfig, render_image, save_png
from .scenes import SceneSpec, build_scene, view_poses

ABLATION_AXES = ("none", "subsample", "resolution")
REPORT_COLUMNS = ["arm", "n_poses", "pct_re_lt_cutoff", "pct_te_lt_cutoff", "pct_success",
                  "avg_re_deg", "avg_te_units", "avg_runtime_s", "avg_ms_per_epoch"]
POSE_COLUMNS = ["arm", "pose_index", "seed", "re0_deg", "te0_units", "re_deg", "te_units",
                "epochs", "converged", "re_ok", "te_ok", "success", "runtime_s"]


def rotation_error(a, b):
    """Geodesic angle between two rotations in degrees."""
    rel = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64).T
    return min(180.0, math.degrees(float(np.linalg.norm(log_so3(rel)))))


def translation_error(a, b):
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


@dataclass(frozen=True)
class PoseError:
    re: float
    te: float

    @classmethod
    def between(cls, est: Pose, gt: Pose):
        return cls(rotation_error(est.rotation, gt.rotation),
                   translation_error(est.translation, gt.translation))


def pose_seed(master, index):
    """Seed for the index-th pose of an experiment; identical across ablation arms."""
    return int(master) * 100_003 + int(index)


@dataclass(frozen=True)
class ExperimentSpec:
    """One perturb-and-recover protocol, optionally swept over an ablation axis.

    te_max=None means 10% of the grid width. For the resolution axis the
    ground-truth images come from the scene built at `reference_resolution`
    (default: the largest swept value) and every arm searches a grid
    trilinearly resampled from it.
    """

    scene: SceneSpec = SceneSpec()
    n_poses: int = 20
    max_translation: float = 0.1
    max_rotation_deg: float = 5.0
    optimizer: OptimizerConfig = OptimizerConfig()
    render: RenderConfig = RenderConfig()
    intrinsics: Intrinsics = Intrinsics(128, 128, 177.8)
    camera_radius: float = 4.0
    ablation: str = "none"
    values: tuple = ()
    reference_resolution: int | None = None
    re_max: float = 5.0
    te_max: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_poses < 1:
            raise BadSpec("n_poses must be >= 1")
        if self.ablation not in ABLATION_AXES:
            raise BadSpec(f"ablation must be one of {ABLATION_AXES}")
        vals = tuple(self.values)
        if self.ablation != "none" and not vals:
            raise BadSpec(f"ablation {self.ablation!r} needs values")
        if self.ablation == "subsample" and not all(0 < v <= 1 for v in vals):
            raise BadSpec("subsample values must lie in (0, 1]")
        if self.ablation == "resolution":
            vals = tuple(int(v) for v in vals)
            if min(vals) < 2:
                raise BadSpec("resolution values must be >= 2")
        object.__setattr__(self, "values", vals)
        if self.max_translation < 0 or self.max_rotation_deg < 0:
            raise BadSpec("perturbation magnitudes must be non-negative")

    @property
    def te_cutoff(self):
        return self.te_max if self.te_max is not None else 0.2 * self.scene.extent

    def arms(self):
        """[(label, value)] in sweep order; value is None without an ablation."""
        if self.ablation == "none":
            return [("base", None)]
        prefix = "frac" if self.ablation == "subsample" else "N"
        return [(f"{prefix}={v:g}", v) for v in self.values]

    def to_dict(self):
        return {"scene": self.scene.to_dict(), "n_poses": self.n_poses,
                "max_translation": self.max_translation, "max_rotation_deg": self.max_rotation_deg,
                "optimizer": self.optimizer.to_dict(), "render": self.render.to_dict(),
                "intrinsics": self.intrinsics.to_dict(), "camera_radius": self.camera_radius,
                "ablation": self.ablation, "values": list(self.values),
                "reference_resolution": self.reference_resolution,
                "re_max": self.re_max, "te_max": self.te_max, "seed": self.seed}

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise BadSpec("experiment spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise BadSpec(f"unknown experiment fields: {sorted(extra)}")
        kw = dict(obj)
        try:
            if "scene" in kw:
                kw["scene"] = SceneSpec.from_dict(kw["scene"])
            if "optimizer" in kw:
                kw["optimizer"] = OptimizerConfig.from_dict(kw["optimizer"])
            if "render" in kw:
                kw["render"] = RenderConfig.from_dict(kw["render"])
            if "intrinsics" in kw:
                kw["intrinsics"] = Intrinsics.from_dict(kw["intrinsics"])
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise BadSpec(str(exc)) from exc


@dataclass
class PoseRecord:
    arm: str
    pose_index: int
    seed: int
    re0_deg: float
    te0_units: float
    re_deg: float
    te_units: float
    epochs: int
    converged: bool
    re_ok: bool
    te_ok: bool
    success: bool
    runtime_s: float
    re_curve: np.ndarray = field(default=None, repr=False)
    te_curve: np.ndarray = field(default=None, repr=False)
    ms_per_epoch: float = 0.0

    def row(self):
        return [self.arm, self.pose_index, self.seed, repr(self.re0_deg), repr(self.te0_units),
                repr(self.re_deg), repr(self.te_units), self.epochs, int(self.converged),
                int(self.re_ok), int(self.te_ok), int(self.success), f"{self.runtime_s:.4f}"]


@dataclass
class ArmSummary:
    arm: str
    n_poses: int
    pct_re_lt_cutoff: float
    pct_te_lt_cutoff: float
    pct_success: float
    avg_re_deg: float
    avg_te_units: float
    avg_runtime_s: float
    avg_ms_per_epoch: float

    @classmethod
    def from_records(cls, arm, records):
        n = len(records)
        return cls(arm, n,
                   sum(r.re_ok for r in records) / n,
                   sum(r.te_ok for r in records) / n,
                   sum(r.success for r in records) / n,
                   float(np.mean([r.re_deg for r in records])),
                   float(np.mean([r.te_units for r in records])),
                   float(np.mean([r.runtime_s for r in records])),
                   float(np.mean([r.ms_per_epoch for r in records])))

    def row(self):
        vals = asdict(self)
        return [vals[c] if isinstance(vals[c], (str, int)) else repr(vals[c]) for c in REPORT_COLUMNS]


@dataclass
class Report:
    spec: ExperimentSpec
    summaries: list
    records: list

    def summary(self, arm):
        for s in self.summaries:
            if s.arm == arm:
                return s
        raise KeyError(arm)

    def curves(self, arm):
        return epoch_curves([r for r in self.records if r.arm == arm], self.spec.re_max,
                            self.spec.te_cutoff)


def epoch_curves(records, re_max, te_max):
    """Per-epoch mean/median RE and TE and failure fraction across runs.

    Runs that stopped early hold their final value for the remaining epochs.
    """
    length = max(len(r.re_curve) for r in records)

    def pad(c):
        return np.concatenate([c, np.full(length - len(c), c[-1])])

    re = np.stack([pad(r.re_curve) for r in records])
    te = np.stack([pad(r.te_curve) for r in records])
    return {"epoch": np.arange(length),
            "mean_re": re.mean(axis=0), "median_re": np.median(re, axis=0),
            "fail_re": (re >= re_max).mean(axis=0),
            "mean_te": te.mean(axis=0), "median_te": np.median(te, axis=0),
            "fail_te": (te >= te_max).mean(axis=0)}


def write_curves_csv(path, curves):
    keys = list(curves)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(keys)
        for i in range(len(curves["epoch"])):
            out.writerow([int(curves["epoch"][i])] + [repr(float(curves[k][i])) for k in keys[1:]])


def read_pose_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_report_csv(path, summaries):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(REPORT_COLUMNS)
        for s in summaries:
            out.writerow(s.row())


# Worker state for forked pool processes; set before the pool starts.
_JOB = {}


def _run_pose(args):
    arm, k = args
    job = _JOB
    spec = job["spec"]
    gt_pose = job["poses"][k]
    grid = job["grids"][arm]
    cfg = job["cfgs"][arm]
    seed = pose_seed(spec.seed, k)
    init = perturb_pose(gt_pose, PerturbSpec(spec.max_translation,
                                             math.radians(spec.max_rotation_deg), seed))
    cfg = replace(cfg, seed=seed)
    on_epoch = None
    frame_dir = None
    if job["out_dir"] is not None and job["frames"]:
        frame_dir = os.path.join(job["out_dir"], "frames", f"{_safe(arm)}_pose{k:03d}")
        os.makedirs(frame_dir, exist_ok=True)
        on_epoch = _overlay_writer(frame_dir, job["images"][k], spec.intrinsics)

    t0 = time.perf_counter()
    final, trace = estimate_pose(grid, job["images"][k], spec.intrinsics, init, cfg,
                                 gt_pose=gt_pose, render_cfg=spec.render, on_epoch=on_epoch)
    runtime = time.perf_counter() - t0
    err = PoseError.between(final, gt_pose)
    first = trace.records[0]
    re_curve = np.append(trace.column("re_deg"), err.re)
    te_curve = np.append(trace.column("te_units"), err.te)
    re_ok = err.re < spec.re_max
    te_ok = err.te < spec.te_cutoff
    if job["out_dir"] is not None:
        trace.write_csv(os.path.join(job["out_dir"], "traces", f"{_safe(arm)}_pose{k:03d}.csv"))
    return PoseRecord(arm, k, seed, first.re_deg, first.te_units, err.re, err.te, len(trace),
                      trace.converged, re_ok, te_ok, re_ok and te_ok, runtime,
                      re_curve, te_curve, float(np.mean(trace.column("ms"))))


def _safe(label):
    return label.replace("=", "").replace(".", "p")


def _overlay_writer(frame_dir, gt_image, intr: Intrinsics):
    """Callback writing the current estimate blended 50/50 over the ground truth."""
    gt = np.asarray(gt_image, dtype=np.float64).reshape(-1, 3)

    def write(rec, colors, idx):
        frame = gt.copy()
        frame[idx] = 0.5 * gt[idx] + 0.5 * colors
        save_png(os.path.join(frame_dir, f"epoch{rec.epoch:04d}.png"),
                 frame.reshape(intr.height, intr.width, 3))

    return write


def prepare(spec: ExperimentSpec, grid: VoxelGrid | None = None):
    """Grids per arm, optimizer config per arm, ground-truth poses and images."""
    arms = spec.arms()
    if spec.ablation == "resolution":
        ref_n = spec.reference_resolution or max(spec.values)
        reference = build_scene(replace(spec.scene, resolution=ref_n)) if grid is None else grid
        grids = {label: (reference if v == reference.resolution else resample_grid(reference, v))
                 for label, v in arms}
    else:
        reference = grid if grid is not None else build_scene(spec.scene)
        grids = {label: reference for label, _ in arms}
    cfgs = {}
    for label, v in arms:
        cfgs[label] = (replace(spec.optimizer, subsample_fraction=v)
                       if spec.ablation == "subsample" else spec.optimizer)
    poses = view_poses(spec.n_poses, spec.camera_radius, seed=spec.seed)
    images = [render_image(reference, p, spec.intrinsics, spec.render) for p in poses]
    return grids, cfgs, poses, images


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs=1, frames=False,
                   grid: VoxelGrid | None = None, progress=None) -> Report:
    """Perturb, estimate and score every pose of every arm.

    With out_dir set, writes report.csv, poses.csv (appended as poses finish,
    so a crash leaves partial results), traces/*.csv and curves_<arm>.csv.
    """
    grids, cfgs, poses, images = prepare(spec, grid)
    _JOB.clear()
    _JOB.update(spec=spec, grids=grids, cfgs=cfgs, poses=poses, images=images,
                out_dir=out_dir, frames=frames)
    tasks = [(label, k) for label, _ in spec.arms() for k in range(spec.n_poses)]
    pose_csv = None
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
        pose_csv = os.path.join(out_dir, "poses.csv")
        with open(pose_csv, "w", newline="") as fh:
            csv.writer(fh).writerow(POSE_COLUMNS)

    records = []

    def collect(rec):
        records.append(rec)
        if pose_csv is not None:
            with open(pose_csv, "a", newline="") as fh:
                csv.writer(fh).writerow(rec.row())
        if progress:
            progress(rec)

    try:
        if jobs > 1 and len(tasks) > 1:
            import multiprocessing as mp

            with mp.get_context("fork").Pool(jobs) as pool:
                for rec in pool.imap_unordered(_run_pose, tasks):
                    collect(rec)
        else:
            for task in tasks:
                collect(_run_pose(task))
    finally:
        _JOB.clear()

    order = {label: i for i, (label, _) in enumerate(spec.arms())}
    records.sort(key=lambda r: (order[r.arm], r.pose_index))
    summaries = [ArmSummary.from_records(label, [r for r in records if r.arm == label])
                 for label, _ in spec.arms()]
    report = Report(spec, summaries, records)
    if out_dir is not None:
        write_report_csv(os.path.join(out_dir, "report.csv"), summaries)
        for label, _ in spec.arms():
            write_curves_csv(os.path.join(out_dir, f"curves_{_safe(label)}.csv"),
                             report.curves(label))
    return report
