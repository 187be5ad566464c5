"""SO(3) maps and rigid camera poses.

Rotations are stored as full 3x3 matrices; axis-angle vectors only appear at
update time. All functions accept a single 3-vector / 3x3 matrix or a stack of
them along leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadSpec, NonSkewInput

SMALL_ANGLE = 1e-6
# Below this distance from pi the axis is read off the symmetric part.
NEAR_PI = 1e-2


def hat(omega):
    """Skew-symmetric matrix [omega]_x such that hat(a) @ v == cross(a, v)."""
    w = np.asarray(omega, dtype=np.float64)
    m = np.zeros(w.shape[:-1] + (3, 3))
    m[..., 0, 1] = -w[..., 2]
    m[..., 0, 2] = w[..., 1]
    m[..., 1, 0] = w[..., 2]
    m[..., 1, 2] = -w[..., 0]
    m[..., 2, 0] = -w[..., 1]
    m[..., 2, 1] = w[..., 0]
    return m


def vee(m, tol=1e-8):
    m = np.asarray(m, dtype=np.float64)
    asym = np.abs(m + np.swapaxes(m, -1, -2))
    if asym.size and asym.max() >= tol:
        raise NonSkewInput(f"matrix is not skew-symmetric (max |m + m^T| = {asym.max():.3g})")
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def exp_so3(omega):
    """Rodrigues formula, with a Taylor branch for angles below 1e-6 rad."""
    w = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(th)) / (th * th))
    k = hat(w)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def log_so3(r):
    """Inverse of exp_so3; the result has norm in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 2
    r = r.reshape(-1, 3, 3)

    skew = np.stack([r[:, 2, 1] - r[:, 1, 2],
                     r[:, 0, 2] - r[:, 2, 0],
                     r[:, 1, 0] - r[:, 0, 1]], axis=-1)
    sin_t = 0.5 * np.linalg.norm(skew, axis=-1)
    cos_t = 0.5 * (np.trace(r, axis1=1, axis2=2) - 1.0)
    theta = np.arctan2(sin_t, cos_t)

    out = np.empty((r.shape[0], 3))
    small = theta < SMALL_ANGLE
    near_pi = theta > np.pi - NEAR_PI
    mid = ~(small | near_pi)

    out[small] = 0.5 * skew[small] * (1.0 + (theta[small] ** 2) / 6.0)[:, None]
    out[mid] = (theta[mid] / (2.0 * sin_t[mid]))[:, None] * skew[mid]

    for i in np.flatnonzero(near_pi):
        sym = 0.5 * (r[i] + r[i].T) - cos_t[i] * np.eye(3)
        sym /= 1.0 - cos_t[i]
        k = int(np.argmax(np.diag(sym)))
        axis = sym[:, k] / np.sqrt(sym[k, k])
        axis /= np.linalg.norm(axis)
        if axis @ skew[i] < 0.0:
            axis = -axis
        out[i] = theta[i] * axis

    return out[0] if single else out


def orthonormalize(r):
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(r, tol=1e-9):
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    ortho = np.abs(r.T @ r - np.eye(3)).max()
    return ortho < tol and abs(np.linalg.det(r) - 1.0) < tol


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def is_valid(self, tol=1e-9):
        return is_rotation(self.rotation, tol) and bool(np.all(np.isfinite(self.translation)))

    def allclose(self, other: "Pose", atol=1e-12):
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def equals(self, other: "Pose"):
        """Bit-exact equality."""
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, obj):
        try:
            rot = np.asarray(obj["rotation"], dtype=np.float64)
            t = np.asarray(obj["translation"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise BadSpec(f"malformed pose object: {exc}") from exc
        if rot.shape != (3, 3) or t.shape != (3,):
            raise BadSpec("pose needs a 3x3 'rotation' and a 3-element 'translation'")
        pose = cls(rot, t)
        if not pose.is_valid(1e-6):
            raise BadSpec("pose rotation is not a proper rotation matrix")
        return pose

    def __repr__(self):
        return f"Pose(rotvec={np.round(log_so3(self.rotation), 6).tolist()}, t={self.translation.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(a: Pose) -> Pose:
    return a.inverse()


def relative_angle(a, b):
    """Geodesic angle in radians between rotation matrices a and b."""
    return float(np.linalg.norm(log_so3(np.asarray(a) @ np.asarray(b).T)))
