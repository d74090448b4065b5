"""Lifting matched floor pixels to 3-D and recovering the rigid relative pose.

Camera frame convention: x right, y down, z along the optical axis. Robot
frame: x forward, y left, z up, origin on the floor. The camera sits at
``(mount_x, 0, height_above_floor)`` in the robot frame, pitched down by
``pitch`` radians.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    CountMismatch,
    DegenerateConfiguration,
    IntersectionBehindCamera,
    NonPlanarResidual,
    NonPositiveDepth,
    RayParallelToFloor,
    TooFewPoints,
)
from .posegraph import EdgeKind, SE2Constraint, wrap_angle

DEFAULT_LOOP_INFORMATION = np.diag([50.0, 50.0, 100.0])


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    height_above_floor: float
    pitch: float
    mount_x: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.height_above_floor > 0:
            raise ValueError("camera height must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def rotation_robot_from_camera(self):
        s, c = np.sin(self.pitch), np.cos(self.pitch)
        # columns: camera x, y, z axes expressed in the robot frame
        return np.array([[0.0, -s, c], [-1.0, 0.0, 0.0], [0.0, -c, -s]])

    @property
    def center_in_robot(self):
        return np.array([self.mount_x, 0.0, self.height_above_floor])

    @property
    def robot_from_camera(self):
        t = np.eye(4)
        t[:3, :3] = self.rotation_robot_from_camera
        t[:3, 3] = self.center_in_robot
        return t

    def rays(self, pts):
        """Un-normalized rays ``K^-1 (u, v, 1)`` for an ``(n, 2)`` pixel array."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return np.column_stack([(pts[:, 0] - self.cx) / self.fx,
                                (pts[:, 1] - self.cy) / self.fy,
                                np.ones(len(pts))])

    def project(self, xyz):
        """Camera-frame points ``(n, 3)`` to pixels ``(n, 2)``."""
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        z = xyz[:, 2]
        return np.column_stack([self.fx * xyz[:, 0] / z + self.cx, self.fy * xyz[:, 1] / z + self.cy])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "height_above_floor": self.height_above_floor, "pitch": self.pitch,
                "mount_x": self.mount_x}


def default_camera():
    """Forward-looking camera 1 m above the floor, pitched 30 degrees down, for 320x240 images.

    It is mounted 0.94 m behind the robot origin, which puts a 0.76 m floor
    square centred on the origin in the lower 40% of the frame.
    """
    return CameraModel(fx=200.0, fy=200.0, cx=159.5, cy=119.5,
                       height_above_floor=1.0, pitch=np.radians(30.0), mount_x=-0.94)


def backproject(pts, depth, cam):
    """``lambda * K^-1 (u, v, 1)`` per pixel; returns ``(n, 3)`` camera-frame points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    lam = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    if len(lam) != len(pts):
        raise CountMismatch(f"{len(pts)} points but {len(lam)} depths")
    if np.any(~(lam > 0)):
        raise NonPositiveDepth("every depth must be positive")
    return cam.rays(pts) * lam[:, None]


def _plane_denominator(pts, cam):
    ry = (np.atleast_2d(np.asarray(pts, dtype=np.float64))[:, 1] - cam.cy) / cam.fy
    return np.cos(cam.pitch) * ry + np.sin(cam.pitch)


def plane_depth(pts, cam):
    """Depth scale ``lambda`` at which each pixel ray meets the floor plane.

    ``lambda`` multiplies ``K^-1 (u, v, 1)`` (as :func:`backproject` expects);
    on the optical axis it equals the range to the floor.
    """
    den = _plane_denominator(pts, cam)
    if np.any(np.abs(den) <= 1e-12):
        raise RayParallelToFloor("pixel ray is parallel to the floor")
    if np.any(den < 0):
        raise IntersectionBehindCamera("pixel is above the horizon")
    return cam.height_above_floor / den


def plane_depth_or_nan(pts, cam):
    den = _plane_denominator(pts, cam)
    out = np.full(den.shape, np.nan)
    ok = den > 1e-12
    out[ok] = cam.height_above_floor / den[ok]
    return out


@dataclass(frozen=True)
class RigidTransform3D:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def matrix(self):
        t = np.eye(4)
        t[:3, :3] = self.rotation
        t[:3, 3] = self.translation
        return t

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    def apply(self, pts):
        return np.atleast_2d(pts) @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform3D(rt, -rt @ self.translation)

    def __matmul__(self, other):
        return RigidTransform3D(self.rotation @ other.rotation,
                                self.rotation @ other.translation + self.translation)


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def kabsch_align(P, Q):
    """Least-squares rigid ``(R, T)`` with ``R p_i + T ~= q_i``."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape != Q.shape or P.shape[1] != 3:
        raise CountMismatch(f"point sets must be matching (n, 3) arrays, got {P.shape} and {Q.shape}")
    if len(P) < 3:
        raise TooFewPoints("need at least 3 point pairs")
    cp = P.mean(axis=0)
    cq = Q.mean(axis=0)
    H = (P - cp).T @ (Q - cq)
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 1e-300 or S[1] <= 1e-12 * S[0]:
        raise DegenerateConfiguration("cross-covariance has rank < 2 (collinear points)")
    V = Vt.T
    d = 1.0 if np.linalg.det(V @ U.T) > 0 else -1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform3D(R, cq - R @ cp)


class Registration(NamedTuple):
    transform: RigidTransform3D
    rms: float
    inlier_count: int


def trimmed_register(P, Q, trim_fraction=0.2, max_iter=10):
    """Trimmed rigid registration of pre-matched point pairs.

    Each round refits on the current inlier set, then keeps the
    ``n - floor(trim_fraction * n)`` pairs with the smallest residuals.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape != Q.shape:
        raise CountMismatch(f"point sets differ in shape: {P.shape} vs {Q.shape}")
    n = len(P)
    if n < 4:
        raise TooFewPoints("trimmed registration needs at least 4 pairs")
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    keep = max(3, n - int(np.floor(trim_fraction * n)))

    inliers = np.arange(n)
    for _ in range(max(1, max_iter)):
        t = kabsch_align(P[inliers], Q[inliers])
        res = np.linalg.norm(t.apply(P) - Q, axis=1)
        nxt = np.sort(np.argsort(res, kind="stable")[:keep])
        if np.array_equal(nxt, inliers):
            break
        inliers = nxt
    t = kabsch_align(P[inliers], Q[inliers])
    res = np.linalg.norm(t.apply(P[inliers]) - Q[inliers], axis=1)
    return Registration(t, float(np.sqrt(np.mean(res ** 2))), int(len(inliers)))


def camera_to_robot_transform(t, cam):
    """Conjugate a camera-frame relative transform into the robot frame."""
    m = cam.robot_from_camera
    return RigidTransform3D.from_matrix(m @ t.matrix @ np.linalg.inv(m))


def robot_to_camera_transform(t, cam):
    m = cam.robot_from_camera
    return RigidTransform3D.from_matrix(np.linalg.inv(m) @ t.matrix @ m)


def to_se2_constraint(t, cam, from_id, to_id, base_information=None, max_tilt=0.2):
    """Project a camera-frame relative transform onto the floor plane.

    ``t`` maps points from the ``to_id`` camera into the ``from_id`` camera
    (i.e. it is the pose of ``to_id`` relative to ``from_id``).
    """
    rt = camera_to_robot_transform(t, cam)
    R = rt.rotation
    yaw = np.arctan2(R[1, 0], R[0, 0])
    tilt = rotation_z(yaw).T @ R
    tilt_angle = np.arccos(np.clip((np.trace(tilt) - 1.0) / 2.0, -1.0, 1.0))
    if tilt_angle > max_tilt:
        raise NonPlanarResidual(f"out-of-plane rotation {tilt_angle:.3f} rad exceeds {max_tilt}")
    info = DEFAULT_LOOP_INFORMATION if base_information is None else base_information
    return SE2Constraint(int(from_id), int(to_id),
                         np.array([rt.translation[0], rt.translation[1], wrap_angle(yaw)]),
                         np.array(info, dtype=np.float64), EdgeKind.LOOP)
