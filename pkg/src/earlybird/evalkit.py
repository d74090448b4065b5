"""Evaluation metrics: recall at a localization radius and absolute trajectory error.

Trajectories are ``{id: (x, y, theta)}`` mappings (any mapping of id to a
pose-like sequence works).
"""
from typing import NamedTuple

import numpy as np

from .errors import TooFewCommonIds, UnknownId
from .posegraph import pose, wrap_angle


def _positions(traj, ids):
    try:
        return np.array([np.asarray(traj[i], dtype=np.float64)[:2] for i in ids]).reshape(-1, 2)
    except KeyError as exc:
        raise UnknownId(exc.args[0]) from None


def arc_length(poses):
    p = np.array([np.asarray(q, dtype=np.float64)[:2] for q in poses]).reshape(-1, 2)
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def default_radius(gt_poses, fraction=15.0):
    """Arc length of the ground-truth path divided by 15."""
    poses = list(gt_poses.values()) if isinstance(gt_poses, dict) else list(gt_poses)
    if len(poses) < 2:
        raise ValueError("need at least two poses")
    return arc_length(poses) / fraction


def counterparts(query_ids, reference_ids, gt):
    """For each query, the reference whose ground-truth position is nearest (lowest id on ties)."""
    ref = sorted(int(r) for r in reference_ids)
    rp = _positions(gt, ref)
    qp = _positions(gt, [int(q) for q in query_ids])
    d = np.linalg.norm(qp[:, None, :] - rp[None, :, :], axis=2)
    return {int(q): ref[int(k)] for q, k in zip(query_ids, np.argmin(d, axis=1))}


def recall_at_radius(matches, gt, radius, reference_ids=None):
    """Fraction of queries whose matched reference lies within ``radius`` of the true counterpart.

    ``matches`` holds ``(query_id, ref_id, distance)`` triples. Counterparts
    are searched among ``reference_ids``; by default every ground-truth id
    that is not a query.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    matches = list(matches)
    if not matches:
        return 0.0
    qids = [int(m[0]) for m in matches]
    if reference_ids is None:
        qs = set(qids)
        reference_ids = [i for i in gt if int(i) not in qs]
    cp = counterparts(qids, reference_ids, gt)
    got = _positions(gt, [int(m[1]) for m in matches])
    want = _positions(gt, [cp[q] for q in qids])
    tp = np.linalg.norm(got - want, axis=1) <= radius
    return float(np.count_nonzero(tp)) / len(matches)


class PlanarTransform(NamedTuple):
    rotation: np.ndarray
    translation: np.ndarray

    @property
    def angle(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def apply(self, pts):
        return np.atleast_2d(pts) @ self.rotation.T + self.translation

    def apply_pose(self, p):
        q = self.apply(np.asarray(p, dtype=np.float64)[:2])[0]
        return pose(q[0], q[1], wrap_angle(p[2] + self.angle))


def _common(est, gt):
    ids = sorted(set(int(i) for i in est) & set(int(i) for i in gt))
    if len(ids) < 2:
        raise TooFewCommonIds(f"only {len(ids)} common trajectory ids")
    return ids


def align_se2(est, gt):
    """Least-squares rotation + translation (no scale) taking ``est`` positions onto ``gt``."""
    ids = _common(est, gt)
    P = _positions(est, ids)
    Q = _positions(gt, ids)
    cp = P.mean(axis=0)
    cq = Q.mean(axis=0)
    H = (P - cp).T @ (Q - cq)
    # the optimal angle of a 2-D Procrustes problem has a closed form
    ang = np.arctan2(H[0, 1] - H[1, 0], H[0, 0] + H[1, 1])
    c, s = np.cos(ang), np.sin(ang)
    R = np.array([[c, -s], [s, c]])
    return PlanarTransform(R, cq - R @ cp)


def ate_rmse(est, gt, align=True):
    """Position RMSE over common ids, after :func:`align_se2` unless ``align`` is False."""
    ids = _common(est, gt)
    P = _positions(est, ids)
    Q = _positions(gt, ids)
    if align:
        P = align_se2(est, gt).apply(P)
    return float(np.sqrt(np.mean(np.sum((P - Q) ** 2, axis=1))))


def as_trajectory(ids, poses):
    return {int(i): np.asarray(p, dtype=np.float64) for i, p in zip(ids, poses)}
