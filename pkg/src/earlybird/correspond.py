"""Keypoint correspondences between a matched query/reference pair.

Matching happens in the warped (and, for references, pi-rotated) floor
frame; matched points are then carried back to original pixels with exact
analytic inverses.
"""
import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import imggeom
from .errors import ImageTooSmall
from .register import plane_depth_or_nan

MODES = ("raw", "homo", "homo-pirot")
CSV_HEADER = ["q_u", "q_v", "m_u", "m_v", "qhat_u", "qhat_v", "mhat_u", "mhat_v"]

_GAUSS3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0
_MIN_RESPONSE = 1e-10


class Keypoint(NamedTuple):
    u: float
    v: float
    score: float

    @property
    def position(self):
        return np.array([self.u, self.v])


@dataclass(frozen=True)
class DetectorParams:
    max_count: int = 200
    min_distance: float = 8.0
    patch: int = 11
    ratio: float = 0.9
    harris_k: float = 0.04
    smoothing: float = 2.0


def harris_response(img, k=0.04):
    img = np.asarray(img, dtype=np.float64)
    gu = ndimage.sobel(img, axis=1, mode="reflect")
    gv = ndimage.sobel(img, axis=0, mode="reflect")
    suu = ndimage.convolve(gu * gu, _GAUSS3, mode="reflect")
    svv = ndimage.convolve(gv * gv, _GAUSS3, mode="reflect")
    suv = ndimage.convolve(gu * gv, _GAUSS3, mode="reflect")
    return suu * svv - suv * suv - k * (suu + svv) ** 2


def detect_keypoints(img, max_count=200, min_distance=8.0, k=0.04, smoothing=0.0):
    """Harris corners, greedily non-max suppressed, strongest first.

    ``smoothing`` is the sigma (px) of a Gaussian applied before the
    gradients; 0 disables it. Ties in response are broken row-major, so the
    output order is fully deterministic.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < 16 or w < 16:
        raise ImageTooSmall(f"{w}x{h} image is below the 16x16 detector minimum")
    if smoothing > 0:
        img = ndimage.gaussian_filter(img, smoothing, mode="reflect")
    r = harris_response(img, k)
    peak = (r == ndimage.maximum_filter(r, size=3, mode="constant", cval=-np.inf)) & (r > _MIN_RESPONSE)
    vs, us = np.nonzero(peak)
    scores = r[vs, us]
    order = np.lexsort((us, vs, -scores))
    keep = []
    r2 = float(min_distance) ** 2
    acc = np.empty((max(int(max_count), 0), 2))
    for i in order:
        n = len(keep)
        if n >= max_count:
            break
        du = acc[:n, 0] - us[i]
        dv = acc[:n, 1] - vs[i]
        if n and np.min(du * du + dv * dv) < r2:
            continue
        keep.append(i)
        acc[n] = us[i], vs[i]
    return [Keypoint(float(us[i]), float(vs[i]), float(scores[i])) for i in keep]


def _patches(img, kps, patch):
    """Zero-mean unit-norm patch vectors; rows are None-masked via ``valid``."""
    half = patch // 2
    h, w = img.shape
    out = np.zeros((len(kps), patch * patch))
    valid = np.zeros(len(kps), dtype=bool)
    for i, kp in enumerate(kps):
        u, v = int(round(kp.u)), int(round(kp.v))
        if u - half < 0 or v - half < 0 or u + half >= w or v + half >= h:
            continue
        p = img[v - half:v + half + 1, u - half:u + half + 1].ravel()
        p = p - p.mean()
        n = np.linalg.norm(p)
        if n <= 1e-12:
            continue
        out[i] = p / n
        valid[i] = True
    return out, valid


def _passes_ratio(d_sorted, ratio):
    # a lone candidate has nothing to be confused with
    return d_sorted.shape[-1] < 2 or d_sorted[0] <= ratio * d_sorted[1]


def match_keypoints(img_a, kp_a, img_b, kp_b, patch=11, ratio=0.9):
    """Mutual nearest neighbours under zero-mean NCC with a two-sided ratio test.

    The ratio test compares ``1 - NCC`` of the best and second-best
    candidate, on both sides, so swapping the images gives the mirrored
    pairing.
    """
    if patch < 5 or patch % 2 == 0:
        raise ValueError("patch must be odd and >= 5")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    pa, va = _patches(img_a, kp_a, patch)
    pb, vb = _patches(img_b, kp_b, patch)
    ia = np.nonzero(va)[0]
    ib = np.nonzero(vb)[0]
    if not len(ia) or not len(ib):
        return []
    dist = 1.0 - pa[ia] @ pb[ib].T
    best_b = np.argmin(dist, axis=1)
    best_a = np.argmin(dist, axis=0)
    row_sorted = np.sort(dist, axis=1)
    col_sorted = np.sort(dist, axis=0)
    out = []
    for r, c in enumerate(best_b):
        if best_a[c] != r:
            continue
        if not (_passes_ratio(row_sorted[r], ratio) and _passes_ratio(col_sorted[:, c], ratio)):
            continue
        a, b = kp_a[ia[r]], kp_b[ib[c]]
        out.append(((a.u, a.v), (b.u, b.v)))
    return out


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Matched pairs in matching-frame (``qhat``, ``mhat``) and original (``q``, ``m``) pixels.

    ``homography`` is the floor warp (identity in raw mode), ``patch_dims``
    the matching-frame size and ``rotated`` whether the reference side was
    pi-rotated.
    """

    qhat: np.ndarray
    mhat: np.ndarray
    q: np.ndarray
    m: np.ndarray
    homography: np.ndarray
    patch_dims: tuple
    rotated: bool
    mode: str = "homo-pirot"

    def __post_init__(self):
        for name in ("qhat", "mhat", "q", "m"):
            a = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 2)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        n = len(self.qhat)
        if not all(len(getattr(self, k)) == n for k in ("mhat", "q", "m")):
            raise ValueError("correspondence arrays differ in length")
        self.check_consistency()

    def __len__(self):
        return len(self.qhat)

    def to_reference_frame(self, pts):
        """Original reference pixels to the reference matching frame."""
        p = imggeom.apply_homography(self.homography, np.asarray(pts, dtype=np.float64).reshape(-1, 2))
        if self.rotated:
            p = imggeom.rotate_pi_point(p, *self.patch_dims)
        return p

    def to_query_frame(self, pts):
        return imggeom.apply_homography(self.homography, np.asarray(pts, dtype=np.float64).reshape(-1, 2))

    def check_consistency(self, tol=1e-6):
        if not len(self):
            return
        hinv = imggeom.invert(self.homography)
        q = imggeom.apply_homography(hinv, self.qhat)
        mh = imggeom.rotate_pi_point(self.mhat, *self.patch_dims, inverse=True) if self.rotated else self.mhat
        m = imggeom.apply_homography(hinv, mh)
        if np.max(np.abs(q - self.q)) > tol or np.max(np.abs(m - self.m)) > tol:
            raise ValueError("back-mapped coordinates are inconsistent with the warp")
        keys = {(float(a), float(b)) for a, b in self.qhat}
        if len(keys) != len(self):
            raise ValueError("duplicate query positions in correspondence set")

    def rows(self):
        return np.column_stack([self.q, self.m, self.qhat, self.mhat])


def correspond_pair(x_q, x_m, h=None, patch_dims=(300, 300), mode="homo-pirot", params=None, warped=None):
    """Detect, match and back-map keypoints for one query/reference pair.

    ``warped`` optionally supplies the two images already warped by ``h`` (before
    any pi-rotation), sparing the resampling when the caller caches warps.
    """
    if mode not in MODES:
        raise ValueError(f"unknown correspondence mode {mode!r}; expected one of {MODES}")
    params = params or DetectorParams()
    x_q = imggeom.as_image(x_q)
    x_m = imggeom.as_image(x_m)
    ih, iw = x_q.shape
    if mode == "raw":
        hm = np.eye(3)
        dims = (iw, ih)
        wq, wm = x_q, x_m
    else:
        if h is None:
            raise ValueError("warped modes need a homography")
        hm = imggeom.normalize_homography(h)
        imggeom.invert(hm)
        dims = (int(patch_dims[0]), int(patch_dims[1]))
        if warped is None:
            wq = imggeom.warp_image(x_q, hm, *dims)
            wm = imggeom.warp_image(x_m, hm, *dims)
        else:
            wq, wm = (imggeom.as_image(x) for x in warped)
            if wq.shape != (dims[1], dims[0]) or wm.shape != wq.shape:
                raise ValueError("pre-warped images do not match patch_dims")
    rotated = mode == "homo-pirot"
    if rotated:
        wm = imggeom.rotate_pi(wm)

    kq = detect_keypoints(wq, params.max_count, params.min_distance, params.harris_k, params.smoothing)
    km = detect_keypoints(wm, params.max_count, params.min_distance, params.harris_k, params.smoothing)
    pairs = match_keypoints(wq, kq, wm, km, params.patch, params.ratio)
    if pairs:
        qhat = np.array([p[0] for p in pairs], dtype=np.float64)
        mhat = np.array([p[1] for p in pairs], dtype=np.float64)
        hinv = imggeom.invert(hm)
        q = imggeom.apply_homography(hinv, qhat)
        mr = imggeom.rotate_pi_point(mhat, *dims, inverse=True) if rotated else mhat
        m = imggeom.apply_homography(hinv, mr)
        inside = _inside(q, iw, ih) & _inside(m, iw, ih)
        qhat, mhat, q, m = qhat[inside], mhat[inside], q[inside], m[inside]
    else:
        qhat = mhat = q = m = np.zeros((0, 2))
    return CorrespondenceSet(qhat, mhat, q, m, hm, dims, rotated, mode)


def _inside(p, w, h):
    return (p[:, 0] >= 0) & (p[:, 0] <= w - 1) & (p[:, 1] >= 0) & (p[:, 1] <= h - 1)


class FloorGroundTruth:
    """Maps query pixels to reference pixels through the floor plane.

    Poses are ground-truth robot poses ``(x, y, theta)`` in the world frame.
    """

    def __init__(self, query_pose, ref_pose, cam):
        self.query_pose = np.asarray(query_pose, dtype=np.float64)
        self.ref_pose = np.asarray(ref_pose, dtype=np.float64)
        self.cam = cam

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        cam = self.cam
        lam = plane_depth_or_nan(pts, cam)
        xc = cam.rays(pts) * lam[:, None]
        xr = xc @ cam.rotation_robot_from_camera.T + cam.center_in_robot
        xw = _robot_to_world(self.query_pose, xr)
        xr2 = _world_to_robot(self.ref_pose, xw)
        xc2 = (xr2 - cam.center_in_robot) @ cam.rotation_robot_from_camera
        out = np.full((len(pts), 2), np.nan)
        ok = np.isfinite(lam) & (xc2[:, 2] > 1e-9)
        if ok.any():
            out[ok] = cam.project(xc2[ok])
        return out


def _robot_to_world(p, xr):
    c, s = np.cos(p[2]), np.sin(p[2])
    return np.column_stack([p[0] + c * xr[:, 0] - s * xr[:, 1], p[1] + s * xr[:, 0] + c * xr[:, 1], xr[:, 2]])


def _world_to_robot(p, xw):
    c, s = np.cos(p[2]), np.sin(p[2])
    dx, dy = xw[:, 0] - p[0], xw[:, 1] - p[1]
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, xw[:, 2]])


def reprojection_errors(cs, gt):
    """Per-pair error (px) in the reference matching frame; NaN where gt is undefined."""
    if not len(cs):
        return np.zeros(0)
    pred = np.asarray(gt(cs.q), dtype=np.float64).reshape(-1, 2)
    err = np.full(len(cs), np.nan)
    ok = np.all(np.isfinite(pred), axis=1)
    if ok.any():
        err[ok] = np.linalg.norm(cs.to_reference_frame(pred[ok]) - cs.mhat[ok], axis=1)
    return err


def inlier_count(cs, gt, threshold=3.0):
    """``(inliers, total)``; ``gt`` maps original query pixels to original reference pixels."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    err = reprojection_errors(cs, gt)
    return int(np.sum(err <= threshold)), int(len(cs))


def write_correspondences_csv(path, cs):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for row in cs.rows():
            wr.writerow([repr(float(x)) for x in row])


def read_correspondence_rows(path):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected correspondence header {header}")
        rows = [[float(x) for x in r] for r in rd if r]
    return np.array(rows, dtype=np.float64).reshape(-1, 8)
