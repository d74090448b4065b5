"""Projective pixel geometry: 4-point homographies, warping and pi-rotation.

Images are 2-D float arrays indexed ``img[v, u]`` (row, column) with values in
[0, 1]. Points are ``(u, v)`` pairs, either a single ``(2,)`` array or an
``(n, 2)`` stack. Integer coordinates address pixel centres.
"""
from itertools import combinations

import numpy as np

from .errors import DegenerateQuad, PointAtInfinity, SingularMatrix, SingularSystem

_W_EPS = 1e-12


def as_image(data, copy=False):
    """Validate and return ``data`` as a float64 grayscale image."""
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def _points(p):
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have shape (2,) or (n, 2), got {np.shape(p)}")
    return pts, single


def normalize_homography(m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {m.shape}")
    if m[2, 2] != 0.0:
        return m / m[2, 2]
    return m / np.linalg.norm(m)


def _check_no_three_collinear(pts, which):
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    for a, b, c in combinations(range(len(pts)), 3):
        d1 = pts[b] - pts[a]
        d2 = pts[c] - pts[a]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) <= 1e-9 * scale * scale:
            raise DegenerateQuad(f"{which} points {a}, {b}, {c} are collinear")


def _similarity_normalizer(pts):
    # centroid to origin, RMS distance sqrt(2)
    c = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    s = np.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def homography_from_points(src, dst):
    """Exact homography mapping four ``src`` points onto four ``dst`` points.

    Uses the normalized direct linear transform. The result is scaled so that
    ``m[2, 2] == 1``.
    """
    src, _ = _points(src)
    dst, _ = _points(dst)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly four src and four dst points")
    _check_no_three_collinear(src, "src")
    _check_no_three_collinear(dst, "dst")

    t_src = _similarity_normalizer(src)
    t_dst = _similarity_normalizer(dst)
    xs = apply_homography(t_src, src)
    xd = apply_homography(t_dst, dst)

    a = np.zeros((8, 9))
    for i, ((x, y), (u, v)) in enumerate(zip(xs, xd)):
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v]
    _, s, vt = np.linalg.svd(a)
    if s[-1] <= 1e-12 * s[0]:
        raise SingularSystem("DLT system has a nullspace larger than one")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    return normalize_homography(h)


def apply_homography(h, p):
    """Map point(s) ``p`` through ``h``; returns the same shape as ``p``."""
    pts, single = _points(p)
    m = np.asarray(h, dtype=np.float64)
    x = pts @ m[:, :2].T + m[:, 2]
    w = x[:, 2]
    if np.any(np.abs(w) <= _W_EPS):
        raise PointAtInfinity("homogeneous scale is zero")
    out = x[:, :2] / w[:, None]
    return out[0] if single else out


def invert(h):
    m = np.asarray(h, dtype=np.float64)
    det = np.linalg.det(m)
    if not np.isfinite(det) or abs(det) <= 1e-300:
        raise SingularMatrix("homography is not invertible")
    return normalize_homography(np.linalg.inv(m))


def bilinear_sample(img, u, v):
    """Bilinear lookup at real coordinates; 0 outside ``[0, W-1] x [0, H-1]``."""
    h, w = img.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = (u >= 0.0) & (u <= w - 1) & (v >= 0.0) & (v <= h - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    u0 = np.minimum(np.floor(uc).astype(np.intp), max(w - 2, 0))
    v0 = np.minimum(np.floor(vc).astype(np.intp), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uc - u0
    fv = vc - v0
    top = (1.0 - fu) * img[v0, u0] + fu * img[v0, u1]
    bot = (1.0 - fu) * img[v1, u0] + fu * img[v1, u1]
    val = (1.0 - fv) * top + fv * bot
    return np.where(inside, val, 0.0)


class WarpPlan:
    """Precomputed bilinear gathers for warping many same-sized images by one homography."""

    def __init__(self, h, in_w, in_h, out_w, out_h):
        hinv = invert(h)
        vv, uu = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
        x = hinv[0, 0] * uu + hinv[0, 1] * vv + hinv[0, 2]
        y = hinv[1, 0] * uu + hinv[1, 1] * vv + hinv[1, 2]
        w = hinv[2, 0] * uu + hinv[2, 1] * vv + hinv[2, 2]
        ok = np.abs(w) > _W_EPS
        ws = np.where(ok, w, 1.0)
        u = np.where(ok, x / ws, -1.0).ravel()
        v = np.where(ok, y / ws, -1.0).ravel()
        inside = (u >= 0.0) & (u <= in_w - 1) & (v >= 0.0) & (v <= in_h - 1)
        self.in_shape = (int(in_h), int(in_w))
        self.out_shape = (int(out_h), int(out_w))
        self.target = np.flatnonzero(inside)
        u, v = u[inside], v[inside]
        u0 = np.minimum(np.floor(u).astype(np.intp), max(in_w - 2, 0))
        v0 = np.minimum(np.floor(v).astype(np.intp), max(in_h - 2, 0))
        du = 1 if in_w > 1 else 0
        dv = in_w if in_h > 1 else 0
        fu = u - u0
        fv = v - v0
        base = v0 * in_w + u0
        self.index = np.stack([base, base + du, base + dv, base + dv + du])
        self.weight = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv])

    def __call__(self, img):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.in_shape:
            raise ValueError(f"plan built for shape {self.in_shape}, got {img.shape}")
        flat = img.ravel()
        out = np.zeros(self.out_shape[0] * self.out_shape[1])
        out[self.target] = np.einsum("ij,ij->j", self.weight, flat[self.index])
        return out.reshape(self.out_shape)


def warp_image(img, h, out_w, out_h):
    """Resample ``img`` into an ``out_h x out_w`` frame where ``h`` maps source to output."""
    img = np.asarray(img, dtype=np.float64)
    return WarpPlan(h, img.shape[1], img.shape[0], out_w, out_h)(img)


def rotate_pi(img):
    """Rotate an image by 180 degrees (exact index permutation)."""
    return np.ascontiguousarray(np.asarray(img)[::-1, ::-1])


def rotate_pi_point(p, w, h, inverse=False):
    """Pixel map of :func:`rotate_pi` for a ``w x h`` image.

    The map is an involution; ``inverse`` only documents intent at call sites.
    """
    pts, single = _points(p)
    out = np.column_stack([(w - 1) - pts[:, 0], (h - 1) - pts[:, 1]])
    return out[0] if single else out


def flip_lr(img):
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])


def format_homography(h):
    """Row-major, whitespace separated serialization of a homography."""
    return " ".join(repr(float(x)) for x in np.asarray(h, dtype=np.float64).ravel())


def parse_homography(text):
    vals = [float(t) for t in text.split()]
    if len(vals) != 9:
        raise ValueError(f"homography needs 9 numbers, got {len(vals)}")
    return normalize_homography(np.array(vals).reshape(3, 3))
