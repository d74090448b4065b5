"""Whole-image place descriptors, cosine cost matrices and loop shortlisting."""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import imggeom
from .errors import DimensionMismatch, EmptyMatrix, ImageTooSmall, MissingId, ParseError

_FLAT_EPS = 1e-12


class Variant(str, Enum):
    """Input preprocessing applied before description (query side, reference side)."""

    RAW = "raw"
    HOMO = "homo"
    HOMO_PIROT = "homo-pirot"
    FLIP_LR = "flip-lr"

    @property
    def label(self):
        return {"raw": "Raw", "homo": "Homo", "homo-pirot": "HomoPiRot", "flip-lr": "FlipLR"}[self.value]

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        t = str(text).strip().lower().replace("_", "-")
        aliases = {"homopirot": "homo-pirot", "homo+pirot": "homo-pirot", "fliplr": "flip-lr"}
        t = aliases.get(t, t)
        try:
            return cls(t)
        except ValueError:
            raise ValueError(f"unknown variant {text!r}; expected one of "
                             + ", ".join(v.value for v in cls)) from None

    @property
    def warped(self):
        return self in (Variant.HOMO, Variant.HOMO_PIROT)


def prepare_view(img, variant, role, homography=None, patch_dims=(300, 300)):
    """Image actually described for ``role`` ("query" or "reference").

    Warped variants warp both sides with the floor homography; rotation and
    mirroring are applied to references only.
    """
    variant = Variant.parse(variant)
    if role not in ("query", "reference"):
        raise ValueError(f"role must be 'query' or 'reference', got {role!r}")
    if variant.warped:
        out = imggeom.warp_image(img, homography, patch_dims[0], patch_dims[1])
        if variant is Variant.HOMO_PIROT and role == "reference":
            out = imggeom.rotate_pi(out)
        return out
    if variant is Variant.FLIP_LR and role == "reference":
        return imggeom.flip_lr(img)
    return np.asarray(img, dtype=np.float64)


@lru_cache(maxsize=32)
def _cell_layout(h, w, grid):
    # Pixel centres sitting exactly on a cell boundary are split 50/50 so the
    # partition is symmetric under u -> W-1-u.
    def axis(n):
        x = (np.arange(n) + 0.5) * grid / n
        lo = np.ceil(x).astype(np.intp) - 1
        hi = np.floor(x).astype(np.intp)
        return np.clip(lo, 0, grid - 1), np.clip(hi, 0, grid - 1)

    rows = axis(h)
    cols = axis(w)
    return rows, cols


def _orientation_votes(img, bins):
    """Per-pixel soft votes ``(b0, b1, w0, w1)`` of magnitude-weighted orientation mod pi."""
    h, w = img.shape
    if h > 1 and w > 1:
        gv, gu = np.gradient(img)
    else:
        gv = np.gradient(img, axis=0) if h > 1 else np.zeros_like(img)
        gu = np.gradient(img, axis=1) if w > 1 else np.zeros_like(img)
    mag = np.sqrt(gu * gu + gv * gv)
    theta = np.arctan2(gv, gu)
    theta[theta < 0.0] += np.pi
    pos = theta * (bins / np.pi)
    b0 = np.floor(pos)
    frac = pos - b0
    b0 = b0.astype(np.intp)
    b0[b0 >= bins] -= bins
    b1 = b0 + 1
    b1[b1 == bins] = 0
    return b0, b1, mag * (1.0 - frac), mag * frac


def _unit(hist):
    norm = np.linalg.norm(hist)
    if norm <= _FLAT_EPS:
        hist = np.full(hist.size, _FLAT_EPS)
        norm = np.linalg.norm(hist)
    return hist / norm


@lru_cache(maxsize=32)
def _grid_cells(h, w, grid):
    """Flattened ``(pixel, cell, weight)`` triples; boundary pixels appear once per cell they share."""
    (r_lo, r_hi), (c_lo, c_hi) = _cell_layout(h, w, grid)
    pix, cell, wt = [], [], []
    for r in (r_lo, r_hi):
        for c in (c_lo, c_hi):
            cell.append((r[:, None] * grid + c[None, :]).ravel())
            pix.append(np.arange(h * w))
            wt.append(np.full(h * w, 0.25))
    pix, cell, wt = np.concatenate(pix), np.concatenate(cell), np.concatenate(wt)
    # merge repeated (pixel, cell) entries so interior pixels cost one vote
    key = pix * (grid * grid) + cell
    uniq, inv = np.unique(key, return_inverse=True)
    wt = np.bincount(inv, weights=wt)
    out = (uniq // (grid * grid), uniq % (grid * grid), wt)
    for a in out:
        a.flags.writeable = False
    return out


def _grid_hist(votes, shape, grid, bins):
    b0, b1, w_lo, w_hi = (a.ravel() for a in votes)
    pix, cell, wt = _grid_cells(shape[0], shape[1], grid)
    base = cell * bins
    n = grid * grid * bins
    return (np.bincount(base + b0[pix], weights=w_lo[pix] * wt, minlength=n)
            + np.bincount(base + b1[pix], weights=w_hi[pix] * wt, minlength=n))


@lru_cache(maxsize=32)
def _ring_index(h, w, rings):
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    half_diag = max(np.hypot(w - 1, h - 1) / 2.0, 1e-12)
    r = np.hypot(uu - (w - 1) / 2.0, vv - (h - 1) / 2.0) / half_diag
    idx = np.minimum((r * rings).astype(np.intp), rings - 1)
    idx.flags.writeable = False
    return idx


def _ring_hist(votes, shape, rings, bins):
    b0, b1, w_lo, w_hi = votes
    cell = _ring_index(shape[0], shape[1], rings) * bins
    n = rings * bins
    return (np.bincount((cell + b0).ravel(), weights=w_lo.ravel(), minlength=n)
            + np.bincount((cell + b1).ravel(), weights=w_hi.ravel(), minlength=n))


def _check_size(img, grid):
    h, w = img.shape
    if h < grid or w < grid:
        raise ImageTooSmall(f"{w}x{h} image is smaller than the {grid}x{grid} grid")


def grid_gradient_descriptor(img, grid=8, bins=9):
    """Grid of magnitude-weighted gradient-orientation histograms, L2 normalized.

    Orientations are taken modulo pi and soft-assigned between the two nearest
    of ``bins`` bin centres ``k*pi/bins``.
    """
    if grid < 1 or bins < 2:
        raise ValueError("need grid >= 1 and bins >= 2")
    img = np.asarray(img, dtype=np.float64)
    _check_size(img, grid)
    return _unit(_grid_hist(_orientation_votes(img, bins), img.shape, grid, bins))


def ring_gradient_descriptor(img, rings=6, bins=9):
    """Orientation histograms over concentric annuli about the image centre, L2 normalized.

    Annuli are unchanged by a half turn about the centre, and so are
    orientations mod pi, which makes this exactly invariant to :func:`imggeom.rotate_pi`.
    """
    if rings < 1 or bins < 2:
        raise ValueError("need rings >= 1 and bins >= 2")
    img = np.asarray(img, dtype=np.float64)
    return _unit(_ring_hist(_orientation_votes(img, bins), img.shape, rings, bins))


def place_descriptor(img, grid=8, bins=9, rings=6, ring_weight=0.8):
    """Annular histograms stacked on the spatial grid, weighted so that

    ``cosine_distance = ring_weight * d_rings + (1 - ring_weight) * d_grid``.

    ``ring_weight = 0`` (or ``rings = 0``) reduces to :func:`grid_gradient_descriptor`.
    """
    if not 0.0 <= ring_weight <= 1.0:
        raise ValueError("ring_weight must lie in [0, 1]")
    if rings == 0 or ring_weight == 0.0:
        return grid_gradient_descriptor(img, grid, bins)
    if grid < 1 or bins < 2 or rings < 1:
        raise ValueError("need grid >= 1, rings >= 1 and bins >= 2")
    img = np.asarray(img, dtype=np.float64)
    _check_size(img, grid)
    votes = _orientation_votes(img, bins)
    return np.concatenate([np.sqrt(ring_weight) * _unit(_ring_hist(votes, img.shape, rings, bins)),
                           np.sqrt(1.0 - ring_weight) * _unit(_grid_hist(votes, img.shape, grid, bins))])


def _unit_rows(vectors):
    v = np.asarray(vectors, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("descriptor entries must be finite")
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero descriptor")
    return v / n


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    ids: np.ndarray
    vectors: np.ndarray
    variant: Variant = Variant.HOMO_PIROT

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if vec.shape[0] != ids.size:
            raise DimensionMismatch(f"{ids.size} ids but {vec.shape[0]} descriptors")
        if ids.size > 1 and np.any(np.diff(ids) <= 0):
            raise ValueError("descriptor ids must be unique and strictly increasing")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", _unit_rows(vec) if ids.size else vec)
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        ids.flags.writeable = False
        self.vectors.flags.writeable = False

    def __len__(self):
        return int(self.ids.size)

    @property
    def dim(self):
        return int(self.vectors.shape[1])

    def subset(self, ids):
        index = {int(i): k for k, i in enumerate(self.ids)}
        rows = [index[int(i)] for i in ids]
        return DescriptorSet(np.asarray(ids), self.vectors[rows], self.variant)


def save_descriptors(path, dset):
    with open(path, "w") as f:
        for i, v in zip(dset.ids, dset.vectors):
            f.write(str(int(i)) + " " + " ".join(repr(float(x)) for x in v) + "\n")


def load_descriptors(path, expected_ids, variant=Variant.HOMO_PIROT):
    """Read ``<id> <v1> ... <vd>`` rows and return the expected ids in order."""
    rows = {}
    dim = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                fid = int(tok[0])
                vals = [float(t) for t in tok[1:]]
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if not vals:
                raise ParseError(lineno, "row has no descriptor values")
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise DimensionMismatch(f"line {lineno}: {len(vals)} values, expected {dim}")
            rows[fid] = vals
    ids = sorted(int(i) for i in expected_ids)
    for i in ids:
        if i not in rows:
            raise MissingId(i)
    return DescriptorSet(np.array(ids, dtype=np.int64), np.array([rows[i] for i in ids]), variant)


def cosine_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor dims differ: {a.shape} vs {b.shape}")
    return float(min(max(1.0 - float(np.dot(a, b)), 0.0), 2.0))


def cost_matrix(q, r):
    """Cosine distances between every query (rows) and reference (columns)."""
    qv = q.vectors if isinstance(q, DescriptorSet) else np.atleast_2d(q)
    rv = r.vectors if isinstance(r, DescriptorSet) else np.atleast_2d(r)
    if qv.shape[1] != rv.shape[1]:
        raise DimensionMismatch(f"descriptor dims differ: {qv.shape[1]} vs {rv.shape[1]}")
    return np.clip(1.0 - qv @ rv.T, 0.0, 2.0)


def best_matches(c):
    """Per row ``(row, argmin column, distance)``; ties go to the lower column."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        raise EmptyMatrix("cost matrix is empty")
    j = np.argmin(c, axis=1)
    return [(i, int(j[i]), float(c[i, j[i]])) for i in range(c.shape[0])]


@dataclass(frozen=True)
class LoopCandidate:
    query_id: int
    ref_id: int
    distance: float


def match_ids(q, r, c=None):
    """Best matches as ``(query_id, ref_id, distance)`` using the sets' frame ids."""
    if c is None:
        c = cost_matrix(q, r)
    return [(int(q.ids[i]), int(r.ids[j]), d) for i, j, d in best_matches(c)]


def shortlist_top_k(matches, k=20):
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(matches, key=lambda m: (m[2], m[0]))
    return [LoopCandidate(int(qi), int(ri), float(d)) for qi, ri, d in ordered[:k]]
