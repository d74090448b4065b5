"""End-to-end loop closure: describe, match, correspond, register, optimize, evaluate.

Everything here is in-memory; :mod:`earlybird.stages` wraps these steps in
file-backed CLI stages.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import descriptor as desc
from . import imggeom
from .correspond import DetectorParams, FloorGroundTruth, correspond_pair, inlier_count
from .errors import DataError, GeometryError, MissingUpstreamArtifact
from .evalkit import ate_rmse, default_radius, recall_at_radius
from .io import read_depth, read_pgm
from .posegraph import (
    EdgeKind,
    PoseGraph,
    RobustKernel,
    SE2Constraint,
    integrate,
    optimize,
)
from .register import backproject, plane_depth_or_nan, to_se2_constraint, trimmed_register
from .simworld import floor_patch_anchors, read_manifest, render_depth, render_view, simulate

CORRESPONDENCE_MODE = {
    desc.Variant.RAW: "raw",
    desc.Variant.HOMO: "homo",
    desc.Variant.HOMO_PIROT: "homo-pirot",
    # mirroring only matters for global description; pixels are matched unwarped
    desc.Variant.FLIP_LR: "raw",
}


@dataclass(frozen=True)
class PipelineParams:
    patch_width: int = 300
    patch_height: int = 300
    half_side: float = 0.36
    anchors: tuple = None
    variant: str = "homo-pirot"
    grid: int = 8
    bins: int = 9
    rings: int = 6
    ring_weight: float = 0.8
    external_descriptors: str = None
    shortlist_k: int = 20
    max_keypoints: int = 200
    nms_radius: float = 8.0
    smoothing: float = 2.0
    harris_k: float = 0.04
    patch: int = 21
    ratio: float = 0.9
    trim_fraction: float = 0.2
    min_inliers: int = 8
    max_rms: float = 0.1
    max_tilt: float = 0.2
    depth_source: str = "plane"
    kernel: str = "cauchy"
    cauchy_c: float = 1.0
    max_iter: int = 100
    tol: float = 1e-9
    odometry_information: tuple = (20.0, 20.0, 20.0)
    loop_information: tuple = (50.0, 50.0, 100.0)
    radius: float = 0.0
    inlier_threshold: float = 3.0
    align: bool = True

    @property
    def patch_dims(self):
        return (int(self.patch_width), int(self.patch_height))

    @property
    def detector(self):
        return DetectorParams(self.max_keypoints, self.nms_radius, self.patch, self.ratio,
                              self.harris_k, self.smoothing)

    def with_variant(self, variant):
        return replace(self, variant=desc.Variant.parse(variant).value)


def _quantize(img):
    # the same 8-bit rounding a PGM round trip applies
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


class Dataset:
    """Frames, ground truth and odometry of one forward + reverse traversal."""

    def __init__(self, name, camera, image_dims, gt, odometry, passes, image_fn, depth_fn,
                 trajectory_length=None):
        self.name = name
        self.camera = camera
        self.image_dims = tuple(image_dims)
        self.ids = list(range(len(gt)))
        self.gt = {i: np.asarray(p, dtype=np.float64) for i, p in enumerate(gt)}
        self.odometry = [np.asarray(o, dtype=np.float64) for o in odometry]
        self.passes = list(passes)
        self._image_fn = image_fn
        self._depth_fn = depth_fn
        self._images = {}
        self._warped = {}
        self._plans = {}
        self.trajectory_length = trajectory_length

    @classmethod
    def from_spec(cls, spec):
        tex, poses, odo, passes = simulate(spec)
        cam, dims = spec.camera, spec.image_dims
        return cls(spec.name, cam, dims, poses, odo, passes,
                   lambda i: _quantize(render_view(tex, poses[i], cam, dims)),
                   lambda i: render_depth(poses[i], cam, dims),
                   spec.trajectory.length)

    @classmethod
    def from_manifest(cls, path):
        import os

        if not os.path.exists(path):
            raise MissingUpstreamArtifact("simulate", path)
        m = read_manifest(path)
        gt = [f.pose for f in m.frames]
        odo = [f.odometry for f in m.frames[1:]]
        if any(o is None for o in odo):
            raise DataError(f"{path}: every frame after the first needs odometry")
        frames = m.frames

        def image(i):
            p = m.path(frames[i].image)
            if not os.path.exists(p):
                raise MissingUpstreamArtifact("simulate", p)
            return read_pgm(p)

        def depth(i):
            return read_depth(m.path(frames[i].depth))

        return cls(m.name, m.camera, m.image_dims, gt, odo, [f.pass_name for f in frames], image, depth,
                   m.trajectory.length)

    @property
    def forward_ids(self):
        return [i for i in self.ids if self.passes[i] == "forward"]

    @property
    def reverse_ids(self):
        return [i for i in self.ids if self.passes[i] == "reverse"]

    def image(self, i):
        if i not in self._images:
            self._images[i] = self._image_fn(i)
        return self._images[i]

    def depth(self, i):
        return self._depth_fn(i)

    def warped(self, i, h, dims):
        key = (i, dims, h.tobytes())
        if key not in self._warped:
            img = self.image(i)
            pk = (img.shape, dims, h.tobytes())
            if pk not in self._plans:
                self._plans[pk] = imggeom.WarpPlan(h, img.shape[1], img.shape[0], dims[0], dims[1])
            self._warped[key] = self._plans[pk](img)
        return self._warped[key]

    def opposing_pairs(self):
        fwd, rev = self.forward_ids, self.reverse_ids
        n = min(len(fwd), len(rev))
        return [(fwd[k], rev[len(rev) - 1 - k]) for k in range(n)]


def floor_homography_for(ds, params):
    src, dst = floor_patch_anchors(ds.camera, params.half_side, params.patch_dims)
    if params.anchors is not None:
        src = np.asarray(params.anchors, dtype=np.float64).reshape(4, 2)
    return imggeom.homography_from_points(src, dst)


def _view(ds, i, variant, role, h, params):
    if variant.warped:
        out = ds.warped(i, h, params.patch_dims)
        if variant is desc.Variant.HOMO_PIROT and role == "reference":
            out = imggeom.rotate_pi(out)
        return out
    return desc.prepare_view(ds.image(i), variant, role)


def describe(ds, params, h=None):
    """One descriptor per frame; reverse-pass frames are described in the reference role."""
    variant = desc.Variant.parse(params.variant)
    if params.external_descriptors:
        return desc.load_descriptors(params.external_descriptors, ds.ids, variant)
    h = floor_homography_for(ds, params) if h is None else h
    rows = []
    for i in ds.ids:
        role = "reference" if ds.passes[i] == "reverse" else "query"
        rows.append(desc.place_descriptor(_view(ds, i, variant, role, h, params),
                                          params.grid, params.bins, params.rings, params.ring_weight))
    return desc.DescriptorSet(np.array(ds.ids), np.array(rows), variant)


@dataclass
class MatchResult:
    query_ids: list
    reference_ids: list
    cost: np.ndarray
    matches: list
    shortlist: list


def match(ds, dset, params):
    q_ids, r_ids = ds.forward_ids, ds.reverse_ids
    if not q_ids or not r_ids:
        raise DataError("matching needs both a forward and a reverse pass")
    q = dset.subset(q_ids)
    r = dset.subset(r_ids)
    c = desc.cost_matrix(q, r)
    m = desc.match_ids(q, r, c)
    return MatchResult(q_ids, r_ids, c, m, desc.shortlist_top_k(m, params.shortlist_k))


def correspond_candidates(ds, candidates, params, h=None):
    variant = desc.Variant.parse(params.variant)
    mode = CORRESPONDENCE_MODE[variant]
    h = floor_homography_for(ds, params) if h is None else h
    out = []
    for cand in candidates:
        warped = None
        if mode != "raw":
            warped = (ds.warped(cand.query_id, h, params.patch_dims), ds.warped(cand.ref_id, h, params.patch_dims))
        cs = correspond_pair(ds.image(cand.query_id), ds.image(cand.ref_id), h, params.patch_dims, mode,
                             params.detector, warped)
        out.append((cand, cs))
    return out


@dataclass
class RegistrationRecord:
    query_id: int
    ref_id: int
    pairs: int
    inliers: int
    rms: float
    accepted: bool
    reason: str
    constraint: SE2Constraint = None


def _depth_at(ds, i, pts, params):
    if params.depth_source == "plane":
        return plane_depth_or_nan(pts, ds.camera)
    d = imggeom.bilinear_sample(ds.depth(i), pts[:, 0], pts[:, 1])
    return np.where(d > 0, d, np.nan)


def register_pairs(ds, corr, params):
    """Lift each correspondence set to 3-D, register it and gate the resulting loop constraint."""
    info = np.diag(np.asarray(params.loop_information, dtype=np.float64))
    out = []
    for cand, cs in corr:
        qi, ri = cand.query_id, cand.ref_id
        n = len(cs)
        if n < 4:
            out.append(RegistrationRecord(qi, ri, n, 0, float("nan"), False, "too few pairs"))
            continue
        dq = _depth_at(ds, qi, cs.q, params)
        dm = _depth_at(ds, ri, cs.m, params)
        ok = np.isfinite(dq) & np.isfinite(dm) & (dq > 0) & (dm > 0)
        if ok.sum() < 4:
            out.append(RegistrationRecord(qi, ri, n, 0, float("nan"), False, "too few pairs with depth"))
            continue
        Q = backproject(cs.q[ok], dq[ok], ds.camera)
        P = backproject(cs.m[ok], dm[ok], ds.camera)
        try:
            reg = trimmed_register(P, Q, params.trim_fraction)
        except GeometryError as exc:
            out.append(RegistrationRecord(qi, ri, n, 0, float("nan"), False, type(exc).__name__))
            continue
        if reg.inlier_count < params.min_inliers:
            out.append(RegistrationRecord(qi, ri, n, reg.inlier_count, reg.rms, False, "too few inliers"))
            continue
        if reg.rms > params.max_rms:
            out.append(RegistrationRecord(qi, ri, n, reg.inlier_count, reg.rms, False, "rms too large"))
            continue
        try:
            con = to_se2_constraint(reg.transform, ds.camera, qi, ri, info, params.max_tilt)
        except GeometryError as exc:
            out.append(RegistrationRecord(qi, ri, n, reg.inlier_count, reg.rms, False, type(exc).__name__))
            continue
        out.append(RegistrationRecord(qi, ri, n, reg.inlier_count, reg.rms, True, "accepted", con))
    return out


def odometry_trajectory(ds):
    return integrate(ds.gt[0], ds.odometry)


def build_graph(ds, loops, params):
    info = np.diag(np.asarray(params.odometry_information, dtype=np.float64))
    g = PoseGraph()
    for k, p in enumerate(odometry_trajectory(ds)):
        g.add_vertex(k, p)
    for k, o in enumerate(ds.odometry):
        g.add_edge(SE2Constraint(k, k + 1, o, info, EdgeKind.ODOMETRY))
    for c in loops:
        g.add_edge(c)
    return g


def kernel_for(params):
    return RobustKernel(params.kernel, params.cauchy_c)


def optimize_graph(g, params):
    return optimize(g, kernel_for(params), params.max_iter, params.tol)


@dataclass
class LoopClosureRun:
    params: PipelineParams
    homography: np.ndarray
    descriptors: desc.DescriptorSet
    matching: MatchResult
    correspondences: list
    registrations: list
    graph: PoseGraph
    result: object
    metrics: dict = field(default_factory=dict)

    @property
    def loops(self):
        return [r.constraint for r in self.registrations if r.accepted]


def evaluation_radius(ds, params):
    """Configured override, else the arc length of the whole ground-truth traversal over 15."""
    if params.radius > 0:
        return float(params.radius)
    return default_radius([ds.gt[i] for i in ds.ids])


def pair_inliers(ds, cand, cs, params):
    gt = FloorGroundTruth(ds.gt[cand.query_id], ds.gt[cand.ref_id], ds.camera)
    return inlier_count(cs, gt, params.inlier_threshold)


def evaluate(ds, m, corr, result, params):
    est = result.graph.vertices
    odo = dict(enumerate(odometry_trajectory(ds)))
    inl = [pair_inliers(ds, c, cs, params) for c, cs in corr]
    return {
        "recall": recall_at_radius(m.matches, ds.gt, evaluation_radius(ds, params), m.reference_ids),
        "radius": evaluation_radius(ds, params),
        "inliers_median": float(np.median([a for a, _ in inl])) if inl else 0.0,
        "total_median": float(np.median([b for _, b in inl])) if inl else 0.0,
        "ate_odometry": ate_rmse(odo, ds.gt, params.align),
        "ate_optimized": ate_rmse(est, ds.gt, params.align),
    }


def run_loop_closure(ds, params):
    h = floor_homography_for(ds, params)
    dset = describe(ds, params, h)
    m = match(ds, dset, params)
    corr = correspond_candidates(ds, m.shortlist, params, h)
    regs = register_pairs(ds, corr, params)
    g = build_graph(ds, [r.constraint for r in regs if r.accepted], params)
    res = optimize_graph(g, params)
    run = LoopClosureRun(params, h, dset, m, corr, regs, g, res)
    run.metrics = evaluate(ds, m, corr, res, params)
    run.metrics["loops_accepted"] = len(run.loops)
    return run
