"""Seeded synthetic corridor datasets with opposing forward/return passes.

The floor is a periodic tile pattern (strong aliasing) sprinkled with
elliptical blemishes that make individual places distinguishable. Frames are
rendered from a pinhole camera over a flat floor; everything above the
horizon is a fixed, screen-space wall pattern.
"""
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import imggeom
from .errors import NoFloorVisible
from .io import write_depth, write_pgm
from .posegraph import (
    DEFAULT_ODOMETRY_INFORMATION,
    PoseGraph,
    SE2Constraint,
    EdgeKind,
    integrate,
    pose,
    se2_between,
    wrap_angle,
    write_g2o,
    write_trajectory_csv,
)
from .register import CameraModel, default_camera, plane_depth_or_nan

MANIFEST_FORMAT = "earlybird-manifest-1"

# RNG stream tags; each per-frame stream is SeedSequence([seed, tag, frame_id])
_STREAM_TEXTURE = 1
_STREAM_ODOMETRY = 2

# texture pyramid: coarsest level and the footprint (texels) served by level 0
MAX_TEXTURE_LEVEL = 3
LEVEL_FOOTPRINT = 3.0


@dataclass(frozen=True, eq=False)
class FloorTexture:
    image: np.ndarray
    scale: float
    tile_period: float
    blemish_density: float
    seed: int
    origin: tuple = (0.0, 0.0)
    blemishes: np.ndarray = None

    @property
    def tile_texels(self):
        return int(round(self.tile_period / self.scale))

    @property
    def max_level(self):
        """Coarsest box-filtered level whose 2**k texel blocks tile both the image and one floor tile.

        Blocks that straddle tile boundaries would break the exact tile periodicity.
        """
        h, w = self.image.shape
        t = self.tile_texels
        k = 0
        while k < MAX_TEXTURE_LEVEL and all(n % (2 ** (k + 1)) == 0 for n in (h, w, t)):
            k += 1
        return k

    def _level(self, k):
        cache = self.__dict__.setdefault("_levels", {})
        if k not in cache:
            f = 2 ** k
            h, w = self.image.shape
            img = self.image.reshape(h // f, f, w // f, f).mean(axis=(1, 3)) if k else self.image
            # one extra wrapped row/column so the +1 neighbours need no modulo;
            # single precision halves the memory traffic of scattered far-field reads
            padded = np.pad(img, ((0, 1), (0, 1)), mode="wrap").astype(np.float32).ravel()
            # a block mean sits at the centre of the 2**k texels it averages
            shift = 0.5 * (f - 1) * self.scale
            cache[k] = (padded, img.shape, self.origin[0] + shift, self.origin[1] + shift, f * self.scale)
        return cache[k]

    def sample(self, x, y, level=0):
        """Bilinear texture lookup at world coordinates, wrapping periodically.

        ``level = k`` reads the copy box-averaged over 2**k x 2**k texel blocks.
        """
        if not 0 <= level <= self.max_level:
            raise ValueError(f"texture level must lie in [0, {self.max_level}]")
        padded, (h, w), ox, oy, scale = self._level(int(level))
        u = (np.asarray(x) - ox) / scale
        v = (np.asarray(y) - oy) / scale
        u0 = np.floor(u)
        v0 = np.floor(v)
        fu = u - u0
        fv = v - v0
        i00 = (v0.astype(np.intp) % h) * (w + 1) + u0.astype(np.intp) % w
        top = padded[i00] + fu * (padded[i00 + 1] - padded[i00])
        bot = padded[i00 + w + 1] + fu * (padded[i00 + w + 2] - padded[i00 + w + 1])
        return top + fv * (bot - top)


def tile_pattern(tile_texels, grout_texels=4):
    """One tile: a soft two-tone split along a skewed diagonal, framed by dark grout.

    The split is anti-symmetric about the tile centre, so a view and its
    opposite see inverted tones.
    """
    t = np.arange(tile_texels)
    grid_u, grid_v = np.meshgrid(t, t)
    fu = (grid_u + 0.5) / tile_texels
    fv = (grid_v + 0.5) / tile_texels
    ramp = np.mod(0.7 * fu + 0.3 * fv, 1.0)
    tile = 0.1 + 0.8 * 0.5 * (1.0 + np.tanh(8.0 * (ramp - 0.5)))
    grout = (np.minimum(grid_u, tile_texels - 1 - grid_u) < grout_texels / 2) | \
            (np.minimum(grid_v, tile_texels - 1 - grid_v) < grout_texels / 2)
    tile[grout] = 0.05
    return tile


def _poisson_disc(rng, count, extent, min_dist, max_attempts_per_point=30):
    pts = []
    tries = 0
    limit = max_attempts_per_point * max(count, 1)
    cell = min_dist / np.sqrt(2.0)
    grid = {}
    while len(pts) < count and tries < limit:
        tries += 1
        p = rng.uniform((0.0, 0.0), extent)
        gi, gj = int(p[0] // cell), int(p[1] // cell)
        ok = True
        for di in (-2, -1, 0, 1, 2):
            for dj in (-2, -1, 0, 1, 2):
                q = grid.get((gi + di, gj + dj))
                if q is not None and (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 < min_dist ** 2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            grid[(gi, gj)] = p
            pts.append(p)
    return np.array(pts).reshape(-1, 2)


def _stamp_ellipse(img, scale, cx, cy, a, b, angle, amplitude):
    h, w = img.shape
    r = max(a, b) / scale + 2
    u0 = int(np.floor(cx / scale - r))
    v0 = int(np.floor(cy / scale - r))
    n = int(2 * r) + 2
    vv, uu = np.mgrid[v0:v0 + n, u0:u0 + n]
    x = (uu + 0.5) * scale - cx
    y = (vv + 0.5) * scale - cy
    c, s = np.cos(angle), np.sin(angle)
    xr = c * x + s * y
    yr = -s * x + c * y
    rho2 = (xr / a) ** 2 + (yr / b) ** 2
    prof = np.where(rho2 < 1.0, (1.0 - rho2) ** 2, 0.0)
    img[vv % h, uu % w] += amplitude * prof


def gen_floor_texture(seed, dims, tile_period=0.3, blemish_density=60.0, scale=0.005, origin=(0.0, 0.0),
                      blur=1.0):
    """Tiled floor of ``dims = (width, height)`` texels with seeded blemishes.

    ``dims`` are rounded up to whole tiles so the pattern wraps seamlessly.
    Blemish count is Poisson with mean ``density * area``; positions are
    dart-thrown with a minimum spacing. The finished texture is low-passed
    with a Gaussian of ``blur`` texels (wrapping, so periodicity survives),
    which keeps grout edges from aliasing into staircase corners.
    """
    if dims[0] <= 0 or dims[1] <= 0 or tile_period <= 0 or scale <= 0:
        raise ValueError("texture dims, tile period and scale must be positive")
    if blemish_density < 0:
        raise ValueError("blemish density must be non-negative")
    tt = int(round(tile_period / scale))
    if tt < 4 or abs(tt * scale - tile_period) > 1e-9 * max(1.0, tile_period):
        raise ValueError("tile_period must be a whole number (>= 4) of texels")
    nu = -(-int(dims[0]) // tt)
    nv = -(-int(dims[1]) // tt)
    img = np.tile(tile_pattern(tt), (nv, nu))
    h, w = img.shape
    extent = (w * scale, h * scale)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM_TEXTURE]))
    area = extent[0] * extent[1]
    blem = np.zeros((0, 6))
    if blemish_density > 0:
        count = int(rng.poisson(blemish_density * area))
        centres = _poisson_disc(rng, count, extent, 0.3 / np.sqrt(blemish_density))
        m = len(centres)
        scratch = rng.random(m) < 0.3
        a = np.where(scratch, rng.uniform(0.04, 0.10, m), rng.uniform(0.015, 0.05, m))
        b = np.where(scratch, rng.uniform(0.004, 0.008, m), a * rng.uniform(0.4, 1.0, m))
        ang = rng.uniform(0.0, np.pi, m)
        amp = rng.uniform(0.25, 0.45, m) * np.where(rng.random(m) < 0.6, -1.0, 1.0)
        blem = np.column_stack([centres, a, b, ang, amp]) if m else blem
        for cx, cy, aa, bb, an, am in blem:
            _stamp_ellipse(img, scale, cx, cy, aa, bb, an, am)
    np.clip(img, 0.0, 1.0, out=img)
    if blur > 0:
        img = ndimage.gaussian_filter(img, blur, mode="wrap")
    img.flags.writeable = False
    return FloorTexture(img, float(scale), float(tile_period), float(blemish_density), int(seed),
                        tuple(float(o) for o in origin), blem)


@dataclass(frozen=True)
class TrajectorySpec:
    waypoints: tuple
    step: float = 0.1
    reverse_pass: bool = True

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("trajectory needs at least two waypoints")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.length > 0:
            raise ValueError("trajectory length must be positive")

    @property
    def length(self):
        w = np.asarray(self.waypoints, dtype=np.float64)
        return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))


def gen_trajectory(spec):
    """Poses every ``step`` along the polyline, heading along motion.

    With ``reverse_pass`` the forward poses are repeated in reverse order with
    heading turned by pi, so pose ``k`` and pose ``2N-1-k`` coincide.
    """
    w = np.asarray(spec.waypoints, dtype=np.float64)
    seg = np.diff(w, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 0
    w = np.vstack([w[:1], w[1:][keep]])
    seg = seg[keep]
    seg_len = seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    n = max(1, int(round(total / spec.step)))
    s = np.arange(n + 1) * (total / n)
    s[-1] = total
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - cum[k]) / seg_len[k]
    xy = w[k] + t[:, None] * seg[k]
    xy[-1] = w[-1]
    heading = np.arctan2(seg[k, 1], seg[k, 0])
    fwd = [pose(x, y, th) for (x, y), th in zip(xy, heading)]
    if not spec.reverse_pass:
        return fwd
    rev = [pose(p[0], p[1], p[2] + np.pi) for p in fwd[::-1]]
    return fwd + rev


@dataclass(frozen=True)
class OdometryNoise:
    sigma_trans: float = 0.02
    sigma_rot: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.sigma_trans < 0 or self.sigma_rot < 0:
            raise ValueError("noise sigmas must be non-negative")


def perturb_odometry(gt_poses, noise):
    """Noisy relative motions between consecutive ground-truth poses.

    Step ``k`` draws from its own stream so any frame range can be regenerated
    independently.
    """
    if len(gt_poses) < 2:
        raise ValueError("need at least two poses")
    out = []
    sig = np.array([noise.sigma_trans, noise.sigma_trans, noise.sigma_rot])
    for k in range(len(gt_poses) - 1):
        rel = se2_between(gt_poses[k], gt_poses[k + 1])
        rng = np.random.default_rng(np.random.SeedSequence([int(noise.seed), _STREAM_ODOMETRY, k]))
        out.append(pose(*(rel + sig * rng.standard_normal(3))))
    return out


@lru_cache(maxsize=8)
def _floor_grid(cam, width, height):
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    lam = plane_depth_or_nan(pts, cam)
    floor = np.isfinite(lam)
    rays = cam.rays(pts[floor]) * lam[floor][:, None]
    hit = rays @ cam.rotation_robot_from_camera.T + cam.center_in_robot
    lam_img = lam.reshape(height, width)
    lam_img.flags.writeable = False
    return floor.reshape(height, width), hit[:, 0].copy(), hit[:, 1].copy(), lam_img


@lru_cache(maxsize=8)
def _wall(width, height):
    vv, uu = np.mgrid[0:height, 0:width]
    brick = ((uu + 10 * ((vv // 15) % 2)) // 10) % 2
    img = 0.3 + 0.4 * brick.astype(np.float64)
    img.flags.writeable = False
    return img


def wall_pattern(width, height):
    return _wall(int(width), int(height)).copy()


@lru_cache(maxsize=8)
def _floor_footprint(cam, width, height):
    """Ground distance between neighbouring pixel hits (the larger of the two image axes).

    Pose independent: the robot pose only rotates and translates the hits.
    """
    floor, fx, fy, _ = _floor_grid(cam, width, height)
    gx = np.full((height, width), np.nan)
    gy = np.full((height, width), np.nan)
    gx[floor] = fx
    gy[floor] = fy
    fp = np.zeros((height, width))
    for ax in (0, 1):
        if gx.shape[ax] > 1:
            fp = np.fmax(fp, np.hypot(np.gradient(gx, axis=ax), np.gradient(gy, axis=ax)))
    out = np.nan_to_num(fp[floor], nan=0.0)
    out.flags.writeable = False
    return out


def texture_levels(footprint_texels, max_level):
    """Level ``k`` serves pixels whose footprint is below ``LEVEL_FOOTPRINT * 2**k`` texels."""
    fp = np.maximum(np.asarray(footprint_texels, dtype=np.float64) / LEVEL_FOOTPRINT, 1e-12)
    return np.clip(np.floor(np.log2(fp)).astype(np.intp) + 1, 0, max_level)


@lru_cache(maxsize=16)
def _render_groups(cam, width, height, scale, max_level):
    """Per texture level: flat pixel indices and robot-frame floor hits of the pixels it serves."""
    floor, fx, fy, _ = _floor_grid(cam, width, height)
    levels = texture_levels(_floor_footprint(cam, width, height) / scale, max_level)
    flat = np.flatnonzero(floor)
    groups = []
    for k in range(max_level + 1):
        sel = levels == k
        if sel.any():
            g = (k, flat[sel], fx[sel], fy[sel])
            for a in g[1:]:
                a.flags.writeable = False
            groups.append(g)
    return tuple(groups)


def render_view(tex, p, cam, dims=(320, 240)):
    """Grayscale ``dims = (width, height)`` view of the floor from robot pose ``p``.

    Distant floor, where one pixel spans several texels, is read from the
    box-filtered texture levels instead of point-sampling the full-resolution
    texture (which would alias).
    """
    width, height = int(dims[0]), int(dims[1])
    floor, _, _, _ = _floor_grid(cam, width, height)
    if not floor.any():
        raise NoFloorVisible("camera sees no floor")
    c, s = np.cos(p[2]), np.sin(p[2])
    img = wall_pattern(width, height)
    flat_img = img.ravel()
    for k, idx, fx, fy in _render_groups(cam, width, height, float(tex.scale), tex.max_level):
        flat_img[idx] = tex.sample(p[0] + c * fx - s * fy, p[1] + s * fx + c * fy, k)
    return np.clip(img, 0.0, 1.0)


def render_depth(p, cam, dims=(320, 240)):
    """Per-pixel floor depth; 0 marks pixels at or above the horizon.

    On a flat floor the map does not depend on the robot pose.
    """
    width, height = int(dims[0]), int(dims[1])
    floor, _, _, lam = _floor_grid(cam, width, height)
    if not floor.any():
        raise NoFloorVisible("camera sees no floor")
    return np.where(floor, lam, 0.0)


def floor_patch_anchors(cam, half_side, patch_dims=(300, 300)):
    """Image trapezoid of the floor square ``|x|, |y| <= half_side`` around the robot origin.

    Returns ``(src, dst)``: the four image points (far-left, far-right,
    near-right, near-left) and the patch corner pixel centres they map to.
    """
    corners = np.array([[half_side, half_side], [half_side, -half_side],
                        [-half_side, -half_side], [-half_side, half_side]])
    pr = np.column_stack([corners, np.zeros(4)]) - cam.center_in_robot
    pc = pr @ cam.rotation_robot_from_camera
    if np.any(pc[:, 2] <= 0):
        raise NoFloorVisible("floor square is behind the camera")
    src = cam.project(pc)
    pw, ph = patch_dims
    dst = np.array([[0.0, 0.0], [pw - 1.0, 0.0], [pw - 1.0, ph - 1.0], [0.0, ph - 1.0]])
    return src, dst


def floor_homography(cam, half_side=0.36, patch_dims=(300, 300)):
    src, dst = floor_patch_anchors(cam, half_side, patch_dims)
    return imggeom.homography_from_points(src, dst)


@dataclass(frozen=True)
class SimSpec:
    name: str
    trajectory: TrajectorySpec
    seed: int = 0
    noise: OdometryNoise = field(default_factory=OdometryNoise)
    camera: CameraModel = field(default_factory=default_camera)
    image_dims: tuple = (320, 240)
    tile_period: float = 0.3
    blemish_density: float = 60.0
    texel_scale: float = 0.005
    texture_blur: float = 1.0
    margin: float = 2.0

    def with_seed(self, seed):
        return replace(self, seed=int(seed), noise=replace(self.noise, seed=int(seed)))


BUNDLED_WAYPOINTS = {
    "sim-S1": ((0.0, 0.0), (10.0, 0.0)),
    "sim-S2": ((0.0, 0.0), (8.0, 0.0), (8.0, 6.0)),
    "sim-S3": ((0.0, 0.0), (8.0, 0.0), (8.0, 5.0), (0.0, 5.0)),
}


def bundled_spec(name, seed=0):
    """The bundled straight (S1), L-shaped (S2) and U-shaped (S3) corridors."""
    if name not in BUNDLED_WAYPOINTS:
        raise ValueError(f"unknown bundled spec {name!r}; choose from {sorted(BUNDLED_WAYPOINTS)}")
    spec = SimSpec(name=name, trajectory=TrajectorySpec(BUNDLED_WAYPOINTS[name], step=0.1))
    return spec.with_seed(seed)


def texture_for(spec):
    w = np.asarray(spec.trajectory.waypoints, dtype=np.float64)
    lo = w.min(axis=0) - spec.margin
    hi = w.max(axis=0) + spec.margin
    tt = spec.tile_period
    lo = np.floor(lo / tt) * tt
    dims = np.ceil((hi - lo) / spec.texel_scale).astype(int)
    return gen_floor_texture(spec.seed, tuple(dims), spec.tile_period, spec.blemish_density,
                             spec.texel_scale, origin=tuple(lo), blur=spec.texture_blur)


@dataclass
class FrameRecord:
    id: int
    image: str
    depth: str
    pose: np.ndarray
    odometry: np.ndarray = None
    pass_name: str = "forward"


@dataclass
class DatasetManifest:
    name: str
    seed: int
    camera: CameraModel
    trajectory: TrajectorySpec
    noise: OdometryNoise
    image_dims: tuple
    tile_period: float
    blemish_density: float
    texel_scale: float
    margin: float
    texture_blur: float = 1.0
    frames: list = field(default_factory=list)
    root: str = "."

    @property
    def ids(self):
        return [f.id for f in self.frames]

    def forward_ids(self):
        return [f.id for f in self.frames if f.pass_name == "forward"]

    def reverse_ids(self):
        return [f.id for f in self.frames if f.pass_name == "reverse"]

    def gt(self):
        return {f.id: f.pose for f in self.frames}

    def path(self, rel):
        return os.path.join(self.root, rel)

    def spec(self):
        return SimSpec(self.name, self.trajectory, self.seed, self.noise, self.camera, tuple(self.image_dims),
                       self.tile_period, self.blemish_density, self.texel_scale, self.texture_blur, self.margin)

    def opposing_pairs(self):
        """``(forward_id, reverse_id)`` pairs that share a ground-truth position."""
        fwd = self.forward_ids()
        rev = self.reverse_ids()
        n = min(len(fwd), len(rev))
        return [(fwd[k], rev[len(rev) - 1 - k]) for k in range(n)]


def _num(v):
    return repr(float(v))


def write_manifest(path, m):
    c = m.camera
    lines = [
        f"format={MANIFEST_FORMAT}",
        f"name={m.name}",
        f"seed={m.seed}",
        f"camera.fx={_num(c.fx)}", f"camera.fy={_num(c.fy)}",
        f"camera.cx={_num(c.cx)}", f"camera.cy={_num(c.cy)}",
        f"camera.height={_num(c.height_above_floor)}", f"camera.pitch={_num(c.pitch)}",
        f"camera.mount_x={_num(c.mount_x)}",
        f"image.width={int(m.image_dims[0])}", f"image.height={int(m.image_dims[1])}",
        "trajectory.waypoints=" + " ".join(f"{_num(x)},{_num(y)}" for x, y in m.trajectory.waypoints),
        f"trajectory.step={_num(m.trajectory.step)}",
        f"trajectory.reverse_pass={int(m.trajectory.reverse_pass)}",
        f"noise.sigma_trans={_num(m.noise.sigma_trans)}",
        f"noise.sigma_rot={_num(m.noise.sigma_rot)}",
        f"noise.seed={m.noise.seed}",
        f"texture.seed={m.seed}",
        f"texture.tile_period={_num(m.tile_period)}",
        f"texture.blemish_density={_num(m.blemish_density)}",
        f"texture.scale={_num(m.texel_scale)}",
        f"texture.blur={_num(m.texture_blur)}",
        f"texture.margin={_num(m.margin)}",
        f"frames.count={len(m.frames)}",
    ]
    for f in m.frames:
        p = f.pose
        pre = f"frame.{f.id}"
        lines += [f"{pre}.image={f.image}", f"{pre}.depth={f.depth}", f"{pre}.pass={f.pass_name}",
                  f"{pre}.pose={_num(p[0])} {_num(p[1])} {_num(p[2])}"]
        if f.odometry is not None:
            o = f.odometry
            lines.append(f"{pre}.odometry={_num(o[0])} {_num(o[1])} {_num(o[2])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    from .errors import DataError, ParseError

    kv = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(lineno, "expected key=value")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    if kv.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not an {MANIFEST_FORMAT} manifest")
    try:
        cam = CameraModel(float(kv["camera.fx"]), float(kv["camera.fy"]), float(kv["camera.cx"]),
                          float(kv["camera.cy"]), float(kv["camera.height"]), float(kv["camera.pitch"]),
                          float(kv.get("camera.mount_x", 0.0)))
        wps = tuple(tuple(float(c) for c in tok.split(",")) for tok in kv["trajectory.waypoints"].split())
        traj = TrajectorySpec(wps, float(kv["trajectory.step"]), bool(int(kv["trajectory.reverse_pass"])))
        noise = OdometryNoise(float(kv["noise.sigma_trans"]), float(kv["noise.sigma_rot"]), int(kv["noise.seed"]))
        m = DatasetManifest(kv["name"], int(kv["seed"]), cam, traj, noise,
                            (int(kv["image.width"]), int(kv["image.height"])),
                            float(kv["texture.tile_period"]), float(kv["texture.blemish_density"]),
                            float(kv["texture.scale"]), float(kv["texture.margin"]),
                            float(kv.get("texture.blur", 0.0)), root=os.path.dirname(os.path.abspath(path)))
        for i in range(int(kv["frames.count"])):
            pre = f"frame.{i}"
            odo = kv.get(f"{pre}.odometry")
            m.frames.append(FrameRecord(i, kv[f"{pre}.image"], kv[f"{pre}.depth"],
                                        pose(*(float(t) for t in kv[f"{pre}.pose"].split())),
                                        None if odo is None else pose(*(float(t) for t in odo.split())),
                                        kv[f"{pre}.pass"]))
    except KeyError as exc:
        raise DataError(f"{path}: missing manifest key {exc.args[0]}") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return m


def simulate(spec):
    """In-memory dataset: ``(texture, gt poses, noisy odometry, pass labels)``."""
    poses = gen_trajectory(spec.trajectory)
    odo = perturb_odometry(poses, spec.noise)
    n_fwd = len(poses) // 2 if spec.trajectory.reverse_pass else len(poses)
    passes = ["forward"] * n_fwd + ["reverse"] * (len(poses) - n_fwd)
    return texture_for(spec), poses, odo, passes


def odometry_graph(gt_poses, odometry, information=None):
    """Dead-reckoned pose graph from the odometry chain, starting at the first true pose."""
    info = DEFAULT_ODOMETRY_INFORMATION if information is None else information
    g = PoseGraph()
    for k, p in enumerate(integrate(gt_poses[0], odometry)):
        g.add_vertex(k, p)
    for k, o in enumerate(odometry):
        g.add_edge(SE2Constraint(k, k + 1, o, info, EdgeKind.ODOMETRY))
    return g


def generate_dataset(spec, out_dir):
    """Render ``spec`` into ``out_dir`` and return its manifest.

    Writes ``images/*.pgm``, ``depth/*.ebd``, ``manifest.txt``,
    ``groundtruth.csv`` and the noisy odometry chain ``odometry.g2o``.
    """
    tex, poses, odo, passes = simulate(spec)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)
    m = DatasetManifest(spec.name, spec.seed, spec.camera, spec.trajectory, spec.noise, tuple(spec.image_dims),
                        spec.tile_period, spec.blemish_density, spec.texel_scale, spec.margin,
                        spec.texture_blur, root=os.path.abspath(out_dir))
    depth = render_depth(poses[0], spec.camera, spec.image_dims)
    for k, p in enumerate(poses):
        img_rel = f"images/{k:06d}.pgm"
        dep_rel = f"depth/{k:06d}.ebd"
        write_pgm(os.path.join(out_dir, img_rel), render_view(tex, p, spec.camera, spec.image_dims))
        write_depth(os.path.join(out_dir, dep_rel), depth)
        m.frames.append(FrameRecord(k, img_rel, dep_rel, p, odo[k - 1] if k else None, passes[k]))
    write_manifest(os.path.join(out_dir, "manifest.txt"), m)
    write_trajectory_csv(os.path.join(out_dir, "groundtruth.csv"), range(len(poses)), poses)
    with open(os.path.join(out_dir, "odometry.g2o"), "w") as fh:
        fh.write(write_g2o(odometry_graph(poses, odo)))
    return m


__all__ = [
    "FloorTexture", "TrajectorySpec", "OdometryNoise", "SimSpec", "DatasetManifest", "FrameRecord",
    "gen_floor_texture", "gen_trajectory", "render_view", "render_depth", "perturb_odometry",
    "generate_dataset", "bundled_spec", "floor_homography", "floor_patch_anchors", "simulate",
    "odometry_graph", "read_manifest", "write_manifest", "texture_for", "wrap_angle",
]
