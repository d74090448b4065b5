import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from earlybird import imggeom as G
from earlybird import register as R
from earlybird import simworld as S
from earlybird.errors import NoFloorVisible
from earlybird.posegraph import integrate, parse_g2o, se2_between, wrap_angle

CAM = R.default_camera()


def test_texture_periodic_without_blemishes():
    tex = S.gen_floor_texture(3, (360, 240), 0.3, 0.0)
    t = tex.tile_texels
    img = tex.image
    assert t == 60 and img.shape == (240, 360)
    assert np.array_equal(img[:, t:], img[:, :-t])
    assert np.array_equal(img[t:, :], img[:-t, :])


def test_texture_deterministic_and_seeded():
    a = S.gen_floor_texture(5, (300, 300))
    b = S.gen_floor_texture(5, (300, 300))
    c = S.gen_floor_texture(6, (300, 300))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.blemishes, b.blemishes)
    assert not np.array_equal(a.image, c.image)
    assert a.image.min() >= 0 and a.image.max() <= 1


def test_blemish_count_poisson_concentration():
    d, scale = 60.0, 0.005
    for seed in range(20):
        tex = S.gen_floor_texture(seed, (400, 400), 0.3, d, scale)
        area = tex.image.size * scale ** 2
        assert abs(len(tex.blemishes) - d * area) <= 3 * np.sqrt(d * area)


def test_texture_rejects_bad_arguments():
    with pytest.raises(ValueError):
        S.gen_floor_texture(0, (100, 100), 0.3, -1.0)
    with pytest.raises(ValueError):
        S.gen_floor_texture(0, (100, 100), 0.3012)


def test_texture_levels_preserve_mean():
    tex = S.gen_floor_texture(1, (240, 240))
    assert tex.max_level == 2
    assert S.gen_floor_texture(1, (256, 256), 0.32, 0.0).max_level == 3
    x = np.linspace(0.1, 1.0, 50)
    for k in range(tex.max_level + 1):
        v = tex.sample(x, x * 0.7, k)
        assert np.all((v >= 0) & (v <= 1))
    padded, shape, *_ = tex._level(2)
    assert shape == (60, 60) and abs(padded.reshape(61, 61)[:60, :60].mean() - tex.image.mean()) < 1e-6
    with pytest.raises(ValueError):
        tex.sample(x, x, 3)


def test_texture_sample_on_texel_centres():
    tex = S.gen_floor_texture(2, (120, 120), origin=(1.0, -2.0))
    u, v = np.array([0, 7, 119]), np.array([0, 50, 33])
    x = 1.0 + u * tex.scale
    y = -2.0 + v * tex.scale
    assert np.allclose(tex.sample(x, y), tex.image[v, u], atol=1e-6)


def test_trajectory_straight_with_reverse():
    poses = S.gen_trajectory(S.TrajectorySpec(((0, 0), (10, 0)), 1.0, True))
    assert len(poses) == 22
    for k in range(11):
        a, b = poses[k], poses[21 - k]
        assert np.max(np.abs(a[:2] - b[:2])) < 1e-12
        assert abs(abs(wrap_angle(a[2] - b[2])) - np.pi) < 1e-12


def test_trajectory_l_shape_corner():
    poses = S.gen_trajectory(S.TrajectorySpec(((0, 0), (3, 0), (3, 2)), 0.5, False))
    heads = np.array([p[2] for p in poses])
    assert set(np.round(heads, 12)) == {0.0, round(np.pi / 2, 12)}
    assert abs(heads.max() - heads.min() - np.pi / 2) < 1e-12


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=6, unique=True),
       st.floats(0.05, 1.0))
def test_trajectory_length(wps, step):
    spec = S.TrajectorySpec(tuple(wps), step, True)
    if spec.length < step:
        return
    poses = S.gen_trajectory(spec)
    p = np.array([q[:2] for q in poses])
    walked = np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1))
    # corners are cut by at most one step, the turnaround adds nothing
    assert walked <= 2 * spec.length + 1e-9
    assert walked >= 2 * spec.length - 2 * step * (len(wps) - 1)
    n = len(poses) // 2
    for k in range(n):
        rel = se2_between(poses[k], poses[2 * n - 1 - k])
        assert np.allclose(rel[:2], 0, atol=1e-9) and abs(wrap_angle(rel[2] - np.pi)) < 1e-9


def test_trajectory_spec_validation():
    with pytest.raises(ValueError):
        S.TrajectorySpec(((0, 0),), 0.1)
    with pytest.raises(ValueError):
        S.TrajectorySpec(((0, 0), (1, 0)), 0.0)
    with pytest.raises(ValueError):
        S.TrajectorySpec(((0, 0), (0, 0)), 0.1)


@pytest.fixture(scope="module")
def s1_texture():
    return S.texture_for(S.bundled_spec("sim-S1", 0))


def test_render_deterministic(s1_texture):
    p = np.array([3.0, 0.1, 0.3])
    assert np.array_equal(S.render_view(s1_texture, p, CAM), S.render_view(s1_texture, p, CAM))


def test_render_wall_above_horizon(s1_texture):
    img = S.render_view(s1_texture, np.array([3.0, 0.0, 0.0]), CAM)
    floor = np.isfinite(R.plane_depth_or_nan(np.array([[0.0, v] for v in range(240)]), CAM))
    top = np.flatnonzero(~floor)
    assert len(top) and np.array_equal(img[top], S.wall_pattern(320, 240)[top])


def test_render_periodic_under_tile_shift():
    tex = S.gen_floor_texture(0, (600, 600), 0.3, 0.0, origin=(-1.5, -1.5))
    a = S.render_view(tex, np.array([0.0, 0.0, 0.4]), CAM)
    b = S.render_view(tex, np.array([0.3, 0.0, 0.4]), CAM)
    c = S.render_view(tex, np.array([0.0, -0.3, 0.4]), CAM)
    assert np.max(np.abs(a - b)) < 1e-5 and np.max(np.abs(a - c)) < 1e-5


def test_render_consistency_with_floor_homography(s1_texture):
    h = S.floor_homography(CAM)
    for x in (2.0, 5.0, 7.5):
        q = S.render_view(s1_texture, np.array([x, 0.0, 0.0]), CAM)
        r = S.render_view(s1_texture, np.array([x, 0.0, np.pi]), CAM)
        wq = G.warp_image(q, h, 300, 300)
        wr = G.rotate_pi(G.warp_image(r, h, 300, 300))
        assert np.mean(np.abs(wq - wr)) < 0.02
        assert np.mean(np.abs(q - r)) > 0.2


def test_no_floor_visible(s1_texture):
    up = R.CameraModel(200, 200, 159.5, 119.5, 1.0, -np.pi / 2)
    with pytest.raises(NoFloorVisible):
        S.render_view(s1_texture, np.zeros(3), up)
    with pytest.raises(NoFloorVisible):
        S.render_depth(np.zeros(3), up)


def test_depth_straight_down_principal():
    down = R.CameraModel(100, 100, 50.0, 40.0, 1.4, np.pi / 2)
    d = S.render_depth(np.zeros(3), down, (100, 80))
    assert abs(d[40, 50] - 1.4) < 1e-12
    assert np.all(d > 0)


def test_depth_monotone_and_matches_plane_depth():
    d = S.render_depth(np.zeros(3), CAM)
    valid = d > 0
    for u in range(0, 320, 7):
        col = d[valid[:, u], u]
        # rows increase downward: depth shrinks from the horizon to the bottom
        assert np.all(np.diff(col) < 0)
    vv, uu = np.nonzero(valid)
    pts = np.column_stack([uu, vv]).astype(float)
    assert np.max(np.abs(d[vv, uu] - R.plane_depth(pts, CAM))) < 1e-9
    assert np.all(d[~valid] == 0)


def test_odometry_zero_noise_exact():
    gt = S.gen_trajectory(S.TrajectorySpec(((0, 0), (4, 0), (4, 3)), 0.1))
    odo = S.perturb_odometry(gt, S.OdometryNoise(0.0, 0.0, 9))
    for a, b in zip(integrate(gt[0], odo), gt):
        assert np.max(np.abs(a[:2] - b[:2])) < 1e-12 and abs(wrap_angle(a[2] - b[2])) < 1e-12


def test_odometry_seeded_and_prefix_stable():
    gt = S.gen_trajectory(S.TrajectorySpec(((0, 0), (4, 0)), 0.1))
    n = S.OdometryNoise(0.02, 0.005, 4)
    a, b = S.perturb_odometry(gt, n), S.perturb_odometry(gt, n)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(np.array_equal(x, y) for x, y in zip(S.perturb_odometry(gt[:10], n), a))
    c = S.perturb_odometry(gt, S.OdometryNoise(0.02, 0.005, 5))
    assert not np.array_equal(a[0], c[0])


def test_odometry_random_walk_matches_first_order_prediction():
    s, sigma, steps = 0.1, 0.01, 100

    def terminal_errors(n_steps, seeds=50):
        gt = S.gen_trajectory(S.TrajectorySpec(((0, 0), (s * n_steps, 0)), s, False))
        errs = []
        for seed in range(seeds):
            est = integrate(gt[0], S.perturb_odometry(gt, S.OdometryNoise(0.0, sigma, seed)))
            errs.append(np.linalg.norm(est[-1][:2] - gt[-1][:2]))
        return np.array(errs)

    e = terminal_errors(steps)
    # lateral error = s * sum_j dtheta_j * (N - 1 - j): Gaussian, so |e| is half-normal
    sd = s * sigma * np.sqrt((steps - 1) * steps * (2 * steps - 1) / 6.0)
    predicted = sd * np.sqrt(2 / np.pi)
    assert abs(e.mean() - predicted) <= 3 * e.std(ddof=1) / np.sqrt(len(e))
    assert terminal_errors(steps // 2).mean() < e.mean()


def test_bundled_specs_grow_in_length():
    lengths = [S.bundled_spec(n).trajectory.length for n in ("sim-S1", "sim-S2", "sim-S3")]
    assert lengths == sorted(lengths) and lengths[0] == 10.0
    corners = [len(S.BUNDLED_WAYPOINTS[n]) - 2 for n in ("sim-S1", "sim-S2", "sim-S3")]
    assert corners == [0, 1, 2]
    with pytest.raises(ValueError):
        S.bundled_spec("sim-S9")


def _files(root):
    out = {}
    for d, _, names in os.walk(root):
        for n in names:
            p = os.path.join(d, n)
            with open(p, "rb") as f:
                out[os.path.relpath(p, root)] = f.read()
    return out


def test_generate_dataset(tmp_path):
    spec = S.bundled_spec("sim-S1", 2)
    m = S.generate_dataset(spec, tmp_path / "a")
    n = len(S.gen_trajectory(spec.trajectory)) // 2
    assert len(m.frames) == 2 * n and len(m.opposing_pairs()) == n
    assert m.ids == list(range(2 * n))
    assert len(m.forward_ids()) == len(m.reverse_ids())
    for f, r in m.opposing_pairs():
        rel = se2_between(m.frames[f].pose, m.frames[r].pose)
        assert np.allclose(rel[:2], 0, atol=1e-9) and abs(wrap_angle(rel[2] - np.pi)) < 1e-9

    back = S.read_manifest(tmp_path / "a" / "manifest.txt")
    assert back.spec() == spec
    assert all(np.array_equal(a.pose, b.pose) for a, b in zip(back.frames, m.frames))

    g = parse_g2o((tmp_path / "a" / "odometry.g2o").read_text())
    assert len(g.vertices) == 2 * n and len(g.edges) == 2 * n - 1

    S.generate_dataset(spec, tmp_path / "b")
    fa, fb = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert fa.keys() == fb.keys() and all(fa[k] == fb[k] for k in fa)
