import numpy as np
import pytest
from hypothesis import given, strategies as st

from earlybird import descriptor as D
from earlybird import imggeom as G
from earlybird.errors import DimensionMismatch, EmptyMatrix, ImageTooSmall, MissingId, ParseError


def test_constant_image_gives_uniform_descriptor():
    d = D.grid_gradient_descriptor(np.full((32, 32), 0.4), 4, 9)
    assert d.shape == (4 * 4 * 9,)
    assert np.allclose(d, d[0]) and abs(np.linalg.norm(d) - 1) < 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(40, 40), (37, 45), (30, 64)]), st.integers(1, 8))
def test_pi_rotation_permutes_cells(seed, shape, grid):
    img = np.random.default_rng(seed).random(shape)
    bins = 9
    a = D.grid_gradient_descriptor(img, grid, bins).reshape(grid, grid, bins)
    b = D.grid_gradient_descriptor(G.rotate_pi(img), grid, bins).reshape(grid, grid, bins)
    assert np.max(np.abs(b - a[::-1, ::-1, :])) < 1e-9


def test_ring_descriptor_pi_invariant(rng):
    img = rng.random((41, 53))
    a = D.place_descriptor(img)
    b = D.place_descriptor(G.rotate_pi(img))
    a_ring = a[:6 * 9]
    assert np.max(np.abs(a_ring - b[:6 * 9])) < 1e-12


def test_vertical_stripes_horizontal_gradient_bin():
    img = np.tile(np.array([0.0, 0.0, 1.0, 1.0]), (8, 2))
    grid, bins = 2, 9
    d = D.grid_gradient_descriptor(img, grid, bins).reshape(grid, grid, bins)
    # oracle: direct histogram, only bin 0 (orientation 0 mod pi) is populated
    gu = np.gradient(img, axis=1)
    want = np.zeros((grid, grid, bins))
    for v in range(8):
        for u in range(8):
            want[v // 4, u // 4, 0] += abs(gu[v, u])
    want /= np.linalg.norm(want)
    assert np.max(np.abs(d - want)) < 1e-12
    assert np.all(d[:, :, 1:] == 0)


def test_soft_assignment_between_bins():
    # gradient direction 10 degrees with bins of 20 degrees: split evenly over bins 0 and 1
    vv, uu = np.mgrid[0:16, 0:16].astype(float)
    ang = np.radians(10.0)
    img = 0.5 + 0.01 * (np.cos(ang) * uu + np.sin(ang) * vv)
    d = D.grid_gradient_descriptor(img, 1, 9)
    assert abs(d[0] - d[1]) < 1e-9 and np.all(d[2:] < 1e-9)


def test_descriptor_too_small():
    with pytest.raises(ImageTooSmall):
        D.grid_gradient_descriptor(np.zeros((4, 4)), 8, 9)


def test_place_descriptor_weighting(rng):
    a, b = rng.random((40, 40)), rng.random((40, 40))
    w = 0.8
    da, db = D.place_descriptor(a, ring_weight=w), D.place_descriptor(b, ring_weight=w)
    ra, rb = D.ring_gradient_descriptor(a), D.ring_gradient_descriptor(b)
    ga, gb = D.grid_gradient_descriptor(a), D.grid_gradient_descriptor(b)
    want = w * D.cosine_distance(ra, rb) + (1 - w) * D.cosine_distance(ga, gb)
    assert abs(D.cosine_distance(da, db) - want) < 1e-12
    assert np.array_equal(D.place_descriptor(a, ring_weight=0.0), ga)


def _write(path, rows):
    path.write_text("".join(" ".join(str(x) for x in r) + "\n" for r in rows))
    return path


def test_load_descriptors(tmp_path):
    p = _write(tmp_path / "d.txt", [[0, 3, 4], [1, 1, 0], [2, 0, 2]])
    s = D.load_descriptors(p, [0, 1, 2])
    assert len(s) == 3 and s.dim == 2
    assert np.allclose(s.vectors[0], [0.6, 0.8])
    assert np.allclose(np.linalg.norm(s.vectors, axis=1), 1.0, atol=1e-12)


def test_load_missing_id(tmp_path):
    p = _write(tmp_path / "d.txt", [[0, 1, 0], [1, 0, 1]])
    with pytest.raises(MissingId) as e:
        D.load_descriptors(p, [0, 1, 7])
    assert e.value.frame_id == 7


def test_load_dimension_mismatch_and_parse_error(tmp_path):
    with pytest.raises(DimensionMismatch):
        D.load_descriptors(_write(tmp_path / "a.txt", [[0, 1, 0], [1, 1]]), [0, 1])
    with pytest.raises(ParseError) as e:
        D.load_descriptors(_write(tmp_path / "b.txt", [[0, 1, 0], [1, "x", 2]]), [0, 1])
    assert e.value.line == 2


def test_save_load_roundtrip(tmp_path, rng):
    s = D.DescriptorSet(np.arange(5), rng.normal(size=(5, 7)))
    D.save_descriptors(tmp_path / "s.txt", s)
    t = D.load_descriptors(tmp_path / "s.txt", range(5))
    assert np.max(np.abs(t.vectors - s.vectors)) < 1e-15


def test_cosine_distance_examples():
    a = np.array([1.0, 0.0])
    assert D.cosine_distance(a, a) == 0.0
    assert D.cosine_distance(a, np.array([0.0, 1.0])) == 1.0
    assert D.cosine_distance(a, -a) == 2.0
    with pytest.raises(DimensionMismatch):
        D.cosine_distance(a, np.ones(3))


@given(st.integers(0, 2 ** 32 - 1))
def test_cosine_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 16))
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    assert D.cosine_distance(a, b) == D.cosine_distance(b, a)


def test_cost_matrix_examples(rng):
    s = D.DescriptorSet(np.arange(4), rng.normal(size=(4, 6)))
    assert np.allclose(np.diag(D.cost_matrix(s, s)), 0.0, atol=1e-12)
    assert np.array_equal(D.cost_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])), [[1.0]])
    q = D.DescriptorSet(np.arange(3), rng.normal(size=(3, 5)))
    r = D.DescriptorSet(np.arange(4), rng.normal(size=(4, 5)))
    c = D.cost_matrix(q, r)
    for i in range(3):
        for j in range(4):
            assert abs(c[i, j] - D.cosine_distance(q.vectors[i], r.vectors[j])) < 1e-12
    assert np.all((c >= 0) & (c <= 2))
    with pytest.raises(DimensionMismatch):
        D.cost_matrix(q, D.DescriptorSet(np.arange(2), rng.normal(size=(2, 4))))


def test_best_matches_examples(rng):
    c = 1.0 - np.eye(4)
    assert D.best_matches(c) == [(i, i, 0.0) for i in range(4)]
    assert D.best_matches(np.array([[0.5, 0.5]])) == [(0, 0, 0.5)]
    c = rng.random((5, 7))
    for i, j, d in D.best_matches(c):
        best = 0
        for k in range(7):
            if c[i, k] < c[i, best]:
                best = k
        assert j == best and d == c[i, best]
    with pytest.raises(EmptyMatrix):
        D.best_matches(np.zeros((0, 3)))


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100.0))
def test_matching_invariant_to_positive_scaling(seed, lam):
    rng = np.random.default_rng(seed)
    qv, rv = rng.normal(size=(6, 8)), rng.normal(size=(9, 8))
    base = D.match_ids(D.DescriptorSet(np.arange(6), qv), D.DescriptorSet(np.arange(9), rv))
    scaled = D.match_ids(D.DescriptorSet(np.arange(6), lam * qv), D.DescriptorSet(np.arange(9), rv * lam))
    assert [m[:2] for m in base] == [m[:2] for m in scaled]


def test_descriptor_set_unit_norm_and_ids(rng):
    s = D.DescriptorSet(np.array([2, 5, 9]), rng.normal(size=(3, 4)) * 50)
    assert np.allclose(np.linalg.norm(s.vectors, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        D.DescriptorSet(np.array([2, 2]), rng.normal(size=(2, 4)))
    assert np.array_equal(s.subset([5]).vectors, s.vectors[1:2])


def test_shortlist_examples(rng):
    ms = [(0, 10, 0.3), (1, 11, 0.1), (2, 12, 0.2)]
    assert len(D.shortlist_top_k(ms, 20)) == 3
    assert [c.query_id for c in D.shortlist_top_k(ms, 2)] == [1, 2]
    ms = [(i, i + 100, float(d)) for i, d in enumerate(rng.random(100))]
    got = D.shortlist_top_k(ms)
    want = sorted(ms, key=lambda m: (m[2], m[0]))[:20]
    assert [(c.query_id, c.ref_id, c.distance) for c in got] == want


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30), st.sampled_from([0.1, 0.2, 0.5])),
                max_size=40), st.integers(1, 25))
def test_shortlist_sorted_with_tiebreak(ms, k):
    got = D.shortlist_top_k(ms, k)
    assert len(got) == min(k, len(ms))
    keys = [(c.distance, c.query_id) for c in got]
    assert keys == sorted(keys)


def test_variant_parse():
    assert D.Variant.parse("HomoPiRot") is D.Variant.HOMO_PIROT
    assert D.Variant.parse("flip_lr") is D.Variant.FLIP_LR
    with pytest.raises(ValueError):
        D.Variant.parse("bogus")


def test_prepare_view_roles(rng):
    img = rng.random((240, 320))
    h = G.homography_from_points([[100, 150], [220, 150], [300, 230], [20, 230]],
                                 [[0, 0], [99, 0], [99, 99], [0, 99]])
    q = D.prepare_view(img, "homo-pirot", "query", h, (100, 100))
    r = D.prepare_view(img, "homo-pirot", "reference", h, (100, 100))
    assert np.array_equal(r, G.rotate_pi(q))
    assert np.array_equal(D.prepare_view(img, "homo", "reference", h, (100, 100)), q)
    assert np.array_equal(D.prepare_view(img, "flip-lr", "reference"), img[:, ::-1])
    assert np.array_equal(D.prepare_view(img, "flip-lr", "query"), img)
