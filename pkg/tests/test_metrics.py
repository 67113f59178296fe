import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_nearest, brute_nearest_vectorised, floyd_warshall, wilcoxon_enumerated
from rtcorr.corrnet import InterpolationSequence
from rtcorr.geodesics import geodesic_all_pairs, sample_pairs
from rtcorr.meshkit import TriMesh, icosphere, rotation_from_axis_angle, surface_area
from rtcorr.metrics import (DEGENERATE_DISTORTION, DegenerateSource, EmptyInput, LandmarkSet, MetricReport,
                            TooFewSamples, chamfer, conformal_distortion, cumulative_curve, geodesic_error,
                            landmark_error, nearest_vertices, nn_baseline, significance_marker,
                            triangle_distortion, wilcoxon_signed_rank)

SPHERE = icosphere(2)


def brute_chamfer(points, targets):
    return np.mean([min(np.sqrt(((p - t) ** 2).sum()) for t in targets) for p in points])


# -- nearest neighbours and chamfer -------------------------------------------

def test_nn_baseline_identity_and_ties():
    np.testing.assert_array_equal(nn_baseline(SPHERE, SPHERE), np.arange(SPHERE.n_vertices))
    targets = np.zeros((10, 3))
    targets[:, 0] = np.arange(10) + 100.0
    targets[3] = [1.0, 0, 0]
    targets[7] = [-1.0, 0, 0]
    assert nearest_vertices(np.zeros((1, 3)), targets)[0] == 3


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("sizes", [(100, 500), (1000, 1000), (37, 3)])
def test_nearest_matches_brute_force(seed, sizes):
    rng = np.random.default_rng(seed)
    n, m = sizes
    targets = rng.normal(size=(m, 3)) * 10
    points = rng.normal(size=(n, 3)) * 10
    np.testing.assert_array_equal(nearest_vertices(points, targets), brute_nearest_vectorised(points, targets))
    if n <= 100:
        np.testing.assert_array_equal(nearest_vertices(points, targets), brute_nearest(points, targets))


def test_nearest_with_many_exact_ties():
    # integer lattice: many equidistant targets
    g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    points = np.random.default_rng(0).integers(0, 10, size=(300, 3)) / 2.0
    np.testing.assert_array_equal(nearest_vertices(points, g), brute_nearest(points, g))


@pytest.mark.parametrize("seed", range(4))
def test_chamfer_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    targets, points = rng.normal(size=(500, 3)) * 5, rng.normal(size=(100, 3)) * 5
    mesh = TriMesh(targets, np.zeros((0, 3), dtype=np.int64))
    assert chamfer(points, mesh) == brute_chamfer(points, targets)


def test_chamfer_examples():
    assert chamfer(SPHERE.vertices, SPHERE) == 0
    assert chamfer(SPHERE.vertices[:1] * 3.0, SPHERE) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(EmptyInput):
        chamfer(np.zeros((0, 3)), SPHERE)


# -- geodesic error -------------------------------------------------------------

def test_geodesic_error_identity_zero():
    d = geodesic_all_pairs(SPHERE)
    pairs = sample_pairs(SPHERE.n_vertices, 500, 1)
    assert np.all(geodesic_error(np.arange(SPHERE.n_vertices), SPHERE, SPHERE, d, d, pairs) == 0)


@pytest.mark.parametrize("s", [0.5, 1.7, 3.0])
def test_geodesic_error_uniform_scale(s):
    x = SPHERE.with_vertices(SPHERE.vertices * 10)
    y = x.with_vertices(x.vertices * s)
    dx, dy = geodesic_all_pairs(x), geodesic_all_pairs(y)
    pairs = sample_pairs(x.n_vertices, 300, 2)
    got = geodesic_error(np.arange(x.n_vertices), x, y, dx, dy, pairs)
    want = abs(s - 1) * dx.d[pairs[:, 0], pairs[:, 1]] / (s * np.sqrt(surface_area(x)))
    np.testing.assert_allclose(got, want, rtol=1e-9)


def test_geodesic_error_floyd_warshall_recomputation():
    rng = np.random.default_rng(3)
    x = icosphere(1)
    x = x.with_vertices(x.vertices * (5 + rng.random((x.n_vertices, 1))))
    y = icosphere(1).with_vertices(icosphere(1).vertices * 7)
    pi = rng.integers(0, y.n_vertices, size=x.n_vertices)
    pairs = sample_pairs(x.n_vertices, 200, 4)
    fx = floyd_warshall(x.n_vertices, x.edges, x.edge_lengths())
    fy = floyd_warshall(y.n_vertices, y.edges, y.edge_lengths())
    want = np.abs(fy[pi[pairs[:, 0]], pi[pairs[:, 1]]] - fx[pairs[:, 0], pairs[:, 1]]) / np.sqrt(surface_area(y))
    got = geodesic_error(pi, x, y, geodesic_all_pairs(x), geodesic_all_pairs(y), pairs)
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)
    src = geodesic_error(pi, x, y, fx, fy, pairs, normalise_by="source")
    np.testing.assert_allclose(src * np.sqrt(surface_area(x)), want * np.sqrt(surface_area(y)), rtol=1e-9)


# -- conformal distortion ---------------------------------------------------------

def test_distortion_stretch_by_two():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    out = triangle_distortion(tri, tri * [2, 1, 1], [[0, 1, 2]])
    assert abs(out[0] - 0.5) <= 1e-9


def test_distortion_identity_and_scale():
    seq = InterpolationSequence(SPHERE.vertices, np.zeros((2, SPHERE.n_vertices, 3)))
    assert np.all(conformal_distortion(SPHERE, seq) == 0)
    scaled = InterpolationSequence(SPHERE.vertices, SPHERE.vertices[None] * 1.0)
    assert np.abs(conformal_distortion(SPHERE, scaled)).max() <= 1e-9


@given(st.floats(0.1, 10), st.floats(-np.pi, np.pi), st.tuples(*[st.floats(-100, 100)] * 3))
def test_distortion_zero_under_similarity(s, angle, shift):
    r = rotation_from_axis_angle(np.array([0.4, -0.2, 1.0]), angle)
    final = s * SPHERE.vertices @ r.T + np.array(shift)
    assert np.abs(triangle_distortion(SPHERE.vertices, final, SPHERE.faces)).max() <= 1e-9


@given(st.floats(-np.pi, np.pi), st.tuples(*[st.floats(-100, 100)] * 3))
def test_distortion_invariant_to_rigid_final_frame(angle, shift):
    rng = np.random.default_rng(0)
    final = SPHERE.vertices + rng.normal(size=SPHERE.vertices.shape) * 0.05
    r = rotation_from_axis_angle(np.array([1.0, 1.0, 0.0]), angle)
    a = triangle_distortion(SPHERE.vertices, final, SPHERE.faces)
    b = triangle_distortion(SPHERE.vertices, final @ r.T + np.array(shift), SPHERE.faces)
    np.testing.assert_allclose(b, a, atol=1e-9)


def test_distortion_collapsed_target_and_degenerate_source():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    flat = tri * [1, 0, 0]
    assert triangle_distortion(tri, flat, [[0, 1, 2]])[0] == DEGENERATE_DISTORTION
    with pytest.raises(DegenerateSource):
        triangle_distortion(flat, tri, [[0, 1, 2]])


def test_distortion_per_step_and_endpoint():
    v = SPHERE.vertices
    frames = np.stack([v * [2, 1, 1], v * [2, 1, 1] * [0.5, 1, 1]])
    seq = InterpolationSequence(v, frames - v)
    assert np.abs(conformal_distortion(SPHERE, seq)).max() <= 1e-9  # endpoint is the identity
    steps = conformal_distortion(SPHERE, seq, per_step=True)
    assert steps.shape == (2, SPHERE.n_faces) and steps.max() > 0.1


# -- landmarks --------------------------------------------------------------------

def test_landmark_examples():
    v = SPHERE.vertices
    ident = np.arange(SPHERE.n_vertices)
    assert landmark_error(v[5], v[5], SPHERE, SPHERE, ident) == 0
    big = SPHERE.with_vertices(v * 10)
    # annotated source landmark on a neighbouring vertex: error is that edge length
    j = big.adjacency_csr[1][big.adjacency_csr[0][5]]
    dist = np.linalg.norm(big.vertices[5] - big.vertices[j])
    assert landmark_error(big.vertices[5], big.vertices[j], big, big, ident) == pytest.approx(dist, rel=1e-12)


def test_landmark_three_mm_offset():
    line = TriMesh(np.array([[0, 0, 0], [3, 0, 0], [0, 5, 0]], float), np.array([[0, 1, 2]]))
    assert landmark_error(line.vertices[0], line.vertices[1], line, line, np.arange(3)) == pytest.approx(3.0)


def test_landmark_with_generator_ground_truth():
    rng = np.random.default_rng(8)
    perm = rng.permutation(SPHERE.n_vertices)
    y = SPHERE.with_vertices(SPHERE.vertices * 12)
    x = TriMesh(y.vertices[perm] * 1.1, np.argsort(perm)[y.faces])
    truth_yx = np.argsort(perm)  # y vertex k is x vertex truth_yx[k]
    assert landmark_error(y.vertices[17], x.vertices[truth_yx[17]], y, x, truth_yx) == 0
    wrong = truth_yx.copy()
    wrong[17] = truth_yx[18]
    expected = np.linalg.norm(x.vertices[truth_yx[18]] - x.vertices[truth_yx[17]])
    assert landmark_error(y.vertices[17], x.vertices[truth_yx[17]], y, x, wrong) == pytest.approx(expected)


def test_landmark_set_validation():
    ls = LandmarkSet({"pineal_gland": [1, 2, 3], "x": [0, 0, 0]}, {"pineal_gland": "brain", "x": "other"})
    assert list(ls.for_organ("brain")) == ["pineal_gland"]
    with pytest.raises(ValueError):
        LandmarkSet({"a": [np.nan, 0, 0]})


# -- Wilcoxon -------------------------------------------------------------------

def test_wilcoxon_degenerate():
    with pytest.raises(TooFewSamples):
        wilcoxon_signed_rank(np.ones(8), np.ones(8))


def test_wilcoxon_six_positive():
    res = wilcoxon_signed_rank(np.arange(1, 7) + 10.0, np.full(6, 10.0))
    assert res.statistic == 0 and res.p_value == pytest.approx(0.03125, abs=1e-15)
    assert res.method == "exact"


@given(st.integers(5, 12), st.integers(0, 2**31), st.booleans())
def test_wilcoxon_exact_equals_enumeration(n, seed, with_ties):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=n)
    if with_ties:
        d = np.round(d * 2) / 2
        d[d == 0] = 0.5
    res = wilcoxon_signed_rank(d, np.zeros(n))
    assert res.p_value == pytest.approx(wilcoxon_enumerated(d), abs=1e-12)


def test_wilcoxon_normal_approximation_close_to_exact():
    rng = np.random.default_rng(5)
    d = rng.normal(0.3, 1, size=24)
    exact = wilcoxon_signed_rank(d, 0 * d).p_value
    approx = wilcoxon_signed_rank(d, 0 * d, exact_max_n=10)
    assert approx.method == "normal" and abs(approx.p_value - exact) < 0.01


def test_significance_markers():
    assert [significance_marker(p) for p in (0.04, 0.004, 0.0004, 0.00004, 0.5)] == ["*", "**", "†", "‡", ""]
    assert significance_marker(0.05) == "" and significance_marker(0.005) == "*"


# -- curves and reports ---------------------------------------------------------------

def test_cumulative_curve_examples():
    c = cumulative_curve([2.0, 2.0, 2.0], n_points=5)
    assert c[-1, 1] == 1.0 and np.all(c[:-1, 1] == 0)
    c = cumulative_curve([1, 2, 3, 4], n_points=9)
    assert c[np.isclose(c[:, 0], 2.5), 1][0] == 0.5
    with pytest.raises(EmptyInput):
        cumulative_curve([])


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=200))
def test_cumulative_curve_monotone(values):
    c = cumulative_curve(values)
    assert np.all(np.diff(c[:, 1]) >= 0) and c[-1, 1] == 1.0 and np.all(np.diff(c[:, 0]) >= 0)


def test_metric_report_roundtrip_and_check():
    r = MetricReport("m", {"o:a->b": "o"}, {"o:a->b": np.array([0.1, 0.2])}, {"o:a->b": 1.5},
                     {"o:a->b": np.array([0.0])}, {}, {"o:a->b|pineal_gland": 2.0})
    r.check()
    back = MetricReport.from_json(json.loads(json.dumps(r.to_json())))
    assert back.chamfer == r.chamfer and np.array_equal(back.geodesic_errors["o:a->b"], [0.1, 0.2])
    r.chamfer["o:a->b"] = -1
    with pytest.raises(ValueError):
        r.check()
