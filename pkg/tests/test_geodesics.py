import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import floyd_warshall
from rtcorr.geodesics import (GeodesicTable, cached_geodesics, geodesic_all_pairs, load_table, sample_pairs,
                              save_table)
from rtcorr.meshkit import TriMesh, apply_rigid, box, icosphere, quadric_decimate, rotation_from_axis_angle
from rtcorr.meshkit.rigid import RigidTransform


def bumpy_sphere(seed, level=2):
    m = icosphere(level)
    rng = np.random.default_rng(seed)
    return m.with_vertices(m.vertices * (1 + 0.15 * rng.random((m.n_vertices, 1))) * 20)


def test_path_mesh():
    # two triangles sharing an edge: 0-1 is 1mm, 1-2 is 2mm, 0-2 not an edge
    v = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0], [1, 5, 0]], float)
    m = TriMesh(v, np.array([[0, 1, 3], [1, 2, 3]]))
    assert geodesic_all_pairs(m).d[0, 2] == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("mesh", [icosphere(1), icosphere(2), box(), bumpy_sphere(3)], ids=["ico1", "ico2", "box", "bumpy"])
def test_matches_floyd_warshall(mesh):
    assert mesh.n_vertices <= 200
    d = geodesic_all_pairs(mesh).d
    fw = floyd_warshall(mesh.n_vertices, mesh.edges, mesh.edge_lengths())
    np.testing.assert_allclose(d, fw, rtol=0, atol=1e-9)


def test_table_invariants():
    m = bumpy_sphere(1)
    d = geodesic_all_pairs(m).d
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)
    v = m.vertices
    straight = np.linalg.norm(v[:, None] - v[None], axis=2)
    assert np.all(d >= straight - 1e-9)
    rng = np.random.default_rng(0)
    i, j, k = rng.integers(0, m.n_vertices, size=(3, 5000))
    assert np.all(d[i, j] <= d[i, k] + d[k, j] + 1e-9)


def test_disconnected_components_are_infinite():
    a, b = icosphere(0), icosphere(0)
    m = TriMesh(np.vstack([a.vertices, b.vertices + 5]), np.vstack([a.faces, b.faces + a.n_vertices]))
    d = geodesic_all_pairs(m).d
    assert np.isinf(d[0, a.n_vertices]) and np.isfinite(d[0, 1])


@given(st.floats(-np.pi, np.pi), st.tuples(*[st.floats(-100, 100)] * 3))
def test_rigid_invariance(angle, shift):
    m = bumpy_sphere(2)
    t = RigidTransform(rotation_from_axis_angle(np.array([0.3, -0.5, 0.8]), angle), np.array(shift))
    a, b = geodesic_all_pairs(m).d, geodesic_all_pairs(apply_rigid(m, t)).d
    np.testing.assert_allclose(b, a, rtol=1e-9)


@given(st.floats(0.01, 100))
def test_uniform_scaling(s):
    m = bumpy_sphere(4)
    np.testing.assert_allclose(geodesic_all_pairs(m.with_vertices(m.vertices * s)).d,
                               s * geodesic_all_pairs(m).d, rtol=1e-9)


def test_sample_pairs_trivial_and_deterministic():
    p = sample_pairs(2, 5, 11)
    assert {tuple(r) for r in p} <= {(0, 1), (1, 0)}
    np.testing.assert_array_equal(sample_pairs(50, 100, 3), sample_pairs(50, 100, 3))
    assert not np.array_equal(sample_pairs(50, 100, 3), sample_pairs(50, 100, 4))
    with pytest.raises(ValueError):
        sample_pairs(1, 5, 0)
    with pytest.raises(ValueError):
        sample_pairs(5, 0, 0)


@given(st.integers(2, 300), st.integers(1, 500), st.integers(0, 2**31))
def test_sample_pairs_distinct_in_range(n, k, seed):
    p = sample_pairs(n, k, seed)
    assert p.shape == (k, 2)
    assert np.all(p[:, 0] != p[:, 1]) and p.min() >= 0 and p.max() < n


def test_sample_pairs_uniform_marginals():
    n, k = 1000, 10000
    p = sample_pairs(n, k, 7)
    for col in (0, 1):
        counts = np.bincount(p[:, col], minlength=n)
        expected = k / n
        sigma = np.sqrt(k * (1 / n) * (1 - 1 / n))
        assert np.all(np.abs(counts - expected) <= 3 * sigma + 1e-9) or stats.chisquare(counts).pvalue > 1e-3
        assert stats.chisquare(counts).pvalue > 1e-3


def test_sample_pairs_ordered_pairs_uniform():
    n, k = 6, 60000
    p = sample_pairs(n, k, 1)
    counts = np.zeros((n, n))
    np.add.at(counts, (p[:, 0], p[:, 1]), 1)
    off = counts[~np.eye(n, dtype=bool)]
    assert stats.chisquare(off).pvalue > 1e-3


def test_cache_roundtrip_and_hit_equals_miss(tmp_path):
    m = quadric_decimate(bumpy_sphere(5, level=3), 400)
    miss = cached_geodesics(m, tmp_path)
    files = list(tmp_path.glob("geo_*.bin"))
    assert len(files) == 1
    raw = files[0].read_bytes()
    assert len(raw) == 8 + 4 + 4 * m.n_vertices ** 2
    hit = cached_geodesics(m, tmp_path)
    np.testing.assert_array_equal(hit.d, miss.d)
    np.testing.assert_allclose(hit.d, geodesic_all_pairs(m).d, rtol=1e-6)


def test_table_file_rejects_foreign(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nonsense")
    with pytest.raises(ValueError):
        load_table(tmp_path / "x.bin")
    save_table(GeodesicTable(np.zeros((2, 2))), tmp_path / "ok.bin")
    assert load_table(tmp_path / "ok.bin").n == 2
