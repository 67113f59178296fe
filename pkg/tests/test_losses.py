import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference
from rtcorr import autodiff as ad
from rtcorr.corrnet import InterpolationSequence
from rtcorr.losses import (LossWeights, arap_energy, arap_loss, geodesic_loss, imaging_loss, procrustes_rotations,
                           registration_loss, total_loss)
from rtcorr.meshkit import icosphere, rotation_from_axis_angle


def random_pi(rng, n, m):
    p = rng.random((n, m))
    return p / p.sum(axis=1, keepdims=True)


def dense_registration(final, pi, v_y):
    n = len(final)
    return sum(sum((final[i, c] - sum(pi[i, k] * v_y[k, c] for k in range(len(v_y)))) ** 2 for c in range(3))
               for i in range(n)) / n


def dense_geodesic(pi, d_x, d_y, pairs):
    full = pi @ d_y @ pi.T
    return np.mean([(full[i, j] - d_x[i, j]) ** 2 for i, j in pairs])


def dense_imaging(pi, xp, yp):
    return np.mean((pi @ yp - xp) ** 2)


def brute_arap(v, w, mesh):
    """ARAP energy with per-vertex rotations from an explicit 3x3 Procrustes loop."""
    offsets, dst = mesh.adjacency_csr
    total = 0.0
    for i in range(len(v)):
        nbrs = dst[offsets[i]:offsets[i + 1]]
        e = v[i] - v[nbrs]
        e2 = w[i] - w[nbrs]
        u, _, vt = np.linalg.svd(e2.T @ e)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, 2] *= -1
            r = u @ vt
        total += np.sum((e2 - e @ r.T) ** 2)
    return total / len(v)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# -- registration ------------------------------------------------------------

def test_registration_examples():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 3))
    assert registration_loss(v, np.eye(5), v).item() == 0
    assert registration_loss(v + [1, 0, 0], np.eye(5), v).item() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ad.ShapeMismatch):
        registration_loss(v, np.eye(4), v[:4])


@pytest.mark.parametrize("seed", range(10))
def test_registration_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 11, size=2)
    pi, v_y, final = random_pi(rng, n, m), rng.normal(size=(m, 3)) * 10, rng.normal(size=(n, 3)) * 10
    assert rel(registration_loss(final, pi, v_y).item(), dense_registration(final, pi, v_y)) <= 1e-12


# -- geodesic ----------------------------------------------------------------

def _dist(rng, n):
    pts = rng.normal(size=(n, 3))
    return np.linalg.norm(pts[:, None] - pts[None], axis=2)


def test_geodesic_examples():
    rng = np.random.default_rng(1)
    d = _dist(rng, 6)
    pairs = np.array([[0, 1], [2, 5], [4, 3]])
    assert geodesic_loss(np.eye(6), d, d, pairs).item() == 0
    assert geodesic_loss(np.eye(6), d, d + 0.7, pairs).item() == pytest.approx(0.49, rel=1e-12)
    with pytest.raises(ad.ShapeMismatch):
        geodesic_loss(np.eye(6), d, d[:5, :5], pairs)


@pytest.mark.parametrize("seed", range(10))
def test_geodesic_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 11, size=2)
    pi, d_x, d_y = random_pi(rng, n, m), _dist(rng, n), _dist(rng, m)
    pairs = rng.integers(0, n, size=(25, 2))
    assert rel(geodesic_loss(pi, d_x, d_y, pairs).item(), dense_geodesic(pi, d_x, d_y, pairs)) <= 1e-12


# -- imaging -----------------------------------------------------------------

def test_imaging_examples():
    rng = np.random.default_rng(2)
    xp = rng.random((4, 2527)) * 0.8
    assert imaging_loss(np.eye(4), xp, xp).item() == 0
    assert imaging_loss(np.eye(4), xp, xp + 0.1).item() == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(ad.ShapeMismatch):
        imaging_loss(np.eye(4), xp, xp[:3])


@pytest.mark.parametrize("seed", range(10))
def test_imaging_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 11, size=2)
    pi, xp, yp = random_pi(rng, n, m), rng.random((n, 2527)), rng.random((m, 2527))
    assert rel(imaging_loss(pi, xp, yp).item(), dense_imaging(pi, xp, yp)) <= 1e-12


def test_imaging_invariant_to_target_permutation():
    rng = np.random.default_rng(3)
    pi, xp, yp = random_pi(rng, 5, 7), rng.random((5, 2527)), rng.random((7, 2527))
    perm = rng.permutation(7)
    a = imaging_loss(pi, xp, yp).item()
    b = imaging_loss(pi[:, perm], xp, yp[perm]).item()
    assert b == pytest.approx(a, rel=1e-12)


# -- ARAP --------------------------------------------------------------------

MESH = icosphere(2)


def _rigid(angle, axis, shift):
    r = rotation_from_axis_angle(np.asarray(axis, float), angle)
    return lambda v: v @ r.T + np.asarray(shift)


def _sequence(frames):
    v = MESH.vertices
    return InterpolationSequence(v.copy(), np.stack([f - v for f in frames]))


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-50, 50)), min_size=1, max_size=4))
def test_arap_zero_for_rigid_sequences(motions):
    frames, cur = [], MESH.vertices * 10
    base = cur
    for k, (angle, shift) in enumerate(motions):
        cur = _rigid(angle, [1, 2, 0.5 + k], [shift, -shift, 0.3])(cur)
        frames.append(cur)
    mesh = MESH.with_vertices(base)
    seq = InterpolationSequence(base.copy(), np.stack([f - base for f in frames]))
    assert abs(arap_loss(mesh, seq).item()) <= 1e-9


def test_arap_translation_only_is_zero():
    v = MESH.vertices
    assert arap_loss(MESH, _sequence([v + [3, 0, 0], v + [3, 4, 5]])).item() <= 1e-9


@pytest.mark.parametrize("s", [0.5, 0.9, 1.3, 2.0])
def test_arap_uniform_scale_closed_form(s):
    v = MESH.vertices * 7
    mesh = MESH.with_vertices(v)
    offsets, dst = mesh.adjacency_csr
    src = np.repeat(np.arange(mesh.n_vertices), np.diff(offsets))
    closed = (s - 1) ** 2 * np.sum((v[src] - v[dst]) ** 2) / mesh.n_vertices
    got = arap_loss(mesh, InterpolationSequence(v.copy(), (v * s - v)[None])).item()
    assert rel(got, closed) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_arap_energy_matches_brute_procrustes(seed):
    rng = np.random.default_rng(seed)
    v = MESH.vertices * 5
    w = v + rng.normal(size=v.shape) * 0.5
    got = arap_energy(v, w, MESH.with_vertices(v)).item()
    assert rel(got, brute_arap(v, w, MESH)) <= 1e-9


def test_arap_global_rigid_invariance():
    rng = np.random.default_rng(4)
    v = MESH.vertices * 6
    frames = [v + rng.normal(size=v.shape) * 0.3 for _ in range(3)]
    mesh = MESH.with_vertices(v)
    a = arap_loss(mesh, InterpolationSequence(v.copy(), np.stack([f - v for f in frames]))).item()
    g = _rigid(1.1, [0.2, -1, 0.4], [10, 20, -5])
    gv = g(v)
    b = arap_loss(MESH.with_vertices(gv),
                  InterpolationSequence(gv.copy(), np.stack([g(f) - gv for f in frames]))).item()
    assert rel(b, a) <= 1e-9


def test_procrustes_rotations_are_proper():
    v = MESH.vertices * 4
    w = v * [1, 1, -1]  # mirror image: the unconstrained optimum would be a reflection
    offsets, dst = MESH.adjacency_csr
    src = np.repeat(np.arange(MESH.n_vertices), np.diff(offsets))
    rot = procrustes_rotations(v[src] - v[dst], w[src] - w[dst], src, MESH.n_vertices)
    np.testing.assert_allclose(np.linalg.det(rot), 1.0, atol=1e-12)
    np.testing.assert_allclose(rot @ rot.transpose(0, 2, 1), np.broadcast_to(np.eye(3), rot.shape), atol=1e-12)


# -- gradients ---------------------------------------------------------------

def _grad_check(fn, x):
    with ad.Tape() as tape:
        t = tape.watch(ad.Tensor(x.copy()))
        loss = fn(t)
        (g,) = tape.gradient(loss, [t])
    num = central_difference(lambda a: fn(ad.Tensor(a)).item(), x.copy())
    assert np.abs(g - num).max() / max(np.abs(num).max(), 1e-8) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    n, m = 6, 7
    logits = rng.normal(size=(n, m))
    v_y, final = rng.normal(size=(m, 3)), rng.normal(size=(n, 3))
    d_x, d_y = _dist(rng, n), _dist(rng, m)
    pairs = rng.integers(0, n, size=(20, 2))
    xp, yp = rng.random((n, 50)), rng.random((m, 50))
    _grad_check(lambda z: registration_loss(final, ad.row_softmax(z), v_y), logits)
    _grad_check(lambda f: registration_loss(f, random_pi(np.random.default_rng(0), n, m), v_y), final)
    _grad_check(lambda z: geodesic_loss(ad.row_softmax(z), d_x, d_y, pairs), logits)
    _grad_check(lambda z: imaging_loss(ad.row_softmax(z), xp, yp), logits)
    v = MESH.vertices * 3
    disp = rng.normal(size=(2 * len(v), 3)) * 0.2
    _grad_check(lambda d: arap_loss(MESH.with_vertices(v), d, 2), disp)


# -- weighting ---------------------------------------------------------------

def test_default_weights():
    w = LossWeights()
    assert (w.w_reg, w.w_arap, w.w_geo, w.lambda_imaging) == (1.0, 100.0, 1.0, 1000.0)
    with pytest.raises(ValueError):
        LossWeights(w_geo=-1)


def test_total_loss_examples():
    w = LossWeights()
    assert total_loss(0.0, 0.0, 0.0, 0.0, w)[1].total == 0
    assert total_loss(1.0, 0.0, 0.0, 0.0, w)[1].total == 1
    assert total_loss(0.0, 0.0, 0.0, 0.01, w)[1].total == pytest.approx(10.0, rel=1e-15)
    assert total_loss(0.0, 0.0, 0.0, 0.01, w, use_imaging=False)[1].total == 0


@given(st.floats(0, 10), st.floats(0, 1), st.floats(0, 100), st.floats(0, 1), st.floats(0.1, 1e4))
def test_total_decomposition_and_lambda_doubling(reg, arap, geo, img, lam):
    w = LossWeights(lambda_imaging=lam)
    _, b = total_loss(reg, arap, geo, img, w)
    assert b.total == pytest.approx(w.w_reg * reg + w.w_arap * arap + w.w_geo * geo + lam * img, rel=1e-12, abs=1e-9)
    _, b2 = total_loss(reg, arap, geo, img, LossWeights(lambda_imaging=2 * lam))
    _, b0 = total_loss(reg, arap, geo, img, w, use_imaging=False)
    assert (b2.total - b0.total) == pytest.approx(2 * (b.total - b0.total), rel=1e-9, abs=1e-9)
