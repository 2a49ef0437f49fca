import numpy as np
import pytest

from spinmesh import metrics as M
from spinmesh.net import FaceEdgeNet


def _rotation(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return Q * np.sign(np.linalg.det(Q))


def test_similarity_is_conformal(small_sphere, rng):
    moved = small_sphere.transformed(_rotation(rng), rng.normal(size=3), scale=2.5)
    assert np.allclose(M.conformality_factor(small_sphere, moved), 1.0, atol=1e-10)
    assert np.abs(M.area_distortion(small_sphere, moved)).max() < 1e-10


def test_axis_stretch(small_sphere):
    V = small_sphere.positions * [2.0, 1.0, 1.0]
    Q = M.conformality_factor(small_sphere, small_sphere.with_positions(V))
    assert Q.min() >= 1.0 - 1e-12
    assert Q.max() == pytest.approx(2.0, rel=0.02)


def test_single_triangle_jacobian():
    # affine map diag(3, 1) on a planar triangle: Q = 3 exactly
    src = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    dst = src * [3.0, 1.0, 1.0]
    S = M._frames(src[None])[0]
    T = M._frames(dst[None])[0]
    sv = np.linalg.svd(T[0] @ np.linalg.inv(S[0]), compute_uv=False)
    assert sv[0] / sv[1] == pytest.approx(3.0)


def test_area_distortion_values(small_sphere):
    A = small_sphere.face_areas
    # an anisotropic scaling of one axis changes areas face by face; compare with direct ratios
    moved = small_sphere.with_positions(small_sphere.positions * [1.0, 1.0, 1.7])
    At = moved.face_areas
    ref = np.log(At / A) - np.log(At.sum() / A.sum())
    assert np.allclose(M.area_distortion(small_sphere, moved), ref)


def test_requires_same_faces(small_sphere, icosphere):
    with pytest.raises(ValueError):
        M.conformality_factor(small_sphere, icosphere)


def test_willmore(icosphere):
    W = M.willmore_energy(icosphere)
    assert W == pytest.approx(16 * np.pi, rel=0.03)
    assert M.willmore_energy(icosphere.transformed(scale=3.0)) == pytest.approx(W, rel=1e-10)


def test_align_similarity_recovers_transform(bumpy, rng):
    R = _rotation(rng)
    moved = bumpy.transformed(R, rng.normal(size=3), scale=3.0)
    al = M.align_similarity(moved, bumpy)
    assert al.residual < 1e-10
    assert al.scale == pytest.approx(1 / 3.0)
    assert np.allclose(al.aligned.positions, bumpy.positions, atol=1e-10)
    assert np.linalg.det(al.rotation) == pytest.approx(1.0)


def test_align_never_reflects(small_sphere):
    mirrored = small_sphere.positions * [-1.0, 1.0, 1.0]
    al = M.align_similarity(mirrored, small_sphere.positions)
    assert np.linalg.det(al.rotation) == pytest.approx(1.0)


def test_align_degenerate():
    P = np.c_[np.arange(5.0), np.zeros(5), np.zeros(5)]
    with pytest.raises(ValueError, match="degenerate"):
        M.align_similarity(P, P)
    with pytest.raises(ValueError):
        M.align_similarity(np.zeros((3, 3)), np.zeros((4, 3)))


def test_closest_points_against_sampling(rng):
    a, b, c = rng.normal(size=(3, 3))
    uv = rng.random((40000, 2))
    uv = uv[uv.sum(axis=1) <= 1]
    samples = a + uv[:, :1] * (b - a) + uv[:, 1:] * (c - a)
    p = 2 * rng.normal(size=(60, 3))
    cp = M.closest_points_on_triangles(p, *[np.repeat(x[None], 60, axis=0) for x in (a, b, c)])
    d = np.linalg.norm(cp - p, axis=1)
    ds = np.linalg.norm(samples[None] - p[:, None], axis=2).min(axis=1)
    assert np.all(d <= ds + 1e-12)
    assert np.all(ds - d < 0.05)


def test_point_to_surface_against_brute_force(small_sphere, rng):
    P = 0.8 * rng.normal(size=(200, 3))
    d = M.point_to_surface_distances(P, small_sphere)
    T = small_sphere.positions[small_sphere.faces]
    best = np.full(len(P), np.inf)
    for tri in T:
        abc = [np.repeat(v[None], len(P), axis=0) for v in tri]
        best = np.minimum(best, np.linalg.norm(M.closest_points_on_triangles(P, *abc) - P, axis=1))
    assert np.abs(d - best).max() < 1e-12


def test_point_to_surface_error_scaled_sphere(small_sphere):
    big = small_sphere.with_positions(1.01 * small_sphere.positions)
    mx, mean = M.point_to_surface_error(big, small_sphere)
    assert mx == pytest.approx(0.01, rel=1e-6)
    assert mean == pytest.approx(0.01, rel=0.2)
    assert M.point_to_surface_error(small_sphere, small_sphere) == (0.0, 0.0)


def test_summarize():
    v = np.r_[np.ones(999), 50.0]
    s = M.summarize(v)
    assert s["max"] == 50.0 and s["max_trimmed"] == 1.0 and s["n_infinite"] == 0
    s = M.summarize([1.0, np.inf])
    assert s["n_infinite"] == 1 and s["mean"] == 1.0


def test_degenerate_target_gives_inf(small_sphere, caplog):
    V = small_sphere.positions.copy()
    f = small_sphere.faces[0]
    V[f[2]] = 0.5 * (V[f[0]] + V[f[1]])
    flat = FaceEdgeNet(V, small_sphere.faces, validate=False)
    Q = M.conformality_factor(small_sphere, flat)
    assert np.isinf(Q[0])
    assert "degenerate" in caplog.text


def test_report_dict(small_sphere):
    rep = M.DeformationReport.from_nets(small_sphere, small_sphere.transformed(scale=2.0), closedness=1e-12)
    d = rep.to_dict()
    assert set(d) == {"Q", "eps_s", "willmore", "closedness", "integrability"}
    assert d["Q"]["max"] == pytest.approx(1.0)
