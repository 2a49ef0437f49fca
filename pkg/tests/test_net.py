import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinmesh import synth
from spinmesh.net import (FaceEdgeNet, MeshConstructionError, SingularFoldError, dihedral_angle,
                          hyperedge_polar_identity, integrated_edge_curvature, offset_face_areas,
                          steiner_offset_check)

from conftest import corpus_net


def _tetra():
    V, F = synth.tetrahedron()
    return np.asarray(V, float), np.asarray(F)


@pytest.mark.parametrize("name,genus", [("icosphere", 0), ("torus", 1), ("genus2", 2)])
def test_genus(name, genus):
    assert corpus_net(name).genus == genus


def test_icosphere_counts():
    V, F = synth.icosphere(3)
    assert len(F) == 1280
    assert FaceEdgeNet(V, F).n_edges == 1920


def test_boundary_edge_rejected():
    V, F = _tetra()
    with pytest.raises(MeshConstructionError, match="boundary edge"):
        FaceEdgeNet(V, F[:3])


def test_non_manifold_rejected():
    V, F = _tetra()
    V2 = np.vstack([V, [[5.0, 5.0, 5.0]]])
    F2 = np.vstack([F, [[F[0][0], F[0][1], 4], [F[0][1], F[0][0], 4]]])
    with pytest.raises(MeshConstructionError, match="non-manifold"):
        FaceEdgeNet(V2, F2)


def test_inconsistent_winding_rejected():
    V, F = _tetra()
    F = F.copy()
    F[0] = F[0][::-1]
    with pytest.raises(MeshConstructionError, match="winding"):
        FaceEdgeNet(V, F)


def test_degenerate_and_invalid_faces():
    V, F = _tetra()
    F = F.copy()
    F[0, 1] = F[0, 0]
    with pytest.raises(MeshConstructionError, match="degenerate"):
        FaceEdgeNet(V, F)
    _, F = _tetra()
    with pytest.raises(MeshConstructionError, match="invalid index"):
        FaceEdgeNet(V, F + 10)
    with pytest.raises(MeshConstructionError, match="non-triangular"):
        FaceEdgeNet(V, np.zeros((2, 4), int))


def test_collapsed_face_area_rejected():
    V, F = _tetra()
    V = V.copy()
    V[F[0][2]] = 0.5 * (V[F[0][0]] + V[F[0][1]])  # flattens one face but keeps combinatorics
    with pytest.raises(MeshConstructionError, match="degenerate"):
        FaceEdgeNet(V, F)


def test_fold_raises():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    net = FaceEdgeNet(V, [[0, 1, 2], [0, 2, 1]])
    with pytest.raises(SingularFoldError):
        net.edge_curvatures
    with pytest.raises(SingularFoldError):
        integrated_edge_curvature(net, 0, 1)


def test_edge_antisymmetry_and_curvature_symmetry(bumpy):
    tw = bumpy.half_twin
    assert np.array_equal(bumpy.edge_vectors[tw], -bumpy.edge_vectors)
    assert np.abs(bumpy.edge_curvatures[tw] - bumpy.edge_curvatures).max() < 1e-12


def test_convex_edges_positive(icosphere):
    assert (icosphere.dihedral_angles > 0).all()
    f = int(icosphere.half_neighbor[0])
    assert dihedral_angle(icosphere, 0, f) == pytest.approx(icosphere.dihedral_angles[0])


def test_sphere_curvature(icosphere):
    # h ~ 2/R on a sphere (sum of principal curvatures)
    h = icosphere.mean_curvature
    A = icosphere.face_areas
    assert np.sum(A * h) / np.sum(A) == pytest.approx(2.0, abs=0.05)
    assert np.abs(h - 2.0).max() < 0.11


def test_edge_constraint_holds_for_geometric_normals(bumpy):
    assert bumpy.edge_constraint_residual().max() < 1e-12


def test_custom_normals_validated(icosphere):
    n = icosphere.face_normals.copy()
    n[0] = [1.0, 0.0, 0.0] if abs(n[0, 0]) < 0.9 else [0.0, 1.0, 0.0]
    with pytest.raises(MeshConstructionError, match="edge constraint"):
        FaceEdgeNet(icosphere.positions, icosphere.faces, normals=n)


def test_hyperedge_polar_form(bumpy):
    assert hyperedge_polar_identity(bumpy) < 1e-12


def _random_rotation(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return Q * np.sign(np.linalg.det(Q))


def test_rigid_invariance(bumpy, rng):
    moved = bumpy.transformed(_random_rotation(rng), rng.normal(size=3))
    for attr in ("edge_curvatures", "integrated_mean_curvature", "mean_curvature", "face_areas"):
        a, b = getattr(bumpy, attr), getattr(moved, attr)
        assert np.abs(a - b).max() <= 1e-9 * np.abs(a).max(), attr


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 20.0))
def test_scale_covariance(s):
    net = corpus_net("icosphere", subdiv=2)
    big = net.transformed(scale=s)
    assert np.allclose(big.edge_curvatures, s * net.edge_curvatures, rtol=1e-9, atol=0)
    assert np.allclose(big.face_areas, s**2 * net.face_areas, rtol=1e-9, atol=0)
    assert np.allclose(big.mean_curvature, net.mean_curvature / s, rtol=1e-9, atol=0)


def test_offset_area_cube_oracle():
    # unit-cube faces are split into right triangles; the two cube edges of each
    # triangle move out by t (tan 45 deg), the flat diagonal stays put
    V, F = synth.cube()
    net = FaceEdgeNet(V, F)
    side = np.sqrt(2 * net.face_areas[0])
    t = 0.05
    expect = 0.5 * (side + 2 * t) ** 2
    assert np.allclose(offset_face_areas(net, t), expect, rtol=1e-12)


def test_steiner_zero_offset(icosphere):
    assert np.abs(steiner_offset_check(icosphere, 0.0)).max() < 1e-12


def test_steiner_quadratic(icosphere):
    e2 = steiner_offset_check(icosphere, 1e-2).max()
    e3 = steiner_offset_check(icosphere, 1e-3).max()
    assert 60 < e2 / e3 < 140
