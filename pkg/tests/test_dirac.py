import numpy as np
import pytest
import scipy.linalg

from spinmesh import dirac, quaternion as quat, synth
from spinmesh.net import FaceEdgeNet


def _loop_apply(net, phi, diag=None):
    """Reference: (D phi)_i = sum over the three neighbours of E_ij phi_j (+ diag_i phi_i)."""
    out = np.zeros_like(phi)
    E = net.hyperedges
    for h in range(net.n_half_edges):
        i, j = net.half_face[h], net.half_neighbor[h]
        out[i] += quat.qmul(E[h], phi[j])
    if diag is not None:
        out += diag[:, None] * phi
    return out


def test_intrinsic_matches_definition(small_bumpy, rng):
    phi = rng.normal(size=(small_bumpy.n_faces, 4))
    D = dirac.assemble_intrinsic(small_bumpy)
    assert np.allclose(D.apply(phi), _loop_apply(small_bumpy, phi), atol=1e-13)


def test_extrinsic_and_shifted_match_definition(small_bumpy, rng):
    net = small_bumpy
    phi = rng.normal(size=(net.n_faces, 4))
    H = net.integrated_mean_curvature
    De = dirac.assemble_extrinsic(net)
    assert np.allclose(De.apply(phi), _loop_apply(net, phi, -H), atol=1e-13)
    rho = rng.normal(size=net.n_faces)
    Dr = dirac.assemble_shifted(net, rho=rho)
    assert np.allclose(Dr.apply(phi), _loop_apply(net, phi, -rho * net.face_areas), atol=1e-13)


def test_blocks_are_quaternion_products(small_bumpy):
    D = dirac.assemble_intrinsic(small_bumpy)
    h = 7
    i, j = small_bumpy.half_face[h], small_bumpy.half_neighbor[h]
    assert np.allclose(D.block(i, j), quat.left_matrices(small_bumpy.hyperedges[h]))
    # conj(E_ij) = E_ji makes the real matrix symmetric
    assert np.allclose(D.block(j, i), D.block(i, j).T)
    assert D.block_pattern().nnz == 3 * small_bumpy.n_faces + small_bumpy.n_faces


@pytest.mark.parametrize("build", [dirac.assemble_intrinsic, dirac.assemble_extrinsic])
def test_exact_symmetry(bumpy, build):
    M = build(bumpy).matrix
    assert (M - M.T).count_nonzero() == 0


def test_extrinsic_kills_constants(bumpy):
    De = dirac.assemble_extrinsic(bumpy)
    for c in np.eye(4):
        assert np.abs(De.apply(np.tile(c, (bumpy.n_faces, 1)))).max() < 1e-12


def test_constants_map_to_mean_curvature(icosphere):
    D = dirac.assemble_intrinsic(icosphere)
    out = D.apply(np.tile([1.0, 0, 0, 0], (icosphere.n_faces, 1)))
    # imaginary parts sum the closed face cycle of edge vectors
    assert np.allclose(out[:, 0], icosphere.integrated_mean_curvature)
    assert np.abs(out[:, 1:]).max() < 1e-14


def test_eigenpairs_against_dense_oracle(small_sphere):
    net = small_sphere
    D = dirac.assemble_intrinsic(net)
    A4 = np.repeat(net.face_areas, 4)
    w = scipy.linalg.eigh(D.toarray(), np.diag(A4), eigvals_only=True)
    ref = np.sort(np.abs(w))
    pairs = dirac.smallest_eigenpairs(D, net.face_areas, 3)
    mags = [abs(p.value) for p in pairs]
    assert mags == sorted(mags)
    assert mags[0] == pytest.approx(ref[0], rel=1e-9)
    for p in pairs:
        assert p.residual < 1e-8
        assert dirac.eigen_residual(D, net.face_areas, p.value, p.vector) < 1e-8


def test_sparse_eigen_path_matches_dense():
    V, F = synth.icosphere(frequency=6)  # 720 faces: above the dense limit
    net = FaceEdgeNet(V, F)
    assert 4 * net.n_faces > dirac.DENSE_EIG_LIMIT
    D = dirac.assemble_intrinsic(net)
    w = scipy.linalg.eigh(D.toarray(), np.diag(np.repeat(net.face_areas, 4)), eigvals_only=True)
    p = dirac.smallest_eigenpairs(D, net.face_areas, 1)[0]
    assert abs(p.value) == pytest.approx(np.abs(w).min(), rel=1e-8)


def test_quaternionic_multiplicity(small_sphere):
    # every eigenvalue comes with a quaternionic line: right multiplication preserves eigenvectors
    D = dirac.assemble_intrinsic(small_sphere)
    p = dirac.smallest_eigenpairs(D, small_sphere.face_areas, 1)[0]
    for u in np.eye(4)[1:]:
        v = quat.qmul(p.vector, u)
        assert dirac.eigen_residual(D, small_sphere.face_areas, p.value, v) < 1e-8


def test_eigen_argument_checks(small_sphere):
    D = dirac.assemble_intrinsic(small_sphere)
    with pytest.raises(ValueError):
        dirac.smallest_eigenpairs(D, small_sphere.face_areas, 0)
    with pytest.raises(ValueError, match="exceeds"):
        dirac.smallest_eigenpairs(D, small_sphere.face_areas, 4 * small_sphere.n_faces + 1)


def test_gauge_fix(small_sphere, rng):
    A = small_sphere.face_areas
    phi = np.tile([1.0, 0, 0, 0], (small_sphere.n_faces, 1)) + 0.1 * rng.normal(size=(small_sphere.n_faces, 4))
    c = rng.normal(size=4)
    g1 = dirac.gauge_fix(phi, A)
    g2 = dirac.gauge_fix(quat.qmul(phi, c), A)
    assert np.allclose(g1, g2, atol=1e-12)
    m = dirac.area_mean(g1, A)
    assert m[0] > 0 and np.abs(m[1:]).max() < 1e-12
    assert np.sum(A * quat.qnorm2(g1)) == pytest.approx(1.0)
