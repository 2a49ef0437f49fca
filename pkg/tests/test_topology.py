import numpy as np
import pytest

from spinmesh import dirac, topology as T
from spinmesh.integrate import gradient_operator

from conftest import corpus_net


@pytest.fixture(scope="module")
def torus_basis(torus):
    return T.helmholtzian_nullspace(torus)


def test_curl_of_gradient_vanishes(torus, rng):
    f = rng.normal(size=torus.n_vertices)
    assert np.abs(T.curl(torus, gradient_operator(torus) @ f)).max() < 1e-12


def test_curl_of_edge_vectors_vanishes(bumpy):
    form = bumpy.edge_vectors[bumpy.edge_half]
    assert np.abs(T.curl_operator(bumpy) @ form).max() < 1e-12


def test_helmholtzian_symmetric_psd(small_sphere):
    K = T.helmholtzian(small_sphere).toarray()
    assert np.abs(K - K.T).max() < 1e-12
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_sphere_has_no_harmonic_forms(small_sphere):
    assert T.helmholtzian_nullspace(small_sphere).b1 == 0


def test_torus_harmonic_basis(torus, torus_basis):
    B = torus_basis
    assert B.b1 == 2
    W = np.diag(B.weights)
    # closed, co-closed and orthonormal under the cotangent product
    assert np.abs(T.curl_operator(torus) @ B.forms.T).max() < 1e-10
    assert np.abs(gradient_operator(torus).T @ (B.weights[:, None] * B.forms.T)).max() < 1e-10
    assert np.allclose(B.forms @ W @ B.forms.T, np.eye(2), atol=1e-10)
    assert B.inner(B.forms[0], B.forms[1]) == pytest.approx(0.0, abs=1e-10)


def test_genus2_nullity():
    assert T.helmholtzian_nullspace(corpus_net("genus2")).b1 == 4


def test_exact_forms_have_no_harmonic_part(torus, torus_basis, rng):
    f = rng.normal(size=(torus.n_vertices, 3))
    r = T.exactness_residual(gradient_operator(torus) @ f, torus_basis)
    assert r.shape == (2, 3)
    assert np.abs(r).max() < 1e-10


def test_extrinsic_kernel_contains_constants(torus):
    K = T.extrinsic_kernel(torus)
    assert K.shape[1] >= 4
    assert np.allclose(K.T @ K, np.eye(K.shape[1]), atol=1e-10)
    De = dirac.assemble_extrinsic(torus).matrix
    assert np.abs(De @ K).max() < 1e-8
    for c in np.eye(4):
        v = np.tile(c, torus.n_faces)
        v /= np.linalg.norm(v)
        assert np.linalg.norm(v - K @ (K.T @ v)) < 1e-8


def test_solve_extrinsic(torus, rng):
    De = dirac.assemble_extrinsic(torus).matrix
    z0 = rng.normal(size=4 * torus.n_faces)
    b = De @ z0
    z = T.solve_extrinsic(torus, b)
    assert np.linalg.norm(De @ z.reshape(-1) - b) < 1e-8 * np.linalg.norm(b)
    A = torus.face_areas
    assert np.abs((A[:, None] * z).sum(axis=0)).max() < 1e-10


def test_projector(torus, torus_basis, rng):
    P = T.exactness_constraint_vectors(torus, torus_basis)
    assert 0 < P.size <= 6
    A = torus.face_areas
    assert np.allclose(P.fields @ (A[:, None] * P.fields.T), np.eye(P.size), atol=1e-10)
    d = rng.normal(size=torus.n_faces)
    p1 = T.project_rho_update(d, P)
    assert np.allclose(T.project_rho_update(p1, P), p1, atol=1e-12)
    assert np.abs(P.fields @ (A * p1)).max() < 1e-10


def test_phi_exactness_jacobian(torus, torus_basis, rng):
    phi = np.tile([1.0, 0, 0, 0], (torus.n_faces, 1)) + 0.1 * rng.normal(size=(torus.n_faces, 4))
    g, J = T.phi_exactness_constraints(torus, torus_basis, phi)
    d = rng.normal(size=phi.shape)
    eps = 1e-6
    gp, _ = T.phi_exactness_constraints(torus, torus_basis, phi + eps * d)
    gm, _ = T.phi_exactness_constraints(torus, torus_basis, phi - eps * d)
    fd = (gp - gm) / (2 * eps)
    assert np.abs(J @ d.reshape(-1) - fd).max() < 1e-6 * np.abs(fd).max()
    # at phi = 1 the transformed edges are the original (exact) ones
    g1, _ = T.phi_exactness_constraints(torus, torus_basis, np.tile([1.0, 0, 0, 0], (torus.n_faces, 1)))
    assert np.abs(g1).max() < 1e-10
