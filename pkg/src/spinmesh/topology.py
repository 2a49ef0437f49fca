"""Discrete Helmholtz-Hodge machinery on edge 1-forms.

Inner products follow the cotangent scheme: edges are weighted by cotangent
weights, vertex quantities (integrated divergences) by ``1 / A_v`` and face
quantities (integrated curls) by ``1 / A_f``.  Harmonic forms are the kernel of

    K = W G M0 G^T W + C^T M2 C

with ``G`` the gradient, ``C`` the curl, ``W`` the edge weights and ``M0``,
``M2`` the vertex/face weights: closed (``C w = 0``) and co-closed
(``G^T W w = 0``) edge flows.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quaternion as quat
from .dirac import assemble_extrinsic
from .integrate import cotangent_weights, gradient_operator
from .net import FaceEdgeNet

logger = logging.getLogger(__name__)

DENSE_LIMIT = 3000
GAP_RATIO = 1e4


class TopologyError(RuntimeError):
    pass


def curl_operator(net: FaceEdgeNet) -> sp.csr_matrix:
    """``(nF, nE)``: sum of a face's edge values along its boundary."""
    rows = net.half_face
    cols = net.half_edge_index
    return sp.csr_matrix((net.half_edge_sign, (rows, cols)), shape=(net.n_faces, net.n_edges))


def curl(net: FaceEdgeNet, form) -> np.ndarray:
    return curl_operator(net) @ np.asarray(form, dtype=float)


@dataclass
class HarmonicBasis:
    """Harmonic edge 1-forms, orthonormal under the cotangent edge product."""

    forms: np.ndarray  # (b1, nE)
    weights: np.ndarray  # (nE,) cotangent weights
    eigenvalues: np.ndarray  # leading spectrum of the Helmholtzian, for diagnostics

    @property
    def b1(self) -> int:
        return len(self.forms)

    def inner(self, f, g) -> float:
        return float(np.sum(self.weights * np.asarray(f) * np.asarray(g)))


def helmholtzian(net: FaceEdgeNet, weights=None) -> sp.csr_matrix:
    w = cotangent_weights(net) if weights is None else weights
    G = gradient_operator(net)
    C = curl_operator(net)
    W = sp.diags(w)
    div = G.T @ W
    K = div.T @ sp.diags(1.0 / net.vertex_areas) @ div + C.T @ sp.diags(1.0 / net.face_areas) @ C
    return K.tocsr()


def helmholtzian_nullspace(net: FaceEdgeNet, *, max_b1: int | None = None) -> HarmonicBasis:
    """Null eigenvectors of the graph Helmholtzian, with an explicit eigen-gap check."""
    w = cotangent_weights(net)
    K = helmholtzian(net, w)
    nE = K.shape[0]
    expect = 2 * net.genus
    m = max(expect, max_b1 or 0) + 4
    if nE <= DENSE_LIMIT:
        lam, V = scipy.linalg.eigh(K.toarray(), subset_by_index=[0, min(m, nE) - 1])
    else:
        scale = K.diagonal().mean()
        try:
            lam, V = spla.eigsh(K.tocsc(), k=m, sigma=-1e-6 * scale, which="LM", tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise TopologyError(f"Helmholtzian eigensolver failed: {exc}") from exc
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
    lam = np.maximum(lam, 0.0)
    top = lam[-1]
    if top <= 0.0:
        raise TopologyError("Helmholtzian spectrum is degenerate")
    small = lam < 1e-8 * K.diagonal().mean()
    b1 = int(small.sum())
    if b1 and b1 < len(lam) and lam[b1] < GAP_RATIO * max(lam[b1 - 1], 1e-300):
        raise TopologyError(f"no clear eigen-gap after {b1} null eigenvalues: {lam[:b1 + 1]}")
    if b1 == len(lam):
        raise TopologyError("null space larger than the requested window")
    if b1 != expect:
        logger.warning("Helmholtzian nullity %d differs from 2*genus=%d", b1, expect)
    Vk = V[:, :b1]
    if b1:
        Gm = Vk.T @ (w[:, None] * Vk)
        ev, U = np.linalg.eigh(Gm)
        if ev.min() <= 0:
            raise TopologyError("cotangent edge product is not positive on harmonic forms")
        Vk = Vk @ U @ np.diag(ev ** -0.5)
        # deterministic sign: largest-magnitude entry positive
        for k in range(b1):
            if Vk[np.argmax(np.abs(Vk[:, k])), k] < 0:
                Vk[:, k] *= -1
    return HarmonicBasis(Vk.T.copy(), w, lam)


@dataclass
class ExactnessProjector:
    """Area-orthonormal face fields spanning the imaginary parts of the ``z^k``."""

    fields: np.ndarray  # (m, nF), m <= 3 b1
    areas: np.ndarray

    @property
    def size(self) -> int:
        return len(self.fields)


def constraint_sources(net: FaceEdgeNet, basis: HarmonicBasis, hyperedges=None) -> np.ndarray:
    """Per-face quaternions ``sum_j w_ij E_ij omega^k_ij``, shape ``(b1, nF, 4)``."""
    E = net.hyperedges if hyperedges is None else np.asarray(hyperedges, dtype=float)
    out = np.zeros((basis.b1, net.n_faces, 4))
    eidx = net.half_edge_index
    for k, om in enumerate(basis.forms):
        coef = basis.weights[eidx] * net.half_edge_sign * om[eidx]
        out[k] = (coef[:, None] * E).reshape(-1, 3, 4).sum(axis=1)
    return out


def extrinsic_kernel(net: FaceEdgeNet, hyperedges=None, *, max_dim: int = 16) -> np.ndarray:
    """Orthonormal (plain inner product) basis of ``ker D_e`` in real coordinates.

    Constants always lie in the kernel; tori of revolution and similar
    symmetric shapes carry further quaternionic lines.
    """
    De = assemble_extrinsic(net, hyperedges).matrix
    n = De.shape[0]
    scale = float(np.abs(De.diagonal()).mean()) or 1.0
    m = min(max_dim + 4, n - 1)
    if n <= 2400:
        lam, V = scipy.linalg.eigh(De.toarray())
    else:
        v0 = np.ones(n)
        lam, V = spla.eigsh(De.tocsc(), k=m, sigma=-1e-7 * scale, which="LM", v0=v0, tol=1e-12)
    order = np.argsort(np.abs(lam))
    lam, V = lam[order], V[:, order]
    null = np.abs(lam) < 1e-8 * scale
    k = int(null.sum())
    if k == 0 or k >= m:
        raise TopologyError(f"could not isolate the kernel of D_e ({k} null eigenvalues)")
    Q, _ = np.linalg.qr(V[:, :k])
    return Q


def solve_extrinsic(net: FaceEdgeNet, rhs, hyperedges=None, kernel=None) -> np.ndarray:
    """Solve ``D_e z = rhs`` on the complement of ``ker D_e``; zero area mean.

    The right-hand side is projected onto the range of ``D_e`` first; the
    solution is made orthogonal to the kernel, then shifted so its
    area-weighted mean vanishes.
    """
    De = assemble_extrinsic(net, hyperedges).matrix.tocsc()
    K = extrinsic_kernel(net, hyperedges) if kernel is None else kernel
    b = np.asarray(rhs, dtype=float).reshape(-1)
    b = b - K @ (K.T @ b)
    scale = float(np.abs(De.diagonal()).mean()) or 1.0
    try:
        lu = spla.splu((De + 1e-9 * scale * sp.identity(De.shape[0])).tocsc())
    except RuntimeError as exc:
        raise TopologyError(f"extrinsic Dirac solve is singular: {exc}") from exc
    z = np.zeros_like(b)
    for _ in range(4):  # iterative refinement against the unshifted operator
        r = b - De @ z
        if np.linalg.norm(r) <= 1e-13 * np.linalg.norm(b):
            break
        dz = lu.solve(r)
        z += dz - K @ (K.T @ dz)
    res = np.linalg.norm(b - De @ z) / max(np.linalg.norm(b), 1e-300)
    if res > 1e-8:
        raise TopologyError(f"extrinsic Dirac solve inaccurate (relative residual {res:.2e})")
    z = z.reshape(-1, 4)
    z -= (net.face_areas[:, None] * z).sum(axis=0) / net.total_area
    return z


def exactness_constraint_vectors(net: FaceEdgeNet, basis: HarmonicBasis, hyperedges=None) -> ExactnessProjector:
    A = net.face_areas
    if basis.b1 == 0:
        return ExactnessProjector(np.zeros((0, net.n_faces)), A)
    src = constraint_sources(net, basis, hyperedges)
    K = extrinsic_kernel(net, hyperedges)
    cols = []
    for k in range(basis.b1):
        z = solve_extrinsic(net, src[k], hyperedges, kernel=K)
        cols += [z[:, 1], z[:, 2], z[:, 3]]
    Z = np.array(cols)  # (3 b1, nF)
    sq = np.sqrt(A)
    U, s, Vt = np.linalg.svd((Z * sq).T, full_matrices=False)
    keep = s > 1e-10 * s.max() if s.size and s.max() > 0 else np.zeros(0, bool)
    fields = (U[:, keep] / sq[:, None]).T
    return ExactnessProjector(fields, A)


def project_rho_update(delta_rho, projector: ExactnessProjector) -> np.ndarray:
    """Remove the components of ``delta_rho`` along the projector fields (area product)."""
    d = np.asarray(delta_rho, dtype=float).copy()
    if projector.size == 0:
        return d
    c = projector.fields @ (projector.areas * d)
    return d - projector.fields.T @ c


def exactness_residual(form, basis: HarmonicBasis) -> np.ndarray:
    """``<e~ | omega^k nu>_1`` for each harmonic form and axis, shape ``(b1, 3)``."""
    form = np.asarray(form, dtype=float)
    if basis.b1 == 0:
        return np.zeros((0, 3))
    return (basis.forms * basis.weights) @ form


def phi_exactness_constraints(net: FaceEdgeNet, basis: HarmonicBasis, phi, hyperedges=None):
    """Value and Jacobian of ``<Im(conj(phi_i) E_ij phi_j) | omega^k nu>_1``.

    Returns ``(g, J)`` with ``g`` of shape ``(3 b1,)`` and dense ``J`` of shape
    ``(3 b1, 4 nF)``.
    """
    E = net.hyperedges if hyperedges is None else np.asarray(hyperedges, dtype=float)
    h = net.edge_half
    i = net.half_face[h]
    j = net.half_neighbor[h]
    pi, pj, Eh = phi[i], phi[j], E[h]
    et = quat.qmul(quat.qmul(quat.qconj(pi), Eh), pj)[:, 1:]
    conj_op = np.diag([1.0, -1.0, -1.0, -1.0])
    # d/d phi_i: Im(conj(d) (E phi_j)); d/d phi_j: Im((conj(phi_i) E) d)
    Ji = (quat.right_matrices(quat.qmul(Eh, pj)) @ conj_op)[:, 1:, :]
    Jj = quat.left_matrices(quat.qmul(quat.qconj(pi), Eh))[:, 1:, :]
    nF = net.n_faces
    g = np.zeros(3 * basis.b1)
    J = np.zeros((3 * basis.b1, 4 * nF))
    for k, om in enumerate(basis.forms):
        c = basis.weights * om
        g[3 * k:3 * k + 3] = c @ et
        for nu in range(3):
            row = np.zeros((nF, 4))
            np.add.at(row, i, c[:, None] * Ji[:, nu, :])
            np.add.at(row, j, c[:, None] * Jj[:, nu, :])
            J[3 * k + nu] = row.reshape(-1)
    return g, J
