"""Quaternionic Dirac operators on face fields.

A quaternionic face field ``phi`` is an ``(nF, 4)`` array; its real coordinate
vector is ``phi.reshape(-1)`` (face-major, ``w, x, y, z`` inside each face).
Operators act by left multiplication with quaternion coefficients, so block
``(i, j)`` of the real matrix is the left-multiplication matrix of the
coefficient.  Since ``E_ji = conj(E_ij)`` and ``M[conj(q)] = M[q].T``, the
assembled matrices are symmetric; assembly mirrors each canonical block so the
symmetry is exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quaternion as quat
from .net import FaceEdgeNet

logger = logging.getLogger(__name__)

#: real dimension below which eigenproblems are solved densely
DENSE_EIG_LIMIT = 2400


class EigenSolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class QuaternionSparseMatrix:
    """Real ``4n x 4n`` sparse representation of a quaternionic ``n x n`` operator."""

    matrix: sp.csr_matrix
    n_faces: int
    symmetric: bool = True

    def __matmul__(self, phi):
        return self.apply(phi)

    def apply(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        return (self.matrix @ phi.reshape(-1)).reshape(-1, 4)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.matrix[4 * i:4 * i + 4, 4 * j:4 * j + 4].toarray()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def block_pattern(self) -> sp.csr_matrix:
        """Face-level sparsity pattern (nonzero blocks)."""
        coo = self.matrix.tocoo()
        P = sp.coo_matrix((np.ones_like(coo.data), (coo.row // 4, coo.col // 4)), shape=(self.n_faces, self.n_faces))
        P = P.tocsr()
        P.data[:] = 1.0
        return P

    def shifted(self, diag) -> "QuaternionSparseMatrix":
        """Subtract ``diag[i] * I4`` from every diagonal block."""
        d = np.repeat(np.asarray(diag, dtype=float), 4)
        return QuaternionSparseMatrix((self.matrix - sp.diags(d)).tocsr(), self.n_faces, self.symmetric)


def _assemble(net: FaceEdgeNet, E, diag=None) -> QuaternionSparseMatrix:
    E = net.hyperedges if E is None else np.asarray(E, dtype=float)
    nF = net.n_faces
    canon = net.edge_half
    i = net.half_face[canon]
    j = net.half_neighbor[canon]
    M = quat.left_matrices(E[canon])  # (nE, 4, 4)
    r = np.arange(4)
    rows = (4 * i)[:, None, None] + r[None, :, None]
    cols = (4 * j)[:, None, None] + r[None, None, :]
    rows = np.broadcast_to(rows, M.shape)
    cols = np.broadcast_to(cols, M.shape)
    # block (j, i) is the transpose of block (i, j)
    data = np.concatenate([M.reshape(-1), M.reshape(-1)])
    R = np.concatenate([rows.reshape(-1), cols.reshape(-1)])
    C = np.concatenate([cols.reshape(-1), rows.reshape(-1)])
    if diag is not None:
        d = np.repeat(np.asarray(diag, dtype=float), 4)
        data = np.concatenate([data, d])
        R = np.concatenate([R, np.arange(4 * nF)])
        C = np.concatenate([C, np.arange(4 * nF)])
    mat = sp.coo_matrix((data, (R, C)), shape=(4 * nF, 4 * nF)).tocsr()
    return QuaternionSparseMatrix(mat, nF, True)


def assemble_intrinsic(net: FaceEdgeNet, hyperedges=None) -> QuaternionSparseMatrix:
    """``(D_X phi)_i = sum_j E_ij phi_j``; zero diagonal blocks."""
    return _assemble(net, hyperedges, diag=np.zeros(net.n_faces))


def assemble_extrinsic(net: FaceEdgeNet, hyperedges=None) -> QuaternionSparseMatrix:
    """``(D_e phi)_i = sum_j E_ij (phi_j - phi_i) = (D_X phi)_i - H_i phi_i``."""
    E = net.hyperedges if hyperedges is None else np.asarray(hyperedges, dtype=float)
    H = E[:, 0].reshape(-1, 3).sum(axis=1)
    return _assemble(net, E, diag=-H)


def assemble_shifted(net: FaceEdgeNet, hyperedges=None, rho=None) -> QuaternionSparseMatrix:
    """``D_X - rho * A``: the diagonal shift carries the face area so that
    ``D_rho phi = 0`` is exactly the closedness condition ``D_X phi = rho A phi``."""
    rho = np.zeros(net.n_faces) if rho is None else np.asarray(rho, dtype=float)
    return _assemble(net, hyperedges, diag=-rho * net.face_areas)


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray = field(repr=False)
    residual: float


def area_mean(phi, areas) -> np.ndarray:
    return (np.asarray(areas)[:, None] * phi).sum(axis=0) / np.sum(areas)


def gauge_fix(phi, areas, *, normalize: str | None = "area_norm") -> np.ndarray:
    """Right-multiply by a constant so the area-weighted mean is a positive real.

    ``normalize="area_norm"`` rescales to unit ``A``-norm (eigenvectors);
    ``None`` keeps the magnitude.  Right multiplication by a constant commutes
    with every operator here, so eigenvectors stay eigenvectors.
    """
    phi = np.asarray(phi, dtype=float)
    m = area_mean(phi, areas)
    scale = np.sqrt((np.asarray(areas) * quat.qnorm2(phi)).sum() / np.sum(areas))
    if quat.qnorm(m) <= 1e-9 * scale:
        # mean vanishes (e.g. eigenvectors orthogonal to constants): use the largest entry
        m = phi[int(np.argmax(quat.qnorm2(phi)))]
    c = quat.qconj(m) / quat.qnorm(m)
    out = quat.qmul(phi, c)
    if normalize == "area_norm":
        out /= np.sqrt((np.asarray(areas) * quat.qnorm2(out)).sum())
    return out


def eigen_residual(D: QuaternionSparseMatrix, areas, value, phi) -> float:
    """``||D phi - value A phi||_{A^-1} / ||phi||_A``."""
    A = np.asarray(areas, dtype=float)
    r = D.apply(phi) - value * A[:, None] * phi
    num = np.sqrt((quat.qnorm2(r) / A).sum())
    den = np.sqrt((quat.qnorm2(phi) * A).sum())
    return float(num / den)


def _real_eigs(D: QuaternionSparseMatrix, areas, m: int, shift: float | None, seed: int = 0):
    n = D.matrix.shape[0]
    a4 = np.repeat(np.asarray(areas, dtype=float), 4)
    if n <= DENSE_EIG_LIMIT or m >= n - 1:
        w, V = scipy.linalg.eigh(D.toarray(), np.diag(a4))
        order = np.argsort(np.abs(w), kind="stable")[:m]
        return w[order], V[:, order]
    if shift is None:
        # a small negative shift keeps D - shift*A factorizable when D has a kernel
        scale = np.median(np.abs(D.matrix.data)) / np.median(areas)
        shift = -1e-4 * scale
    Amat = sp.diags(a4).tocsc()
    rng = np.random.default_rng(seed)
    last = None
    for attempt in range(3):
        v0 = np.ones(n) + (0.01 * attempt) * rng.standard_normal(n)
        try:
            w, V = spla.eigsh(D.matrix.tocsc(), k=m, M=Amat, sigma=shift, which="LM", v0=v0, tol=1e-12, maxiter=5000)
            order = np.argsort(np.abs(w), kind="stable")
            return w[order], V[:, order]
        except spla.ArpackNoConvergence as exc:  # restart with a perturbed start vector
            last = exc
            logger.warning("eigsh stagnated (attempt %d); restarting", attempt + 1)
    raise EigenSolverError(f"shift-invert iteration did not converge: {last}")


def smallest_eigenpairs(D: QuaternionSparseMatrix, areas, k: int = 1, *, tol: float = 1e-8,
                        shift: float | None = None) -> list[EigenPair]:
    """``k`` smallest-magnitude quaternionic eigenpairs of ``D phi = gamma A phi``.

    Every real eigenvalue of a quaternionic operator has multiplicity at least
    four (right multiplication by 1, i, j, k), so ``k`` counts quaternionic
    eigenvectors: members of one quaternionic line are returned once.
    """
    nF = D.n_faces
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > 4 * nF:
        raise ValueError(f"k={k} exceeds 4*|F|={4 * nF}")
    if k > nF:
        raise ValueError(f"k={k} exceeds the number of quaternionic eigenpairs ({nF})")
    if not D.symmetric:
        raise ValueError("operator must be symmetric")
    A = np.asarray(areas, dtype=float)
    a4 = np.repeat(A, 4)
    m = min(4 * k + 8, 4 * nF)
    w, V = _real_eigs(D, A, m, shift)

    basis: list[np.ndarray] = []  # real A-orthonormal vectors spanning chosen lines
    units = np.eye(4)
    out = []
    for idx in range(V.shape[1]):
        v = V[:, idx].copy()
        for b in basis:
            v -= b * np.dot(b * a4, v)
        nv = np.sqrt(np.dot(v * a4, v))
        if nv < 0.3 * np.sqrt(np.dot(V[:, idx] * a4, V[:, idx])):
            continue
        phi = (v / nv).reshape(-1, 4)
        for u in units:
            b = quat.qmul(phi, u).reshape(-1)
            basis.append(b / np.sqrt(np.dot(b * a4, b)))
        phi = gauge_fix(phi, A)
        gamma = float(np.dot(phi.reshape(-1), D.matrix @ phi.reshape(-1)) / np.dot(phi.reshape(-1) * a4, phi.reshape(-1)))
        res = eigen_residual(D, A, gamma, phi)
        if res > tol:
            phi, gamma, res = _refine(D, A, phi, gamma, tol)
        out.append(EigenPair(gamma, phi, res))
        if len(out) == k:
            break
    if len(out) < k:
        raise EigenSolverError(f"found only {len(out)} of {k} eigenpairs")
    for p in out:
        if p.residual > tol:
            raise EigenSolverError("eigenpair residual above tolerance", p.residual)
    # refinement can perturb the last digits; keep the magnitude ordering exact
    out.sort(key=lambda p: abs(p.value))
    return out


def _refine(D, A, phi, gamma, tol, iters=8):
    """Rayleigh-quotient iteration polish for a single eigenpair."""
    a4 = np.repeat(A, 4)
    x = phi.reshape(-1).copy()
    res = eigen_residual(D, A, gamma, phi)
    for _ in range(iters):
        try:
            y = spla.spsolve((D.matrix - (gamma + 1e-14) * sp.diags(a4)).tocsc(), a4 * x)
        except RuntimeError:
            break
        x = y / np.sqrt(np.dot(y * a4, y))
        gamma = float(np.dot(x, D.matrix @ x))
        res = eigen_residual(D, A, gamma, x.reshape(-1, 4))
        if res <= tol:
            break
    return gauge_fix(x.reshape(-1, 4), A), gamma, res
