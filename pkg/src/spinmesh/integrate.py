"""Apply spin transformations and integrate transformed edges into positions.

Edge 1-forms are stored on the canonical (undirected) edges of a net as
``(nE, 3)`` arrays, oriented like the canonical half-edge ``src -> dst``.  The
value on the opposite orientation is the negation, so alternation holds by
construction.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quaternion as quat
from .net import FaceEdgeNet, MeshConstructionError

logger = logging.getLogger(__name__)

COT_CLAMP = 1e8


class IntegrationError(RuntimeError):
    pass


def transform_hyperedges(net: FaceEdgeNet, phi, hyperedges=None):
    """Return ``(E~, n~)`` with ``E~_ij = conj(phi_i) E_ij phi_j`` and ``n~_i = phi_i^-1 n_i phi_i``.

    ``E~`` is given per half-edge, ``n~`` per face.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(quat.qnorm2(phi) == 0.0):
        raise quat.QuaternionDomainError("spin field vanishes on a face")
    E = net.hyperedges if hyperedges is None else np.asarray(hyperedges, dtype=float)
    canon = net.edge_half
    pi = phi[net.half_face[canon]]
    pj = phi[net.half_neighbor[canon]]
    Ec = quat.qmul(quat.qmul(quat.qconj(pi), E[canon]), pj)
    Et = np.empty((net.n_half_edges, 4))
    Et[canon] = Ec
    Et[net.half_twin[canon]] = quat.qconj(Ec)
    nt = quat.qconjugate_by(phi, quat.from_vector(net.face_normals))[:, 1:]
    nt /= np.linalg.norm(nt, axis=1, keepdims=True)
    return Et, nt


def edge_form(net: FaceEdgeNet, half_values) -> np.ndarray:
    """Restrict per-half-edge vectors (or quaternions' imaginary parts) to canonical edges."""
    v = np.asarray(half_values, dtype=float)
    if v.shape[-1] == 4:
        v = v[..., 1:]
    return v[net.edge_half]


def expand_form(net: FaceEdgeNet, form) -> np.ndarray:
    """Per-half-edge values of an edge 1-form (alternating)."""
    form = np.asarray(form, dtype=float)
    s = net.half_edge_sign.reshape((-1,) + (1,) * (form.ndim - 1))
    return s * form[net.half_edge_index]


def gradient_operator(net: FaceEdgeNet) -> sp.csr_matrix:
    """``(nE, nV)`` discrete gradient: value at ``dst`` minus value at ``src``."""
    h = net.edge_half
    nE = len(h)
    rows = np.repeat(np.arange(nE), 2)
    cols = np.stack([net.half_dst[h], net.half_src[h]], axis=1).reshape(-1)
    vals = np.tile([1.0, -1.0], nE)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nE, net.n_vertices))


def cotangent_weights(net: FaceEdgeNet) -> np.ndarray:
    """``w = (cot a + cot b) / 2`` per canonical edge (angles opposite the edge)."""
    P = net.positions[net.faces]
    cots = np.empty((net.n_faces, 3))
    for k in range(3):
        # half-edge k of a face runs vertex k -> k+1; the opposite corner is k+2
        o = P[:, (k + 2) % 3]
        a = P[:, k] - o
        b = P[:, (k + 1) % 3] - o
        cots[:, k] = np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
    cots = cots.reshape(-1)
    big = np.abs(cots) > COT_CLAMP
    if big.any():
        logger.warning("clamping %d cotangents above %.0e (near-degenerate triangles)", int(big.sum()), COT_CLAMP)
        cots = np.clip(cots, -COT_CLAMP, COT_CLAMP)
    h = net.edge_half
    return 0.5 * (cots[h] + cots[net.half_twin[h]])


def cotangent_laplacian(net: FaceEdgeNet, weights=None) -> sp.csr_matrix:
    """``Delta = div grad``; negative semidefinite, ``(Delta f)_v = sum w (f_v' - f_v)``."""
    w = cotangent_weights(net) if weights is None else weights
    G = gradient_operator(net)
    return -(G.T @ sp.diags(w) @ G).tocsr()


def divergence_of_edges(net: FaceEdgeNet, form, weights=None) -> np.ndarray:
    """Cotangent-weighted sum of outbound edge values at each vertex."""
    w = cotangent_weights(net) if weights is None else weights
    form = np.asarray(form, dtype=float)
    G = gradient_operator(net)
    wf = w[:, None] * form if form.ndim == 2 else w * form
    return -(G.T @ wf)


def integrate_edges(net: FaceEdgeNet, form, weights=None) -> np.ndarray:
    """Solve ``Delta f = div e`` for vertex positions; translation fixed by zero mean.

    Exact forms are recovered exactly; otherwise the result is the
    cotangent-weighted least-squares fit, which drops harmonic and co-exact parts.
    """
    form = np.asarray(form, dtype=float)
    w = cotangent_weights(net) if weights is None else weights
    L = cotangent_laplacian(net, w)
    rhs = divergence_of_edges(net, form, w)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    # pin vertex 0 (the kernel is the constants), then recentre
    Lr = L[1:, 1:].tocsc()
    try:
        lu = spla.splu(Lr)
        sol = lu.solve(np.ascontiguousarray(rhs[1:]))
    except RuntimeError as exc:
        raise IntegrationError(f"Poisson solve failed: {exc}") from exc
    f = np.vstack([np.zeros((1, rhs.shape[1])), sol])
    res = np.abs(L @ f - rhs).max() / max(np.abs(rhs).max(), 1e-300)
    if not np.isfinite(f).all() or res > 1e-6:
        raise IntegrationError(f"Poisson solve inaccurate (relative residual {res:.3e})")
    f -= f.mean(axis=0)
    return f[:, 0] if squeeze else f


def integrability_residual(net: FaceEdgeNet, form, positions) -> float:
    """``max |e~ - grad f~| / mean |e~|`` over edges."""
    form = np.asarray(form, dtype=float)
    if form.shape[-1] == 4 and form.shape[0] == net.n_half_edges:
        form = edge_form(net, form)
    g = gradient_operator(net) @ np.asarray(positions, dtype=float)
    scale = np.linalg.norm(form, axis=1).mean()
    return float(np.linalg.norm(form - g, axis=1).max() / scale)


def normal_discrepancy(net: FaceEdgeNet, normals) -> float:
    """Largest angle (radians) between given normals and the geometric ones."""
    c = np.clip(np.einsum("ij,ij->i", net.face_normals, normals), -1.0, 1.0)
    return float(np.arccos(c).max())


def rebuild_net(source: FaceEdgeNet, positions, transformed_normals=None, *, tol: float = 1e-6) -> FaceEdgeNet:
    """New net on the source combinatorics with geometric normals of ``positions``.

    The transformed normals are only used for a diagnostic log line.
    """
    new = FaceEdgeNet(positions, source.faces)
    r = new.edge_constraint_residual()
    if r.max() > tol:
        h = int(np.argmax(r))
        raise MeshConstructionError("edge constraint", f"face pair ({h // 3}, {new.half_neighbor[h]})", f"residual {r[h]:.3g}")
    if transformed_normals is not None:
        logger.debug("normal discrepancy after integration: %.3e rad", normal_discrepancy(new, transformed_normals))
    return new


def apply_spin(net: FaceEdgeNet, phi, *, metric: str = "source"):
    """Transform, integrate and rebuild in one go.

    Returns ``(new_net, info)`` where ``info`` holds the integrability
    residual and normal discrepancy.
    """
    Et, nt = transform_hyperedges(net, phi)
    form = edge_form(net, Et)
    if metric == "source":
        f = integrate_edges(net, form)
    elif metric == "target":
        # metric of the transformed mesh: integrate once with source weights, then redo
        f0 = integrate_edges(net, form)
        f = integrate_edges(net, form, cotangent_weights(FaceEdgeNet(f0, net.faces, validate=False)))
    else:
        raise ValueError("metric must be 'source' or 'target'")
    new = rebuild_net(net, f, nt)
    info = {
        "integrability_residual": integrability_residual(net, form, f),
        "normal_discrepancy": normal_discrepancy(new, nt),
    }
    return new, info
