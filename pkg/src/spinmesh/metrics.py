"""Deformation quality measures and aligned reconstruction error."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .net import FaceEdgeNet

logger = logging.getLogger(__name__)


def _positions(x):
    return x.positions if isinstance(x, FaceEdgeNet) else np.asarray(x, dtype=float)


def _check_same(src: FaceEdgeNet, dst: FaceEdgeNet):
    if src.faces.shape != dst.faces.shape or not np.array_equal(src.faces, dst.faces):
        raise ValueError("meshes must share combinatorics")


def _frames(P):
    """Edge-aligned orthonormal in-plane frame and 2D edge coordinates per triangle."""
    u = P[:, 1] - P[:, 0]
    v = P[:, 2] - P[:, 0]
    n = np.cross(u, v)
    nn = np.linalg.norm(n, axis=1)
    lu = np.linalg.norm(u, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        e1 = u / lu[:, None]
        e2 = np.cross(n / nn[:, None], e1)
    M = np.empty((len(P), 2, 2))
    M[:, 0, 0] = lu
    M[:, 1, 0] = 0.0
    M[:, 0, 1] = np.einsum("ij,ij->i", v, e1)
    M[:, 1, 1] = np.einsum("ij,ij->i", v, e2)
    return M, nn


def conformality_factor(src, dst) -> np.ndarray:
    """Per-face ratio of the singular values of the piecewise-linear Jacobian (``>= 1``).

    Degenerate source or target triangles give ``inf`` (logged).
    """
    _check_same(src, dst)
    S, ns = _frames(src.positions[src.faces])
    T, nt = _frames(dst.positions[dst.faces])
    tiny = 1e-14 * max(src.bbox_diagonal, dst.bbox_diagonal) ** 2
    bad = (ns <= tiny) | (nt <= tiny) | ~np.isfinite(ns) | ~np.isfinite(nt)
    Q = np.full(len(S), np.inf)
    ok = ~bad
    if ok.any():
        J = T[ok] @ np.linalg.inv(S[ok])
        sv = np.linalg.svd(J, compute_uv=False)
        Q[ok] = sv[:, 0] / sv[:, 1]
    if bad.any():
        logger.warning("%d degenerate faces: conformality factor set to inf", int(bad.sum()))
    return Q


def area_distortion(src, dst) -> np.ndarray:
    """``log(A~_i / A_i) - log(A~_tot / A_tot)``; zero-area faces give ``+-inf``."""
    _check_same(src, dst)
    A = src.face_areas
    At = dst.face_areas
    with np.errstate(divide="ignore"):
        return np.log(At / A) - np.log(At.sum() / A.sum())


def willmore_energy(net: FaceEdgeNet) -> float:
    """``sum_i h_i^2 A_i``."""
    return float(np.sum(net.mean_curvature**2 * net.face_areas))


class Similarity(NamedTuple):
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    aligned: object  # FaceEdgeNet when given nets, else positions
    residual: float  # RMS vertex residual after alignment


def align_similarity(moving, fixed, *, allow_scale: bool = True) -> Similarity:
    """Least-squares similarity ``x -> s R x + t`` taking ``moving`` onto ``fixed``.

    Vertices correspond by index.  Reflections are excluded (``det R = +1``).
    """
    X = _positions(moving)
    Y = _positions(fixed)
    if X.shape != Y.shape:
        raise ValueError("point sets must correspond one-to-one")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var = np.sum(Xc**2) / len(X)
    Sig = Yc.T @ Xc / len(X)
    U, d, Vt = np.linalg.svd(Sig)
    if var <= 0 or d[1] <= 1e-12 * max(d[0], 1e-300):
        raise ValueError("degenerate covariance: points are (nearly) collinear or coincident")
    Sfix = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        Sfix[2, 2] = -1.0
    R = U @ Sfix @ Vt
    s = float(np.trace(np.diag(d) @ Sfix) / var) if allow_scale else 1.0
    t = my - s * R @ mx
    Z = s * X @ R.T + t
    res = float(np.sqrt(np.mean(np.sum((Z - Y) ** 2, axis=1))))
    aligned = moving.with_positions(Z) if isinstance(moving, FaceEdgeNet) else Z
    return Similarity(R, t, s, aligned, res)


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest points to ``p`` on triangles ``(a, b, c)``; all arrays ``(n, 3)``."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    out = np.empty_like(p)
    done = np.zeros(len(p), bool)

    def put(mask, val):
        m = mask & ~done
        out[m] = val[m] if np.ndim(val) == 2 else val
        done[m] = True

    with np.errstate(invalid="ignore", divide="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        den = 1.0 / (va + vb + vc)
        v = vb * den
        w = vc * den
        put(np.ones(len(p), bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def point_to_surface_distances(points, reference: FaceEdgeNet) -> np.ndarray:
    """Exact distance from each point to the nearest reference triangle.

    A k-d tree over triangle centroids bounds the search: the nearest centroid
    gives an upper bound ``u``; only triangles with centroid within
    ``u + r_max`` (``r_max`` the largest centroid-to-vertex radius) can win.
    """
    P = _positions(points)
    T = reference.positions[reference.faces]
    cen = T.mean(axis=1)
    rmax = float(np.linalg.norm(T - cen[:, None], axis=2).max())
    tree = cKDTree(cen)
    _, near = tree.query(P)
    ub = np.linalg.norm(closest_points_on_triangles(P, T[near, 0], T[near, 1], T[near, 2]) - P, axis=1)
    cand = tree.query_ball_point(P, ub + rmax + 1e-12)
    qi = np.repeat(np.arange(len(P)), [len(c) for c in cand])
    ti = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand]) if len(P) else np.zeros(0, np.int64)
    d = np.linalg.norm(closest_points_on_triangles(P[qi], T[ti, 0], T[ti, 1], T[ti, 2]) - P[qi], axis=1)
    out = np.full(len(P), np.inf)
    np.minimum.at(out, qi, d)
    return np.minimum(out, ub)


def point_to_surface_error(query, reference: FaceEdgeNet):
    """``(max, mean)`` vertex-to-surface distance; the mean is weighted by vertex areas."""
    d = point_to_surface_distances(query, reference)
    if isinstance(query, FaceEdgeNet):
        w = query.vertex_areas
        mean = float(np.sum(w * d) / np.sum(w))
    else:
        mean = float(d.mean())
    return float(d.max()), mean


def summarize(values, trim: float = 1e-3) -> dict:
    """Max, mean, and max after discarding the top ``trim`` fraction."""
    v = np.asarray(values, dtype=float)
    a = np.abs(v)
    keep = max(1, int(np.floor(len(a) * (1.0 - trim))))
    trimmed = np.sort(a)[:keep]
    fin = np.isfinite(a)
    return {
        "max": float(a.max()),
        "max_trimmed": float(trimmed.max()),
        "mean": float(a[fin].mean()) if fin.any() else float("inf"),
        "std": float(a[fin].std()) if fin.any() else float("inf"),
        "n_infinite": int((~fin).sum()),
    }


@dataclass
class DeformationReport:
    Q: np.ndarray = field(repr=False)
    eps_s: np.ndarray = field(repr=False)
    willmore: float
    closedness: float | None = None
    integrability: float | None = None

    @classmethod
    def from_nets(cls, src: FaceEdgeNet, dst: FaceEdgeNet, **extra) -> "DeformationReport":
        return cls(conformality_factor(src, dst), area_distortion(src, dst), willmore_energy(dst), **extra)

    @property
    def Q_stats(self) -> dict:
        return summarize(self.Q)

    @property
    def eps_s_stats(self) -> dict:
        return summarize(self.eps_s)

    def to_dict(self) -> dict:
        return {
            "Q": self.Q_stats,
            "eps_s": self.eps_s_stats,
            "willmore": self.willmore,
            "closedness": self.closedness,
            "integrability": self.integrability,
        }
