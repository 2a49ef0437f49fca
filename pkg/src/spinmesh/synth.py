"""Deterministic synthetic test shapes.

Every generator returns ``(positions, faces)`` with outward counter-clockwise
triangles.  Randomised shapes draw from ``numpy.random.default_rng(seed)``.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

SHAPES = ("icosphere", "bumpy_sphere", "ellipsoid", "capsule_bent", "torus", "genus2", "icosahedron", "tetrahedron", "cube")


def _orient_outward(V, F):
    F = np.array(F, dtype=np.int64)
    c = V.mean(axis=0)
    P = V[F]
    n = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    flip = np.einsum("ij,ij->i", n, P.mean(axis=1) - c) < 0
    F[flip] = F[flip][:, ::-1]
    return F


def _hull(V):
    V = np.asarray(V, dtype=float)
    hull = ConvexHull(V)
    F = _orient_outward(V, hull.simplices)
    # canonical face order for byte-stable output
    F = np.array([np.roll(f, -int(np.argmin(f))) for f in F])
    return V, F[np.lexsort(F.T[::-1])]


def tetrahedron():
    V = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / np.sqrt(3.0)
    return _hull(V)


def cube():
    V = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x = 0, x = 1
        (0, 4, 5, 1), (2, 3, 7, 6),  # y = 0, y = 1
        (0, 2, 6, 4), (1, 5, 7, 3),  # z = 0, z = 1
    ]
    F = []
    for a, b, c, d in quads:
        F += [(a, b, c), (a, c, d)]
    return V, _orient_outward(V, F)


def icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    V = []
    for a in (-1.0, 1.0):
        for b in (-p, p):
            V += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    V = np.array(V)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return _hull(V)


def icosphere(subdiv: int | None = 3, radius: float = 1.0, frequency: int | None = None):
    """Geodesic sphere: each icosahedron face split into ``frequency**2`` triangles.

    ``subdiv`` gives ``frequency = 2**subdiv`` (20 * 4**subdiv faces).
    """
    if frequency is None:
        if subdiv is None or subdiv < 0:
            raise ValueError("subdiv must be >= 0")
        frequency = 2 ** int(subdiv)
    n = int(frequency)
    if n < 1:
        raise ValueError("frequency must be >= 1")
    V0, F0 = icosahedron()
    pts = []
    tris = []
    for a, b, c in F0:
        A, B, C = V0[a], V0[b], V0[c]
        idx = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                idx[i, j] = len(pts)
                pts.append(A + (B - A) * (i / n) + (C - A) * (j / n))
        for i in range(n):
            for j in range(n - i):
                tris.append((idx[i, j], idx[i + 1, j], idx[i, j + 1]))
                if i + j + 2 <= n:
                    tris.append((idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
    pts = np.array(pts)
    key = np.round(pts * 1e9).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    V = pts[first[order]]
    F = remap[inv[np.array(tris)]]
    V = radius * V / np.linalg.norm(V, axis=1, keepdims=True)
    return V, F


def ellipsoid(axes=(2.0, 1.0, 1.0), subdiv: int | None = None, frequency: int | None = 10):
    V, F = icosphere(subdiv, frequency=frequency)
    return V * np.asarray(axes, dtype=float), F


def bumpy_sphere(seed: int = 0, bumps: int = 12, amplitude: float = 0.7, width: float = 0.25,
                 subdiv: int | None = None, frequency: int | None = 10):
    """Unit sphere with Gaussian bumps of relative height ``amplitude``."""
    V, F = icosphere(subdiv, frequency=frequency)
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    signs = np.where(rng.random(bumps) < 0.75, 1.0, -0.6)
    g = np.exp(-(1.0 - V @ centers.T) / width**2)
    r = 1.0 + amplitude * (g * signs).sum(axis=1)
    return V * r[:, None], F


def capsule_bent(bend_angle: float = np.pi / 2, stretch: float = 1.0, sharpness: float = 1.5,
                 subdiv: int | None = None, frequency: int | None = 10):
    """Elongated capsule-like body whose axis is bent along a circular arc."""
    V, F = icosphere(subdiv, frequency=frequency)
    x, y, z = V.T
    zs = z + stretch * np.tanh(sharpness * z) / np.tanh(sharpness)
    half = 1.0 + stretch
    if abs(bend_angle) < 1e-12:
        return np.stack([x, y, zs], axis=1), F
    Rb = half / (0.5 * bend_angle)
    if Rb <= 1.0:
        raise ValueError("bend too tight for the capsule radius")
    a = zs / Rb
    P = np.stack([Rb - (Rb - x) * np.cos(a), y, (Rb - x) * np.sin(a)], axis=1)
    return P, F


def _torus_grid(nu, nv, R, r):
    u = 2 * np.pi * (np.arange(nu) + 0.5) / nu
    v = 2 * np.pi * (np.arange(nv) + 0.5) / nv
    U, W = np.meshgrid(u, v, indexing="ij")
    P = np.stack([(R + r * np.cos(W)) * np.cos(U), (R + r * np.cos(W)) * np.sin(U), r * np.sin(W)], axis=-1)
    ids = np.arange(nu * nv).reshape(nu, nv)
    return P.reshape(-1, 3), ids


def _torus_quads(ids):
    nu, nv = ids.shape
    quads = []
    for i in range(nu):
        for j in range(nv):
            quads.append((ids[i, j], ids[(i + 1) % nu, j], ids[(i + 1) % nu, (j + 1) % nv], ids[i, (j + 1) % nv]))
    return quads


def _split(quads):
    F = []
    for a, b, c, d in quads:
        F += [(a, b, c), (a, c, d)]
    return np.array(F, dtype=np.int64)


def torus(major: int = 32, minor: int = 16, R: float = 1.0, r: float = 0.4):
    """Torus of revolution about z; ``major`` x ``minor`` quads, each split in two."""
    if major < 3 or minor < 3:
        raise ValueError("torus needs at least 3 segments each way")
    P, ids = _torus_grid(major, minor, R, r)
    return P, _split(_torus_quads(ids))


def genus2(major: int = 24, minor: int = 12, R: float = 1.0, r: float = 0.4, gap: float = 0.4):
    """Two tori joined by a short square tube between facing holes."""
    P1, ids = _torus_grid(major, minor, R, r)
    quads = _torus_quads(ids)
    hole = (major - 1) * minor + (minor - 1)  # cell straddling u = 0, v = 0
    hq = quads[hole]
    del quads[hole]
    shift = R + r + 0.5 * gap
    A = P1 - np.array([shift, 0.0, 0.0])
    B = P1 * np.array([-1.0, -1.0, 1.0]) + np.array([shift, 0.0, 0.0])
    n = len(P1)
    V = np.vstack([A, B])
    q2 = [tuple(x + n for x in q) for q in quads]
    # partner of a hole vertex: vertex of the other hole with the same (y, z)
    hole2 = [x + n for x in hq]
    partner = {}
    for a in hq:
        d = np.linalg.norm(V[hole2][:, 1:] - V[a][1:], axis=1)
        partner[a] = hole2[int(np.argmin(d))]
    tube = []
    for k in range(4):
        a, b = hq[k], hq[(k + 1) % 4]
        # the remaining faces walk the hole edge b -> a, so the tube walks a -> b
        tube.append((a, b, partner[b], partner[a]))
    F = _split(quads + q2 + tube)
    return V, F


def generate(shape: str, *, seed: int = 0, subdiv: int | None = None, frequency: int | None = None,
             axes=(2.0, 1.0, 1.0), amplitude: float = 0.7, bumps: int = 12, width: float = 0.25,
             bend_angle: float = np.pi / 2, major: int | None = None, minor: int | None = None,
             radius: float = 1.0):
    """Dispatch by shape name (CLI entry point)."""
    if shape == "icosphere":
        return icosphere(3 if subdiv is None and frequency is None else subdiv, radius=radius, frequency=frequency)
    if shape == "bumpy_sphere":
        return bumpy_sphere(seed=seed, bumps=bumps, amplitude=amplitude, width=width, subdiv=subdiv,
                            frequency=frequency if frequency or subdiv is not None else 10)
    if shape == "ellipsoid":
        return ellipsoid(axes, subdiv=subdiv, frequency=frequency if frequency or subdiv is not None else 10)
    if shape == "capsule_bent":
        return capsule_bent(bend_angle, subdiv=subdiv, frequency=frequency if frequency or subdiv is not None else 10)
    if shape == "torus":
        return torus(major or 32, minor or 16)
    if shape == "genus2":
        return genus2(major or 24, minor or 12)
    if shape == "icosahedron":
        V, F = icosahedron()
        return V * radius, F
    if shape == "tetrahedron":
        return tetrahedron()
    if shape == "cube":
        return cube()
    raise ValueError(f"unknown shape {shape!r}; expected one of {', '.join(SHAPES)}")
