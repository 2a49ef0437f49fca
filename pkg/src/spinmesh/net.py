"""Face edge-constraint nets built from closed triangle meshes.

The combinatorics are stored as half-edges.  Half-edge ``h = 3*i + k`` walks
from vertex ``faces[i, k]`` to ``faces[i, (k+1) % 3]``; its twin lives in the
neighbouring face and walks the other way, so the edge vector of the twin is
the negated edge vector.  A directed face pair ``(i, j)`` in the notation of
the framework is the half-edge of face ``i`` whose twin belongs to face ``j``.
"""
from __future__ import annotations

import logging
from functools import cached_property

import numpy as np

from . import quaternion as quat

logger = logging.getLogger(__name__)

#: dihedral angles closer than this to +-pi are treated as folds
FOLD_MARGIN = 1e-6


class MeshConstructionError(ValueError):
    """Invalid input combinatorics or geometry.

    ``kind`` is one of ``"boundary edge"``, ``"non-manifold edge"``,
    ``"inconsistent winding"``, ``"degenerate face"``, ``"non-triangular face"``,
    ``"invalid index"``, ``"edge constraint"``.  ``simplex`` names the offender.
    """

    def __init__(self, kind: str, simplex, detail: str = ""):
        self.kind = kind
        self.simplex = simplex
        msg = f"{kind}: {simplex}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SingularFoldError(ArithmeticError):
    """An edge is folded onto itself (dihedral angle near +-pi)."""


class FaceEdgeNet:
    """Closed, orientable triangle net with per-face unit normals.

    Parameters
    ----------
    positions : (nV, 3) array
        Vertex positions.
    faces : (nF, 3) int array
        Counter-clockwise vertex triples (outward normals).
    normals : (nF, 3) array, optional
        Face normals.  Defaults to geometric normals, which always satisfy the
        edge constraint.  Custom normals are validated against it.

    Instances are treated as immutable; derived quantities are cached.
    """

    def __init__(self, positions, faces, normals=None, *, validate=True):
        self.positions = np.array(positions, dtype=float)
        self.faces = np.array(faces, dtype=np.int64)
        self.positions.setflags(write=False)
        self.faces.setflags(write=False)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (nV, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshConstructionError("non-triangular face", "faces", f"shape {self.faces.shape}")
        self._build_halfedges()
        if validate:
            self._check_geometry()
        if normals is not None:
            n = np.array(normals, dtype=float)
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            n.setflags(write=False)
            self.__dict__["face_normals"] = n
            if validate:
                self._check_edge_constraint()

    # -- combinatorics -------------------------------------------------------

    def _build_halfedges(self):
        F = self.faces
        nF = len(F)
        nV = len(self.positions)
        if nF == 0:
            raise MeshConstructionError("degenerate face", "mesh", "no faces")
        if F.min() < 0 or F.max() >= nV:
            bad = int(np.nonzero((F < 0) | (F >= nV))[0][0])
            raise MeshConstructionError("invalid index", f"face {bad}")
        rep = (F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2]) | (F[:, 2] == F[:, 0])
        if rep.any():
            raise MeshConstructionError("degenerate face", f"face {int(np.nonzero(rep)[0][0])}", "repeated vertex")

        src = F.reshape(-1)
        dst = np.roll(F, -1, axis=1).reshape(-1)
        nH = len(src)

        # undirected multiplicity
        lo = np.minimum(src, dst)
        hi = np.maximum(src, dst)
        ukey = lo * nV + hi
        _, uinv, ucount = np.unique(ukey, return_inverse=True, return_counts=True)
        per_half = ucount[uinv]
        if (per_half == 1).any():
            h = int(np.nonzero(per_half == 1)[0][0])
            raise MeshConstructionError("boundary edge", f"edge ({src[h]}, {dst[h]})", f"face {h // 3}")
        if (per_half > 2).any():
            h = int(np.nonzero(per_half > 2)[0][0])
            raise MeshConstructionError("non-manifold edge", f"edge ({src[h]}, {dst[h]})", f"{per_half[h]} faces")

        dkey = src * nV + dst
        order = np.argsort(dkey, kind="stable")
        sk = dkey[order]
        dup = sk[1:] == sk[:-1]
        if dup.any():
            h = int(order[np.nonzero(dup)[0][0]])
            raise MeshConstructionError("inconsistent winding", f"edge ({src[h]}, {dst[h]})", f"face {h // 3}")

        rkey = dst * nV + src
        pos = np.searchsorted(sk, rkey)
        pos = np.minimum(pos, nH - 1)
        found = sk[pos] == rkey
        if not found.all():
            h = int(np.nonzero(~found)[0][0])
            raise MeshConstructionError("inconsistent winding", f"edge ({src[h]}, {dst[h]})", f"face {h // 3}")
        twin = order[pos]

        self.half_src = src
        self.half_dst = dst
        self.half_twin = twin
        self.half_face = np.repeat(np.arange(nF), 3)
        self.half_neighbor = twin // 3
        # canonical undirected edges: the half-edge with the smaller index
        canon = np.nonzero(np.arange(nH) < twin)[0]
        self.edge_half = canon
        edge_of_half = np.empty(nH, dtype=np.int64)
        edge_of_half[canon] = np.arange(len(canon))
        edge_of_half[twin[canon]] = np.arange(len(canon))
        self.half_edge_index = edge_of_half
        self.half_edge_sign = np.where(np.arange(nH) < twin, 1.0, -1.0)
        for arr in (src, dst, twin, self.half_face, self.half_neighbor, canon, edge_of_half, self.half_edge_sign):
            arr.setflags(write=False)

    def _check_geometry(self):
        A = self.face_areas
        scale = np.mean(np.linalg.norm(self.edge_vectors, axis=1)) ** 2
        bad = A <= 1e-14 * scale
        if bad.any():
            raise MeshConstructionError("degenerate face", f"face {int(np.nonzero(bad)[0][0])}", "zero area")

    def _check_edge_constraint(self):
        r = self.edge_constraint_residual()
        if r.max() > 1e-9:
            h = int(np.argmax(r))
            raise MeshConstructionError("edge constraint", f"face pair ({h // 3}, {self.half_neighbor[h]})", f"residual {r[h]:.3g}")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_half_edges(self) -> int:
        return len(self.half_src)

    @property
    def n_edges(self) -> int:
        return len(self.edge_half)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic) // 2

    def half_edge(self, i: int, j: int) -> int:
        """Half-edge of face ``i`` shared with face ``j``."""
        for k in range(3):
            h = 3 * i + k
            if self.half_neighbor[h] == j:
                return h
        raise KeyError(f"faces {i} and {j} are not adjacent")

    # -- geometry ------------------------------------------------------------

    @cached_property
    def edge_vectors(self) -> np.ndarray:
        """Edge vector ``e_ij`` of every half-edge, shape (nH, 3)."""
        e = self.positions[self.half_dst] - self.positions[self.half_src]
        e.setflags(write=False)
        return e

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors, axis=1)

    @cached_property
    def _area_vectors(self) -> np.ndarray:
        P = self.positions[self.faces]
        return 0.5 * np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        a = np.linalg.norm(self._area_vectors, axis=1)
        a.setflags(write=False)
        return a

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self._area_vectors / self.face_areas[:, None]
        n.setflags(write=False)
        return n

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.positions[self.faces].mean(axis=1)

    @cached_property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        """Barycentric cell areas ``A_v``."""
        return np.bincount(self.faces.reshape(-1), np.repeat(self.face_areas / 3.0, 3), minlength=self.n_vertices)

    @cached_property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.positions.max(0) - self.positions.min(0)))

    def edge_constraint_residual(self) -> np.ndarray:
        """``|<n_i + n_j, e_ij>| / |e_ij|`` per half-edge."""
        n = self.face_normals
        s = n[self.half_face] + n[self.half_neighbor]
        return np.abs(np.einsum("ij,ij->i", s, self.edge_vectors)) / self.edge_lengths

    @cached_property
    def dihedral_angles(self) -> np.ndarray:
        """Signed bending angle per half-edge, positive on convex edges."""
        n = self.face_normals
        ni = n[self.half_face]
        nj = n[self.half_neighbor]
        u = self.edge_vectors / self.edge_lengths[:, None]
        s = np.einsum("ij,ij->i", np.cross(ni, nj), u)
        c = np.einsum("ij,ij->i", ni, nj)
        th = np.arctan2(s, c)
        th.setflags(write=False)
        return th

    @cached_property
    def edge_curvatures(self) -> np.ndarray:
        """Integrated mean curvature ``H_ij = |e_ij| tan(theta_ij / 2)`` per half-edge."""
        th = self.dihedral_angles
        fold = np.abs(th) > np.pi - FOLD_MARGIN
        if fold.any():
            h = int(np.nonzero(fold)[0][0])
            raise SingularFoldError(f"edge between faces {h // 3} and {self.half_neighbor[h]} is folded (theta={th[h]:.6f})")
        H = self.edge_lengths * np.tan(0.5 * th)
        H.setflags(write=False)
        return H

    @cached_property
    def integrated_mean_curvature(self) -> np.ndarray:
        """``H_i``: sum of the edge curvatures of each face."""
        return self.edge_curvatures.reshape(-1, 3).sum(axis=1)

    @cached_property
    def mean_curvature(self) -> np.ndarray:
        """Curvature density ``h_i = H_i / A_i``."""
        return self.integrated_mean_curvature / self.face_areas

    @cached_property
    def hyperedges(self) -> np.ndarray:
        """Hyperedge quaternions ``E_ij = H_ij + e_ij`` per half-edge, shape (nH, 4)."""
        E = np.empty((self.n_half_edges, 4))
        E[:, 0] = self.edge_curvatures
        E[:, 1:] = self.edge_vectors
        E.setflags(write=False)
        return E

    # -- derived nets ----------------------------------------------------------

    def with_positions(self, positions) -> "FaceEdgeNet":
        """Same combinatorics, new positions (geometric normals)."""
        return FaceEdgeNet(positions, self.faces)

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "FaceEdgeNet":
        P = self.positions * scale
        if rotation is not None:
            P = P @ np.asarray(rotation).T
        if translation is not None:
            P = P + np.asarray(translation)
        return FaceEdgeNet(P, self.faces)

    def __repr__(self) -> str:
        return f"FaceEdgeNet(nV={self.n_vertices}, nF={self.n_faces}, genus={self.genus})"


def build_net(positions, faces) -> FaceEdgeNet:
    """Validate a closed oriented triangulation and wrap it as a net."""
    return FaceEdgeNet(positions, faces)


def dihedral_angle(net: FaceEdgeNet, i: int, j: int) -> float:
    return float(net.dihedral_angles[net.half_edge(i, j)])


def integrated_edge_curvature(net: FaceEdgeNet, i: int, j: int) -> float:
    h = net.half_edge(i, j)
    th = net.dihedral_angles[h]
    if abs(th) > np.pi - FOLD_MARGIN:
        raise SingularFoldError(f"edge between faces {i} and {j} is folded")
    return float(net.edge_lengths[h] * np.tan(0.5 * th))


def face_mean_curvature(net: FaceEdgeNet):
    """Return ``(H, h)``: integrated and density mean curvature per face."""
    return net.integrated_mean_curvature.copy(), net.mean_curvature.copy()


def hyperedges(net: FaceEdgeNet) -> np.ndarray:
    return net.hyperedges


def hyperedge_polar_identity(net: FaceEdgeNet, h=None) -> float:
    """Max residual of the hyperedge polar form and its transport property.

    Checks ``E = |e| / cos(theta/2) * exp((pi - theta)/2 * u)``, that
    ``E^-1 (-n_i) E == n_j`` and that conjugation by ``E^-1`` maps the in-plane
    direction of face ``i`` orthogonal to the edge into the plane of face ``j``.
    ``h`` selects half-edges (default: all).
    """
    idx = np.arange(net.n_half_edges) if h is None else np.atleast_1d(h)
    E = net.hyperedges[idx]
    th = net.dihedral_angles[idx]
    L = net.edge_lengths[idx]
    u = net.edge_vectors[idx] / L[:, None]
    half = 0.5 * (np.pi - th)
    polar = np.empty_like(E)
    polar[:, 0] = np.cos(half)
    polar[:, 1:] = np.sin(half)[:, None] * u
    polar *= (L / np.cos(0.5 * th))[:, None]
    scale = np.abs(E).max(axis=1)
    r_polar = np.abs(polar - E).max(axis=1) / scale

    ni = net.face_normals[net.half_face[idx]]
    nj = net.face_normals[net.half_neighbor[idx]]
    sent = quat.qconjugate_by(E, quat.from_vector(-ni))
    r_normal = np.abs(sent[:, 1:] - nj).max(axis=1)

    inplane = np.cross(u, ni)
    moved = quat.qconjugate_by(E, quat.from_vector(inplane))[:, 1:]
    r_plane = np.abs(np.einsum("ij,ij->i", moved, nj))

    return float(max(r_polar.max(), r_normal.max(), r_plane.max()))


def offset_face_areas(net: FaceEdgeNet, t: float) -> np.ndarray:
    """Exact area of each face after offsetting all face planes by ``t``.

    Each face polygon is bounded by the intersections of its offset plane with
    the offset planes of its neighbours.  Within the face plane, the line of
    edge ``ij`` moves outward by ``t * tan(theta_ij / 2)``.
    """
    P = net.positions[net.faces]
    n = net.face_normals
    e = net.edge_vectors.reshape(-1, 3, 3)
    L = net.edge_lengths.reshape(-1, 3)
    d = t * np.tan(0.5 * net.dihedral_angles).reshape(-1, 3)
    u1 = e[:, 0] / L[:, :1]
    u2 = np.cross(n, u1)
    # 2D coordinates of the vertices and outward edge normals
    rel = P - P[:, :1]
    p2 = np.stack([np.einsum("fkj,fj->fk", rel, u1), np.einsum("fkj,fj->fk", rel, u2)], axis=-1)
    m3 = np.cross(e, n[:, None, :]) / L[..., None]
    m2 = np.stack([np.einsum("fkj,fj->fk", m3, u1), np.einsum("fkj,fj->fk", m3, u2)], axis=-1)
    c = np.einsum("fkj,fkj->fk", m2, p2) + d
    new = np.empty_like(p2)
    for k in range(3):
        km = (k - 1) % 3
        M = np.stack([m2[:, km], m2[:, k]], axis=1)
        rhs = np.stack([c[:, km], c[:, k]], axis=1)
        new[:, k] = np.linalg.solve(M, rhs[..., None])[..., 0]
    a = new[:, 1] - new[:, 0]
    b = new[:, 2] - new[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def steiner_offset_check(net: FaceEdgeNet, t: float) -> np.ndarray:
    """Relative deviation ``|A_i(t) - A_i (1 + h_i t)| / A_i`` per face."""
    A = net.face_areas
    At = offset_face_areas(net, t)
    return np.abs(At - A * (1.0 + net.mean_curvature * t)) / A
