"""Quaternion algebra.

Quaternions are stored in ``(w, x, y, z)`` order everywhere: ``w`` is the real
part and ``(x, y, z)`` the imaginary part, identified with a vector of R^3.

Two layers are provided.  :class:`Quaternion` is a small immutable value type
for scalar work and tests; the ``q*`` functions operate on arrays of shape
``(..., 4)`` and are what the mesh operators use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class QuaternionDomainError(ValueError):
    """Raised for operations undefined at the zero quaternion."""


# ---------------------------------------------------------------------------
# array layer


def qmul(a, b):
    """Hamilton product of quaternion arrays (broadcasting over leading axes)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnorm2(q):
    q = np.asarray(q, dtype=float)
    return np.einsum("...i,...i->...", q, q)


def qnorm(q):
    return np.sqrt(qnorm2(q))


def qinv(q):
    n2 = qnorm2(q)
    if np.any(n2 == 0.0):
        raise QuaternionDomainError("inverse of the zero quaternion")
    return qconj(q) / n2[..., None]


def from_vector(v):
    """Embed R^3 vectors as imaginary quaternions."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (4,))
    out[..., 1:] = v
    return out


def from_scalar(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape + (4,))
    out[..., 0] = s
    return out


def qsandwich(q, v):
    """``conj(q) * v * q``: rotation plus scaling by ``|q|^2``."""
    return qmul(qmul(qconj(q), v), q)


def qconjugate_by(q, v):
    """``q^-1 * v * q``: pure rotation, as used for face normals."""
    return qmul(qmul(qinv(q), v), q)


def left_matrices(q):
    """Real 4x4 matrices of left multiplication, shape ``(..., 4, 4)``.

    ``left_matrices(a) @ b == qmul(a, b)`` for coordinate vectors ``b``.
    """
    q = np.asarray(q, dtype=float)
    a, b, c, d = np.moveaxis(q, -1, 0)
    rows = [
        [a, -b, -c, -d],
        [b, a, -d, c],
        [c, d, a, -b],
        [d, -c, b, a],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def right_matrices(q):
    """Real 4x4 matrices of right multiplication: ``right_matrices(b) @ a == qmul(a, b)``."""
    q = np.asarray(q, dtype=float)
    a, b, c, d = np.moveaxis(q, -1, 0)
    rows = [
        [a, -b, -c, -d],
        [b, a, d, -c],
        [c, -d, a, b],
        [d, c, -b, a],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rotation_matrices(q):
    """3x3 matrix ``R`` with ``R @ v == Im(q^-1 v q)`` for unit or non-unit ``q``."""
    q = np.asarray(q, dtype=float)
    u = q / qnorm(q)[..., None]
    w, x, y, z = np.moveaxis(u, -1, 0)
    # q^-1 v q is the rotation by the conjugate quaternion
    x, y, z = -x, -y, -z
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


# ---------------------------------------------------------------------------
# scalar value type


@dataclass(frozen=True)
class Quaternion:
    w: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def from_array(cls, arr) -> "Quaternion":
        w, x, y, z = (float(t) for t in np.asarray(arr, dtype=float).reshape(4))
        return cls(w, x, y, z)

    @classmethod
    def vector(cls, v) -> "Quaternion":
        x, y, z = (float(t) for t in v)
        return cls(0.0, x, y, z)

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def real(self) -> float:
        return self.w

    @property
    def imag(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def conj(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def norm2(self) -> float:
        return self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z

    def __abs__(self) -> float:
        return math.sqrt(self.norm2())

    def inverse(self) -> "Quaternion":
        n2 = self.norm2()
        if n2 == 0.0:
            raise QuaternionDomainError("inverse of the zero quaternion")
        c = self.conj()
        return Quaternion(c.w / n2, c.x / n2, c.y / n2, c.z / n2)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return Quaternion.from_array(qmul(self.to_array(), other.to_array()))
        s = float(other)
        return Quaternion(self.w * s, self.x * s, self.y * s, self.z * s)

    def __rmul__(self, other):
        s = float(other)
        return Quaternion(self.w * s, self.x * s, self.y * s, self.z * s)

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w + other.w, self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w - other.w, self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def is_imaginary(self, tol: float = 0.0) -> bool:
        return abs(self.w) <= tol

    def isclose(self, other: "Quaternion", tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.to_array() - other.to_array())) <= tol)

    def __repr__(self) -> str:
        return f"Quaternion({self.w:g}, {self.x:g}, {self.y:g}, {self.z:g})"


ONE = Quaternion(1.0)
I = Quaternion(0.0, 1.0)
J = Quaternion(0.0, 0.0, 1.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def mul(a: Quaternion, b: Quaternion) -> Quaternion:
    return a * b


def sandwich(q: Quaternion, v: Quaternion) -> Quaternion:
    """Return ``conj(q) v q`` for imaginary ``v``.

    The result is imaginary, and ``|result| == |q|**2 * |v|``.
    """
    out = Quaternion.from_array(qsandwich(q.to_array(), v.to_array()))
    # the real part is zero in exact arithmetic
    return Quaternion(0.0, out.x, out.y, out.z)


def conjugate_by(q: Quaternion, v: Quaternion) -> Quaternion:
    """Return ``q^-1 v q`` (a rotation of ``v``; norm preserved)."""
    out = Quaternion.from_array(qconjugate_by(q.to_array(), v.to_array()))
    return Quaternion(0.0, out.x, out.y, out.z)


def to_real_matrix(q: Quaternion) -> np.ndarray:
    """4x4 real matrix of left multiplication by ``q``."""
    return left_matrices(q.to_array())


@dataclass(frozen=True)
class PolarForm:
    """``q = scale * (cos(angle) + sin(angle) * axis)`` with ``angle`` in [0, pi]."""

    scale: float
    angle: float
    axis: Quaternion

    def recompose(self) -> Quaternion:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return Quaternion(
            self.scale * c,
            self.scale * s * self.axis.x,
            self.scale * s * self.axis.y,
            self.scale * s * self.axis.z,
        )


def polar(q: Quaternion) -> PolarForm:
    """Polar decomposition; real quaternions get the fixed axis ``i``."""
    s = abs(q)
    if s == 0.0:
        raise QuaternionDomainError("polar form of the zero quaternion")
    im = q.imag
    nim = float(np.linalg.norm(im))
    angle = math.atan2(nim, q.w)
    if nim == 0.0:
        return PolarForm(s, angle, I)
    u = im / nim
    return PolarForm(s, angle, Quaternion.vector(u))
