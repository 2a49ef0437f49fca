"""Quadratic solve for a spin transformation with prescribed curvature half-density.

The unknown ``phi`` is an ``(nF, 4)`` quaternion face field, handled in real
``4 nF`` coordinates.  The objective is

    phi^T D_rho A^-1 D_rho phi + alpha (phi - 1)^T R (phi - 1)

with ``R = A + beta L_f`` applied per quaternion coordinate, optionally plus a
linearised area-distortion penalty (sparse block-diagonal part plus a rank <= 3
dense part, solved with the Woodbury identity) and a Newton projection onto
the closedness constraints ``Im(conj(phi_i) (D_X phi)_i) = 0``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quaternion as quat
from .dirac import assemble_intrinsic, assemble_shifted, gauge_fix
from .net import FaceEdgeNet

logger = logging.getLogger(__name__)

#: real unknowns above which the normal equations are solved iteratively
DIRECT_LIMIT = 60000


class SpinSolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class SolveConfig:
    """Parameters of the spin solve.

    ``alpha`` is made scale-free by multiplying with ``4 pi / total_area``;
    ``beta=None`` means ``beta_rel * mean face area``.  The area penalty is
    active when ``area_tolerance`` is finite; ``area_multipliers`` is a scalar
    or per-face array of ``lambda`` (default 1).
    """

    alpha: float = 1.0
    beta: float | None = None
    beta_rel: float = 0.1
    area_tolerance: float = math.inf
    area_multipliers: float | np.ndarray | None = None
    area_iterations: int = 3
    enforce_closedness: bool = False
    enforce_exactness: bool = False
    closedness_tolerance: float = 1e-9
    linear_solver_tolerance: float = 1e-10
    max_iterations: int = 30
    regularizer_areas: str = "current"  # or "source"

    def __post_init__(self):
        for name in ("alpha", "beta_rel", "area_tolerance"):
            v = getattr(self, name)
            if not (v >= 0) or (name != "area_tolerance" and not math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0")
        if self.beta is not None and not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        if self.closedness_tolerance <= 0 or self.linear_solver_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1 or self.area_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.regularizer_areas not in ("current", "source"):
            raise ValueError("regularizer_areas must be 'current' or 'source'")

    @property
    def area_penalty(self) -> bool:
        return math.isfinite(self.area_tolerance)

    def resolved(self, net: FaceEdgeNet) -> dict:
        d = asdict(self)
        lam = d.pop("area_multipliers")
        d["area_multipliers"] = None if lam is None else (float(lam) if np.ndim(lam) == 0 else "per-face")
        d["beta"] = self.beta_value(net)
        d["alpha_effective"] = self.alpha_value(net)
        if not math.isfinite(d["area_tolerance"]):
            d["area_tolerance"] = None
        return d

    def alpha_value(self, net: FaceEdgeNet) -> float:
        return self.alpha * 4.0 * np.pi / net.total_area

    def beta_value(self, net: FaceEdgeNet) -> float:
        return self.beta if self.beta is not None else self.beta_rel * net.total_area / net.n_faces


def prescribe_rho(h_bar, A_bar, A) -> np.ndarray:
    """``rho = h_bar * sqrt(A_bar / A)``."""
    A_bar = np.asarray(A_bar, dtype=float)
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0) or np.any(A_bar <= 0):
        raise ValueError("areas must be strictly positive")
    return np.asarray(h_bar, dtype=float) * np.sqrt(A_bar / A)


def face_laplacian(net: FaceEdgeNet) -> sp.csr_matrix:
    """Dual-graph Laplacian, weight ``|e_ij| / |c_i - c_j|``; PSD with constants in the kernel."""
    h = net.edge_half
    i = net.half_face[h]
    j = net.half_neighbor[h]
    c = net.face_centroids
    w = net.edge_lengths[h] / np.linalg.norm(c[i] - c[j], axis=1)
    nF = net.n_faces
    W = sp.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(nF, nF)).tocsr()
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def _blockwise(M) -> sp.csr_matrix:
    """Act with a face matrix on each quaternion coordinate."""
    return sp.kron(M, sp.identity(4), format="csr")


def regularizer_matrix(net: FaceEdgeNet, config: SolveConfig, areas=None) -> sp.csr_matrix:
    A = net.face_areas if areas is None else np.asarray(areas, dtype=float)
    R = sp.diags(A) + config.beta_value(net) * face_laplacian(net)
    return _blockwise(R)


def _ainv4(areas):
    return sp.diags(np.repeat(1.0 / np.asarray(areas, dtype=float), 4))


def spin_objective(net: FaceEdgeNet, hyperedges, rho, phi, config: SolveConfig | None = None,
                   reg_areas=None) -> float:
    config = config or SolveConfig()
    D = assemble_shifted(net, hyperedges, rho).matrix
    x = np.asarray(phi, dtype=float).reshape(-1)
    Dx = D @ x
    d = x - np.tile([1.0, 0.0, 0.0, 0.0], net.n_faces)
    R = regularizer_matrix(net, config, reg_areas)
    return float(Dx @ (_ainv4(net.face_areas) @ Dx) + config.alpha_value(net) * d @ (R @ d))


# ---------------------------------------------------------------- area penalty


def scale_change(areas, reference_areas) -> np.ndarray:
    """``s_i = log(A_i / A0_i) - log(<A> / <A0>)``."""
    A = np.asarray(areas, dtype=float)
    A0 = np.asarray(reference_areas, dtype=float)
    return np.log(A / A0) - np.log(A.mean() / A0.mean())


@dataclass
class AreaPenalty:
    """``1/2 x^T (B + U C U^T) x - F^T x + c0`` approximating ``sum a_i lambda_i s~_i^2 / 2``."""

    block: sp.csr_matrix  # 16 diag(Q_i Q_i^T), (4nF, 4nF)
    U: np.ndarray  # [L1 L2 L3], (4nF, 3)
    C: np.ndarray  # (3, 3)
    F: np.ndarray  # (4nF,)
    constant: float
    s: np.ndarray
    weights: np.ndarray  # a_i * lambda_i

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return self.block @ x + self.U @ (self.C @ (self.U.T @ x))

    def energy(self, phi) -> float:
        x = np.asarray(phi, dtype=float).reshape(-1)
        return float(0.5 * x @ self.matvec(x) - self.F @ x + self.constant)


def area_penalty_terms(net: FaceEdgeNet, phi, lam, current_areas, reference_areas=None) -> AreaPenalty:
    """Linearisation of ``sum a_i lambda_i s_i^2 / 2`` around ``phi``.

    ``current_areas`` are the areas reached with ``phi``; ``reference_areas``
    (default ``net.face_areas``) are the areas scale changes are measured from.
    The quadratic form is written directly in the new field ``phi'`` (no offset
    by ``phi`` is needed because ``s~`` is linear in ``phi'``).
    """
    phi = np.asarray(phi, dtype=float)
    n2 = quat.qnorm2(phi)
    if np.any(n2 == 0.0):
        raise quat.QuaternionDomainError("spin field vanishes on a face")
    nF = len(phi)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (nF,)).copy()
    if np.any(lam < 0):
        raise ValueError("area multipliers must be non-negative")
    Acur = np.asarray(current_areas, dtype=float)
    A0 = net.face_areas if reference_areas is None else np.asarray(reference_areas, dtype=float)
    s = scale_change(Acur, A0)
    a = Acur / Acur.sum()
    lam_mean = float(a @ lam)
    sl_mean = float(a @ (s * lam))
    u = phi / n2[:, None]  # phi_i / |phi_i|^2
    Qv = np.sqrt(a * lam)[:, None] * u
    L1 = (a * np.sqrt(lam_mean))[:, None] * u
    L2 = (a * lam)[:, None] * u
    L3 = a[:, None] * u
    F = 4.0 * ((sl_mean - s * lam) * a)[:, None] * u
    blocks = 16.0 * np.einsum("ia,ib->iab", Qv, Qv)
    r = np.arange(4)
    rows = (4 * np.arange(nF))[:, None, None] + r[None, :, None]
    cols = (4 * np.arange(nF))[:, None, None] + r[None, None, :]
    B = sp.coo_matrix((blocks.reshape(-1), (np.broadcast_to(rows, blocks.shape).reshape(-1),
                                            np.broadcast_to(cols, blocks.shape).reshape(-1))),
                      shape=(4 * nF, 4 * nF)).tocsr()
    U = np.stack([L1.reshape(-1), L2.reshape(-1), L3.reshape(-1)], axis=1)
    C = 16.0 * np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]])
    c0 = 0.5 * float(np.sum(a * lam * s**2))
    return AreaPenalty(B, U, C, F.reshape(-1), c0, s, a * lam)


def direct_area_penalty(net: FaceEdgeNet, phi, lam, base_areas=None, reference_areas=None,
                        weights=None) -> float:
    """``sum a_i lambda_i s_i^2 / 2`` with areas ``A_base |phi|^4`` (finite-difference oracle).

    ``weights`` freezes the normalised areas ``a`` (as the linearisation does);
    by default they follow ``phi``.
    """
    Ab = net.face_areas if base_areas is None else np.asarray(base_areas, dtype=float)
    A0 = net.face_areas if reference_areas is None else np.asarray(reference_areas, dtype=float)
    Acur = Ab * quat.qnorm2(np.asarray(phi, dtype=float)) ** 2
    s = scale_change(Acur, A0)
    a = Acur / Acur.sum() if weights is None else np.asarray(weights, dtype=float)
    return 0.5 * float(np.sum(a * np.broadcast_to(lam, s.shape) * s**2))


# ---------------------------------------------------------------- linear algebra


class _SparseSolver:
    """Factor once, solve many; iterative fallback for very large systems."""

    def __init__(self, S, tol=1e-10):
        self.S = S.tocsc()
        self.tol = tol
        n = S.shape[0]
        self.lu = None
        if n <= DIRECT_LIMIT:
            try:
                self.lu = spla.splu(self.S)
            except RuntimeError as exc:
                raise SpinSolverError(f"singular system: {exc}") from exc
        else:
            d = self.S.diagonal()
            self.M = sp.diags(1.0 / np.where(d > 0, d, 1.0))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.lu is not None:
            x = self.lu.solve(np.ascontiguousarray(b))
        else:
            cols = b[:, None] if b.ndim == 1 else b
            out = []
            for col in cols.T:
                x, info = spla.cg(self.S, col, rtol=self.tol, maxiter=20 * len(col), M=self.M)
                if info != 0:
                    raise SpinSolverError("conjugate-gradient solve did not converge")
                out.append(x)
            x = np.stack(out, axis=1)
            x = x[:, 0] if b.ndim == 1 else x
        if not np.all(np.isfinite(x)):
            raise SpinSolverError("singular system (non-finite solution)")
        return x


@dataclass
class LowRankSystem:
    """``S + U C U^T`` with sparse ``S`` and a small dense symmetric ``C``."""

    sparse: sp.spmatrix
    U: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    C: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def compact(self, rtol: float = 1e-12) -> "LowRankSystem":
        """Equivalent non-degenerate factor: QR of ``U`` then eigen-split of the core."""
        if self.U.size == 0:
            return self
        Qu, Ru = np.linalg.qr(self.U)
        core = Ru @ self.C @ Ru.T
        core = 0.5 * (core + core.T)
        ev, V = np.linalg.eigh(core)
        keep = np.abs(ev) > rtol * max(np.abs(ev).max(), 1e-300)
        return LowRankSystem(self.sparse, Qu @ V[:, keep], np.diag(ev[keep]))

    def matvec(self, x):
        y = self.sparse @ x
        if self.U.size:
            y = y + self.U @ (self.C @ (self.U.T @ x))
        return y

    def dense(self) -> np.ndarray:
        M = self.sparse.toarray()
        if self.U.size:
            M = M + self.U @ self.C @ self.U.T
        return M


def apply_penalized_system(system: LowRankSystem, rhs, *, tol: float = 1e-10, solver=None) -> np.ndarray:
    """Solve ``(S + U C U^T) x = rhs`` by the Woodbury identity.

    A singular capacitance matrix falls back to its pseudo-inverse (with a warning).
    """
    sys = system.compact()
    solver = solver or _SparseSolver(sys.sparse, tol)
    y = solver.solve(rhs)
    if sys.U.size == 0:
        return y
    Z = solver.solve(sys.U)
    Z = Z.reshape(len(rhs), -1)
    cap = np.diag(1.0 / np.diag(sys.C)) + sys.U.T @ Z
    try:
        cond = np.linalg.cond(cap)
        if not np.isfinite(cond) or cond > 1e13:
            raise np.linalg.LinAlgError("ill-conditioned capacitance")
        corr = np.linalg.solve(cap, sys.U.T @ y)
    except np.linalg.LinAlgError:
        warnings.warn("singular Woodbury capacitance; using pseudo-inverse", RuntimeWarning, stacklevel=2)
        corr = np.linalg.pinv(cap) @ (sys.U.T @ y)
    return y - Z @ corr


# ---------------------------------------------------------------- closedness


def closedness_values(net: FaceEdgeNet, hyperedges, phi, D=None) -> np.ndarray:
    """``Im(conj(phi_i) (D_X phi)_i)``, shape ``(nF, 3)``."""
    D = assemble_intrinsic(net, hyperedges) if D is None else D
    return quat.qmul(quat.qconj(phi), D.apply(phi))[:, 1:]


def _perimeter_scale(net, hyperedges, phi):
    """``|phi_i| * sum_j |E_ij phi_j|``: transformed perimeter-like face scale."""
    E = net.hyperedges if hyperedges is None else np.asarray(hyperedges, dtype=float)
    Ephi = quat.qnorm(E) * quat.qnorm(phi[net.half_neighbor])
    return quat.qnorm(phi) * Ephi.reshape(-1, 3).sum(axis=1)


def closedness_residual(net: FaceEdgeNet, hyperedges, phi) -> np.ndarray:
    """Per-face ``|Im(conj(phi_i) (D_X phi)_i)|`` relative to ``|phi_i| sum_j |E_ij phi_j|``.

    The denominator is the size of the transformed face's edge loop; it does
    not vanish on faces with zero curvature (where ``|D_X phi|`` does).
    """
    phi = np.asarray(phi, dtype=float)
    c = closedness_values(net, hyperedges, phi)
    return np.linalg.norm(c, axis=1) / (_perimeter_scale(net, hyperedges, phi) + 1e-300)


def closedness_jacobian(net: FaceEdgeNet, hyperedges, phi, D=None) -> sp.csr_matrix:
    """Jacobian of ``closedness_values`` in real coordinates, ``(3 nF, 4 nF)``."""
    D = assemble_intrinsic(net, hyperedges) if D is None else D
    nF = len(phi)
    X = D.apply(phi)
    conj_op = np.diag([1.0, -1.0, -1.0, -1.0])
    # Im(conj(d_i) X_i) + Im(conj(phi_i) (D d)_i)
    B1 = (quat.right_matrices(X) @ conj_op)[:, 1:, :]
    B2 = quat.left_matrices(quat.qconj(phi))[:, 1:, :]
    rows = (3 * np.arange(nF))[:, None, None] + np.arange(3)[None, :, None]
    cols = (4 * np.arange(nF))[:, None, None] + np.arange(4)[None, None, :]
    rows = np.broadcast_to(rows, B1.shape).reshape(-1)
    cols = np.broadcast_to(cols, B1.shape).reshape(-1)
    P1 = sp.coo_matrix((B1.reshape(-1), (rows, cols)), shape=(3 * nF, 4 * nF))
    P2 = sp.coo_matrix((B2.reshape(-1), (rows, cols)), shape=(3 * nF, 4 * nF))
    return (P1 + P2 @ D.matrix).tocsr()


def enforce_closedness(net: FaceEdgeNet, hyperedges, phi, *, tol: float = 1e-9, max_iterations: int = 30,
                       basis=None, exactness_tol: float | None = None):
    """Newton projection onto ``Im(conj(phi_i)(D_X phi)_i) = 0`` (minimum area-weighted change).

    With a harmonic ``basis`` the exactness constraints of the transformed edges
    are appended.  Returns the projected field (same gauge as the input).
    """
    from .topology import phi_exactness_constraints

    phi = np.asarray(phi, dtype=float).copy()
    D = assemble_intrinsic(net, hyperedges)
    a4inv = np.repeat(1.0 / net.face_areas, 4)
    use_exact = basis is not None and basis.b1 > 0
    ex_scale = None

    def measure(p):
        r = float(closedness_residual(net, hyperedges, p).max())
        if use_exact:
            g, _ = phi_exactness_constraints(net, basis, p, hyperedges)
            r = max(r, float(np.abs(g).max()) / ex_scale)
        return r

    if use_exact:
        # exactness residuals are compared against the size of the edge form
        ex_scale = float(np.sqrt(np.sum(basis.weights * net.edge_lengths[net.edge_half] ** 2)))
    best = measure(phi)
    it = 0
    while best > tol and it < max_iterations:
        it += 1
        c = closedness_values(net, hyperedges, phi, D).reshape(-1)
        J = closedness_jacobian(net, hyperedges, phi, D)
        if use_exact:
            g, Jg = phi_exactness_constraints(net, basis, phi, hyperedges)
            c = np.r_[c, g]
            J = sp.vstack([J, sp.csr_matrix(Jg)]).tocsr()
        M = (J @ sp.diags(a4inv) @ J.T).tocsc()
        mu = 1e-12 * M.diagonal().mean()
        try:
            y = spla.splu(M + mu * sp.identity(M.shape[0], format="csc")).solve(c)
        except RuntimeError as exc:
            raise SpinSolverError(f"closedness projection is singular: {exc}", best) from exc
        step = -(a4inv * (J.T @ y)).reshape(-1, 4)
        t = 1.0
        for _ in range(12):
            trial = phi + t * step
            r = measure(trial)
            if r < best or t < 1e-3:
                break
            t *= 0.5
        phi = trial
        best = r
        logger.debug("closedness Newton %d: residual %.3e (step %.3g)", it, best, t)
    if best > tol:
        raise SpinSolverError(f"closedness projection did not converge in {max_iterations} iterations", best)
    return phi


# ---------------------------------------------------------------- solve


@dataclass
class SpinSolution:
    phi: np.ndarray  # gauge fixed
    phi_raw: np.ndarray  # minimiser before gauge fixing
    objective: float
    closedness: float
    iterations: int
    area_scale_change: float | None = None
    rho: np.ndarray | None = None


def _check_phi(phi):
    mag = quat.qnorm(phi)
    if not np.all(np.isfinite(phi)):
        raise SpinSolverError("non-finite spin field")
    if np.any(mag < 1e-10 * mag.mean()):
        raise SpinSolverError("spin field (nearly) vanishes on a face", float(mag.min()))


def normalize_spin(phi, areas) -> np.ndarray:
    """Gauge fix (area-weighted mean real positive) and scale so ``sum A |phi|^4 = sum A``."""
    out = gauge_fix(phi, areas, normalize=None)
    A = np.asarray(areas, dtype=float)
    k = (A.sum() / np.sum(A * quat.qnorm2(out) ** 2)) ** 0.25
    return out * k


def solve_spin_detailed(net: FaceEdgeNet, hyperedges, rho, config: SolveConfig | None = None, *,
                        reference_areas=None, source_areas=None, projector=None, basis=None) -> SpinSolution:
    """Minimise the spin objective; see :func:`solve_spin`.

    ``reference_areas`` are the areas that scale changes are measured against
    (start of a flow; default the current areas).  ``source_areas`` feed the
    regulariser when ``config.regularizer_areas == "source"``.  ``projector``
    and ``basis`` cache the exactness machinery for higher genus.
    """
    config = config or SolveConfig()
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (net.n_faces,) or not np.all(np.isfinite(rho)):
        raise ValueError("rho must be a finite per-face array")
    E = net.hyperedges if hyperedges is None else np.asarray(hyperedges, dtype=float)
    A = net.face_areas
    if config.enforce_exactness and net.genus > 0:
        from . import topology

        if projector is None or basis is None:
            basis = topology.helmholtzian_nullspace(net)
            projector = topology.exactness_constraint_vectors(net, basis, E)
        h = net.mean_curvature
        rho = h + topology.project_rho_update(rho - h, projector)
    reg_areas = source_areas if (config.regularizer_areas == "source" and source_areas is not None) else A
    D = assemble_shifted(net, E, rho).matrix
    alpha = config.alpha_value(net)
    R = regularizer_matrix(net, config, reg_areas)
    N = (D @ _ainv4(A) @ D + alpha * R).tocsr()
    N = 0.5 * (N + N.T)
    one = np.tile([1.0, 0.0, 0.0, 0.0], net.n_faces)
    rhs0 = alpha * (R @ one)
    base = _SparseSolver(N, config.linear_solver_tolerance)
    x = base.solve(rhs0)
    iters = 1
    if config.area_penalty:
        lam = 1.0 if config.area_multipliers is None else config.area_multipliers
        A0 = A if reference_areas is None else np.asarray(reference_areas, dtype=float)
        for _ in range(config.area_iterations):
            phi_k = x.reshape(-1, 4)
            _check_phi(phi_k)
            Acur = A * quat.qnorm2(phi_k) ** 2
            pen = area_penalty_terms(net, phi_k, lam, Acur, A0)
            # gradient condition: (N + Qbar/2) x = alpha R 1 + F/2
            system = LowRankSystem(N + 0.5 * pen.block, pen.U, 0.5 * pen.C)
            x_new = apply_penalized_system(system, rhs0 + 0.5 * pen.F, tol=config.linear_solver_tolerance)
            iters += 1
            delta = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-300)
            x = x_new
            if delta < 1e-6:
                break
    phi_raw = x.reshape(-1, 4)
    _check_phi(phi_raw)
    obj = spin_objective(net, E, rho, phi_raw, config, reg_areas)
    phi = phi_raw
    if config.enforce_closedness:
        # with exactness requested too, the harmonic constraints join the projection
        phi = enforce_closedness(net, E, phi, tol=config.closedness_tolerance,
                                 max_iterations=config.max_iterations,
                                 basis=basis if config.enforce_exactness else None)
        _check_phi(phi)
    phi = normalize_spin(phi, A)
    _check_phi(phi)
    clo = float(closedness_residual(net, E, phi).max())
    s_max = None
    if config.area_penalty:
        A0 = A if reference_areas is None else np.asarray(reference_areas, dtype=float)
        s_max = float(np.abs(scale_change(A * quat.qnorm2(phi) ** 2, A0)).max())
    return SpinSolution(phi, phi_raw, obj, clo, iters, s_max, rho)


def solve_spin(net: FaceEdgeNet, hyperedges, rho, config: SolveConfig | None = None, **kwargs) -> np.ndarray:
    """Spin field minimising the regularised closedness objective.

    Parameters
    ----------
    net : FaceEdgeNet
    hyperedges : (nH, 4) array or None
        Hyperedges of ``net`` (``None`` uses ``net.hyperedges``).
    rho : (nF,) array
        Prescribed curvature half-density.
    config : SolveConfig

    Returns
    -------
    phi : (nF, 4) array
        Gauge-fixed spin field (area-weighted mean a positive real, scaled so
        that ``sum A |phi|^4 = sum A``).
    """
    return solve_spin_detailed(net, hyperedges, rho, config, **kwargs).phi
