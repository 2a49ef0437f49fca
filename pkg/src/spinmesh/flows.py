"""Curvature-space flows: fairing to a sphere, extrusion back, and a mean curvature flow baseline.

All flows keep the combinatorics of the input; only positions change.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import metrics
from .integrate import apply_spin, cotangent_laplacian, cotangent_weights
from .net import FaceEdgeNet
from .spin import SolveConfig, face_laplacian, prescribe_rho, scale_change, solve_spin_detailed

logger = logging.getLogger(__name__)


class FlowError(RuntimeError):
    def __init__(self, msg, history=None, step=None):
        super().__init__(msg)
        self.history = history or []
        self.step = step


@dataclass
class FlowConfig:
    """Flow parameters.

    ``filter_strength`` is in area units (``None`` disables filtering).
    ``sphericity_tolerance`` is the radius coefficient of variation at which a
    fairing flow stops.  ``extrude_fraction`` is the share of the remaining
    curvature gap closed per extrusion step.  ``update_multipliers`` applies
    ``lambda <- lambda * max(1, (s / eps)^2)`` between steps when the area
    penalty is active.
    """

    tau: float = 0.5
    steps: int = 10
    solve: SolveConfig = field(default_factory=SolveConfig)
    filter_strength: float | None = None
    metric_choice: str = "source"
    record_history: bool = True
    sphericity_tolerance: float = 1e-2
    extrude_fraction: float = 0.3
    extrude_steps: int = 40
    extrude_stagnation: float = 5e-3
    update_multipliers: bool = True

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must lie in (0, 1]")
        if self.steps < 1 or self.extrude_steps < 1:
            raise ValueError("steps must be >= 1")
        if self.metric_choice not in ("source", "target"):
            raise ValueError("metric_choice must be 'source' or 'target'")
        if not (0.0 < self.extrude_fraction <= 1.0):
            raise ValueError("extrude_fraction must lie in (0, 1]")
        if self.filter_strength is not None and self.filter_strength < 0:
            raise ValueError("filter_strength must be >= 0")

    def resolved(self, net: FaceEdgeNet) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "solve"}
        d["solve"] = self.solve.resolved(net)
        return d


@dataclass
class CurvatureMap:
    """Target curvature and area per face, carried on a (sphere-like) mesh."""

    h_star: np.ndarray
    A_star: np.ndarray
    total_area: float
    face_count: int
    provenance: str = ""

    def __post_init__(self):
        self.h_star = np.asarray(self.h_star, dtype=float)
        self.A_star = np.asarray(self.A_star, dtype=float)
        if self.h_star.shape != (self.face_count,) or self.A_star.shape != (self.face_count,):
            raise ValueError("curvature map arrays must have one entry per face")
        if np.any(self.A_star <= 0):
            raise ValueError("target areas must be positive")

    @classmethod
    def from_net(cls, net: FaceEdgeNet, provenance: str = "") -> "CurvatureMap":
        return cls(net.mean_curvature.copy(), net.face_areas.copy(), float(net.total_area), net.n_faces, provenance)


# ---------------------------------------------------------------- helpers


def radius_cv(net_or_positions) -> float:
    """Coefficient of variation of distances to the centroid.

    For a net, the centroid and the statistics are weighted by vertex areas,
    so uneven vertex density does not bias the centre.
    """
    if isinstance(net_or_positions, FaceEdgeNet):
        P = net_or_positions.positions
        w = net_or_positions.vertex_areas
    else:
        P = np.asarray(net_or_positions, dtype=float)
        w = np.ones(len(P))
    w = w / w.sum()
    r = np.linalg.norm(P - w @ P, axis=1)
    m = float(w @ r)
    return float(np.sqrt(w @ (r - m) ** 2) / m)


def min_face_angle(net: FaceEdgeNet) -> float:
    P = net.positions[net.faces]
    out = np.inf
    for k in range(3):
        a = P[:, (k + 1) % 3] - P[:, k]
        b = P[:, (k + 2) % 3] - P[:, k]
        c = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out = min(out, float(np.arccos(np.clip(c, -1, 1)).min()))
    return out


def rescale_to_area(net: FaceEdgeNet, total_area: float) -> FaceEdgeNet:
    """Scale about the vertex centroid so the total area equals ``total_area``."""
    P = net.positions
    c = P.mean(axis=0)
    k = math.sqrt(total_area / net.total_area)
    return net.with_positions(c + k * (P - c))


def filter_curvature(delta_rho, net: FaceEdgeNet, strength: float | None) -> np.ndarray:
    """Implicit low-pass ``(A + strength L_f)^-1 A delta_rho``.

    ``strength`` has units of area (e.g. a multiple of the mean face area).
    The area-weighted mean of ``delta_rho`` is preserved because ``L_f``
    annihilates constants and is symmetric.
    """
    d = np.asarray(delta_rho, dtype=float)
    if strength is None or strength == 0:
        return d.copy()
    if strength < 0:
        raise ValueError("strength must be >= 0")
    A = net.face_areas
    M = (sp.diags(A) + strength * face_laplacian(net)).tocsc()
    return spla.spsolve(M, A * d)


def _diagnostics(step, before: FaceEdgeNet, after: FaceEdgeNet, origin: FaceEdgeNet, sol, info, extra=None):
    d = {
        "step": step,
        "closedness": sol.closedness,
        "integrability": info["integrability_residual"],
        "normal_discrepancy": info["normal_discrepancy"],
        "willmore": metrics.willmore_energy(after),
        "Q_max_step": float(metrics.conformality_factor(before, after).max()),
        "Q_max": float(metrics.conformality_factor(origin, after).max()),
        "eps_s_max": float(np.abs(metrics.area_distortion(origin, after)).max()),
        "radius_cv": radius_cv(after),
        "min_angle": min_face_angle(after),
        "min_area_ratio": float(after.face_areas.min() / after.face_areas.mean()),
        "objective": sol.objective,
    }
    if extra:
        d.update(extra)
    return d


def _spin_step(net: FaceEdgeNet, rho, config: FlowConfig, *, reference: FaceEdgeNet | None,
               source: FaceEdgeNet | None, lam, cache: dict):
    solve = config.solve
    if lam is not None:
        solve = replace(solve, area_multipliers=lam)
    kw = {}
    if solve.enforce_exactness and net.genus > 0:
        from . import topology

        basis = topology.helmholtzian_nullspace(net)
        kw["basis"] = basis
        kw["projector"] = topology.exactness_constraint_vectors(net, basis)
    sol = solve_spin_detailed(net, None, rho, solve,
                              reference_areas=None if reference is None else reference.face_areas,
                              source_areas=None if source is None else source.face_areas, **kw)
    new, info = apply_spin(net, sol.phi, metric=config.metric_choice)
    return sol, new, info


def _update_lambda(config: FlowConfig, lam, net: FaceEdgeNet, reference: FaceEdgeNet):
    solve = config.solve
    if not (solve.area_penalty and config.update_multipliers):
        return lam
    lam = np.broadcast_to(np.asarray(1.0 if lam is None else lam, dtype=float), (net.n_faces,)).copy()
    s = scale_change(net.face_areas, reference.face_areas)
    return lam * np.maximum(1.0, (s / solve.area_tolerance) ** 2)


# ---------------------------------------------------------------- fairing


def fairing_step(net: FaceEdgeNet, config: FlowConfig | None = None, *, reference: FaceEdgeNet | None = None,
                 lam=None, step: int = 0, preserve_area: bool = True):
    """One curvature-shrinking step ``delta h = -tau h``.

    Returns ``(new_net, increment, diagnostics)``; ``increment`` is the
    :class:`CurvatureMap` of the input net (what the step consumed).
    ``reference`` is the start of the flow (area penalty and statistics).
    """
    config = config or FlowConfig()
    reference = net if reference is None else reference
    h = net.mean_curvature
    A = net.face_areas
    dh = filter_curvature(-config.tau * h, net, config.filter_strength)
    rho = prescribe_rho(h + dh, A, A)
    w_before = metrics.willmore_energy(net)
    sol, new, info = _spin_step(net, rho, config, reference=reference, source=reference, lam=lam, cache={})
    if preserve_area:
        new = rescale_to_area(new, net.total_area)
    diag = _diagnostics(step, net, new, reference, sol, info, {"willmore_before": w_before})
    if diag["willmore"] > 1.01 * w_before:
        diag["warning"] = "willmore energy increased"
        logger.warning("step %d: Willmore energy increased from %.4g to %.4g", step, w_before, diag["willmore"])
    return new, CurvatureMap.from_net(net), diag


def flow_to_sphere(net: FaceEdgeNet, config: FlowConfig | None = None, *, provenance: str = ""):
    """Fair until the radius CV drops below tolerance (or the step budget runs out).

    Returns ``(sphere_net, curvature_map, history)``; the map stores the input
    net's curvature and areas indexed by the (shared) faces.
    """
    config = config or FlowConfig()
    if net.genus > 0 and not config.solve.enforce_exactness:
        raise ValueError("flows on higher genus require enforce_exactness")
    cmap = CurvatureMap.from_net(net, provenance)
    history = []
    current = net
    lam = config.solve.area_multipliers
    if radius_cv(current) < config.sphericity_tolerance:
        history.append({"step": 0, "radius_cv": radius_cv(current), "note": "fixed point: already spherical"})
        return current, cmap, history
    converged = False
    for k in range(1, config.steps + 1):
        current, _, diag = fairing_step(current, config, reference=net, lam=lam, step=k)
        lam = _update_lambda(config, lam, current, net)
        if config.record_history:
            history.append(diag)
        logger.info("fair step %d: radius cv %.3e, closedness %.2e, integrability %.2e",
                    k, diag["radius_cv"], diag["closedness"], diag["integrability"])
        if diag["radius_cv"] < config.sphericity_tolerance:
            converged = True
            break
    if not converged:
        logger.warning("flow did not reach radius CV %.1e within %d steps", config.sphericity_tolerance, config.steps)
        history.append({"warning": "not converged", "radius_cv": radius_cv(current)})
    return current, cmap, history


# ---------------------------------------------------------------- extrusion


def curvature_residual(net: FaceEdgeNet, h_target) -> float:
    """``||h - h*||_A / ||h*||_A``."""
    A = net.face_areas
    h = net.mean_curvature
    return float(np.sqrt(np.sum(A * (h - h_target) ** 2) / max(np.sum(A * h_target**2), 1e-300)))


def extrude(sphere_net: FaceEdgeNet, target: CurvatureMap, config: FlowConfig | None = None, *,
            steps: int | None = None, return_history: bool = False):
    """Grow the target shape back from a sphere-like net.

    Targets are normalised to the carrier's scale (curvature scales as 1/length,
    area as length^2); each step closes ``extrude_fraction`` of the curvature
    gap and moves face areas geometrically by the same fraction toward the
    target.  The result is rescaled to the target's total area.
    """
    config = config or FlowConfig()
    if target.face_count != sphere_net.n_faces:
        raise ValueError("sidecar/mesh face count mismatch")
    k = math.sqrt(sphere_net.total_area / target.total_area)
    h_star = target.h_star / k
    A_star = target.A_star * k**2
    budget = steps or config.extrude_steps
    current = sphere_net
    history = []
    res = curvature_residual(current, h_star)
    history.append({"step": 0, "curvature_residual": res})
    best = (res, current)
    growth = 0
    lam = config.solve.area_multipliers
    for it in range(1, budget + 1):
        if res < 1e-9:
            break
        h = current.mean_curvature
        A = current.face_areas
        dh = config.extrude_fraction * (h_star - h)
        dh = filter_curvature(dh, current, config.filter_strength)
        # areas move toward the target by the same fraction (geometric interpolation)
        A_bar = A * (A_star / A) ** config.extrude_fraction
        rho = prescribe_rho(h + dh, A_bar, A)
        sol, new, info = _spin_step(current, rho, config, reference=sphere_net, source=sphere_net, lam=lam, cache={})
        new = rescale_to_area(new, sphere_net.total_area)
        new_res = curvature_residual(new, h_star)
        diag = _diagnostics(it, current, new, sphere_net, sol, info, {"curvature_residual": new_res})
        if config.record_history:
            history.append(diag)
        logger.info("extrude step %d: curvature residual %.4e", it, new_res)
        growth = growth + 1 if new_res > res else 0
        current = new
        if new_res < best[0]:
            best = (new_res, new)
        if growth >= 3:
            raise FlowError("extrusion diverged (curvature residual grew over 3 consecutive steps)", history, it)
        if res - new_res < config.extrude_stagnation * res and new_res <= res:
            res = new_res
            break
        res = new_res
    out = rescale_to_area(best[1], target.total_area)
    return (out, history) if return_history else out


def round_trip(net: FaceEdgeNet, config: FlowConfig | None = None, *, extrude_config: FlowConfig | None = None):
    """Fair, extrude, align and measure the reconstruction error.

    Returns a dict with the reconstructed net and error statistics
    (``max_err_rel_diag`` relative to the input's bounding-box diagonal).
    """
    config = config or FlowConfig()
    sphere, cmap, hist_f = flow_to_sphere(net, config)
    ext, hist_e = extrude(sphere, cmap, extrude_config or config, return_history=True)
    al = metrics.align_similarity(ext, net)
    mx, mean = metrics.point_to_surface_error(al.aligned, net)
    diag = net.bbox_diagonal
    return {
        "sphere": sphere,
        "extruded": al.aligned,
        "max_err_rel_diag": mx / diag,
        "mean_err": mean,
        "mean_err_rel_diag": mean / diag,
        "fair_history": hist_f,
        "extrude_history": hist_e,
        "report": metrics.DeformationReport.from_nets(net, sphere),
    }


# ---------------------------------------------------------------- baseline


def vertex_normals(net: FaceEdgeNet) -> np.ndarray:
    n = np.zeros((net.n_vertices, 3))
    av = net.face_normals * net.face_areas[:, None]
    for k in range(3):
        np.add.at(n, net.faces[:, k], av)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def mcf_stable_step(net: FaceEdgeNet) -> float:
    """Largest explicit step for which the diffusion update stays contractive."""
    w = cotangent_weights(net)
    G = np.zeros(net.n_vertices)
    h = net.edge_half
    np.add.at(G, net.half_src[h], np.abs(w))
    np.add.at(G, net.half_dst[h], np.abs(w))
    return float(np.min(net.vertex_areas / (2.0 * G)))


def mean_curvature_flow_baseline(net: FaceEdgeNet, tau: float, steps: int, incompressible: bool = True, *,
                                 stop_willmore: float | None = None, blowup: float = 1e3):
    """Explicit (incompressible) mean curvature flow.

    ``f <- f + tau (Delta f / A_v + <h> n_v)``, where ``Delta f / A_v`` is
    ``-h n`` and the balloon term ``<h> n_v`` (area-weighted mean of the
    vertex curvature) is only added when ``incompressible``.  ``tau`` is an
    absolute time step (length^2).  Mesh-quality collapse is recorded, not
    fatal; a non-finite or exploding mesh aborts with :class:`FlowError`.
    """
    if tau <= 0 or steps < 1:
        raise ValueError("tau must be > 0 and steps >= 1")
    P = net.positions.copy()
    diag0 = net.bbox_diagonal
    history = []
    current = net
    for k in range(1, steps + 1):
        L = cotangent_laplacian(current)
        Av = current.vertex_areas
        hv = (L @ P) / Av[:, None]
        nv = vertex_normals(current)
        upd = hv
        if incompressible:
            hs = -np.einsum("ij,ij->i", hv, nv)
            upd = hv + (np.sum(hs * Av) / np.sum(Av)) * nv
        with np.errstate(all="ignore"):
            P = P + tau * upd
        ext = np.ptp(P, axis=0) if np.all(np.isfinite(P)) else None
        if ext is None or np.linalg.norm(ext) > blowup * diag0:
            raise FlowError(f"mean curvature flow overflow at step {k}", history, k)
        try:
            current = FaceEdgeNet(P, net.faces, validate=False)
            Q = metrics.conformality_factor(net, current)
            eps = metrics.area_distortion(net, current)
            w = metrics.willmore_energy(current)
        except (ArithmeticError, ValueError) as exc:
            history.append({"step": k, "error": str(exc)})
            raise FlowError(f"mean curvature flow broke down at step {k}: {exc}", history, k) from exc
        d = {
            "step": k,
            "willmore": w,
            "Q_max": float(np.max(Q)),
            "eps_s_max": float(np.max(np.abs(eps))),
            "radius_cv": radius_cv(current),
            "min_angle": min_face_angle(current),
            "min_area_ratio": float(current.face_areas.min() / current.face_areas.mean()),
        }
        history.append(d)
        if stop_willmore is not None and w <= stop_willmore:
            break
    return current, history


# ---------------------------------------------------------------- comparison


def compare_flows(net: FaceEdgeNet, config: FlowConfig | None = None, *, area_tolerance: float = 0.1,
                  area_multiplier: float = 1.0, mcf_fraction: float = 0.9, mcf_max_steps: int = 3000):
    """Unconstrained spin flow, area-constrained spin flow and MC baseline at matched Willmore energy.

    The unconstrained spin flow sets the target energy; the MC baseline runs
    until it reaches that energy (``mcf_fraction`` of the explicit stability
    limit per step).  Returns ``{name: row}`` where each row holds the
    deformation statistics against the input plus run bookkeeping, and a
    ``"meshes"`` entry with the three end states.
    """
    config = config or FlowConfig()
    spin_net, _, h0 = flow_to_sphere(net, config)
    w_target = metrics.willmore_energy(spin_net)
    area_cfg = replace(config, solve=replace(config.solve, area_tolerance=area_tolerance,
                                             area_multipliers=area_multiplier))
    area_net, _, h1 = flow_to_sphere(net, area_cfg)
    tau = mcf_fraction * mcf_stable_step(net)
    mc_error = None
    try:
        mc_net, h2 = mean_curvature_flow_baseline(net, tau, mcf_max_steps, True, stop_willmore=w_target)
    except FlowError as exc:
        mc_error = str(exc)
        h2 = exc.history
        mc_net = None

    def row(out, hist, kind):
        if out is None:
            return {"kind": kind, "error": mc_error, "steps": len(hist)}
        r = metrics.DeformationReport.from_nets(net, out).to_dict()
        r.update(kind=kind, steps=sum(1 for d in hist if "step" in d),
                 warnings=[d["warning"] for d in hist if "warning" in d])
        return r

    rows = {
        "spin": row(spin_net, h0, "spin"),
        "spin_area": row(area_net, h1, "spin"),
        "mean_curvature": row(mc_net, h2, "mean_curvature"),
    }
    rows["mean_curvature"]["tau"] = tau
    if mc_net is not None:
        rows["mean_curvature"]["matched"] = bool(rows["mean_curvature"]["willmore"] <= w_target * (1 + 1e-9))
    rows["target_willmore"] = w_target
    rows["meshes"] = {"spin": spin_net, "spin_area": area_net, "mean_curvature": mc_net}
    return rows
