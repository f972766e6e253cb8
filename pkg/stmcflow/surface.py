"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

Closed surfaces written as radial graphs F = z + rho(omega) omega over a
spherical grid, and their induced geometry in the ambient metric.

Sign conventions: nu is the outward unit normal, h_ij = -g(nabla_i d_j F, nu),
so a round Euclidean sphere of radius r has H = +2/r.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import msgspec
import numpy as np

from . import _serialization
from .ambient import CurvatureTensors, InitialDataSet, christoffel, curvature, extrinsic_jet, metric_jet, metric_only
from .errors import DegenerateImmersionError, GraphBreakdownError, PropagationError
from .grid import SphericalGrid, build_grid

log = logging.getLogger("stmcflow.surface")

GRAPH_MARGIN = 0.1
UNDER_RESOLVED_TAIL = 0.1
RADIAL_NODES = 32
RECENTER_ITERATIONS = 60


@dataclass(frozen=True, eq=False)
class GraphSurface:
    grid: SphericalGrid
    center: np.ndarray
    rho: np.ndarray

    def __post_init__(self) -> None:
        if self.rho.shape != self.grid.shape:
            msg = f"rho has shape {self.rho.shape}, grid expects {self.grid.shape}"
            raise ValueError(msg)
        if not np.all(np.isfinite(self.rho)):
            msg = "rho contains non-finite values"
            raise PropagationError(msg)
        if np.any(self.rho <= 0):
            msg = f"rho must be positive, min is {float(np.min(self.rho)):.6g}"
            raise GraphBreakdownError(msg)

    def with_rho(self, rho: np.ndarray) -> GraphSurface:
        return replace(self, rho=rho)

    @property
    def positions(self) -> np.ndarray:
        return self.center + self.rho[..., None] * self.grid.directions

    @cached_property
    def coefficients(self) -> np.ndarray:
        return self.grid.analyze(self.rho)

    def evaluate(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """rho at arbitrary directions by band-limited interpolation."""
        return self.grid.evaluate(self.coefficients, theta, phi)

    def min_radius(self) -> float:
        return float(np.min(np.linalg.norm(self.positions, axis=-1)))


def sphere(grid: SphericalGrid, radius: float, center: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> GraphSurface:
    return GraphSurface(grid, np.asarray(center, dtype=float), np.full(grid.shape, float(radius)))


def ellipsoid(
    grid: SphericalGrid,
    axes: tuple[float, float, float],
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> GraphSurface:
    w = grid.directions
    a = np.asarray(axes, dtype=float)
    rho = 1 / np.sqrt(np.sum((w / a) ** 2, axis=-1))
    return GraphSurface(grid, np.asarray(center, dtype=float), rho)


def perturbed_sphere(
    grid: SphericalGrid,
    radius: float,
    amplitude: float,
    degree: int,
    order: int,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> GraphSurface:
    """rho = radius (1 + amplitude Y_lm) with Y_lm the real harmonic normalised to max 1."""
    if not 0 <= abs(order) <= degree <= grid.lmax:
        msg = f"Harmonic ({degree}, {order}) is not representable on a grid with lmax={grid.lmax}"
        raise ValueError(msg)
    t, p = grid.mesh
    m = abs(order)
    pl = grid.legendre[m, :, degree][:, None]
    ang = np.cos(m * p) if order >= 0 else np.sin(m * p)
    y = pl * ang
    peak = float(np.max(np.abs(y))) or 1.0
    return GraphSurface(grid, np.asarray(center, dtype=float), radius * (1 + amplitude * y / peak))


def graph_embedding(surface: GraphSurface) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """F, dF (d_theta, d_phi) and ddF (symmetric 2x2 block) at the nodes."""
    grid = surface.grid
    d = grid.derivatives(surface.rho)
    w = grid.directions
    w_t, w_p, w_tt, w_tp, w_pp = grid.frame
    r = d.f[..., None]
    F = surface.center + r * w
    F_t = d.t[..., None] * w + r * w_t
    F_p = d.p[..., None] * w + r * w_p
    F_tt = d.tt[..., None] * w + 2 * d.t[..., None] * w_t + r * w_tt
    F_tp = d.tp[..., None] * w + d.t[..., None] * w_p + d.p[..., None] * w_t + r * w_tp
    F_pp = d.pp[..., None] * w + 2 * d.p[..., None] * w_p + r * w_pp
    dF = np.stack([F_t, F_p], axis=-2)
    ddF = np.stack([np.stack([F_tt, F_tp], axis=-2), np.stack([F_tp, F_pp], axis=-2)], axis=-3)
    return F, dF, ddF


@dataclass(frozen=True, eq=False)
class SurfaceGeometry:
    grid: SphericalGrid
    ids: InitialDataSet
    position: np.ndarray
    tangents: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray
    sqrt_det: np.ndarray
    measure: np.ndarray
    normal: np.ndarray
    normal_lower: np.ndarray
    second_form: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    christoffel: np.ndarray
    omega_dot_nu: np.ndarray
    graph_cosine: np.ndarray
    ambient_metric: np.ndarray

    @property
    def traceless_A2(self) -> np.ndarray:
        return self.A2 - 0.5 * self.H**2

    @cached_property
    def principal_curvatures(self) -> np.ndarray:
        shape_op = np.einsum("...ik,...kj->...ij", self.metric_inv, self.second_form)
        tr = np.trace(shape_op, axis1=-2, axis2=-1)
        det = np.linalg.det(shape_op)
        disc = np.sqrt(np.maximum(tr**2 / 4 - det, 0.0))
        return np.stack([tr / 2 - disc, tr / 2 + disc], axis=-1)

    @cached_property
    def ambient_curvature(self) -> CurvatureTensors:
        return curvature(metric_jet(self.ids, self.position))

    @cached_property
    def ric_nn(self) -> np.ndarray:
        return np.einsum("...ab,...a,...b->...", self.ambient_curvature.ricci, self.normal, self.normal)

    @cached_property
    def ambient_scalar(self) -> np.ndarray:
        return self.ambient_curvature.scalar

    @cached_property
    def einstein_nn(self) -> np.ndarray:
        return np.einsum("...ab,...a,...b->...", self.ambient_curvature.einstein, self.normal, self.normal)

    @cached_property
    def intrinsic_scalar(self) -> np.ndarray:
        """Gauss equation: S_Sigma = S - 2 Ric(nu, nu) + H^2 - |A|^2."""
        return self.ambient_scalar - 2 * self.ric_nn + self.H**2 - self.A2

    @cached_property
    def area(self) -> float:
        return float(np.sum(self.measure))

    @property
    def area_radius(self) -> float:
        return float(np.sqrt(self.area / (4 * np.pi)))

    @property
    def graph_margin(self) -> float:
        return float(np.min(self.graph_cosine))

    def trace_k(self) -> np.ndarray:
        """P = tr_Sigma K = g^ij K(d_i F, d_j F)."""
        K = extrinsic_jet(self.ids, self.position).K
        k_ij = np.einsum("...ab,...ia,...jb->...ij", K, self.tangents, self.tangents)
        return np.einsum("...ij,...ij->...", self.metric_inv, k_ij)


def embedded_geometry(
    grid: SphericalGrid,
    ids: InitialDataSet,
    F: np.ndarray,
    dF: np.ndarray,
    ddF: np.ndarray,
    *,
    check_graph: bool = True,
) -> SurfaceGeometry:
    """Induced metric, normal, second fundamental form and Christoffels of an immersion."""
    jet = metric_jet(ids, F)
    gbar = jet.g
    gam = christoffel(jet)
    metric = np.einsum("...ab,...ia,...jb->...ij", gbar, dF, dF)
    det = metric[..., 0, 0] * metric[..., 1, 1] - metric[..., 0, 1] ** 2
    if np.any(~np.isfinite(det)):
        msg = "Induced metric is not finite"
        raise PropagationError(msg)
    if np.any(det <= 0):
        i, j = np.unravel_index(int(np.argmin(det)), det.shape)
        msg = f"Induced metric degenerates at node ({i}, {j})"
        raise DegenerateImmersionError(msg)
    metric_inv = np.linalg.inv(metric)
    sqrt_det = np.sqrt(det)
    sin_t = np.sin(grid.mesh[0])
    measure = sqrt_det / sin_t * grid.weights

    n_cov = np.cross(dF[..., 0, :], dF[..., 1, :])
    gbar_inv = np.linalg.inv(gbar)
    n_norm = np.sqrt(np.einsum("...ab,...a,...b->...", gbar_inv, n_cov, n_cov))
    nu_lower = n_cov / n_norm[..., None]
    orient = np.sign(np.einsum("...a,...a->...", nu_lower, grid.directions))
    orient = np.where(orient == 0, 1.0, orient)
    nu_lower = nu_lower * orient[..., None]
    nu = np.einsum("...ab,...b->...a", gbar_inv, nu_lower)

    # nabla-bar_i d_j F
    cov_dd = ddF + np.einsum("...abc,...ib,...jc->...ija", gam, dF, dF)
    h = -np.einsum("...ija,...a->...ij", cov_dd, nu_lower)
    H = np.einsum("...ij,...ij->...", metric_inv, h)
    A2 = np.einsum("...ik,...jl,...ij,...kl->...", metric_inv, metric_inv, h, h)
    gam_low = np.einsum("...ab,...ija,...lb->...lij", gbar, cov_dd, dF)
    gam_sigma = np.einsum("...kl,...lij->...kij", metric_inv, gam_low)
    omega_dot_nu = np.einsum("...a,...a->...", nu_lower, grid.directions)
    omega_len = np.sqrt(np.einsum("...ab,...a,...b->...", gbar, grid.directions, grid.directions))
    graph_cosine = omega_dot_nu / omega_len

    geo = SurfaceGeometry(
        grid=grid,
        ids=ids,
        position=F,
        tangents=dF,
        metric=metric,
        metric_inv=metric_inv,
        sqrt_det=sqrt_det,
        measure=measure,
        normal=nu,
        normal_lower=nu_lower,
        second_form=h,
        H=H,
        A2=A2,
        christoffel=gam_sigma,
        omega_dot_nu=omega_dot_nu,
        graph_cosine=graph_cosine,
        ambient_metric=gbar,
    )
    if check_graph and geo.graph_margin < GRAPH_MARGIN:
        i, j = np.unravel_index(int(np.argmin(graph_cosine)), graph_cosine.shape)
        msg = f"Surface is no longer a radial graph: g(omega, nu) = {geo.graph_margin:.4f} at node ({i}, {j})"
        raise GraphBreakdownError(msg)
    return geo


def geometry(surface: GraphSurface, ids: InitialDataSet) -> SurfaceGeometry:
    F, dF, ddF = graph_embedding(surface)
    return embedded_geometry(surface.grid, ids, F, dF, ddF)


def integrate(field: np.ndarray, geo: SurfaceGeometry) -> float:
    return float(np.sum(field * geo.measure))


def mean(field: np.ndarray, geo: SurfaceGeometry) -> float:
    return integrate(field, geo) / geo.area


def lp_norm(field: np.ndarray, geo: SurfaceGeometry, p: float) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(field)))
    return integrate(np.abs(field) ** p, geo) ** (1 / p)


def gradient_norm2(field: np.ndarray, geo: SurfaceGeometry) -> np.ndarray:
    f_t, f_p = geo.grid.gradient(field)
    df = np.stack([f_t, f_p], axis=-1)
    return np.einsum("...ij,...i,...j->...", geo.metric_inv, df, df)


def hessian(field: np.ndarray, geo: SurfaceGeometry) -> np.ndarray:
    """Covariant Hessian (d_ij f - Gamma^k_ij d_k f) as a 2x2 block per node."""
    d = geo.grid.derivatives(field)
    df = np.stack([d.t, d.p], axis=-1)
    dd = np.stack([np.stack([d.tt, d.tp], axis=-1), np.stack([d.tp, d.pp], axis=-1)], axis=-2)
    return dd - np.einsum("...kij,...k->...ij", geo.christoffel, df)


def laplacian(field: np.ndarray, geo: SurfaceGeometry) -> np.ndarray:
    return np.einsum("...ij,...ij->...", geo.metric_inv, hessian(field, geo))


def tensor_norm2(t: np.ndarray, geo: SurfaceGeometry) -> np.ndarray:
    return np.einsum("...ik,...jl,...ij,...kl->...", geo.metric_inv, geo.metric_inv, t, t)


def enclosed_volume(geo: SurfaceGeometry) -> float:
    """Volume between the surface and the origin, filling the excised core flat.

    Uses the flux of a radial field X with div X = 1 in the ambient metric outside
    the core and in the flat metric inside it.
    """
    ids = geo.ids
    F = geo.position
    r = np.linalg.norm(F, axis=-1)
    r_core = ids.r_min
    if np.any(r <= r_core):
        msg = "Surface dips into the excised core; the enclosed volume is undefined"
        raise GraphBreakdownError(msg)
    x_hat = F / r[..., None]
    s, w = np.polynomial.legendre.leggauss(RADIAL_NODES)
    half = 0.5 * (r - r_core)
    radii = r_core + half[..., None] * (s + 1)
    pts = radii[..., None] * x_hat[..., None, :]
    sqrt_gbar = np.sqrt(np.linalg.det(metric_only(ids, pts)))
    radial = r_core**3 / 3 + half * np.sum(w * sqrt_gbar * radii**2, axis=-1)
    sqrt_here = np.sqrt(np.linalg.det(geo.ambient_metric))
    X = (radial / (sqrt_here * r**3))[..., None] * F
    return integrate(np.einsum("...a,...a->...", X, geo.normal_lower), geo)


class ShapeReport(msgspec.Struct, frozen=True):
    area: float
    sigma: float
    r_min: float
    r_max: float
    volume: float
    barycenter: list[float]
    spectral_tail: float

    @property
    def ratio_inner(self) -> float:
        return self.r_min / self.sigma

    @property
    def ratio_outer(self) -> float:
        return self.r_max / self.sigma


def shape_report(surface: GraphSurface, geo: SurfaceGeometry) -> ShapeReport:
    radii = np.linalg.norm(geo.position, axis=-1)
    bary = np.sum(geo.position * geo.measure[..., None], axis=(0, 1)) / geo.area
    return ShapeReport(
        area=geo.area,
        sigma=geo.area_radius,
        r_min=float(np.min(radii)),
        r_max=float(np.max(radii)),
        volume=enclosed_volume(geo),
        barycenter=[float(c) for c in bary],
        spectral_tail=surface.grid.spectral_tail(surface.rho),
    )


def resolution_report(surface: GraphSurface, ids: InitialDataSet) -> dict[str, float | bool]:
    """Compare area and mean curvature against the same surface resampled on a doubled grid.

    The surface is flagged under-resolved once more than a tenth of its shape energy sits in the top third of degrees.
    """
    grid = surface.grid
    fine = build_grid(2 * grid.n_theta, 2 * grid.n_phi)
    t, p = fine.mesh
    fine_surface = GraphSurface(fine, surface.center, surface.evaluate(t, p))
    coarse_geo = geometry(surface, ids)
    fine_geo = geometry(fine_surface, ids)
    h_coarse = mean(coarse_geo.H, coarse_geo)
    h_fine = mean(fine_geo.H, fine_geo)
    tail = grid.spectral_tail(surface.rho)
    return {
        "area_rel_change": abs(fine_geo.area - coarse_geo.area) / fine_geo.area,
        "mean_H_rel_change": abs(h_fine - h_coarse) / max(abs(h_fine), 1e-300),
        "spectral_tail": tail,
        "under_resolved": tail > UNDER_RESOLVED_TAIL,
    }


def recenter(surface: GraphSurface, new_center: np.ndarray) -> GraphSurface:
    """Rewrite the same surface as a radial graph about ``new_center``.

    For each grid direction w' solve |z' + s w' - z| = rho((z' + s w' - z)/|...|) by
    fixed-point iteration on s, interpolating rho spectrally.
    """
    grid = surface.grid
    new_center = np.asarray(new_center, dtype=float)
    shift = new_center - surface.center
    w = grid.directions
    s = surface.rho.copy()
    step = np.zeros_like(s)
    for _ in range(RECENTER_ITERATIONS):
        v = shift + s[..., None] * w
        dist = np.linalg.norm(v, axis=-1)
        theta = np.arccos(np.clip(v[..., 2] / dist, -1.0, 1.0))
        phi = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi)
        target = surface.evaluate(theta, phi)
        cos_a = np.einsum("...a,...a->...", v, w) / dist
        step = (target - dist) / np.maximum(cos_a, 0.2)
        s = s + step
        if float(np.max(np.abs(step))) < 1e-13 * float(np.max(s)):
            break
    else:
        log.warning("Recentering did not reach full precision (last update %.3g)", float(np.max(np.abs(step))))
    log.debug("Recentered by %s", shift)
    return GraphSurface(grid, new_center, s)


class SurfaceSnapshot(msgspec.Struct, frozen=True):
    format: str
    n_theta: int
    n_phi: int
    center: list[float]
    rho: list[list[float]]
    t: float = 0.0
    step: int = 0


SNAPSHOT_FORMAT = "stmcflow.surface/1"


def to_snapshot(surface: GraphSurface, t: float = 0.0, step: int = 0) -> SurfaceSnapshot:
    return SurfaceSnapshot(
        format=SNAPSHOT_FORMAT,
        n_theta=surface.grid.n_theta,
        n_phi=surface.grid.n_phi,
        center=[float(c) for c in surface.center],
        rho=surface.rho.tolist(),
        t=t,
        step=step,
    )


def from_snapshot(snap: SurfaceSnapshot) -> GraphSurface:
    if snap.format != SNAPSHOT_FORMAT:
        msg = f"Unsupported snapshot format {snap.format!r}"
        raise ValueError(msg)
    grid = build_grid(snap.n_theta, snap.n_phi)
    return GraphSurface(grid, np.asarray(snap.center, dtype=float), np.asarray(snap.rho, dtype=float))


def save_snapshot(path: Path, surface: GraphSurface, t: float = 0.0, step: int = 0) -> None:
    _serialization.write_json(path, to_snapshot(surface, t, step))


def load_snapshot(path: Path) -> GraphSurface:
    return from_snapshot(_serialization.read_json(path, SurfaceSnapshot))
