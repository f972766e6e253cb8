"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

The spacetime mean curvature (H^q - |P|^q)^(1/q) of a surface in initial
data, its calculus, and the roundness class the flow is studied in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import msgspec
import numpy as np

from . import surface as sf
from .errors import AdmissibilityError
from .surface import GraphSurface, SurfaceGeometry

log = logging.getLogger("stmcflow.stcurv")


@dataclass(frozen=True, eq=False)
class STCurvature:
    q: float
    H: np.ndarray
    P: np.ndarray
    Hq: np.ndarray
    hbar: float
    theta_plus: np.ndarray
    theta_minus: np.ndarray

    @property
    def speed(self) -> np.ndarray:
        return self.Hq - self.hbar

    @property
    def s(self) -> np.ndarray:
        return np.abs(self.P) / self.H

    @property
    def phi_prime(self) -> np.ndarray:
        return (self.H / self.Hq) ** (self.q - 1)


def trace_k(geo: SurfaceGeometry) -> np.ndarray:
    """P = g^ij K(d_i F, d_j F); identically zero when the data carry no extrinsic curvature."""
    return geo.trace_k()


def st_curvature(geo: SurfaceGeometry, q: float, P: np.ndarray | None = None) -> STCurvature:
    if q < 1:
        msg = f"q must be at least 1, got {q}"
        raise ValueError(msg)
    if P is None:
        P = trace_k(geo)
    H = geo.H
    gap = np.sign(H) * np.abs(H) ** q - np.abs(P) ** q
    if np.any(gap <= 0):
        i, j = np.unravel_index(int(np.argmin(gap)), gap.shape)
        theta, phi = geo.grid.theta[i], geo.grid.phi[j]
        msg = (
            f"Spacetime mean curvature undefined at node ({i}, {j}) "
            f"(theta={theta:.4f}, phi={phi:.4f}): H={H[i, j]:.6g}, |P|={abs(P[i, j]):.6g}"
        )
        raise AdmissibilityError(msg, (int(i), int(j)))
    Hq = gap ** (1 / q)
    hbar = sf.mean(Hq, geo)
    return STCurvature(q, H, P, Hq, hbar, H + P, H - P)


def expansions_summary(st: STCurvature) -> dict[str, float]:
    summary = {
        "theta_plus_min": float(np.min(st.theta_plus)),
        "theta_minus_min": float(np.min(st.theta_minus)),
        "theta_plus_max": float(np.max(st.theta_plus)),
        "theta_minus_max": float(np.max(st.theta_minus)),
    }
    if min(summary["theta_plus_min"], summary["theta_minus_min"]) <= 0:
        log.warning("Surface has a non-positive null expansion and is (marginally) trapped somewhere")
    return summary


class AlphaBounds(msgspec.Struct, frozen=True):
    q: float
    c_alpha: float
    c_d_alpha: float
    c_dd_alpha: float
    nonincreasing: bool
    concave: bool


def alpha(q: float, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """alpha(s) = (1 - s^q)^(1/q) with its first two derivatives, for 0 <= s < 1."""
    s = np.asarray(s, dtype=float)
    base = 1 - s**q
    a = base ** (1 / q)
    da = -(s ** (q - 1)) * base ** (1 / q - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dda = np.where(s > 0, -(q - 1) * s ** (q - 2) * base ** (1 / q - 2), 0.0)
    return a, da, dda


def alpha_bounds(q: float, s: np.ndarray) -> AlphaBounds:
    """Smallest c with |alpha - 1| <= c s^q, |alpha'| <= c s^(q-1), |alpha''| <= c s^(q-2) on the samples."""
    s = np.asarray(s, dtype=float)
    s = s[s > 0]
    a, da, dda = alpha(q, s)
    return AlphaBounds(
        q=q,
        c_alpha=float(np.max(np.abs(a - 1) / s**q)),
        c_d_alpha=float(np.max(np.abs(da) / s ** (q - 1))),
        c_dd_alpha=float(np.max(np.abs(dda) / s ** (q - 2))),
        nonincreasing=bool(np.all(da <= 0)),
        concave=bool(np.all(dda <= 0)),
    )


@dataclass(frozen=True, eq=False)
class PhiCalculus:
    phi_prime: np.ndarray
    grad_H: np.ndarray
    grad_P: np.ndarray
    grad_Hq: np.ndarray
    chain_rule_residual: float
    bound_holds: bool


def _covector(field: np.ndarray, geo: SurfaceGeometry) -> np.ndarray:
    return np.stack(geo.grid.gradient(field), axis=-1)


def _norm2(v: np.ndarray, geo: SurfaceGeometry) -> np.ndarray:
    return np.einsum("...ij,...i,...j->...", geo.metric_inv, v, v)


def phi_calculus(geo: SurfaceGeometry, st: STCurvature) -> PhiCalculus:
    """Phi' = (H/Hq)^(q-1) and the identity Hq^(q-1) grad Hq = H^(q-1) grad H - |P|^(q-2) P grad P."""
    q = st.q
    phi_prime = st.phi_prime
    grad_h = _covector(st.H, geo)
    grad_p = _covector(st.P, geo)
    grad_hq = _covector(st.Hq, geo)
    lhs = st.Hq[..., None] ** (q - 1) * grad_hq
    rhs = st.H[..., None] ** (q - 1) * grad_h - (np.sign(st.P) * np.abs(st.P) ** (q - 1))[..., None] * grad_p
    # gradients of a field of size Hq^q vary on the scale of the surface itself
    scale = max(float(np.max(np.sqrt(_norm2(lhs, geo)))), float(np.max(st.Hq)) ** q / geo.area_radius)
    residual = float(np.max(np.sqrt(_norm2(lhs - rhs, geo)))) / scale
    bound_lhs = _norm2(grad_hq, geo)
    bound_rhs = 2 * phi_prime**2 * _norm2(grad_h, geo) + 2 * (np.abs(st.P) / st.Hq) ** (2 * q - 2) * _norm2(grad_p, geo)
    gscale = float(np.max(st.Hq)) / geo.area_radius
    bound = bool(np.all(bound_lhs <= bound_rhs * (1 + 1e-6) + (1e-10 * gscale) ** 2))
    return PhiCalculus(phi_prime, grad_h, grad_p, grad_hq, residual, bound)


@dataclass(frozen=True, eq=False)
class ReminderTensor:
    T: np.ndarray
    difference: np.ndarray
    hess_H: np.ndarray
    hess_Hq: np.ndarray
    residual: float


def reminder_tensor(geo: SurfaceGeometry, st: STCurvature) -> ReminderTensor:
    """T assembled from Hess H, ds and Hess s with s = |P|/H, checked against the direct Hess Hq - Hess H."""
    s = st.s
    a, da, dda = alpha(st.q, s)
    beta = a - 1
    hess_h = sf.hessian(st.H, geo)
    hess_hq = sf.hessian(st.Hq, geo)
    hess_s = sf.hessian(s, geo)
    gh = _covector(st.H, geo)
    gs = _covector(s, geo)
    cross = np.einsum("...i,...j->...ij", gh, gs)
    T = (
        beta[..., None, None] * hess_h
        + da[..., None, None] * (cross + np.swapaxes(cross, -1, -2))
        + (st.H * dda)[..., None, None] * np.einsum("...i,...j->...ij", gs, gs)
        + (st.H * da)[..., None, None] * hess_s
    )
    difference = hess_hq - hess_h
    scale = max(float(np.max(np.sqrt(sf.tensor_norm2(hess_hq, geo)))), float(np.max(st.Hq)) / geo.area_radius**2)
    residual = float(np.max(np.sqrt(sf.tensor_norm2(difference - T, geo)))) / scale
    return ReminderTensor(T, difference, hess_h, hess_hq, residual)


class ClassParams(msgspec.Struct, frozen=True):
    eta: float = 1.0
    b1: float = 10.0
    b2: float = 10.0
    # 0 means "use the area radius of the surface"
    sigma: float = 0.0


class ClassFlags(msgspec.Struct, frozen=True):
    traceless_l4: bool
    area: bool
    radii: bool
    a_functional: bool
    max_A: bool
    min_kappa: bool

    @property
    def all(self) -> bool:
        return all((self.traceless_l4, self.area, self.radii, self.a_functional, self.max_A, self.min_kappa))


class RoundnessReport(msgspec.Struct, frozen=True):
    sigma: float
    delta: float
    eta: float
    b1: float
    b2: float
    traceless_l4: float
    traceless_l4_max: float
    area: float
    area_min: float
    area_max: float
    ratio_inner: float
    ratio_outer: float
    ratio_min: float
    ratio_max: float
    a_functional: float
    a_functional_max: float
    max_A: float
    max_A_max: float
    min_kappa: float
    min_kappa_min: float
    osc_H: float
    h1: float
    flags: ClassFlags
    in_class: bool


def roundness_report(
    surface: GraphSurface,
    geo: SurfaceGeometry,
    st: STCurvature,
    params: ClassParams,
) -> RoundnessReport:
    """Every roundness quantity alongside the threshold it is compared with."""
    sigma_area = geo.area_radius
    sigma = params.sigma if params.sigma > 0 else sigma_area
    delta = geo.ids.delta
    radii = np.linalg.norm(geo.position, axis=-1)
    traceless = np.maximum(geo.traceless_A2, 0.0)
    traceless_l4 = sf.integrate(traceless**2, geo) ** 0.25
    speed = st.Hq - st.hbar
    grad2 = np.maximum(sf.gradient_norm2(st.Hq, geo), 0.0)
    a_func = params.eta * sigma**-4 * sf.integrate(speed**4, geo) + sf.integrate(grad2**2, geo)
    max_a = float(np.sqrt(np.max(geo.A2)))
    min_kappa = float(np.min(geo.principal_curvatures))
    ratio_inner = float(np.min(radii)) / sigma_area
    ratio_outer = float(np.max(radii)) / sigma_area
    h1 = float(np.sqrt(sf.integrate(speed**2, geo) + sf.integrate(grad2, geo)))
    log.debug("Roundness of surface centered at %s evaluated with sigma=%g", surface.center, sigma)

    thresholds = {
        "traceless_l4_max": params.b1 * sigma ** (-1 - delta),
        "area_min": 3.5 * np.pi * sigma**2,
        "area_max": 5.0 * np.pi * sigma**2,
        "ratio_min": 2 / 3,
        "ratio_max": 1.5,
        "a_functional_max": params.b2 * sigma ** (-8 - 4 * delta),
        "max_A_max": float(np.sqrt(5 / (2 * sigma**2))),
        "min_kappa_min": 1 / (2 * sigma),
    }
    flags = ClassFlags(
        traceless_l4=traceless_l4 < thresholds["traceless_l4_max"],
        area=thresholds["area_min"] < geo.area < thresholds["area_max"],
        radii=thresholds["ratio_min"] < ratio_inner <= ratio_outer < thresholds["ratio_max"],
        a_functional=a_func < thresholds["a_functional_max"],
        max_A=max_a < thresholds["max_A_max"],
        min_kappa=min_kappa >= thresholds["min_kappa_min"],
    )
    return RoundnessReport(
        sigma=sigma,
        delta=delta,
        eta=params.eta,
        b1=params.b1,
        b2=params.b2,
        traceless_l4=traceless_l4,
        area=geo.area,
        ratio_inner=ratio_inner,
        ratio_outer=ratio_outer,
        a_functional=a_func,
        max_A=max_a,
        min_kappa=min_kappa,
        osc_H=float(np.max(geo.H) - np.min(geo.H)),
        h1=h1,
        flags=flags,
        in_class=flags.all,
        **thresholds,
    )


class PerezDiagnostic(msgspec.Struct, frozen=True):
    lhs: float
    traceless_l4: float
    ratio: float | None


def perez_diagnostic(geo: SurfaceGeometry) -> PerezDiagnostic:
    """||H - mean H||_4 against ||traceless A||_4; the ratio should stay bounded for near-round surfaces."""
    dev = geo.H - sf.mean(geo.H, geo)
    lhs = sf.lp_norm(dev, geo, 4)
    traceless_l4 = sf.integrate(np.maximum(geo.traceless_A2, 0.0) ** 2, geo) ** 0.25
    # |A|^2 - H^2/2 carries round-off of order eps H^2, so |traceless A| sits near sqrt(eps) H on a round sphere
    if traceless_l4 <= 1e-6 * max(float(np.max(np.abs(geo.H))), 1e-300) * geo.area**0.25:
        return PerezDiagnostic(lhs, traceless_l4, None)
    return PerezDiagnostic(lhs, traceless_l4, lhs / traceless_l4)
