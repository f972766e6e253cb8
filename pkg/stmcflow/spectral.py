"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

Laplace-Beltrami spectrum and stability operator of a surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import msgspec
import numpy as np
import scipy.linalg

from . import surface as sf
from .ambient import InitialDataSet
from .errors import NumericError
from .stcurv import STCurvature
from .surface import GraphSurface, SurfaceGeometry

log = logging.getLogger("stmcflow.spectral")

MAX_BASIS_DEGREE = 32
DEGENERACY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenpairs of -Delta with fields orthonormal in the surface L2 product."""

    values: np.ndarray
    fields: np.ndarray
    coefficients: np.ndarray
    degrees: np.ndarray
    stiffness_asymmetry: float
    collocation_asymmetry: float
    orthonormality_error: float

    def __len__(self) -> int:
        return len(self.values)


def _gram(a: np.ndarray, b: np.ndarray, weight: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    return (a.reshape(n, -1) * weight.reshape(-1)) @ b.reshape(b.shape[0], -1).T


def laplace_eigs(
    surface: GraphSurface,
    geo: SurfaceGeometry,
    k: int,
    *,
    max_degree: int | None = None,
) -> EigenSystem:
    """Solve K c = lambda M c in the real harmonic basis with the surface quadrature.

    K_ab = int g^ij d_i Y_a d_j Y_b dmu and M_ab = int Y_a Y_b dmu.
    """
    grid = surface.grid
    if not 1 <= k <= grid.size // 4:
        msg = f"Requested {k} eigenpairs; between 1 and {grid.size // 4} are available on this grid"
        raise ValueError(msg)
    Y, Yt, Yp, degrees = grid.real_basis
    top = min(grid.lmax, MAX_BASIS_DEGREE if max_degree is None else max_degree)
    keep = degrees <= top
    Y, Yt, Yp, degrees = Y[keep], Yt[keep], Yp[keep], degrees[keep]
    if k > len(degrees):
        msg = f"Basis up to degree {top} holds {len(degrees)} functions, fewer than the {k} requested"
        raise ValueError(msg)

    meas = geo.measure
    ginv = geo.metric_inv
    mass = _gram(Y, Y, meas)
    stiff = (
        _gram(Yt, Yt, meas * ginv[..., 0, 0])
        + _gram(Yt, Yp, meas * ginv[..., 0, 1])
        + _gram(Yp, Yt, meas * ginv[..., 1, 0])
        + _gram(Yp, Yp, meas * ginv[..., 1, 1])
    )
    asym = float(np.linalg.norm(stiff - stiff.T) / max(np.linalg.norm(stiff), 1e-300))
    stiff = 0.5 * (stiff + stiff.T)
    mass = 0.5 * (mass + mass.T)

    try:
        values, vecs = scipy.linalg.eigh(stiff, mass, subset_by_index=[0, k - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = float(np.linalg.cond(mass))
        msg = f"Generalized eigenproblem failed ({exc}); mass matrix condition number {cond:.3e}"
        raise NumericError(msg) from None

    # sign: largest coefficient positive, so eigenpairs are reproducible
    lead = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[lead, np.arange(k)])
    fields = np.einsum("ak,a...->k...", vecs, Y)

    sample = Y[: min(16, len(Y))]
    lap = _gram(-sf.laplacian(sample, geo), sample, meas)
    col_asym = float(np.max(np.abs(lap - lap.T)) / max(float(np.max(np.abs(lap))), 1e-300))
    ortho = float(np.max(np.abs(_gram(fields, fields, meas) - np.eye(k))))
    log.debug(
        "Computed %d eigenpairs from %d basis functions (asymmetry %.2e, orthonormality %.2e)",
        k,
        len(degrees),
        asym,
        ortho,
    )
    return EigenSystem(values, fields, vecs, degrees, asym, col_asym, ortho)


def count_below(eigs: EigenSystem, threshold: float) -> int:
    return int(np.count_nonzero(eigs.values < threshold))


def _check_same_data(geo: SurfaceGeometry, ids: InitialDataSet) -> None:
    if geo.ids != ids:
        msg = "Geometry was computed in a different initial data set"
        raise ValueError(msg)


def stability_apply(geo: SurfaceGeometry, ids: InitialDataSet, w: np.ndarray) -> np.ndarray:
    """L w = Delta w + w (|A|^2 + Ric(nu, nu))."""
    _check_same_data(geo, ids)
    return sf.laplacian(w, geo) + w * (geo.A2 + geo.ric_nn)


@dataclass(frozen=True, eq=False)
class SplitField:
    w0: np.ndarray
    wt: np.ndarray
    wd: np.ndarray
    coefficients: np.ndarray
    ambiguous: bool


def _inner(a: np.ndarray, b: np.ndarray, geo: SurfaceGeometry) -> float:
    return sf.integrate(a * b, geo)


def translational_split(w: np.ndarray, eigs: EigenSystem, geo: SurfaceGeometry) -> SplitField:
    """w = w0 + wt + wd: mean, projection on f_1..f_3, and the remaining difference part."""
    if len(eigs) < 4:
        msg = f"Translational split needs at least 4 eigenpairs, got {len(eigs)}"
        raise ValueError(msg)
    w0 = np.full_like(w, sf.mean(w, geo))
    coeffs = np.array([_inner(w, eigs.fields[i], geo) for i in (1, 2, 3)])
    wt = np.einsum("i,i...->...", coeffs, eigs.fields[1:4])
    wd = w - w0 - wt
    ambiguous = False
    if len(eigs) > 4:
        gap = abs(eigs.values[4] - eigs.values[3])
        ambiguous = gap <= DEGENERACY_TOL * max(1.0, abs(eigs.values[3]))
        if ambiguous:
            log.warning("Eigenvalues 3 and 4 coincide (gap %.3e); the translational part is ambiguous", gap)
    return SplitField(w0, wt, wd, coeffs, ambiguous)


class StabilityForm(msgspec.Struct, frozen=True):
    value: float
    bound: float
    norm2: float
    removed_mean: float
    translational_fraction: float
    satisfied: bool


def stability_form(
    geo: SurfaceGeometry,
    ids: InitialDataSet,
    eigs: EigenSystem,
    w: np.ndarray,
    energy: float,
) -> StabilityForm:
    """int (L w) w dmu for mean-free w, against -5 E / sigma^3 ||w||_2^2."""
    removed = sf.mean(w, geo)
    w = w - removed
    value = _inner(stability_apply(geo, ids, w), w, geo)
    norm2 = _inner(w, w, geo)
    bound = -5 * energy / geo.area_radius**3 * norm2
    split = translational_split(w, eigs, geo) if len(eigs) >= 4 else None
    fraction = _inner(split.wt, split.wt, geo) / norm2 if split is not None and norm2 > 0 else 0.0
    return StabilityForm(value, bound, norm2, removed, fraction, value <= bound)


class SpectralCompatibility(msgspec.Struct, frozen=True):
    sigma: float
    c_inf: float
    c_2: float


def spectral_compatibility(
    surface: GraphSurface,
    geo: SurfaceGeometry,
    st: STCurvature,
    sigma: float,
) -> SpectralCompatibility:
    """Smallest c_inf, c_2 for which the compatibility inequalities hold. Reported, not enforced."""
    compat = _compatibility(geo, st.speed, sigma)
    log.debug("Spectral compatibility of surface at %s: c_inf=%.4g c_2=%.4g", surface.center, compat.c_inf, compat.c_2)
    return compat


def _compatibility(geo: SurfaceGeometry, speed: np.ndarray, sigma: float) -> SpectralCompatibility:
    delta = geo.ids.delta
    ratio = geo.area_radius / sigma
    sup_dev = float(np.max(np.abs(geo.H - sf.mean(geo.H, geo))))
    c_inf = max(ratio, 1 / ratio, sup_dev * sigma ** (1.5 + delta))
    c_2 = sf.lp_norm(speed, geo, 2) * sigma ** (1 + 2 * delta)
    return SpectralCompatibility(sigma, c_inf, c_2)


class RefinedEigenCheck(msgspec.Struct, frozen=True):
    lambdas: list[float]
    residuals: list[float]
    cross_terms: list[float]
    hawking_mass: float
    compatibility: SpectralCompatibility


def refined_eigen_check(
    geo: SurfaceGeometry,
    ids: InitialDataSet,
    eigs: EigenSystem,
    m_h: float,
    st: STCurvature | None = None,
) -> RefinedEigenCheck:
    """|lambda_i - hbar^2/2 - 6 m_H / sigma^3 - int Ric(nu,nu) f_i^2| for the translational triple."""
    if len(eigs) < 4:
        msg = f"Refined eigenvalue check needs at least 4 eigenpairs, got {len(eigs)}"
        raise ValueError(msg)
    sigma = geo.area_radius
    _check_same_data(geo, ids)
    ric = geo.ric_nn
    hbar = st.hbar if st is not None else sf.mean(geo.H, geo)
    speed = st.speed if st is not None else geo.H - hbar
    f = eigs.fields
    residuals = [
        abs(float(eigs.values[i]) - hbar**2 / 2 - 6 * m_h / sigma**3 - _inner(ric, f[i] ** 2, geo)) for i in (1, 2, 3)
    ]
    cross = [abs(_inner(ric * f[i], f[j], geo)) for i, j in ((1, 2), (1, 3), (2, 3))]
    compat = _compatibility(geo, speed, sigma)
    return RefinedEigenCheck([float(v) for v in eigs.values[1:4]], residuals, cross, m_h, compat)


class AxisMatch(msgspec.Struct, frozen=True):
    index: int
    axis: int
    overlap: float
    distance: float


class AxisAlignment(msgspec.Struct, frozen=True):
    matches: list[AxisMatch]
    cluster_spread: float


def axis_alignment(eigs: EigenSystem, geo: SurfaceGeometry) -> AxisAlignment:
    """Closest coordinate function sqrt(3/(4 pi sigma^4)) x_a to each of f_1, f_2, f_3.

    The distance is the L2 distance after matching signs. Inside a degenerate cluster the
    individual eigenfields are only defined up to rotation, so the matches are informational.
    """
    if len(eigs) < 4:
        msg = f"Axis alignment needs at least 4 eigenpairs, got {len(eigs)}"
        raise ValueError(msg)
    sigma = geo.area_radius
    scale = np.sqrt(3 / (4 * np.pi * sigma**4))
    coords = [scale * (geo.position[..., a] - sf.mean(geo.position[..., a], geo)) for a in range(3)]
    matches: list[AxisMatch] = []
    for i in (1, 2, 3):
        f = eigs.fields[i]
        overlaps = [_inner(f, c, geo) for c in coords]
        axis = int(np.argmax(np.abs(overlaps)))
        sign = 1.0 if overlaps[axis] >= 0 else -1.0
        dist = sf.lp_norm(f - sign * coords[axis], geo, 2)
        matches.append(AxisMatch(i, axis, float(overlaps[axis]), dist))
    spread = float(np.max(eigs.values[1:4]) - np.min(eigs.values[1:4]))
    return AxisAlignment(matches, spread)
