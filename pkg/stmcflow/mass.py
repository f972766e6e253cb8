"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

Quasi-local mass of surfaces and the barycenter drift of the flow's limits
across a sweep of radii.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Sequence

import msgspec
import numpy as np
import tqdm

from . import flow
from . import surface as sf
from .ambient import InitialDataSet
from .errors import FlowAbortedError, NonConvergenceError
from .grid import SphericalGrid
from .surface import GraphSurface, ShapeReport, SurfaceGeometry
from .utils import loglog_slope

log = logging.getLogger("stmcflow.mass")

VACUOUS_DRIFT = 1e-8
EXPONENT_TOLERANCE = 0.3


def hawking_mass(surface: GraphSurface, geo: SurfaceGeometry) -> float:
    """sqrt(|S|/16 pi) (1 - (1/16 pi) int H^2 dmu)."""
    if surface.grid is not geo.grid:
        msg = "Geometry does not belong to this surface's grid"
        raise ValueError(msg)
    willmore = sf.integrate(geo.H**2, geo) / (16 * np.pi)
    return float(np.sqrt(geo.area / (16 * np.pi)) * (1 - willmore))


class GaussBonnet(msgspec.Struct, frozen=True):
    total: float
    residual: float


def gauss_bonnet_check(geo: SurfaceGeometry) -> GaussBonnet:
    """|int S_Sigma / 2 dmu - 4 pi| with S_Sigma from the Gauss equation."""
    total = sf.integrate(geo.intrinsic_scalar / 2, geo)
    return GaussBonnet(total, abs(total - 4 * np.pi))


def well_centered_check(report: ShapeReport) -> bool:
    return 2 / 3 <= report.ratio_inner <= report.ratio_outer <= 1.5


class MassSample(msgspec.Struct, frozen=True):
    sigma: float
    hawking_mass: float
    area_radius: float


def hawking_mass_profile(ids: InitialDataSet, sigmas: Sequence[float], grid: SphericalGrid) -> list[MassSample]:
    """Hawking mass of centered coordinate spheres."""
    samples: list[MassSample] = []
    for sigma in sigmas:
        surface = sf.sphere(grid, sigma)
        geo = sf.geometry(surface, ids)
        samples.append(MassSample(sigma, hawking_mass(surface, geo), geo.area_radius))
    return samples


class DriftStudy(msgspec.Struct, frozen=True):
    q: float
    delta: float
    sigmas: list[float]
    z_start: list[list[float]]
    z_final: list[list[float]]
    drifts: list[float]
    fitted_alpha: float | None
    predicted_alpha: float
    vacuous: bool
    consistent: bool | None
    verdict: str


def _barycenter(surface: GraphSurface, ids: InitialDataSet) -> list[float]:
    geo = sf.geometry(surface, ids)
    return sf.shape_report(surface, geo).barycenter


def _partial(q: float, delta: float, sigmas: list[float], starts: list[list[float]], finals: list[list[float]]) -> DriftStudy:
    drifts = [float(np.linalg.norm(np.subtract(b, a))) for a, b in zip(starts, finals, strict=False)]
    return DriftStudy(
        q=q,
        delta=delta,
        sigmas=sigmas[: len(starts)],
        z_start=starts,
        z_final=finals,
        drifts=drifts,
        fitted_alpha=None,
        predicted_alpha=2 - q / 2 - q * delta,
        vacuous=True,
        consistent=None,
        verdict="incomplete",
    )


def drift_verdict(predicted: float, fitted: float | None) -> str:
    """Classify the drift by its exponent in sigma: the fitted one when available, else the predicted one."""
    exponent = predicted if fitted is None else fitted
    if exponent < -EXPONENT_TOLERANCE:
        return "vanishing"
    if exponent <= EXPONENT_TOLERANCE:
        return "bounded"
    return "growing"


def drift_study(
    ids: InitialDataSet,
    q: float,
    sigmas: Sequence[float],
    config: flow.FlowConfig,
    grid: SphericalGrid,
    *,
    use_tqdm: bool = False,
) -> DriftStudy:
    """Barycenter of the K-free limit against the barycenter of the q-flow limit, per sigma.

    The exponent of |z_final - z_start| in sigma is compared with 2 - q/2 - q delta.
    """
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) < 3 or any(b <= a for a, b in zip(sigmas, sigmas[1:], strict=False)):
        msg = f"Drift study needs at least 3 strictly increasing radii, got {sigmas}"
        raise ValueError(msg)
    if not ids.has_extrinsic:
        log.warning("Initial data carry no extrinsic curvature; the drift is zero and the fit is vacuous")
    config = msgspec.structs.replace(config, q=q, recentering=False)
    use_tqdm = use_tqdm or bool(os.getenv("USE_TQDM", None))
    starts: list[list[float]] = []
    finals: list[list[float]] = []
    for sigma in tqdm.tqdm(sigmas, desc="Radii", unit=" sigma", disable=not use_tqdm):
        state = flow.FlowState(sf.sphere(grid, sigma))
        try:
            pre = flow.pre_flow(state, ids, config)
        except FlowAbortedError as exc:
            msg = f"Pre-flow at sigma={sigma} aborted: {exc}"
            raise NonConvergenceError(msg, _partial(q, ids.delta, sigmas, starts, finals)) from exc
        if not pre.converged or pre.final_state is None:
            msg = f"Pre-flow at sigma={sigma} did not converge ({pre.stop_reason})"
            raise NonConvergenceError(msg, _partial(q, ids.delta, sigmas, starts, finals))
        start_state = flow.FlowState(pre.final_state.surface)
        starts.append(_barycenter(start_state.surface, ids))
        try:
            trace = flow.evolve(start_state, ids, config)
        except FlowAbortedError as exc:
            msg = f"q-flow at sigma={sigma} aborted: {exc}"
            raise NonConvergenceError(msg, _partial(q, ids.delta, sigmas, starts, finals)) from exc
        if not trace.converged or trace.final_state is None:
            msg = f"q-flow at sigma={sigma} did not converge ({trace.stop_reason})"
            raise NonConvergenceError(msg, _partial(q, ids.delta, sigmas, starts, finals))
        finals.append(_barycenter(trace.final_state.surface, ids))
        log.info("sigma=%g: barycenter moved from %s to %s", sigma, starts[-1], finals[-1])

    drifts = [float(np.linalg.norm(np.subtract(b, a))) for a, b in zip(starts, finals, strict=True)]
    predicted = 2 - q / 2 - q * ids.delta
    vacuous = max(drifts) < VACUOUS_DRIFT
    fit = None if vacuous else loglog_slope(sigmas, drifts)
    alpha = fit.slope if fit is not None else None
    consistent = None if alpha is None else alpha <= predicted + EXPONENT_TOLERANCE
    verdict = "vacuous" if vacuous else drift_verdict(predicted, alpha)
    if consistent is False:
        log.warning("Fitted drift exponent %.3f exceeds the predicted %.3f", alpha, predicted)
    return DriftStudy(
        q=q,
        delta=ids.delta,
        sigmas=sigmas,
        z_start=starts,
        z_final=finals,
        drifts=drifts,
        fitted_alpha=alpha,
        predicted_alpha=predicted,
        vacuous=vacuous,
        consistent=consistent,
        verdict=verdict,
    )
