"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

Volume preserving q-spacetime mean curvature flow dF/dt = -(Hq - hbar) nu,
integrated on the radial graph function with explicit Runge-Kutta steps.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from typing import Literal

import msgspec
import numpy as np
import tqdm

from . import mass
from . import stcurv as stc
from . import surface as sf
from .ambient import InitialDataSet, adm_energy
from .errors import (
    AdmissibilityError,
    DegenerateImmersionError,
    DomainError,
    FlowAbortedError,
    GraphBreakdownError,
    InsufficientDataError,
    NumericError,
    PropagationError,
)
from .grid import build_grid
from .stcurv import ClassParams, RoundnessReport, STCurvature
from .surface import GraphSurface, SurfaceGeometry
from .utils import linear_fit

log = logging.getLogger("stmcflow.flow")

# real-axis stability interval of the explicit schemes
STABILITY_LIMIT = {"rk4": 2.5, "euler": 2.0}
RECENTER_MARGIN = 0.3
MAX_HALVINGS = 4
ADM_RADIUS = 400.0

_REJECTABLE = (GraphBreakdownError, AdmissibilityError, DegenerateImmersionError, DomainError, PropagationError)


class FlowConfig(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    q: float = 2.0
    cfl: float = 0.5
    t_max: float = 1e5
    stop_tol: float = 1e-8
    report_every: int = 10
    recentering: bool = False
    max_steps: int = 200_000
    filter_order: int = 36
    integrator: Literal["rk4", "euler"] = "rk4"

    def violations(self) -> list[str]:
        found: list[str] = []
        if self.q < 2:
            found.append(f"flow.q = {self.q} rejected: q >= 2 required")
        if not 0 < self.cfl <= 1:
            found.append(f"flow.cfl = {self.cfl} rejected: 0 < cfl <= 1 required")
        if self.t_max <= 0:
            found.append(f"flow.t_max = {self.t_max} rejected: must be positive")
        if self.stop_tol <= 0:
            found.append(f"flow.stop_tol = {self.stop_tol} rejected: stop_tol > 0 required")
        if self.report_every < 1:
            found.append(f"flow.report_every = {self.report_every} rejected: must be at least 1")
        if self.max_steps < 1:
            found.append(f"flow.max_steps = {self.max_steps} rejected: must be at least 1")
        if self.filter_order < 0:
            found.append(f"flow.filter_order = {self.filter_order} rejected: must be non-negative")
        return found


@dataclass(frozen=True, eq=False)
class FlowState:
    surface: GraphSurface
    t: float = 0.0
    step: int = 0


@dataclass(frozen=True, eq=False)
class SpeedField:
    f: np.ndarray
    geometry: SurfaceGeometry
    st: STCurvature

    @property
    def relative_residual(self) -> float:
        return float(np.max(np.abs(self.f))) / self.st.hbar


def speed_field(state: FlowState, ids: InitialDataSet, q: float) -> SpeedField:
    """f = Hq - hbar restricted to the resolved harmonics, with zero integral under the surface quadrature.

    Products of the geometry carry energy above the truncation degree; the discrete flow can only act
    on the resolved part, so that part is the speed it drives to zero.
    """
    geo = sf.geometry(state.surface, ids)
    st = stc.st_curvature(geo, q)
    f = geo.grid.project(st.speed)
    f = f - sf.mean(f, geo)
    return SpeedField(f, geo, st)


def _rho_rate(surface: GraphSurface, ids: InitialDataSet, q: float) -> np.ndarray:
    sp = speed_field(FlowState(surface), ids, q)
    geo = sp.geometry
    rate = geo.grid.project(-sp.f / geo.omega_dot_nu)
    # normal speed is rate * g(omega, nu); remove its dmu-mean so the enclosed volume is held
    normal = rate * geo.omega_dot_nu
    return rate - sf.integrate(normal, geo) / sf.integrate(geo.omega_dot_nu, geo)


def stable_dt(geo: SurfaceGeometry, st: STCurvature, config: FlowConfig) -> float:
    """Largest explicit step for the linearised flow, scaled by cfl."""
    lmax = geo.grid.lmax
    phi_max = float(np.max((st.H / st.Hq) ** (st.q - 1)))
    scale = phi_max * (lmax * (lmax + 1) / geo.area_radius**2 + float(np.max(geo.A2)))
    return config.cfl * STABILITY_LIMIT[config.integrator] / scale


def step(state: FlowState, ids: InitialDataSet, config: FlowConfig, dt: float) -> FlowState:
    """Advance rho by one explicit step of d rho/dt = -f / g(omega, nu).

    rho is kept in the span of the resolved harmonics. Raises GraphBreakdownError, AdmissibilityError,
    DomainError or PropagationError when a stage leaves the regime where the graph flow is defined;
    the caller treats this as a rejected step.
    """
    if dt <= 0:
        msg = f"dt must be positive, got {dt}"
        raise ValueError(msg)
    surf = state.surface
    grid = surf.grid
    q = config.q
    rho0 = grid.project(surf.rho)

    def rate(rho: np.ndarray) -> np.ndarray:
        return _rho_rate(surf.with_rho(rho), ids, q)

    k1 = rate(rho0)
    if config.integrator == "euler":
        rho = rho0 + dt * k1
    else:
        k2 = rate(rho0 + 0.5 * dt * k1)
        k3 = rate(rho0 + 0.5 * dt * k2)
        k4 = rate(rho0 + dt * k3)
        rho = rho0 + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(rho)):
        msg = f"Non-finite radius after step {state.step} at t={state.t}"
        raise PropagationError(msg)
    rho = grid.apply_filter(rho, config.filter_order)
    moved = surf.with_rho(rho)
    reach = float(np.min(np.linalg.norm(moved.positions, axis=-1)))
    if reach <= ids.r_min:
        msg = f"Step {state.step} at t={state.t} moves the surface to |x| = {reach:.6g}, inside the excised core |x| < {ids.r_min}"
        raise DomainError(msg)
    return FlowState(moved, state.t + dt, state.step + 1)


def recenter_state(state: FlowState, ids: InitialDataSet) -> FlowState:
    """Move the graph center to the area barycenter of the current surface."""
    F, dF, ddF = sf.graph_embedding(state.surface)
    geo = sf.embedded_geometry(state.surface.grid, ids, F, dF, ddF, check_graph=False)
    bary = np.sum(geo.position * geo.measure[..., None], axis=(0, 1)) / geo.area
    return replace(state, surface=sf.recenter(state.surface, bary))


class TraceRow(msgspec.Struct, frozen=True):
    t: float
    step: int
    dt: float
    hbar: float
    l2: float
    linf: float
    grad_l4: float
    volume: float
    area: float
    sigma: float
    bary_x: float
    bary_y: float
    bary_z: float
    hawking_mass: float
    theta_minus_min: float
    limit_residual: float
    hbar_rate: float | None
    roundness: RoundnessReport

    def csv_row(self) -> list[object]:
        r = self.roundness
        return [
            self.t,
            self.step,
            self.dt,
            self.hbar,
            self.l2,
            self.linf,
            self.grad_l4,
            self.volume,
            self.area,
            self.sigma,
            self.bary_x,
            self.bary_y,
            self.bary_z,
            self.hawking_mass,
            self.theta_minus_min,
            self.limit_residual,
            self.hbar_rate,
            r.traceless_l4,
            r.a_functional,
            r.max_A,
            r.min_kappa,
            r.osc_H,
            r.h1,
            r.in_class,
        ]


TRACE_COLUMNS = (
    "t",
    "step",
    "dt",
    "hbar",
    "l2",
    "linf",
    "grad_l4",
    "volume",
    "area",
    "sigma",
    "bary_x",
    "bary_y",
    "bary_z",
    "hawking_mass",
    "theta_minus_min",
    "limit_residual",
    "hbar_rate",
    "traceless_l4",
    "a_functional",
    "max_A",
    "min_kappa",
    "osc_H",
    "h1",
    "in_class",
)


@dataclass(eq=False)
class FlowTrace:
    config: FlowConfig
    rows: list[TraceRow] = field(default_factory=list[TraceRow])
    converged: bool = False
    final_state: FlowState | None = None
    stop_reason: str = ""

    @property
    def flagged_cstmc(self) -> bool:
        return self.converged

    def append(self, row: TraceRow) -> None:
        if self.rows and row.t <= self.rows[-1].t:
            msg = f"Trace times must increase strictly ({row.t} after {self.rows[-1].t})"
            raise ValueError(msg)
        self.rows.append(row)


def limit_residual_of(st: STCurvature) -> float:
    q = st.q
    return float(np.max(np.abs(st.H**q - np.abs(st.P) ** q - st.hbar**q))) / st.hbar**q


def limit_residual(surface: GraphSurface, ids: InitialDataSet, q: float) -> float:
    """max |H^q - |P|^q - hbar^q| / hbar^q."""
    geo = sf.geometry(surface, ids)
    return limit_residual_of(stc.st_curvature(geo, q))


def _diagnostics(
    state: FlowState,
    sp: SpeedField,
    dt: float,
    params: ClassParams,
    previous: TraceRow | None,
) -> TraceRow:
    geo, st, f = sp.geometry, sp.st, sp.f
    grad2 = np.maximum(sf.gradient_norm2(st.Hq, geo), 0.0)
    shape = sf.shape_report(state.surface, geo)
    hbar_rate = None
    if previous is not None and state.t > previous.t:
        hbar_rate = (st.hbar - previous.hbar) / (state.t - previous.t)
    return TraceRow(
        t=state.t,
        step=state.step,
        dt=dt,
        hbar=st.hbar,
        l2=sf.lp_norm(f, geo, 2),
        linf=sf.lp_norm(f, geo, np.inf),
        grad_l4=sf.integrate(grad2**2, geo) ** 0.25,
        volume=shape.volume,
        area=shape.area,
        sigma=shape.sigma,
        bary_x=shape.barycenter[0],
        bary_y=shape.barycenter[1],
        bary_z=shape.barycenter[2],
        hawking_mass=mass.hawking_mass(state.surface, geo),
        theta_minus_min=float(np.min(st.theta_minus)),
        limit_residual=limit_residual_of(st),
        hbar_rate=hbar_rate,
        roundness=stc.roundness_report(state.surface, geo, st, params),
    )


def evolve(
    state: FlowState,
    ids: InitialDataSet,
    config: FlowConfig,
    *,
    params: ClassParams | None = None,
    dt: float | None = None,
    use_tqdm: bool = False,
    on_report: Callable[[FlowState, TraceRow], None] | None = None,
) -> FlowTrace:
    """Run the flow until ||f||_inf / hbar < stop_tol, t_max or max_steps.

    The step size is recomputed from the current geometry at every report unless ``dt`` is given.
    """
    params = params or ClassParams()
    use_tqdm = use_tqdm or bool(os.getenv("USE_TQDM", None))
    trace = FlowTrace(config)
    bar = tqdm.tqdm(total=config.t_max, desc="Flow time", unit=" t", leave=False) if use_tqdm else None
    dt_cur = dt
    dt_floor = 0.0 if dt is None else dt / 2**MAX_HALVINGS
    # set while halving after a rejection; the step size and its floor stay pinned until a step is accepted
    retrying = False
    floor_rejections = 0
    try:
        while True:
            try:
                sp = speed_field(state, ids, config.q)
                if sp.geometry.graph_margin < RECENTER_MARGIN:
                    log.info("Graph margin %.3f below %.1f at t=%g; recentering", sp.geometry.graph_margin, RECENTER_MARGIN, state.t)
                    state = recenter_state(state, ids)
                    sp = speed_field(state, ids, config.q)
            except NumericError as exc:
                trace.final_state = state
                trace.stop_reason = "aborted"
                msg = f"Geometry failed at t={state.t} (step {state.step}): {exc}"
                raise FlowAbortedError(msg, trace) from exc

            residual = sp.relative_residual
            converged = residual < config.stop_tol
            finished = converged or state.t >= config.t_max or state.step >= config.max_steps
            due = state.step % config.report_every == 0
            if dt is None and not retrying and (due or dt_cur is None):
                dt_cur = stable_dt(sp.geometry, sp.st, config)
                dt_floor = dt_cur / 2**MAX_HALVINGS
            assert dt_cur is not None  # noqa: S101
            if (due or finished) and (not trace.rows or state.t > trace.rows[-1].t):
                row = _diagnostics(state, sp, dt_cur, params, trace.rows[-1] if trace.rows else None)
                trace.append(row)
                log.debug("t=%.6g step=%d hbar=%.10g linf/hbar=%.3e", state.t, state.step, row.hbar, residual)
                if on_report is not None:
                    on_report(state, row)
            if finished:
                trace.converged = converged
                trace.stop_reason = "converged" if converged else ("t_max" if state.t >= config.t_max else "max_steps")
                break

            h = min(dt_cur, config.t_max - state.t)
            try:
                new_state = step(state, ids, config, h)
            except _REJECTABLE as exc:
                retrying = True
                if dt_cur <= dt_floor * (1 + 1e-12):
                    floor_rejections += 1
                    if floor_rejections >= 2:
                        trace.final_state = state
                        trace.stop_reason = "aborted"
                        msg = f"Step rejected twice at the minimum step {dt_cur:.3g} (t={state.t}): {exc}"
                        raise FlowAbortedError(msg, trace) from None
                dt_cur = max(dt_cur / 2, dt_floor)
                log.warning("Step at t=%g rejected (%s); retrying with dt=%.3g", state.t, exc, dt_cur)
                continue

            retrying = False
            floor_rejections = 0
            state = new_state
            if bar is not None:
                bar.update(h)
            if config.recentering and state.step % config.report_every == 0:
                state = recenter_state(state, ids)
    finally:
        if bar is not None:
            bar.close()

    trace.final_state = state
    if trace.converged:
        log.info("Converged to a constant spacetime mean curvature surface at t=%g after %d steps", state.t, state.step)
    else:
        log.info("Stopped at t=%g after %d steps (%s) with linf/hbar=%.3e", state.t, state.step, trace.stop_reason, residual)
    return trace


def pre_flow(
    state: FlowState,
    ids: InitialDataSet,
    config: FlowConfig,
    *,
    use_tqdm: bool = False,
) -> FlowTrace:
    """Volume preserving mean curvature flow: the same flow with K switched off."""
    return evolve(state, ids.without_extrinsic(), config, use_tqdm=use_tqdm)


class IdentityResidual(msgspec.Struct, frozen=True):
    dt: float
    metric: float
    measure: float
    mean_curvature: float
    metric_rel: float
    measure_rel: float
    mean_curvature_rel: float


def evolution_identity_check(state: FlowState, ids: InitialDataSet, config: FlowConfig, dt: float) -> IdentityResidual:
    """Central differences in t of g_ij, the area element and H along the normal flow F - t f nu."""
    surf = state.surface
    grid = surf.grid
    sp = speed_field(state, ids, config.q)
    geo0, f = sp.geometry, sp.f
    F0, dF0, ddF0 = sf.graph_embedding(surf)
    V = f[..., None] * geo0.normal
    d = grid.derivatives(np.moveaxis(V, -1, 0))
    dV = np.stack([np.moveaxis(d.t, 0, -1), np.moveaxis(d.p, 0, -1)], axis=-2)
    v_tt, v_tp, v_pp = (np.moveaxis(x, 0, -1) for x in (d.tt, d.tp, d.pp))
    ddV = np.stack([np.stack([v_tt, v_tp], axis=-2), np.stack([v_tp, v_pp], axis=-2)], axis=-3)

    def at(t: float) -> SurfaceGeometry:
        return sf.embedded_geometry(grid, ids, F0 - t * V, dF0 - t * dV, ddF0 - t * ddV, check_graph=False)

    plus, minus = at(dt), at(-dt)
    rhs_metric = -2 * f[..., None, None] * geo0.second_form
    rhs_measure = -f * geo0.H * geo0.sqrt_det
    rhs_h = sf.laplacian(f, geo0) + f * (geo0.A2 + geo0.ric_nn)
    res_metric = float(np.max(np.abs((plus.metric - minus.metric) / (2 * dt) - rhs_metric)))
    res_measure = float(np.max(np.abs((plus.sqrt_det - minus.sqrt_det) / (2 * dt) - rhs_measure)))
    res_h = float(np.max(np.abs((plus.H - minus.H) / (2 * dt) - rhs_h)))

    def rel(res: float, rhs: np.ndarray) -> float:
        scale = float(np.max(np.abs(rhs)))
        return res / scale if scale > 0 else 0.0

    return IdentityResidual(
        dt=dt,
        metric=res_metric,
        measure=res_measure,
        mean_curvature=res_h,
        metric_rel=rel(res_metric, rhs_metric),
        measure_rel=rel(res_measure, rhs_measure),
        mean_curvature_rel=rel(res_h, rhs_h),
    )


class DecayFit(msgspec.Struct, frozen=True):
    rate: float
    r2: float
    energy: float
    sigma: float
    bound: float
    bound_l2: float
    bound_strong: float
    satisfied: bool | None


def decay_fit(trace: FlowTrace, ids: InitialDataSet, sigma: float, energy: float | None = None) -> DecayFit:
    """Exponential rate of ||Hq - hbar||_2 along the trace against the energy bound.

    The squared norm is bounded by rate E/(3 sigma^3), so the norm itself by E/(6 sigma^3).
    """
    rows = [r for r in trace.rows if r.l2 > 0]
    if len(rows) < 10:
        msg = f"Decay fit needs at least 10 reports with a non-zero residual, got {len(rows)}"
        raise InsufficientDataError(msg)
    l2 = np.array([r.l2 for r in rows])
    decades = float(np.log10(np.max(l2) / np.min(l2)))
    if decades < 2:
        msg = f"Residual spans only {decades:.2f} decades; at least 2 are needed for a decay fit"
        raise InsufficientDataError(msg)
    fit = linear_fit([r.t for r in rows], np.log(l2))
    if energy is None:
        energy = 0.0 if ids.r_min == 0 else adm_energy(ids, ADM_RADIUS, build_grid(16, 32))
    bound = energy / (3 * sigma**3)
    bound_l2 = energy / (6 * sigma**3)
    satisfied = None if energy <= 0 else fit.slope <= -0.9 * bound_l2
    return DecayFit(
        rate=fit.slope,
        r2=fit.r2,
        energy=energy,
        sigma=sigma,
        bound=bound,
        bound_l2=bound_l2,
        bound_strong=energy / sigma**3,
        satisfied=satisfied,
    )


def hbar_rate_order(sigma: float, q: float, delta: float) -> float:
    """The order sigma^(-7/2 - q/2 - delta - q delta) bounding d hbar / dt."""
    return sigma ** (-3.5 - q / 2 - delta - q * delta)


class HolderCheck(msgspec.Struct, frozen=True):
    l2_squared: float
    linf: float
    holder_constant: float
    lower_bound: float
    ratio: float | None


def linf_from_l2_check(state: FlowState, ids: InitialDataSet, q: float, max_nodes: int = 2048) -> HolderCheck:
    """||f||_2^2 against pi ||f||_inf^6 / (16 L^4), L the 1/2-Holder constant of f over node pairs."""
    sp = speed_field(state, ids, q)
    geo, f = sp.geometry, sp.f
    pts = geo.position.reshape(-1, 3)
    vals = f.reshape(-1)
    stride = max(1, int(np.ceil(vals.size / max_nodes)))
    pts, vals = pts[::stride], vals[::stride]
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    diff = np.abs(vals[:, None] - vals[None, :])
    off = dist > 0
    holder = float(np.max(diff[off] / np.sqrt(dist[off]))) if np.any(off) else 0.0
    l2_sq = sf.integrate(f**2, geo)
    linf = float(np.max(np.abs(f)))
    if holder == 0:
        return HolderCheck(l2_sq, linf, holder, 0.0, None)
    lower = np.pi * linf**6 / (16 * holder**4)
    return HolderCheck(l2_sq, linf, holder, lower, l2_sq / lower if lower > 0 else None)


def roundness_monotone(trace: FlowTrace) -> bool:
    """Each class flag, once true along the trace, stays true."""
    names = msgspec.structs.fields(stc.ClassFlags)
    for f in names:
        seen = False
        for row in trace.rows:
            value = getattr(row.roundness.flags, f.name)
            if seen and not value:
                return False
            seen = seen or value
    return True


class FlowSummary(msgspec.Struct, frozen=True):
    schema_version: int
    converged: bool
    stop_reason: str
    t_final: float
    steps: int
    reports: int
    final_linf_rel: float | None
    final_l2: float | None
    limit_residual: float | None
    volume_drift: float | None
    hbar_final: float | None
    roundness_monotone: bool
    hbar_rate_order: float | None
    max_abs_hbar_rate: float | None
    decay: DecayFit | None


def summarize(trace: FlowTrace, ids: InitialDataSet, schema_version: int) -> FlowSummary:
    rows = trace.rows
    last = rows[-1] if rows else None
    final = trace.final_state
    sigma = last.sigma if last else None
    decay = None
    if sigma is not None:
        try:
            decay = decay_fit(trace, ids, sigma)
        except InsufficientDataError as exc:
            log.info("No decay fit: %s", exc)
    rates = [abs(r.hbar_rate) for r in rows if r.hbar_rate is not None]
    return FlowSummary(
        schema_version=schema_version,
        converged=trace.converged,
        stop_reason=trace.stop_reason,
        t_final=final.t if final else 0.0,
        steps=final.step if final else 0,
        reports=len(rows),
        final_linf_rel=last.linf / last.hbar if last else None,
        final_l2=last.l2 if last else None,
        limit_residual=last.limit_residual if last else None,
        volume_drift=abs(last.volume - rows[0].volume) / rows[0].volume if last else None,
        hbar_final=last.hbar if last else None,
        roundness_monotone=roundness_monotone(trace),
        hbar_rate_order=hbar_rate_order(sigma, trace.config.q, ids.delta) if sigma else None,
        max_abs_hbar_rate=max(rates) if rates else None,
        decay=decay,
    )
