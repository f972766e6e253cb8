"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

import msgspec
import numpy as np
import pytest

from stmcflow import flow
from stmcflow import surface as sf
from stmcflow.ambient import InitialDataSet
from stmcflow.errors import DomainError, FlowAbortedError, GraphBreakdownError, InsufficientDataError
from stmcflow.grid import SphericalGrid

AXES = (1.0, 1.0, 1.2)


@pytest.fixture(scope="module")
def ellipsoid_trace(grid16: SphericalGrid, euclid: InitialDataSet) -> flow.FlowTrace:
    state = flow.FlowState(sf.ellipsoid(grid16, AXES))
    return flow.evolve(state, euclid, flow.FlowConfig(report_every=5))


def test_config_violations() -> None:
    assert flow.FlowConfig().violations() == []
    found = flow.FlowConfig(q=1.5, cfl=2.0, report_every=0).violations()
    assert len(found) == 3
    assert "flow.q = 1.5 rejected: q >= 2 required" in found


def test_round_spheres_are_stationary(grid16: SphericalGrid, euclid: InitialDataSet, schw: InitialDataSet) -> None:
    for ids, radius in ((euclid, 3.0), (schw, 10.0)):
        sp = flow.speed_field(flow.FlowState(sf.sphere(grid16, radius)), ids, 2.0)
        assert sp.relative_residual < 1e-12
        assert flow.limit_residual(sf.sphere(grid16, radius), ids, 2.0) < 1e-12


def test_speed_sign_on_ellipsoid(grid16: SphericalGrid, euclid: InitialDataSet) -> None:
    sp = flow.speed_field(flow.FlowState(sf.ellipsoid(grid16, AXES)), euclid, 2.0)
    # more curved near the poles of a prolate ellipsoid
    assert sp.f[0, 0] > 0
    assert sp.f[grid16.n_theta // 2, 0] < 0


def test_step_validates_dt(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    state = flow.FlowState(sf.sphere(grid12, 1.0))
    with pytest.raises(ValueError, match="positive"):
        flow.step(state, euclid, flow.FlowConfig(), 0.0)


def test_step_keeps_round_sphere(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    state = flow.FlowState(sf.sphere(grid12, 2.0))
    after = flow.step(state, euclid, flow.FlowConfig(), 1e-2)
    assert np.max(np.abs(after.surface.rho - 2.0)) < 1e-13
    assert after.step == 1
    assert after.t == pytest.approx(1e-2)


def test_euler_step_reduces_residual(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    config = flow.FlowConfig(integrator="euler")
    state = flow.FlowState(sf.ellipsoid(grid12, AXES))
    before = flow.speed_field(state, euclid, 2.0)
    dt = 0.5 * flow.stable_dt(before.geometry, before.st, config)
    after = flow.speed_field(flow.step(state, euclid, config, dt), euclid, 2.0)
    assert sf.lp_norm(after.f, after.geometry, 2) < sf.lp_norm(before.f, before.geometry, 2)


def test_rk4_is_fourth_order(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    config = flow.FlowConfig(filter_order=0)
    start = flow.FlowState(sf.ellipsoid(grid12, (1.0, 1.0, 1.3)))
    t_end = 0.048
    finals = []
    for dt in (4e-3, 2e-3, 1e-3):
        state = start
        for _ in range(round(t_end / dt)):
            state = flow.step(state, euclid, config, dt)
        finals.append(state.surface.rho)
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert 12 < ratio < 20


def test_stable_dt_scales_with_radius(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    config = flow.FlowConfig()
    dts = []
    for radius in (1.0, 10.0):
        sp = flow.speed_field(flow.FlowState(sf.sphere(grid12, radius)), euclid, 2.0)
        dts.append(flow.stable_dt(sp.geometry, sp.st, config))
    assert dts[1] / dts[0] == pytest.approx(100.0, rel=1e-10)
    sp = flow.speed_field(flow.FlowState(sf.sphere(grid12, 1.0)), euclid, 2.0)
    euler = flow.stable_dt(sp.geometry, sp.st, flow.FlowConfig(integrator="euler"))
    assert euler / dts[0] == pytest.approx(2.0 / 2.5)


def test_stationary_start_converges_immediately(grid12: SphericalGrid, schw: InitialDataSet) -> None:
    trace = flow.evolve(flow.FlowState(sf.sphere(grid12, 10.0)), schw, flow.FlowConfig())
    assert trace.converged
    assert trace.stop_reason == "converged"
    assert len(trace.rows) == 1
    assert trace.final_state is not None
    assert trace.final_state.step == 0
    row = trace.rows[0]
    assert row.hbar_rate is None
    assert row.hawking_mass == pytest.approx(1.0, rel=1e-9)
    assert len(row.csv_row()) == len(flow.TRACE_COLUMNS)


def test_max_steps_stops_the_flow(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    seen: list[int] = []

    def record(state: flow.FlowState, _row: flow.TraceRow) -> None:
        seen.append(state.step)

    trace = flow.evolve(
        flow.FlowState(sf.ellipsoid(grid12, AXES)),
        euclid,
        flow.FlowConfig(max_steps=4, report_every=2),
        on_report=record,
    )
    assert not trace.converged
    assert trace.stop_reason == "max_steps"
    assert seen == [0, 2, 4]
    assert [r.step for r in trace.rows] == [0, 2, 4]
    assert trace.rows[1].hbar_rate is not None


def test_oversized_step_aborts(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    with pytest.raises(FlowAbortedError) as info:
        flow.evolve(flow.FlowState(sf.ellipsoid(grid12, AXES)), euclid, flow.FlowConfig(), dt=1e3)
    trace = info.value.trace
    assert isinstance(trace, flow.FlowTrace)
    assert trace.stop_reason == "aborted"
    assert len(trace.rows) == 1


def test_repeated_rejection_aborts_with_adaptive_steps(
    grid12: SphericalGrid, euclid: InitialDataSet, monkeypatch: pytest.MonkeyPatch
) -> None:
    tried: list[float] = []

    def failing(_state: flow.FlowState, _ids: InitialDataSet, _config: flow.FlowConfig, dt: float) -> flow.FlowState:
        tried.append(dt)
        msg = "radial graph lost"
        raise GraphBreakdownError(msg)

    monkeypatch.setattr(flow, "step", failing)
    with pytest.raises(FlowAbortedError) as info:
        flow.evolve(flow.FlowState(sf.ellipsoid(grid12, AXES)), euclid, flow.FlowConfig())
    assert info.value.trace.stop_reason == "aborted"
    assert info.value.trace.final_state.step == 0
    # four halvings down to the floor, then two rejections there
    assert len(tried) == flow.MAX_HALVINGS + 2
    for before, after in zip(tried[:4], tried[1:5], strict=True):
        assert after == pytest.approx(before / 2)
    assert tried[5] == tried[4] == pytest.approx(tried[0] / 2**flow.MAX_HALVINGS)


def test_step_into_the_core_is_retried(grid12: SphericalGrid, euclid: InitialDataSet, monkeypatch: pytest.MonkeyPatch) -> None:
    real_step = flow.step
    tried: list[float] = []

    def once_too_far(state: flow.FlowState, ids: InitialDataSet, config: flow.FlowConfig, dt: float) -> flow.FlowState:
        tried.append(dt)
        if len(tried) == 1:
            msg = "inside the excised core"
            raise DomainError(msg)
        return real_step(state, ids, config, dt)

    monkeypatch.setattr(flow, "step", once_too_far)
    trace = flow.evolve(flow.FlowState(sf.ellipsoid(grid12, AXES)), euclid, flow.FlowConfig(max_steps=2))
    assert trace.stop_reason == "max_steps"
    assert trace.final_state is not None
    assert trace.final_state.step == 2
    assert tried[1] == pytest.approx(tried[0] / 2)
    assert len(tried) == 3


def test_step_stops_at_the_excised_core(grid12: SphericalGrid, schw: InitialDataSet, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(flow, "_rho_rate", lambda surface, ids, q: -np.ones(surface.grid.shape))
    state = flow.FlowState(sf.sphere(grid12, 2.5))
    assert flow.step(state, schw, flow.FlowConfig(), 0.25).surface.rho == pytest.approx(np.full(grid12.shape, 2.25))
    with pytest.raises(DomainError, match="excised core"):
        flow.step(state, schw, flow.FlowConfig(), 1.0)


def test_trace_times_increase(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    trace = flow.evolve(flow.FlowState(sf.sphere(grid12, 1.0)), euclid, flow.FlowConfig())
    with pytest.raises(ValueError, match="increase"):
        trace.append(trace.rows[0])


def test_recentering_moves_to_barycenter(grid16: SphericalGrid, euclid: InitialDataSet) -> None:
    state = flow.FlowState(sf.sphere(grid16, 2.0, (0.4, 0.0, 0.0)))
    moved = flow.recenter_state(flow.FlowState(sf.recenter(state.surface, np.zeros(3))), euclid)
    assert np.allclose(moved.surface.center, [0.4, 0.0, 0.0], atol=1e-9)
    assert np.allclose(moved.surface.rho, 2.0, atol=1e-9)


def test_evolution_identities_on_sphere(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    res = flow.evolution_identity_check(flow.FlowState(sf.sphere(grid12, 2.0)), euclid, flow.FlowConfig(), 1e-2)
    assert res.metric < 1e-12
    assert res.measure < 1e-12
    assert res.mean_curvature < 1e-12


def test_evolution_identities_are_second_order(grid24: SphericalGrid, euclid: InitialDataSet) -> None:
    state = flow.FlowState(sf.ellipsoid(grid24, AXES))
    config = flow.FlowConfig()
    coarse = flow.evolution_identity_check(state, euclid, config, 1e-2)
    fine = flow.evolution_identity_check(state, euclid, config, 5e-3)
    # the metric is quadratic along a straight path, so only round-off remains
    assert coarse.metric_rel < 1e-9
    for item in ("measure_rel", "mean_curvature_rel"):
        ratio = getattr(coarse, item) / getattr(fine, item)
        assert 3.5 < ratio < 4.5
        assert getattr(fine, item) < 1e-2


def test_holder_lower_bound(grid24: SphericalGrid, euclid: InitialDataSet) -> None:
    check = flow.linf_from_l2_check(flow.FlowState(sf.ellipsoid(grid24, AXES)), euclid, 2.0)
    assert check.ratio is not None
    assert check.ratio >= 1
    still = flow.linf_from_l2_check(flow.FlowState(sf.sphere(grid24, 1.0)), euclid, 2.0)
    assert still.linf < 1e-12


def test_hbar_rate_order() -> None:
    assert flow.hbar_rate_order(10.0, 2.0, 0.5) == pytest.approx(10.0**-6)


def test_decay_fit_needs_data(grid12: SphericalGrid, schw: InitialDataSet) -> None:
    trace = flow.evolve(flow.FlowState(sf.sphere(grid12, 10.0)), schw, flow.FlowConfig())
    with pytest.raises(InsufficientDataError):
        flow.decay_fit(trace, schw, 10.0, energy=1.0)


def test_pre_flow_ignores_extrinsic_curvature(grid12: SphericalGrid) -> None:
    ids = InitialDataSet.schwarzschild_with_k(1.0, 0.05, decay_exponent=2.0, tilt=(0.0, 0.0, 0.5))
    trace = flow.pre_flow(flow.FlowState(sf.sphere(grid12, 10.0)), ids, flow.FlowConfig())
    assert trace.converged
    assert len(trace.rows) == 1
    moving = flow.speed_field(flow.FlowState(sf.sphere(grid12, 10.0)), ids, 2.0)
    assert moving.relative_residual > 1e-6


@pytest.mark.slow
def test_ellipsoid_converges_to_round_sphere(ellipsoid_trace: flow.FlowTrace, euclid: InitialDataSet) -> None:
    trace = ellipsoid_trace
    assert trace.converged
    final = trace.rows[-1]
    assert final.roundness.osc_H / final.hbar < 1e-6
    assert final.roundness.max_A * final.sigma < np.sqrt(2) * (1 + 1e-6)
    assert final.limit_residual < 1e-7
    assert abs(final.volume - trace.rows[0].volume) / trace.rows[0].volume < 1e-6
    assert final.area < trace.rows[0].area
    assert flow.roundness_monotone(trace)
    assert trace.rows[0].limit_residual > final.limit_residual


@pytest.mark.slow
def test_decay_fit_of_euclidean_flow(ellipsoid_trace: flow.FlowTrace, euclid: InitialDataSet) -> None:
    fit = flow.decay_fit(ellipsoid_trace, euclid, ellipsoid_trace.rows[-1].sigma)
    assert fit.rate < 0
    assert fit.energy == 0
    assert fit.satisfied is None


@pytest.mark.slow
def test_summary_of_converged_flow(ellipsoid_trace: flow.FlowTrace, euclid: InitialDataSet) -> None:
    summary = flow.summarize(ellipsoid_trace, euclid, 1)
    assert summary.converged
    assert summary.decay is not None
    assert summary.volume_drift is not None
    assert summary.volume_drift < 1e-6
    raw = msgspec.json.encode(summary)
    assert msgspec.json.decode(raw, type=flow.FlowSummary) == summary



@pytest.mark.slow
def test_converged_flow_stays_converged(ellipsoid_trace: flow.FlowTrace, euclid: InitialDataSet) -> None:
    start = ellipsoid_trace.final_state
    assert start is not None
    horizon = 6 * start.t
    trace = flow.evolve(start, euclid, flow.FlowConfig(stop_tol=1e-300, t_max=horizon, report_every=50))
    assert trace.stop_reason == "t_max"
    assert trace.final_state is not None
    assert trace.final_state.t == pytest.approx(horizon)
    for row in trace.rows:
        assert row.linf / row.hbar < 1e-8
        assert row.limit_residual < 1e-7
    assert abs(trace.rows[-1].volume - ellipsoid_trace.rows[0].volume) / ellipsoid_trace.rows[0].volume < 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("q", [2.0, 3.0])
def test_tilted_extrinsic_curvature_flow_converges(grid12: SphericalGrid, q: float) -> None:
    ids = InitialDataSet.schwarzschild_with_k(1.0, 0.05, decay_exponent=2.0, tilt=(0.0, 0.0, 0.3))
    trace = flow.evolve(flow.FlowState(sf.sphere(grid12, 20.0)), ids, flow.FlowConfig(q=q, t_max=1e6))
    assert trace.converged
    first, final = trace.rows[0], trace.rows[-1]
    assert final.linf / final.hbar < 1e-8
    assert final.limit_residual < 1e-6
    assert final.limit_residual < first.limit_residual
    assert abs(final.volume - first.volume) / first.volume < 1e-6
    # the round start is in the class and the flow keeps it there
    assert all(row.roundness.in_class for row in trace.rows)
    assert flow.roundness_monotone(trace)


@pytest.mark.slow
def test_residual_decays_faster_than_the_energy_bound(grid12: SphericalGrid, schw: InitialDataSet) -> None:
    state = flow.FlowState(sf.perturbed_sphere(grid12, 20.0, 0.01, 2, 0))
    trace = flow.evolve(state, schw, flow.FlowConfig(report_every=5, t_max=1e6))
    assert trace.converged
    fit = flow.decay_fit(trace, schw, trace.rows[-1].sigma)
    assert fit.energy == pytest.approx(1.0, rel=0.02)
    assert fit.bound_l2 == pytest.approx(fit.energy / (6 * fit.sigma**3))
    assert fit.satisfied is True
    assert fit.rate < -0.9 * fit.bound_l2
