"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

import argparse
import datetime
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, Protocol, TypeVar

import msgspec
import numpy as np

from . import __version__, flow, mass, spectral
from . import stcurv as stc
from . import surface as sf
from ._serialization import SCHEMA_VERSION, encode, sha256, write_csv, write_json
from .ambient import AmbientKind, DecayReport, InitialDataSet, adm_energy, constraint_fields, decay_report, schwarzschild_energy
from .config import RunConfig, load_config
from .errors import ConfigError, FlowAbortedError, NonConvergenceError, NumericError, StmcfError
from .grid import SphericalGrid, build_grid
from .utils import only_once

log = logging.getLogger("stmcflow")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGENCE = 4
ENERGY_RADIUS = 400.0

T_contra = TypeVar("T_contra", contravariant=True)


class SupportsWrite(Protocol[T_contra]):
    def write(self, s: T_contra, /) -> object: ...


@only_once
def setup_logging(output: SupportsWrite[str]) -> None:
    handler = logging.StreamHandler(output)  # pyright: ignore[reportArgumentType]
    formatter = logging.Formatter("%(message)s", datefmt="%Y-%m-%d %H:%M:%S", style="%")
    handler.setFormatter(formatter)
    log.addHandler(handler)
    log.setLevel(logging.INFO)


class Manifest(msgspec.Struct, frozen=True):
    schema_version: int
    version: str
    experiment: str
    config_sha256: str
    config: dict[str, Any]
    created: str


def _energy(ids: InitialDataSet) -> float:
    if ids.kind is AmbientKind.euclidean:
        return 0.0
    return adm_energy(ids, ENERGY_RADIUS, build_grid(16, 32))


# run-flow


def _run_flow(config: RunConfig, out: Path, use_tqdm: bool) -> int:
    ids = config.ambient.build()
    grid = config.grid.build()
    state = flow.FlowState(config.surface.build(grid))
    if config.surface.pre_flow:
        pre = flow.pre_flow(state, ids, config.flow, use_tqdm=use_tqdm)
        if not pre.converged or pre.final_state is None:
            msg = f"Pre-flow did not converge ({pre.stop_reason})"
            raise NonConvergenceError(msg, pre)
        state = flow.FlowState(pre.final_state.surface)
        log.info("Pre-flow converged after %d steps", pre.final_state.step)

    snapshots = out / "snapshots"

    def on_report(s: flow.FlowState, _row: flow.TraceRow) -> None:
        sf.save_snapshot(snapshots / f"step_{s.step:07d}.json", s.surface, s.t, s.step)

    try:
        trace = flow.evolve(state, ids, config.flow, params=config.roundness, use_tqdm=use_tqdm, on_report=on_report)
    except FlowAbortedError as exc:
        _write_trace(out, exc.trace)
        raise

    _write_trace(out, trace)
    summary = flow.summarize(trace, ids, SCHEMA_VERSION)
    write_json(out / "summary.json", summary)
    if not trace.converged:
        msg = f"Flow stopped without converging ({trace.stop_reason}), final linf/hbar={summary.final_linf_rel}"
        raise NonConvergenceError(msg, trace)
    log.info("Converged: limit residual %.3e, volume drift %.3e", summary.limit_residual, summary.volume_drift)
    return EXIT_OK


def _write_trace(out: Path, trace: flow.FlowTrace) -> None:
    write_csv(out / "trace.csv", flow.TRACE_COLUMNS, (row.csv_row() for row in trace.rows))


# check-ambient


class AdmSample(msgspec.Struct, frozen=True):
    radius: float
    energy: float
    reference: float | None


class AmbientCheck(msgspec.Struct, frozen=True):
    schema_version: int
    ambient: dict[str, object]
    decay: DecayReport
    all_satisfied: bool
    adm: list[AdmSample]


def _check_ambient(config: RunConfig, out: Path, use_tqdm: bool) -> int:
    del use_tqdm
    ids = config.ambient.build()
    report = decay_report(ids, list(config.study.radii))
    grid = build_grid(16, 32)
    adm: list[AdmSample] = []
    for radius in config.study.adm_radii:
        energy = adm_energy(ids, radius, grid)
        reference = None
        if ids.kind is AmbientKind.schwarzschild:
            reference = schwarzschild_energy(ids.mass, radius)
        elif ids.kind is AmbientKind.euclidean:
            reference = 0.0
        adm.append(AdmSample(radius, energy, reference))
    write_json(out / "decay_report.json", AmbientCheck(SCHEMA_VERSION, ids.describe(), report, report.all_satisfied, adm))
    for entry in report.entries:
        log.info("%-10s slope %s (nominal %.3f)", entry.quantity, entry.slope, entry.nominal)
    return EXIT_OK if report.all_satisfied else EXIT_NUMERIC


# spectral-report


def random_fields(grid: SphericalGrid, count: int, seed: int, max_degree: int = 6) -> list[np.ndarray]:
    """Seeded random band-limited fields without a degree 0 part."""
    Y, _, _, degrees = grid.real_basis
    keep = (degrees >= 1) & (degrees <= min(max_degree, grid.lmax))
    rng = np.random.default_rng(seed)
    return [np.einsum("a,a...->...", rng.standard_normal(int(keep.sum())), Y[keep]) for _ in range(count)]


class SpectralReport(msgspec.Struct, frozen=True):
    schema_version: int
    sigma: float
    lambdas: list[float]
    count_below_5: int
    stiffness_asymmetry: float
    orthonormality_error: float
    hawking_mass: float
    energy: float
    residuals: spectral.RefinedEigenCheck
    axes: spectral.AxisAlignment
    form_checks: list[spectral.StabilityForm]
    all_forms_satisfied: bool


def _spectral_report(config: RunConfig, out: Path, use_tqdm: bool) -> int:
    del use_tqdm
    ids = config.ambient.build()
    grid = config.grid.build()
    surface = config.surface.build(grid)
    geo = sf.geometry(surface, ids)
    st = stc.st_curvature(geo, config.flow.q)
    eigs = spectral.laplace_eigs(surface, geo, config.study.eigen_count)
    m_h = mass.hawking_mass(surface, geo)
    energy = _energy(ids)
    forms = [
        spectral.stability_form(geo, ids, eigs, w, energy)
        for w in random_fields(grid, config.study.random_fields, config.study.seed)
    ]
    sigma = geo.area_radius
    report = SpectralReport(
        schema_version=SCHEMA_VERSION,
        sigma=sigma,
        lambdas=[float(v) for v in eigs.values],
        count_below_5=spectral.count_below(eigs, 5 / sigma**2),
        stiffness_asymmetry=eigs.stiffness_asymmetry,
        orthonormality_error=eigs.orthonormality_error,
        hawking_mass=m_h,
        energy=energy,
        residuals=spectral.refined_eigen_check(geo, ids, eigs, m_h, st),
        axes=spectral.axis_alignment(eigs, geo),
        form_checks=forms,
        all_forms_satisfied=all(f.satisfied for f in forms),
    )
    write_json(out / "spectral.json", report)
    log.info("Eigenvalues below 5/sigma^2: %d; stability bound held for %d/%d fields", report.count_below_5, sum(f.satisfied for f in forms), len(forms))
    return EXIT_OK


# foliate

FOLIATE_COLUMNS = ("sigma", "z_start_x", "z_start_y", "z_start_z", "z_final_x", "z_final_y", "z_final_z", "drift")


class FoliateSummary(msgspec.Struct, frozen=True):
    schema_version: int
    study: mass.DriftStudy
    hawking_masses: list[mass.MassSample]


def _write_study(out: Path, study: mass.DriftStudy, masses: list[mass.MassSample]) -> None:
    rows = [
        [s, *a, *b, d] for s, a, b, d in zip(study.sigmas, study.z_start, study.z_final, study.drifts, strict=False)
    ]
    write_csv(out / "foliate.csv", FOLIATE_COLUMNS, rows)
    write_json(out / "study.json", FoliateSummary(SCHEMA_VERSION, study, masses))


def _foliate(config: RunConfig, out: Path, use_tqdm: bool) -> int:
    ids = config.ambient.build()
    grid = config.grid.build()
    masses = mass.hawking_mass_profile(ids, config.study.sigmas, grid)
    try:
        study = mass.drift_study(ids, config.study_q, config.study.sigmas, config.flow, grid, use_tqdm=use_tqdm)
    except NonConvergenceError as exc:
        if isinstance(exc.partial, mass.DriftStudy):
            _write_study(out, exc.partial, masses)
        raise
    _write_study(out, study, masses)
    log.info("Drift exponent %s against predicted %.3f (%s)", study.fitted_alpha, study.predicted_alpha, study.verdict)
    return EXIT_OK


# identity-suite


class CheckResult(msgspec.Struct, frozen=True):
    name: str
    passed: bool
    value: float
    tolerance: float


def _order_two(coarse: float, fine: float, floor: float) -> tuple[bool, float]:
    if max(coarse, fine) <= floor:
        return True, 0.0
    ratio = coarse / fine if fine > 0 else float("inf")
    return 3.5 <= ratio <= 4.5, ratio


def identity_checks(grid: SphericalGrid, sigma: float, energy_grid: SphericalGrid | None = None) -> list[CheckResult]:
    """Property checks with closed-form answers, each reported as pass/fail with its measured value."""
    results: list[CheckResult] = []
    euclid = InitialDataSet.euclidean()
    schw = InitialDataSet.schwarzschild(1.0)
    with_k = InitialDataSet.schwarzschild_with_k(1.0, 0.05)
    big = max(sigma, 10.0)

    def record(name: str, value: float, tolerance: float) -> None:
        results.append(CheckResult(name, bool(value < tolerance), float(value), tolerance))
        log.info("%-32s %-4s %.3e (< %.1e)", name, "ok" if value < tolerance else "FAIL", value, tolerance)

    for name, ids, radius in (("stationary_euclidean_sphere", euclid, sigma), ("stationary_schwarzschild_sphere", schw, big)):
        sp = flow.speed_field(flow.FlowState(sf.sphere(grid, radius)), ids, 2.0)
        record(name, float(np.max(np.abs(sp.f))), 1e-9)

    ell = sf.ellipsoid(grid, (sigma, sigma, 1.2 * sigma))
    record("gauss_bonnet_ellipsoid", mass.gauss_bonnet_check(sf.geometry(ell, euclid)).residual, 1e-8)
    pert = sf.perturbed_sphere(grid, big, 1e-2, 2, 2)
    record("gauss_bonnet_schwarzschild", mass.gauss_bonnet_check(sf.geometry(pert, schw)).residual, 1e-6)

    pts = sf.sphere(grid, big).positions.reshape(-1, 3)
    cf = constraint_fields(schw, pts)
    record("vacuum_constraints", float(np.max(np.abs(cf.mu)) + np.max(cf.J_norm)), 1e-10)

    geo_k = sf.geometry(pert, with_k)
    for q in (2.0, 3.0, 4.0):
        st = stc.st_curvature(geo_k, q)
        record(f"reminder_tensor_q{q:g}", stc.reminder_tensor(geo_k, st).residual, 1e-6)

    state = flow.FlowState(ell)
    cfg = flow.FlowConfig()
    coarse = flow.evolution_identity_check(state, euclid, cfg, 1e-2 * sigma**2)
    fine = flow.evolution_identity_check(state, euclid, cfg, 5e-3 * sigma**2)
    for item in ("metric", "measure", "mean_curvature"):
        c, f = getattr(coarse, f"{item}_rel"), getattr(fine, f"{item}_rel")
        ok, ratio = _order_two(c, f, 1e-9)
        results.append(CheckResult(f"evolution_{item}_order", ok, ratio, 0.5))

    round_geo = sf.geometry(sf.sphere(grid, sigma), euclid)
    eigs = spectral.laplace_eigs(sf.sphere(grid, sigma), round_geo, 9)
    expected = np.array([0.0] + [2.0] * 3 + [6.0] * 5) / sigma**2
    record("sphere_spectrum", float(np.max(np.abs(eigs.values - expected))) * sigma**2 / 6, 1e-8)
    kernel = spectral.stability_form(round_geo, euclid, eigs, eigs.fields[1], 0.0)
    record("translational_kernel", abs(kernel.value) * sigma**2, 1e-10)

    far = sf.sphere(grid, 40.0)
    far_geo = sf.geometry(far, schw)
    far_eigs = spectral.laplace_eigs(far, far_geo, 9)
    energy = adm_energy(schw, ENERGY_RADIUS, energy_grid or build_grid(16, 32))
    forms = [spectral.stability_form(far_geo, schw, far_eigs, w, energy) for w in random_fields(grid, 50, 0)]
    results.append(CheckResult("stability_form_bound", all(f.satisfied for f in forms), float(sum(not f.satisfied for f in forms)), 1.0))
    return results


class IdentitySuite(msgspec.Struct, frozen=True):
    schema_version: int
    passed: bool
    checks: list[CheckResult]


def _identity_suite(config: RunConfig, out: Path, use_tqdm: bool) -> int:
    del use_tqdm
    checks = identity_checks(config.grid.build(), config.surface.sigma)
    passed = all(c.passed for c in checks)
    write_json(out / "identity_suite.json", IdentitySuite(SCHEMA_VERSION, passed, checks))
    return EXIT_OK if passed else EXIT_NUMERIC


RUNNERS: dict[str, Callable[[RunConfig, Path, bool], int]] = {
    "run-flow": _run_flow,
    "check-ambient": _check_ambient,
    "spectral-report": _spectral_report,
    "foliate": _foliate,
    "identity-suite": _identity_suite,
}


def execute(config: RunConfig, *, use_tqdm: bool = False) -> int:
    """Run one experiment, writing its artifacts and a manifest; returns the exit status."""
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    marker.unlink(missing_ok=True)
    resolved = config.resolved()
    manifest = Manifest(
        schema_version=SCHEMA_VERSION,
        version=__version__,
        experiment=config.experiment,
        config_sha256=sha256(encode(resolved)),
        config=resolved,
        created=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
    write_json(out / "manifest.json", manifest)
    log.info("Running %s into %s", config.experiment, out)

    try:
        status = RUNNERS[config.experiment](config, out, use_tqdm)
    except ConfigError as exc:
        log.error("Configuration error: %s", exc)  # noqa: TRY400
        status = EXIT_CONFIG
    except NonConvergenceError as exc:
        log.error("No convergence: %s", exc)  # noqa: TRY400
        status = EXIT_NONCONVERGENCE
    except NumericError as exc:
        log.error("Numeric failure (%s): %s", type(exc).__name__, exc)  # noqa: TRY400
        status = EXIT_NUMERIC
    except (StmcfError, ValueError) as exc:
        log.error("Run failed (%s): %s", type(exc).__name__, exc)  # noqa: TRY400
        status = EXIT_NUMERIC
    if status != EXIT_OK:
        marker.write_text(f"exit status {status}\n", encoding="utf-8")
    return status


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="stmcflow", description="Volume preserving spacetime mean curvature flow experiments")
    parser.add_argument("config", type=Path, help="TOML run configuration")
    parser.add_argument("--override", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--verbose", action="store_true", default=False)
    parser.add_argument("--progress", action="store_true", default=False, help="show progress bars")
    ns = parser.parse_args(argv)

    setup_logging(sys.stdout)
    if ns.verbose:
        log.setLevel(logging.DEBUG)
    try:
        config = load_config(ns.config, ns.overrides)
    except ConfigError as exc:
        log.error("Invalid configuration %s:", ns.config)  # noqa: TRY400
        for violation in exc.violations:
            log.error("  %s", violation)  # noqa: TRY400
        return EXIT_CONFIG
    return execute(config, use_tqdm=ns.progress)
