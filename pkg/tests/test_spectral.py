"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

import numpy as np
import pytest

from stmcflow import spectral
from stmcflow import stcurv as stc
from stmcflow import surface as sf
from stmcflow.ambient import InitialDataSet
from stmcflow.grid import SphericalGrid
from stmcflow.mass import hawking_mass
from stmcflow.utils import loglog_slope

SIGMA = 3.0


@pytest.fixture(scope="module")
def round_case(grid16: SphericalGrid, euclid: InitialDataSet) -> tuple[sf.SurfaceGeometry, spectral.EigenSystem]:
    surface = sf.sphere(grid16, SIGMA)
    geo = sf.geometry(surface, euclid)
    return geo, spectral.laplace_eigs(surface, geo, 12)


def _random_field(grid: SphericalGrid, seed: int, top: int = 6) -> np.ndarray:
    Y, _, _, degrees = grid.real_basis
    keep = (degrees >= 1) & (degrees <= top)
    coeffs = np.random.default_rng(seed).standard_normal(int(keep.sum()))
    return np.einsum("a,a...->...", coeffs, Y[keep])


def test_sphere_spectrum(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem]) -> None:
    _, eigs = round_case
    expected = np.array([0.0] + [2.0] * 3 + [6.0] * 5 + [12.0] * 3) / SIGMA**2
    assert np.allclose(eigs.values, expected, atol=1e-10)
    assert eigs.orthonormality_error < 1e-10
    assert eigs.stiffness_asymmetry < 1e-12
    assert eigs.collocation_asymmetry < 1e-10
    assert len(eigs) == 12
    assert spectral.count_below(eigs, 5 / SIGMA**2) == 4
    assert np.ptp(eigs.fields[0]) < 1e-10


def test_eigen_count_is_bounded(grid12: SphericalGrid, euclid: InitialDataSet) -> None:
    surface = sf.sphere(grid12, 1.0)
    geo = sf.geometry(surface, euclid)
    with pytest.raises(ValueError, match="eigenpairs"):
        spectral.laplace_eigs(surface, geo, 0)
    with pytest.raises(ValueError, match="eigenpairs"):
        spectral.laplace_eigs(surface, geo, grid12.size)
    with pytest.raises(ValueError, match="fewer"):
        spectral.laplace_eigs(surface, geo, 10, max_degree=2)


def test_stability_operator_on_sphere(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem], euclid: InitialDataSet) -> None:
    geo, _ = round_case
    Y, _, _, degrees = geo.grid.real_basis
    y1 = Y[int(np.argmax(degrees == 1))]
    y2 = Y[int(np.argmax(degrees == 2))]
    assert np.max(np.abs(spectral.stability_apply(geo, euclid, y1))) < 1e-12
    assert np.allclose(spectral.stability_apply(geo, euclid, y2), -4 * y2 / SIGMA**2, atol=1e-12)


def test_stability_operator_checks_data(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem], schw: InitialDataSet) -> None:
    geo, _ = round_case
    with pytest.raises(ValueError, match="different initial data"):
        spectral.stability_apply(geo, schw, np.ones(geo.grid.shape))


def test_translational_split(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem]) -> None:
    geo, eigs = round_case
    split = spectral.translational_split(eigs.fields[2], eigs, geo)
    assert np.max(np.abs(split.wd)) < 1e-10
    assert np.allclose(split.coefficients, [0.0, 1.0, 0.0], atol=1e-10)
    assert not split.ambiguous

    w = 0.3 + _random_field(geo.grid, 5)
    split = spectral.translational_split(w, eigs, geo)
    assert np.allclose(split.w0 + split.wt + split.wd, w, atol=1e-13)
    total = sf.integrate((w - split.w0) ** 2, geo)
    parts = sf.integrate(split.wt**2, geo) + sf.integrate(split.wd**2, geo)
    assert parts == pytest.approx(total, rel=1e-10)
    assert abs(sf.integrate(split.wt * split.wd, geo)) < 1e-10 * total


def test_stability_form_kernel_and_scaling(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem], euclid: InitialDataSet) -> None:
    geo, eigs = round_case
    kernel = spectral.stability_form(geo, euclid, eigs, eigs.fields[1], 0.0)
    assert abs(kernel.value) < 1e-12
    assert kernel.translational_fraction == pytest.approx(1.0)
    w = _random_field(geo.grid, 9)
    one = spectral.stability_form(geo, euclid, eigs, w, 0.0)
    two = spectral.stability_form(geo, euclid, eigs, -2 * w, 0.0)
    assert two.value == pytest.approx(4 * one.value, rel=1e-12)
    assert one.value < 0
    shifted = spectral.stability_form(geo, euclid, eigs, w + 5.0, 0.0)
    assert shifted.removed_mean == pytest.approx(5.0 + sf.mean(w, geo))
    assert shifted.value == pytest.approx(one.value, rel=1e-10)


def test_schwarzschild_translational_eigenvalues(grid16: SphericalGrid, schw: InitialDataSet) -> None:
    surface = sf.sphere(grid16, 20.0)
    geo = sf.geometry(surface, schw)
    eigs = spectral.laplace_eigs(surface, geo, 9)
    sigma = geo.area_radius
    assert np.allclose(eigs.values[1:4], 2 / sigma**2, rtol=1e-10)
    assert spectral.count_below(eigs, 5 / sigma**2) == 4

    check = spectral.refined_eigen_check(geo, schw, eigs, hawking_mass(surface, geo), stc.st_curvature(geo, 2.0))
    assert max(check.residuals) < 1e-10 / sigma**2
    assert max(check.cross_terms) < 1e-12
    assert check.compatibility.c_inf == pytest.approx(1.0)


def test_stability_bound_on_large_sphere(grid16: SphericalGrid, schw: InitialDataSet) -> None:
    surface = sf.sphere(grid16, 40.0)
    geo = sf.geometry(surface, schw)
    eigs = spectral.laplace_eigs(surface, geo, 9)
    energy = 1.0
    for seed in range(10):
        form = spectral.stability_form(geo, schw, eigs, _random_field(grid16, seed), energy)
        assert form.satisfied
    # the translational modes sit at -6m/sigma^3
    trans = spectral.stability_form(geo, schw, eigs, eigs.fields[1], energy)
    assert trans.value == pytest.approx(-6 / geo.area_radius**3, rel=1e-8)


def test_axis_alignment_on_sphere(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem]) -> None:
    geo, eigs = round_case
    alignment = spectral.axis_alignment(eigs, geo)
    assert len(alignment.matches) == 3
    assert alignment.cluster_spread < 1e-10
    for match in alignment.matches:
        assert abs(match.overlap) <= 1 + 1e-10


def test_spectral_compatibility_of_round_sphere(round_case: tuple[sf.SurfaceGeometry, spectral.EigenSystem]) -> None:
    geo, _ = round_case
    compat = spectral.spectral_compatibility(sf.sphere(geo.grid, SIGMA), geo, stc.st_curvature(geo, 2.0), SIGMA)
    assert compat.c_inf == pytest.approx(1.0)
    assert compat.c_2 < 1e-10


def test_translational_eigenvalues_approach_the_round_value(grid16: SphericalGrid, schw: InitialDataSet) -> None:
    sigmas = [20.0, 40.0, 80.0]
    gaps = []
    for sigma in sigmas:
        # a bump of fixed coordinate height, as left behind by the mass at every radius
        surface = sf.perturbed_sphere(grid16, sigma, 2.0 / sigma, 2, 0)
        geo = sf.geometry(surface, schw)
        eigs = spectral.laplace_eigs(surface, geo, 9)
        gaps.append(float(np.max(np.abs(eigs.values[1:4] - 2 / geo.area_radius**2))))
        assert spectral.count_below(eigs, 5 / geo.area_radius**2) == 4
    fit = loglog_slope(sigmas, gaps)
    assert fit is not None
    assert fit.slope <= -2.4
