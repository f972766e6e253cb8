"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

import pytest

from stmcflow.ambient import InitialDataSet
from stmcflow.grid import SphericalGrid, build_grid


@pytest.fixture(scope="session")
def grid12() -> SphericalGrid:
    return build_grid(12, 24)


@pytest.fixture(scope="session")
def grid16() -> SphericalGrid:
    return build_grid(16, 32)


@pytest.fixture(scope="session")
def grid24() -> SphericalGrid:
    return build_grid(24, 48)


@pytest.fixture(scope="session")
def grid32() -> SphericalGrid:
    return build_grid(32, 64)


@pytest.fixture(scope="session")
def euclid() -> InitialDataSet:
    return InitialDataSet.euclidean()


@pytest.fixture(scope="session")
def schw() -> InitialDataSet:
    return InitialDataSet.schwarzschild(1.0)


@pytest.fixture(scope="session")
def with_k() -> InitialDataSet:
    return InitialDataSet.schwarzschild_with_k(1.0, 0.05)
