"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import NamedTuple, ParamSpec

import numpy as np

P = ParamSpec("P")


def only_once(f: Callable[P, object]) -> Callable[P, None]:
    has_called = False

    def wrapped(*args: P.args, **kwargs: P.kwargs) -> None:
        nonlocal has_called

        if not has_called:
            has_called = True
            f(*args, **kwargs)

    return wrapped


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def linear_fit(xs: Sequence[float] | np.ndarray, ys: Sequence[float] | np.ndarray) -> SlopeFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2)


def loglog_slope(xs: Sequence[float] | np.ndarray, ys: Sequence[float] | np.ndarray) -> SlopeFit | None:
    """None when any sample is non-positive, i.e. there is nothing to fit."""
    y = np.asarray(ys, dtype=float)
    if y.size < 2 or np.any(~np.isfinite(y)) or np.any(y <= 0):
        return None
    return linear_fit(np.log(np.asarray(xs, dtype=float)), np.log(y))
