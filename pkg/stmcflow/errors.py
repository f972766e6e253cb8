"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

from typing import Any


class StmcfError(Exception):
    pass


class ConfigError(StmcfError):
    """Raised with every violation found, not just the first."""

    def __init__(self, violations: list[str]) -> None:
        self.violations = violations
        super().__init__("\n".join(violations))


class NumericError(StmcfError):
    pass


class DomainError(NumericError):
    pass


class SingularMetricError(NumericError):
    pass


class DegenerateImmersionError(NumericError):
    pass


class GraphBreakdownError(NumericError):
    pass


class AdmissibilityError(NumericError):
    def __init__(self, msg: str, node: tuple[int, int]) -> None:
        self.node = node
        super().__init__(msg)


class PropagationError(NumericError):
    pass


class UnderResolvedError(NumericError):
    pass


class InsufficientDataError(NumericError):
    pass


class FlowAbortedError(NumericError):
    """Repeated step rejection; ``trace`` holds everything recorded so far."""

    def __init__(self, msg: str, trace: Any) -> None:  # noqa: ANN401
        self.trace = trace
        super().__init__(msg)


class NonConvergenceError(StmcfError):
    """``partial`` holds the trace or study data collected before giving up."""

    def __init__(self, msg: str, partial: Any = None) -> None:  # noqa: ANN401
        self.partial = partial
        super().__init__(msg)
