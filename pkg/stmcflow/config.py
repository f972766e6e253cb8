"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

Run configuration: a sectioned TOML document converted into frozen structs,
with every violation collected before anything runs.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from pathlib import Path
from typing import Any, Literal, get_args

import msgspec

from .ambient import AmbientKind, InitialDataSet
from .errors import ConfigError
from .flow import FlowConfig
from .grid import SphericalGrid, build_grid
from .stcurv import ClassParams
from .surface import GraphSurface, ellipsoid, perturbed_sphere, sphere

log = logging.getLogger("stmcflow.config")

Experiment = Literal["run-flow", "check-ambient", "spectral-report", "foliate", "identity-suite"]
EXPERIMENTS: tuple[str, ...] = get_args(Experiment)
VALID_KINDS = ", ".join(k.value for k in AmbientKind)


class AmbientSpec(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    kind: str = ""
    mass: float = 0.0
    a: float = 0.0
    decay_exponent: float = 3.0
    trace_weight: float = 0.0
    tilt: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    amplitude: float = 0.0
    delta: float = 0.5

    def build(self) -> InitialDataSet:
        return InitialDataSet(
            AmbientKind(self.kind),
            mass=self.mass,
            a=self.a,
            decay_exponent=self.decay_exponent,
            trace_weight=self.trace_weight,
            tilt=self.tilt,
            seed=self.seed,
            amplitude=self.amplitude,
            delta=self.delta,
        )


class GridSpec(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    n_theta: int = 24
    n_phi: int = 48

    def build(self) -> SphericalGrid:
        return build_grid(self.n_theta, self.n_phi)


class SurfaceSpec(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    shape: Literal["sphere", "ellipsoid", "perturbed"] = "sphere"
    sigma: float = 5.0
    # semi-axes in units of sigma
    axes: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    amplitude: float = 0.0
    degree: int = 2
    order: int = 2
    pre_flow: bool = False

    def build(self, grid: SphericalGrid) -> GraphSurface:
        if self.shape == "ellipsoid":
            axes = (self.sigma * self.axes[0], self.sigma * self.axes[1], self.sigma * self.axes[2])
            return ellipsoid(grid, axes, self.center)
        if self.shape == "perturbed":
            return perturbed_sphere(grid, self.sigma, self.amplitude, self.degree, self.order, self.center)
        return sphere(grid, self.sigma, self.center)

    def violations(self, r_min: float, lmax: int) -> list[str]:
        found: list[str] = []
        if self.sigma <= 0:
            found.append(f"surface.sigma = {self.sigma} rejected: must be positive")
        if any(a <= 0 for a in self.axes):
            found.append(f"surface.axes = {list(self.axes)} rejected: every semi-axis must be positive")
        if not 0 <= abs(self.order) <= self.degree <= lmax:
            found.append(f"surface.degree/order = ({self.degree}, {self.order}) not representable with lmax = {lmax}")
        if abs(self.amplitude) >= 1:
            found.append(f"surface.amplitude = {self.amplitude} rejected: |amplitude| < 1 keeps the radius positive")
        if self.sigma > 0:
            reach = self.sigma * min(self.axes) * (1 - abs(self.amplitude)) - sum(c * c for c in self.center) ** 0.5
            if reach <= r_min:
                found.append(f"surface reaches radius {reach:.4g}, inside the excised core of radius {r_min}")
        return found


class StudySpec(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    # 0 means "use flow.q"
    q: float = 0.0
    sigmas: tuple[float, ...] = (20.0, 40.0, 80.0)
    radii: tuple[float, ...] = (10.0, 20.0, 40.0, 80.0, 160.0)
    adm_radii: tuple[float, ...] = (100.0, 400.0)
    eigen_count: int = 16
    random_fields: int = 50
    seed: int = 0

    def violations(self, experiment: str) -> list[str]:
        found: list[str] = []
        if experiment == "foliate":
            s = self.sigmas
            if len(s) < 3 or any(b <= a for a, b in zip(s, s[1:], strict=False)):
                found.append(f"study.sigmas = {list(s)} rejected: at least 3 strictly increasing radii required")
        if experiment == "check-ambient" and len(self.radii) < 3:
            found.append(f"study.radii = {list(self.radii)} rejected: at least 3 radii required")
        if self.q and self.q < 2:
            found.append(f"study.q = {self.q} rejected: q >= 2 required")
        if self.eigen_count < 4:
            found.append(f"study.eigen_count = {self.eigen_count} rejected: at least 4 eigenpairs required")
        if self.random_fields < 1:
            found.append(f"study.random_fields = {self.random_fields} rejected: must be at least 1")
        return found


class RunConfig(msgspec.Struct, frozen=True):
    experiment: Experiment
    output: str
    ambient: AmbientSpec
    grid: GridSpec = GridSpec()
    surface: SurfaceSpec = SurfaceSpec()
    flow: FlowConfig = FlowConfig()
    roundness: ClassParams = ClassParams()
    study: StudySpec = StudySpec()

    @property
    def study_q(self) -> float:
        return self.study.q or self.flow.q

    def resolved(self) -> dict[str, Any]:
        return msgspec.to_builtins(self)


SECTIONS: dict[str, type[msgspec.Struct]] = {
    "ambient": AmbientSpec,
    "grid": GridSpec,
    "surface": SurfaceSpec,
    "flow": FlowConfig,
    "roundness": ClassParams,
    "study": StudySpec,
}
TOP_LEVEL = ("experiment", "output")


def _scalar(raw: str) -> object:
    try:
        return msgspec.toml.decode(f"v = {raw}".encode())["v"]
    except msgspec.DecodeError:
        return raw


def apply_overrides(doc: dict[str, Any], overrides: Iterable[str]) -> list[str]:
    """Apply ``section.key=value`` (or top-level ``key=value``) overrides in place."""
    found: list[str] = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            found.append(f"override {item!r} is not of the form key=value")
            continue
        section, dot, name = key.rpartition(".")
        value = _scalar(raw.strip())
        if not dot:
            doc[name] = value
            continue
        target = doc.setdefault(section, {})
        if not isinstance(target, dict):
            found.append(f"override {item!r} targets {section!r}, which is not a section")
            continue
        target[name] = value
    return found


def _convert_section(name: str, raw: object, found: list[str]) -> msgspec.Struct | None:
    kind = SECTIONS[name]
    if not isinstance(raw, dict):
        found.append(f"[{name}] must be a table")
        return None
    fields = {f.name for f in msgspec.structs.fields(kind)}
    clean: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in fields:
            found.append(f"unknown key {name}.{key} (known keys: {', '.join(sorted(fields))})")
            continue
        try:
            msgspec.convert({key: value}, kind)
        except msgspec.ValidationError as exc:
            found.append(f"{name}.{key} = {value!r} rejected: {exc}")
            continue
        clean[key] = value
    return msgspec.convert(clean, kind)


def parse_config(text: str, overrides: Iterable[str] = ()) -> RunConfig:
    """Parse and validate a run configuration, raising ConfigError listing every violation."""
    try:
        doc: dict[str, Any] = msgspec.toml.decode(text.encode())
    except msgspec.DecodeError as exc:
        raise ConfigError([f"invalid TOML: {exc}"]) from None

    found = apply_overrides(doc, overrides)
    for key in doc:
        if key not in SECTIONS and key not in TOP_LEVEL:
            found.append(f"unknown key {key}")

    experiment = doc.get("experiment")
    if experiment not in EXPERIMENTS:
        found.append(f"experiment = {experiment!r} rejected: choose one of {', '.join(EXPERIMENTS)}")
    output = doc.get("output", "")
    if not isinstance(output, str) or not output:
        found.append("output must name the output directory")

    sections = {name: _convert_section(name, doc.get(name, {}), found) for name in SECTIONS}
    ambient = sections["ambient"]
    ids = None
    if isinstance(ambient, AmbientSpec):
        if not ambient.kind:
            found.append(f"ambient.kind missing; valid kinds: {VALID_KINDS}")
        elif ambient.kind not in {k.value for k in AmbientKind}:
            found.append(f"ambient.kind = {ambient.kind!r} rejected; valid kinds: {VALID_KINDS}")
        else:
            try:
                ids = ambient.build()
            except ConfigError as exc:
                found.extend(exc.violations)

    grid_spec = sections["grid"]
    grid = None
    if isinstance(grid_spec, GridSpec):
        try:
            grid = grid_spec.build()
        except ConfigError as exc:
            found.extend(exc.violations)

    surface_spec = sections["surface"]
    if isinstance(surface_spec, SurfaceSpec) and ids is not None and grid is not None:
        found.extend(surface_spec.violations(ids.r_min, grid.lmax))
    flow_config = sections["flow"]
    if isinstance(flow_config, FlowConfig):
        found.extend(flow_config.violations())
    params = sections["roundness"]
    if isinstance(params, ClassParams):
        for name in ("eta", "b1", "b2"):
            if getattr(params, name) <= 0:
                found.append(f"roundness.{name} = {getattr(params, name)} rejected: must be positive")
        if params.sigma < 0:
            found.append(f"roundness.sigma = {params.sigma} rejected: must be non-negative")
    study = sections["study"]
    if isinstance(study, StudySpec) and isinstance(experiment, str):
        found.extend(study.violations(experiment))
        if experiment == "spectral-report" and grid is not None and study.eigen_count > grid.size // 4:
            found.append(
                f"study.eigen_count = {study.eigen_count} rejected: the {grid.n_theta}x{grid.n_phi} grid resolves at most {grid.size // 4}"
            )

    if found:
        raise ConfigError(found)
    config = RunConfig(
        experiment=experiment,  # pyright: ignore[reportArgumentType]
        output=output,
        ambient=ambient,  # pyright: ignore[reportArgumentType]
        grid=grid_spec,  # pyright: ignore[reportArgumentType]
        surface=surface_spec,  # pyright: ignore[reportArgumentType]
        flow=flow_config,  # pyright: ignore[reportArgumentType]
        roundness=params,  # pyright: ignore[reportArgumentType]
        study=study,  # pyright: ignore[reportArgumentType]
    )
    log.debug("Resolved configuration: %s", config.resolved())
    return config


def load_config(path: Path, overrides: Iterable[str] = ()) -> RunConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, overrides)
