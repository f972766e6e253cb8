"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

from pathlib import Path

import msgspec
import pytest

from stmcflow import cli, flow
from stmcflow._serialization import read_csv
from stmcflow.grid import build_grid


def _write_config(tmp_path: Path, body: str, name: str = "run") -> tuple[Path, Path]:
    out = tmp_path / f"{name}-out"
    path = tmp_path / f"{name}.toml"
    path.write_text(f'output = "{out.as_posix()}"\n{body}', encoding="utf-8")
    return path, out


RUN_FLOW = """
experiment = "run-flow"

[ambient]
kind = "euclidean"

[grid]
n_theta = 12
n_phi = 24

[surface]
sigma = 5.0
"""


def _load(path: Path) -> dict[str, object]:
    return msgspec.json.decode(path.read_bytes())


def test_run_flow_writes_artifacts(tmp_path: Path) -> None:
    path, out = _write_config(tmp_path, RUN_FLOW)
    assert cli.main([str(path)]) == cli.EXIT_OK
    header = (out / "trace.csv").read_text(encoding="utf-8").splitlines()[0]
    assert tuple(header.split(",")) == flow.TRACE_COLUMNS
    assert (out / "snapshots" / "step_0000000.json").is_file()
    assert not (out / "FAILED").exists()
    summary = _load(out / "summary.json")
    assert summary["converged"] is True
    manifest = _load(out / "manifest.json")
    assert manifest["experiment"] == "run-flow"
    assert manifest["config"]["grid"] == {"n_theta": 12, "n_phi": 24}  # pyright: ignore[reportIndexIssue]


def test_run_flow_is_deterministic(tmp_path: Path) -> None:
    first, out_a = _write_config(tmp_path, RUN_FLOW, "a")
    second, out_b = _write_config(tmp_path, RUN_FLOW, "b")
    assert cli.main([str(first)]) == cli.main([str(second)]) == cli.EXIT_OK
    for name in ("trace.csv", "summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    assert _load(out_a / "manifest.json")["config_sha256"] != ""


def test_bad_config_exits_with_config_status(tmp_path: Path) -> None:
    path, out = _write_config(tmp_path, RUN_FLOW + "[flow]\nq = 1.5\n")
    assert cli.main([str(path)]) == cli.EXIT_CONFIG
    assert not out.exists()
    assert cli.main([str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG


def test_override_reaches_the_run(tmp_path: Path) -> None:
    path, out = _write_config(tmp_path, RUN_FLOW)
    assert cli.main([str(path), "--override", "flow.q=1.5"]) == cli.EXIT_CONFIG
    assert cli.main([str(path), "--override", "flow.q=3", "--verbose"]) == cli.EXIT_OK
    assert _load(out / "manifest.json")["config"]["flow"]["q"] == 3.0  # pyright: ignore[reportIndexIssue]


def test_unfinished_flow_marks_failure(tmp_path: Path) -> None:
    body = RUN_FLOW.replace("sigma = 5.0", 'sigma = 1.0\nshape = "ellipsoid"\naxes = [1.0, 1.0, 1.2]') + "[flow]\nmax_steps = 3\n"
    path, out = _write_config(tmp_path, body)
    assert cli.main([str(path)]) == cli.EXIT_NONCONVERGENCE
    assert (out / "FAILED").read_text(encoding="utf-8").strip() == "exit status 4"
    rows = read_csv(out / "trace.csv")
    assert [int(r["step"]) for r in rows] == [0, 3]
    assert _load(out / "summary.json")["stop_reason"] == "max_steps"


def test_marker_is_cleared_on_success(tmp_path: Path) -> None:
    path, out = _write_config(tmp_path, RUN_FLOW)
    out.mkdir()
    (out / "FAILED").write_text("exit status 4\n", encoding="utf-8")
    assert cli.main([str(path)]) == cli.EXIT_OK
    assert not (out / "FAILED").exists()


def test_check_ambient(tmp_path: Path) -> None:
    body = 'experiment = "check-ambient"\n[ambient]\nkind = "schwarzschild"\nmass = 1.0\n'
    path, out = _write_config(tmp_path, body)
    assert cli.main([str(path)]) == cli.EXIT_OK
    report = _load(out / "decay_report.json")
    assert report["all_satisfied"] is True
    assert len(report["adm"]) == 2  # pyright: ignore[reportArgumentType]


def test_spectral_report(tmp_path: Path) -> None:
    body = RUN_FLOW.replace("run-flow", "spectral-report") + "[study]\neigen_count = 9\nrandom_fields = 4\n"
    path, out = _write_config(tmp_path, body)
    assert cli.main([str(path)]) == cli.EXIT_OK
    report = _load(out / "spectral.json")
    lambdas = report["lambdas"]
    assert isinstance(lambdas, list)
    assert len(lambdas) == 9
    assert lambdas[1] == pytest.approx(2 / 25, rel=1e-8)
    assert report["count_below_5"] == 4
    assert report["all_forms_satisfied"] is True


def test_random_fields_have_no_mean() -> None:
    grid = build_grid(8, 16)
    fields = cli.random_fields(grid, 3, 7)
    assert len(fields) == 3
    again = cli.random_fields(grid, 3, 7)
    for a, b in zip(fields, again, strict=True):
        assert (a == b).all()
        assert abs(float((a * grid.weights).sum())) < 1e-12


@pytest.mark.slow
def test_identity_suite(tmp_path: Path) -> None:
    body = RUN_FLOW.replace("run-flow", "identity-suite").replace("n_theta = 12\nn_phi = 24", "n_theta = 16\nn_phi = 32")
    path, out = _write_config(tmp_path, body)
    assert cli.main([str(path)]) == cli.EXIT_OK
    suite = _load(out / "identity_suite.json")
    assert suite["passed"] is True


def test_unexpected_failure_still_marks_the_run(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    def broken(_config: object, _out: Path, _use_tqdm: bool) -> int:
        raise ValueError("matrix is not positive definite")

    monkeypatch.setitem(cli.RUNNERS, "run-flow", broken)
    path, out = _write_config(tmp_path, RUN_FLOW)
    assert cli.main([str(path)]) == cli.EXIT_NUMERIC
    assert (out / "FAILED").read_text(encoding="utf-8").strip() == "exit status 3"


def test_check_ambient_with_extrinsic_curvature(tmp_path: Path) -> None:
    body = 'experiment = "check-ambient"\n[ambient]\nkind = "schwarzschild_with_K"\nmass = 1.0\na = 0.05\n'
    path, out = _write_config(tmp_path, body)
    assert cli.main([str(path)]) == cli.EXIT_OK
    report = _load(out / "decay_report.json")
    assert report["all_satisfied"] is True
    assert report["ambient"]["decay_exponent"] == 3.0  # pyright: ignore[reportIndexIssue]
