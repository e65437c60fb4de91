"""Shared scene fixtures and acceptance-summary reporting."""

import pytest

_acceptance_reports = {}


def pytest_runtest_logreport(report):
    # Collect one outcome per acceptance criterion for the summary block.
    if "test_acceptance" in report.nodeid and report.when == "call":
        _acceptance_reports[report.nodeid] = report.outcome
    elif "test_acceptance" in report.nodeid and report.when == "setup" \
            and report.outcome != "passed":
        _acceptance_reports[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_reports:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_acceptance_reports):
        outcome = _acceptance_reports[nodeid]
        label = nodeid.split("::")[-1]
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{label}: {status}")


def beam_scene_dict(**overrides):
    """Small pinned cantilever beam scene; override top-level keys."""
    scene = {
        "mesh": {"box": {"size": [1.0, 0.25, 0.25], "divisions": [4, 1, 1]}},
        "materials": {"0": {"youngs": 1e7, "poisson": 0.3, "density": 1000.0}},
        "pinned": {"box": {"min": [-1e-9, -1.0, -1.0],
                           "max": [1e-9, 1.0, 1.0]}},
        "subspace": {"modes": 3, "cubature": 12, "seed": 0},
        "solver": {"dt": 0.02, "iterations": 10, "tol": 1e-8,
                   "model": "fcr"},
        "groups": {"tip": {"min": [0.75, -1.0, -1.0],
                           "max": [1.1, 1.0, 1.0]}},
    }
    scene.update(overrides)
    return scene


@pytest.fixture
def beam_scene():
    from submfem.scene import SceneConfig, build_scene
    return build_scene(SceneConfig.from_dict(beam_scene_dict()))
