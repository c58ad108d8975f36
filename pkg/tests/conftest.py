"""Shared fixtures: one small on-disk cohort and one trained checkpoint,
built once per session through the real CLI. Also collects the acceptance
PASS/FAIL lines and prints them in the terminal summary."""

import pytest

from desatnet.cli import main

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

SMALL_MODEL_FLAGS = [
    "--window", "8", "--lead", "3", "--memory-size", "8", "--filters", "8",
    "--hidden", "8", "--dilations", "1,2", "--dropout", "0.0",
]


@pytest.fixture(scope="session")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    rc = main(["generate", "--out", str(out), "--n", "40", "--seed", "42",
               "--general-incidence", "0.35", "--persistent-incidence", "0.05"])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory, cohort_dir):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--cohort", str(cohort_dir), "--out", str(out),
               "--epochs", "2", "--seed", "7"] + SMALL_MODEL_FLAGS)
    assert rc == 0
    return out
