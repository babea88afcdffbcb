from pathlib import Path

import numpy as np
import pytest

from seqcausal.netfx import PatternSpec
from seqcausal.simgen import (
    generate_outcomes,
    random_design,
    reference_design,
    synthesize_design,
    synthesize_standard_means,
)

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def reference():
    """Skeleton and proportions of the 1232-unit reference design."""
    return synthesize_design(reference_design())


@pytest.fixture(scope="session")
def small_design():
    """Random Markov design, T=2, fully occupied."""
    return synthesize_design(random_design(2, np.random.default_rng(11)))


def noiseless_panel(design, pattern, phi, gamma=(), grand_mean=0.0):
    skel, props = synthesize_design(design)
    means = synthesize_standard_means(props, pattern, phi, gamma, grand_mean)
    return generate_outcomes(skel, means, 0.0, 0), means, props


@pytest.fixture
def single_full():
    return PatternSpec.single_class("full")


@pytest.fixture(scope="session")
def reference_report():
    """The 2000-replicate reference coverage study (shared across modules)."""
    from seqcausal.simgen import reference_config, run_replicates

    return run_replicates(reference_config(replicates=2000))


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
