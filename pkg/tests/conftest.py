from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nhmeasure.models import PAULI, spin_half_state
from nhmeasure.runner import run_scenario
from nhmeasure.scenario import bundled_scenarios, load_scenario

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# Filled by tests/test_acceptance.py, printed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def spin_example_H(lamN: float = 1.0) -> np.ndarray:
    """``lamN (sigma_x + sigma_y + i sigma_z)``."""
    return lamN * (PAULI["x"] + PAULI["y"] + 1j * PAULI["z"])


def random_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    X = random_matrix(rng, n)
    return 0.5 * (X + X.conj().T)


def parallel(u, v, atol=1e-12) -> bool:
    """True when ``u`` and ``v`` differ by a non-zero complex factor."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    c = abs(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return abs(c - 1) < atol


@pytest.fixture
def H_spin():
    return spin_example_H()


@pytest.fixture
def spins():
    return {
        "up_x": spin_half_state("x", 1),
        "dn_x": spin_half_state("x", -1),
        "up_y": spin_half_state("y", 1),
        "dn_y": spin_half_state("y", -1),
        "up_z": spin_half_state("z", 1),
        "dn_z": spin_half_state("z", -1),
    }


class BundledRuns:
    """Outputs of every bundled scenario, run once per session."""

    def __init__(self, root):
        self.root = root
        self.summaries = {}
        for name in bundled_scenarios():
            self.summaries[name] = run_scenario(load_scenario(name), root)

    def dir(self, name):
        return self.root / name

    def results(self, name) -> dict:
        """Results as written to ``summary.json`` (complex numbers as [re, im])."""
        return json.loads((self.dir(name) / "summary.json").read_text())["results"]

    def manifest(self, name) -> dict:
        return json.loads((self.dir(name) / "manifest.json").read_text())

    def table(self, name, filename) -> list[dict]:
        import csv

        with open(self.dir(name) / filename, newline="") as fh:
            return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory):
    return BundledRuns(tmp_path_factory.mktemp("bundled"))
