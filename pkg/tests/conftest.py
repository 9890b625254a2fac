"""Shared fixtures and the acceptance-summary hook.

Expensive artifacts (fits, large ensembles) are session-scoped so the
suite builds each once.  Acceptance tests record one line per criterion
through record_criterion; the terminal-summary hook prints them all at
the end of the run whether or not the assertions passed.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from masshist.core import ModelKind, SsbParams, read_count_csv
from masshist.estimation import FitConfig, fit_model
from masshist.simulation import sacrifice_sample, simulate_trajectory, substream

REPO_ROOT = Path(__file__).resolve().parent.parent
REAL_DATA_CSV = REPO_ROOT / "data" / "invasion_counts.csv"

THETA0 = SsbParams(alpha=-3.0, beta=0.15, lam=4.0, gamma=1.5, eta=1.0)

_ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Collect one acceptance-criterion verdict for the final summary."""
    _ACCEPTANCE_LINES.append((int(number), bool(passed), str(detail)))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE_LINES):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict} - {detail}")


@pytest.fixture(scope="session")
def theta0() -> SsbParams:
    return THETA0


@pytest.fixture(scope="session")
def real_dataset():
    return read_count_csv(REAL_DATA_CSV, mass=300)


def make_protocol_dataset(seed: int, params: SsbParams = THETA0,
                          mass: int = 300, horizon: int = 60,
                          schedule=(2, 4, 6, 8, 10, 12, 24, 36, 48, 60),
                          group_size: int = 10):
    """One simulated design exactly as the simulate command builds it:
    per-trajectory sub-streams (seed, 0, i), sacrifice stream (seed, 1)."""
    n = len(schedule) * group_size
    trajs = [simulate_trajectory(params, mass, horizon, substream(seed, 0, i))
             for i in range(n)]
    data = sacrifice_sample(trajs, schedule, group_size, substream(seed, 1),
                            mass)
    return trajs, data


@pytest.fixture(scope="session")
def sim_dataset():
    """The standard simulated design at theta0 (seed 0), counts only."""
    return make_protocol_dataset(seed=0)[1]


@pytest.fixture(scope="session")
def ssb_ensemble_2000(theta0):
    """A large trajectory ensemble at theta0 for distributional checks."""
    return [simulate_trajectory(theta0, 300, 60, substream(123, 0, i))
            for i in range(2000)]


@pytest.fixture(scope="session")
def sim_fits(sim_dataset):
    """All four fixed-parameter models fitted to the simulated design."""
    cfg = FitConfig(compute_se=False)
    return {m: fit_model(sim_dataset, m, cfg)
            for m in (ModelKind.LRM, ModelKind.LRM_PLUS, ModelKind.SSB,
                      ModelKind.SSB_PLUS)}


@pytest.fixture(scope="session")
def cli_env():
    """Environment and argv prefix for running the CLI as a subprocess."""
    return [sys.executable, "-m", "masshist.cli"]


def charpoly_eigenvalues_3x3(matrix):
    """Eigenvalues of a symmetric 3x3 matrix, descending, found with no
    linear algebra at all: bisection on the characteristic determinant
    det(A - x I), with roots bracketed by Gershgorin discs."""
    a = np.asarray(matrix, dtype=float)

    def p(x):
        m = a - x * np.eye(3)
        return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
                - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
                + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))

    radius = np.abs(a).sum(axis=1) - np.abs(np.diag(a))
    lo = float(np.min(np.diag(a) - radius)) - 1.0
    hi = float(np.max(np.diag(a) + radius)) + 1.0
    xs = np.linspace(lo, hi, 20001)
    vals = np.array([p(x) for x in xs])
    roots = []
    for i in range(xs.size - 1):
        if vals[i] == 0.0:
            roots.append(float(xs[i]))
            continue
        if vals[i] * vals[i + 1] >= 0.0:
            continue
        left, right, f_left = float(xs[i]), float(xs[i + 1]), float(vals[i])
        for _ in range(200):
            mid = 0.5 * (left + right)
            f_mid = p(mid)
            if f_mid == 0.0:
                left = right = mid
                break
            if (f_left < 0.0) == (f_mid < 0.0):
                left, f_left = mid, f_mid
            else:
                right = mid
        roots.append(0.5 * (left + right))
    return np.array(sorted(roots, reverse=True))
