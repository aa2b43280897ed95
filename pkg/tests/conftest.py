from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from monoflow.baseline import TotalDegreeRun, solve_total_degree
from monoflow.monodromy import MonodromyResult, run_monodromy
from monoflow.network import PowerNetwork, build_system, complete_graph, cycle_graph, random_susceptances


@dataclass
class Solved:
    net: PowerNetwork
    mono: MonodromyResult
    td: TotalDegreeRun | None

    @property
    def system(self):
        return build_system(self.net)

    @property
    def b(self):
        return self.net.susceptances


def _solve(family, n, seed, with_td=True) -> Solved:
    template = family(n)
    net = family(n, random_susceptances(template.num_edges, np.random.default_rng(seed)))
    system = build_system(net)
    rng = np.random.default_rng(seed + 1)
    td = solve_total_degree(system, rng=rng) if with_td else None
    mono = run_monodromy(system, net.susceptances, rng=rng)
    return Solved(net, mono, td)


@pytest.fixture(scope="session")
def k4_solved() -> Solved:
    return _solve(complete_graph, 4, 11)


@pytest.fixture(scope="session")
def c5_solved() -> Solved:
    return _solve(cycle_graph, 5, 12)


@pytest.fixture(scope="session")
def c6_solved() -> Solved:
    return _solve(cycle_graph, 6, 13)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the acceptance summary and return the flag."""

    def record(number, title: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
        request.config.stash[_VERDICTS].append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0].split()[0])):
            terminalreporter.write_line(line)
