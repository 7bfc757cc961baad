import numpy as np
import pytest

from cookiewalk.env import EnvironmentLaw


@pytest.fixture
def placebo():
    return EnvironmentLaw.single([0.5])


@pytest.fixture
def pile75():
    return EnvironmentLaw.single([0.75])


def law_delta3():
    return EnvironmentLaw.single([0.875] * 4)


def random_law(rng: np.random.Generator, max_components=3, max_depth=4) -> EnvironmentLaw:
    k = int(rng.integers(1, max_components + 1))
    w = rng.dirichlet(np.ones(k))
    w[-1] = 1.0 - w[:-1].sum()
    comps = []
    for wi in w:
        m = int(rng.integers(1, max_depth + 1))
        comps.append((float(wi), tuple(rng.uniform(0.05, 0.95, m).tolist())))
    return EnvironmentLaw(tuple(comps))



def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) == "call":
                lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith("criterion ")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
