import numpy as np
import pytest

from recallgames.scenarios import matching_pennies, pd_standard
from recallgames.strategies import StrategySpace
from recallgames.valuation import build_meta_game


@pytest.fixture(scope="session")
def pd():
    return pd_standard(0.9, (1, 1))


@pytest.fixture(scope="session")
def pd_space(pd):
    return StrategySpace(pd.spec)


@pytest.fixture(scope="session")
def pd_meta(pd_space):
    return build_meta_game(pd_space)


@pytest.fixture(scope="session")
def one_shot_pd():
    """PD with no recall and a single period: the meta-game is the stage game."""
    scenario = pd_standard(0.0, (0, 0))
    space = StrategySpace(scenario.spec)
    return scenario, space, build_meta_game(space)


@pytest.fixture(scope="session")
def pennies():
    return matching_pennies()


def interior(rng, counts):
    return tuple(rng.dirichlet(np.ones(k)) for k in counts)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
