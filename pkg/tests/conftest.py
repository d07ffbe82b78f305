import numpy as np
import pytest

from qosmc.bler.estimator import OracleEstimator
from qosmc.config import default_scenario


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def fast_scenario(scenario):
    return scenario.fast()


@pytest.fixture(scope="session")
def oracle_estimator(scenario):
    return OracleEstimator(scenario.oracle, scenario.fading)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def trained(scenario):
    """Full default training run, shared by every test that needs a learned model."""
    import time

    from qosmc.bler.dataset import generate_training_set
    from qosmc.bler.estimator import train_estimator

    rng = np.random.default_rng(scenario.training.seed)
    t0 = time.perf_counter()
    ts = generate_training_set(scenario, rng)
    result = train_estimator(ts, scenario.training, rng, oracle=scenario.oracle,
                             cqi_thresholds=scenario.cqi_thresholds, fading=scenario.fading)
    return {"result": result, "dataset": ts, "seconds": time.perf_counter() - t0}


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Lines are echoed immediately and repeated in the terminal summary, so they
    show up whether or not output capturing is on.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
