import time

import numpy as np
import pytest

from lingopt.backend import BackendServer, ScriptedBackend, ToyBackend
from lingopt.toydata import toy_params, toy_records, training_examples
from lingopt.toymodel import ImageGrid, TrainSchedule, Vocabulary, train, uniform_params
from lingopt.toymodel.vocab import SPECIALS

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def records():
    return toy_records()


@pytest.fixture(scope="session")
def convergence_run(records):
    """The 2000-step, seed-7 run on the sixteen toy records (trained once)."""
    params = toy_params(seed=7)
    sched = TrainSchedule(total_steps=2000, warmup_steps=100, peak_lr=1e-2, floor_lr=0.0, batch_size=16, seed=7)
    start = time.perf_counter()
    result = train(training_examples(records), params, sched)
    return params, sched, result, time.perf_counter() - start


@pytest.fixture(scope="session")
def trained(convergence_run):
    return convergence_run[2].params


@pytest.fixture(scope="session")
def toy_backend(trained):
    return ToyBackend(trained)


@pytest.fixture
def uniform_backend():
    return ToyBackend(uniform_params(Vocabulary(list(SPECIALS))))


@pytest.fixture
def ramp_image():
    return ImageGrid.from_array(np.linspace(0.0, 1.0, 64).reshape(8, 8))


@pytest.fixture
def stub_server():
    """Factory: start a scripted stub server, stopped at teardown."""
    servers = []

    def start(script=None):
        server = BackendServer(ScriptedBackend(script)).start()
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.stop()


@pytest.fixture
def acceptance():
    def record(number, title, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] AC{number:>2} {title}: {detail}")
        assert ok, f"acceptance criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
