import pytest

from gtsa.config import TrainConfig
from gtsa.data import synthetic_dataset


def tiny_config(**kw):
    """Small float32 setup that trains a step in well under a second."""
    base = dict(G=2, L=2, global_size=32, local_size=16, image_size=32, patch=8, dim=16,
                depth=1, heads=2, proj_blocks=1, pred_blocks=1, pool_size=2, K=4,
                batch_size=4, epochs=1, lr=0.01)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_data():
    return synthetic_dataset(8, 32, seed=1)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
