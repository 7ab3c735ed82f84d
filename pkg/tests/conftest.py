from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"
ADULT_DIR = ROOT / "data" / "adult"


@pytest.fixture
def tiny_adult():
    return FIXTURES / "adult_tiny.data", FIXTURES / "adult_tiny.test"


@pytest.fixture(scope="session")
def adult():
    from mindiff_lab.data import load_adult

    train_path, test_path = ADULT_DIR / "adult.data", ADULT_DIR / "adult.test"
    if not train_path.exists():
        pytest.fail(f"{train_path} missing; run `mindiff-lab fetch-data` first")
    return load_adult(train_path, test_path)


@pytest.fixture(scope="session")
def toy_split():
    """Small train/test pair where the group shifts the negatives' scores."""
    import numpy as np

    from mindiff_lab.data import Dataset

    def make(n, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 2, n)
        y = (rng.random(n) < 0.35).astype(int)
        x = rng.normal(size=(n, 3))
        x[:, 0] += 1.5 * y + 0.8 * a
        x[:, 1] += a
        return Dataset(x, y, a)

    return make(800, 0), make(400, 1)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
