import pytest

from privcdr.datasets import SyntheticSpec, generate_synthetic_cdr, prepare_dataset
from privcdr.model import TrainConfig


@pytest.fixture(scope="session")
def tiny_data():
    """50 shared users, small catalogues; enough for step-level tests."""
    raw = generate_synthetic_cdr(SyntheticSpec(n_users=50, n_items_a=40, n_items_b=40, seed=3))
    return prepare_dataset(raw.tables, raw.features, k=3, seed=3)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(batch_size=64, eval_negatives=20, id_dim=16, proj_dim=16, hidden_dim=32, dim=16,
                       predictor_hidden=16, epochs=3)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one result line per acceptance criterion; printed in the summary."""
    def record(number: int, ok: bool, text: str) -> bool:
        _ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
