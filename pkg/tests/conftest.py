import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

from ept.config import Config, TaskSpec  # noqa: E402


def small_config(**overrides) -> Config:
    """A few-second run: three tasks across two families on a tiny backbone."""
    base = dict(learning_rate=1e-2, warmup_steps=3, max_steps=12, batch_size=8, d_model=8, d_ff=16, n_blocks=1,
                max_seq_len=6, vocab_size=24,
                tasks=[TaskSpec(0, 1, n_train=16, n_eval=8), TaskSpec(0, 1, n_train=16, n_eval=8),
                       TaskSpec(1, 4, n_train=16, n_eval=8)])
    base.update(overrides)
    return Config(**base)


@pytest.fixture
def small():
    return small_config


ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {text}")
