import numpy as np
import pytest

from stoxlstm.model import ModelConfig, init_params


def tiny_config(**overrides) -> ModelConfig:
    """d_model=4, d_latent=2, N=3 with both cell types."""
    base = dict(lookback=8, horizon=4, patch_size=4, stride=4, d_model=4, d_latent=2, pattern="ms", kernel=3)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny():
    cfg = tiny_config()
    return cfg, init_params(cfg, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_NAMES = {
    1: "gradient correctness",
    2: "KL oracle",
    3: "ELBO bound",
    4: "CRPS reduction",
    5: "patch-count formula",
    6: "structural SSM checks",
    7: "overfit fixture",
    8: "baseline-beating smoke",
    9: "complexity band",
    10: "determinism",
}


def _results(config) -> dict:
    if not hasattr(config, "_acceptance_results"):
        config._acceptance_results = {}
    return config._acceptance_results


@pytest.fixture
def accept(request):
    """Record one acceptance criterion's outcome; prints it immediately too."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {ACCEPTANCE_NAMES[number]}: {detail}"
        _results(request.config)[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = _results(config)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in ACCEPTANCE_NAMES.items():
        terminalreporter.write_line(results.get(number, f"[FAIL] criterion {number:>2} {name}: no result (deselected, or errored before reporting)"))
