import numpy as np
import pytest

from fskgc import autodiff as ad
from fskgc.config import TrainConfig
from fskgc.synth import SynthSpec, generate


def tiny_config(**overrides) -> TrainConfig:
    """Small model that trains in milliseconds per episode."""
    base = dict(dim=8, cond_dim=4, latent_dim=4, np_hidden=8, score_hidden=16, score_blocks=1, time_dim=8,
                diffusion_steps=3, K=3, n_query=2, n_neg=2, episodes_max=10, lr=1e-3, checkpoint="")
    base.update(overrides)
    return TrainConfig(**base)


# desk-scale settings used by the learning criteria
DESK = dict(dim=32, cond_dim=16, latent_dim=16, np_hidden=32, score_blocks=2, K=5, n_query=15, n_neg=10,
            lr=5e-3, lr_schedule="cosine", clip_norm=5.0, episodes_max=2000, seed=0)


@pytest.fixture(scope="session")
def synth():
    return generate(SynthSpec(entities=50, relations=8, seed=0))


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthSpec(entities=20, relations=5, seed=3, heads_per_relation=8, valid_relations=1,
                              test_relations=1, background_relations=2, latent_dim=3))


@pytest.fixture
def f64():
    with ad.precision(np.float64):
        yield


ACCEPTANCE_LINES: list = []


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
