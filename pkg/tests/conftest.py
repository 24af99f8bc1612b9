import numpy as np
import pytest
from hypothesis import settings

from hybridpic.state import FluidBox, OutputConfig, SceneConfig, TransferScheme

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def small_config(kind="apic", modes=1, **kw) -> SceneConfig:
    """16x16 closed box with a little block of water; fast enough for unit tests."""
    base = dict(
        domain_size=(0.25, 0.25), grid_dims=(16, 16), dt=0.002, duration=0.02, gravity=(0.0, -9.81),
        scheme=TransferScheme(kind, modes, modes), seed=5, particles_per_cell=4,
        emitters=[FluidBox(lo=(0.015625, 0.015625), hi=(0.125, 0.15625))],
        output=OutputConfig(directory="out"),
    )
    base.update(kw)
    return SceneConfig(**base).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
