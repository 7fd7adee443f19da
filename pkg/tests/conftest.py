import numpy as np
import pytest

from ma_isac.ao import fpa_layout
from ma_isac.channel import AntennaLayout, ScenarioConfig, build_links, sample_realization


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk():
    return ScenarioConfig()


def fpa_setup(config, seed):
    real = sample_realization(config, seed)
    layout = AntennaLayout(
        fpa_layout(config.n_tx, config.wavelength, config.region),
        fpa_layout(config.n_rx, config.wavelength, config.region),
    )
    return real, layout, build_links(real, layout, config.wavelength)


def random_layout(config, rng):
    """Random layout inside the region; spacing is not enforced."""
    r = config.region
    tx = rng.uniform([r.x_min, r.y_min], [r.x_max, r.y_max], (config.n_tx, 2))
    rx = rng.uniform([r.x_min, r.y_min], [r.x_max, r.y_max], (config.n_rx, 2))
    return AntennaLayout(tx, rx)


ACCEPTANCE = {}


def record_criterion(number, title, passed, detail):
    """Store and print one acceptance line; the terminal summary repeats them."""
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
