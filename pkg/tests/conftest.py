import numpy as np
import pytest

from spectraladapt.core import DEFAULT_WAVELENGTHS, SpectralCube


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cube(rng, h=4, w=4, c=31, dtype=np.float64) -> SpectralCube:
    data = rng.random((c, h, w)).astype(dtype)
    return SpectralCube(data, DEFAULT_WAVELENGTHS[:c] if c <= 31 else np.arange(c) + 400.0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Tiny two-domain dataset: 4 source, 1 labeled target, 10 unlabeled, 2 validation."""
    from spectraladapt.datagen import build_manifest

    out = tmp_path_factory.mktemp("small")
    build_manifest(out, (4, 1, 10, 2), seed=3, size=16)
    return out / "manifest.tsv"


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
