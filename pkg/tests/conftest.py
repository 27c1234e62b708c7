import numpy as np
import pytest

from radial_canon.imageops import optimal_padding, pad


def blob_image(size: int, seed: int, channels: int = 1) -> np.ndarray:
    """Smooth test image: a few Gaussian blobs, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    img = np.zeros((size, size, channels))
    for _ in range(4):
        r0, c0 = rng.uniform(c - size / 5, c + size / 5, size=2)
        sigma = rng.uniform(size / 12, size / 6)
        amp = rng.uniform(0.3, 1.0, size=channels)
        g = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * sigma ** 2))
        img += g[:, :, None] * amp
    return np.clip(img, 0.0, 1.0)


def padded_blob(size: int, seed: int, channels: int = 1) -> np.ndarray:
    return pad(blob_image(size, seed, channels), optimal_padding(size)).data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
