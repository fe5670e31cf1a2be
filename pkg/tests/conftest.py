import numpy as np
import pytest

from rflora_mad.config import desk_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cfg():
    return desk_config()


def reflect_index(i, n):
    # mirror about the edge samples without repeating them
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i %= period
    return period - i if i >= n else i


def conv2d_reflect(img, kernel):
    """Direct 2-D correlation with reflect borders (slow oracle)."""
    h, w = img.shape
    kh, kw = kernel.shape
    rh, rw = kh // 2, kw // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(kh):
                for dx in range(kw):
                    acc += kernel[dy, dx] * img[reflect_index(y + dy - rh, h), reflect_index(x + dx - rw, w)]
            out[y, x] = acc
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
