import numpy as np
import pytest

from cadnn.tensor import RngState


def naive_conv(x, w, b):
    """Loop-nest cross-correlation, independent of the vectorised path."""
    c_out, c_in, fh, fw = w.shape
    _, h, wd = x.shape
    out = np.zeros((c_out, h - fh + 1, wd - fw + 1))
    for o in range(c_out):
        for i in range(h - fh + 1):
            for j in range(wd - fw + 1):
                total = float(b[o])
                for c in range(c_in):
                    for a in range(fh):
                        for d in range(fw):
                            total += float(x[c, i + a, j + d]) * float(w[o, c, a, d])
                out[o, i, j] = total
    return out


@pytest.fixture
def rng():
    return RngState(1234)


def random_tensor(seed, shape, lo=-1.0, hi=1.0):
    return RngState(seed).uniform(lo, hi, shape).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS  # noqa: PLC0415

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
