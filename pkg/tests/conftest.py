import numpy as np
import pytest

from trackbench.models import build_motion_model, build_sensor_model

ROI = (-750.0, 750.0, -750.0, 750.0)


@pytest.fixture
def mm():
    return build_motion_model(1.0, 0.1, 0.995)


@pytest.fixture
def sm():
    return build_sensor_model(0.9, 10.0, 10.0, ROI, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def kalman_filter(z_seq, mean0, cov0, mm, R):
    """Plain Kalman filter used as an independent oracle (predict, then update)."""
    H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    m, P = np.asarray(mean0, float), np.asarray(cov0, float)
    out = []
    for z in z_seq:
        m = mm.A @ m
        P = mm.A @ P @ mm.A.T + mm.Sigma_u
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ (z - H @ m)
        P = (np.eye(4) - K @ H) @ P
        P = 0.5 * (P + P.T)
        out.append(m.copy())
    return np.array(out)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
