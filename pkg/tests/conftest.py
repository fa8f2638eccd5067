import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from steerml.qstate import Measurement, MeasurementSet, TwoQubitState


@pytest.fixture
def bell_state():
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[0, 3] = rho[3, 0] = rho[3, 3] = 0.5
    return TwoQubitState(rho)


@pytest.fixture
def maximally_mixed():
    return TwoQubitState(np.eye(4, dtype=complex) / 4)


@pytest.fixture
def zx_measurements():
    return MeasurementSet(
        (Measurement(np.array([0.0, 0.0, 1.0])), Measurement(np.array([1.0, 0.0, 0.0])))
    )
