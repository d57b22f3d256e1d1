from __future__ import annotations

import numpy as np
import pytest

from porousflow.euler import VortexParticles
from porousflow.fields import disk_indicator, rasterize


def point_vortex(x, y, strength=1.0) -> VortexParticles:
    """Single point vortex: an exactly harmonic stream function off the point."""
    return VortexParticles(np.array([[x, y]]), np.array([strength]), blob=0.0)


@pytest.fixture(scope="session")
def unit_disk_field():
    """f = indicator of the unit disk at h = 1/128 (mass pi)."""
    return rasterize((-1.2, -1.2, 1.2, 1.2), 1.0 / 128.0, disk_indicator((0, 0), 1.0))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
