import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_config(rng, N, bc="free", scale=1.0, params=None):
    from nlink import Configuration, PhysParams

    params = params or PhysParams()
    theta = np.cumsum(rng.normal(scale=scale, size=N))
    return Configuration(theta=theta, r1=rng.normal(size=2), params=params, bc=bc)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    keys = sorted((k for k in results if isinstance(k, int) or k == "6b"),
                  key=lambda k: (float(str(k).rstrip("b")), str(k)))
    for k in keys:
        title, passed, detail = results[k]
        tr.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {k}: {title}: {detail}")
